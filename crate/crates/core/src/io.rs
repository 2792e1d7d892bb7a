//! CSV and JSON encodings.
//!
//! Floats are written in shortest round-trip form, so equal values always
//! produce equal bytes and parse back exactly.

use std::io::{Read, Write};

use serde::Serialize;

use crate::dynamics::TrajectoryLog;
use crate::kernel::{Kernel, PathEnsemble};
use crate::lattice::{LatticeMeasure, Window};
use crate::lyapunov::LyapunovSample;
use crate::particles::ParticleTrajectory;
use crate::{Error, Result};

pub const TRAJECTORY_COLUMNS: [&str; 12] =
    ["t", "L", "M", "s", "d", "K", "mass", "boundary_mass", "Q", "H", "W", "tv_to_fixed_point"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for smp in &log.samples {
        let (st, dg) = (&smp.state, &smp.diagnostics);
        w.write_record([
            fmt_f64(st.t),
            fmt_f64(st.l),
            fmt_f64(st.m),
            fmt_f64(st.s()),
            fmt_f64(st.d()),
            fmt_f64(dg.k),
            fmt_f64(dg.mass),
            fmt_f64(dg.boundary_mass),
            fmt_f64(dg.q),
            fmt_opt(dg.h),
            fmt_opt(dg.w),
            fmt_opt(dg.tv_to_fixed_point),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(row: usize, name: &str, cell: &str) -> Result<f64> {
    cell.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("row {row}: column {name} = {cell:?} is not a number")))
}

/// Reads a trajectory CSV back into the series the monitors consume.
/// Rows without `H` or `W` are rejected.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<LyapunovSample>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing column {name}")))
    };
    let idx = [col("t")?, col("L")?, col("M")?, col("K")?, col("Q")?, col("H")?, col("W")?];
    let names = ["t", "L", "M", "K", "Q", "H", "W"];
    let mut series = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 7];
        for (k, (&i, name)) in idx.iter().zip(names).enumerate() {
            let cell = rec.get(i).unwrap_or("");
            v[k] = parse_cell(row + 1, name, cell)?;
        }
        let [t, l, m, k, q, h, w] = v;
        let s = 0.5 * (l + m);
        series.push(LyapunovSample { t, q, h, w, k, s, l, m, mean: k - 2.0 * s });
    }
    Ok(series)
}

pub fn write_lyapunov_csv<W: Write>(series: &[LyapunovSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "Q", "H", "W", "K", "s", "L", "M", "mean"])?;
    for x in series {
        w.write_record([x.t, x.q, x.h, x.w, x.k, x.s, x.l, x.m, x.mean].map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measure_csv<W: Write>(p: &LatticeMeasure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "value"])?;
    for (n, v) in p.iter() {
        w.write_record([n.to_string(), fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measure_csv<R: Read>(input: R) -> Result<LatticeMeasure> {
    let mut r = csv::Reader::from_reader(input);
    let mut sites = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let n: i64 = rec
            .get(0)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("row {}: bad site", row + 1)))?;
        sites.push(n);
        values.push(parse_cell(row + 1, "value", rec.get(1).unwrap_or(""))?);
    }
    let (&lo, &hi) = match (sites.first(), sites.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidMeasure("empty measure table".into())),
    };
    if sites.iter().zip(lo..).any(|(n, expect)| *n != expect) {
        return Err(Error::InvalidMeasure("sites must be consecutive and increasing".into()));
    }
    LatticeMeasure::signed(Window::from_bounds(lo, hi)?, values)
}

#[derive(Debug, Serialize)]
struct MeasureJson<'a> {
    n_min: i64,
    n_max: i64,
    values: &'a [f64],
}

pub fn measure_json(p: &LatticeMeasure) -> serde_json::Value {
    let win = p.window();
    serde_json::to_value(MeasureJson { n_min: win.n_min(), n_max: win.n_max(), values: p.values() })
        .expect("plain numbers serialize")
}

/// Full matrix, one `(row, col, value)` line per entry, indexed by site.
pub fn write_kernel_csv<W: Write>(k: &Kernel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "value"])?;
    for (i, a) in k.window.sites().enumerate() {
        for (j, b) in k.window.sites().enumerate() {
            w.write_record([a.to_string(), b.to_string(), fmt_f64(k.rows[(i, j)])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn kernel_metadata(k: &Kernel) -> serde_json::Value {
    serde_json::json!({
        "t0": k.t0,
        "t1": k.t1,
        "n_min": k.window.n_min(),
        "n_max": k.window.n_max(),
    })
}

pub fn write_paths_csv<W: Write>(e: &PathEnsemble, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "t", "n"])?;
    for (id, path) in e.positions.iter().enumerate() {
        for (t, n) in e.sample_times.iter().zip(path) {
            w.write_record([id.to_string(), fmt_f64(*t), n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_particles_csv<W: Write>(traj: &ParticleTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "L", "M", "K_N"].iter().map(|s| s.to_string()).collect();
    header.extend(traj.window.sites().map(|n| format!("n_{n}")));
    w.write_record(&header)?;
    for smp in &traj.samples {
        let mut rec = vec![fmt_f64(smp.t), fmt_f64(smp.l), fmt_f64(smp.m), fmt_f64(smp.k_n)];
        rec.extend(smp.histogram.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, IntegratorConfig, SystemState};
    use crate::kernel::{propagate, FrozenPath};
    use crate::model::ModelParams;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e21, 0.0, 5e-324] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0");
    }

    #[test]
    fn measure_csv_round_trip() {
        let win = Window::from_bounds(-2, 1).unwrap();
        let p = LatticeMeasure::probability(win, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,value\n-2,0.1\n"));
        let back = read_measure_csv(&buf[..]).unwrap();
        assert_eq!((back.window(), back.values()), (p.window(), p.values()));
        let j = measure_json(&p);
        assert_eq!(j["n_min"], -2);
        assert_eq!(j["values"][3], 0.4);
    }

    #[test]
    fn gapped_measure_table_is_rejected() {
        let text = "n,value\n0,0.5\n2,0.5\n";
        assert!(read_measure_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn trajectory_round_trip() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(12).unwrap();
        let s0 = SystemState::new(LatticeMeasure::delta(win, 0).unwrap(), 1.3, -0.4, 0.0).unwrap();
        let cfg = IntegratorConfig { t_samples: vec![0.5, 1.0], ..Default::default() };
        let log = integrate(&p, &s0, 1.0, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRAJECTORY_COLUMNS.join(","));
        let series = read_trajectory_csv(&buf[..]).unwrap();
        assert_eq!(series, crate::lyapunov::series_from_log(&log));
    }

    #[test]
    fn missing_w_is_an_error() {
        let text = "t,L,M,s,d,K,mass,boundary_mass,Q,H,W,tv_to_fixed_point\n0.0,1.0,0.0,0.5,0.5,1.0,1.0,0.0,2.0,,,\n";
        assert!(read_trajectory_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn kernel_and_paths_layout() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(2).unwrap();
        let path = FrozenPath::constant(0.0, 0.0, 0.0, 0.1).unwrap();
        let k = propagate(&p, &path, 0.0, 0.1, win, 4).unwrap();
        let mut buf = Vec::new();
        write_kernel_csv(&k, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 25);
        assert!(text.lines().nth(1).unwrap().starts_with("-2,-2,"));
        assert_eq!(kernel_metadata(&k)["t1"], 0.1);

        let e = crate::kernel::sample_paths(&p, &path, &LatticeMeasure::delta(win, 0).unwrap(), &[0.0, 0.1], 3, 1)
            .unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0.0,0"));
    }

    #[test]
    fn particles_header() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(2).unwrap();
        let ens = crate::particles::Ensemble::new(win, vec![0, 1], 0.0, 0.0, 1).unwrap();
        let traj = crate::particles::run(&p, ens, 0.01, 1e-3, &[]).unwrap();
        let mut buf = Vec::new();
        write_particles_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,L,M,K_N,n_-2,n_-1,n_0,n_1,n_2");
        assert_eq!(text.lines().count(), 3);
    }
}
