//! Legacy VTK snapshots and the CSV time series.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::{plug_mask, ConvergenceTable, LedgerRow, DEFAULT_TOL_PLUG};
use crate::integrator::{SimState, StepReport};
use crate::Error;

/// Scalar cell fields in file order.
pub const SNAPSHOT_SCALARS: [&str; 4] = ["rho", "p", "sigma_mag", "plug"];

/// Writes `state` as an ASCII structured-points file. Values use 17
/// significant digits so that they read back bit for bit.
pub fn write_snapshot(state: &SimState, path: &Path) -> Result<(), Error> {
    let g = state.rho.grid;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "bingham snapshot n={} t={:.16e}", state.n, state.t)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", g.nx, g.ny)?;
    writeln!(w, "ORIGIN {:.16e} {:.16e} 0", 0.5 * g.hx, 0.5 * g.hy)?;
    writeln!(w, "SPACING {:.16e} {:.16e} 1", g.hx, g.hy)?;
    writeln!(w, "CELL_DATA {}", g.cell_count())?;

    let sigma_mag: Vec<f64> = state
        .sigma
        .values
        .iter()
        .map(|s| s.second_invariant())
        .collect();
    let plug: Vec<f64> = plug_mask(&state.sigma, DEFAULT_TOL_PLUG)
        .plug
        .iter()
        .map(|&p| if p { 1.0 } else { 0.0 })
        .collect();
    for (name, values) in
        SNAPSHOT_SCALARS
            .iter()
            .zip([&state.rho.values, &state.p.values, &sigma_mag, &plug])
    {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values.iter() {
            writeln!(w, "{v:.16e}")?;
        }
    }
    writeln!(w, "VECTORS velocity double")?;
    for (u, v) in state.u.cell_centered() {
        writeln!(w, "{u:.16e} {v:.16e} 0")?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of a snapshot written by [`write_snapshot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub cell_data: usize,
    pub scalars: BTreeMap<String, Vec<f64>>,
    /// Field names in file order.
    pub order: Vec<String>,
    pub velocity: Vec<[f64; 3]>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn parse_f64(tok: &str) -> Result<f64, Error> {
    tok.parse().map_err(|_| bad(format!("not a number: {tok}")))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, Error> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .peekable();
    let mut snap = Snapshot {
        nx: 0,
        ny: 0,
        cell_data: 0,
        scalars: BTreeMap::new(),
        order: Vec::new(),
        velocity: Vec::new(),
    };
    while let Some(line) = lines.next() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("DIMENSIONS") => {
                let dims: Vec<usize> = tok
                    .map(|t| t.parse().map_err(|_| bad(line)))
                    .collect::<Result<_, _>>()?;
                if dims.len() != 3 {
                    return Err(bad(line));
                }
                snap.nx = dims[0];
                snap.ny = dims[1];
            }
            Some("CELL_DATA") => {
                snap.cell_data = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(line))?;
            }
            Some("SCALARS") => {
                let name = tok.next().ok_or_else(|| bad(line))?.to_string();
                if lines.next() != Some("LOOKUP_TABLE default") {
                    return Err(bad("missing lookup table"));
                }
                let values = (0..snap.cell_data)
                    .map(|_| parse_f64(lines.next().ok_or_else(|| bad("truncated scalars"))?))
                    .collect::<Result<Vec<_>, _>>()?;
                snap.order.push(name.clone());
                snap.scalars.insert(name, values);
            }
            Some("VECTORS") => {
                snap.order
                    .push(tok.next().ok_or_else(|| bad(line))?.to_string());
                for _ in 0..snap.cell_data {
                    let l = lines.next().ok_or_else(|| bad("truncated vectors"))?;
                    let v: Vec<f64> = l
                        .split_whitespace()
                        .map(parse_f64)
                        .collect::<Result<_, _>>()?;
                    if v.len() != 3 {
                        return Err(bad(l));
                    }
                    snap.velocity.push([v[0], v[1], v[2]]);
                }
            }
            _ => {}
        }
    }
    Ok(snap)
}

/// One line of the time-series table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeseriesRow {
    pub n: usize,
    pub t: f64,
    pub fp_iters: usize,
    pub fp_ratio: Option<f64>,
    pub div_residual: f64,
    pub kinetic: f64,
    pub pressure_term: f64,
    pub sigma_term: f64,
    pub dissipation_cum: f64,
    pub total: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

pub const TIMESERIES_HEADER: &str =
    "n,t,fp_iters,fp_ratio,div_residual,kinetic,pressure_term,sigma_term,dissipation_cum,total,rho_min,rho_max";

impl TimeseriesRow {
    pub fn new(report: &StepReport, ledger: &LedgerRow) -> Self {
        Self {
            n: report.n,
            t: report.t,
            fp_iters: report.fixed_point.iterations,
            fp_ratio: report.fixed_point.observed_ratio,
            div_residual: report.div_residual,
            kinetic: ledger.kinetic,
            pressure_term: ledger.pressure_term,
            sigma_term: ledger.sigma_term,
            dissipation_cum: ledger.dissipation_cum,
            total: ledger.total,
            rho_min: report.rho_min,
            rho_max: report.rho_max,
        }
    }
}

/// Streaming CSV writer; the header is written on creation.
pub struct TimeseriesWriter {
    inner: csv::Writer<fs::File>,
}

impl TimeseriesWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(csv_error)?;
        inner
            .write_record(TIMESERIES_HEADER.split(','))
            .map_err(csv_error)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &TimeseriesRow) -> Result<(), Error> {
        self.inner.serialize(row).map_err(csv_error)
    }

    pub fn finish(mut self) -> Result<(), Error> {
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_timeseries(rows: &[TimeseriesRow], path: &Path) -> Result<(), Error> {
    let mut w = TimeseriesWriter::create(path)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()
}

/// One row per time step of a convergence study.
pub fn write_convergence(table: &ConvergenceTable, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in &table.rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{MacGrid, ScalarField, TensorField, VelocityField};
    use crate::tensor::SymTensor2;

    fn state(nx: usize, ny: usize) -> SimState {
        let g = MacGrid::new(nx, ny, 1.0, 0.5).unwrap();
        SimState {
            t: 0.0,
            n: 0,
            rho: ScalarField::constant(&g, 1.0),
            p: ScalarField::zeros(&g),
            q: ScalarField::zeros(&g),
            u: VelocityField::zeros(&g),
            u_hat: VelocityField::zeros(&g),
            sigma: TensorField::zeros(&g),
        }
    }

    #[test]
    fn header_of_small_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.vtk");
        write_snapshot(&state(4, 4), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("DIMENSIONS 4 4 1\n"));
        assert!(text.contains("CELL_DATA 16\n"));
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.order, ["rho", "p", "sigma_mag", "plug", "velocity"]);
        assert!(snap.velocity.iter().all(|v| *v == [0.0, 0.0, 0.0]));
        assert!(snap.scalars["sigma_mag"].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn values_round_trip_exactly() {
        let mut s = state(5, 4);
        let g = s.rho.grid;
        s.rho = ScalarField::from_fn(&g, |x, y| 1.0 + (x * 7.3).sin() * y / 3.0);
        s.p = ScalarField::from_fn(&g, |x, y| (x - y) * 1e-7 + 1.0 / 3.0);
        s.u = VelocityField::from_fn(&g, |x, y| (x * y).exp() * 0.1, |x, _| x.sqrt());
        s.sigma.values[2] = SymTensor2::new(0.1, -0.1, 1.0 / 7.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.vtk");
        write_snapshot(&s, &path).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.scalars["rho"], s.rho.values);
        assert_eq!(snap.scalars["p"], s.p.values);
        assert_eq!(
            snap.scalars["sigma_mag"][2],
            s.sigma.values[2].second_invariant()
        );
        for (a, b) in snap.velocity.iter().zip(s.u.cell_centered()) {
            assert_eq!((a[0], a[1]), b);
        }
    }

    #[test]
    fn empty_timeseries_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        write_timeseries(&[], &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            format!("{TIMESERIES_HEADER}\n")
        );
    }

    #[test]
    fn one_row_gives_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let row = TimeseriesRow {
            n: 1,
            t: 0.1,
            fp_iters: 3,
            fp_ratio: None,
            div_residual: 1e-14,
            kinetic: 1.0,
            pressure_term: 0.0,
            sigma_term: 0.0,
            dissipation_cum: 0.1,
            total: 1.1,
            rho_min: 1.0,
            rho_max: 2.0,
        };
        write_timeseries(&[row], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 12);
        assert!(lines[1].starts_with("1,0.1,3,,"));
    }
}
