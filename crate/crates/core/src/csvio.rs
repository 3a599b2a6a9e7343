//! CSV serialization of grids, measures, trajectories and iterate series.
//!
//! Floating-point values are printed with 17 significant digits, which
//! round-trips every finite f64 exactly; measure round-trips are
//! bit-faithful. Optional fields print as empty columns. All writers emit
//! rows in a fixed order, so identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::flow::Trajectory;
use crate::grid::Grid;
use crate::mda::MdaRecord;
use crate::measure::GridMeasure;
use crate::{Error, Result};

/// 17 significant digits: exact decimal round-trip for finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn parse_field(path: &Path, line_no: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Config(format!("{}: line {line_no}: cannot parse `{field}` as a number", path.display()))
    })
}

/// Measure CSV: `index,coord...,weight,log_density` with one coordinate
/// column per grid dimension.
pub fn measure_to_csv(m: &GridMeasure) -> String {
    let grid = m.grid();
    let mut out = String::from("index");
    for d in 0..grid.dim() {
        let _ = write!(out, ",coord{d}");
    }
    out.push_str(",weight,log_density\n");
    for i in 0..grid.len() {
        let _ = write!(out, "{i}");
        for &c in grid.point(i) {
            let _ = write!(out, ",{}", fmt_f64(c));
        }
        let _ = writeln!(out, ",{},{}", fmt_f64(grid.weight(i)), fmt_f64(m.log_density()[i]));
    }
    out
}

pub fn write_measure_csv(path: &Path, m: &GridMeasure) -> Result<()> {
    write_text(path, &measure_to_csv(m))
}

pub fn read_measure_csv(path: &Path) -> Result<GridMeasure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"index") || cols.last() != Some(&"log_density") {
        return Err(Error::Config(format!("{}: unexpected header `{header}`", path.display())));
    }
    let dim = cols.len() - 3;
    if dim == 0 || dim > 2 {
        return Err(Error::Config(format!("{}: unsupported dimension {dim}", path.display())));
    }
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut log_density = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Config(format!(
                "{}: line {}: expected {} fields, got {}",
                path.display(),
                no + 1,
                cols.len(),
                fields.len()
            )));
        }
        for f in &fields[1..=dim] {
            coords.push(parse_field(path, no + 1, f)?);
        }
        weights.push(parse_field(path, no + 1, fields[dim + 1])?);
        log_density.push(parse_field(path, no + 1, fields[dim + 2])?);
    }
    let grid = Grid::from_parts(dim, coords, weights, format!("csv({})", path.display()))?;
    GridMeasure::from_log_density(Arc::new(grid), log_density)
}

/// Kernel matrix CSV: row = x index, column = y index, no header.
pub fn read_kernel_csv(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut kernel = Vec::new();
    let mut ny = None;
    let mut nx = 0;
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| parse_field(path, no + 1, f))
            .collect::<Result<_>>()?;
        match ny {
            None => ny = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Config(format!(
                    "{}: line {}: ragged matrix ({} vs {n} columns)",
                    path.display(),
                    no + 1,
                    row.len()
                )));
            }
            _ => {}
        }
        kernel.extend(row);
        nx += 1;
    }
    let ny = ny.ok_or_else(|| Error::Config(format!("{}: empty kernel", path.display())))?;
    Ok((kernel, nx, ny))
}

/// Trajectory CSV:
/// `t,kl_nu_pi,kl_mu_rho,sup_ratio_nu,inf_ratio_nu,sup_ratio_mu,inf_ratio_mu,mass_err_nu,mass_err_mu`.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out =
        String::from("t,kl_nu_pi,kl_mu_rho,sup_ratio_nu,inf_ratio_nu,sup_ratio_mu,inf_ratio_mu,mass_err_nu,mass_err_mu\n");
    for d in &traj.diagnostics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(d.t),
            fmt_f64(d.kl_nu_pi),
            fmt_f64(d.kl_mu_rho),
            fmt_f64(d.sup_ratio_nu),
            fmt_f64(d.inf_ratio_nu),
            fmt_f64(d.sup_ratio_mu),
            fmt_f64(d.inf_ratio_mu),
            fmt_f64(d.mass_err_nu),
            fmt_f64(d.mass_err_mu),
        );
    }
    out
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_text(path, &trajectory_to_csv(traj))
}

/// Density snapshots of every trajectory sample, one file pair per sample
/// index, `density_nu_<idx>.csv` / `density_mu_<idx>.csv`.
pub fn write_density_snapshots(dir: &Path, traj: &Trajectory) -> Result<()> {
    for (idx, s) in traj.samples.iter().enumerate() {
        write_measure_csv(&dir.join(format!("density_nu_{idx:06}.csv")), &s.nu)?;
        write_measure_csv(&dir.join(format!("density_mu_{idx:06}.csv")), &s.mu)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// MDA iterate-series CSV:
/// `n,ni_error,kl_sum_to_mne,phi_integral_mu,phi_integral_nu,mass_err`.
pub fn mda_records_to_csv(records: &[MdaRecord]) -> String {
    let mut out = String::from("n,ni_error,kl_sum_to_mne,phi_integral_mu,phi_integral_nu,mass_err\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.ni_error),
            fmt_opt(r.kl_sum_to_mne),
            fmt_opt(r.phi_integral_mu),
            fmt_opt(r.phi_integral_nu),
            fmt_f64(r.mass_err),
        );
    }
    out
}

pub fn write_mda_csv(path: &Path, records: &[MdaRecord]) -> Result<()> {
    write_text(path, &mda_records_to_csv(records))
}

/// Lyapunov series CSV: `t,kl_sum,ni`.
pub fn lyapunov_to_csv(series: &[crate::equilibrium::LyapunovSample]) -> String {
    let mut out = String::from("t,kl_sum,ni\n");
    for s in series {
        let _ = writeln!(out, "{},{},{}", fmt_f64(s.t), fmt_f64(s.kl_sum), fmt_f64(s.ni));
    }
    out
}

/// Generic row-oriented CSV assembly (sweep outputs).
pub fn rows_to_csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::random_gibbs;
    use crate::rng::CounterRng;

    #[test]
    fn float_formatting_round_trips_exactly() {
        let mut rng = CounterRng::new(1);
        for _ in 0..1000 {
            let x = (rng.next_f64() - 0.5) * 10f64.powi((rng.next_f64() * 60.0 - 30.0) as i32);
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn measure_csv_round_trip_is_bit_faithful() {
        let dir = std::env::temp_dir().join("fr_minmax_csv_test");
        let grid = Arc::new(Grid::uniform_1d(33, -1.5, 2.5).unwrap());
        let mut rng = CounterRng::new(2);
        let m = random_gibbs(&grid, &mut rng, 2.0);
        let path = dir.join("measure.csv");
        write_measure_csv(&path, &m).unwrap();
        let back = read_measure_csv(&path).unwrap();
        assert_eq!(back.len(), m.len());
        for (a, b) in m.log_density().iter().zip(back.log_density()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for i in 0..grid.len() {
            assert_eq!(grid.weight(i).to_bits(), back.grid().weight(i).to_bits());
            assert_eq!(grid.coord(i).to_bits(), back.grid().coord(i).to_bits());
        }
        // Same bytes when re-serialized.
        let again = measure_to_csv(&back);
        assert_eq!(measure_to_csv(&m), again);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn measure_csv_round_trip_2d() {
        let dir = std::env::temp_dir().join("fr_minmax_csv_test_2d");
        let grid = Arc::new(Grid::product_2d(5, 0.0, 1.0, 4, -1.0, 0.0).unwrap());
        let mut rng = CounterRng::new(3);
        let m = random_gibbs(&grid, &mut rng, 1.0);
        let path = dir.join("m2.csv");
        write_measure_csv(&path, &m).unwrap();
        let back = read_measure_csv(&path).unwrap();
        assert_eq!(back.grid().dim(), 2);
        for (a, b) in m.log_density().iter().zip(back.log_density()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn kernel_csv_parses_and_rejects_ragged() {
        let dir = std::env::temp_dir().join("fr_minmax_kernel_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("k.csv");
        fs::write(&path, "1.0,2.0\n3.0,4.0\n5.0,6.0\n").unwrap();
        let (k, nx, ny) = read_kernel_csv(&path).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(k, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(read_kernel_csv(&path).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
