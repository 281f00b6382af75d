//! Model-reduction report and equilibrium table export.

use std::path::Path;

use popbal_core::integrator::IntegratorConfig;
use popbal_core::reduction::{
    branch_value, calibrate_k, BranchRole, BranchSet, CalibrationGrid, CalibrationReport,
    ReducedAdvection, StabilityIntervals,
};
use popbal_core::regulatory::{bifurcation_scan, BifurcationPoint, EmtCoreParams};
use serde::Serialize;

use crate::output::{ensure_dir, write_csv, write_json, OutputError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Model(#[from] popbal_core::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
}

pub const K_CANDIDATES: [f64; 5] = [0.005, 0.01, 0.02, 0.04, 0.08];

/// `(N_S, N_x, N_Z, N_T)` sample counts of the calibration grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSize {
    pub n_s: usize,
    pub n_x: usize,
    pub n_z: usize,
    pub n_t: usize,
}

impl GridSize {
    pub const DESK: Self = Self {
        n_s: 10,
        n_x: 10,
        n_z: 10,
        n_t: 50,
    };
    pub const FULL: Self = Self {
        n_s: 20,
        n_x: 20,
        n_z: 20,
        n_t: 100,
    };
}

/// Worst relative deviation of a polynomial family from the computed
/// circuit equilibria over one branch's validity interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchError {
    pub role: BranchRole,
    pub lower: f64,
    pub upper: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub grid: GridSize,
    pub horizon: f64,
    pub calibration: CalibrationReport,
    pub intervals: StabilityIntervals,
    pub regenerated_errors: Vec<BranchError>,
    pub table3_errors: Vec<BranchError>,
}

pub fn calibrate(size: GridSize, horizon: f64) -> popbal_core::Result<CalibrationReport> {
    let grid = CalibrationGrid::regular(size.n_s, size.n_x, size.n_z, size.n_t, horizon)?;
    calibrate_k(
        &K_CANDIDATES,
        &grid,
        &ReducedAdvection::with_k(0.02)?,
        &EmtCoreParams::default(),
        &IntegratorConfig::default(),
    )
}

/// Sampled `(S, circuit root, polynomial)` triples per branch.
pub fn branch_samples(
    set: &BranchSet,
    intervals: &StabilityIntervals,
    samples: usize,
) -> popbal_core::Result<Vec<(BranchRole, f64, f64, f64)>> {
    let p = EmtCoreParams::default();
    let mut out = Vec::new();
    for role in BranchRole::ALL {
        let (lo, hi) = intervals.validity(role);
        for i in 0..=samples {
            let s = lo + (hi - lo) * i as f64 / samples as f64;
            if let Some(root) = branch_value(role, s, &p)? {
                out.push((role, s, root, set.get(role).eval(s)));
            }
        }
    }
    Ok(out)
}

pub fn branch_errors(
    set: &BranchSet,
    intervals: &StabilityIntervals,
    samples: usize,
) -> popbal_core::Result<Vec<BranchError>> {
    let rows = branch_samples(set, intervals, samples)?;
    Ok(BranchRole::ALL
        .iter()
        .map(|&role| {
            let (lower, upper) = intervals.validity(role);
            let max_relative_error = rows
                .iter()
                .filter(|r| r.0 == role)
                .map(|r| ((r.3 - r.2) / r.2).abs())
                .fold(0.0, f64::max);
            BranchError {
                role,
                lower,
                upper,
                max_relative_error,
            }
        })
        .collect())
}

/// Calibrates `k` and compares both polynomial families with the circuit.
/// Writes `reduction.json` and `branches.csv` into `dir`.
pub fn reduce(size: GridSize, horizon: f64, dir: &Path) -> Result<ReductionReport, ReportError> {
    let intervals = StabilityIntervals::default();
    let regenerated = BranchSet::regenerated();
    let table3 = BranchSet::table3();
    let report = ReductionReport {
        grid: size,
        horizon,
        calibration: calibrate(size, horizon)?,
        regenerated_errors: branch_errors(&regenerated, &intervals, 200)?,
        table3_errors: branch_errors(&table3, &intervals, 200)?,
        intervals,
    };
    ensure_dir(dir)?;
    write_json(&dir.join("reduction.json"), &report)?;
    let reg = branch_samples(&regenerated, &intervals, 200)?;
    let t3 = branch_samples(&table3, &intervals, 200)?;
    write_csv(
        &dir.join("branches.csv"),
        &["branch", "snail", "circuit", "regenerated", "table3"],
        reg.iter()
            .zip(&t3)
            .map(|(a, b)| (a.0.name(), a.1, a.2, a.3, b.3)),
    )?;
    Ok(report)
}

/// Equilibria of the circuit over a SNAIL range. Writes `equilibria.csv`
/// (one row per equilibrium) and `stable_counts.csv` into `dir`.
pub fn bifurcate(
    s_min: f64,
    s_max: f64,
    points: usize,
    dir: &Path,
) -> Result<Vec<BifurcationPoint>, ReportError> {
    if points < 2 || !(s_max > s_min) {
        return Err(popbal_core::Error::InvalidParameter {
            name: "points",
            value: points as f64,
            bound: "points >= 2 and s_max > s_min",
        }
        .into());
    }
    let s: Vec<f64> = (0..points)
        .map(|i| s_min + (s_max - s_min) * i as f64 / (points - 1) as f64)
        .collect();
    let scan = bifurcation_scan(&s, &EmtCoreParams::default())?;
    ensure_dir(dir)?;
    write_csv(
        &dir.join("equilibria.csv"),
        &["snail", "index", "mir200", "zeb", "stable"],
        scan.iter().flat_map(|b| {
            b.equilibria
                .iter()
                .enumerate()
                .map(move |(i, e)| (b.s, i, e.mu, e.z, e.stable))
        }),
    )?;
    write_csv(
        &dir.join("stable_counts.csv"),
        &["snail", "stable", "total"],
        scan.iter()
            .map(|b| (b.s, b.stable_count(), b.equilibria.len())),
    )?;
    Ok(scan)
}

/// Maximal runs of constant stable count, as `(from, to, count)`.
pub fn count_intervals(scan: &[BifurcationPoint]) -> Vec<(f64, f64, usize)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for b in scan {
        let c = b.stable_count();
        match out.last_mut() {
            Some(last) if last.2 == c => last.1 = b.s,
            _ => out.push((b.s, b.s, c)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bifurcation_counts_follow_regimes() {
        let dir = tempfile::tempdir().unwrap();
        let scan = bifurcate(150_000.0, 250_000.0, 101, dir.path()).unwrap();
        let counts: Vec<usize> = count_intervals(&scan).iter().map(|c| c.2).collect();
        assert_eq!(counts, [1, 2, 3, 2, 1]);
        assert!(dir.path().join("equilibria.csv").exists());
    }

    #[test]
    fn regenerated_fits_beat_published_on_unstable_branches() {
        let iv = StabilityIntervals::default();
        let reg = branch_errors(&BranchSet::regenerated(), &iv, 50).unwrap();
        let t3 = branch_errors(&BranchSet::table3(), &iv, 50).unwrap();
        for (a, b) in reg.iter().zip(&t3) {
            if !a.role.is_stable() {
                assert!(a.max_relative_error < b.max_relative_error, "{:?}", a.role);
            }
        }
    }

    #[test]
    fn rejects_degenerate_range() {
        let dir = tempfile::tempdir().unwrap();
        assert!(bifurcate(2.0, 1.0, 10, dir.path()).is_err());
    }
}
