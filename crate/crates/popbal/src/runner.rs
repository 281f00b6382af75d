//! Executes configurations and writes their artifacts.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use popbal_core::entropy::{initial_ensemble_1d, run_entropy_model};
use popbal_core::particles::{DensityField, Rescaling};
use popbal_core::reduction::ReducedAdvection;
use popbal_core::scenarios::{
    count_modes, hysteresis_metrics, run_epigenetic, run_hysteresis_heterogeneous,
    run_hysteresis_homogeneous, run_population_scenario, Fractions, HysteresisMetrics,
};
use serde::Serialize;

use crate::config::{
    ConfigError, EntropyConfig, EpigeneticConfig, HeterogeneousConfig, HysteresisConfig,
    ModelConfig, PopulationConfig, ScenarioConfig, SweepConfig,
};
use crate::output::{ensure_dir, write_csv, write_json, OutputError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{name}: {source}")]
    Model {
        name: String,
        source: popbal_core::Error,
    },
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl RunError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Model { .. } => "model",
            Self::Output(_) => "output",
        }
    }
}

/// Headline numbers of a finished run. Also written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Population {
        final_rho: f64,
        final_fractions: Fractions,
        final_entropy: f64,
        /// Local maxima of the final miR-200 marginal.
        modes: usize,
        trimodal: bool,
        max_leakage: f64,
        clamped_mass: f64,
        epsilon: f64,
    },
    Entropy {
        final_rho: f64,
        final_entropy: f64,
        epsilon: f64,
    },
    HysteresisHomogeneous(HysteresisMetrics),
    HysteresisHeterogeneous {
        snapshot_times: Vec<f64>,
        mean_mu200: Vec<f64>,
    },
    Epigenetic {
        withdrawal_start: f64,
        threshold: f64,
        recovery_time: Option<f64>,
    },
}

impl Summary {
    pub fn final_rho(&self) -> Option<f64> {
        match self {
            Self::Population { final_rho, .. } | Self::Entropy { final_rho, .. } => Some(*final_rho),
            _ => None,
        }
    }

    pub fn final_entropy(&self) -> Option<f64> {
        match self {
            Self::Population { final_entropy, .. } | Self::Entropy { final_entropy, .. } => {
                Some(*final_entropy)
            }
            _ => None,
        }
    }

    pub fn one_line(&self) -> String {
        match self {
            Self::Population {
                final_rho,
                final_entropy,
                final_fractions: f,
                modes,
                ..
            } => format!(
                "rho={final_rho:.1} entropy={final_entropy:.4} fE={:.3} fH={:.3} fM={:.3} modes={modes}",
                f.epithelial, f.hybrid, f.mesenchymal
            ),
            Self::Entropy {
                final_rho,
                final_entropy,
                ..
            } => format!("rho={final_rho:.1} entropy={final_entropy:.4}"),
            Self::HysteresisHomogeneous(m) => format!(
                "mu200 at 200K: ascending={:.0} descending={:.0} gap={:.0}; hybrid dwell {:.0} h / {:.0} h",
                m.mu_ascending, m.mu_descending, m.gap, m.dwell_ascending, m.dwell_descending
            ),
            Self::HysteresisHeterogeneous { snapshot_times, .. } => {
                format!("{} snapshots", snapshot_times.len())
            }
            Self::Epigenetic {
                recovery_time,
                threshold,
                ..
            } => match recovery_time {
                Some(t) => format!("recovery after {t:.2} h (threshold {threshold:.0})"),
                None => format!("no recovery within the horizon (threshold {threshold:.0})"),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub summary: Summary,
    pub wall: Duration,
}

impl RunOutcome {
    pub fn one_line(&self) -> String {
        format!(
            "{}: {} wall={:.2}s",
            self.name,
            self.summary.one_line(),
            self.wall.as_secs_f64()
        )
    }
}

/// Run directory of `cfg` under `root`.
pub fn run_dir(cfg: &ScenarioConfig, root: &Path) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| root.join(&cfg.name))
}

/// Validates, runs and writes `config.json`, the CSV outputs and
/// `summary.json` into the run directory.
pub fn run(cfg: &ScenarioConfig, root: &Path) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let dir = run_dir(cfg, root);
    ensure_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let start = Instant::now();
    let result = match &cfg.model {
        ModelConfig::Population(p) => run_population(p, &dir),
        ModelConfig::Entropy(e) => run_entropy(e, &dir),
        ModelConfig::HysteresisHomogeneous(h) => run_homogeneous(h, &dir),
        ModelConfig::HysteresisHeterogeneous(h) => run_heterogeneous(h, &dir),
        ModelConfig::Epigenetic(e) => run_epi(e, &dir),
    };
    let summary = result.map_err(|f| match f {
        Failure::Model(source) => RunError::Model {
            name: cfg.name.clone(),
            source,
        },
        Failure::Output(e) => RunError::Output(e),
    })?;
    let wall = start.elapsed();
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        name: cfg.name.clone(),
        dir,
        summary,
        wall,
    })
}

/// Model failures and write failures share one error path inside a run.
enum Failure {
    Model(popbal_core::Error),
    Output(OutputError),
}

impl From<popbal_core::Error> for Failure {
    fn from(e: popbal_core::Error) -> Self {
        Self::Model(e)
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Self::Output(e)
    }
}

fn field_rows<'a>(
    fields: &'a [DensityField],
    map: &'a Rescaling,
) -> impl Iterator<Item = Vec<f64>> + 'a {
    let jac = map.jacobian();
    fields.iter().flat_map(move |f| {
        let d = f.grid.dim();
        let mut y = vec![0.0; d];
        let mut x = vec![0.0; d];
        (0..f.values.len()).map(move |i| {
            f.grid.node(i, &mut y);
            map.to_raw(&y, &mut x);
            let mut row = Vec::with_capacity(d + 2);
            row.push(f.t);
            row.extend_from_slice(&x);
            row.push(f.values[i] / jac);
            row
        })
    })
}

fn run_population(p: &PopulationConfig, dir: &Path) -> Result<Summary, Failure> {
    let scenario = p.scenario();
    let run = run_population_scenario(&scenario)?;
    let map = Rescaling::emt();
    write_csv(
        &dir.join("series.csv"),
        &["t", "rho", "f_epithelial", "f_hybrid", "f_mesenchymal", "entropy", "leakage"],
        (0..run.times.len()).map(|i| {
            let f = run.fractions[i];
            (
                run.times[i],
                run.rho[i],
                f.epithelial,
                f.hybrid,
                f.mesenchymal,
                run.entropy[i],
                run.leakage[i],
            )
        }),
    )?;
    write_csv(
        &dir.join("fields.csv"),
        &["t", "mir200", "snail", "density"],
        field_rows(&run.fields, &map),
    )?;
    let x_scale = map.scale[0];
    write_csv(
        &dir.join("marginal.csv"),
        &["t", "mir200", "density"],
        run.fields.iter().flat_map(|f| {
            let h = f.grid.spacing(0);
            f.marginal(0)
                .into_iter()
                .enumerate()
                .map(move |(i, m)| (f.t, (i as f64 + 0.5) * h * x_scale, m / x_scale))
        }),
    )?;
    let last = run.final_field();
    let modes = count_modes(&last.marginal(0));
    Ok(Summary::Population {
        final_rho: run.final_rho(),
        final_fractions: run.final_fractions(),
        final_entropy: run.final_entropy(),
        modes,
        trimodal: modes == 3,
        max_leakage: run.leakage.iter().copied().fold(0.0, f64::max),
        clamped_mass: run.clamped_mass,
        epsilon: last.epsilon,
    })
}

fn run_entropy(e: &EntropyConfig, dir: &Path) -> Result<Summary, Failure> {
    let model = e.model()?;
    let support = e.initial.support(&model.reduced, model.s);
    let init = initial_ensemble_1d(e.n, &support, e.total_cells)?;
    let run = run_entropy_model(
        &model,
        &init,
        &e.checkpoints(),
        e.n,
        &e.bandwidth,
        &e.integrator(),
    )?;
    write_csv(
        &dir.join("series.csv"),
        &["t", "rho", "entropy"],
        (0..run.times.len()).map(|i| (run.times[i], run.rho[i], run.entropy[i])),
    )?;
    let map = Rescaling::emt_1d();
    write_csv(
        &dir.join("fields.csv"),
        &["t", "mir200", "density"],
        field_rows(&run.fields, &map),
    )?;
    Ok(Summary::Entropy {
        final_rho: run.final_rho(),
        final_entropy: run.final_entropy(),
        epsilon: e.bandwidth.epsilon(e.n, 1)?,
    })
}

fn run_homogeneous(h: &HysteresisConfig, dir: &Path) -> Result<Summary, Failure> {
    let scenario = h.scenario();
    let traj = run_hysteresis_homogeneous(&scenario)?;
    write_csv(
        &dir.join("trajectory.csv"),
        &["t", "mir200", "zeb", "snail"],
        (0..traj.times.len()).map(|i| (traj.times[i], traj.mu[i], traj.z[i], traj.s[i])),
    )?;
    let ra = ReducedAdvection::with_k(0.02)?;
    Ok(Summary::HysteresisHomogeneous(hysteresis_metrics(
        &traj,
        &scenario.schedule,
        &ra,
    )?))
}

fn run_heterogeneous(h: &HeterogeneousConfig, dir: &Path) -> Result<Summary, Failure> {
    let snaps = run_hysteresis_heterogeneous(&h.scenario())?;
    write_csv(
        &dir.join("particles.csv"),
        &["t", "particle", "mir200", "zeb", "snail", "mass"],
        snaps.iter().flat_map(|e| {
            (0..e.len()).map(move |i| {
                let y = e.position(i);
                (e.t, i, y[0], y[1], y[2], e.mass_weights[i])
            })
        }),
    )?;
    let mean_mu200 = snaps
        .iter()
        .map(|e| {
            let m = e.rho();
            (0..e.len())
                .map(|i| e.position(i)[0] * e.mass_weights[i])
                .sum::<f64>()
                / m
        })
        .collect();
    Ok(Summary::HysteresisHeterogeneous {
        snapshot_times: snaps.iter().map(|e| e.t).collect(),
        mean_mu200,
    })
}

fn run_epi(e: &EpigeneticConfig, dir: &Path) -> Result<Summary, Failure> {
    let r = run_epigenetic(&e.scenario())?;
    write_csv(
        &dir.join("trajectory.csv"),
        &["t", "mir200", "zeb", "z0", "snail"],
        (0..r.times.len()).map(|i| (r.times[i], r.mu[i], r.z[i], r.z0[i], r.s[i])),
    )?;
    Ok(Summary::Epigenetic {
        withdrawal_start: r.withdrawal_start,
        threshold: r.threshold,
        recovery_time: r.recovery_time,
    })
}

/// Result of one sweep member, in sweep order.
#[derive(Debug)]
pub struct SweepEntry {
    pub label: String,
    pub result: Result<RunOutcome, RunError>,
}

/// Runs every member of a sweep on `threads` workers and writes
/// `sweep.csv` next to the member directories.
pub fn run_sweep(sweep: &SweepConfig, root: &Path) -> Result<Vec<SweepEntry>, RunError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunOutcome, RunError>>>> =
        sweep.runs.iter().map(|_| Mutex::new(None)).collect();
    let workers = sweep.threads.clamp(1, sweep.runs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, cfg)) = sweep.runs.get(i) else {
                    break;
                };
                let r = run(cfg, root);
                *slots[i].lock().expect("sweep slot") = Some(r);
            });
        }
    });
    let entries: Vec<SweepEntry> = sweep
        .runs
        .iter()
        .zip(slots)
        .map(|((label, _), slot)| SweepEntry {
            label: label.clone(),
            result: slot
                .into_inner()
                .expect("sweep slot")
                .expect("every sweep member runs"),
        })
        .collect();
    let dir = root.join(&sweep.base.name);
    ensure_dir(&dir)?;
    write_csv(
        &dir.join("sweep.csv"),
        &["label", "status", "final_rho", "final_entropy"],
        entries.iter().map(|e| match &e.result {
            Ok(o) => (
                e.label.clone(),
                "ok".to_owned(),
                o.summary.final_rho(),
                o.summary.final_entropy(),
            ),
            Err(err) => (e.label.clone(), err.to_string(), None, None),
        }),
    )?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    fn short(name: &str, f: impl FnOnce(&mut ScenarioConfig)) -> ScenarioConfig {
        let mut cfg = preset(name).unwrap();
        f(&mut cfg);
        cfg
    }

    #[test]
    fn hysteresis_trajectory_has_monotone_time() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&preset("hysteresis-homogeneous").unwrap(), dir.path()).unwrap();
        let text = std::fs::read_to_string(out.dir.join("trajectory.csv")).unwrap();
        let times: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(times.len() > 100);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(out.dir.join("summary.json").exists());
        assert!(out.dir.join("config.json").exists());
    }

    #[test]
    fn entropy_rerun_is_bit_identical() {
        let cfg = short("fig5-linear", |c| {
            if let ModelConfig::Entropy(e) = &mut c.model {
                e.horizon = 24.0;
                e.n = 20;
            }
        });
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run(&cfg, a.path()).unwrap();
        let rb = run(&cfg, b.path()).unwrap();
        for f in ["series.csv", "fields.csv", "summary.json", "config.json"] {
            let x = std::fs::read(ra.dir.join(f)).unwrap();
            let y = std::fs::read(rb.dir.join(f)).unwrap();
            assert!(x == y, "{f} differs");
        }
    }

    #[test]
    fn invalid_config_fails_before_writing() {
        let cfg = short("fig3Aii", |c| {
            if let ModelConfig::Population(p) = &mut c.model {
                p.s0 = 300_000.0;
            }
        });
        let dir = tempfile::tempdir().unwrap();
        let err = run(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(!dir.path().join("fig3Aii").exists());
    }

    #[test]
    fn sweep_writes_each_member() {
        let doc = "preset = \"fig5-linear\"\nthreads = 2\n[model]\nhorizon = 24.0\nn = 20\n[sweep]\neta_x = [1000.0, 4000.0]\n";
        let sweep = crate::config::parse_sweep(doc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let entries = run_sweep(&sweep, dir.path()).unwrap();
        assert_eq!(entries.len(), 2);
        for e in &entries {
            let o = e.result.as_ref().unwrap();
            assert!(o.dir.join("series.csv").exists());
        }
        let table = std::fs::read_to_string(dir.path().join("fig5-linear/sweep.csv")).unwrap();
        assert_eq!(table.lines().count(), 3);
    }
}
