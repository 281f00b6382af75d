//! TOML scenario configuration.
//!
//! A document either describes a complete [`ScenarioConfig`] or names a
//! `preset` and overrides some of its fields. Unknown keys are rejected.

use std::path::PathBuf;

use popbal_core::entropy::{EntropyGrowthModel, EntropyInitial, GrowthResponse, INITIAL_CELLS};
use popbal_core::integrator::IntegratorConfig;
use popbal_core::particles::Bandwidth;
use popbal_core::reduction::ReducedAdvection;
use popbal_core::regulatory::{EpigeneticParams, ScheduleKind, SnailSchedule};
use popbal_core::scenarios::{
    population_tolerances, EpigeneticScenario, GrowthKind, GrowthScenario, HeterogeneityMode,
    HeterogeneousHysteresis, HysteresisScenario, InitialCondition, InitialKind, PopulationScenario,
};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::presets;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("could not serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid configuration `{name}`: {source}")]
    Invalid {
        name: String,
        source: popbal_core::Error,
    },
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Reserved. Every method is deterministic.
    #[serde(default)]
    pub seed: u64,
    /// Run directory; defaults to `<output root>/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Population(PopulationConfig),
    HysteresisHomogeneous(HysteresisConfig),
    HysteresisHeterogeneous(HeterogeneousConfig),
    Epigenetic(EpigeneticConfig),
    Entropy(EntropyConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Population(_) => "population",
            Self::HysteresisHomogeneous(_) => "hysteresis_homogeneous",
            Self::HysteresisHeterogeneous(_) => "hysteresis_heterogeneous",
            Self::Epigenetic(_) => "epigenetic",
            Self::Entropy(_) => "entropy",
        }
    }
}

/// 2D `(x, S)` population run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub initial: InitialKind,
    pub total_cells: f64,
    pub growth: GrowthKind,
    pub r_epi: f64,
    pub s0: f64,
    pub alpha_relax: f64,
    pub eta_x: f64,
    pub eta_s: f64,
    pub death: f64,
    pub k: f64,
    pub horizon: f64,
    pub checkpoint_interval: f64,
    pub n: usize,
    pub bandwidth: Bandwidth,
    pub heterogeneity: HeterogeneityMode,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self::from_scenario(&PopulationScenario::default())
    }
}

impl PopulationConfig {
    pub fn from_scenario(p: &PopulationScenario) -> Self {
        Self {
            initial: p.initial.kind,
            total_cells: p.initial.total_cells,
            growth: p.growth.kind,
            r_epi: p.growth.r_epi,
            s0: p.s0,
            alpha_relax: p.alpha_relax,
            eta_x: p.eta_x,
            eta_s: p.eta_s,
            death: p.death,
            k: p.k,
            horizon: p.horizon,
            checkpoint_interval: p.checkpoint_interval,
            n: p.n,
            bandwidth: p.bandwidth,
            heterogeneity: p.heterogeneity,
            rtol: p.integrator.rtol,
            atol: p.integrator.atol,
        }
    }

    pub fn scenario(&self) -> PopulationScenario {
        PopulationScenario {
            initial: InitialCondition {
                kind: self.initial,
                total_cells: self.total_cells,
            },
            growth: GrowthScenario {
                kind: self.growth,
                r_epi: self.r_epi,
            },
            s0: self.s0,
            alpha_relax: self.alpha_relax,
            eta_x: self.eta_x,
            eta_s: self.eta_s,
            death: self.death,
            k: self.k,
            horizon: self.horizon,
            checkpoint_interval: self.checkpoint_interval,
            n: self.n,
            bandwidth: self.bandwidth,
            heterogeneity: self.heterogeneity,
            integrator: IntegratorConfig {
                rtol: self.rtol,
                atol: self.atol,
                ..population_tolerances()
            },
        }
    }
}

/// Single cell following the core circuit under a SNAIL schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HysteresisConfig {
    pub schedule: SnailSchedule,
    pub output_step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        let h = HysteresisScenario::default();
        Self {
            schedule: h.schedule,
            output_step: h.output_step,
            rtol: h.integrator.rtol,
            atol: h.integrator.atol,
        }
    }
}

impl HysteresisConfig {
    pub fn scenario(&self) -> HysteresisScenario {
        HysteresisScenario {
            schedule: self.schedule.clone(),
            output_step: self.output_step,
            integrator: IntegratorConfig::with_tolerances(self.rtol, self.atol),
            ..HysteresisScenario::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterogeneousConfig {
    pub schedule: SnailSchedule,
    pub s_mean: f64,
    pub s_sigma: f64,
    pub particles: usize,
    pub snapshot_times: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for HeterogeneousConfig {
    fn default() -> Self {
        let h = HeterogeneousHysteresis::default();
        Self {
            schedule: h.schedule,
            s_mean: h.s_mean,
            s_sigma: h.s_sigma,
            particles: h.particles,
            snapshot_times: h.snapshot_times,
            rtol: h.integrator.rtol,
            atol: h.integrator.atol,
        }
    }
}

impl HeterogeneousConfig {
    pub fn scenario(&self) -> HeterogeneousHysteresis {
        HeterogeneousHysteresis {
            schedule: self.schedule.clone(),
            s_mean: self.s_mean,
            s_sigma: self.s_sigma,
            particles: self.particles,
            snapshot_times: self.snapshot_times.clone(),
            integrator: IntegratorConfig::with_tolerances(self.rtol, self.atol),
            ..HeterogeneousHysteresis::default()
        }
    }
}

/// Induction followed by withdrawal, with slow ZEB threshold adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpigeneticConfig {
    pub induction: ScheduleKind,
    pub alpha_epi: f64,
    pub beta_up: f64,
    pub beta_down: f64,
    pub hold: f64,
    pub output_step: f64,
    pub threshold_fraction: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for EpigeneticConfig {
    fn default() -> Self {
        Self::new(ScheduleKind::ShortInduction)
    }
}

impl EpigeneticConfig {
    pub fn new(induction: ScheduleKind) -> Self {
        let e = EpigeneticScenario::new(induction);
        Self {
            induction,
            alpha_epi: e.params.alpha_epi,
            beta_up: e.params.beta_up,
            beta_down: e.params.beta_down,
            hold: e.hold,
            output_step: e.output_step,
            threshold_fraction: e.threshold_fraction,
            rtol: e.integrator.rtol,
            atol: e.integrator.atol,
        }
    }

    pub fn scenario(&self) -> EpigeneticScenario {
        let base = EpigeneticScenario::new(self.induction);
        EpigeneticScenario {
            params: EpigeneticParams {
                alpha_epi: self.alpha_epi,
                beta_up: self.beta_up,
                beta_down: self.beta_down,
                ..base.params
            },
            hold: self.hold,
            output_step: self.output_step,
            threshold_fraction: self.threshold_fraction,
            integrator: IntegratorConfig::with_tolerances(self.rtol, self.atol),
            ..base
        }
    }
}

/// 1D model whose division rate depends on population entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub response: GrowthResponse,
    pub initial: EntropyInitial,
    pub total_cells: f64,
    pub s: f64,
    pub r0: f64,
    pub capacity: f64,
    pub eta_x: f64,
    pub k: f64,
    pub horizon: f64,
    pub checkpoint_interval: f64,
    pub n: usize,
    pub bandwidth: Bandwidth,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        let m = EntropyGrowthModel::new(GrowthResponse::Linear).expect("default entropy model");
        Self {
            response: m.response,
            initial: EntropyInitial::Unif,
            total_cells: INITIAL_CELLS,
            s: m.s,
            r0: m.r0,
            capacity: m.capacity,
            eta_x: m.eta_x,
            k: m.reduced.k(),
            horizon: 168.0,
            checkpoint_interval: 24.0,
            n: 50,
            bandwidth: Bandwidth::PerAxis { gamma: 0.8 },
            rtol: 1e-6,
            atol: 1e-9,
        }
    }
}

impl EntropyConfig {
    pub fn model(&self) -> popbal_core::Result<EntropyGrowthModel> {
        Ok(EntropyGrowthModel {
            reduced: ReducedAdvection::with_k(self.k)?,
            s: self.s,
            response: self.response,
            r0: self.r0,
            eta_x: self.eta_x,
            capacity: self.capacity,
        })
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::with_tolerances(self.rtol, self.atol)
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        checkpoints(self.checkpoint_interval, self.horizon)
    }

    pub fn validate(&self) -> popbal_core::Result<()> {
        let m = self.model()?;
        m.validate()?;
        m.reduced.roots(self.s)?;
        self.bandwidth.epsilon(self.n.max(1), 1)?;
        self.integrator().validate()?;
        positive("horizon", self.horizon)?;
        positive("checkpoint_interval", self.checkpoint_interval)?;
        positive("total_cells", self.total_cells)?;
        if self.n < 2 {
            return Err(popbal_core::Error::InvalidParameter {
                name: "N",
                value: self.n as f64,
                bound: "N >= 2",
            });
        }
        Ok(())
    }
}

/// `interval, 2·interval, …`, ending exactly on `horizon`.
pub fn checkpoints(interval: f64, horizon: f64) -> Vec<f64> {
    PopulationScenario {
        checkpoint_interval: interval,
        horizon,
        ..PopulationScenario::default()
    }
    .checkpoints()
}

fn positive(name: &'static str, value: f64) -> popbal_core::Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(popbal_core::Error::InvalidParameter {
            name,
            value,
            bound: "positive",
        })
    }
}

impl ScenarioConfig {
    pub fn new(name: impl Into<String>, model: ModelConfig) -> Self {
        Self {
            name: name.into(),
            seed: 0,
            output_dir: None,
            model,
        }
    }

    /// Checks every parameter against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checked = match &self.model {
            ModelConfig::Population(p) => p.scenario().validate(),
            ModelConfig::HysteresisHomogeneous(h) => validate_hysteresis(h),
            ModelConfig::HysteresisHeterogeneous(h) => validate_heterogeneous(h),
            ModelConfig::Epigenetic(e) => validate_epigenetic(e),
            ModelConfig::Entropy(e) => e.validate(),
        };
        checked.map_err(|source| ConfigError::Invalid {
            name: self.name.clone(),
            source,
        })
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    fn to_table(&self) -> Result<Table, ConfigError> {
        Ok(Table::try_from(self)?)
    }
}

fn validate_hysteresis(h: &HysteresisConfig) -> popbal_core::Result<()> {
    let s = h.scenario();
    s.integrator.validate()?;
    s.core.validate()?;
    positive("output_step", s.output_step)
}

fn validate_heterogeneous(h: &HeterogeneousConfig) -> popbal_core::Result<()> {
    let s = h.scenario();
    s.integrator.validate()?;
    s.core.validate()?;
    positive("s_sigma", s.s_sigma)?;
    if s.particles < 2 {
        return Err(popbal_core::Error::InvalidParameter {
            name: "particles",
            value: s.particles as f64,
            bound: "particles >= 2",
        });
    }
    let (t0, _) = s.schedule.domain();
    for &t in &s.snapshot_times {
        if !(t > t0) || !t.is_finite() {
            return Err(popbal_core::Error::InvalidParameter {
                name: "snapshot_times",
                value: t,
                bound: "after the schedule start",
            });
        }
    }
    Ok(())
}

fn validate_epigenetic(e: &EpigeneticConfig) -> popbal_core::Result<()> {
    let s = e.scenario();
    s.params.validate()?;
    s.integrator.validate()?;
    positive("hold", s.hold)?;
    positive("output_step", s.output_step)?;
    if !(s.threshold_fraction > 0.0 && s.threshold_fraction <= 1.0) {
        return Err(popbal_core::Error::InvalidParameter {
            name: "threshold_fraction",
            value: s.threshold_fraction,
            bound: "threshold_fraction in (0, 1]",
        });
    }
    Ok(())
}

/// Parses and validates a document. `base` names a preset whose values fill
/// every key the document leaves out; a top-level `preset` key does the
/// same and takes precedence.
pub fn parse_config(text: &str, base: Option<&str>) -> Result<ScenarioConfig, ConfigError> {
    let doc: Table = text.parse()?;
    resolve(doc, base)
}

fn resolve(mut doc: Table, base: Option<&str>) -> Result<ScenarioConfig, ConfigError> {
    let preset_name = match doc.remove("preset") {
        Some(Value::String(s)) => Some(s),
        Some(other) => {
            return Err(ConfigError::Sweep(format!(
                "`preset` must be a string, found {other}"
            )))
        }
        None => base.map(str::to_owned),
    };
    let merged = match preset_name {
        Some(name) => {
            let preset = presets::preset(&name).ok_or(ConfigError::UnknownPreset(name))?;
            let mut table = preset.to_table()?;
            let kind_changed = doc
                .get("model")
                .and_then(|m| m.get("kind"))
                .is_some_and(|k| Some(k) != table.get("model").and_then(|m| m.get("kind")));
            if kind_changed {
                table.remove("model");
            }
            merge(&mut table, doc);
            table
        }
        None => doc,
    };
    let cfg: ScenarioConfig = merged.try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// A base configuration with a Cartesian product of model parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    pub threads: usize,
    pub runs: Vec<(String, ScenarioConfig)>,
}

/// Parses a sweep document: a run configuration plus an optional top-level
/// `threads` and a `[sweep]` table mapping model keys to value lists. Every
/// combination is validated before anything runs.
pub fn parse_sweep(text: &str) -> Result<SweepConfig, ConfigError> {
    let mut doc: Table = text.parse()?;
    let threads = match doc.remove("threads") {
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        Some(Value::Integer(n)) if n >= 1 => n as usize,
        Some(other) => {
            return Err(ConfigError::Sweep(format!(
                "`threads` must be a positive integer, found {other}"
            )))
        }
    };
    let axes = match doc.remove("sweep") {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(other) => {
            return Err(ConfigError::Sweep(format!(
                "`sweep` must be a table, found {other}"
            )))
        }
    };
    let base = resolve(doc, None)?;
    let mut axes_list = Vec::new();
    for (key, values) in axes {
        match values {
            Value::Array(vs) if !vs.is_empty() => axes_list.push((key, vs)),
            _ => {
                return Err(ConfigError::Sweep(format!(
                    "`sweep.{key}` must be a non-empty array"
                )))
            }
        }
    }
    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in &axes_list {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let base_table = base.to_table()?;
    let mut runs = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut table = base_table.clone();
        let label = if combo.is_empty() {
            base.name.clone()
        } else {
            combo
                .iter()
                .map(|(k, v)| format!("{k}={}", label_value(v)))
                .collect::<Vec<_>>()
                .join("_")
        };
        let mut model = Table::new();
        for (k, v) in combo {
            model.insert(k, v);
        }
        let mut over = Table::new();
        over.insert("model".into(), Value::Table(model));
        over.insert("name".into(), Value::String(format!("{}/{label}", base.name)));
        over.remove("output_dir");
        table.remove("output_dir");
        merge(&mut table, over);
        let cfg: ScenarioConfig = table.try_into()?;
        cfg.validate()?;
        runs.push((label, cfg));
    }
    Ok(SweepConfig {
        base,
        threads,
        runs,
    })
}

fn label_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => format!("{f}"),
        other => other.to_string(),
    }
}
