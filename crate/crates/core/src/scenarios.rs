//! Named experiments: hysteresis, epigenetic delay, population runs under
//! growth scenarios, and their post-processing.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::entropy::{marginal_entropy, field_entropy, INITIAL_CELLS, HALF_WIDTH};
use crate::integrator::{integrate, IntegratorConfig};
use crate::math::{ceil, exp, ln};
use crate::particles::{
    regularize, rescale, run_schedule_with, trace, Bandwidth, CircuitScheduleAdvection,
    DensityField, Domain, Grid, MutationKernel, ParticleEnsemble, PopulationModel, Rate,
    ReducedSnailAdvection, Rescaling, DEFAULT_DEATH, DEFAULT_GROWTH,
};
use crate::reduction::{BranchRole, ReducedAdvection, X_MAX};
use crate::regulatory::{
    equilibria, EmtCoreParams, EpigeneticParams, ScheduleKind, SnailDynamics, SnailSchedule,
    S_MAX, S_MIN,
};
use crate::{Error, Result};

/// Coarse phenotype class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Phenotype {
    Epithelial,
    Hybrid,
    Mesenchymal,
}

/// Splits `[0, 25K]` into M / hybrid / E at every SNAIL level using the
/// unstable branches as separators.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeClassifier {
    reduced: ReducedAdvection,
}

impl PhenotypeClassifier {
    pub fn new(reduced: ReducedAdvection) -> Self {
        Self { reduced }
    }

    /// `(P_u1(S), P_u2(S))`, each held at its nearest validity endpoint
    /// outside its own range.
    pub fn separators(&self, s: f64) -> (f64, f64) {
        let sep = |role: BranchRole| {
            let (lo, hi) = self.reduced.intervals().validity(role);
            self.reduced.branches().get(role).eval(s.clamp(lo, hi))
        };
        (sep(BranchRole::U1), sep(BranchRole::U2))
    }

    pub fn classify(&self, x: f64, s: f64) -> Phenotype {
        let (u1, u2) = self.separators(s);
        if x < u1 {
            Phenotype::Mesenchymal
        } else if x < u2 {
            Phenotype::Hybrid
        } else {
            Phenotype::Epithelial
        }
    }
}

/// Mass fractions per phenotype.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fractions {
    pub epithelial: f64,
    pub hybrid: f64,
    pub mesenchymal: f64,
}

impl Fractions {
    pub fn sum(&self) -> f64 {
        self.epithelial + self.hybrid + self.mesenchymal
    }

    pub fn get(&self, p: Phenotype) -> f64 {
        match p {
            Phenotype::Epithelial => self.epithelial,
            Phenotype::Hybrid => self.hybrid,
            Phenotype::Mesenchymal => self.mesenchymal,
        }
    }
}

/// Fractions of a normalized `(x, S)` field, classifying each grid node.
pub fn phenotype_fractions(
    d: &DensityField,
    c: &PhenotypeClassifier,
    map: &Rescaling,
) -> Result<Fractions> {
    if d.grid.dim() != 2 || map.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: d.grid.dim(),
        });
    }
    let mut acc = [0.0; 3];
    let mut y = [0.0; 2];
    let mut x = [0.0; 2];
    for (i, &u) in d.values.iter().enumerate() {
        if u <= 0.0 {
            continue;
        }
        d.grid.node(i, &mut y);
        map.to_raw(&y, &mut x);
        let k = match c.classify(x[0], x[1]) {
            Phenotype::Epithelial => 0,
            Phenotype::Hybrid => 1,
            Phenotype::Mesenchymal => 2,
        };
        acc[k] += u;
    }
    let total = acc[0] + acc[1] + acc[2];
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(Fractions {
        epithelial: acc[0] / total,
        hybrid: acc[1] / total,
        mesenchymal: acc[2] / total,
    })
}

/// Growth-rate assignment across phenotypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GrowthKind {
    /// Equal rates.
    R1,
    /// Mesenchymal cells at half rate.
    R2,
    /// Hybrid and mesenchymal cells at half rate.
    R3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GrowthScenario {
    pub kind: GrowthKind,
    pub r_epi: f64,
}

impl GrowthScenario {
    pub fn new(kind: GrowthKind) -> Self {
        Self {
            kind,
            r_epi: DEFAULT_GROWTH,
        }
    }

    pub fn rate(&self, p: Phenotype) -> f64 {
        let half = 0.5 * self.r_epi;
        match (self.kind, p) {
            (_, Phenotype::Epithelial) | (GrowthKind::R1, _) => self.r_epi,
            (GrowthKind::R2, Phenotype::Hybrid) => self.r_epi,
            _ => half,
        }
    }
}

/// Phenotype-dependent growth over raw `(x, S)`.
pub struct PhenotypeGrowth {
    pub classifier: PhenotypeClassifier,
    pub scenario: GrowthScenario,
}

impl Rate for PhenotypeGrowth {
    fn rate(&self, y: &[f64]) -> f64 {
        self.scenario.rate(self.classifier.classify(y[0], y[1]))
    }
}

/// Initial population layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitialKind {
    Epi,
    Hyb,
    Mes,
    EpiMes,
    EpiHybMes,
    Uni,
}

impl InitialKind {
    pub const ALL: [Self; 6] = [
        Self::Epi,
        Self::Hyb,
        Self::Mes,
        Self::EpiMes,
        Self::EpiHybMes,
        Self::Uni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Epi => "epi",
            Self::Hyb => "hyb",
            Self::Mes => "mes",
            Self::EpiMes => "epi_mes",
            Self::EpiHybMes => "epi_hyb_mes",
            Self::Uni => "uni",
        }
    }

    fn roles(self) -> &'static [BranchRole] {
        use BranchRole::*;
        match self {
            Self::Epi => &[Ep],
            Self::Hyb => &[Hyb],
            Self::Mes => &[Mes],
            Self::EpiMes => &[Ep, Mes],
            Self::EpiHybMes => &[Ep, Hyb, Mes],
            Self::Uni => &[],
        }
    }
}

/// Half-width of the SNAIL side of each support rectangle.
pub const SUPPORT_HALF_WIDTH_S: f64 = 5_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct InitialCondition {
    pub kind: InitialKind,
    pub total_cells: f64,
}

impl InitialCondition {
    pub fn new(kind: InitialKind) -> Self {
        Self {
            kind,
            total_cells: INITIAL_CELLS,
        }
    }

    /// Raw rectangles `[(x_lo, x_hi, s_lo, s_hi)]` whose union is the support.
    pub fn support(&self, ra: &ReducedAdvection, s0: f64) -> Vec<[f64; 4]> {
        if self.kind == InitialKind::Uni {
            return vec![[0.0, X_MAX, S_MIN, S_MAX]];
        }
        let s_lo = (s0 - SUPPORT_HALF_WIDTH_S).max(S_MIN);
        let s_hi = (s0 + SUPPORT_HALF_WIDTH_S).min(S_MAX);
        self.kind
            .roles()
            .iter()
            .map(|&role| {
                let (lo, hi) = ra.intervals().validity(role);
                let c = ra.branches().get(role).eval(s0.clamp(lo, hi));
                [
                    (c - HALF_WIDTH).max(0.0),
                    (c + HALF_WIDTH).min(X_MAX),
                    s_lo,
                    s_hi,
                ]
            })
            .collect()
    }

    /// Grid ensemble on `[0, 1]²`, uniform on the support and holding
    /// exactly `total_cells`.
    pub fn ensemble(
        &self,
        grid: &Grid,
        map: &Rescaling,
        ra: &ReducedAdvection,
        s0: f64,
    ) -> Result<ParticleEnsemble> {
        if !(self.total_cells > 0.0) {
            return Err(Error::InvalidParameter {
                name: "total_cells",
                value: self.total_cells,
                bound: "total_cells > 0",
            });
        }
        let rects = self.support(ra, s0);
        let inside = |y: &[f64]| {
            let mut x = [0.0; 2];
            map.to_raw(y, &mut x);
            let hit = rects
                .iter()
                .any(|r| x[0] >= r[0] && x[0] <= r[1] && x[1] >= r[2] && x[1] <= r[3]);
            if hit {
                1.0
            } else {
                0.0
            }
        };
        let mut e = ParticleEnsemble::on_grid(grid, inside)?;
        let mass = e.rho();
        if !(mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        let scale = self.total_cells / mass;
        e.mass_weights.iter_mut().for_each(|v| *v *= scale);
        Ok(e)
    }
}

/// Which density the heterogeneity series is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HeterogeneityMode {
    #[default]
    Marginal,
    Joint,
}

/// Entropy of each field in molecule units: the x-marginal (plus `ln A`)
/// or the joint density (plus `ln AC`).
pub fn heterogeneity_series(
    fields: &[DensityField],
    map: &Rescaling,
    mode: HeterogeneityMode,
) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| match mode {
            HeterogeneityMode::Marginal => Ok(marginal_entropy(f, 0)? + ln(map.scale[0])),
            HeterogeneityMode::Joint => Ok(field_entropy(f)? + ln(map.jacobian())),
        })
        .collect()
}

/// Default integrator tolerances for population runs.
pub fn population_tolerances() -> IntegratorConfig {
    IntegratorConfig::with_tolerances(1e-4, 1e-7)
}

/// Full parameter set of a 2D population run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PopulationScenario {
    pub initial: InitialCondition,
    pub growth: GrowthScenario,
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
    pub integrator: IntegratorConfig,
}

impl Default for PopulationScenario {
    fn default() -> Self {
        Self {
            initial: InitialCondition::new(InitialKind::Epi),
            growth: GrowthScenario::new(GrowthKind::R1),
            s0: 200_000.0,
            alpha_relax: 120.0,
            eta_x: 1_000.0,
            eta_s: 5_000.0,
            death: DEFAULT_DEATH,
            k: 0.02,
            horizon: 2_400.0,
            checkpoint_interval: 24.0,
            n: 20,
            bandwidth: Bandwidth::default(),
            heterogeneity: HeterogeneityMode::Marginal,
            integrator: population_tolerances(),
        }
    }
}

impl PopulationScenario {
    pub fn validate(&self) -> Result<()> {
        SnailDynamics::new(self.s0, self.alpha_relax)?;
        MutationKernel::new(vec![self.eta_x, self.eta_s])?;
        self.bandwidth.epsilon(self.n.max(1), 2)?;
        self.integrator.validate()?;
        for (name, value, bound) in [
            ("death", self.death, "death >= 0"),
            ("r_epi", self.growth.r_epi, "r_epi >= 0"),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter { name, value, bound });
            }
        }
        for (name, value) in [
            ("k", self.k),
            ("horizon", self.horizon),
            ("checkpoint_interval", self.checkpoint_interval),
            ("total_cells", self.initial.total_cells),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    bound: "positive",
                });
            }
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter {
                name: "N",
                value: self.n as f64,
                bound: "N >= 2",
            });
        }
        Ok(())
    }

    /// Checkpoints every interval up to the horizon, ending exactly on it.
    pub fn checkpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 1usize;
        loop {
            let t = i as f64 * self.checkpoint_interval;
            if t >= self.horizon * (1.0 - 1e-12) {
                out.push(self.horizon);
                break;
            }
            out.push(t);
            i += 1;
        }
        out
    }

    /// Normalized model on `[0, 1]²`.
    pub fn model(&self) -> Result<PopulationModel> {
        self.validate()?;
        let reduced = ReducedAdvection::with_k(self.k)?;
        let raw = PopulationModel {
            advection: Box::new(ReducedSnailAdvection {
                reduced: reduced.clone(),
                snail: SnailDynamics::new(self.s0, self.alpha_relax)?,
            }),
            growth: Box::new(PhenotypeGrowth {
                classifier: PhenotypeClassifier::new(reduced),
                scenario: self.growth,
            }),
            death: Box::new(self.death),
            mutation: Some(MutationKernel::new(vec![self.eta_x, self.eta_s])?),
            modulation: None,
            domain: Domain::new(vec![0.0, S_MIN], vec![X_MAX, S_MAX])?,
        };
        rescale(raw, &Rescaling::emt())
    }
}

/// Series of a population run, starting with the regularized initial state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PopulationRun {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub fractions: Vec<Fractions>,
    pub entropy: Vec<f64>,
    pub leakage: Vec<f64>,
    pub clamped_mass: f64,
    pub fields: Vec<DensityField>,
}

impl PopulationRun {
    pub fn final_field(&self) -> &DensityField {
        self.fields.last().expect("runs hold at least the initial field")
    }

    pub fn final_rho(&self) -> f64 {
        *self.rho.last().unwrap_or(&f64::NAN)
    }

    pub fn final_entropy(&self) -> f64 {
        *self.entropy.last().unwrap_or(&f64::NAN)
    }

    pub fn final_fractions(&self) -> Fractions {
        self.fractions.last().copied().unwrap_or_default()
    }
}

pub fn run_population_scenario(p: &PopulationScenario) -> Result<PopulationRun> {
    run_population_scenario_with(p, |_| Ok(()))
}

/// [`run_population_scenario`] calling `progress` after every checkpoint.
pub fn run_population_scenario_with<F>(p: &PopulationScenario, mut progress: F) -> Result<PopulationRun>
where
    F: FnMut(&DensityField) -> Result<()>,
{
    let m = p.model()?;
    let map = Rescaling::emt();
    let reduced = ReducedAdvection::with_k(p.k)?;
    let classifier = PhenotypeClassifier::new(reduced.clone());
    let grid = Grid::unit(p.n, 2)?;
    let init = p.initial.ensemble(&grid, &map, &reduced, p.s0)?;
    let eps = p.bandwidth.epsilon(p.n, 2)?;
    let f0 = regularize(&init, &grid, eps)?;
    let mut fields = vec![f0];
    let out = run_schedule_with(
        &m,
        &init,
        &grid,
        &p.checkpoints(),
        &p.bandwidth,
        &p.integrator,
        |f| progress(f),
    )?;
    fields.extend(out.fields);
    let mut run = PopulationRun {
        times: Vec::with_capacity(fields.len()),
        rho: Vec::with_capacity(fields.len()),
        fractions: Vec::with_capacity(fields.len()),
        entropy: heterogeneity_series(&fields, &map, p.heterogeneity)?,
        leakage: Vec::with_capacity(fields.len()),
        clamped_mass: out.clamped_mass,
        fields: Vec::new(),
    };
    for f in &fields {
        run.times.push(f.t);
        run.rho.push(f.rho);
        run.fractions.push(phenotype_fractions(f, &classifier, &map)?);
        run.leakage.push(f.leakage());
    }
    run.fields = fields;
    Ok(run)
}

/// Strict local maxima of a sequence, with flat tops counted once.
pub fn count_modes(values: &[f64]) -> usize {
    let mut count = 0;
    let mut i = 0;
    let n = values.len();
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left = i == 0 || values[i - 1] < values[i];
        let right = j == n - 1 || values[j + 1] < values[i];
        if left && right && values[i] > 0.0 {
            count += 1;
        }
        i = j + 1;
    }
    count
}

/// Integrates piecewise between schedule breakpoints so that no step
/// straddles a kink.
fn integrate_segments<F>(
    mut rhs: F,
    y0: &[f64],
    breaks: &[f64],
    outputs: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut times = Vec::with_capacity(outputs.len());
    let mut states = Vec::with_capacity(outputs.len());
    let mut y = y0.to_vec();
    let mut cursor = 0usize;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut outs = Vec::new();
        while cursor < outputs.len() && outputs[cursor] <= b {
            if outputs[cursor] >= a {
                outs.push(outputs[cursor]);
            }
            cursor += 1;
        }
        let traj = integrate(&mut rhs, &y, (a, b), &outs, cfg)?;
        times.extend(traj.times);
        states.extend(traj.states);
        y = traj.final_state;
    }
    Ok((times, states))
}

fn ep_equilibrium(s: f64, p: &EmtCoreParams) -> Result<[f64; 2]> {
    let eq = equilibria(s, p)?;
    let top = eq
        .iter()
        .filter(|e| e.stable)
        .last()
        .ok_or(Error::Empty("stable equilibria"))?;
    Ok([top.mu, top.z])
}

/// Homogeneous hysteresis: one cell following the core circuit under a
/// SNAIL schedule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HysteresisScenario {
    pub core: EmtCoreParams,
    pub schedule: SnailSchedule,
    pub output_step: f64,
    pub integrator: IntegratorConfig,
}

impl Default for HysteresisScenario {
    fn default() -> Self {
        Self {
            core: EmtCoreParams::default(),
            schedule: SnailSchedule::preset(ScheduleKind::Hysteresis),
            output_step: 10.0,
            integrator: IntegratorConfig::with_tolerances(1e-8, 1e-6),
        }
    }
}

/// Sampled `(t, μ200, Z, S)` path.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CircuitTrajectory {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

/// Times at which a schedule crosses `level`, with the sign of its slope.
pub fn crossing_times(schedule: &SnailSchedule, level: f64) -> Vec<(f64, f64)> {
    let pts = schedule.points();
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let ((t0, s0), (t1, s1)) = (w[0], w[1]);
        if s0 == s1 {
            continue;
        }
        let lo = s0.min(s1);
        let hi = s0.max(s1);
        if level >= lo && level <= hi {
            let t = t0 + (level - s0) / (s1 - s0) * (t1 - t0);
            if !out.iter().any(|&(u, _): &(f64, f64)| u == t) {
                out.push((t, s1 - s0));
            }
        }
    }
    out
}

fn output_grid(t0: f64, t1: f64, step: f64, extra: &[f64]) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "output_step",
            value: step,
            bound: "output_step > 0",
        });
    }
    let n = ceil((t1 - t0) / step) as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| (t0 + i as f64 * step).min(t1)).collect();
    out.extend_from_slice(extra);
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

pub fn run_hysteresis_homogeneous(h: &HysteresisScenario) -> Result<CircuitTrajectory> {
    h.core.validate()?;
    let (t0, t1) = h.schedule.domain();
    let s_init = h.schedule.value(t0)?;
    let y0 = ep_equilibrium(s_init, &h.core)?;
    let extra: Vec<f64> = crossing_times(&h.schedule, 200_000.0)
        .into_iter()
        .map(|c| c.0)
        .collect();
    let outputs = output_grid(t0, t1, h.output_step, &extra)?;
    let breaks: Vec<f64> = h.schedule.breakpoint_times().collect();
    let core = &h.core;
    let sched = &h.schedule;
    let (times, states) = integrate_segments(
        |t, y, dy| {
            let f = core.rhs(y[0], y[1], sched.value_unchecked(t));
            dy[0] = f[0];
            dy[1] = f[1];
            Ok(())
        },
        &y0,
        &breaks,
        &outputs,
        &h.integrator,
    )?;
    Ok(CircuitTrajectory {
        s: times.iter().map(|&t| sched.value_unchecked(t)).collect(),
        mu: states.iter().map(|y| y[0]).collect(),
        z: states.iter().map(|y| y[1]).collect(),
        times,
    })
}

/// Loop width at `S = 200K` and hybrid-branch dwell times.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HysteresisMetrics {
    pub mu_ascending: f64,
    pub mu_descending: f64,
    pub gap: f64,
    pub dwell_ascending: f64,
    pub dwell_descending: f64,
}

/// Distance to the hybrid branch counted as dwelling on it.
pub const HYBRID_DWELL_BAND: f64 = 2_000.0;

pub fn hysteresis_metrics(
    traj: &CircuitTrajectory,
    schedule: &SnailSchedule,
    ra: &ReducedAdvection,
) -> Result<HysteresisMetrics> {
    let cross = crossing_times(schedule, 200_000.0);
    let at = |t: f64| {
        traj.times
            .iter()
            .position(|&u| u == t)
            .map(|i| traj.mu[i])
            .ok_or(Error::Empty("trajectory sample at the 200K crossing"))
    };
    let up = cross
        .iter()
        .find(|c| c.1 > 0.0)
        .ok_or(Error::Empty("ascending 200K crossing"))?;
    let down = cross
        .iter()
        .find(|c| c.1 < 0.0)
        .ok_or(Error::Empty("descending 200K crossing"))?;
    let mu_ascending = at(up.0)?;
    let mu_descending = at(down.0)?;
    let (lo, hi) = ra.intervals().validity(BranchRole::Hyb);
    let hyb = ra.branches().get(BranchRole::Hyb);
    let mut dwell_ascending = 0.0;
    let mut dwell_descending = 0.0;
    for i in 1..traj.times.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        let tm = 0.5 * (traj.times[i] + traj.times[i - 1]);
        let s = traj.s[i];
        if s < lo || s > hi {
            continue;
        }
        if (traj.mu[i] - hyb.eval(s)).abs() < HYBRID_DWELL_BAND {
            if schedule.is_non_decreasing(tm) {
                dwell_ascending += dt;
            } else {
                dwell_descending += dt;
            }
        }
    }
    Ok(HysteresisMetrics {
        mu_ascending,
        mu_descending,
        gap: (mu_ascending - mu_descending).abs(),
        dwell_ascending,
        dwell_descending,
    })
}

/// Heterogeneous hysteresis: cells share `(μ200, Z)` but carry Gaussian
/// SNAIL levels, all shifted by the schedule slope.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeterogeneousHysteresis {
    pub core: EmtCoreParams,
    pub schedule: SnailSchedule,
    pub s_mean: f64,
    pub s_sigma: f64,
    /// Number of SNAIL samples over `s_mean ± 4 s_sigma`.
    pub particles: usize,
    pub snapshot_times: Vec<f64>,
    pub integrator: IntegratorConfig,
}

impl Default for HeterogeneousHysteresis {
    fn default() -> Self {
        Self {
            core: EmtCoreParams::default(),
            schedule: SnailSchedule::preset(ScheduleKind::Hysteresis),
            s_mean: 160_000.0,
            s_sigma: 20_000.0,
            particles: 81,
            snapshot_times: (1..=20).map(|i| i as f64 * 500.0).collect(),
            integrator: IntegratorConfig::with_tolerances(1e-6, 1e-6),
        }
    }
}

pub fn run_hysteresis_heterogeneous(h: &HeterogeneousHysteresis) -> Result<Vec<ParticleEnsemble>> {
    h.core.validate()?;
    if h.particles < 2 || !(h.s_sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "particles",
            value: h.particles as f64,
            bound: "particles >= 2 and s_sigma > 0",
        });
    }
    let [mu0, z0] = ep_equilibrium(h.s_mean, &h.core)?;
    let n = h.particles;
    let span = 4.0 * h.s_sigma;
    let ds = 2.0 * span / (n - 1) as f64;
    let mut positions = Vec::with_capacity(3 * n);
    let mut mass = Vec::with_capacity(n);
    for i in 0..n {
        let s = h.s_mean - span + i as f64 * ds;
        positions.extend_from_slice(&[mu0, z0, s]);
        let q = (s - h.s_mean) / h.s_sigma;
        mass.push(exp(-0.5 * q * q));
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    let e = ParticleEnsemble::from_parts(3, positions, vec![ds; n], mass, h.schedule.domain().0)?;
    let m = PopulationModel {
        advection: Box::new(CircuitScheduleAdvection {
            core: h.core.clone(),
            schedule: h.schedule.clone(),
        }),
        growth: Box::new(0.0),
        death: Box::new(0.0),
        mutation: None,
        modulation: None,
        domain: Domain::new(vec![0.0; 3], vec![1e6, 1e7, 1e6])?,
    };
    let mut times: Vec<f64> = h.snapshot_times.clone();
    times.extend(h.schedule.breakpoint_times().filter(|&t| t > e.t));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let snaps = trace(&e, &m, &times, &h.integrator)?;
    Ok(snaps
        .into_iter()
        .filter(|s| h.snapshot_times.contains(&s.t))
        .collect())
}

/// Homogeneous run of the epigenetic circuit under an induction schedule,
/// followed by a hold at the final SNAIL level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpigeneticScenario {
    pub params: EpigeneticParams,
    pub schedule: SnailSchedule,
    pub hold: f64,
    pub output_step: f64,
    pub threshold_fraction: f64,
    pub integrator: IntegratorConfig,
}

impl EpigeneticScenario {
    pub fn new(induction: ScheduleKind) -> Self {
        Self {
            params: EpigeneticParams::default(),
            schedule: SnailSchedule::preset(induction),
            hold: 2_400.0,
            output_step: 1.0,
            threshold_fraction: 0.9,
            integrator: IntegratorConfig::with_tolerances(1e-8, 1e-6),
        }
    }

    /// Start of the final decreasing segment.
    pub fn withdrawal_start(&self) -> f64 {
        let pts = self.schedule.points();
        let mut t = pts[0].0;
        for w in pts.windows(2) {
            if w[1].1 < w[0].1 && !(w[0].1 < pts[0].1) {
                t = w[0].0;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EpigeneticRun {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub z0: Vec<f64>,
    pub s: Vec<f64>,
    pub withdrawal_start: f64,
    pub threshold: f64,
    /// Hours from withdrawal until miR-200 regains the threshold; `None`
    /// when it does not within the horizon.
    pub recovery_time: Option<f64>,
}

/// Steady state of the epigenetic circuit at constant SNAIL, reached by
/// relaxing from the epithelial core equilibrium.
pub fn epigenetic_steady_state(s: f64, p: &EpigeneticParams, cfg: &IntegratorConfig) -> Result<[f64; 3]> {
    let [mu, z] = ep_equilibrium(s, &p.core)?;
    let traj = integrate(
        |_, y, dy| {
            dy.copy_from_slice(&p.rhs(y[0], y[1], y[2], s, true));
            Ok(())
        },
        &[mu, z, p.z0_baseline],
        (0.0, 50_000.0),
        &[],
        cfg,
    )?;
    let y = traj.final_state;
    Ok([y[0], y[1], y[2]])
}

pub fn run_epigenetic(e: &EpigeneticScenario) -> Result<EpigeneticRun> {
    e.params.validate()?;
    let (t0, t_end) = e.schedule.domain();
    let s_start = e.schedule.value(t0)?;
    let y0 = epigenetic_steady_state(s_start, &e.params, &e.integrator)?;
    let threshold = e.threshold_fraction * y0[0];
    let horizon = t_end + e.hold.max(0.0);
    let outputs = output_grid(t0, horizon, e.output_step, &[])?;
    let mut breaks: Vec<f64> = e.schedule.breakpoint_times().collect();
    if horizon > t_end {
        breaks.push(horizon);
    }
    let sched = &e.schedule;
    let s_last = sched.points()[sched.points().len() - 1].1;
    let s_at = |t: f64| if t >= t_end { s_last } else { sched.value_unchecked(t) };
    let p = &e.params;
    let (times, states) = integrate_segments(
        |t, y, dy| {
            let inc = t >= t_end || sched.is_non_decreasing(t);
            dy.copy_from_slice(&p.rhs(y[0], y[1], y[2], s_at(t), inc));
            Ok(())
        },
        &y0,
        &breaks,
        &outputs,
        &e.integrator,
    )?;
    let withdrawal_start = e.withdrawal_start();
    let mu: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let mut recovery_time = None;
    for i in 1..times.len() {
        if times[i] <= withdrawal_start {
            continue;
        }
        if mu[i] >= threshold {
            let (ta, tb, ma, mb) = (times[i - 1], times[i], mu[i - 1], mu[i]);
            let t = if mb > ma && ma < threshold {
                ta + (threshold - ma) / (mb - ma) * (tb - ta)
            } else {
                tb
            };
            recovery_time = Some(t - withdrawal_start);
            break;
        }
    }
    Ok(EpigeneticRun {
        s: times.iter().map(|&t| s_at(t)).collect(),
        z: states.iter().map(|y| y[1]).collect(),
        z0: states.iter().map(|y| y[2]).collect(),
        mu,
        times,
        withdrawal_start,
        threshold,
        recovery_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classifier() -> PhenotypeClassifier {
        PhenotypeClassifier::new(ReducedAdvection::with_k(0.02).unwrap())
    }

    #[test]
    fn classifier_matches_roots_at_tristable_level() {
        let c = classifier();
        let ra = ReducedAdvection::with_k(0.02).unwrap();
        let r = ra.roots(200_000.0).unwrap();
        let v = r.as_slice();
        assert_eq!(c.classify(v[0], 200_000.0), Phenotype::Mesenchymal);
        assert_eq!(c.classify(v[2], 200_000.0), Phenotype::Hybrid);
        assert_eq!(c.classify(v[4], 200_000.0), Phenotype::Epithelial);
        let (u1, u2) = c.separators(200_000.0);
        assert_eq!((u1, u2), (v[1], v[3]));
        // Held constant outside the validity range.
        assert_eq!(c.separators(150_000.0), c.separators(160_000.0));
    }

    #[test]
    fn growth_scenarios() {
        use Phenotype::*;
        let r = |k| {
            let g = GrowthScenario::new(k);
            [g.rate(Epithelial), g.rate(Hybrid), g.rate(Mesenchymal)]
        };
        assert_eq!(r(GrowthKind::R1), [0.0182; 3]);
        assert_eq!(r(GrowthKind::R2), [0.0182, 0.0182, 0.0091]);
        assert_eq!(r(GrowthKind::R3), [0.0182, 0.0091, 0.0091]);
    }

    #[test]
    fn initial_conditions_hold_exact_mass() {
        let ra = ReducedAdvection::with_k(0.02).unwrap();
        let g = Grid::unit(20, 2).unwrap();
        let map = Rescaling::emt();
        for kind in InitialKind::ALL {
            for s0 in [150_000.0, 200_000.0, 250_000.0] {
                let e = InitialCondition::new(kind).ensemble(&g, &map, &ra, s0).unwrap();
                assert!((e.rho() - 100.0).abs() < 1e-10, "{kind:?} {s0}");
            }
        }
        let e = InitialCondition::new(InitialKind::Uni)
            .ensemble(&g, &map, &ra, 200_000.0)
            .unwrap();
        assert!(e.mass_weights.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    fn field_from(values: Vec<f64>, n: usize) -> DensityField {
        let grid = Grid::unit(n, 2).unwrap();
        let rho = values.iter().sum::<f64>() * grid.cell_volume();
        DensityField {
            grid,
            values,
            rho,
            particle_mass: rho,
            epsilon: 0.05,
            t: 0.0,
        }
    }

    #[test]
    fn fractions_partition_and_pure_regions() {
        let n = 20;
        let c = classifier();
        let map = Rescaling::emt();
        let mut v = vec![0.0; n * n];
        // x index 19 is x = 24375 molecules, epithelial everywhere.
        for j in 0..n {
            v[19 * n + j] = 1.0;
        }
        let f = phenotype_fractions(&field_from(v, n), &c, &map).unwrap();
        assert_eq!(f, Fractions { epithelial: 1.0, hybrid: 0.0, mesenchymal: 0.0 });

        let v: Vec<f64> = (0..n * n).map(|i| 1.0 + (i % 7) as f64).collect();
        let f = phenotype_fractions(&field_from(v, n), &c, &map).unwrap();
        assert!((f.sum() - 1.0).abs() < 1e-12);
        assert!(phenotype_fractions(&field_from(vec![0.0; n * n], n), &c, &map).is_err());
    }

    #[test]
    fn straddling_bumps_split_evenly() {
        // A fine grid with two equal point masses mirrored about the
        // separator at S = 200K.
        let n = 200;
        let c = classifier();
        let map = Rescaling::emt();
        let (u1, _) = c.separators(200_000.0);
        let grid = Grid::unit(n, 2).unwrap();
        let mut v = vec![0.0; n * n];
        let mut y = [0.0; 2];
        let mut best = (f64::INFINITY, 0);
        for i in 0..n * n {
            grid.node(i, &mut y);
            let x = y[0] * 25_000.0;
            let s = 150_000.0 + y[1] * 100_000.0;
            if (s - 200_250.0).abs() < 1.0 && (x - u1).abs() < best.0 && x > u1 {
                best = ((x - u1).abs(), i);
            }
        }
        let i = best.1;
        v[i] = 1.0;
        v[i - n] = 1.0;
        let f = phenotype_fractions(&field_from(v, n), &c, &map).unwrap();
        assert_eq!(f.mesenchymal, 0.5);
        assert_eq!(f.hybrid, 0.5);
    }

    #[test]
    fn mode_counting() {
        assert_eq!(count_modes(&[0.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0]), 3);
        assert_eq!(count_modes(&[1.0, 2.0, 3.0]), 1);
        assert_eq!(count_modes(&[0.0; 5]), 0);
    }

    #[test]
    fn checkpoints_end_on_horizon() {
        let p = PopulationScenario {
            horizon: 50.0,
            ..Default::default()
        };
        assert_eq!(p.checkpoints(), vec![24.0, 48.0, 50.0]);
        let p = PopulationScenario {
            horizon: 48.0,
            ..Default::default()
        };
        assert_eq!(p.checkpoints(), vec![24.0, 48.0]);
    }

    #[test]
    fn scenario_validation() {
        let bad = PopulationScenario {
            s0: 300_000.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PopulationScenario {
            bandwidth: Bandwidth::PerAxis { gamma: 1.5 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PopulationScenario::default().validate().is_ok());
    }

    #[test]
    fn crossings_of_hysteresis_schedule() {
        let s = SnailSchedule::preset(ScheduleKind::Hysteresis);
        let c = crossing_times(&s, 200_000.0);
        assert_eq!(c.len(), 2);
        assert!((c[0].0 - 2_500.0).abs() < 1e-9 && c[0].1 > 0.0);
        assert!((c[1].0 - 7_500.0).abs() < 1e-9 && c[1].1 < 0.0);
    }

    #[test]
    fn withdrawal_starts() {
        assert_eq!(EpigeneticScenario::new(ScheduleKind::ShortInduction).withdrawal_start(), 1_200.0);
        assert_eq!(EpigeneticScenario::new(ScheduleKind::LongInduction).withdrawal_start(), 2_400.0);
    }

    #[test]
    fn short_run_population_keeps_mass_bookkeeping() {
        let p = PopulationScenario {
            horizon: 48.0,
            n: 10,
            ..Default::default()
        };
        let run = run_population_scenario(&p).unwrap();
        assert_eq!(run.times, vec![0.0, 24.0, 48.0]);
        for f in &run.fractions {
            assert!((f.sum() - 1.0).abs() < 1e-12);
        }
        assert!(run.rho[2] > run.rho[0]);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fractions_partition_unity(values in vec(0.0f64..5.0, 100)) {
            prop_assume!(values.iter().any(|&u| u > 0.0));
            let grid = Grid::unit(10, 2).unwrap();
            let rho = values.iter().sum::<f64>() * grid.cell_volume();
            let d = DensityField {
                grid,
                values,
                rho,
                particle_mass: rho,
                epsilon: 0.05,
                t: 0.0,
            };
            let c = PhenotypeClassifier::new(ReducedAdvection::with_k(0.02).unwrap());
            let f = phenotype_fractions(&d, &c, &Rescaling::emt()).unwrap();
            let parts = [f.epithelial, f.hybrid, f.mesenchymal];
            prop_assert!(parts.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
