//! Heterogeneity metric and the entropy-coupled growth model.
//!
//! The discrete entropy of an ensemble is
//! `Ē = -Σ_j (v_j/ρ) ln(v_j / (w_j ρ))`, the quadrature of
//! `-∫ (u/ρ) ln(u/ρ)` on the normalized domain. Growth responses take the
//! entropy of the x-distribution in molecule units, `Ē + ln A`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::integrator::IntegratorConfig;
use crate::math::{ln, powi};
use crate::particles::{
    run_schedule_with, Bandwidth, DensityField, Domain, Grid, MutationKernel, ParticleEnsemble,
    PopulationModel, RateModulation, ReducedFixedSnail, Rescaling, StateView,
};
use crate::reduction::{BranchRole, ReducedAdvection, X_MAX};
use crate::{Error, Result};

/// Baseline growth rate per hour.
pub const R0: f64 = 0.0182;
/// Carrying capacity of the entropy model, `r/d`.
pub const CAPACITY: f64 = 10_000.0;

/// Discrete weighted entropy of mass weights `v` over cells of volume `w`.
pub fn entropy_of(volume_weights: &[f64], mass_weights: &[f64]) -> Result<f64> {
    if volume_weights.len() != mass_weights.len() {
        return Err(Error::DimensionMismatch {
            expected: volume_weights.len(),
            found: mass_weights.len(),
        });
    }
    let rho: f64 = mass_weights.iter().sum();
    if !(rho > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut e = 0.0;
    for (&w, &v) in volume_weights.iter().zip(mass_weights) {
        if v > 0.0 {
            let p = v / rho;
            e -= p * ln(p / w);
        }
    }
    Ok(e)
}

/// Entropy of an ensemble on its own (normally unit) domain.
pub fn entropy(e: &ParticleEnsemble) -> Result<f64> {
    entropy_of(&e.volume_weights, &e.mass_weights)
}

/// Entropy of the field's density on its grid.
pub fn field_entropy(d: &DensityField) -> Result<f64> {
    let w = d.grid.cell_volume();
    let v: Vec<f64> = d.values.iter().map(|u| u.max(0.0) * w).collect();
    let ws = alloc::vec![w; v.len()];
    entropy_of(&ws, &v)
}

/// Entropy of the field's marginal along `axis`.
pub fn marginal_entropy(d: &DensityField, axis: usize) -> Result<f64> {
    let h = d.grid.spacing(axis);
    let v: Vec<f64> = d.marginal(axis).iter().map(|u| u.max(0.0) * h).collect();
    let ws = alloc::vec![h; v.len()];
    entropy_of(&ws, &v)
}

/// Growth rate as a function of entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum GrowthResponse {
    /// `r0 (θ⁶ + 2E⁶)/(θ⁶ + E⁶)`.
    Hill { theta: f64 },
    /// `max(r0 + 0.01 (E - 8), 0)`.
    Linear,
}

impl GrowthResponse {
    pub fn validate(&self) -> Result<()> {
        if let Self::Hill { theta } = *self {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "theta",
                    value: theta,
                    bound: "theta > 0",
                });
            }
        }
        Ok(())
    }

    pub fn eval_unchecked(&self, e: f64, r0: f64) -> f64 {
        match *self {
            Self::Hill { theta } => {
                let t6 = powi(theta, 6);
                let e6 = powi(e.max(0.0), 6);
                r0 * (t6 + 2.0 * e6) / (t6 + e6)
            }
            Self::Linear => (r0 + 0.01 * (e - 8.0)).max(0.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Hill { .. } => "hill",
            Self::Linear => "linear",
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            Self::Hill { theta } => Some(theta),
            Self::Linear => None,
        }
    }
}

pub fn growth_response(e: f64, kind: &GrowthResponse, r0: f64) -> Result<f64> {
    kind.validate()?;
    if !e.is_finite() {
        return Err(Error::InvalidParameter {
            name: "E",
            value: e,
            bound: "finite",
        });
    }
    if matches!(kind, GrowthResponse::Hill { .. }) && e < 0.0 {
        return Err(Error::InvalidParameter {
            name: "E",
            value: e,
            bound: "E >= 0 for the Hill response",
        });
    }
    Ok(kind.eval_unchecked(e, r0))
}

/// Scales growth, death and mutation by `response(E)/r0`, with `E` taken
/// from the instantaneous particle state.
#[derive(Debug, Clone, Copy)]
pub struct EntropyModulation {
    pub response: GrowthResponse,
    pub r0: f64,
    /// Added to the normalized entropy, `ln A` for molecule units.
    pub offset: f64,
}

impl RateModulation for EntropyModulation {
    fn factor(&self, s: StateView<'_>) -> f64 {
        match entropy_of(s.volume_weights, s.mass_weights) {
            Ok(e) => self.response.eval_unchecked(e + self.offset, self.r0) / self.r0,
            Err(_) => 1.0,
        }
    }
}

/// Initial supports of the entropy model at `S = 200K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EntropyInitial {
    Ep,
    Hyb,
    Mes,
    EpMes,
    Unif,
}

impl EntropyInitial {
    pub const ALL: [Self; 5] = [Self::Ep, Self::Hyb, Self::Mes, Self::EpMes, Self::Unif];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ep => "ep",
            Self::Hyb => "hyb",
            Self::Mes => "mes",
            Self::EpMes => "ep_mes",
            Self::Unif => "unif",
        }
    }

    /// x-intervals (molecules) whose union is the support.
    pub fn support(self, ra: &ReducedAdvection, s: f64) -> Vec<(f64, f64)> {
        let around = |role: BranchRole| {
            let (lo, hi) = ra.intervals().validity(role);
            let c = ra.branches().get(role).eval(s.clamp(lo, hi));
            ((c - HALF_WIDTH).max(0.0), (c + HALF_WIDTH).min(X_MAX))
        };
        match self {
            Self::Ep => alloc::vec![around(BranchRole::Ep)],
            Self::Hyb => alloc::vec![around(BranchRole::Hyb)],
            Self::Mes => alloc::vec![around(BranchRole::Mes)],
            Self::EpMes => alloc::vec![around(BranchRole::Ep), around(BranchRole::Mes)],
            Self::Unif => alloc::vec![(0.0, X_MAX)],
        }
    }
}

/// Half-width of each initial support around its stable root.
pub const HALF_WIDTH: f64 = 2_000.0;
/// Initial population of every scenario.
pub const INITIAL_CELLS: f64 = 100.0;

/// Parameters of the entropy-coupled model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntropyGrowthModel {
    pub reduced: ReducedAdvection,
    pub s: f64,
    pub response: GrowthResponse,
    pub r0: f64,
    pub eta_x: f64,
    pub capacity: f64,
}

impl EntropyGrowthModel {
    pub fn new(response: GrowthResponse) -> Result<Self> {
        Ok(Self {
            reduced: ReducedAdvection::with_k(0.02)?,
            s: 200_000.0,
            response,
            r0: R0,
            eta_x: 4_000.0,
            capacity: CAPACITY,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.response.validate()?;
        for (name, value) in [
            ("r0", self.r0),
            ("eta_x", self.eta_x),
            ("capacity", self.capacity),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    bound: "positive",
                });
            }
        }
        Ok(())
    }

    /// Particle model on `[0, 1]` (x divided by 25K).
    pub fn population_model(&self) -> Result<PopulationModel> {
        self.validate()?;
        let map = Rescaling::emt_1d();
        let raw = PopulationModel {
            advection: Box::new(ReducedFixedSnail {
                reduced: self.reduced.clone(),
                s: self.s,
            }),
            growth: Box::new(self.r0),
            death: Box::new(self.r0 / self.capacity),
            mutation: Some(MutationKernel::new(alloc::vec![self.eta_x])?),
            modulation: Some(Box::new(EntropyModulation {
                response: self.response,
                r0: self.r0,
                offset: ln(map.scale[0]),
            })),
            domain: Domain::new(alloc::vec![0.0], alloc::vec![X_MAX])?,
        };
        crate::particles::rescale(raw, &map)
    }
}

/// Uniform density of `total` cells on a union of intervals, sampled on an
/// `n`-point grid over `[0, 1]` and normalized to exactly `total` cells.
pub fn initial_ensemble_1d(n: usize, support: &[(f64, f64)], total: f64) -> Result<ParticleEnsemble> {
    let grid = Grid::unit(n, 1)?;
    let inside = |y: &[f64]| {
        let x = y[0] * X_MAX;
        if support.iter().any(|&(a, b)| x >= a && x <= b) {
            1.0
        } else {
            0.0
        }
    };
    let mut e = ParticleEnsemble::on_grid(&grid, inside)?;
    let mass = e.rho();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    e.mass_weights.iter_mut().for_each(|v| *v *= total / mass);
    Ok(e)
}

/// Entropy (molecule units) and `ρ` at every checkpoint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EntropyRun {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub rho: Vec<f64>,
    pub fields: Vec<DensityField>,
}

impl EntropyRun {
    pub fn final_entropy(&self) -> f64 {
        *self.entropy.last().unwrap_or(&f64::NAN)
    }

    pub fn final_rho(&self) -> f64 {
        *self.rho.last().unwrap_or(&f64::NAN)
    }
}

/// Runs the entropy-coupled 1D scheme. The first series entry is the
/// initial state.
pub fn run_entropy_model(
    model: &EntropyGrowthModel,
    initial: &ParticleEnsemble,
    checkpoints: &[f64],
    n: usize,
    bandwidth: &Bandwidth,
    cfg: &IntegratorConfig,
) -> Result<EntropyRun> {
    let m = model.population_model()?;
    let grid = Grid::unit(n, 1)?;
    let offset = ln(X_MAX);
    let mut times = alloc::vec![initial.t];
    let mut ent = alloc::vec![entropy(initial)? + offset];
    let mut rho = alloc::vec![initial.rho()];
    let out = run_schedule_with(&m, initial, &grid, checkpoints, bandwidth, cfg, |f| {
        times.push(f.t);
        ent.push(field_entropy(f)? + offset);
        rho.push(f.rho);
        Ok(())
    })?;
    Ok(EntropyRun {
        times,
        entropy: ent,
        rho,
        fields: out.fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ensemble_has_zero_entropy() {
        let w = alloc::vec![0.1; 10];
        let v = alloc::vec![3.0; 10];
        assert!(entropy_of(&w, &v).unwrap().abs() < 1e-15);
    }

    #[test]
    fn point_mass_entropy_is_log_weight() {
        let n = 50;
        let w = alloc::vec![1.0 / n as f64; n];
        let mut v = alloc::vec![0.0; n];
        v[7] = 2.5;
        let e = entropy_of(&w, &v).unwrap();
        assert!((e + ln(n as f64)).abs() < 1e-12);
    }

    #[test]
    fn entropy_scale_invariant_and_rejects_zero() {
        let w = [0.2, 0.3, 0.5];
        let v = [1.0, 4.0, 2.0];
        let v2: Vec<f64> = v.iter().map(|x| x * 17.0).collect();
        assert!((entropy_of(&w, &v).unwrap() - entropy_of(&w, &v2).unwrap()).abs() < 1e-14);
        assert!(matches!(entropy_of(&w, &[0.0; 3]), Err(Error::ZeroMass)));
    }

    #[test]
    fn responses() {
        let hill = GrowthResponse::Hill { theta: 9.0 };
        assert_eq!(growth_response(0.0, &hill, R0).unwrap(), 0.0182);
        assert!((growth_response(9.0, &hill, R0).unwrap() - 0.0273).abs() < 1e-15);
        assert!((hill.eval_unchecked(1e6, R0) - 2.0 * R0).abs() < 1e-12);
        assert!((growth_response(8.0, &GrowthResponse::Linear, R0).unwrap() - 0.0182).abs() < 1e-15);
        assert!(growth_response(-1.0, &hill, R0).is_err());
        assert!(growth_response(1.0, &GrowthResponse::Hill { theta: 0.0 }, R0).is_err());
        assert_eq!(GrowthResponse::Linear.eval_unchecked(0.0, R0), 0.0);
    }

    #[test]
    fn supports_centre_on_roots() {
        let ra = ReducedAdvection::with_k(0.02).unwrap();
        let roots = ra.roots(200_000.0).unwrap();
        let s = EntropyInitial::Hyb.support(&ra, 200_000.0);
        assert!(((s[0].0 + s[0].1) / 2.0 - roots.as_slice()[2]).abs() < 1e-6);
        assert_eq!(EntropyInitial::EpMes.support(&ra, 200_000.0).len(), 2);
        let e = initial_ensemble_1d(50, &EntropyInitial::Ep.support(&ra, 200_000.0), 100.0).unwrap();
        assert!((e.rho() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn modulation_tracks_entropy() {
        let m = EntropyModulation {
            response: GrowthResponse::Linear,
            r0: R0,
            offset: 0.0,
        };
        let w = [0.25; 4];
        let v = [1.0; 4];
        let f = m.factor(StateView {
            positions: &[0.0; 4],
            volume_weights: &w,
            mass_weights: &v,
        });
        assert_eq!(f, 0.0);
        let m = EntropyModulation { offset: 8.0, ..m };
        let f = m.factor(StateView {
            positions: &[0.0; 4],
            volume_weights: &w,
            mass_weights: &v,
        });
        assert!((f - 1.0).abs() < 1e-15);
    }
}
