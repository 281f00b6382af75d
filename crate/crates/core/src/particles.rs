//! Weighted-particle discretisation of the advection-selection-mutation
//! equation
//!
//! ```text
//! ∂t u + ∇·(f u) = (r - d ρ) u + ∫ M(y, z) u(z) dz - (∫ M(z, y) dz) u(y)
//! ```
//!
//! Each particle carries a position `y_i`, a volume weight `w_i` and a mass
//! weight `v_i`:
//!
//! ```text
//! y_i' = f(y_i)
//! w_i' = (∇·f)(y_i) w_i
//! v_i' = (r(y_i) - d(y_i) Σ_j v_j) v_i + w_i Σ_j M(y_i, y_j) v_j - v_i Σ_j w_j M(y_j, y_i)
//! ```
//!
//! The loss term carries the quadrature weight `w_j`, so the two mutation
//! sums cancel exactly in `Σ v_i`. Periodically the particles are smoothed
//! onto a fixed grid with a Gaussian kernel and re-seeded from that field.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::integrator::{integrate_observed, IntegratorConfig};
use crate::math::{exp, powf, powi, sqrt, PI};
use crate::reduction::ReducedAdvection;
use crate::regulatory::{EmtCoreParams, SnailDynamics, SnailSchedule};
use crate::{Error, Result};

/// A vector field over phenotype space.
pub trait Advection: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(t, y)` into `out` and returns `(∇·f)(t, y)`.
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> f64;
}

/// A per-capita rate over phenotype space (growth or death).
pub trait Rate: Send + Sync {
    fn rate(&self, y: &[f64]) -> f64;
}

impl Rate for f64 {
    fn rate(&self, _: &[f64]) -> f64 {
        *self
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Rate for F {
    fn rate(&self, y: &[f64]) -> f64 {
        self(y)
    }
}

/// Read-only view of the particle state passed to a [`RateModulation`].
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub positions: &'a [f64],
    pub volume_weights: &'a [f64],
    pub mass_weights: &'a [f64],
}

/// A population-level factor multiplying growth, death and mutation rates,
/// re-evaluated at every right-hand-side evaluation.
pub trait RateModulation: Send + Sync {
    fn factor(&self, state: StateView<'_>) -> f64;
}

/// Division-linked mutation: `M(y, z) = r(z) Π_k G((y_k - z_k)/η_k)/η_k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MutationKernel {
    /// Standard deviation along each axis, in the model's coordinates.
    pub eta: Vec<f64>,
    /// Optional truncation radius in standard deviations.
    pub cutoff: Option<f64>,
}

impl MutationKernel {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        let k = Self { eta, cutoff: None };
        k.validate()?;
        Ok(k)
    }

    pub fn with_cutoff(mut self, sigmas: f64) -> Result<Self> {
        if !(sigmas > 0.0) {
            return Err(Error::InvalidParameter {
                name: "cutoff",
                value: sigmas,
                bound: "cutoff > 0",
            });
        }
        self.cutoff = Some(sigmas);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.is_empty() {
            return Err(Error::Empty("mutation eta"));
        }
        for &e in &self.eta {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "eta",
                    value: e,
                    bound: "eta > 0",
                });
            }
        }
        Ok(())
    }

    /// Transition density `P(dy)`, ignoring the cutoff.
    pub fn density(&self, dy: &[f64]) -> f64 {
        let mut q = 0.0;
        let mut norm = 1.0;
        for (d, e) in dy.iter().zip(&self.eta) {
            q += (d / e) * (d / e);
            norm *= sqrt(2.0 * PI) * e;
        }
        exp(-0.5 * q) / norm
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Empty("domain"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(u > l) {
                return Err(Error::InvalidParameter {
                    name: "domain",
                    value: *u,
                    bound: "upper > lower on every axis",
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn measure(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }
}

/// Advection, growth, death and mutation on a box.
pub struct PopulationModel {
    pub advection: Box<dyn Advection>,
    pub growth: Box<dyn Rate>,
    pub death: Box<dyn Rate>,
    pub mutation: Option<MutationKernel>,
    pub modulation: Option<Box<dyn RateModulation>>,
    pub domain: Domain,
}

/// Default competition death rate per cell per hour.
pub const DEFAULT_DEATH: f64 = 1.82e-7;
/// Default growth rate per hour.
pub const DEFAULT_GROWTH: f64 = 0.0182;

impl PopulationModel {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.advection.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: self.advection.dim(),
            });
        }
        if let Some(k) = &self.mutation {
            k.validate()?;
            if k.eta.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    found: k.eta.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-axis affine map `x = scale·y + offset` from `[0, 1]^d` onto the raw
/// phenotype box.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rescaling {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Rescaling {
    /// `(x, S) ∈ [0, 25K] × [150K, 250K]`: `A = 25K, B = 0, C = 100K, D = 150K`.
    pub fn emt() -> Self {
        Self {
            scale: vec![25_000.0, 100_000.0],
            offset: vec![0.0, 150_000.0],
        }
    }

    /// `x ∈ [0, 25K]`.
    pub fn emt_1d() -> Self {
        Self {
            scale: vec![25_000.0],
            offset: vec![0.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn raw_domain(&self) -> Domain {
        Domain {
            lower: self.offset.clone(),
            upper: self
                .offset
                .iter()
                .zip(&self.scale)
                .map(|(o, s)| o + s)
                .collect(),
        }
    }

    /// Jacobian `Π scale_k` of the map.
    pub fn jacobian(&self) -> f64 {
        self.scale.iter().product()
    }

    pub fn to_raw(&self, y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = self.scale[k] * y[k] + self.offset[k];
        }
    }

    pub fn to_normalized(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = (x[k] - self.offset[k]) / self.scale[k];
        }
    }

    /// Density per unit normalized volume from density per raw volume.
    pub fn density_to_normalized(&self, u: f64) -> f64 {
        u * self.jacobian()
    }
}

struct RescaledAdvection {
    inner: Box<dyn Advection>,
    map: Rescaling,
}

impl Advection for RescaledAdvection {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> f64 {
        let mut x = [0.0; MAX_DIM];
        let d = self.dim();
        self.map.to_raw(y, &mut x[..d]);
        let div = self.inner.eval(t, &x[..d], out);
        for k in 0..d {
            out[k] /= self.map.scale[k];
        }
        // Axis-wise scaling leaves the divergence unchanged.
        div
    }
}

struct RescaledRate {
    inner: Box<dyn Rate>,
    map: Rescaling,
}

impl Rate for RescaledRate {
    fn rate(&self, y: &[f64]) -> f64 {
        let mut x = [0.0; MAX_DIM];
        let d = self.map.dim();
        self.map.to_raw(y, &mut x[..d]);
        self.inner.rate(&x[..d])
    }
}

const MAX_DIM: usize = 4;

/// Moves a model from its raw box onto `[0, 1]^d`. Rates and `ρ` are
/// unchanged; kernel widths shrink by the axis scales.
pub fn rescale(model: PopulationModel, map: &Rescaling) -> Result<PopulationModel> {
    model.validate()?;
    if map.dim() != model.dim() || map.dim() > MAX_DIM {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: map.dim(),
        });
    }
    let raw = map.raw_domain();
    for k in 0..map.dim() {
        let tol = 1e-9 * map.scale[k];
        if (raw.lower[k] - model.domain.lower[k]).abs() > tol
            || (raw.upper[k] - model.domain.upper[k]).abs() > tol
        {
            return Err(Error::InvalidParameter {
                name: "rescaling",
                value: model.domain.lower[k],
                bound: "model domain equals the rescaling box",
            });
        }
    }
    let mutation = match model.mutation {
        Some(k) => Some(MutationKernel {
            eta: k.eta.iter().zip(&map.scale).map(|(e, s)| e / s).collect(),
            cutoff: k.cutoff,
        }),
        None => None,
    };
    Ok(PopulationModel {
        advection: Box::new(RescaledAdvection {
            inner: model.advection,
            map: map.clone(),
        }),
        growth: Box::new(RescaledRate {
            inner: model.growth,
            map: map.clone(),
        }),
        death: Box::new(RescaledRate {
            inner: model.death,
            map: map.clone(),
        }),
        mutation,
        modulation: model.modulation,
        domain: Domain::unit(map.dim()),
    })
}

/// Regular grid of `n` cells per axis; nodes are the cell centres.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    pub n: usize,
    pub domain: Domain,
}

impl Grid {
    pub fn new(n: usize, domain: Domain) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "N",
                value: 0.0,
                bound: "N >= 1",
            });
        }
        Ok(Self { n, domain })
    }

    pub fn unit(n: usize, dim: usize) -> Result<Self> {
        Self::new(n, Domain::unit(dim))
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        powi(self.n as f64, self.dim() as u32) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.domain.measure() / self.len() as f64
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.domain.upper[axis] - self.domain.lower[axis]) / self.n as f64
    }

    /// Coordinates of node `index`; the first axis varies slowest.
    pub fn node(&self, index: usize, out: &mut [f64]) {
        let d = self.dim();
        let mut rem = index;
        for k in (0..d).rev() {
            let i = rem % self.n;
            rem /= self.n;
            out[k] = self.domain.lower[k] + (i as f64 + 0.5) * self.spacing(k);
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for i in 0..self.len() {
            self.node(i, &mut out[i * d..(i + 1) * d]);
        }
        out
    }
}

/// Particle positions, volume weights and mass weights at time `t`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub volume_weights: Vec<f64>,
    pub mass_weights: Vec<f64>,
    pub t: f64,
}

impl ParticleEnsemble {
    /// Particles on the grid nodes with `w_i` = cell volume and
    /// `v_i = u0(y_i) w_i`.
    pub fn on_grid<F: Fn(&[f64]) -> f64>(grid: &Grid, u0: F) -> Result<Self> {
        let d = grid.dim();
        let positions = grid.nodes();
        let w = grid.cell_volume();
        let mut mass_weights = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let u = u0(&positions[i * d..(i + 1) * d]);
            if !(u >= 0.0) || !u.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "initial density",
                    value: u,
                    bound: "finite and non-negative",
                });
            }
            mass_weights.push(u * w);
        }
        Ok(Self {
            dim: d,
            positions,
            volume_weights: vec![w; grid.len()],
            mass_weights,
            t: 0.0,
        })
    }

    pub fn from_parts(
        dim: usize,
        positions: Vec<f64>,
        volume_weights: Vec<f64>,
        mass_weights: Vec<f64>,
        t: f64,
    ) -> Result<Self> {
        let n = volume_weights.len();
        if positions.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                found: positions.len(),
            });
        }
        if mass_weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mass_weights.len(),
            });
        }
        if let Some(index) = volume_weights.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "volume weight",
                value: volume_weights[index],
                bound: "w_i > 0",
            });
        }
        if let Some(index) = mass_weights.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::NegativeMass {
                index,
                t,
                value: mass_weights[index],
            });
        }
        Ok(Self {
            dim,
            positions,
            volume_weights,
            mass_weights,
            t,
        })
    }

    pub fn len(&self) -> usize {
        self.volume_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume_weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Total mass `ρ = Σ v_i`.
    pub fn rho(&self) -> f64 {
        self.mass_weights.iter().sum()
    }

    pub fn view(&self) -> StateView<'_> {
        StateView {
            positions: &self.positions,
            volume_weights: &self.volume_weights,
            mass_weights: &self.mass_weights,
        }
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.positions.len() + 2 * self.len());
        y.extend_from_slice(&self.positions);
        y.extend_from_slice(&self.volume_weights);
        y.extend_from_slice(&self.mass_weights);
        y
    }

    fn unpack(&mut self, y: &[f64], t: f64) {
        let np = self.positions.len();
        let n = self.len();
        self.positions.copy_from_slice(&y[..np]);
        self.volume_weights.copy_from_slice(&y[np..np + n]);
        self.mass_weights.copy_from_slice(&y[np + n..np + 2 * n]);
        self.t = t;
    }
}

/// Time derivatives of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDerivative {
    pub positions: Vec<f64>,
    pub volume_weights: Vec<f64>,
    pub mass_weights: Vec<f64>,
}

/// Scratch buffers reused across right-hand-side evaluations.
struct Workspace {
    growth: Vec<f64>,
    death: Vec<f64>,
    gain: Vec<f64>,
    loss: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            growth: vec![0.0; n],
            death: vec![0.0; n],
            gain: vec![0.0; n],
            loss: vec![0.0; n],
        }
    }
}

/// Packed right-hand side over `[positions | w | v]`.
fn packed_rhs(
    m: &PopulationModel,
    dim: usize,
    n: usize,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    let np = n * dim;
    let (pos, rest) = y.split_at(np);
    let (w, v) = rest.split_at(n);
    let (dpos, drest) = dy.split_at_mut(np);
    let (dw, dv) = drest.split_at_mut(n);

    let factor = match &m.modulation {
        Some(md) => md.factor(StateView {
            positions: pos,
            volume_weights: w,
            mass_weights: v,
        }),
        None => 1.0,
    };
    if !factor.is_finite() {
        return Err(Error::NonFinite { index: 0, t });
    }
    let rho: f64 = v.iter().sum();

    for i in 0..n {
        let yi = &pos[i * dim..(i + 1) * dim];
        let div = m.advection.eval(t, yi, &mut dpos[i * dim..(i + 1) * dim]);
        dw[i] = div * w[i];
        ws.growth[i] = factor * m.growth.rate(yi);
        ws.death[i] = factor * m.death.rate(yi);
        ws.gain[i] = 0.0;
        ws.loss[i] = 0.0;
    }

    if let Some(kernel) = &m.mutation {
        let mut inv2 = [0.0; MAX_DIM];
        let mut norm = 1.0;
        for k in 0..dim {
            inv2[k] = 0.5 / (kernel.eta[k] * kernel.eta[k]);
            norm *= sqrt(2.0 * PI) * kernel.eta[k];
        }
        let norm = 1.0 / norm;
        let cut = kernel.cutoff.map(|c| 0.5 * c * c);
        for i in 0..n {
            let yi = &pos[i * dim..(i + 1) * dim];
            // The kernel is symmetric in its argument, so each pair is
            // evaluated once and credited to both particles.
            let self_p = norm;
            ws.gain[i] += self_p * ws.growth[i] * v[i];
            ws.loss[i] += self_p * w[i];
            for j in i + 1..n {
                let yj = &pos[j * dim..(j + 1) * dim];
                let mut q = 0.0;
                for k in 0..dim {
                    let d = yi[k] - yj[k];
                    q += d * d * inv2[k];
                }
                if let Some(c) = cut {
                    if q > c {
                        continue;
                    }
                }
                let p = norm * exp(-q);
                ws.gain[i] += p * ws.growth[j] * v[j];
                ws.gain[j] += p * ws.growth[i] * v[i];
                ws.loss[i] += p * w[j];
                ws.loss[j] += p * w[i];
            }
        }
    }

    for i in 0..n {
        let mut rate = ws.growth[i] - ws.death[i] * rho;
        if m.mutation.is_some() {
            rate -= ws.loss[i] * ws.growth[i];
        }
        dv[i] = rate * v[i] + w[i] * ws.gain[i];
    }
    if let Some(index) = dy.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            index: particle_of(index, dim, n),
            t,
        });
    }
    Ok(())
}

fn particle_of(index: usize, dim: usize, n: usize) -> usize {
    let np = n * dim;
    if index < np {
        index / dim
    } else {
        (index - np) % n
    }
}

/// Exact right-hand side of the particle system.
pub fn particle_rhs(e: &ParticleEnsemble, m: &PopulationModel) -> Result<ParticleDerivative> {
    check_compatible(e, m)?;
    let n = e.len();
    let y = e.pack();
    let mut dy = vec![0.0; y.len()];
    let mut ws = Workspace::new(n);
    packed_rhs(m, e.dim, n, e.t, &y, &mut dy, &mut ws)?;
    let np = n * e.dim;
    Ok(ParticleDerivative {
        positions: dy[..np].to_vec(),
        volume_weights: dy[np..np + n].to_vec(),
        mass_weights: dy[np + n..].to_vec(),
    })
}

fn check_compatible(e: &ParticleEnsemble, m: &PopulationModel) -> Result<()> {
    m.validate()?;
    if e.dim != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: e.dim,
        });
    }
    if e.dim > MAX_DIM {
        return Err(Error::DimensionMismatch {
            expected: MAX_DIM,
            found: e.dim,
        });
    }
    Ok(())
}


/// Integrates the particle system from `e.t` to `t_end`.
pub fn simulate_window(
    e: &ParticleEnsemble,
    m: &PopulationModel,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<ParticleEnsemble> {
    check_compatible(e, m)?;
    if t_end == e.t {
        return Ok(e.clone());
    }
    if !(t_end > e.t) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            value: t_end,
            bound: "t_end >= ensemble time",
        });
    }
    let n = e.len();
    let dim = e.dim;
    let np = n * dim;
    let mut ws = Workspace::new(n);
    let y0 = e.pack();
    let traj = integrate_observed(
        |t, y, dy| packed_rhs(m, dim, n, t, y, dy, &mut ws),
        &y0,
        (e.t, t_end),
        &[],
        cfg,
        |t, y| {
            let v = &y[np + n..];
            let vmax = v.iter().fold(0.0f64, |a, &b| a.max(b));
            let floor = -(cfg.atol + cfg.rtol * vmax);
            match v.iter().position(|&x| x < floor) {
                Some(index) => Err(Error::NegativeMass {
                    index,
                    t,
                    value: v[index],
                }),
                None => Ok(()),
            }
        },
    )?;
    let mut out = e.clone();
    out.unpack(&traj.final_state, traj.final_time);
    // Clear round-off undershoot below zero.
    for v in &mut out.mass_weights {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Ensemble snapshots at the given times, without regularisation.
pub fn trace(
    e: &ParticleEnsemble,
    m: &PopulationModel,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<ParticleEnsemble>> {
    let mut cur = e.clone();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        cur = simulate_window(&cur, m, t, cfg)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Choice of the regularisation bandwidth `ε` for an `N`-per-axis grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields))]
pub enum Bandwidth {
    /// `ε = (1/N^d)^γ`, the total particle count raised to `-γ`.
    Total { gamma: f64 },
    /// `ε = (1/N)^γ`, the per-axis spacing raised to `γ`.
    PerAxis { gamma: f64 },
    Fixed { epsilon: f64 },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self::PerAxis { gamma: 0.99 }
    }
}

impl Bandwidth {
    pub fn epsilon(&self, n: usize, dim: usize) -> Result<f64> {
        let eps = match *self {
            Self::Total { gamma } => {
                check_gamma(gamma)?;
                powf(1.0 / powi(n as f64, dim as u32), gamma)
            }
            Self::PerAxis { gamma } => {
                check_gamma(gamma)?;
                powf(1.0 / n as f64, gamma)
            }
            Self::Fixed { epsilon } => epsilon,
        };
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: eps,
                bound: "epsilon > 0",
            });
        }
        Ok(eps)
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Self::Total { gamma } | Self::PerAxis { gamma } => Some(gamma),
            Self::Fixed { .. } => None,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.5 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
            bound: "gamma in (0.5, 1)",
        })
    }
}

/// `ε = (1/N^d)^γ`.
pub fn epsilon(n: usize, dim: usize, gamma: f64) -> Result<f64> {
    Bandwidth::Total { gamma }.epsilon(n, dim)
}

/// Regularised density sampled on grid nodes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Grid quadrature of the field.
    pub rho: f64,
    /// `Σ v_i` of the ensemble the field was built from.
    pub particle_mass: f64,
    pub epsilon: f64,
    pub t: f64,
}

impl DensityField {
    /// Relative mass lost to the kernel tails, `1 - ρ_field / ρ_particles`.
    pub fn leakage(&self) -> f64 {
        if self.particle_mass == 0.0 {
            0.0
        } else {
            1.0 - self.rho / self.particle_mass
        }
    }

    /// Marginal density along `axis`, integrated over the other axes.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let d = self.grid.dim();
        let n = self.grid.n;
        let mut out = vec![0.0; n];
        let other: f64 = self.grid.cell_volume() / self.grid.spacing(axis);
        let stride = powi(n as f64, (d - 1 - axis) as u32) as usize;
        for (idx, &u) in self.values.iter().enumerate() {
            out[(idx / stride) % n] += u * other;
        }
        out
    }
}

/// Gaussian smoothing `u(y) = Σ v_i G_ε(y - y_i)` evaluated on `grid`.
pub fn regularize(e: &ParticleEnsemble, grid: &Grid, eps: f64) -> Result<DensityField> {
    if grid.dim() != e.dim {
        return Err(Error::DimensionMismatch {
            expected: e.dim,
            found: grid.dim(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: eps,
            bound: "epsilon > 0",
        });
    }
    let d = e.dim;
    let nodes = grid.nodes();
    let norm = 1.0 / powi(sqrt(2.0 * PI) * eps, d as u32);
    let inv2 = 0.5 / (eps * eps);
    let mut values = vec![0.0; grid.len()];
    for (g, val) in values.iter_mut().enumerate() {
        let yg = &nodes[g * d..(g + 1) * d];
        let mut acc = 0.0;
        for i in 0..e.len() {
            let vi = e.mass_weights[i];
            if vi == 0.0 {
                continue;
            }
            let yi = e.position(i);
            let mut q = 0.0;
            for k in 0..d {
                let dd = yg[k] - yi[k];
                q += dd * dd;
            }
            acc += vi * exp(-q * inv2);
        }
        *val = acc * norm;
    }
    let rho = values.iter().sum::<f64>() * grid.cell_volume();
    Ok(DensityField {
        grid: grid.clone(),
        values,
        rho,
        particle_mass: e.rho(),
        epsilon: eps,
        t: e.t,
    })
}

/// Fresh ensemble on the grid nodes of a field, with the mass clamped away
/// from any negative samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub ensemble: ParticleEnsemble,
    pub clamped_mass: f64,
}

pub fn restart_from_field(d: &DensityField) -> Restart {
    let w = d.grid.cell_volume();
    let mut clamped_mass = 0.0;
    let mass_weights = d
        .values
        .iter()
        .map(|&u| {
            if u < 0.0 || !u.is_finite() {
                clamped_mass += if u.is_finite() { -u * w } else { 0.0 };
                0.0
            } else {
                u * w
            }
        })
        .collect();
    Restart {
        ensemble: ParticleEnsemble {
            dim: d.grid.dim(),
            positions: d.grid.nodes(),
            volume_weights: vec![w; d.grid.len()],
            mass_weights,
            t: d.t,
        },
        clamped_mass,
    }
}

/// Fields after each checkpoint, with the total clamped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutput {
    pub fields: Vec<DensityField>,
    pub clamped_mass: f64,
}

/// Alternates integration windows with regularisation and restart at every
/// checkpoint.
pub fn run_schedule(
    m: &PopulationModel,
    initial: &ParticleEnsemble,
    grid: &Grid,
    checkpoints: &[f64],
    bandwidth: &Bandwidth,
    cfg: &IntegratorConfig,
) -> Result<ScheduleOutput> {
    run_schedule_with(m, initial, grid, checkpoints, bandwidth, cfg, |_| Ok(()))
}

/// [`run_schedule`] calling `on_field` after every checkpoint.
pub fn run_schedule_with<F>(
    m: &PopulationModel,
    initial: &ParticleEnsemble,
    grid: &Grid,
    checkpoints: &[f64],
    bandwidth: &Bandwidth,
    cfg: &IntegratorConfig,
    mut on_field: F,
) -> Result<ScheduleOutput>
where
    F: FnMut(&DensityField) -> Result<()>,
{
    if checkpoints.is_empty() {
        return Err(Error::Empty("checkpoints"));
    }
    let mut prev = initial.t;
    for &c in checkpoints {
        if !(c > prev) {
            return Err(Error::InvalidParameter {
                name: "checkpoint",
                value: c,
                bound: "strictly increasing and after the initial time",
            });
        }
        prev = c;
    }
    let eps = bandwidth.epsilon(grid.n, grid.dim())?;
    let mut ens = initial.clone();
    let mut fields = Vec::with_capacity(checkpoints.len());
    let mut clamped_mass = 0.0;
    for &c in checkpoints {
        let moved = simulate_window(&ens, m, c, cfg)?;
        let field = regularize(&moved, grid, eps)?;
        let restart = restart_from_field(&field);
        clamped_mass += restart.clamped_mass;
        ens = restart.ensemble;
        on_field(&field)?;
        fields.push(field);
    }
    Ok(ScheduleOutput {
        fields,
        clamped_mass,
    })
}

/// Zero field of a given dimension.
pub struct NoAdvection(pub usize);

impl Advection for NoAdvection {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, _: f64, _: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        0.0
    }
}

/// `(x, S) ↦ (f_r(x, S), δ (1 - S/S0))` in raw molecules.
#[derive(Debug, Clone)]
pub struct ReducedSnailAdvection {
    pub reduced: ReducedAdvection,
    pub snail: SnailDynamics,
}

impl Advection for ReducedSnailAdvection {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _: f64, y: &[f64], out: &mut [f64]) -> f64 {
        let (fx, dx) = self.reduced.eval_with_divergence(y[0], y[1]);
        out[0] = fx;
        out[1] = self.snail.rhs(y[1]);
        dx - self.snail.delta() / self.snail.s0()
    }
}

/// `x ↦ f_r(x, S)` at a fixed SNAIL level.
#[derive(Debug, Clone)]
pub struct ReducedFixedSnail {
    pub reduced: ReducedAdvection,
    pub s: f64,
}

impl Advection for ReducedFixedSnail {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _: f64, y: &[f64], out: &mut [f64]) -> f64 {
        let (fx, dx) = self.reduced.eval_with_divergence(y[0], self.s);
        out[0] = fx;
        dx
    }
}

/// `(μ200, Z, S)` with the core circuit and SNAIL following the slope of a
/// schedule.
#[derive(Debug, Clone)]
pub struct CircuitScheduleAdvection {
    pub core: EmtCoreParams,
    pub schedule: SnailSchedule,
}

impl Advection for CircuitScheduleAdvection {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> f64 {
        let [a, b] = self.core.rhs(y[0], y[1], y[2]);
        out[0] = a;
        out[1] = b;
        out[2] = self.schedule.slope_unchecked(t);
        let j = crate::regulatory::jacobian(y[0], y[1], y[2], &self.core);
        j[0][0] + j[1][1]
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    fn ensemble(n: usize, masses: &[f64]) -> ParticleEnsemble {
        let g = Grid::unit(n, 2).unwrap();
        let mut e = ParticleEnsemble::on_grid(&g, |_| 1.0).unwrap();
        for (v, m) in e.mass_weights.iter_mut().zip(masses) {
            *v = *m;
        }
        e
    }

    fn model(r: f64, d: f64) -> PopulationModel {
        PopulationModel {
            advection: Box::new(NoAdvection(2)),
            growth: Box::new(r),
            death: Box::new(d),
            mutation: None,
            modulation: None,
            domain: Domain::unit(2),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mutation_is_mass_neutral(
            masses in vec(0.0f64..10.0, 64),
            eta_x in 0.01f64..0.5,
            eta_s in 0.01f64..0.5,
            r in 0.001f64..0.05,
        ) {
            let e = ensemble(8, &masses);
            let mut m = model(0.0, 0.0);
            m.growth = Box::new(move |y: &[f64]| r * (1.0 + y[0]));
            m.mutation = Some(MutationKernel::new(vec![eta_x, eta_s]).unwrap());
            let with: f64 = particle_rhs(&e, &m).unwrap().mass_weights.iter().sum();
            m.mutation = None;
            let without: f64 = particle_rhs(&e, &m).unwrap().mass_weights.iter().sum();
            let scale = e.rho() * 2.0 * r + 1e-300;
            prop_assert!((with - without).abs() <= 1e-12 * scale);
        }

        #[test]
        fn regularized_field_is_nonnegative(
            masses in vec(0.0f64..10.0, 64),
            eps in 0.01f64..0.2,
        ) {
            prop_assume!(masses.iter().any(|&v| v > 0.0));
            let e = ensemble(8, &masses);
            let g = Grid::unit(12, 2).unwrap();
            let d = regularize(&e, &g, eps).unwrap();
            prop_assert!(d.values.iter().all(|&u| u >= 0.0 && u.is_finite()));
            prop_assert!(d.rho > 0.0);
        }

        #[test]
        fn logistic_mass_stays_below_cap(
            masses in vec(0.0f64..10.0, 16),
            r in 0.005f64..0.05,
            cap in 50.0f64..1e4,
            t in 1.0f64..500.0,
        ) {
            let e = ensemble(4, &masses);
            let m = model(r, r / cap);
            let out = simulate_window(&e, &m, t, &IntegratorConfig::default()).unwrap();
            let bound = e.rho().max(cap);
            prop_assert!(out.rho() <= bound * (1.0 + 1e-6), "{} > {}", out.rho(), bound);
            prop_assert!(out.mass_weights.iter().all(|&v| v >= 0.0));
        }
    }
}
