//! One-dimensional reduction of the miR-200/ZEB circuit.
//!
//! At every SNAIL level the reduced field `f_r(·, S)` is piecewise linear in
//! `x`, vanishes on the equilibrium branches valid at `S`, has slope `-k`
//! around stable branches and `+k` around unstable ones. Breakpoints sit at
//! the midpoints between adjacent roots.

use alloc::vec::Vec;

use crate::integrator::{integrate, IntegratorConfig};
use crate::math::abs;
use crate::regulatory::{equilibria, EmtCoreParams, S_MAX, S_MIN};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BranchRole {
    Mes,
    U1,
    Hyb,
    U2,
    Ep,
}

impl BranchRole {
    pub const ALL: [BranchRole; 5] = [Self::Mes, Self::U1, Self::Hyb, Self::U2, Self::Ep];

    pub fn is_stable(self) -> bool {
        matches!(self, Self::Mes | Self::Hyb | Self::Ep)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mes => "mes",
            Self::U1 => "u1",
            Self::Hyb => "hyb",
            Self::U2 => "u2",
            Self::Ep => "ep",
        }
    }
}

/// Degree-5 polynomial in `(S - center) / scale`, coefficients from the
/// highest degree down.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BranchPolynomial {
    pub role: BranchRole,
    pub coeffs: [f64; 6],
    pub center: f64,
    pub scale: f64,
}

impl BranchPolynomial {
    /// Polynomial in raw SNAIL molecules.
    pub fn raw(role: BranchRole, coeffs: [f64; 6]) -> Self {
        Self {
            role,
            coeffs,
            center: 0.0,
            scale: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let u = (s - self.center) / self.scale;
        self.coeffs.iter().fold(0.0, |acc, &c| acc * u + c)
    }
}

/// The five equilibrium branches `mes < u1 < hyb < u2 < ep`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BranchSet {
    pub mes: BranchPolynomial,
    pub u1: BranchPolynomial,
    pub hyb: BranchPolynomial,
    pub u2: BranchPolynomial,
    pub ep: BranchPolynomial,
}

impl BranchSet {
    /// The published fits in raw molecules, seven significant digits.
    pub fn table3() -> Self {
        use BranchRole::*;
        Self {
            mes: BranchPolynomial::raw(
                Mes,
                [-6.109064e-21, 6.846339e-15, -3.065919e-09, 6.859093e-04, -7.668477e+01, 3.430402e+06],
            ),
            u1: BranchPolynomial::raw(
                U1,
                [2.504295e-19, -2.551948e-13, 1.039834e-07, -2.117715e-02, 2.155712e+03, -8.774602e+07],
            ),
            hyb: BranchPolynomial::raw(
                Hyb,
                [-9.979604e-19, 1.044470e-12, -4.372031e-07, 9.149320e-02, -9.572462e+03, 4.005964e+08],
            ),
            u2: BranchPolynomial::raw(
                U2,
                [1.981710e-17, -1.996178e-11, 8.042697e-06, -1.620159e+00, 1.631806e+05, -6.573913e+09],
            ),
            ep: BranchPolynomial::raw(
                Ep,
                [-1.980683e-20, 1.727787e-14, -6.016556e-09, 1.045582e-03, -9.081813e+01, 3.1850617e+06],
            ),
        }
    }

    /// Least-squares fits to the computed equilibria of the default circuit,
    /// as produced by [`fit_branches`] with [`FitOptions::default`].
    pub fn regenerated() -> Self {
        REGENERATED
    }

    pub fn get(&self, role: BranchRole) -> &BranchPolynomial {
        match role {
            BranchRole::Mes => &self.mes,
            BranchRole::U1 => &self.u1,
            BranchRole::Hyb => &self.hyb,
            BranchRole::U2 => &self.u2,
            BranchRole::Ep => &self.ep,
        }
    }

    fn get_mut(&mut self, role: BranchRole) -> &mut BranchPolynomial {
        match role {
            BranchRole::Mes => &mut self.mes,
            BranchRole::U1 => &mut self.u1,
            BranchRole::Hyb => &mut self.hyb,
            BranchRole::U2 => &mut self.u2,
            BranchRole::Ep => &mut self.ep,
        }
    }
}

impl Default for BranchSet {
    fn default() -> Self {
        Self::regenerated()
    }
}

const REGENERATED: BranchSet = BranchSet {
    mes: BranchPolynomial {
        role: BranchRole::Mes,
        coeffs: [
            -280.0742493989489,
            237.86035391439387,
            85.43988380600318,
            62.87274428248809,
            -385.93751397903804,
            1454.7034538833152,
        ],
        center: 217635.270541,
        scale: 32364.729458999995,
    },
    u1: BranchPolynomial {
        role: BranchRole::U1,
        coeffs: [
            728.275843125078,
            251.8873423303589,
            -235.73954427544547,
            24.738922631703492,
            1474.6988749710856,
            4394.742904544985,
        ],
        center: 204959.91983949998,
        scale: 19689.378757499988,
    },
    hyb: BranchPolynomial {
        role: BranchRole::Hyb,
        coeffs: [
            -1016.4533314020927,
            96.98075174175524,
            289.47531900268984,
            189.90348394776646,
            -2518.4193845671402,
            10152.966827640666,
        ],
        center: 208967.9358715,
        scale: 15681.362725499988,
    },
    u2: BranchPolynomial {
        role: BranchRole::U2,
        coeffs: [
            560.4724990863592,
            -126.13563621518516,
            -139.97684742672712,
            -118.1549112613313,
            800.302428254138,
            15884.830023757375,
        ],
        center: 201052.1042085,
        scale: 7765.531062499998,
    },
    ep: BranchPolynomial {
        role: BranchRole::Ep,
        coeffs: [
            -431.650930520131,
            -346.2163442817889,
            178.04456612221134,
            248.07458408891316,
            -3589.478180991156,
            21164.63124736245,
        ],
        center: 179408.8176355,
        scale: 29408.817635500003,
    },
};

/// Multistability regime of the circuit at a SNAIL level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Regime {
    Ep,
    EpMes,
    EpHybMes,
    HybMes,
    Mes,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Self::Ep,
        Self::EpMes,
        Self::EpHybMes,
        Self::HybMes,
        Self::Mes,
    ];

    /// Branches present in this regime, in ascending order of miR-200.
    pub fn roles(self) -> &'static [BranchRole] {
        use BranchRole::*;
        match self {
            Self::Ep => &[Ep],
            Self::EpMes => &[Mes, U1, Ep],
            Self::EpHybMes => &[Mes, U1, Hyb, U2, Ep],
            Self::HybMes => &[Mes, U1, Hyb],
            Self::Mes => &[Mes],
        }
    }

    pub fn stable_count(self) -> usize {
        self.roles().iter().filter(|r| r.is_stable()).count()
    }
}

/// Five contiguous SNAIL intervals covering `[150K, 250K]`, stored as their
/// six endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StabilityIntervals {
    pub bounds: [f64; 6],
}

impl Default for StabilityIntervals {
    fn default() -> Self {
        Self {
            bounds: [
                150_000.0,
                185_270.541082,
                193_286.573146,
                208_817.635271,
                224_649.298597,
                250_000.0,
            ],
        }
    }
}

impl StabilityIntervals {
    pub fn validate(&self) -> Result<()> {
        if self.bounds[0] != S_MIN || self.bounds[5] != S_MAX {
            return Err(Error::InvalidParameter {
                name: "interval bounds",
                value: self.bounds[0],
                bound: "intervals cover [150000, 250000]",
            });
        }
        for w in self.bounds.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter {
                    name: "interval bounds",
                    value: w[1],
                    bound: "strictly increasing endpoints",
                });
            }
        }
        Ok(())
    }

    /// Closed interval of a regime.
    pub fn interval(&self, regime: Regime) -> (f64, f64) {
        let i = Regime::ALL.iter().position(|&r| r == regime).unwrap_or(0);
        (self.bounds[i], self.bounds[i + 1])
    }

    /// Regime at `s`; a shared endpoint belongs to the interval on its right
    /// except for the upper end of the range.
    pub fn regime(&self, s: f64) -> Result<Regime> {
        if !(S_MIN..=S_MAX).contains(&s) {
            return Err(Error::OutOfDomain {
                what: "S",
                value: s,
                lower: S_MIN,
                upper: S_MAX,
            });
        }
        Ok(self.regime_unchecked(s))
    }

    #[inline]
    pub fn regime_unchecked(&self, s: f64) -> Regime {
        for i in 1..5 {
            if s < self.bounds[i] {
                return Regime::ALL[i - 1];
            }
        }
        Regime::Mes
    }

    /// SNAIL range on which a branch is used: the union of the regimes
    /// containing it.
    pub fn validity(&self, role: BranchRole) -> (f64, f64) {
        let b = &self.bounds;
        match role {
            BranchRole::Ep => (b[0], b[3]),
            BranchRole::Mes => (b[1], b[5]),
            BranchRole::U1 => (b[1], b[4]),
            BranchRole::Hyb => (b[2], b[4]),
            BranchRole::U2 => (b[2], b[3]),
        }
    }
}

/// Roots of `f_r(·, S)` in ascending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roots {
    values: [f64; 5],
    roles: [BranchRole; 5],
    len: usize,
}

impl Roots {
    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn roles(&self) -> &[BranchRole] {
        &self.roles[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stable(&self) -> impl Iterator<Item = f64> + '_ {
        self.as_slice()
            .iter()
            .zip(self.roles())
            .filter(|(_, r)| r.is_stable())
            .map(|(v, _)| *v)
    }

    /// Index of the linear segment containing `x`; points on a breakpoint
    /// belong to the segment on their left.
    #[inline]
    fn segment(&self, x: f64) -> usize {
        let v = &self.values;
        for i in 0..self.len - 1 {
            if x <= 0.5 * (v[i] + v[i + 1]) {
                return i;
            }
        }
        self.len - 1
    }
}

/// Piecewise-linear reduced advection `f_r(x, S) = k · f̃_r(x, S)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReducedAdvection {
    branches: BranchSet,
    intervals: StabilityIntervals,
    k: f64,
}

/// Number of SNAIL samples used to check branch ordering.
const ORDER_CHECK_SAMPLES: usize = 2001;

pub fn build_reduced(
    branches: BranchSet,
    intervals: StabilityIntervals,
    k: f64,
) -> Result<ReducedAdvection> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter {
            name: "k",
            value: k,
            bound: "k > 0",
        });
    }
    intervals.validate()?;
    let ra = ReducedAdvection {
        branches,
        intervals,
        k,
    };
    for i in 0..ORDER_CHECK_SAMPLES {
        let s = S_MIN + (S_MAX - S_MIN) * i as f64 / (ORDER_CHECK_SAMPLES - 1) as f64;
        let roots = ra.roots_unchecked(s);
        let v = roots.as_slice();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidBranches {
                s,
                reason: "non-finite branch value".into(),
            });
        }
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidBranches {
                s,
                reason: alloc::format!("branches out of order: {v:?}"),
            });
        }
        for (&x, role) in v.iter().zip(roots.roles()) {
            if role.is_stable() && !(0.0..=X_MAX).contains(&x) {
                return Err(Error::InvalidBranches {
                    s,
                    reason: alloc::format!("stable branch {} = {x} outside [0, 25000]", role.name()),
                });
            }
        }
    }
    Ok(ra)
}

/// Upper end of the reduced state range in molecules.
pub const X_MAX: f64 = 25_000.0;

impl ReducedAdvection {
    /// Regenerated branches, verbatim intervals and the given slope.
    pub fn with_k(k: f64) -> Result<Self> {
        build_reduced(BranchSet::regenerated(), StabilityIntervals::default(), k)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn branches(&self) -> &BranchSet {
        &self.branches
    }

    pub fn intervals(&self) -> &StabilityIntervals {
        &self.intervals
    }

    /// Same construction with a different slope magnitude.
    pub fn rescaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter {
                name: "k",
                value: k,
                bound: "k > 0",
            });
        }
        Ok(Self { k, ..self.clone() })
    }

    pub fn roots(&self, s: f64) -> Result<Roots> {
        self.intervals.regime(s)?;
        Ok(self.roots_unchecked(s))
    }

    /// Roots at `s` clamped into `[150K, 250K]`.
    #[inline]
    pub fn roots_unchecked(&self, s: f64) -> Roots {
        let s = s.clamp(S_MIN, S_MAX);
        let roles = self.intervals.regime_unchecked(s).roles();
        let mut out = Roots {
            values: [0.0; 5],
            roles: [BranchRole::Mes; 5],
            len: roles.len(),
        };
        for (i, &role) in roles.iter().enumerate() {
            out.values[i] = self.branches.get(role).eval(s);
            out.roles[i] = role;
        }
        out
    }

    pub fn eval(&self, x: f64, s: f64) -> Result<f64> {
        self.intervals.regime(s)?;
        Ok(self.eval_unchecked(x, s))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64, s: f64) -> f64 {
        let roots = self.roots_unchecked(s);
        let i = roots.segment(x);
        let slope = if i % 2 == 0 { -self.k } else { self.k };
        slope * (x - roots.values[i])
    }

    /// `∂f_r/∂x`, the left-segment value at breakpoints.
    pub fn divergence(&self, x: f64, s: f64) -> Result<f64> {
        self.intervals.regime(s)?;
        Ok(self.divergence_unchecked(x, s))
    }

    #[inline]
    pub fn divergence_unchecked(&self, x: f64, s: f64) -> f64 {
        let roots = self.roots_unchecked(s);
        if roots.segment(x) % 2 == 0 {
            -self.k
        } else {
            self.k
        }
    }

    /// Value and divergence in one root evaluation.
    #[inline]
    pub fn eval_with_divergence(&self, x: f64, s: f64) -> (f64, f64) {
        let roots = self.roots_unchecked(s);
        let i = roots.segment(x);
        let slope = if i % 2 == 0 { -self.k } else { self.k };
        (slope * (x - roots.values[i]), slope)
    }

    /// Breakpoints of `f_r(·, S)`.
    pub fn breakpoints(&self, s: f64) -> Vec<f64> {
        let r = self.roots_unchecked(s);
        let v = r.as_slice();
        v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn reduced_divergence(x: f64, s: f64, ra: &ReducedAdvection) -> Result<f64> {
    ra.divergence(x, s)
}

/// Settings of the least-squares branch regeneration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// SNAIL samples per branch validity range.
    pub samples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { samples: 201 }
    }
}

/// Computed equilibrium branch value at `s` for `role`, taking the regime
/// from the number of equilibria actually found.
pub fn branch_value(role: BranchRole, s: f64, p: &EmtCoreParams) -> Result<Option<f64>> {
    let eqs = equilibria(s, p)?;
    let roles: &[BranchRole] = match eqs.len() {
        1 if s < 200_000.0 => Regime::Ep.roles(),
        1 => Regime::Mes.roles(),
        3 if s < 200_000.0 => Regime::EpMes.roles(),
        3 => Regime::HybMes.roles(),
        5 => Regime::EpHybMes.roles(),
        _ => return Ok(None),
    };
    Ok(roles.iter().position(|&r| r == role).map(|i| eqs[i].mu))
}

/// Degree-5 least-squares fit of each branch of the circuit over its
/// validity range, in a variable centred and scaled to `[-1, 1]`.
pub fn fit_branches(
    p: &EmtCoreParams,
    intervals: &StabilityIntervals,
    opts: &FitOptions,
) -> Result<BranchSet> {
    if opts.samples < 6 {
        return Err(Error::InvalidParameter {
            name: "samples",
            value: opts.samples as f64,
            bound: "samples >= 6",
        });
    }
    let mut set = BranchSet::table3();
    for role in BranchRole::ALL {
        let (lo, hi) = intervals.validity(role);
        let center = 0.5 * (lo + hi);
        let scale = 0.5 * (hi - lo);
        let mut pts = Vec::with_capacity(opts.samples);
        for i in 0..opts.samples {
            let s = lo + (hi - lo) * i as f64 / (opts.samples - 1) as f64;
            if let Some(mu) = branch_value(role, s, p)? {
                pts.push(((s - center) / scale, mu));
            }
        }
        if pts.len() < 6 {
            return Err(Error::InvalidBranches {
                s: center,
                reason: alloc::format!("too few samples on branch {}", role.name()),
            });
        }
        let coeffs = least_squares_quintic(&pts)?;
        *set.get_mut(role) = BranchPolynomial {
            role,
            coeffs,
            center,
            scale,
        };
    }
    Ok(set)
}

fn least_squares_quintic(pts: &[(f64, f64)]) -> Result<[f64; 6]> {
    // Normal equations in the monomial basis of the scaled variable, solved
    // by Gaussian elimination with partial pivoting.
    let mut a = [[0.0; 7]; 6];
    for &(u, y) in pts {
        let mut pw = [1.0; 6];
        for d in 1..6 {
            pw[d] = pw[d - 1] * u;
        }
        for r in 0..6 {
            for c in 0..6 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][6] += pw[r] * y;
        }
    }
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&i, &j| abs(a[i][col]).total_cmp(&abs(a[j][col])))
            .unwrap_or(col);
        if a[piv][col] == 0.0 {
            return Err(Error::InvalidBranches {
                s: f64::NAN,
                reason: "singular least-squares system".into(),
            });
        }
        a.swap(col, piv);
        for r in col + 1..6 {
            let f = a[r][col] / a[col][col];
            for c in col..7 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0; 6];
    for r in (0..6).rev() {
        let mut acc = a[r][6];
        for c in r + 1..6 {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    // Ascending powers to highest-degree-first.
    let mut out = [0.0; 6];
    for d in 0..6 {
        out[5 - d] = x[d];
    }
    Ok(out)
}

/// Initial conditions, SNAIL levels and sample times of the calibration
/// discrepancy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationGrid {
    pub s_values: Vec<f64>,
    pub x0_values: Vec<f64>,
    pub z0_values: Vec<f64>,
    pub times: Vec<f64>,
}

impl CalibrationGrid {
    /// `S_j = 150K + j·100K/N_S`, `x0_k = k·25K/N_x`, `Z0_l = l·800K/N_Z`
    /// for indices `1..=N`, and `t_i = i·T/N_T` for `i = 1..=N_T`.
    pub fn regular(n_s: usize, n_x: usize, n_z: usize, n_t: usize, horizon: f64) -> Result<Self> {
        for (name, n) in [("n_s", n_s), ("n_x", n_x), ("n_z", n_z), ("n_t", n_t)] {
            if n == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    value: 0.0,
                    bound: "sample count >= 1",
                });
            }
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                value: horizon,
                bound: "horizon > 0",
            });
        }
        let axis = |n: usize, lo: f64, span: f64| -> Vec<f64> {
            (1..=n).map(|j| lo + j as f64 * span / n as f64).collect()
        };
        Ok(Self {
            s_values: axis(n_s, S_MIN, S_MAX - S_MIN),
            x0_values: axis(n_x, 0.0, X_MAX),
            z0_values: axis(n_z, 0.0, 800_000.0),
            times: axis(n_t, 0.0, horizon),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.s_values.is_empty()
            || self.x0_values.is_empty()
            || self.z0_values.is_empty()
            || self.times.is_empty()
        {
            return Err(Error::Empty("calibration grid"));
        }
        for &s in &self.s_values {
            if !(S_MIN..=S_MAX).contains(&s) {
                return Err(Error::OutOfDomain {
                    what: "calibration S",
                    value: s,
                    lower: S_MIN,
                    upper: S_MAX,
                });
            }
        }
        if !(self.times[0] > 0.0) || self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                name: "calibration times",
                value: self.times[0],
                bound: "positive and strictly increasing",
            });
        }
        Ok(())
    }
}

/// Mean absolute discrepancy for every candidate slope.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationReport {
    pub candidates: Vec<f64>,
    pub discrepancies: Vec<f64>,
    pub best_k: f64,
}

/// Sampled miR-200 trajectories of the full circuit, indexed
/// `[s][x0][z0][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTrajectories {
    grid: CalibrationGrid,
    values: Vec<f64>,
}

impl FullTrajectories {
    pub fn compute(
        grid: &CalibrationGrid,
        p: &EmtCoreParams,
        cfg: &IntegratorConfig,
    ) -> Result<Self> {
        grid.validate()?;
        p.validate()?;
        let nt = grid.times.len();
        let mut values = Vec::with_capacity(
            grid.s_values.len() * grid.x0_values.len() * grid.z0_values.len() * nt,
        );
        for &s in &grid.s_values {
            for &x0 in &grid.x0_values {
                for &z0 in &grid.z0_values {
                    let traj = integrate(
                        |_, y, dy| {
                            let f = p.rhs(y[0], y[1], s);
                            dy[0] = f[0];
                            dy[1] = f[1];
                            Ok(())
                        },
                        &[x0, z0],
                        (0.0, grid.times[nt - 1]),
                        &grid.times,
                        cfg,
                    )
                    .map_err(|e| Error::Calibration {
                        s,
                        x0,
                        z0,
                        source: alloc::boxed::Box::new(e),
                    })?;
                    values.extend(traj.states.iter().map(|st| st[0]));
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &CalibrationGrid {
        &self.grid
    }

    /// Mean of `|x(t_i, S_j, x0_k) - μ(t_i, S_j, x0_k, Z0_l)|` over the grid.
    pub fn discrepancy(&self, ra: &ReducedAdvection, cfg: &IntegratorConfig) -> Result<f64> {
        let g = &self.grid;
        let nt = g.times.len();
        let nz = g.z0_values.len();
        let mut total = 0.0;
        let mut idx = 0;
        for &s in &g.s_values {
            for &x0 in &g.x0_values {
                let traj = integrate(
                    |_, y, dy| {
                        dy[0] = ra.eval_unchecked(y[0], s);
                        Ok(())
                    },
                    &[x0],
                    (0.0, g.times[nt - 1]),
                    &g.times,
                    cfg,
                )
                .map_err(|e| Error::Calibration {
                    s,
                    x0,
                    z0: f64::NAN,
                    source: alloc::boxed::Box::new(e),
                })?;
                for _ in 0..nz {
                    for (i, st) in traj.states.iter().enumerate() {
                        total += abs(st[0] - self.values[idx + i]);
                    }
                    idx += nt;
                }
            }
        }
        Ok(total / self.values.len() as f64)
    }
}

/// Grid search for the slope `k` minimising the discrepancy between reduced
/// and full trajectories. Ties keep the first candidate.
pub fn calibrate_k(
    candidates: &[f64],
    grid: &CalibrationGrid,
    base: &ReducedAdvection,
    p: &EmtCoreParams,
    cfg: &IntegratorConfig,
) -> Result<CalibrationReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let full = FullTrajectories::compute(grid, p, cfg)?;
    calibrate_against(candidates, &full, base, cfg)
}

/// [`calibrate_k`] against precomputed full trajectories.
pub fn calibrate_against(
    candidates: &[f64],
    full: &FullTrajectories,
    base: &ReducedAdvection,
    cfg: &IntegratorConfig,
) -> Result<CalibrationReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let mut discrepancies = Vec::with_capacity(candidates.len());
    for &k in candidates {
        discrepancies.push(full.discrepancy(&base.rescaled(k)?, cfg)?);
    }
    let mut best = 0;
    for (i, d) in discrepancies.iter().enumerate() {
        if *d < discrepancies[best] {
            best = i;
        }
    }
    Ok(CalibrationReport {
        candidates: candidates.to_vec(),
        discrepancies,
        best_k: candidates[best],
    })
}
