//! EMT regulatory network: the miR-200/ZEB core circuit driven by SNAIL, its
//! epigenetic extension, SNAIL relaxation, SNAIL input schedules and the
//! equilibrium structure (bifurcation diagram) of the core circuit.
//!
//! All molecule counts are raw molecules, rates are per hour.

use alloc::vec::Vec;

use crate::math::{abs, powi, LN_2};
use crate::{Error, Result};

/// Shifted Hill regulation `(1 + λ (x/x0)^n) / (1 + (x/x0)^n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct HillParams {
    pub lambda: f64,
    pub x0: f64,
    pub n: u32,
}

impl HillParams {
    pub fn new(lambda: f64, x0: f64, n: u32) -> Result<Self> {
        let p = Self { lambda, x0, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::InvalidParameter {
                name: "hill.x0",
                value: self.x0,
                bound: "x0 > 0",
            });
        }
        if self.n < 1 {
            return Err(Error::InvalidParameter {
                name: "hill.n",
                value: self.n as f64,
                bound: "n >= 1",
            });
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "hill.lambda",
                value: self.lambda,
                bound: "lambda >= 0",
            });
        }
        Ok(())
    }

    /// Evaluates with threshold `x0` replaced by `threshold`. No input checks.
    #[inline]
    pub fn eval_with_threshold(&self, x: f64, threshold: f64) -> f64 {
        let r = powi(x / threshold, self.n);
        if r.is_infinite() {
            return self.lambda;
        }
        (1.0 + self.lambda * r) / (1.0 + r)
    }

    /// Evaluates without input checks.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_threshold(x, self.x0)
    }
}

/// Checked shifted Hill function.
pub fn shifted_hill(x: f64, p: &HillParams) -> Result<f64> {
    non_negative("x", x)?;
    Ok(p.eval(x))
}

/// Coefficients of the binomial translation sums `L`, `Y_μ`, `Y_m`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TranslationTables {
    pub l: [f64; 7],
    pub gamma_m: [f64; 6],
    pub gamma_mu: [f64; 6],
    pub mu0: f64,
    pub n: u32,
}

impl Default for TranslationTables {
    fn default() -> Self {
        Self {
            l: [1.0, 0.6, 0.3, 0.1, 0.05, 0.05, 0.05],
            gamma_m: [0.04, 0.2, 1.0, 1.0, 1.0, 1.0],
            gamma_mu: [0.005, 0.05, 0.5, 0.5, 0.5, 0.5],
            mu0: 10_000.0,
            n: 6,
        }
    }
}

impl TranslationTables {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .l
            .iter()
            .chain(self.gamma_m.iter())
            .chain(self.gamma_mu.iter());
        for &c in all {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "translation coefficient",
                    value: c,
                    bound: "coefficients >= 0",
                });
            }
        }
        if !(self.mu0 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu0",
                value: self.mu0,
                bound: "mu0 > 0",
            });
        }
        if self.n != 6 {
            return Err(Error::InvalidParameter {
                name: "translation n",
                value: self.n as f64,
                bound: "n = 6",
            });
        }
        Ok(())
    }

    /// Evaluates the three sums without input checks.
    #[inline]
    pub fn eval(&self, mu: f64) -> Translation {
        const C6: [f64; 7] = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
        let u = mu / self.mu0;
        let denom = powi(1.0 + u, self.n);
        let mut ui = 1.0;
        let mut l = 0.0;
        let mut y_mu = 0.0;
        let mut y_m = 0.0;
        for i in 0..7 {
            let m = C6[i] * ui / denom;
            l += self.l[i] * m;
            if i > 0 {
                y_mu += i as f64 * self.gamma_mu[i - 1] * m;
                y_m += self.gamma_m[i - 1] * m;
            }
            ui *= u;
        }
        Translation { l, y_mu, y_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Translation {
    pub l: f64,
    pub y_mu: f64,
    pub y_m: f64,
}

impl Translation {
    /// `P(μ) = L / (Y_m + k_mZ)`.
    pub fn p(&self, k_mz: f64) -> f64 {
        self.l / (self.y_m + k_mz)
    }

    /// `Q(μ) = Y_μ / (Y_m + k_mZ)`.
    pub fn q(&self, k_mz: f64) -> f64 {
        self.y_mu / (self.y_m + k_mz)
    }
}

pub fn translation_functions(mu: f64, t: &TranslationTables) -> Result<Translation> {
    non_negative("mu200", mu)?;
    Ok(t.eval(mu))
}

/// Parameters of the two-dimensional miR-200/ZEB circuit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EmtCoreParams {
    pub g_mu200: f64,
    pub g_mz: f64,
    pub g_z: f64,
    pub k_mu200: f64,
    pub k_z: f64,
    pub k_mz: f64,
    pub hill_z_mu200: HillParams,
    pub hill_s_mu200: HillParams,
    pub hill_z_mz: HillParams,
    pub hill_s_mz: HillParams,
    pub tables: TranslationTables,
}

impl Default for EmtCoreParams {
    fn default() -> Self {
        Self {
            g_mu200: 2_100.0,
            g_mz: 11.0,
            g_z: 100.0,
            k_mu200: 0.05,
            k_z: 0.1,
            k_mz: 0.5,
            hill_z_mu200: HillParams {
                lambda: 0.1,
                x0: 220_000.0,
                n: 3,
            },
            hill_s_mu200: HillParams {
                lambda: 0.1,
                x0: 180_000.0,
                n: 2,
            },
            hill_z_mz: HillParams {
                lambda: 7.5,
                x0: 25_000.0,
                n: 2,
            },
            hill_s_mz: HillParams {
                lambda: 10.0,
                x0: 180_000.0,
                n: 2,
            },
            tables: TranslationTables::default(),
        }
    }
}

impl EmtCoreParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("g_mu200", self.g_mu200),
            ("g_mz", self.g_mz),
            ("g_z", self.g_z),
            ("k_mu200", self.k_mu200),
            ("k_z", self.k_z),
            ("k_mz", self.k_mz),
        ];
        for (name, value) in rates {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    bound: "rate > 0",
                });
            }
        }
        self.hill_z_mu200.validate()?;
        self.hill_s_mu200.validate()?;
        self.hill_z_mz.validate()?;
        self.hill_s_mz.validate()?;
        self.tables.validate()
    }

    /// Vector field with the ZEB threshold of miR-200 inhibition set to
    /// `z_threshold`. Negative inputs are clamped to zero.
    #[inline]
    pub fn field(&self, mu: f64, z: f64, s: f64, z_threshold: f64) -> [f64; 2] {
        let mu = mu.max(0.0);
        let z = z.max(0.0);
        let s = s.max(0.0);
        let tr = self.tables.eval(mu);
        let mz = self.g_mz * self.hill_z_mz.eval(z) * self.hill_s_mz.eval(s);
        let dmu = self.g_mu200
            * self.hill_z_mu200.eval_with_threshold(z, z_threshold)
            * self.hill_s_mu200.eval(s)
            - mz * tr.q(self.k_mz)
            - self.k_mu200 * mu;
        let dz = self.g_z * mz * tr.p(self.k_mz) - self.k_z * z;
        [dmu, dz]
    }

    /// Unchecked core vector field.
    #[inline]
    pub fn rhs(&self, mu: f64, z: f64, s: f64) -> [f64; 2] {
        self.field(mu, z, s, self.hill_z_mu200.x0)
    }
}

/// `(dμ200/dt, dZ/dt)` of the core circuit.
pub fn emt_core_rhs(mu: f64, z: f64, s: f64, p: &EmtCoreParams) -> Result<[f64; 2]> {
    non_negative("mu200", mu)?;
    non_negative("Z", z)?;
    non_negative("S", s)?;
    Ok(p.rhs(mu, z, s))
}

/// Core circuit plus a slowly adapting ZEB threshold `Z0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EpigeneticParams {
    pub core: EmtCoreParams,
    pub alpha_epi: f64,
    pub beta_up: f64,
    pub beta_down: f64,
    pub z0_baseline: f64,
}

impl Default for EpigeneticParams {
    fn default() -> Self {
        let core = EmtCoreParams::default();
        let z0_baseline = core.hill_z_mu200.x0;
        Self {
            core,
            alpha_epi: 0.15,
            beta_up: 240.0,
            beta_down: 720.0,
            z0_baseline,
        }
    }
}

impl EpigeneticParams {
    pub fn validate(&self) -> Result<()> {
        self.core.validate()?;
        if !(0.0..1.0).contains(&self.alpha_epi) {
            return Err(Error::InvalidParameter {
                name: "alpha_epi",
                value: self.alpha_epi,
                bound: "0 <= alpha_epi < 1",
            });
        }
        for (name, value) in [("beta_up", self.beta_up), ("beta_down", self.beta_down)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    bound: "beta > 0",
                });
            }
        }
        if !(self.z0_baseline > 0.0) {
            return Err(Error::InvalidParameter {
                name: "z0_baseline",
                value: self.z0_baseline,
                bound: "z0_baseline > 0",
            });
        }
        Ok(())
    }

    /// Unchecked vector field over `(μ200, Z, Z0)`.
    #[inline]
    pub fn rhs(&self, mu: f64, z: f64, z0: f64, s: f64, snail_increasing: bool) -> [f64; 3] {
        // A vanishing threshold would make the Hill ratio singular.
        let [dmu, dz] = self.core.field(mu, z, s, z0.max(1e-9));
        let beta = if snail_increasing {
            self.beta_up
        } else {
            self.beta_down
        };
        let dz0 = (self.z0_baseline - z0 - self.alpha_epi * z.max(0.0)) / beta;
        [dmu, dz, dz0]
    }
}

/// `(dμ200/dt, dZ/dt, dZ0/dt)` of the epigenetic circuit.
pub fn epigenetic_rhs(
    mu: f64,
    z: f64,
    z0: f64,
    s: f64,
    p: &EpigeneticParams,
    snail_increasing: bool,
) -> Result<[f64; 3]> {
    non_negative("mu200", mu)?;
    non_negative("Z", z)?;
    non_negative("Z0", z0)?;
    non_negative("S", s)?;
    if z0 == 0.0 {
        return Err(Error::InvalidParameter {
            name: "Z0",
            value: z0,
            bound: "Z0 > 0",
        });
    }
    Ok(p.rhs(mu, z, z0, s, snail_increasing))
}

/// Relaxation of SNAIL towards its mean `s0`: `dS/dt = δ (1 - S/s0)`,
/// `δ = s0 ln 2 / alpha_relax`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SnailDynamics {
    s0: f64,
    alpha_relax: f64,
    delta: f64,
}

pub const S_MIN: f64 = 150_000.0;
pub const S_MAX: f64 = 250_000.0;

impl SnailDynamics {
    pub fn new(s0: f64, alpha_relax: f64) -> Result<Self> {
        if !(S_MIN..=S_MAX).contains(&s0) {
            return Err(Error::OutOfDomain {
                what: "s0",
                value: s0,
                lower: S_MIN,
                upper: S_MAX,
            });
        }
        if !(alpha_relax > 0.0) || !alpha_relax.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha_relax",
                value: alpha_relax,
                bound: "alpha_relax > 0",
            });
        }
        Ok(Self {
            s0,
            alpha_relax,
            delta: s0 * LN_2 / alpha_relax,
        })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn alpha_relax(&self) -> f64 {
        self.alpha_relax
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn rhs(&self, s: f64) -> f64 {
        self.delta * (1.0 - s / self.s0)
    }

    /// Closed-form solution: the distance to `s0` halves every `alpha_relax` hours.
    pub fn solution(&self, s_init: f64, t: f64) -> f64 {
        self.s0 - (self.s0 - s_init) * crate::math::powf(2.0, -t / self.alpha_relax)
    }
}

pub fn snail_rhs(s: f64, d: &SnailDynamics) -> Result<f64> {
    non_negative("S", s)?;
    Ok(d.rhs(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleKind {
    Hysteresis,
    ShortInduction,
    LongInduction,
}

/// Piecewise-linear SNAIL input over time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")
)]
pub struct SnailSchedule {
    points: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for SnailSchedule {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<SnailSchedule> for Vec<(f64, f64)> {
    fn from(s: SnailSchedule) -> Self {
        s.points
    }
}

impl SnailSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Empty("schedule breakpoints"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter {
                    name: "schedule time",
                    value: w[1].0,
                    bound: "strictly increasing breakpoint times",
                });
            }
        }
        if points.iter().any(|p| !(p.1 >= 0.0) || !p.0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "schedule value",
                value: f64::NAN,
                bound: "finite times and non-negative values",
            });
        }
        Ok(Self { points })
    }

    pub fn preset(kind: ScheduleKind) -> Self {
        let points = match kind {
            ScheduleKind::Hysteresis => {
                alloc::vec![(0.0, 160_000.0), (5_000.0, 240_000.0), (10_000.0, 160_000.0)]
            }
            ScheduleKind::ShortInduction => {
                alloc::vec![(0.0, 100_000.0), (1_200.0, 240_000.0), (2_400.0, 100_000.0)]
            }
            ScheduleKind::LongInduction => alloc::vec![
                (0.0, 100_000.0),
                (1_200.0, 240_000.0),
                (2_400.0, 240_000.0),
                (3_600.0, 100_000.0)
            ],
        };
        Self { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn breakpoint_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    fn check(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&t) {
            return Err(Error::OutOfDomain {
                what: "schedule time",
                value: t,
                lower: lo,
                upper: hi,
            });
        }
        Ok(())
    }

    /// Index of the segment containing `t`; breakpoints belong to the segment
    /// on their right except for the final one.
    fn segment(&self, t: f64) -> usize {
        let last = self.points.len() - 2;
        (0..=last)
            .find(|&i| t < self.points[i + 1].0)
            .unwrap_or(last)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.value_unchecked(t))
    }

    #[inline]
    pub fn value_unchecked(&self, t: f64) -> f64 {
        let t = t.clamp(self.domain().0, self.domain().1);
        let i = self.segment(t);
        let (t0, s0) = self.points[i];
        let (t1, s1) = self.points[i + 1];
        s0 + (s1 - s0) * (t - t0) / (t1 - t0)
    }

    /// Right derivative, except at the final breakpoint (left derivative).
    pub fn slope(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.slope_unchecked(t))
    }

    #[inline]
    pub fn slope_unchecked(&self, t: f64) -> f64 {
        let i = self.segment(t.clamp(self.domain().0, self.domain().1));
        let (t0, s0) = self.points[i];
        let (t1, s1) = self.points[i + 1];
        (s1 - s0) / (t1 - t0)
    }

    /// SNAIL is non-decreasing at `t`; a flat segment counts as non-decreasing.
    pub fn is_non_decreasing(&self, t: f64) -> bool {
        self.slope_unchecked(t) >= 0.0
    }
}

pub fn snail_schedule(kind: ScheduleKind, t: f64) -> Result<f64> {
    SnailSchedule::preset(kind).value(t)
}

/// A steady state of the core circuit at fixed SNAIL.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Equilibrium {
    pub mu: f64,
    pub z: f64,
    pub stable: bool,
}

/// Options for the nullcline root scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSearch {
    pub mu_max: f64,
    pub samples: usize,
}

impl Default for EquilibriumSearch {
    fn default() -> Self {
        Self {
            mu_max: 25_000.0,
            samples: 500,
        }
    }
}

/// ZEB level on the ZEB nullcline at the given miR-200 and SNAIL levels,
/// with the miR-200 inhibition threshold fixed at its default.
pub fn zeb_nullcline(mu: f64, s: f64, p: &EmtCoreParams) -> f64 {
    let tr = p.tables.eval(mu.max(0.0));
    let drive = p.g_z * p.g_mz * p.hill_s_mz.eval(s) * tr.p(p.k_mz);
    let g = |z: f64| drive * p.hill_z_mz.eval(z) - p.k_z * z;
    let mut lo = 0.0;
    let mut hi = drive * p.hill_z_mz.lambda.max(1.0) / p.k_z;
    if g(hi) > 0.0 {
        hi *= 2.0;
    }
    bisect(g, &mut lo, &mut hi, 1e-13);
    0.5 * (lo + hi)
}

fn bisect<G: Fn(f64) -> f64>(g: G, lo: &mut f64, hi: &mut f64, rel: f64) {
    let glo = g(*lo);
    for _ in 0..200 {
        let mid = 0.5 * (*lo + *hi);
        if (*hi - *lo) <= rel * abs(mid).max(1.0) {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            *lo = mid;
            *hi = mid;
            break;
        }
        if (gm > 0.0) == (glo > 0.0) {
            *lo = mid;
        } else {
            *hi = mid;
        }
    }
}

/// Central finite-difference Jacobian of the core field.
pub fn jacobian(mu: f64, z: f64, s: f64, p: &EmtCoreParams) -> [[f64; 2]; 2] {
    let hm = 1e-4 * abs(mu).max(1.0);
    let hz = 1e-4 * abs(z).max(1.0);
    let fp = p.rhs(mu + hm, z, s);
    let fm = p.rhs((mu - hm).max(0.0), z, s);
    let dm = mu + hm - (mu - hm).max(0.0);
    let gp = p.rhs(mu, z + hz, s);
    let gm = p.rhs(mu, (z - hz).max(0.0), s);
    let dz = z + hz - (z - hz).max(0.0);
    [
        [(fp[0] - fm[0]) / dm, (gp[0] - gm[0]) / dz],
        [(fp[1] - fm[1]) / dm, (gp[1] - gm[1]) / dz],
    ]
}

/// Both eigenvalues of a real 2×2 matrix have negative real part.
pub fn is_stable(j: &[[f64; 2]; 2]) -> bool {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    det > 0.0 && tr < 0.0
}

/// All equilibria at SNAIL level `s`, sorted by ascending miR-200.
pub fn equilibria(s: f64, p: &EmtCoreParams) -> Result<Vec<Equilibrium>> {
    equilibria_with(s, p, &EquilibriumSearch::default())
}

pub fn equilibria_with(
    s: f64,
    p: &EmtCoreParams,
    search: &EquilibriumSearch,
) -> Result<Vec<Equilibrium>> {
    non_negative("S", s)?;
    if search.samples < 2 || !(search.mu_max > 0.0) {
        return Err(Error::InvalidParameter {
            name: "equilibrium search",
            value: search.samples as f64,
            bound: "samples >= 2 and mu_max > 0",
        });
    }
    let h = |mu: f64| p.rhs(mu, zeb_nullcline(mu, s, p), s)[0];
    // miR-200 production is positive at μ = 0; extend the window until the
    // reduced field turns negative so that every root is bracketed.
    let mut mu_max = search.mu_max;
    while h(mu_max) > 0.0 {
        mu_max *= 2.0;
        if mu_max > 1e9 {
            return Err(Error::InvalidBranches {
                s,
                reason: "miR-200 production never balanced".into(),
            });
        }
    }
    let n = search.samples;
    let step = mu_max / (n - 1) as f64;
    let mut out = Vec::new();
    let mut prev_mu = 0.0;
    let mut prev = h(0.0);
    for i in 1..n {
        let mu = step * i as f64;
        let cur = h(mu);
        if cur == 0.0 || (prev > 0.0) != (cur > 0.0) {
            let (mut lo, mut hi) = (prev_mu, mu);
            if cur == 0.0 {
                lo = mu;
                hi = mu;
            } else {
                bisect(h, &mut lo, &mut hi, 1e-14);
            }
            let mut root = 0.5 * (lo + hi);
            // Newton polish, kept inside the bracket.
            for _ in 0..3 {
                let d = 1e-6 * root.max(1.0);
                let slope = (h(root + d) - h(root - d)) / (2.0 * d);
                if slope == 0.0 || !slope.is_finite() {
                    break;
                }
                let next = root - h(root) / slope;
                if next >= prev_mu && next <= mu {
                    root = next;
                } else {
                    break;
                }
            }
            let z = zeb_nullcline(root, s, p);
            let stable = is_stable(&jacobian(root, z, s, p));
            if out
                .last()
                .map_or(true, |e: &Equilibrium| abs(e.mu - root) > 1e-9 * root.max(1.0))
            {
                out.push(Equilibrium {
                    mu: root,
                    z,
                    stable,
                });
            }
        }
        prev_mu = mu;
        prev = cur;
    }
    Ok(out)
}

/// Equilibria at one SNAIL level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BifurcationPoint {
    pub s: f64,
    pub equilibria: Vec<Equilibrium>,
}

impl BifurcationPoint {
    pub fn stable_count(&self) -> usize {
        self.equilibria.iter().filter(|e| e.stable).count()
    }
}

pub fn bifurcation_scan(s_values: &[f64], p: &EmtCoreParams) -> Result<Vec<BifurcationPoint>> {
    p.validate()?;
    s_values
        .iter()
        .map(|&s| {
            Ok(BifurcationPoint {
                s,
                equilibria: equilibria(s, p)?,
            })
        })
        .collect()
}

fn non_negative(what: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            what,
            value: v,
            lower: 0.0,
            upper: f64::INFINITY,
        })
    }
}
