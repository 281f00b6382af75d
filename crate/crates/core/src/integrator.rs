//! Adaptive Dormand-Prince 5(4) integration with PI step-size control.
//!
//! Steps are shortened so that every requested output time is hit exactly;
//! no interpolation is performed. Integration may run backwards in time when
//! `t_span.1 < t_span.0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, powf, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on |h| in hours. `None` leaves the step unbounded.
    pub max_step: Option<f64>,
    /// Initial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Record every accepted step in addition to the requested output times.
    pub dense_output: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            max_step: None,
            initial_step: None,
            max_steps: 1_000_000,
            dense_output: false,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rtol",
                value: self.rtol,
                bound: "rtol > 0",
            });
        }
        if !(self.atol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "atol",
                value: self.atol,
                bound: "atol > 0",
            });
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "max_step",
                    value: h,
                    bound: "max_step > 0",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// States sampled at the requested output times (plus every accepted step
/// when dense output is on), and the state at the end of the span.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub stats: Stats,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrates `rhs` over `t_span`, sampling the state at `outputs`.
///
/// `rhs(t, y, dy)` writes the derivative into `dy`. Output times must lie in
/// the span and be monotone in the direction of integration.
pub fn integrate<F>(
    rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    outputs: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_observed(rhs, y0, t_span, outputs, cfg, |_, _| Ok(()))
}

/// Like [`integrate`], calling `observer(t, y)` after every accepted step.
/// An error from the observer aborts the integration.
pub fn integrate_observed<F, O>(
    mut rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    outputs: &[f64],
    cfg: &IntegratorConfig,
    mut observer: O,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]) -> Result<()>,
{
    cfg.validate()?;
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(Error::InvalidParameter {
            name: "t_span",
            value: t1 - t0,
            bound: "finite, non-degenerate span",
        });
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let lo = t0.min(t1);
    let hi = t0.max(t1);
    for (i, &t) in outputs.iter().enumerate() {
        if t < lo || t > hi {
            return Err(Error::OutOfDomain {
                what: "output time",
                value: t,
                lower: lo,
                upper: hi,
            });
        }
        if i > 0 && (t - outputs[i - 1]) * dir < 0.0 {
            return Err(Error::InvalidParameter {
                name: "output times",
                value: t,
                bound: "monotone in the direction of integration",
            });
        }
    }

    let n = y0.len();
    let mut stats = Stats::default();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut next_out = 0usize;
    while next_out < outputs.len() && outputs[next_out] == t0 {
        times.push(t0);
        states.push(y0.to_vec());
        next_out += 1;
    }

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    rhs(t, &y, &mut k1)?;
    stats.evaluations += 1;
    check_finite(&k1, t)?;

    let hmax = cfg.max_step.unwrap_or(f64::INFINITY).min(hi - lo);
    let mut h = match cfg.initial_step {
        Some(h) => abs(h).min(hmax),
        None => {
            let h = initial_step(&mut rhs, t, &y, &k1, dir, hmax, cfg, &mut ytmp, &mut k2)?;
            stats.evaluations += 1;
            h
        }
    };
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::TooManySteps {
                t,
                max_steps: cfg.max_steps,
                state: y,
            });
        }
        if h < 16.0 * f64::EPSILON * abs(t).max(1.0) {
            return Err(Error::StepSizeUnderflow { t, step: h, state: y });
        }

        // Land exactly on the next output time or the end of the span.
        let target = if next_out < outputs.len() {
            outputs[next_out]
        } else {
            t1
        };
        let mut step = h.min(hmax);
        let mut snapped = false;
        if step >= abs(target - t) * (1.0 - 1e-12) {
            step = abs(target - t);
            snapped = true;
        }
        let hs = dir * step;

        for i in 0..n {
            ytmp[i] = y[i] + hs * A21 * k1[i];
        }
        rhs(t + C2 * hs, &ytmp, &mut k2)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * hs, &ytmp, &mut k3)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * hs, &ytmp, &mut k4)?;
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * hs, &ytmp, &mut k5)?;
        for i in 0..n {
            ytmp[i] = y[i]
                + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if snapped { target } else { t + hs };
        rhs(t + hs, &ytmp, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + hs, &ynew, &mut k7)?;
        stats.evaluations += 6;

        let mut sum = 0.0;
        for i in 0..n {
            let e = hs
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = cfg.atol + cfg.rtol * abs(y[i]).max(abs(ynew[i]));
            sum += (e / sk) * (e / sk);
        }
        let err = if n == 0 { 0.0 } else { sqrt(sum / n as f64) };

        if err.is_finite() && err <= 1.0 && k7.iter().all(|v| v.is_finite()) {
            stats.accepted += 1;
            let fac11 = powf(err.max(1e-300), EXPO1);
            let fac = (fac11 / powf(facold, BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_next = step / fac;
            if last_rejected {
                h_next = h_next.min(step);
            }
            facold = err.max(1e-4);
            last_rejected = false;

            core::mem::swap(&mut y, &mut ynew);
            core::mem::swap(&mut k1, &mut k7);
            t = t_new;
            observer(t, &y)?;

            if snapped && next_out < outputs.len() {
                // Several output times may coincide.
                while next_out < outputs.len() && outputs[next_out] == target {
                    times.push(t);
                    states.push(y.clone());
                    next_out += 1;
                }
                // A snapped step says nothing about the natural step length.
                h = h.max(h_next);
            } else {
                if cfg.dense_output {
                    times.push(t);
                    states.push(y.clone());
                }
                h = h_next;
            }
        } else {
            stats.rejected += 1;
            let fac11 = if err.is_finite() {
                powf(err, EXPO1)
            } else {
                1.0 / FAC_MIN
            };
            h = step / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }

    Ok(Trajectory {
        times,
        states,
        final_time: t,
        final_state: y,
        stats,
    })
}

fn check_finite(dy: &[f64], t: f64) -> Result<()> {
    match dy.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, t }),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    hmax: f64,
    cfg: &IntegratorConfig,
    ytmp: &mut [f64],
    f1: &mut [f64],
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len().max(1) as f64;
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..y.len() {
        let sk = cfg.atol + cfg.rtol * abs(y[i]);
        dnf += (f0[i] / sk) * (f0[i] / sk);
        dny += (y[i] / sk) * (y[i] / sk);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        sqrt(dny / dnf) * 0.01
    };
    h = h.min(hmax);
    for i in 0..y.len() {
        ytmp[i] = y[i] + dir * h * f0[i];
    }
    rhs(t + dir * h, ytmp, f1)?;
    let mut der2 = 0.0;
    for i in 0..y.len() {
        let sk = cfg.atol + cfg.rtol * abs(y[i]);
        let d = (f1[i] - f0[i]) / sk;
        der2 += d * d;
    }
    let der2 = sqrt(der2 / n) / h;
    let der12 = der2.max(sqrt(dnf / n));
    let h1 = if der12 <= 1e-15 {
        (1e-6f64).max(h * 1e-3)
    } else {
        powf(0.01 / der12, 0.2)
    };
    Ok((100.0 * h).min(h1).min(hmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{exp, ln};

    fn decay(_: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    #[test]
    fn exponential_decay_to_one() {
        let cfg = IntegratorConfig::with_tolerances(1e-9, 1e-12);
        let traj = integrate(decay, &[1.0], (0.0, 1.0), &[1.0], &cfg).unwrap();
        assert_eq!(traj.times, vec![1.0]);
        assert!((traj.states[0][0] - exp(-1.0)).abs() < 1e-8);
    }

    #[test]
    fn hits_requested_times_exactly() {
        let outs = [0.0, 0.1, 0.25, 0.25, 0.9, 2.0];
        let traj = integrate(
            decay,
            &[1.0],
            (0.0, 2.0),
            &outs,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.times, outs.to_vec());
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s[0] - exp(-t)).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_integration() {
        let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
        let traj = integrate(decay, &[exp(-2.0)], (2.0, 0.0), &[1.0], &cfg).unwrap();
        assert!((traj.states[0][0] - exp(-1.0)).abs() < 1e-8);
        assert!((traj.final_state[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_config_and_span() {
        let bad = IntegratorConfig::with_tolerances(0.0, 1e-9);
        assert!(integrate(decay, &[1.0], (0.0, 1.0), &[], &bad).is_err());
        let cfg = IntegratorConfig::default();
        assert!(integrate(decay, &[1.0], (1.0, 1.0), &[], &cfg).is_err());
        assert!(integrate(decay, &[1.0], (0.0, 1.0), &[2.0], &cfg).is_err());
        assert!(integrate(decay, &[1.0], (0.0, 1.0), &[0.5, 0.2], &cfg).is_err());
    }

    #[test]
    fn blowup_reports_underflow_with_last_state() {
        // y' = y^2 from y(0) = 1 blows up at t = 1.
        let cfg = IntegratorConfig::default();
        let err = integrate(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            &[1.0],
            (0.0, 2.0),
            &[],
            &cfg,
        )
        .unwrap_err();
        match err {
            Error::StepSizeUnderflow { t, state, .. } => {
                assert!(t > 0.99 && t < 1.01, "{t} {state:?}");
                assert!(state[0] > 1e3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rhs_errors_propagate() {
        let err = integrate(
            |_, _, _| Err(Error::NonFinite { index: 3, t: 0.0 }),
            &[1.0],
            (0.0, 1.0),
            &[],
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 3, t: 0.0 });
    }

    #[test]
    fn dense_output_records_steps() {
        let cfg = IntegratorConfig {
            dense_output: true,
            ..IntegratorConfig::default()
        };
        let traj = integrate(decay, &[1.0], (0.0, 5.0), &[], &cfg).unwrap();
        assert_eq!(traj.times.len(), traj.stats.accepted);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn max_step_is_respected() {
        let cfg = IntegratorConfig {
            max_step: Some(0.1),
            dense_output: true,
            ..IntegratorConfig::default()
        };
        let traj = integrate(decay, &[1.0], (0.0, 1.0), &[], &cfg).unwrap();
        let mut prev = 0.0;
        for &t in &traj.times {
            assert!(t - prev <= 0.1 + 1e-12);
            prev = t;
        }
    }

    #[test]
    fn logistic_closed_form() {
        let (r, k) = (0.5, 10.0);
        let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
        let traj = integrate(
            |_, y, dy| {
                dy[0] = r * y[0] * (1.0 - y[0] / k);
                Ok(())
            },
            &[0.1],
            (0.0, 20.0),
            &[20.0],
            &cfg,
        )
        .unwrap();
        let exact = k / (1.0 + (k / 0.1 - 1.0) * exp(-r * 20.0));
        assert!((traj.states[0][0] - exact).abs() < 1e-7);
        assert!(ln(exact).is_finite());
    }
}
