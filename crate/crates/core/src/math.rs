//! Scalar helpers over `libm`, so the crate stays `no_std`.

pub use core::f64::consts::{LN_2, PI};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    let mut base = x;
    let mut n = n;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Standard normal density.
#[inline]
pub fn gaussian(x: f64) -> f64 {
    exp(-0.5 * x * x) / sqrt(2.0 * PI)
}

/// Normal density with standard deviation `sigma`, i.e. `G(x / sigma) / sigma`.
#[inline]
pub fn scaled_gaussian(x: f64, sigma: f64) -> f64 {
    gaussian(x / sigma) / sigma
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], spacing: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            spacing * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 0), 1.0);
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(6, 6), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
    }

    #[test]
    fn integer_powers_match_pow() {
        for n in 0..8 {
            assert!((powi(1.7, n) - powf(1.7, f64::from(n))).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_integrates_to_one() {
        let h = 1e-3;
        let vals: alloc::vec::Vec<f64> = (0..=16000)
            .map(|i| scaled_gaussian(-8.0 + h * i as f64, 0.7))
            .collect();
        assert!((trapezoid(&vals, h) - 1.0).abs() < 1e-9);
    }
}
