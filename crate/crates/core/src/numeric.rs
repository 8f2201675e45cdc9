//! Small numerical kernels shared by the model modules.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// `1 / (1 + e^{-x})` without overflow for large `|x|`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(e^a + e^b)` shifted by the larger exponent.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `base^exponent` for `base` in (0, 1), evaluated in log space.
///
/// Results below `f64::MIN_POSITIVE` are flushed to zero.
#[inline]
pub fn pow_unit(base: f64, exponent: f64) -> f64 {
    debug_assert!(base > 0.0 && base < 1.0);
    let v = (exponent * base.ln()).exp();
    if v < f64::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
///
/// Subdivides the interval with the largest error estimate until the summed
/// error is below `max(abs_tol, rel_tol * |integral|)` or `max_intervals` is
/// reached.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    const MAX_INTERVALS: usize = 2000;
    if a == b {
        return 0.0;
    }
    let (value, error) = gk15(&f, a, b);
    let mut parts = vec![(a, b, value, error)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (worst, _) = parts.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Root of `f` inside a sign-changing bracket `[lo, hi]` by the Illinois
/// variant of regula falsi, falling back to bisection when the secant step
/// stalls. Iterates until the bracket is below `x_tol` wide.
pub fn bracketed_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> f64 {
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    if f_lo == 0.0 {
        return lo;
    }
    if f_hi == 0.0 {
        return hi;
    }
    debug_assert!(f_lo.signum() != f_hi.signum(), "root is not bracketed");
    // -1: last update moved `lo`, +1: moved `hi`.
    let mut side = 0i8;
    for _ in 0..400 {
        if (hi - lo).abs() <= x_tol {
            break;
        }
        let mut x = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        let width = hi - lo;
        if !x.is_finite() || x <= lo + 1e-3 * width || x >= hi - 1e-3 * width {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (lo + hi)
}

/// Sample mean with a two-sided 95% Student-t confidence half-width.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl MeanCi {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, half_width: f64::INFINITY, samples: n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom").inverse_cdf(0.975);
        Self { mean, half_width: t * (var / n as f64).sqrt(), samples: n }
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope estimate.
    pub slope_stderr: f64,
    pub residuals: Vec<f64>,
}

impl LinearFit {
    /// Returns `None` when fewer than three points are given or `x` is constant.
    pub fn fit(x: &[f64], y: &[f64]) -> Option<Self> {
        let n = x.len();
        if n < 3 || n != y.len() {
            return None;
        }
        let nf = n as f64;
        let mx = x.iter().sum::<f64>() / nf;
        let my = y.iter().sum::<f64>() / nf;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        if sxx <= 0.0 {
            return None;
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
        let slope_stderr = (sse / (nf - 2.0) / sxx).sqrt();
        Some(Self { slope, intercept, r_squared, slope_stderr, residuals })
    }
}
