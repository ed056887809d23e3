//! Special functions used by the estimators: digamma, log-gamma, the
//! regularized lower incomplete gamma function and chi-square quantiles.

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{function}: argument {value} outside domain ({expected})")]
    Domain {
        function: &'static str,
        value: f64,
        expected: &'static str,
    },
}

fn domain<T: Real>(function: &'static str, value: T, expected: &'static str) -> NumericsError {
    NumericsError::Domain {
        function,
        value: value.to_f64().unwrap_or(f64::NAN),
        expected,
    }
}

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// Tail of the asymptotic expansion of `ln x - ψ(x) - 1/(2x)`, valid for x ≥ 10.
fn digamma_tail<T: Real>(x: T) -> T {
    let r = (x * x).recip();
    // Bernoulli terms B_2k / (2k x^2k), k = 1..7, evaluated by Horner.
    let coeffs = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ];
    let mut acc = T::zero();
    for &c in coeffs.iter().rev() {
        acc = acc * r + T::lit(c);
    }
    acc * r
}

/// Digamma function ψ(x) for x > 0.
pub fn digamma<T: Real>(x: T) -> Result<T, NumericsError> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(domain("digamma", x, "x > 0"));
    }
    let mut shift = T::zero();
    let mut z = x;
    let threshold = T::lit(ASYMPTOTIC_THRESHOLD);
    while z < threshold {
        shift += z.recip();
        z += T::one();
    }
    Ok(z.ln() - T::lit(0.5) / z - digamma_tail(z) - shift)
}

/// `ln x - ψ(x)` for x > 0, evaluated without cancellation for large x.
///
/// This is the quantity that appears in the Grassberger correction
/// `φ(n) = n (ln n - ψ(n))`, which tends to 1/2 as n grows.
pub fn ln_minus_digamma<T: Real>(x: T) -> Result<T, NumericsError> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(domain("ln_minus_digamma", x, "x > 0"));
    }
    if x >= T::lit(ASYMPTOTIC_THRESHOLD) {
        Ok(T::lit(0.5) / x + digamma_tail(x))
    } else {
        Ok(x.ln() - digamma(x)?)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma_lanczos<T: Real>(x: T) -> T {
    if x < T::lit(0.5) {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx).
        let pi = T::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma_lanczos(T::one() - x);
    }
    let z = x - T::one();
    let mut series = T::lit(LANCZOS_COEFFS[0]);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += T::lit(c) / (z + T::count(i as u64));
    }
    let t = z + T::lit(LANCZOS_G + 0.5);
    T::lit(0.5) * T::TAU().ln() + (z + T::lit(0.5)) * t.ln() - t + series.ln()
}

/// Natural log of the gamma function for x > 0.
pub fn log_gamma<T: Real>(x: T) -> Result<T, NumericsError> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(domain("log_gamma", x, "x > 0"));
    }
    // Γ(1) = Γ(2) = 1 exactly.
    if x == T::one() || x == T::lit(2.0) {
        return Ok(T::zero());
    }
    Ok(ln_gamma_lanczos(x))
}

const MAX_ITERATIONS: usize = 10_000;

/// Regularized lower incomplete gamma function P(a, x).
pub fn regularized_gamma_p<T: Real>(a: T, x: T) -> Result<T, NumericsError> {
    if !(a > T::zero()) {
        return Err(domain("regularized_gamma_p", a, "a > 0"));
    }
    if x < T::zero() || x.is_nan() {
        return Err(domain("regularized_gamma_p", x, "x >= 0"));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x.is_infinite() {
        return Ok(T::one());
    }
    let log_prefactor = a * x.ln() - x - log_gamma(a)?;
    let eps = T::epsilon();
    if x < a + T::one() {
        // Power series.
        let mut term = a.recip();
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITERATIONS {
            ap += T::one();
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * eps {
                break;
            }
        }
        Ok((sum * log_prefactor.exp()).min(T::one()))
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let tiny = T::min_positive_value() / eps;
        let mut b = x + T::one() - a;
        let mut c = tiny.recip();
        let mut d = b.recip();
        let mut h = d;
        for i in 1..MAX_ITERATIONS {
            let i = T::count(i as u64);
            let an = -i * (i - a);
            b += T::lit(2.0);
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = d.recip();
            let delta = d * c;
            h *= delta;
            if (delta - T::one()).abs() < eps {
                break;
            }
        }
        Ok((T::one() - log_prefactor.exp() * h).max(T::zero()))
    }
}

/// Chi-square cumulative distribution function.
pub fn chi_square_cdf<T: Real>(x: T, degrees_of_freedom: u32) -> Result<T, NumericsError> {
    if degrees_of_freedom == 0 {
        return Err(domain("chi_square_cdf", T::zero(), "degrees_of_freedom >= 1"));
    }
    if x <= T::zero() {
        return Ok(T::zero());
    }
    let half = T::lit(0.5);
    regularized_gamma_p(T::count(degrees_of_freedom as u64) * half, x * half)
}

/// A validated chi-square quantile request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileQuery<T> {
    degrees_of_freedom: u32,
    probability: T,
}

impl<T: Real> QuantileQuery<T> {
    pub fn new(degrees_of_freedom: u32, probability: T) -> Result<Self, NumericsError> {
        if degrees_of_freedom == 0 {
            return Err(domain(
                "chi_square_quantile",
                T::zero(),
                "degrees_of_freedom >= 1",
            ));
        }
        if !(probability >= T::zero() && probability < T::one()) {
            return Err(domain("chi_square_quantile", probability, "0 <= p < 1"));
        }
        Ok(Self {
            degrees_of_freedom,
            probability,
        })
    }

    pub fn degrees_of_freedom(&self) -> u32 {
        self.degrees_of_freedom
    }

    pub fn probability(&self) -> T {
        self.probability
    }
}

/// Chi-square quantile by bisection on the CDF.
pub fn chi_square_quantile<T: Real>(query: QuantileQuery<T>) -> T {
    let p = query.probability;
    let df = query.degrees_of_freedom;
    if p == T::zero() {
        return T::zero();
    }
    let cdf = |x: T| chi_square_cdf(x, df).expect("validated degrees of freedom");

    let mut lo = T::zero();
    let mut hi = T::count(df as u64).max(T::one());
    while cdf(hi) < p {
        lo = hi;
        hi = hi * T::lit(2.0);
    }
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * T::lit(0.5)
}

/// Memoized chi-square quantiles keyed by (degrees of freedom, probability).
///
/// Not synchronized; keep one per worker.
#[derive(Debug, Clone, Default)]
pub struct QuantileCache<T> {
    entries: HashMap<(u32, u64), T>,
}

impl<T: Real> QuantileCache<T> {
    pub fn new() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn quantile(&mut self, query: QuantileQuery<T>) -> T {
        let key = (
            query.degrees_of_freedom,
            query.probability.to_f64().unwrap_or(f64::NAN).to_bits(),
        );
        *self
            .entries
            .entry(key)
            .or_insert_with(|| chi_square_quantile(query))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
