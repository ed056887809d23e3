//! Discretization of samples into bin keys, and marginal-likelihood choice of
//! the number of equal-width bins.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::BinKey;
use crate::numerics::log_gamma;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinningError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("value {value} outside [{lower}, {upper}] and tail bins are disabled")]
    OutOfRange { value: f64, lower: f64, upper: f64 },
    #[error("invalid bin search: {0}")]
    InvalidSearch(String),
}

/// Equal-width grid on `[lower, upper]` with optional unbounded tail bins.
///
/// Interior bins are right-open, `[a + i w, a + (i + 1) w)`. With tails,
/// values below `lower` map to index `-1` and values at or above `upper` to
/// index `bins`; without tails `upper` itself belongs to the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub bins: u32,
    #[serde(default)]
    pub tails: bool,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, bins: u32, tails: bool) -> Result<Self, BinningError> {
        let g = Self {
            lower,
            upper,
            bins,
            tails,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), BinningError> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(BinningError::InvalidGrid(format!(
                "need finite lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if self.bins == 0 {
            return Err(BinningError::InvalidGrid("need at least one bin".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    pub fn left_tail(&self) -> i64 {
        -1
    }

    pub fn right_tail(&self) -> i64 {
        self.bins as i64
    }

    fn out_of_range(&self, value: f64) -> BinningError {
        BinningError::OutOfRange {
            value,
            lower: self.lower,
            upper: self.upper,
        }
    }

    /// Index of the bin containing `x`.
    pub fn index(&self, x: f64) -> Result<i64, BinningError> {
        if x.is_nan() {
            return Err(self.out_of_range(x));
        }
        if x < self.lower {
            return if self.tails { Ok(self.left_tail()) } else { Err(self.out_of_range(x)) };
        }
        if x >= self.upper {
            if self.tails {
                return Ok(self.right_tail());
            }
            if x > self.upper {
                return Err(self.out_of_range(x));
            }
        }
        let t = (x - self.lower) * self.bins as f64 / (self.upper - self.lower);
        Ok((t.floor() as i64).min(self.bins as i64 - 1))
    }

    /// Interior index of `x`, which must lie in `[lower, upper)`.
    pub fn interior_index(&self, x: f64) -> Result<i64, BinningError> {
        if !(x >= self.lower && x < self.upper) {
            return Err(self.out_of_range(x));
        }
        let t = (x - self.lower) * self.bins as f64 / (self.upper - self.lower);
        Ok((t.floor() as i64).min(self.bins as i64 - 1))
    }

    pub fn bin_value(&self, x: f64) -> Result<BinKey, BinningError> {
        self.index(x).map(BinKey::Index)
    }

    /// Sorted tuple of per-coordinate interior indices; empty for no points.
    pub fn bin_config(&self, points: &[f64]) -> Result<BinKey, BinningError> {
        let indices = points
            .iter()
            .map(|&x| self.interior_index(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BinKey::tuple(indices))
    }

    /// Counts of `data` per interior bin; every value must lie in `[lower, upper]`.
    pub fn interior_counts(&self, data: &[f64]) -> Result<Vec<u64>, BinningError> {
        let interior = GridSpec {
            tails: false,
            ..*self
        };
        let mut counts = vec![0u64; self.bins as usize];
        for &x in data {
            counts[interior.index(x)? as usize] += 1;
        }
        Ok(counts)
    }
}

/// Log marginal likelihood of equal-width bin counts on `[lower, upper]`
/// under a symmetric Dirichlet prior with concentration `alpha (b - a) / K`
/// per bin.
pub fn histogram_log_marginal_likelihood<T: Real>(counts: &[u64], alpha: T, lower: T, upper: T) -> Result<T, BinningError> {
    if counts.is_empty() {
        return Err(BinningError::InvalidSearch("no bins".into()));
    }
    if !(alpha > T::zero()) || !(lower < upper) {
        return Err(BinningError::InvalidSearch(format!(
            "need alpha > 0 and lower < upper, got alpha {alpha}, [{lower}, {upper}]"
        )));
    }
    let lg = |x: T| log_gamma(x).expect("positive gamma argument");
    let k = T::count(counts.len() as u64);
    let range = upper - lower;
    let concentration = alpha * range;
    let per_bin = concentration / k;
    let n: u64 = counts.iter().sum();
    let nf = T::count(n);

    // Empty bins contribute Γ(c/K)/Γ(c/K) = 1, so only occupied ones are summed.
    let lg_per_bin = lg(per_bin);
    let mut occupied = T::zero();
    for &c in counts.iter().filter(|&&c| c > 0) {
        occupied += lg(per_bin + T::count(c)) - lg_per_bin;
    }
    Ok(lg(concentration) - lg(concentration + nf) - nf * (range / k).ln() + occupied)
}

/// Maximizer of the histogram marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinFit {
    pub bins: u32,
    pub alpha: f64,
    pub log_ml: f64,
}

/// Default search interval for the Dirichlet concentration.
pub const DEFAULT_ALPHA_RANGE: (f64, f64) = (1e-3, 1e3);

const GOLDEN_TOLERANCE: f64 = 1e-7;

/// Maximizes over `ln alpha` by golden-section search; returns (alpha, value).
fn maximize_alpha(counts: &[u64], lower: f64, upper: f64, alpha_range: (f64, f64)) -> (f64, f64) {
    let f = |log_alpha: f64| {
        histogram_log_marginal_likelihood(counts, log_alpha.exp(), lower, upper).expect("validated search inputs")
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (alpha_range.0.ln(), alpha_range.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    // Guard the interval ends in case the maximum sits on the boundary.
    for edge in [alpha_range.0.ln(), alpha_range.1.ln()] {
        let fe = f(edge);
        if fe > best.1 {
            best = (edge, fe);
        }
    }
    (best.0.exp(), best.1)
}

/// Jointly maximizes the histogram marginal likelihood over the number of
/// bins and the concentration. Ties (within rounding) keep the smaller `K`.
pub fn optimize_bins(
    data: &[f64],
    lower: f64,
    upper: f64,
    bins: RangeInclusive<u32>,
    alpha_range: (f64, f64),
) -> Result<BinFit, BinningError> {
    if data.is_empty() {
        return Err(BinningError::InvalidSearch("no data".into()));
    }
    if bins.is_empty() || *bins.start() == 0 {
        return Err(BinningError::InvalidSearch(format!("bad bin range {bins:?}")));
    }
    if !(alpha_range.0 > 0.0 && alpha_range.0 <= alpha_range.1 && alpha_range.1.is_finite()) {
        return Err(BinningError::InvalidSearch(format!("bad alpha range {alpha_range:?}")));
    }
    let mut best: Option<BinFit> = None;
    for k in bins {
        let counts = GridSpec::new(lower, upper, k, false)?.interior_counts(data)?;
        let (alpha, log_ml) = maximize_alpha(&counts, lower, upper, alpha_range);
        let better = match best {
            None => true,
            Some(b) => log_ml - b.log_ml > 1e-12 * b.log_ml.abs().max(1.0),
        };
        if better {
            best = Some(BinFit {
                bins: k,
                alpha,
                log_ml,
            });
        }
    }
    Ok(best.expect("nonempty bin range"))
}
