//! Monte Carlo divergence error estimators.
//!
//! The main estimator is Grassberger's entropy bias correction
//!
//! ```text
//! ê_n = (1/n) Σ_i φ(n_i),        φ(m) = m (ln m - ψ(m))
//! δ̂_n = Σ_i [(n_i + 1) φ(n_i) - n_i φ(n_i + 1)] / (n (n + 1))
//! ```
//!
//! where `ê_n` estimates the expected KL divergence of the empirical
//! distribution from its target and `δ̂_n` the expected reduction of that
//! error from one more independent draw (stored positive). Both are
//! maintained incrementally from [`InsertEvent`]s.
//!
//! Also here: Miller-Madow, squared extent, and the split-half
//! Jensen-Shannon divergence.

use thiserror::Error;

use crate::measure::{BinKey, BinnedMeasure, InsertEvent, MeasureError};
use crate::numerics::ln_minus_digamma;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("stale insert event: estimator expects total {expected}, event carries {found}")]
    StaleEvent { expected: u64, found: u64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Grassberger's `φ(m) = m (ln m - ψ(m))`, with `φ(0) = 0`.
///
/// With `second_order` the oscillating refinement `(-1)^m / (m + 1)` is
/// subtracted.
pub fn phi<T: Real>(count: u64, second_order: bool) -> T {
    if count == 0 {
        return T::zero();
    }
    let m = T::count(count);
    let base = m * ln_minus_digamma(m).expect("positive count");
    if second_order {
        let sign = if count % 2 == 0 { T::one() } else { -T::one() };
        base - sign / (m + T::one())
    } else {
        base
    }
}

/// Incrementally maintained `ê_n` and `δ̂_n`.
#[derive(Debug, Clone, Default)]
pub struct GrassbergerEstimate<T> {
    total: u64,
    error: T,
    decrease: T,
    second_order: bool,
}

impl<T: Real> GrassbergerEstimate<T> {
    pub fn new(second_order: bool) -> Self {
        Self {
            total: 0,
            error: T::zero(),
            decrease: T::zero(),
            second_order,
        }
    }

    /// Applies one insertion to both the error and the expected decrease.
    pub fn update(&mut self, event: &InsertEvent) -> Result<(), EstimatorError> {
        if event.new_total != self.total + 1 {
            return Err(EstimatorError::StaleEvent {
                expected: self.total + 1,
                found: event.new_total,
            });
        }
        let n = T::count(event.new_total);
        let n_prev = T::count(self.total);
        let c = event.count();

        let phi_err_new: T = phi(c, self.second_order);
        let phi_err_old: T = phi(c - 1, self.second_order);
        self.error = (n_prev * self.error + phi_err_new - phi_err_old) / n;

        // The decrease always uses first-order φ.
        let (p0, p1, p2): (T, T, T) = (phi(c - 1, false), phi(c, false), phi(c + 1, false));
        let second_diff = p2 - T::lit(2.0) * p1 + p0;
        self.decrease = (n_prev * n * self.decrease - T::count(c) * second_diff) / (n * (n + T::one()));

        self.total = event.new_total;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn error(&self) -> T {
        self.error
    }

    pub fn decrease(&self) -> T {
        self.decrease
    }

    pub fn second_order(&self) -> bool {
        self.second_order
    }
}

/// `ê_n` recomputed from the bin counts.
pub fn grassberger_error_batch<T: Real>(measure: &BinnedMeasure<T>, second_order: bool) -> Result<T, MeasureError> {
    if measure.is_empty() {
        return Err(MeasureError::EmptyMeasure);
    }
    let mut sum = T::zero();
    for (_, c) in measure.sorted_counts() {
        sum += phi::<T>(c, second_order);
    }
    Ok(sum / T::count(measure.total()))
}

/// `δ̂_n` from the closed form over the bin counts.
pub fn grassberger_decrease_batch<T: Real>(measure: &BinnedMeasure<T>) -> Result<T, MeasureError> {
    if measure.is_empty() {
        return Err(MeasureError::EmptyMeasure);
    }
    let mut sum = T::zero();
    for (_, c) in measure.sorted_counts() {
        sum += T::count(c + 1) * phi::<T>(c, false) - T::count(c) * phi::<T>(c + 1, false);
    }
    let n = T::count(measure.total());
    Ok(sum / (n * (n + T::one())))
}

/// A measure together with its Grassberger estimate.
#[derive(Debug, Clone, Default)]
pub struct GrassbergerState<T> {
    measure: BinnedMeasure<T>,
    estimate: GrassbergerEstimate<T>,
}

impl<T: Real> GrassbergerState<T> {
    pub fn new(second_order: bool) -> Self {
        Self {
            measure: BinnedMeasure::new(),
            estimate: GrassbergerEstimate::new(second_order),
        }
    }

    pub fn insert(&mut self, key: BinKey) -> InsertEvent {
        let event = self.measure.insert(key);
        self.estimate
            .update(&event)
            .expect("measure and estimate advance together");
        event
    }

    /// Applies an event produced elsewhere; fails unless it is the next one.
    pub fn apply(&mut self, event: &InsertEvent) -> Result<(), EstimatorError> {
        if event.new_total != self.measure.total() {
            return Err(EstimatorError::StaleEvent {
                expected: self.measure.total(),
                found: event.new_total,
            });
        }
        self.estimate.update(event)
    }

    pub fn measure(&self) -> &BinnedMeasure<T> {
        &self.measure
    }

    pub fn error(&self) -> T {
        self.estimate.error()
    }

    pub fn decrease(&self) -> T {
        self.estimate.decrease()
    }
}

/// Miller-Madow bias estimate `(K - 1) / (2n)`.
pub fn miller_madow<T: Real>(measure: &BinnedMeasure<T>) -> Result<T, MeasureError> {
    if measure.is_empty() {
        return Err(MeasureError::EmptyMeasure);
    }
    let k = T::count(measure.occupied_bins() as u64);
    Ok((k - T::one()) / (T::lit(2.0) * T::count(measure.total())))
}

/// Squared extent `exp(2 H)`.
pub fn extent_squared<T: Real>(measure: &BinnedMeasure<T>) -> Result<T, MeasureError> {
    Ok((T::lit(2.0) * measure.entropy()?).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Half {
    #[default]
    Odd,
    Even,
}

/// Split-half divergence: samples alternate between an odd and an even half.
#[derive(Debug, Clone, Default)]
pub struct SplitJsdState<T> {
    full: BinnedMeasure<T>,
    odd: BinnedMeasure<T>,
    even: BinnedMeasure<T>,
    next: Half,
}

fn entropy_or_zero<T: Real>(m: &BinnedMeasure<T>) -> T {
    m.entropy().unwrap_or_else(|_| T::zero())
}

impl<T: Real> SplitJsdState<T> {
    pub fn new() -> Self {
        Self {
            full: BinnedMeasure::new(),
            odd: BinnedMeasure::new(),
            even: BinnedMeasure::new(),
            next: Half::Odd,
        }
    }

    /// Inserts the next sample and returns the updated divergence.
    pub fn insert(&mut self, key: BinKey) -> T {
        match self.next {
            Half::Odd => {
                self.odd.insert(key.clone());
                self.next = Half::Even;
            }
            Half::Even => {
                self.even.insert(key.clone());
                self.next = Half::Odd;
            }
        }
        self.full.insert(key);
        self.value()
    }

    /// `H(full) - (H(odd) + H(even)) / 2`, from the maintained sums.
    pub fn value(&self) -> T {
        if self.full.is_empty() {
            return T::zero();
        }
        let halves = (entropy_or_zero(&self.odd) + entropy_or_zero(&self.even)) * T::lit(0.5);
        (entropy_or_zero(&self.full) - halves).max(T::zero())
    }

    pub fn full(&self) -> &BinnedMeasure<T> {
        &self.full
    }

    pub fn odd(&self) -> &BinnedMeasure<T> {
        &self.odd
    }

    pub fn even(&self) -> &BinnedMeasure<T> {
        &self.even
    }

    pub fn next_half(&self) -> Half {
        self.next
    }
}

/// Entropy recomputed directly from counts, `-Σ p ln p`.
pub fn entropy_batch<T: Real>(measure: &BinnedMeasure<T>) -> T {
    if measure.is_empty() {
        return T::zero();
    }
    let n = T::count(measure.total());
    let mut h = T::zero();
    for (_, c) in measure.sorted_counts() {
        let p = T::count(c) / n;
        h -= p * p.ln();
    }
    h
}

/// The split-half divergence recomputed from the three measures' counts.
pub fn split_jsd_batch<T: Real>(state: &SplitJsdState<T>) -> T {
    if state.full.is_empty() {
        return T::zero();
    }
    entropy_batch(&state.full) - (entropy_batch(&state.odd) + entropy_batch(&state.even)) * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::digamma;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn idx(i: i64) -> BinKey {
        BinKey::Index(i)
    }

    fn measure(counts: &[(i64, u64)]) -> BinnedMeasure<f64> {
        BinnedMeasure::from_counts(counts.iter().map(|&(k, c)| (idx(k), c)))
    }

    /// φ through the plain digamma, independent of the fused asymptotic path.
    fn phi_oracle(n: u64) -> f64 {
        if n == 0 {
            0.0
        } else {
            let x = n as f64;
            x * (x.ln() - digamma(x).unwrap())
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi::<f64>(0, false), 0.0);
        assert_eq!(phi::<f64>(0, true), 0.0);
        assert_abs_diff_eq!(phi::<f64>(1, false), EULER_GAMMA, epsilon = 1e-12);
        assert_abs_diff_eq!(phi::<f64>(10, false), phi_oracle(10), epsilon = 1e-12);
        assert_abs_diff_eq!(phi::<f64>(10, false), 0.5083250, epsilon = 1e-7);
        // ψ(2) = 1 − γ.
        let phi2 = 2.0 * (2f64.ln() - (1.0 - EULER_GAMMA));
        assert_abs_diff_eq!(phi::<f64>(2, false), phi2, epsilon = 1e-12);
        assert_abs_diff_eq!(phi::<f64>(2, false), 0.5407257, epsilon = 1e-7);
    }

    #[test]
    fn phi_second_order_alternates() {
        assert_abs_diff_eq!(phi::<f64>(1, true), EULER_GAMMA + 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(phi::<f64>(2, true), phi::<f64>(2, false) - 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_strictly_decreasing_above_half() {
        let mut prev = phi::<f64>(1, false);
        let mut n = 2u64;
        while n <= 1_000_000 {
            let cur = phi::<f64>(n, false);
            assert!(cur < prev, "not decreasing at {n}");
            assert!(cur > 0.5, "not above 1/2 at {n}");
            prev = cur;
            n += if n < 10_000 { 1 } else { 97 };
        }
    }

    #[test]
    fn grassberger_error_examples() {
        let mut s = GrassbergerState::<f64>::new(false);
        for _ in 0..10 {
            s.insert(idx(0));
        }
        assert_abs_diff_eq!(s.error(), phi_oracle(10) / 10.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.error(), 0.0508325, epsilon = 1e-7);

        let mut s = GrassbergerState::<f64>::new(false);
        s.insert(idx(0));
        s.insert(idx(1));
        assert_abs_diff_eq!(s.error(), EULER_GAMMA, epsilon = 1e-14);
    }

    #[test]
    fn grassberger_decrease_examples() {
        let mut s = GrassbergerState::<f64>::new(false);
        s.insert(idx(0));
        let expected = (2.0 * phi_oracle(1) - phi_oracle(2)) / 2.0;
        assert_abs_diff_eq!(s.decrease(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(s.decrease(), 0.3068528, epsilon = 1e-7);
    }

    /// `e_n - Σ_i (n_i/n) e_{n+1}^{(i)}` by enumerating the next bin.
    fn one_step_oracle(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let nf = n as f64;
        let e_now: f64 = counts.iter().map(|&c| phi_oracle(c)).sum::<f64>() / nf;
        let mut expected_next = 0.0;
        for (i, &ci) in counts.iter().enumerate() {
            let e_next: f64 = counts
                .iter()
                .enumerate()
                .map(|(j, &cj)| phi_oracle(if i == j { cj + 1 } else { cj }))
                .sum::<f64>()
                / (nf + 1.0);
            expected_next += ci as f64 / nf * e_next;
        }
        e_now - expected_next
    }

    #[test]
    fn decrease_matches_one_step_enumeration() {
        let counts = [3u64, 1];
        let m = measure(&[(0, 3), (1, 1)]);
        let closed = grassberger_decrease_batch(&m).unwrap();
        assert_abs_diff_eq!(closed, one_step_oracle(&counts), epsilon = 1e-12);

        let mut s = GrassbergerState::<f64>::new(false);
        for k in [0, 1, 0, 0] {
            s.insert(idx(k));
        }
        assert_abs_diff_eq!(s.decrease(), one_step_oracle(&counts), epsilon = 1e-12);
    }

    #[test]
    fn incremental_matches_batch_on_long_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for second_order in [false, true] {
            let mut s = GrassbergerState::<f64>::new(second_order);
            for _ in 0..5000 {
                let u: f64 = rng.random();
                s.insert(idx((u * u * 60.0) as i64));
                assert!(s.decrease() > 0.0);
            }
            let e = grassberger_error_batch(s.measure(), second_order).unwrap();
            let d = grassberger_decrease_batch(s.measure()).unwrap();
            assert!((s.error() - e).abs() <= 1e-10 * e.abs());
            assert!((s.decrease() - d).abs() <= 1e-10 * d.abs());
            // The measure's own running sums agree too.
            let n = s.measure().total() as f64;
            if !second_order {
                assert!((s.measure().sum_phi() / n - e).abs() <= 1e-10 * e);
            }
            assert!((s.measure().sum_t() / (n * (n + 1.0)) - d).abs() <= 1e-10 * d);
        }
    }

    #[test]
    fn stale_events_are_rejected() {
        let mut other = BinnedMeasure::<f64>::new();
        other.insert(idx(0));
        let ev2 = other.insert(idx(0));

        let mut est = GrassbergerEstimate::<f64>::new(false);
        assert_eq!(
            est.update(&ev2),
            Err(EstimatorError::StaleEvent { expected: 1, found: 2 })
        );

        let mut s = GrassbergerState::<f64>::new(false);
        let ev = s.insert(idx(0));
        // Re-applying the same event would double count it.
        assert!(matches!(s.apply(&ev), Err(EstimatorError::StaleEvent { .. })));
    }

    #[test]
    fn miller_madow_examples() {
        let five_bins = measure(&[(0, 20), (1, 20), (2, 20), (3, 20), (4, 20)]);
        assert_abs_diff_eq!(miller_madow(&five_bins).unwrap(), 0.02, epsilon = 1e-15);
        assert_eq!(miller_madow(&measure(&[(0, 9)])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            miller_madow(&measure(&[(0, 1), (1, 1), (2, 2)])).unwrap(),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn extent_examples() {
        let uniform = measure(&[(0, 2), (1, 2), (2, 2)]);
        assert_abs_diff_eq!(extent_squared(&uniform).unwrap(), 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(extent_squared(&measure(&[(4, 7)])).unwrap(), 1.0, epsilon = 1e-12);
        let h = 4f64.ln() - 0.75 * 3f64.ln();
        let skewed = extent_squared(&measure(&[(0, 1), (1, 3)])).unwrap();
        assert_abs_diff_eq!(skewed, (2.0 * h).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(skewed, 3.0792, epsilon = 1e-4);
    }

    #[test]
    fn split_jsd_examples() {
        let mut s = SplitJsdState::<f64>::new();
        s.insert(idx(0));
        let v = s.insert(idx(0));
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);

        let mut s = SplitJsdState::<f64>::new();
        for k in [0, 1, 0, 1] {
            s.insert(idx(k));
        }
        assert_eq!(s.odd().count(&idx(0)), 2);
        assert_eq!(s.even().count(&idx(1)), 2);
        assert_abs_diff_eq!(s.value(), 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn split_jsd_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = SplitJsdState::<f64>::new();
        for _ in 0..1000 {
            let v = s.insert(idx(rng.random_range(0..25)));
            assert!(v >= 0.0);
            let (o, e) = (s.odd().total(), s.even().total());
            assert_eq!(o + e, s.full().total());
            assert!(o.abs_diff(e) <= 1);
        }
        assert!((s.value() - split_jsd_batch(&s)).abs() <= 1e-10);
    }
}
