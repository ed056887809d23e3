//! Sequential allocation of a fixed sample budget across rival samplers.
//!
//! Each sampler is paired with an [`ErrorCriterion`]. After every sampler
//! has received its minimum number of draws, each further draw goes to the
//! sampler with the largest current error (max-loss) or the largest
//! expected decrease in error (average-loss). Ties go to the lowest index.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{extent_squared, EstimatorError, GrassbergerEstimate, SplitJsdState};
use crate::measure::{BinKey, BinnedMeasure, InsertEvent};
use crate::numerics::{QuantileCache, QuantileQuery};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("invalid allocation plan: {0}")]
    Config(String),
    #[error("criterion expected {expected} feature values, got {found}")]
    FeatureLength { expected: usize, found: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// How per-sampler errors combine into one loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Largest error across samplers.
    Max,
    /// Mean error across samplers.
    Ave,
}

impl Loss {
    pub fn combine<T: Real>(self, errors: &[T]) -> T {
        match self {
            Loss::Max => errors.iter().copied().fold(T::neg_infinity(), T::max),
            Loss::Ave => {
                let sum = errors.iter().copied().fold(T::zero(), |a, b| a + b);
                sum / T::count(errors.len() as u64)
            }
        }
    }
}

/// One sample as seen by the allocator.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T> {
    pub key: BinKey,
    /// Function-of-interest values, one per reference point. Empty unless
    /// the paired criterion needs them.
    pub features: Vec<T>,
}

impl<T> Draw<T> {
    pub fn keyed(key: BinKey) -> Self {
        Self {
            key,
            features: Vec::new(),
        }
    }
}

pub trait Sampler<T> {
    fn draw(&mut self) -> Draw<T>;
}

impl<T, F: FnMut() -> Draw<T>> Sampler<T> for F {
    fn draw(&mut self) -> Draw<T> {
        self()
    }
}

/// What a criterion sees after each draw from its sampler.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a, T> {
    pub measure: &'a BinnedMeasure<T>,
    pub event: &'a InsertEvent,
    pub features: &'a [T],
}

/// Per-sampler error model driving the allocation decisions.
pub trait ErrorCriterion<T: Real>: Send {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError>;
    fn error(&self) -> T;
    fn expected_decrease(&self) -> T;

    fn score(&self, loss: Loss) -> T {
        match loss {
            Loss::Max => self.error(),
            Loss::Ave => self.expected_decrease(),
        }
    }
}

/// Grassberger divergence error and its expected one-step decrease.
#[derive(Debug, Clone, Default)]
pub struct GrassbergerCriterion<T> {
    estimate: GrassbergerEstimate<T>,
}

impl<T: Real> GrassbergerCriterion<T> {
    pub fn new(second_order: bool) -> Self {
        Self {
            estimate: GrassbergerEstimate::new(second_order),
        }
    }
}

impl<T: Real> ErrorCriterion<T> for GrassbergerCriterion<T> {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        Ok(self.estimate.update(obs.event)?)
    }

    fn error(&self) -> T {
        self.estimate.error()
    }

    fn expected_decrease(&self) -> T {
        self.estimate.decrease()
    }
}

/// Chi-square goodness-of-fit error `χ²_{K-1, 1-δ} / (2n)`.
#[derive(Debug, Clone)]
pub struct FoxCriterion<T> {
    delta: T,
    occupied: u64,
    total: u64,
    error: T,
    decrease: T,
    quantiles: QuantileCache<T>,
}

impl<T: Real> FoxCriterion<T> {
    pub fn new(delta: T) -> Result<Self, AllocationError> {
        if !(delta > T::zero() && delta < T::one()) {
            return Err(AllocationError::Config(format!(
                "fox significance level must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self {
            delta,
            occupied: 0,
            total: 0,
            error: T::zero(),
            decrease: T::zero(),
            quantiles: QuantileCache::new(),
        })
    }

    /// Sets the state directly from `K` and `n`.
    pub fn with_state(delta: T, occupied: u64, total: u64) -> Result<Self, AllocationError> {
        let mut c = Self::new(delta)?;
        c.occupied = occupied;
        c.total = total;
        (c.error, c.decrease) = c.error_and_decrease();
        Ok(c)
    }

    fn epsilon(&mut self, occupied: u64, total: u64) -> T {
        if occupied < 2 || total == 0 {
            return T::zero();
        }
        let query = QuantileQuery::new((occupied - 1) as u32, T::one() - self.delta)
            .expect("validated significance level");
        self.quantiles.quantile(query) / (T::lit(2.0) * T::count(total))
    }

    /// Probability that the next draw opens a new bin, `(K - 1)/(n - 1)`.
    pub fn new_bin_probability(&self) -> T {
        if self.total < 2 {
            return T::zero();
        }
        T::count(self.occupied.saturating_sub(1)) / T::count(self.total - 1)
    }

    /// Current error and expected decrease.
    pub fn error_and_decrease(&mut self) -> (T, T) {
        let (k, n) = (self.occupied, self.total);
        let error = self.epsilon(k, n);
        if n < 2 {
            return (error, T::zero());
        }
        let p_new = self.new_bin_probability();
        let opened = self.epsilon(k + 1, n + 1);
        let same = self.epsilon(k, n + 1);
        (error, error - (p_new * opened + (T::one() - p_new) * same))
    }
}

impl<T: Real> ErrorCriterion<T> for FoxCriterion<T> {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        self.occupied = obs.measure.occupied_bins() as u64;
        self.total = obs.measure.total();
        (self.error, self.decrease) = self.error_and_decrease();
        Ok(())
    }

    fn error(&self) -> T {
        self.error
    }

    fn expected_decrease(&self) -> T {
        self.decrease
    }
}

/// Single-pass mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Real> RunningMoments<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }

    pub fn push(&mut self, x: T) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / T::count(self.count);
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Unbiased variance; zero below two observations.
    pub fn variance(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            self.m2 / T::count(self.count - 1)
        }
    }
}

/// Sum over reference points of the Monte Carlo variance of a function of
/// interest.
#[derive(Debug, Clone)]
pub struct SissonCriterion<T> {
    points: Vec<RunningMoments<T>>,
    total: u64,
    error: T,
    decrease: T,
}

impl<T: Real> SissonCriterion<T> {
    pub fn new(reference_points: usize) -> Self {
        Self {
            points: vec![RunningMoments::new(); reference_points],
            total: 0,
            error: T::zero(),
            decrease: T::zero(),
        }
    }

    pub fn reference_points(&self) -> usize {
        self.points.len()
    }

    /// Adds one vector of function values and returns (error, decrease).
    pub fn update(&mut self, values: &[T]) -> Result<(T, T), AllocationError> {
        if values.len() != self.points.len() {
            return Err(AllocationError::FeatureLength {
                expected: self.points.len(),
                found: values.len(),
            });
        }
        for (acc, &v) in self.points.iter_mut().zip(values) {
            acc.push(v);
        }
        self.total += 1;
        if self.total < 2 {
            self.error = T::zero();
            self.decrease = T::zero();
        } else {
            let var_sum = self.points.iter().fold(T::zero(), |s, p| s + p.variance());
            let n = T::count(self.total);
            self.error = var_sum / n;
            self.decrease = var_sum * (n.recip() - (n + T::one()).recip());
        }
        Ok((self.error, self.decrease))
    }
}

impl<T: Real> ErrorCriterion<T> for SissonCriterion<T> {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        self.update(obs.features).map(|_| ())
    }

    fn error(&self) -> T {
        self.error
    }

    fn expected_decrease(&self) -> T {
        self.decrease
    }
}

/// Squared extent over sample size.
///
/// Under max-loss the fixed point of the greedy rule is `n_j ∝ exp(2 H_j)`.
#[derive(Debug, Clone, Default)]
pub struct ExtentCriterion<T> {
    extent2: T,
    total: u64,
}

impl<T: Real> ExtentCriterion<T> {
    pub fn new() -> Self {
        Self {
            extent2: T::zero(),
            total: 0,
        }
    }
}

impl<T: Real> ErrorCriterion<T> for ExtentCriterion<T> {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        self.extent2 = extent_squared(obs.measure).map_err(EstimatorError::from)?;
        self.total = obs.measure.total();
        Ok(())
    }

    fn error(&self) -> T {
        if self.total == 0 {
            return T::zero();
        }
        self.extent2 / T::count(self.total)
    }

    fn expected_decrease(&self) -> T {
        if self.total == 0 {
            return T::zero();
        }
        let n = T::count(self.total);
        self.extent2 * (n.recip() - (n + T::one()).recip())
    }
}

/// Divergence between the odd- and even-indexed halves of the sample.
#[derive(Debug, Clone, Default)]
pub struct SplitJsdCriterion<T> {
    state: SplitJsdState<T>,
    value: T,
}

impl<T: Real> SplitJsdCriterion<T> {
    pub fn new() -> Self {
        Self {
            state: SplitJsdState::new(),
            value: T::zero(),
        }
    }
}

impl<T: Real> ErrorCriterion<T> for SplitJsdCriterion<T> {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        self.value = self.state.insert(obs.event.key.clone());
        Ok(())
    }

    fn error(&self) -> T {
        self.value
    }

    /// `ê / (n + 1)`: the half-vs-half divergence decays like `1/n`.
    fn expected_decrease(&self) -> T {
        let n = self.state.full().total();
        self.value / T::count(n + 1)
    }
}

/// Error `1/n`; the greedy rule then keeps sample sizes level.
#[derive(Debug, Clone, Default)]
pub struct EqualCriterion {
    total: u64,
}

impl EqualCriterion {
    pub fn new() -> Self {
        Self { total: 0 }
    }
}

impl<T: Real> ErrorCriterion<T> for EqualCriterion {
    fn observe(&mut self, obs: &Observation<'_, T>) -> Result<(), AllocationError> {
        self.total = obs.measure.total();
        Ok(())
    }

    fn error(&self) -> T {
        if self.total == 0 {
            return T::infinity();
        }
        T::count(self.total).recip()
    }

    fn expected_decrease(&self) -> T {
        if self.total == 0 {
            return T::infinity();
        }
        let n = T::count(self.total);
        n.recip() - (n + T::one()).recip()
    }
}

/// Index of the largest score; ties and NaNs resolve to the lowest index.
pub fn argmax_lowest<T: Real>(scores: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = if s.is_nan() { T::neg_infinity() } else { s };
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy decision: which sampler receives the next draw.
pub fn choose_next<T: Real>(criteria: &[Box<dyn ErrorCriterion<T>>], loss: Loss) -> usize {
    argmax_lowest(criteria.iter().map(|c| c.score(loss))).unwrap_or(0)
}

/// Budget, per-sampler minima and loss for one allocation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub budget: u64,
    pub minima: Vec<u64>,
    pub loss: Loss,
    #[serde(default)]
    pub record_trace: bool,
}

/// Minimum draws per sampler before greedy allocation starts.
pub const DEFAULT_MINIMUM: u64 = 500;

impl AllocationPlan {
    pub fn new(budget: u64, minima: Vec<u64>, loss: Loss) -> Self {
        Self {
            budget,
            minima,
            loss,
            record_trace: false,
        }
    }

    /// Same minimum for every one of `samplers` samplers.
    pub fn uniform(budget: u64, samplers: usize, minimum: u64, loss: Loss) -> Self {
        Self::new(budget, vec![minimum; samplers], loss)
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.minima.is_empty() {
            return Err(AllocationError::Config("no samplers".into()));
        }
        if self.minima.iter().any(|&m| m == 0) {
            return Err(AllocationError::Config("every minimum must be at least 1".into()));
        }
        let floor: u64 = self.minima.iter().sum();
        if floor > self.budget {
            return Err(AllocationError::Config(format!(
                "budget {} is below the sum of minima {floor}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// One greedy decision.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep<T> {
    /// Number of samples drawn before this decision.
    pub step: u64,
    pub chosen: usize,
    /// Error (max-loss) or expected decrease (average-loss) per sampler.
    pub scores: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct AllocationOutcome<T> {
    pub sizes: Vec<u64>,
    pub measures: Vec<BinnedMeasure<T>>,
    pub trace: Option<Vec<TraceStep<T>>>,
}

fn feed<T: Real>(
    sampler: &mut impl Sampler<T>,
    measure: &mut BinnedMeasure<T>,
    criterion: &mut dyn ErrorCriterion<T>,
) -> Result<(), AllocationError> {
    let draw = sampler.draw();
    let event = measure.insert(draw.key);
    criterion.observe(&Observation {
        measure,
        event: &event,
        features: &draw.features,
    })
}

/// Runs the two-phase rival sampling algorithm.
///
/// Phase one draws each sampler's minimum; phase two hands out the rest of
/// the budget one draw at a time by [`choose_next`].
pub fn run_allocation<T: Real, S: Sampler<T>>(
    samplers: &mut [S],
    criteria: &mut [Box<dyn ErrorCriterion<T>>],
    plan: &AllocationPlan,
) -> Result<AllocationOutcome<T>, AllocationError> {
    plan.validate()?;
    let m = plan.minima.len();
    if samplers.len() != m || criteria.len() != m {
        return Err(AllocationError::Config(format!(
            "{} samplers and {} criteria for a plan over {m}",
            samplers.len(),
            criteria.len()
        )));
    }

    let mut measures: Vec<BinnedMeasure<T>> = (0..m).map(|_| BinnedMeasure::new()).collect();
    let mut sizes = vec![0u64; m];
    for j in 0..m {
        for _ in 0..plan.minima[j] {
            feed(&mut samplers[j], &mut measures[j], criteria[j].as_mut())?;
        }
        sizes[j] = plan.minima[j];
    }

    let mut trace = plan.record_trace.then(Vec::new);
    let mut drawn: u64 = sizes.iter().sum();
    while drawn < plan.budget {
        let chosen = choose_next(criteria, plan.loss);
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                step: drawn,
                chosen,
                scores: criteria.iter().map(|c| c.score(plan.loss)).collect(),
            });
        }
        feed(&mut samplers[chosen], &mut measures[chosen], criteria[chosen].as_mut())?;
        sizes[chosen] += 1;
        drawn += 1;
    }

    Ok(AllocationOutcome {
        sizes,
        measures,
        trace,
    })
}

/// Renders a decision trace as CSV: `step,chosen,score_0,...`.
pub fn trace_to_csv<T: Real>(trace: &[TraceStep<T>]) -> String {
    let width = trace.first().map_or(0, |t| t.scores.len());
    let mut out = String::from("step,chosen");
    for j in 0..width {
        let _ = write!(out, ",score_{j}");
    }
    out.push('\n');
    for t in trace {
        let _ = write!(out, "{},{}", t.step, t.chosen);
        for s in &t.scores {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Criterion reporting fixed scores regardless of data.
    struct Fixed {
        error: f64,
        decrease: f64,
    }

    impl ErrorCriterion<f64> for Fixed {
        fn observe(&mut self, _: &Observation<'_, f64>) -> Result<(), AllocationError> {
            Ok(())
        }
        fn error(&self) -> f64 {
            self.error
        }
        fn expected_decrease(&self) -> f64 {
            self.decrease
        }
    }

    fn fixed(errors: &[f64], decreases: &[f64]) -> Vec<Box<dyn ErrorCriterion<f64>>> {
        errors
            .iter()
            .zip(decreases)
            .map(|(&e, &d)| Box::new(Fixed { error: e, decrease: d }) as Box<dyn ErrorCriterion<f64>>)
            .collect()
    }

    fn constant_sampler(k: i64) -> impl Sampler<f64> {
        move || Draw::keyed(BinKey::Index(k))
    }

    fn cycling_sampler(period: i64) -> impl Sampler<f64> {
        let mut i = 0;
        move || {
            i += 1;
            Draw::keyed(BinKey::Index(i % period))
        }
    }

    #[test]
    fn choose_next_examples() {
        assert_eq!(choose_next(&fixed(&[3.0, 1.0, 2.0], &[0.0; 3]), Loss::Max), 0);
        assert_eq!(choose_next(&fixed(&[0.0; 3], &[0.1, 0.4, 0.2]), Loss::Ave), 1);
        assert_eq!(choose_next(&fixed(&[2.0, 2.0], &[0.0; 2]), Loss::Max), 0);
        assert_eq!(argmax_lowest([f64::NAN, 1.0]), Some(1));
        assert_eq!(argmax_lowest(Vec::<f64>::new()), None);
    }

    #[test]
    fn fox_examples() {
        let mut fox = FoxCriterion::with_state(0.05, 2, 100).unwrap();
        let (e, _) = fox.error_and_decrease();
        assert_abs_diff_eq!(e, 3.841_458_820_694_124 / 200.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e, 0.0192073, epsilon = 1e-7);

        let fox = FoxCriterion::<f64>::with_state(0.05, 3, 101).unwrap();
        assert_abs_diff_eq!(fox.new_bin_probability(), 0.02, epsilon = 1e-15);

        for k in 2..40 {
            let mut a = FoxCriterion::with_state(0.05, k, 500).unwrap();
            let mut b = FoxCriterion::with_state(0.05, k, 501).unwrap();
            assert!(b.error_and_decrease().0 < a.error_and_decrease().0);
        }

        let mut single = FoxCriterion::with_state(0.05, 1, 50).unwrap();
        assert_eq!(single.error_and_decrease(), (0.0, 0.0));
        let mut tiny = FoxCriterion::with_state(0.05, 1, 1).unwrap();
        assert_eq!(tiny.error_and_decrease().1, 0.0);
        assert!(FoxCriterion::<f64>::new(1.5).is_err());
    }

    #[test]
    fn fox_decrease_formula() {
        let mut fox = FoxCriterion::with_state(0.05, 5, 40).unwrap();
        let (e, d) = fox.error_and_decrease();
        let q = |df: u32| crate::numerics::chi_square_quantile(QuantileQuery::new(df, 0.95).unwrap());
        let p = 4.0 / 39.0;
        let expected = q(4) / 80.0 - (p * q(5) / 82.0 + (1.0 - p) * q(4) / 82.0);
        assert_abs_diff_eq!(e, q(4) / 80.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d, expected, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn fox_decrease_nonnegative(k in 1u64..200, extra in 0u64..5000) {
            let n = k.max(2) + extra;
            let mut fox = FoxCriterion::with_state(0.05, k, n).unwrap();
            let (e, d) = fox.error_and_decrease();
            prop_assert!(e >= 0.0);
            prop_assert!(d >= 0.0, "k {} n {} d {}", k, n, d);
        }
    }

    #[test]
    fn fox_trait_view_matches_direct() {
        let mut crit = FoxCriterion::<f64>::new(0.05).unwrap();
        let mut m = BinnedMeasure::new();
        for k in [0, 1, 0, 2, 0, 1, 3] {
            let ev = m.insert(BinKey::Index(k));
            crit.observe(&Observation { measure: &m, event: &ev, features: &[] }).unwrap();
        }
        let mut direct = FoxCriterion::with_state(0.05, 4, 7).unwrap();
        let (e, d) = direct.error_and_decrease();
        assert_eq!(crit.error(), e);
        assert_eq!(crit.expected_decrease(), d);
    }

    #[test]
    fn sisson_examples() {
        let mut s = SissonCriterion::<f64>::new(3);
        for _ in 0..5 {
            s.update(&[1.0, 4.0, -2.0]).unwrap();
        }
        assert_eq!(s.error(), 0.0);

        let mut s = SissonCriterion::<f64>::new(1);
        assert_eq!(s.update(&[0.0]).unwrap(), (0.0, 0.0));
        let (e, d) = s.update(&[2.0]).unwrap();
        // Two-pass: mean 1, squared deviations 1 + 1, divisor n-1 = 1.
        let two_pass = ((0.0f64 - 1.0).powi(2) + (2.0f64 - 1.0).powi(2)) / 1.0;
        assert_abs_diff_eq!(e, two_pass / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 1.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(
            s.update(&[1.0, 2.0]),
            Err(AllocationError::FeatureLength { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn running_moments_match_two_pass() {
        let xs: Vec<f64> = (0..200).map(|i| 1e6 + ((i * 37) % 11) as f64 * 0.25).collect();
        let mut acc = RunningMoments::new();
        xs.iter().for_each(|&x| acc.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_abs_diff_eq!(acc.mean(), mean, epsilon = 1e-9);
        assert!((acc.variance() - var).abs() <= 1e-9 * var);
    }

    #[test]
    fn plan_validation() {
        assert!(AllocationPlan::uniform(10, 2, 5, Loss::Max).validate().is_ok());
        assert!(AllocationPlan::uniform(9, 2, 5, Loss::Max).validate().is_err());
        assert!(AllocationPlan::uniform(10, 2, 0, Loss::Max).validate().is_err());
        assert!(AllocationPlan::new(10, vec![], Loss::Max).validate().is_err());

        let mut samplers = vec![constant_sampler(0), constant_sampler(0)];
        let mut criteria = fixed(&[1.0, 1.0], &[1.0, 1.0]);
        let plan = AllocationPlan::uniform(3, 2, 2, Loss::Max);
        assert!(matches!(
            run_allocation(&mut samplers, &mut criteria, &plan),
            Err(AllocationError::Config(_))
        ));
    }

    #[test]
    fn symmetric_criteria_alternate() {
        let mut samplers = vec![cycling_sampler(3), cycling_sampler(3)];
        let mut criteria: Vec<Box<dyn ErrorCriterion<f64>>> =
            vec![Box::new(EqualCriterion::new()), Box::new(EqualCriterion::new())];
        let plan = AllocationPlan::uniform(10, 2, 1, Loss::Max).with_trace();
        let out = run_allocation(&mut samplers, &mut criteria, &plan).unwrap();
        assert_eq!(out.sizes, vec![5, 5]);
        let mut sizes = [1i64, 1];
        for step in out.trace.unwrap() {
            sizes[step.chosen] += 1;
            assert!((sizes[0] - sizes[1]).abs() <= 1);
        }
    }

    #[test]
    fn dominant_criterion_takes_everything_after_minima() {
        let mut samplers = vec![constant_sampler(0), constant_sampler(1), constant_sampler(2)];
        let mut criteria = fixed(&[0.1, 5.0, 0.2], &[0.0; 3]);
        let plan = AllocationPlan::new(100, vec![3, 4, 5], Loss::Max);
        let out = run_allocation(&mut samplers, &mut criteria, &plan).unwrap();
        assert_eq!(out.sizes, vec![3, 92, 5]);
        assert_eq!(out.measures[1].total(), 92);
    }

    #[test]
    fn grassberger_prefers_the_spread_sampler() {
        let mut samplers = vec![cycling_sampler(2), cycling_sampler(20)];
        let mut criteria: Vec<Box<dyn ErrorCriterion<f64>>> =
            vec![Box::new(GrassbergerCriterion::new(false)), Box::new(GrassbergerCriterion::new(false))];
        let plan = AllocationPlan::uniform(2000, 2, 20, Loss::Max);
        let out = run_allocation(&mut samplers, &mut criteria, &plan).unwrap();
        assert_eq!(out.sizes.iter().sum::<u64>(), 2000);
        assert!(out.sizes[1] > 5 * out.sizes[0], "{:?}", out.sizes);
    }

    #[test]
    fn trace_csv_layout() {
        let trace = vec![
            TraceStep { step: 2, chosen: 1, scores: vec![0.5, 0.75] },
            TraceStep { step: 3, chosen: 0, scores: vec![0.5, 0.25] },
        ];
        assert_eq!(trace_to_csv(&trace), "step,chosen,score_0,score_1\n2,1,0.5,0.75\n3,0,0.5,0.25\n");
    }

    #[test]
    fn loss_combination() {
        assert_eq!(Loss::Max.combine(&[1.0, 3.0, 2.0]), 3.0);
        assert_eq!(Loss::Ave.combine(&[1.0, 3.0, 2.0]), 2.0);
    }

    #[test]
    fn extent_and_split_criteria_track_measure() {
        let mut ext = ExtentCriterion::<f64>::new();
        let mut jsd = SplitJsdCriterion::<f64>::new();
        let mut m = BinnedMeasure::new();
        for k in [0, 1, 2, 3] {
            let ev = m.insert(BinKey::Index(k));
            let obs = Observation { measure: &m, event: &ev, features: &[] };
            ext.observe(&obs).unwrap();
            jsd.observe(&obs).unwrap();
        }
        assert_abs_diff_eq!(ext.error(), 16.0 / 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ext.expected_decrease(), 16.0 * (0.25 - 0.2), epsilon = 1e-10);
        // Halves {0,2} and {1,3} are disjoint: divergence ln 2.
        assert_abs_diff_eq!(jsd.error(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(jsd.expected_decrease(), 2f64.ln() / 5.0, epsilon = 1e-12);
    }
}
