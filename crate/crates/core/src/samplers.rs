//! Sample sources: seeded Gaussian draws, inhomogeneous Poisson process
//! simulation, and a reversible-jump sampler for the changepoint posterior
//! of a piecewise-constant Poisson intensity.
//!
//! The changepoint model puts a Poisson(ν) prior on the number of
//! changepoints `k`, uniform order statistics on their locations in (0, 1)
//! and independent Gamma(a, b) priors on the segment intensities. The
//! intensities are integrated out, so each segment contributes
//!
//! ```text
//! a ln b - lnΓ(a) + lnΓ(a + c) - (a + c) ln(b + L)
//! ```
//!
//! for `c` events over length `L`, and the sampler is a plain
//! Metropolis-Hastings chain over (k, τ) with birth, death and move
//! proposals.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::log_gamma;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid changepoint configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid event data: {0}")]
    InvalidData(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// What a random stream is used for. Streams with different purposes never
/// overlap for the same (seed, replication, target).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Draws = 1,
    Features = 2,
    Data = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-style stream derivation: the key comes from (seed, purpose) and
/// the ChaCha stream id from (replication, target), so a stream never
/// depends on how much any other stream has been consumed.
pub fn stream_rng(master_seed: u64, purpose: StreamPurpose, replication: u64, target: u64) -> ChaCha8Rng {
    assert!(target < 1 << 20, "target index out of range");
    assert!(replication < 1 << 44, "replication index out of range");
    let mut state = master_seed ^ (purpose as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((replication << 20) | target);
    rng
}

/// One N(mean, sd²) variate.
pub fn gaussian_draw<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> Result<f64, SamplerError> {
    validate_gaussian(mean, sd)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + sd * z)
}

fn validate_gaussian(mean: f64, sd: f64) -> Result<(), SamplerError> {
    if sd > 0.0 && sd.is_finite() && mean.is_finite() {
        Ok(())
    } else {
        Err(SamplerError::InvalidModel(format!(
            "gaussian needs finite mean and sd > 0, got mean {mean}, sd {sd}"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSampler<R> {
    mean: f64,
    sd: f64,
    rng: R,
}

impl<R: Rng> GaussianSampler<R> {
    pub fn new(mean: f64, sd: f64, rng: R) -> Result<Self, SamplerError> {
        validate_gaussian(mean, sd)?;
        Ok(Self { mean, sd, rng })
    }

    pub fn next_value(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.mean + self.sd * z
    }
}

/// Ascending changepoint locations in the open interval (0, 1).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangepointConfig {
    points: Vec<f64>,
}

impl ChangepointConfig {
    pub fn new(points: Vec<f64>) -> Result<Self, SamplerError> {
        if points.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(SamplerError::InvalidConfig(format!("locations must lie in (0, 1): {points:?}")));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SamplerError::InvalidConfig(format!("locations must be strictly ascending: {points:?}")));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(lower, upper)` ends of segment `s`, with `0` and `1` at the extremes.
    fn segment(&self, s: usize) -> (f64, f64) {
        let lo = if s == 0 { 0.0 } else { self.points[s - 1] };
        let hi = self.points.get(s).copied().unwrap_or(1.0);
        (lo, hi)
    }

    /// Index of the segment containing `t`.
    pub fn segment_of(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p <= t)
    }

    /// Formats as `k;τ1,τ2,...`.
    pub fn to_line(&self) -> String {
        let locs: Vec<String> = self.points.iter().map(|p| p.to_string()).collect();
        format!("{};{}", self.points.len(), locs.join(","))
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let (k, rest) = line.trim().split_once(';').ok_or("expected k;locations")?;
        let k: usize = k.trim().parse().map_err(|e| format!("bad k: {e}"))?;
        let points = if rest.trim().is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad location {p:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()?
        };
        if points.len() != k {
            return Err(format!("k = {k} but {} locations", points.len()));
        }
        Self::new(points).map_err(|e| e.to_string())
    }
}

/// Event times of a point process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoissonProcessData {
    events: Vec<f64>,
    horizon: f64,
}

impl PoissonProcessData {
    pub const HORIZON: f64 = 1.0;

    pub fn new(events: Vec<f64>) -> Result<Self, SamplerError> {
        if events.iter().any(|&e| !(0.0..=Self::HORIZON).contains(&e)) {
            return Err(SamplerError::InvalidData("event times must lie in [0, 1]".into()));
        }
        if events.windows(2).any(|w| w[0] > w[1]) {
            return Err(SamplerError::InvalidData("event times must be ascending".into()));
        }
        Ok(Self {
            events,
            horizon: Self::HORIZON,
        })
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of events strictly before `x`; everything for `x ≥ horizon`.
    fn count_before(&self, x: f64) -> usize {
        if x >= self.horizon {
            self.events.len()
        } else {
            self.events.partition_point(|&e| e < x)
        }
    }

    /// Events in `[lo, hi)`, with the final segment closed at the horizon.
    pub fn count_between(&self, lo: f64, hi: f64) -> usize {
        self.count_before(hi) - self.count_before(lo)
    }

    /// Parses newline-separated ascending event times.
    pub fn parse(text: &str) -> Result<Self, SamplerError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|e| SamplerError::Parse {
                line: i + 1,
                message: format!("bad event time: {e}"),
            })?;
            events.push(v);
        }
        Self::new(events)
    }

    pub fn to_text(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Simulates a piecewise-constant Poisson process on [0, 1].
pub fn simulate_poisson_process<R: Rng + ?Sized>(
    breaks: &[f64],
    levels: &[f64],
    rng: &mut R,
) -> Result<PoissonProcessData, SamplerError> {
    if levels.len() != breaks.len() + 1 {
        return Err(SamplerError::InvalidModel(format!(
            "{} breaks need {} levels, got {}",
            breaks.len(),
            breaks.len() + 1,
            levels.len()
        )));
    }
    if levels.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(SamplerError::InvalidModel("levels must be finite and nonnegative".into()));
    }
    ChangepointConfig::new(breaks.to_vec())?;

    let mut events = Vec::new();
    for (s, &level) in levels.iter().enumerate() {
        let lo = if s == 0 { 0.0 } else { breaks[s - 1] };
        let hi = breaks.get(s).copied().unwrap_or(1.0);
        let mean = level * (hi - lo);
        if mean <= 0.0 {
            continue;
        }
        let count = Poisson::new(mean)
            .map_err(|e| SamplerError::InvalidModel(e.to_string()))?
            .sample(rng) as usize;
        events.extend((0..count).map(|_| lo + (hi - lo) * rng.random::<f64>()));
    }
    events.sort_by(f64::total_cmp);
    PoissonProcessData::new(events)
}

/// Prior settings for the changepoint posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangepointModel {
    /// Prior mean number of changepoints.
    pub nu: f64,
    pub gamma_shape: f64,
    /// Rate of the Gamma intensity prior.
    pub gamma_rate: f64,
    /// Optional hard cap on `k`; configurations above it have zero mass.
    #[serde(default)]
    pub max_changepoints: Option<usize>,
}

impl ChangepointModel {
    pub fn new(nu: f64, gamma_shape: f64, gamma_rate: f64) -> Result<Self, SamplerError> {
        let m = Self {
            nu,
            gamma_shape,
            gamma_rate,
            max_changepoints: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// `nu = 1`, `a = 1` and `b = 1 / N`, so the prior mean intensity equals
    /// the observed event rate.
    pub fn for_data(data: &PoissonProcessData) -> Self {
        let n = data.len().max(1) as f64;
        Self {
            nu: 1.0,
            gamma_shape: 1.0,
            gamma_rate: 1.0 / n,
            max_changepoints: None,
        }
    }

    pub fn with_cap(mut self, max_changepoints: usize) -> Self {
        self.max_changepoints = Some(max_changepoints);
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        for (name, v) in [("nu", self.nu), ("gamma_shape", self.gamma_shape), ("gamma_rate", self.gamma_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SamplerError::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn admits(&self, k: usize) -> bool {
        self.max_changepoints.is_none_or(|cap| k <= cap)
    }
}

/// Segment evidence with a lookup table for `lnΓ(a + c)`.
#[derive(Debug, Clone)]
struct SegmentEvidence {
    shape: f64,
    rate: f64,
    constant: f64,
    ln_gamma_shape_plus: Vec<f64>,
}

impl SegmentEvidence {
    fn new(model: &ChangepointModel, max_count: usize) -> Self {
        let a = model.gamma_shape;
        let table = (0..=max_count)
            .map(|c| log_gamma(a + c as f64).expect("positive shape"))
            .collect();
        Self {
            shape: a,
            rate: model.gamma_rate,
            constant: a * model.gamma_rate.ln() - log_gamma(a).expect("positive shape"),
            ln_gamma_shape_plus: table,
        }
    }

    fn log_evidence(&self, count: usize, length: f64) -> f64 {
        let ac = self.shape + count as f64;
        self.constant + self.ln_gamma_shape_plus[count] - ac * (self.rate + length).ln()
    }

    fn segment(&self, data: &PoissonProcessData, lo: f64, hi: f64) -> f64 {
        self.log_evidence(data.count_between(lo, hi), hi - lo)
    }
}

/// Unnormalized log posterior of a configuration, intensities integrated out.
pub fn config_log_posterior(
    model: &ChangepointModel,
    data: &PoissonProcessData,
    config: &ChangepointConfig,
) -> Result<f64, SamplerError> {
    model.validate()?;
    ChangepointConfig::new(config.points.clone())?;
    if !model.admits(config.len()) {
        return Ok(f64::NEG_INFINITY);
    }
    let a = model.gamma_shape;
    let b = model.gamma_rate;
    let constant = a * b.ln() - log_gamma(a).expect("positive shape");
    let k = config.len();
    let mut total = -model.nu + k as f64 * model.nu.ln();
    for s in 0..=k {
        let (lo, hi) = config.segment(s);
        let c = data.count_between(lo, hi) as f64;
        total += constant + log_gamma(a + c).expect("positive shape") - (a + c) * (b + hi - lo).ln();
    }
    Ok(total)
}

/// Proposal probabilities for birth, death and move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalWeights {
    pub birth: f64,
    pub death: f64,
    pub relocate: f64,
}

impl Default for ProposalWeights {
    fn default() -> Self {
        Self {
            birth: 1.0 / 3.0,
            death: 1.0 / 3.0,
            relocate: 1.0 / 3.0,
        }
    }
}

impl ProposalWeights {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let all = [self.birth, self.death, self.relocate];
        if all.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(SamplerError::InvalidModel("proposal weights must be positive".into()));
        }
        Ok(())
    }

    /// Normalized `(birth, death, move)` probabilities at dimension `k`;
    /// at `k = 0` the death mass is split evenly between the other two.
    fn at(&self, k: usize) -> (f64, f64, f64) {
        let total = self.birth + self.death + self.relocate;
        let (b, d, m) = (self.birth / total, self.death / total, self.relocate / total);
        if k == 0 {
            (b + d / 2.0, 0.0, m + d / 2.0)
        } else {
            (b, d, m)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Proposal {
    Birth(f64),
    Death(usize),
    Move(usize, f64),
    Stay,
}

/// Draws a proposal. Both the reference step and the incremental sampler
/// go through here so they consume randomness identically.
fn propose<R: Rng + ?Sized>(state: &[f64], weights: &ProposalWeights, rng: &mut R) -> Proposal {
    let k = state.len();
    let (pb, pd, _) = weights.at(k);
    let u: f64 = rng.random();
    if u < pb {
        Proposal::Birth(rng.random::<f64>())
    } else if u < pb + pd {
        Proposal::Death(rng.random_range(0..k))
    } else if k == 0 {
        Proposal::Stay
    } else {
        let i = rng.random_range(0..k);
        let lo = if i == 0 { 0.0 } else { state[i - 1] };
        let hi = state.get(i + 1).copied().unwrap_or(1.0);
        Proposal::Move(i, lo + (hi - lo) * rng.random::<f64>())
    }
}

/// Log proposal ratio for a birth from dimension `k` (reverse: death at `k + 1`).
fn birth_log_proposal_ratio(weights: &ProposalWeights, k: usize) -> f64 {
    let (pb, _, _) = weights.at(k);
    let (_, pd_next, _) = weights.at(k + 1);
    pd_next.ln() - ((k + 1) as f64).ln() - pb.ln()
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Builds the proposed configuration, or `None` if it is degenerate
/// (a location on 0 or on an existing changepoint).
fn apply_proposal(state: &[f64], proposal: Proposal) -> Option<Vec<f64>> {
    match proposal {
        Proposal::Stay => None,
        Proposal::Birth(tau) => {
            let pos = state.partition_point(|&p| p < tau);
            if tau <= 0.0 || state.get(pos) == Some(&tau) {
                return None;
            }
            let mut next = state.to_vec();
            next.insert(pos, tau);
            Some(next)
        }
        Proposal::Death(i) => {
            let mut next = state.to_vec();
            next.remove(i);
            Some(next)
        }
        Proposal::Move(i, tau) => {
            let lo = if i == 0 { 0.0 } else { state[i - 1] };
            let hi = state.get(i + 1).copied().unwrap_or(1.0);
            if tau <= lo || tau >= hi {
                return None;
            }
            let mut next = state.to_vec();
            next[i] = tau;
            Some(next)
        }
    }
}

/// One reversible-jump step evaluated with full posterior recomputation.
pub fn rjmcmc_step<R: Rng + ?Sized>(
    state: &ChangepointConfig,
    model: &ChangepointModel,
    weights: &ProposalWeights,
    data: &PoissonProcessData,
    rng: &mut R,
) -> Result<ChangepointConfig, SamplerError> {
    let k = state.len();
    let proposal = propose(&state.points, weights, rng);
    let Some(next) = apply_proposal(&state.points, proposal) else {
        if !matches!(proposal, Proposal::Stay) {
            rng.random::<f64>();
        }
        return Ok(state.clone());
    };
    let next = ChangepointConfig { points: next };
    let delta = config_log_posterior(model, data, &next)? - config_log_posterior(model, data, state)?;
    let log_ratio = match proposal {
        Proposal::Birth(_) => delta + birth_log_proposal_ratio(weights, k),
        Proposal::Death(_) => delta - birth_log_proposal_ratio(weights, k - 1),
        _ => delta,
    };
    Ok(if accept(log_ratio, rng) { next } else { state.clone() })
}

/// Reversible-jump sampler with thinning and O(log N) local updates.
#[derive(Debug, Clone)]
pub struct RjmcmcSampler<R> {
    model: ChangepointModel,
    weights: ProposalWeights,
    data: Arc<PoissonProcessData>,
    evidence: SegmentEvidence,
    state: Vec<f64>,
    thin: usize,
    rng: R,
    steps: u64,
    accepted: u64,
}

impl<R: Rng> RjmcmcSampler<R> {
    /// Starts at the empty configuration.
    pub fn new(
        model: ChangepointModel,
        weights: ProposalWeights,
        data: Arc<PoissonProcessData>,
        thin: usize,
        rng: R,
    ) -> Result<Self, SamplerError> {
        model.validate()?;
        weights.validate()?;
        if thin == 0 {
            return Err(SamplerError::InvalidModel("thin factor must be at least 1".into()));
        }
        let evidence = SegmentEvidence::new(&model, data.len());
        Ok(Self {
            model,
            weights,
            data,
            evidence,
            state: Vec::new(),
            thin,
            rng,
            steps: 0,
            accepted: 0,
        })
    }

    fn segment(&self, lo: f64, hi: f64) -> f64 {
        self.evidence.segment(&self.data, lo, hi)
    }

    fn neighbours(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { 0.0 } else { self.state[i - 1] };
        let hi = self.state.get(i + 1).copied().unwrap_or(1.0);
        (lo, hi)
    }

    /// One Metropolis-Hastings step.
    pub fn step(&mut self) {
        self.steps += 1;
        let k = self.state.len();
        let proposal = propose(&self.state, &self.weights, &mut self.rng);
        let ln_nu = self.model.nu.ln();
        match proposal {
            Proposal::Stay => {}
            Proposal::Birth(tau) => {
                let pos = self.state.partition_point(|&p| p < tau);
                if tau <= 0.0 || self.state.get(pos) == Some(&tau) || !self.model.admits(k + 1) {
                    self.rng.random::<f64>();
                    return;
                }
                let lo = if pos == 0 { 0.0 } else { self.state[pos - 1] };
                let hi = self.state.get(pos).copied().unwrap_or(1.0);
                let delta = self.segment(lo, tau) + self.segment(tau, hi) - self.segment(lo, hi) + ln_nu;
                if accept(delta + birth_log_proposal_ratio(&self.weights, k), &mut self.rng) {
                    self.state.insert(pos, tau);
                    self.accepted += 1;
                }
            }
            Proposal::Death(i) => {
                let (lo, hi) = self.neighbours(i);
                let tau = self.state[i];
                let delta = self.segment(lo, hi) - self.segment(lo, tau) - self.segment(tau, hi) - ln_nu;
                if accept(delta - birth_log_proposal_ratio(&self.weights, k - 1), &mut self.rng) {
                    self.state.remove(i);
                    self.accepted += 1;
                }
            }
            Proposal::Move(i, tau) => {
                let (lo, hi) = self.neighbours(i);
                if tau <= lo || tau >= hi {
                    self.rng.random::<f64>();
                    return;
                }
                let old = self.state[i];
                let delta =
                    self.segment(lo, tau) + self.segment(tau, hi) - self.segment(lo, old) - self.segment(old, hi);
                if accept(delta, &mut self.rng) {
                    self.state[i] = tau;
                    self.accepted += 1;
                }
            }
        }
    }

    /// Advances `thin` steps and returns the retained state.
    pub fn next_config(&mut self) -> ChangepointConfig {
        for _ in 0..self.thin {
            self.step();
        }
        self.current()
    }

    pub fn current(&self) -> ChangepointConfig {
        ChangepointConfig {
            points: self.state.clone(),
        }
    }

    pub fn data(&self) -> &Arc<PoissonProcessData> {
        &self.data
    }

    pub fn model(&self) -> &ChangepointModel {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// Distance from `t` to the nearest changepoint; `1.0` (the domain length)
/// when there are none.
pub fn nearest_distance(config: &ChangepointConfig, t: f64) -> f64 {
    config
        .points
        .iter()
        .map(|&p| (t - p).abs())
        .fold(PoissonProcessData::HORIZON, f64::min)
}

/// Conditional posterior Gamma(a + c, b + L) of the intensity of segment `s`.
fn segment_gamma(
    config: &ChangepointConfig,
    data: &PoissonProcessData,
    model: &ChangepointModel,
    s: usize,
) -> Gamma<f64> {
    let (lo, hi) = config.segment(s);
    let c = data.count_between(lo, hi) as f64;
    Gamma::new(model.gamma_shape + c, 1.0 / (model.gamma_rate + hi - lo)).expect("positive gamma parameters")
}

/// Conditional posterior mean of the intensity at `t`.
pub fn conditional_intensity_mean(
    config: &ChangepointConfig,
    data: &PoissonProcessData,
    model: &ChangepointModel,
    t: f64,
) -> f64 {
    let (lo, hi) = config.segment(config.segment_of(t));
    let c = data.count_between(lo, hi) as f64;
    (model.gamma_shape + c) / (model.gamma_rate + hi - lo)
}

/// Both functions of interest at one reference point: nearest-changepoint
/// distance and an intensity drawn from its conditional posterior.
pub fn functions_of_interest<R: Rng + ?Sized>(
    config: &ChangepointConfig,
    data: &PoissonProcessData,
    model: &ChangepointModel,
    t: f64,
    rng: &mut R,
) -> (f64, f64) {
    let draw = segment_gamma(config, data, model, config.segment_of(t)).sample(rng);
    (nearest_distance(config, t), draw)
}

pub fn distance_profile(config: &ChangepointConfig, points: &[f64]) -> Vec<f64> {
    points.iter().map(|&t| nearest_distance(config, t)).collect()
}

/// Intensity function drawn once per segment and read off at each point.
pub fn intensity_profile<R: Rng + ?Sized>(
    config: &ChangepointConfig,
    data: &PoissonProcessData,
    model: &ChangepointModel,
    points: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let levels: Vec<f64> = (0..=config.len())
        .map(|s| segment_gamma(config, data, model, s).sample(rng))
        .collect();
    points.iter().map(|&t| levels[config.segment_of(t)]).collect()
}

/// `count` equally spaced points covering [0, 1] inclusive.
pub fn reference_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

/// Seeds a generator from another, for callers that want independent
/// children without the stream machinery.
pub fn child_rng<R: RngCore>(parent: &mut R) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: Vec<u64> = (0..4).map({
            let mut r = stream_rng(7, StreamPurpose::Draws, 3, 1);
            move |_| r.next_u64()
        }).collect();
        let mut again = stream_rng(7, StreamPurpose::Draws, 3, 1);
        assert!(a.iter().all(|&x| x == again.next_u64()));
        let mut other_target = stream_rng(7, StreamPurpose::Draws, 3, 2);
        let mut other_rep = stream_rng(7, StreamPurpose::Draws, 4, 1);
        let mut other_purpose = stream_rng(7, StreamPurpose::Features, 3, 1);
        assert_ne!(a[0], other_target.next_u64());
        assert_ne!(a[0], other_rep.next_u64());
        assert_ne!(a[0], other_purpose.next_u64());
    }

    #[test]
    fn gaussian_mean_and_determinism() {
        let mut r = rng(1);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| gaussian_draw(0.0, 1.0, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");

        let mut s1 = GaussianSampler::new(0.0, 2.0, rng(9)).unwrap();
        let mut s2 = GaussianSampler::new(0.0, 2.0, rng(9)).unwrap();
        let mut beyond = 0;
        for _ in 0..100_000 {
            let x = s1.next_value();
            assert_eq!(x, s2.next_value());
            if x.abs() > 10.0 {
                beyond += 1;
            }
        }
        assert!(beyond <= 1);
        assert!(GaussianSampler::new(0.0, 0.0, rng(1)).is_err());
    }

    #[test]
    fn poisson_process_simulation() {
        let empty = simulate_poisson_process(&[0.5], &[0.0, 0.0], &mut rng(2)).unwrap();
        assert!(empty.is_empty());
        assert!(simulate_poisson_process(&[0.5], &[1.0], &mut rng(2)).is_err());

        let reps = 2000;
        let mut r = rng(3);
        let counts: Vec<f64> = (0..reps)
            .map(|_| simulate_poisson_process(&[], &[200.0], &mut r).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        // Standard error of the mean is sqrt(200/2000); of the variance about
        // 200 * sqrt(2/2000).
        assert!((mean - 200.0).abs() < 5.0 * (200.0f64 / reps as f64).sqrt(), "mean {mean}");
        assert!((var - 200.0).abs() < 5.0 * 200.0 * (2.0 / reps as f64).sqrt(), "var {var}");

        let mut total = 0.0;
        for _ in 0..200 {
            let d = simulate_poisson_process(&[1.0 / 3.0, 2.0 / 3.0], &[200.0, 300.0, 400.0], &mut r).unwrap();
            assert!(d.events().windows(2).all(|w| w[0] <= w[1]));
            total += d.len() as f64;
        }
        let mean = total / 200.0;
        assert!((mean - 300.0).abs() < 5.0 * (300.0f64 / 200.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn log_posterior_empty_data() {
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let data = PoissonProcessData::new(vec![]).unwrap();
        let v = config_log_posterior(&model, &data, &ChangepointConfig::empty()).unwrap();
        assert_abs_diff_eq!(v, -1.0 - 2f64.ln(), epsilon = 1e-14);
    }

    /// `P(k=1)/P(k=0)` by trapezoidal quadrature of the k=1 posterior over τ.
    fn quadrature_odds(model: &ChangepointModel, data: &PoissonProcessData) -> f64 {
        let base = config_log_posterior(model, data, &ChangepointConfig::empty()).unwrap();
        // Integrand is smooth between events; split the integral there.
        let mut knots = vec![0.0];
        knots.extend(data.events().iter().copied());
        knots.push(1.0);
        let mut integral = 0.0;
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let steps = 4000;
            let h = (b - a) / steps as f64;
            for i in 0..steps {
                let f = |x: f64| {
                    let x = x.clamp(a + 1e-12, b - 1e-12);
                    let c = ChangepointConfig::new(vec![x]).unwrap();
                    (config_log_posterior(model, data, &c).unwrap() - base).exp()
                };
                // Simpson on each cell.
                let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
                integral += h / 6.0 * (f(x0) + 4.0 * f(0.5 * (x0 + x1)) + f(x1));
            }
        }
        integral
    }

    fn toy_data() -> PoissonProcessData {
        PoissonProcessData::new(vec![0.62, 0.81, 0.93]).unwrap()
    }

    #[test]
    fn quadrature_is_converged() {
        // For k=1 the integrand is piecewise elementary; cross-check the
        // quadrature against a much finer midpoint rule.
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let data = toy_data();
        let odds = quadrature_odds(&model, &data);
        let base = config_log_posterior(&model, &data, &ChangepointConfig::empty()).unwrap();
        let n = 2_000_000;
        let midpoint: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                let c = ChangepointConfig::new(vec![x]).unwrap();
                (config_log_posterior(&model, &data, &c).unwrap() - base).exp()
            })
            .sum::<f64>()
            / n as f64;
        assert!((odds - midpoint).abs() <= 1e-6 * odds, "{odds} vs {midpoint}");
    }

    #[test]
    fn needless_split_costs_only_prior() {
        // Splitting an event-free stretch changes the evidence only through
        // segment lengths; with the rate large relative to the lengths it is
        // dominated by the ln ν prior term.
        let model = ChangepointModel::new(0.5, 1.0, 1.0).unwrap();
        let data = PoissonProcessData::new(vec![]).unwrap();
        let k0 = config_log_posterior(&model, &data, &ChangepointConfig::empty()).unwrap();
        let k1 = config_log_posterior(&model, &data, &ChangepointConfig::new(vec![0.5]).unwrap()).unwrap();
        assert!(k1 < k0);
        assert_eq!(k0, config_log_posterior(&model, &data, &ChangepointConfig::empty()).unwrap());
    }

    #[test]
    fn config_validation_and_lines() {
        assert!(ChangepointConfig::new(vec![0.5, 0.2]).is_err());
        assert!(ChangepointConfig::new(vec![0.0]).is_err());
        assert!(ChangepointConfig::new(vec![1.0]).is_err());
        let c = ChangepointConfig::new(vec![0.25, 0.5]).unwrap();
        assert_eq!(c.to_line(), "2;0.25,0.5");
        assert_eq!(ChangepointConfig::from_line("2;0.25,0.5").unwrap(), c);
        assert_eq!(ChangepointConfig::from_line("0;").unwrap(), ChangepointConfig::empty());
        assert!(ChangepointConfig::from_line("3;0.1").is_err());
    }

    #[test]
    fn event_file_parsing() {
        let d = PoissonProcessData::parse("0.1\n0.25\n\n0.9\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(PoissonProcessData::parse(&d.to_text()).unwrap(), d);
        assert!(PoissonProcessData::parse("0.5\n0.2\n").is_err());
        assert!(PoissonProcessData::parse("1.5\n").is_err());
        assert!(matches!(PoissonProcessData::parse("abc\n"), Err(SamplerError::Parse { line: 1, .. })));
    }

    #[test]
    fn functions_of_interest_examples() {
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let cfg = ChangepointConfig::new(vec![0.3]).unwrap();
        let data = PoissonProcessData::new(vec![]).unwrap();
        let (d, _) = functions_of_interest(&cfg, &data, &model, 0.4, &mut rng(0));
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-12);
        assert_eq!(nearest_distance(&ChangepointConfig::empty(), 0.77), 1.0);

        // 99 events in the second half of [0,1] with a changepoint at 0.5.
        let events: Vec<f64> = (0..99).map(|i| 0.5 + 0.5 * (i as f64 + 0.5) / 99.0).collect();
        let data = PoissonProcessData::new(events).unwrap();
        let cfg = ChangepointConfig::new(vec![0.5]).unwrap();
        assert_abs_diff_eq!(conditional_intensity_mean(&cfg, &data, &model, 0.75), 100.0 / 1.5, epsilon = 1e-12);
        let mut r = rng(4);
        let draws = 20_000;
        let mean: f64 = (0..draws)
            .map(|_| functions_of_interest(&cfg, &data, &model, 0.75, &mut r).1)
            .sum::<f64>()
            / draws as f64;
        // Gamma(100, rate 1.5): sd = 10/1.5.
        let se = (100.0f64).sqrt() / 1.5 / (draws as f64).sqrt();
        assert!((mean - 100.0 / 1.5).abs() < 5.0 * se, "mean {mean}");
    }

    #[test]
    fn profiles_and_grid() {
        let g = reference_grid(100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 1.0);
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let data = toy_data();
        let cfg = ChangepointConfig::new(vec![0.5]).unwrap();
        let prof = intensity_profile(&cfg, &data, &model, &g, &mut rng(1));
        assert!(prof[..50].iter().all(|&v| v == prof[0]));
        assert!(prof[50..].iter().all(|&v| v == prof[99]));
        let dist = distance_profile(&cfg, &[0.0, 0.5, 0.9]);
        assert_eq!(dist, vec![0.5, 0.0, 0.4]);
    }

    #[test]
    fn zero_changepoint_move_is_noop() {
        // Weights that always propose a move.
        let weights = ProposalWeights { birth: 1e-300, death: 1e-300, relocate: 1.0 };
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let data = toy_data();
        let next = rjmcmc_step(&ChangepointConfig::empty(), &model, &weights, &data, &mut rng(5)).unwrap();
        assert!(next.is_empty());
    }

    #[test]
    fn incremental_sampler_matches_reference_step() {
        let data = Arc::new(simulate_poisson_process(&[0.4], &[50.0, 120.0], &mut rng(6)).unwrap());
        let model = ChangepointModel::for_data(&data);
        let weights = ProposalWeights::default();
        let mut fast = RjmcmcSampler::new(model, weights, data.clone(), 1, rng(77)).unwrap();
        let mut slow_rng = rng(77);
        let mut slow = ChangepointConfig::empty();
        for _ in 0..20_000 {
            fast.step();
            slow = rjmcmc_step(&slow, &model, &weights, &data, &mut slow_rng).unwrap();
            assert_eq!(fast.current(), slow);
        }
        assert!(fast.acceptance_rate() > 0.0);
    }

    #[test]
    fn chain_matches_quadrature_with_cap() {
        let data = Arc::new(toy_data());
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap().with_cap(1);
        let odds = quadrature_odds(&model, &data);
        let expected = odds / (1.0 + odds);
        let mut s = RjmcmcSampler::new(model, ProposalWeights::default(), data, 10, rng(12)).unwrap();
        let draws = 40_000;
        let hits = (0..draws).filter(|_| s.next_config().len() == 1).count() as f64;
        let freq = hits / draws as f64;
        // Loose binomial bound inflated for autocorrelation.
        let se = (expected * (1.0 - expected) / draws as f64).sqrt();
        assert!((freq - expected).abs() < 10.0 * se, "freq {freq} vs {expected}");
    }

    #[test]
    fn prior_recovered_without_data_influence() {
        // With a huge prior rate the evidence is flat in τ and k, so the
        // chain samples the Poisson(ν) prior on k.
        let data = Arc::new(PoissonProcessData::new(vec![]).unwrap());
        let model = ChangepointModel::new(1.0, 1.0, 1e9).unwrap();
        let mut s = RjmcmcSampler::new(model, ProposalWeights::default(), data, 20, rng(13)).unwrap();
        let draws = 40_000;
        let ks: Vec<f64> = (0..draws).map(|_| s.next_config().len() as f64).collect();
        let mean = ks.iter().sum::<f64>() / draws as f64;
        let p0 = ks.iter().filter(|&&k| k == 0.0).count() as f64 / draws as f64;
        assert!((mean - 1.0).abs() < 5.0 * 2.0 / (draws as f64).sqrt(), "mean {mean}");
        assert!((p0 - (-1.0f64).exp()).abs() < 0.02, "p0 {p0}");
    }

    #[test]
    fn thinning_advances_the_chain() {
        let data = Arc::new(toy_data());
        let model = ChangepointModel::new(1.0, 1.0, 1.0).unwrap();
        let mut s = RjmcmcSampler::new(model, ProposalWeights::default(), data, 50, rng(8)).unwrap();
        s.next_config();
        s.next_config();
        assert_eq!(s.steps(), 100);
        assert!(RjmcmcSampler::new(model, ProposalWeights::default(), Arc::new(toy_data()), 0, rng(8)).is_err());
    }
}
