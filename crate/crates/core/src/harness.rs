//! Replicated rival-sampling experiments.
//!
//! Every (replication, target) pair owns a random stream keyed by indices
//! alone, and the draws it produces are cached so that all strategies in a
//! replication see exactly the same sequence from each target. Replications
//! may run on any number of threads; results are folded in replication
//! order, so output does not depend on scheduling.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{
    run_allocation, AllocationError, AllocationPlan, Draw, EqualCriterion, ErrorCriterion, ExtentCriterion,
    FoxCriterion, GrassbergerCriterion, Loss, Sampler, SissonCriterion, SplitJsdCriterion, DEFAULT_MINIMUM,
};
use crate::binning::GridSpec;
use crate::measure::{jsd_across, BinKey, BinnedMeasure, JsdAccumulator, MeasureError};
use crate::samplers::{
    distance_profile, intensity_profile, reference_grid, simulate_poisson_process, stream_rng, ChangepointModel,
    GaussianSampler, PoissonProcessData, ProposalWeights, RjmcmcSampler, SamplerError, StreamPurpose,
};
use crate::scalar::Real;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "RIVAL_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

impl HarnessError {
    /// True for problems with the inputs rather than with the environment.
    pub fn is_config(&self) -> bool {
        !matches!(self, HarnessError::Io(_))
    }
}

fn config_error(message: impl Into<String>) -> HarnessError {
    HarnessError::Config(message.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Equal,
    Grassberger,
    Fox,
    Extent,
    Jsd,
    SissonI,
    SissonN,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equal => "equal",
            Strategy::Grassberger => "grassberger",
            Strategy::Fox => "fox",
            Strategy::Extent => "extent",
            Strategy::Jsd => "jsd",
            Strategy::SissonI => "sisson-i",
            Strategy::SissonN => "sisson-n",
        }
    }

    fn features(self) -> Features {
        match self {
            Strategy::SissonI => Features::Intensity,
            Strategy::SissonN => Features::Distance,
            _ => Features::None,
        }
    }

    fn criterion(self, config: &ExperimentConfig) -> Result<Box<dyn ErrorCriterion<f64>>, HarnessError> {
        Ok(match self {
            Strategy::Equal => Box::new(EqualCriterion::new()),
            Strategy::Grassberger => Box::new(GrassbergerCriterion::new(config.second_order)),
            Strategy::Fox => Box::new(FoxCriterion::new(config.delta)?),
            Strategy::Extent => Box::new(ExtentCriterion::new()),
            Strategy::Jsd => Box::new(SplitJsdCriterion::new()),
            Strategy::SissonI | Strategy::SissonN => Box::new(SissonCriterion::new(config.reference_points)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Features {
    None,
    Distance,
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTarget {
    #[serde(default)]
    pub mean: f64,
    pub sd: f64,
}

/// Changepoint posterior of a simulated piecewise-constant Poisson process.
/// Unset hyperparameters take the data-dependent defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonTarget {
    pub breaks: Vec<f64>,
    pub levels: Vec<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub gamma_shape: Option<f64>,
    #[serde(default)]
    pub gamma_rate: Option<f64>,
    #[serde(default)]
    pub max_changepoints: Option<usize>,
    #[serde(default)]
    pub proposal: Option<ProposalWeights>,
}

impl PoissonTarget {
    fn model(&self, data: &PoissonProcessData) -> Result<ChangepointModel, SamplerError> {
        let mut model = ChangepointModel::for_data(data);
        model.nu = self.nu.unwrap_or(model.nu);
        model.gamma_shape = self.gamma_shape.unwrap_or(model.gamma_shape);
        model.gamma_rate = self.gamma_rate.unwrap_or(model.gamma_rate);
        model.max_changepoints = self.max_changepoints;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    Gaussian(GaussianTarget),
    Poisson(PoissonTarget),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Minima {
    Uniform(u64),
    PerTarget(Vec<u64>),
}

impl Default for Minima {
    fn default() -> Self {
        Minima::Uniform(DEFAULT_MINIMUM)
    }
}

fn default_thin() -> usize {
    50
}

fn default_delta() -> f64 {
    0.05
}

fn default_reference_points() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub targets: Vec<TargetSpec>,
    pub grid: GridSpec,
    /// Optional per-target grids overriding `grid`.
    #[serde(default)]
    pub target_grids: Option<Vec<GridSpec>>,
    pub strategies: Vec<Strategy>,
    pub loss: Loss,
    pub budget: u64,
    #[serde(default)]
    pub minima: Minima,
    pub replications: usize,
    pub master_seed: u64,
    /// Seed for simulated event data; defaults to `master_seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Fox significance level.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_reference_points")]
    pub reference_points: usize,
    /// Second-order Grassberger φ for the error estimate.
    #[serde(default)]
    pub second_order: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn minima(&self) -> Vec<u64> {
        match &self.minima {
            Minima::Uniform(m) => vec![*m; self.targets.len()],
            Minima::PerTarget(v) => v.clone(),
        }
    }

    pub fn plan(&self) -> AllocationPlan {
        AllocationPlan::new(self.budget, self.minima(), self.loss)
    }

    pub fn grid_for(&self, target: usize) -> GridSpec {
        self.target_grids.as_ref().map_or(self.grid, |g| g[target])
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let m = self.targets.len();
        if m == 0 {
            return Err(config_error("no targets"));
        }
        if self.strategies.is_empty() {
            return Err(config_error("no strategies"));
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return Err(config_error("duplicate strategy"));
        }
        if self.replications == 0 {
            return Err(config_error("replications must be at least 1"));
        }
        if self.thin == 0 {
            return Err(config_error("thin must be at least 1"));
        }
        if self.reference_points == 0 {
            return Err(config_error("reference_points must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_error(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Minima::PerTarget(v) = &self.minima {
            if v.len() != m {
                return Err(config_error(format!("{} minima for {m} targets", v.len())));
            }
        }
        if let Some(grids) = &self.target_grids {
            if grids.len() != m {
                return Err(config_error(format!("{} target grids for {m} targets", grids.len())));
            }
        }
        self.plan().validate()?;

        let needs_features = self.strategies.iter().any(|s| s.features() != Features::None);
        for (j, target) in self.targets.iter().enumerate() {
            let grid = self.grid_for(j);
            grid.validate().map_err(|e| config_error(format!("target {j}: {e}")))?;
            match target {
                TargetSpec::Gaussian(g) => {
                    if !(g.sd > 0.0 && g.sd.is_finite() && g.mean.is_finite()) {
                        return Err(config_error(format!("target {j}: gaussian needs finite mean and sd > 0")));
                    }
                    if !grid.tails {
                        return Err(config_error(format!("target {j}: gaussian support needs a grid with tails")));
                    }
                    if needs_features {
                        return Err(config_error(format!("target {j}: sisson strategies need changepoint targets")));
                    }
                }
                TargetSpec::Poisson(p) => {
                    if grid.lower > 0.0 || grid.upper < 1.0 {
                        return Err(config_error(format!("target {j}: changepoint grid must cover [0, 1]")));
                    }
                    if p.levels.len() != p.breaks.len() + 1 {
                        return Err(config_error(format!("target {j}: need one more level than breaks")));
                    }
                    if p.levels.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                        return Err(config_error(format!("target {j}: levels must be nonnegative")));
                    }
                    if p.breaks.iter().any(|&b| !(b > 0.0 && b < 1.0)) || p.breaks.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(config_error(format!("target {j}: breaks must ascend within (0, 1)")));
                    }
                    for (name, v) in [("nu", p.nu), ("gamma_shape", p.gamma_shape), ("gamma_rate", p.gamma_rate)] {
                        if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                            return Err(config_error(format!("target {j}: {name} must be positive")));
                        }
                    }
                    if let Some(w) = &p.proposal {
                        w.validate()?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// A prepared target: simulated data and fitted model for Poisson targets.
#[derive(Debug, Clone)]
enum PreparedTarget {
    Gaussian(GaussianTarget),
    Poisson {
        data: Arc<PoissonProcessData>,
        model: ChangepointModel,
        weights: ProposalWeights,
    },
}

fn prepare_targets(config: &ExperimentConfig) -> Result<Vec<PreparedTarget>, HarnessError> {
    let seed = config.data_seed.unwrap_or(config.master_seed);
    config
        .targets
        .iter()
        .enumerate()
        .map(|(j, t)| {
            Ok(match t {
                TargetSpec::Gaussian(g) => PreparedTarget::Gaussian(g.clone()),
                TargetSpec::Poisson(p) => {
                    let mut rng = stream_rng(seed, StreamPurpose::Data, 0, j as u64);
                    let data = simulate_poisson_process(&p.breaks, &p.levels, &mut rng)?;
                    let model = p.model(&data)?;
                    PreparedTarget::Poisson {
                        data: Arc::new(data),
                        model,
                        weights: p.proposal.unwrap_or_default(),
                    }
                }
            })
        })
        .collect()
}

/// Simulated event data for each Poisson target (`None` for Gaussians).
pub fn simulated_data(config: &ExperimentConfig) -> Result<Vec<Option<PoissonProcessData>>, HarnessError> {
    config.validate()?;
    Ok(prepare_targets(config)?
        .into_iter()
        .map(|t| match t {
            PreparedTarget::Gaussian(_) => None,
            PreparedTarget::Poisson { data, .. } => Some((*data).clone()),
        })
        .collect())
}

enum Generator {
    Gaussian(GaussianSampler<ChaCha8Rng>),
    Poisson {
        chain: Box<RjmcmcSampler<ChaCha8Rng>>,
        features_rng: ChaCha8Rng,
    },
}

#[derive(Debug, Clone)]
struct CachedDraw {
    key: BinKey,
    distance: Vec<f64>,
    intensity: Vec<f64>,
}

/// Lazily extended record of one target's draws within one replication.
struct DrawCache {
    generator: Generator,
    grid: GridSpec,
    points: Arc<Vec<f64>>,
    want_distance: bool,
    want_intensity: bool,
    draws: Vec<CachedDraw>,
}

impl DrawCache {
    fn new(
        config: &ExperimentConfig,
        target: &PreparedTarget,
        points: Arc<Vec<f64>>,
        replication: usize,
        j: usize,
    ) -> Result<Self, HarnessError> {
        let (r, t) = (replication as u64, j as u64);
        let draws_rng = stream_rng(config.master_seed, StreamPurpose::Draws, r, t);
        let generator = match target {
            PreparedTarget::Gaussian(g) => Generator::Gaussian(GaussianSampler::new(g.mean, g.sd, draws_rng)?),
            PreparedTarget::Poisson { data, model, weights } => Generator::Poisson {
                chain: Box::new(RjmcmcSampler::new(*model, *weights, data.clone(), config.thin, draws_rng)?),
                features_rng: stream_rng(config.master_seed, StreamPurpose::Features, r, t),
            },
        };
        let wanted: BTreeSet<Features> = config.strategies.iter().map(|s| s.features()).collect();
        Ok(Self {
            generator,
            grid: config.grid_for(j),
            points,
            want_distance: wanted.contains(&Features::Distance),
            want_intensity: wanted.contains(&Features::Intensity),
            draws: Vec::new(),
        })
    }

    fn generate(&mut self) -> CachedDraw {
        match &mut self.generator {
            Generator::Gaussian(g) => CachedDraw {
                key: self.grid.bin_value(g.next_value()).expect("tailed grid covers the real line"),
                distance: Vec::new(),
                intensity: Vec::new(),
            },
            Generator::Poisson { chain, features_rng } => {
                let config = chain.next_config();
                let distance = if self.want_distance {
                    distance_profile(&config, &self.points)
                } else {
                    Vec::new()
                };
                let intensity = if self.want_intensity {
                    intensity_profile(&config, chain.data(), chain.model(), &self.points, features_rng)
                } else {
                    Vec::new()
                };
                CachedDraw {
                    key: self.grid.bin_config(config.points()).expect("grid covers [0, 1]"),
                    distance,
                    intensity,
                }
            }
        }
    }

    fn get(&mut self, i: usize) -> &CachedDraw {
        while self.draws.len() <= i {
            let d = self.generate();
            self.draws.push(d);
        }
        &self.draws[i]
    }
}

/// Reads one strategy's draws from a shared cache, starting at the first.
struct Cursor<'c> {
    cache: &'c mut DrawCache,
    position: usize,
    features: Features,
}

impl Sampler<f64> for Cursor<'_> {
    fn draw(&mut self) -> Draw<f64> {
        let features = self.features;
        let d = self.cache.get(self.position);
        self.position += 1;
        Draw {
            key: d.key.clone(),
            features: match features {
                Features::None => Vec::new(),
                Features::Distance => d.distance.clone(),
                Features::Intensity => d.intensity.clone(),
            },
        }
    }
}

struct ReplicationOutcome {
    /// `[strategy] -> (sizes, measures)` with one entry per target.
    per_strategy: Vec<(Vec<u64>, Vec<BinnedMeasure<f64>>)>,
}

fn run_replication(
    config: &ExperimentConfig,
    targets: &[PreparedTarget],
    points: &Arc<Vec<f64>>,
    replication: usize,
) -> Result<ReplicationOutcome, HarnessError> {
    let mut caches = targets
        .iter()
        .enumerate()
        .map(|(j, t)| DrawCache::new(config, t, points.clone(), replication, j))
        .collect::<Result<Vec<_>, _>>()?;
    let plan = config.plan();
    let mut per_strategy = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let mut cursors: Vec<Cursor<'_>> = caches
            .iter_mut()
            .map(|cache| Cursor {
                cache,
                position: 0,
                features: strategy.features(),
            })
            .collect();
        let mut criteria = (0..targets.len())
            .map(|_| strategy.criterion(config))
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = run_allocation(&mut cursors, &mut criteria, &plan)?;
        per_strategy.push((outcome.sizes, outcome.measures));
    }
    Ok(ReplicationOutcome { per_strategy })
}

/// Results for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// `sizes[r][j]`: samples given to target `j` in replication `r`.
    pub sizes: Vec<Vec<u64>>,
    /// Cross-replication divergence per target; NaN when there is only one
    /// replication.
    pub ekl: Vec<f64>,
    /// Per-target `ekl` combined by the configured loss.
    pub loss: f64,
}

impl StrategyResult {
    pub fn mean_size(&self, target: usize) -> f64 {
        let total: u64 = self.sizes.iter().map(|s| s[target]).sum();
        total as f64 / self.sizes.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub strategies: Vec<StrategyResult>,
}

impl ExperimentResult {
    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// Worker count from the environment, else the available parallelism.
pub fn thread_count_from_env() -> Result<usize, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(config_error(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every strategy over all replications using the thread count from
/// the environment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    run_experiment_with_threads(config, thread_count_from_env()?)
}

pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let targets = prepare_targets(config)?;
    let points = Arc::new(reference_grid(config.reference_points));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| config_error(e.to_string()))?;

    let s = config.strategies.len();
    let m = targets.len();
    let mut sizes: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(config.replications); s];
    let mut accumulators: Vec<Vec<JsdAccumulator<f64>>> = vec![vec![JsdAccumulator::new(); m]; s];

    let chunk = (threads.max(1) * 2).max(1);
    let mut start = 0;
    while start < config.replications {
        let end = (start + chunk).min(config.replications);
        let outcomes: Vec<Result<ReplicationOutcome, HarnessError>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|r| run_replication(config, &targets, &points, r))
                .collect()
        });
        for outcome in outcomes {
            let outcome = outcome?;
            for (k, (sz, measures)) in outcome.per_strategy.into_iter().enumerate() {
                for (acc, measure) in accumulators[k].iter_mut().zip(&measures) {
                    acc.add(measure)?;
                }
                sizes[k].push(sz);
            }
        }
        start = end;
    }

    let strategies = config
        .strategies
        .iter()
        .zip(sizes)
        .zip(accumulators)
        .map(|((&strategy, sizes), accs)| {
            let ekl = accs
                .iter()
                .map(|a| if a.members() < 2 { Ok(f64::NAN) } else { a.finish() })
                .collect::<Result<Vec<_>, _>>()?;
            let loss = config.loss.combine(&ekl);
            Ok(StrategyResult {
                strategy,
                sizes,
                ekl,
                loss,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        strategies,
    })
}

/// Cross-run divergence of one target's measures under one strategy.
pub fn ground_truth_ekl<T: Real>(measures: &[BinnedMeasure<T>]) -> Result<T, HarnessError> {
    if measures.len() < 2 {
        return Err(config_error(format!(
            "ground truth needs at least 2 measures, got {}",
            measures.len()
        )));
    }
    Ok(jsd_across(measures)?)
}

pub fn summary_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("strategy,target,mean_n,ekl,loss\n");
    for s in &result.strategies {
        for (j, ekl) in s.ekl.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", s.strategy.name(), j, s.mean_size(j), ekl, s.loss);
        }
    }
    out
}

pub fn sizes_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("strategy,target,replication,n\n");
    for s in &result.strategies {
        for j in 0..result.config.targets.len() {
            for (r, sizes) in s.sizes.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", s.strategy.name(), j, r, sizes[j]);
            }
        }
    }
    out
}

/// Writes `summary.csv` and `sizes.csv` into `dir`, creating it if needed.
pub fn emit_results(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), summary_csv(result))?;
    fs::write(dir.join("sizes.csv"), sizes_csv(result))?;
    Ok(())
}
