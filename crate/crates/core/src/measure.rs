//! Binned empirical measures with running sums for O(1) estimator updates.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::estimators::phi;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("measure is empty")]
    EmptyMeasure,
    #[error("no measures supplied")]
    NoMeasures,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Identifier of one histogram bin.
///
/// Univariate targets use [`BinKey::Index`]; the two tail bins of a grid are
/// `-1` and `bins`. Variable-dimension targets use [`BinKey::Tuple`], an
/// ascending sequence of per-coordinate indices (empty for the
/// zero-dimensional state).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinKey {
    Index(i64),
    Tuple(Vec<i64>),
}

impl BinKey {
    /// Builds a tuple key, sorting the indices.
    pub fn tuple(mut indices: Vec<i64>) -> Self {
        indices.sort_unstable();
        BinKey::Tuple(indices)
    }
}

impl fmt::Display for BinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinKey::Index(i) => write!(f, "{i}"),
            BinKey::Tuple(ix) => {
                for (pos, i) in ix.iter().enumerate() {
                    if pos > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{i}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for BinKey {
    type Err = String;

    /// Plain integers parse as [`BinKey::Index`]; empty strings and
    /// comma-joined lists parse as [`BinKey::Tuple`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(BinKey::Tuple(Vec::new()));
        }
        if s.contains(',') {
            let ix = s
                .split(',')
                .map(|p| p.trim().parse::<i64>().map_err(|e| format!("bad index {p:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(BinKey::tuple(ix));
        }
        s.parse::<i64>()
            .map(BinKey::Index)
            .map_err(|e| format!("bad key {s:?}: {e}"))
    }
}

/// What changed in a measure on one insertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertEvent {
    pub key: BinKey,
    /// Count of the bin before the insertion (0 for a newly opened bin).
    pub previous_count: u64,
    /// Total sample count after the insertion.
    pub new_total: u64,
}

impl InsertEvent {
    /// Count of the bin after the insertion.
    pub fn count(&self) -> u64 {
        self.previous_count + 1
    }

    pub fn opened_bin(&self) -> bool {
        self.previous_count == 0
    }
}

/// Running sums recomputed from scratch; used to audit the maintained ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureSums<T> {
    pub sum_plogp: T,
    pub sum_phi: T,
    pub sum_t: T,
}

/// Binned empirical measure.
///
/// Besides the counts `n_i`, three sums are maintained on every insert:
/// `Σ n_i ln n_i`, `Σ φ(n_i)` and `Σ [(n_i + 1) φ(n_i) - n_i φ(n_i + 1)]`.
#[derive(Debug, Clone, Default)]
pub struct BinnedMeasure<T> {
    counts: HashMap<BinKey, u64>,
    total: u64,
    sum_plogp: T,
    sum_phi: T,
    sum_t: T,
}

fn plogp<T: Real>(n: u64) -> T {
    if n == 0 {
        T::zero()
    } else {
        let x = T::count(n);
        x * x.ln()
    }
}

/// `(n + 1) φ(n) - n φ(n + 1)`, zero for an empty bin.
fn decrease_term<T: Real>(n: u64, phi_n: T, phi_next: T) -> T {
    if n == 0 {
        T::zero()
    } else {
        T::count(n + 1) * phi_n - T::count(n) * phi_next
    }
}

impl<T: Real> BinnedMeasure<T> {
    pub fn new() -> Self {
        Self {
            counts: HashMap::new(),
            total: 0,
            sum_plogp: T::zero(),
            sum_phi: T::zero(),
            sum_t: T::zero(),
        }
    }

    /// Builds a measure by inserting each `(key, count)` pair.
    pub fn from_counts<I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (BinKey, u64)>,
    {
        let mut m = Self::new();
        for (key, count) in counts {
            for _ in 0..count {
                m.insert(key.clone());
            }
        }
        m
    }

    pub fn insert(&mut self, key: BinKey) -> InsertEvent {
        let slot = self.counts.entry(key.clone()).or_insert(0);
        let previous = *slot;
        *slot += 1;
        let current = previous + 1;
        self.total += 1;

        let phi_prev: T = phi(previous, false);
        let phi_cur: T = phi(current, false);
        let phi_next: T = phi(current + 1, false);
        self.sum_plogp += plogp::<T>(current) - plogp::<T>(previous);
        self.sum_phi += phi_cur - phi_prev;
        self.sum_t += decrease_term(current, phi_cur, phi_next) - decrease_term(previous, phi_prev, phi_cur);

        InsertEvent {
            key,
            previous_count: previous,
            new_total: self.total,
        }
    }

    /// Total number of samples `n`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of nonempty bins `K`.
    pub fn occupied_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, key: &BinKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Unordered iteration over `(key, count)`.
    pub fn iter(&self) -> impl Iterator<Item = (&BinKey, u64)> + '_ {
        self.counts.iter().map(|(k, &c)| (k, c))
    }

    /// Counts sorted by key.
    pub fn sorted_counts(&self) -> Vec<(&BinKey, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn sum_plogp(&self) -> T {
        self.sum_plogp
    }

    pub fn sum_phi(&self) -> T {
        self.sum_phi
    }

    pub fn sum_t(&self) -> T {
        self.sum_t
    }

    pub fn recompute_sums(&self) -> MeasureSums<T> {
        let mut sums = MeasureSums {
            sum_plogp: T::zero(),
            sum_phi: T::zero(),
            sum_t: T::zero(),
        };
        for (_, c) in self.sorted_counts() {
            let phi_c: T = phi(c, false);
            sums.sum_plogp += plogp::<T>(c);
            sums.sum_phi += phi_c;
            sums.sum_t += decrease_term(c, phi_c, phi(c + 1, false));
        }
        sums
    }

    /// Shannon entropy of the normalized measure, in nats.
    pub fn entropy(&self) -> Result<T, MeasureError> {
        if self.total == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        let n = T::count(self.total);
        Ok((n.ln() - self.sum_plogp / n).max(T::zero()))
    }

    /// Writes `key<TAB>count` lines in key order.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for (key, count) in self.sorted_counts() {
            out.push_str(&format!("{key}\t{count}\n"));
        }
        out
    }

    /// Parses the format written by [`BinnedMeasure::to_dump`]. Blank lines
    /// and lines starting with `#` are skipped; repeated keys accumulate.
    pub fn from_dump(text: &str) -> Result<Self, MeasureError> {
        let mut m = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, count) = line.rsplit_once('\t').ok_or_else(|| MeasureError::Parse {
                line: line_no,
                message: "expected key<TAB>count".into(),
            })?;
            let key: BinKey = key.parse().map_err(|message| MeasureError::Parse {
                line: line_no,
                message,
            })?;
            let count: u64 = count.trim().parse().map_err(|e| MeasureError::Parse {
                line: line_no,
                message: format!("bad count: {e}"),
            })?;
            for _ in 0..count {
                m.insert(key.clone());
            }
        }
        Ok(m)
    }
}

/// Streaming Jensen-Shannon divergence over a sequence of measures.
///
/// The mixture gives every measure weight `1/M` on its normalized
/// probabilities, so measures of different sizes are averaged as
/// distributions. Results depend only on the order measures are added.
#[derive(Debug, Clone, Default)]
pub struct JsdAccumulator<T> {
    mixture: BTreeMap<BinKey, T>,
    entropy_sum: T,
    members: usize,
}

impl<T: Real> JsdAccumulator<T> {
    pub fn new() -> Self {
        Self {
            mixture: BTreeMap::new(),
            entropy_sum: T::zero(),
            members: 0,
        }
    }

    pub fn add(&mut self, measure: &BinnedMeasure<T>) -> Result<(), MeasureError> {
        let h = measure.entropy()?;
        let n = T::count(measure.total());
        for (key, c) in measure.iter() {
            let p = T::count(c) / n;
            match self.mixture.get_mut(key) {
                Some(v) => *v += p,
                None => {
                    self.mixture.insert(key.clone(), p);
                }
            }
        }
        self.entropy_sum += h;
        self.members += 1;
        Ok(())
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn finish(&self) -> Result<T, MeasureError> {
        if self.members == 0 {
            return Err(MeasureError::NoMeasures);
        }
        let m = T::count(self.members as u64);
        let mut h_mix = T::zero();
        for &v in self.mixture.values() {
            let p = v / m;
            if p > T::zero() {
                h_mix -= p * p.ln();
            }
        }
        Ok((h_mix - self.entropy_sum / m).max(T::zero()))
    }
}

/// Jensen-Shannon divergence of the normalized measures with equal weights.
pub fn jsd_across<'a, T, I>(measures: I) -> Result<T, MeasureError>
where
    T: Real,
    I: IntoIterator<Item = &'a BinnedMeasure<T>>,
{
    let mut acc = JsdAccumulator::new();
    for m in measures {
        acc.add(m)?;
    }
    acc.finish()
}
