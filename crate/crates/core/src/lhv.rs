//! Hidden-variable model: every run carries a joint assignment of definite
//! outcomes to all three settings, drawn from a fixed distribution, and a
//! measurement merely reads the assigned value off.
//!
//! Sampling is deterministic for a given seed and independent of the worker
//! count: runs are split into fixed-size batches, each batch gets its own
//! counter-mode RNG stream, and batch results are merged in batch order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

use crate::geometry::{Outcome, SettingLabel};
use crate::records::{CountTable, RunRecord};
use crate::{Error, Result};

/// A joint assignment of one definite outcome to each of the three settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JointReality {
    pub alpha: Outcome,
    pub beta: Outcome,
    pub gamma: Outcome,
}

impl JointReality {
    pub const COUNT: usize = 8;

    pub fn new(alpha: Outcome, beta: Outcome, gamma: Outcome) -> Self {
        JointReality { alpha, beta, gamma }
    }

    /// All 8 assignments in key order (`+++`, `++-`, ..., `---`).
    pub fn all() -> [JointReality; 8] {
        let mut out = [JointReality::new(Outcome::Plus, Outcome::Plus, Outcome::Plus); 8];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = JointReality::from_index(i);
        }
        out
    }

    /// Index in 0..8; `+++` is 0, `---` is 7, middle bit is the B outcome.
    pub fn index(&self) -> usize {
        self.alpha.index() * 4 + self.beta.index() * 2 + self.gamma.index()
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < 8, "joint reality index out of range");
        let bit = |i: usize| Outcome::from_index(i).expect("bit is 0 or 1");
        JointReality {
            alpha: bit(index / 4),
            beta: bit((index / 2) % 2),
            gamma: bit(index % 2),
        }
    }

    /// The outcome this assignment gives the setting.
    pub fn outcome_for(&self, setting: SettingLabel) -> Outcome {
        match setting {
            SettingLabel::A => self.alpha,
            SettingLabel::B => self.beta,
            SettingLabel::C => self.gamma,
        }
    }

    /// Three-character form like `+-+`, ordered A, B, C.
    pub fn key(&self) -> String {
        [self.alpha, self.beta, self.gamma]
            .iter()
            .map(|o| if *o == Outcome::Plus { '+' } else { '-' })
            .collect()
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let outcomes: Vec<Outcome> = key
            .chars()
            .map(|ch| match ch {
                '+' => Ok(Outcome::Plus),
                '-' => Ok(Outcome::Minus),
                _ => Err(Error::Parse(format!("invalid reality key {key:?}"))),
            })
            .collect::<Result<_>>()?;
        if outcomes.len() != 3 {
            return Err(Error::Parse(format!("invalid reality key {key:?}")));
        }
        Ok(JointReality::new(outcomes[0], outcomes[1], outcomes[2]))
    }
}

/// Probability distribution over the 8 joint assignments.
///
/// Weights are normalized on construction; negative, non-finite, or all-zero
/// weights are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RealityDistribution {
    weights: [f64; 8],
}

impl RealityDistribution {
    pub fn new(weights: [f64; 8]) -> Result<Self> {
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "weight for {} is {}",
                    JointReality::from_index(i).key(),
                    w
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {sum}, expected a positive finite total"
            )));
        }
        let mut normalized = weights;
        for w in &mut normalized {
            *w /= sum;
        }
        Ok(RealityDistribution {
            weights: normalized,
        })
    }

    pub fn uniform() -> Self {
        RealityDistribution {
            weights: [1.0 / 8.0; 8],
        }
    }

    /// All probability on a single assignment.
    pub fn point_mass(reality: JointReality) -> Self {
        let mut weights = [0.0; 8];
        weights[reality.index()] = 1.0;
        RealityDistribution { weights }
    }

    /// A random distribution: 8 uniform draws, normalized. Useful for
    /// property-style sweeps.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut weights = [0.0; 8];
        for w in &mut weights {
            *w = rng.random();
        }
        // Eight uniform draws summing to exactly zero does not happen.
        RealityDistribution::new(weights).expect("random weights are valid")
    }

    pub fn weight(&self, reality: JointReality) -> f64 {
        self.weights[reality.index()]
    }

    pub fn weights(&self) -> [f64; 8] {
        self.weights
    }

    /// Draws one assignment using a single uniform variate. Assignments with
    /// zero weight are never produced.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JointReality {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = i;
                if u < acc {
                    return JointReality::from_index(i);
                }
            }
        }
        // Rounding can leave acc a hair below 1; fall back to the final
        // positive-weight assignment.
        JointReality::from_index(last_positive)
    }

    /// Exact probability of observing the outcome pair when the ordered
    /// setting pair is measured: the total weight of assignments consistent
    /// with both readings.
    pub fn pair_prob(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> f64 {
        JointReality::all()
            .iter()
            .filter(|r| r.outcome_for(pair.0) == outcomes.0 && r.outcome_for(pair.1) == outcomes.1)
            .map(|r| self.weight(*r))
            .sum()
    }

    /// Exact expectation of the product of the two settings' outcomes.
    pub fn expected_value(&self, x: SettingLabel, y: SettingLabel) -> f64 {
        JointReality::all()
            .iter()
            .map(|r| {
                self.weight(*r)
                    * f64::from(r.outcome_for(x).value())
                    * f64::from(r.outcome_for(y).value())
            })
            .sum()
    }
}

impl Serialize for RealityDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        // Key order (+ before -) matches index order under lexicographic sort.
        let map: BTreeMap<String, f64> = JointReality::all()
            .iter()
            .map(|r| (r.key(), self.weight(*r)))
            .collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RealityDistribution {
    fn deserialize<D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut weights = [0.0; 8];
        for (key, value) in &map {
            let reality = JointReality::from_key(key).map_err(D::Error::custom)?;
            weights[reality.index()] = *value;
        }
        if map.len() != 8 {
            let missing: Vec<String> = JointReality::all()
                .iter()
                .map(|r| r.key())
                .filter(|k| !map.contains_key(k))
                .collect();
            return Err(D::Error::custom(format!(
                "distribution must list all 8 assignments; missing {missing:?}"
            )));
        }
        RealityDistribution::new(weights).map_err(D::Error::custom)
    }
}

/// Histogram over the hidden assignments actually drawn during a simulation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RealityTally {
    counts: [u64; 8],
}

impl RealityTally {
    pub fn new() -> Self {
        RealityTally::default()
    }

    pub fn add(&mut self, reality: JointReality) {
        self.counts[reality.index()] += 1;
    }

    pub fn count(&self, reality: JointReality) -> u64 {
        self.counts[reality.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &RealityTally) {
        for (dst, src) in self.counts.iter_mut().zip(other.counts.iter()) {
            *dst += src;
        }
    }

    /// Number of drawn assignments consistent with every listed
    /// (setting, outcome) constraint.
    pub fn matching(&self, constraints: &[(SettingLabel, Outcome)]) -> u64 {
        JointReality::all()
            .iter()
            .filter(|r| constraints.iter().all(|(s, o)| r.outcome_for(*s) == *o))
            .map(|r| self.count(*r))
            .sum()
    }

    /// Counts keyed by assignment, in key order.
    pub fn as_map(&self) -> BTreeMap<String, u64> {
        JointReality::all()
            .iter()
            .map(|r| (r.key(), self.count(*r)))
            .collect()
    }
}

/// Reads both outcomes for the ordered setting pair off the assignment.
pub fn lhv_run(
    reality: JointReality,
    first_setting: SettingLabel,
    second_setting: SettingLabel,
) -> RunRecord {
    RunRecord {
        first_setting,
        second_setting,
        first_outcome: reality.outcome_for(first_setting),
        second_outcome: reality.outcome_for(second_setting),
        hidden_reality: Some(reality),
    }
}

/// Runs are processed in fixed-size batches so results do not depend on the
/// number of worker threads.
pub(crate) const BATCH_SIZE: u64 = 1 << 16;

/// Each logical series of a protocol gets its own block of RNG streams;
/// batch `i` of series `s` uses stream `s * STREAM_SPAN + i`.
pub(crate) const STREAM_SPAN: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    /// Keep per-run records (memory scales with run count).
    pub keep_records: bool,
    /// Thread count; `None` uses the global rayon pool. The results are
    /// identical either way.
    pub workers: Option<usize>,
    /// First RNG stream id for this simulation; protocols running several
    /// series under one seed give each series a disjoint stream block.
    pub stream_base: u64,
}

pub(crate) fn with_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Domain(format!("could not build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub(crate) fn batch_sizes(n_runs: u64) -> impl Iterator<Item = (u64, u64)> {
    let n_batches = n_runs.div_ceil(BATCH_SIZE);
    (0..n_batches).map(move |i| (i, (n_runs - i * BATCH_SIZE).min(BATCH_SIZE)))
}

#[derive(Clone, Debug)]
pub struct LhvSimulation {
    pub table: CountTable,
    pub tally: RealityTally,
    pub records: Option<Vec<RunRecord>>,
}

/// Simulates `n_runs` runs with a uniformly random ordered setting pair per
/// run. Deterministic in `seed`; the worker count never changes the result.
pub fn simulate_lhv(
    dist: &RealityDistribution,
    n_runs: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<LhvSimulation> {
    simulate(dist, None, n_runs, seed, options)
}

/// Simulates runs of one fixed ordered setting pair.
pub fn simulate_lhv_fixed_pair(
    dist: &RealityDistribution,
    pair: (SettingLabel, SettingLabel),
    n_runs: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<LhvSimulation> {
    simulate(dist, Some(pair), n_runs, seed, options)
}

fn simulate(
    dist: &RealityDistribution,
    fixed_pair: Option<(SettingLabel, SettingLabel)>,
    n_runs: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<LhvSimulation> {
    let keep = options.keep_records;
    let stream_base = options.stream_base;
    with_pool(options.workers, || {
        let batches: Vec<_> = batch_sizes(n_runs)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(index, size)| {
                lhv_batch(dist, fixed_pair, seed, stream_base + index, size, keep)
            })
            .collect();
        let mut sim = LhvSimulation {
            table: CountTable::new(),
            tally: RealityTally::new(),
            records: keep.then(Vec::new),
        };
        for (table, tally, records) in batches {
            sim.table.merge(&table);
            sim.tally.merge(&tally);
            if let (Some(all), Some(batch)) = (sim.records.as_mut(), records) {
                all.extend(batch);
            }
        }
        sim
    })
}

fn lhv_batch(
    dist: &RealityDistribution,
    fixed_pair: Option<(SettingLabel, SettingLabel)>,
    seed: u64,
    stream: u64,
    size: u64,
    keep_records: bool,
) -> (CountTable, RealityTally, Option<Vec<RunRecord>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut table = CountTable::new();
    let mut tally = RealityTally::new();
    let mut records = keep_records.then(|| Vec::with_capacity(size as usize));
    for _ in 0..size {
        // Draw order is fixed: pair index (free-pair mode only), then the
        // assignment.
        let (first, second) = match fixed_pair {
            Some(pair) => pair,
            None => {
                let pair_index: usize = rng.random_range(0..9);
                (
                    SettingLabel::from_index(pair_index / 3).expect("pair index stays below 9"),
                    SettingLabel::from_index(pair_index % 3).expect("pair index stays below 9"),
                )
            }
        };
        let reality = dist.sample(&mut rng);
        let record = lhv_run(reality, first, second);
        table.record(&record);
        tally.add(reality);
        if let Some(records) = records.as_mut() {
            records.push(record);
        }
    }
    (table, tally, records)
}

/// Ratio of "assignments consistent with both readings across all runs" to
/// "runs where that ordered pair was measured and produced those readings".
///
/// With a uniformly chosen ordered pair out of 9, the ratio converges to 9.
pub fn counting_identity_ratio(
    tally: &RealityTally,
    table: &CountTable,
    pair: (SettingLabel, SettingLabel),
    outcomes: (Outcome, Outcome),
) -> Result<f64> {
    let denominator = table.count(pair.0, outcomes.0, pair.1, outcomes.1);
    if denominator == 0 {
        return Err(Error::InsufficientStatistics(format!(
            "no runs observed for cell {}{},{}{}",
            pair.0, outcomes.0, pair.1, outcomes.1
        )));
    }
    let numerator = tally.matching(&[(pair.0, outcomes.0), (pair.1, outcomes.1)]);
    Ok(numerator as f64 / denominator as f64)
}
