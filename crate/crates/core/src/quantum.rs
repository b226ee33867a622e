//! Qubit model for two consecutive measurements along configurable axes.
//!
//! A state is its Bloch vector `r` (|r| <= 1). Measuring along unit axis `x`
//! yields +1 with probability (1 + x.r)/2 and leaves the state at `+x` or
//! `-x`; an optional depolarization factor shrinks the Bloch vector between
//! the two measurements.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Config, Direction, Outcome, SettingLabel};
use crate::lhv::{batch_sizes, with_pool, SimOptions};
use crate::records::{CountTable, RunRecord};
use crate::{Error, Result};

/// A qubit state as a Bloch vector; pure states sit on the unit sphere,
/// depolarization moves them inward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState {
    bloch: [f64; 3],
}

impl QubitState {
    /// Pure state polarized along `direction`.
    pub fn from_direction(direction: &Direction) -> QubitState {
        QubitState {
            bloch: direction.components(),
        }
    }

    /// Maximally mixed state (zero Bloch vector).
    pub fn maximally_mixed() -> QubitState {
        QubitState { bloch: [0.0; 3] }
    }

    /// State with the given Bloch vector: pure on the unit sphere, mixed
    /// inside it. Errors when the norm exceeds 1.
    pub fn from_bloch(bloch: [f64; 3]) -> Result<QubitState> {
        let norm_sq: f64 = bloch.iter().map(|component| component * component).sum();
        if !norm_sq.is_finite() || norm_sq > 1.0 + 16.0 * f64::EPSILON {
            return Err(Error::Domain(format!(
                "Bloch vector [{}, {}, {}] must have norm at most 1",
                bloch[0], bloch[1], bloch[2]
            )));
        }
        Ok(QubitState { bloch })
    }

    /// Pure superposition with amplitude `s` on the +1 eigenstate of axis
    /// `e`, amplitude sqrt(1-s^2) with relative phase `phi` on the -1
    /// eigenstate. Requires `s` in [0, 1] and finite `phi`.
    ///
    /// The phase reference is fixed by the axis: with `e = +z`, `s = 1/sqrt(2)`
    /// and `phi = 0` give the state polarized along `+x`.
    pub fn from_amplitudes(s: f64, phi: f64, e: &Direction) -> Result<QubitState> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!(
                "amplitude s = {s} must lie in [0, 1]"
            )));
        }
        if !phi.is_finite() {
            return Err(Error::Domain(format!("phase phi = {phi} must be finite")));
        }
        let ec = e.components();
        // Transverse frame: Gram-Schmidt the basis axis least aligned with e.
        let axis = (0..3)
            .min_by(|&i, &j| ec[i].abs().partial_cmp(&ec[j].abs()).unwrap())
            .unwrap();
        let mut u = [0.0; 3];
        u[axis] = 1.0;
        for i in 0..3 {
            u[i] -= ec[axis] * ec[i];
        }
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        for component in &mut u {
            *component /= norm;
        }
        let v = [
            ec[1] * u[2] - ec[2] * u[1],
            ec[2] * u[0] - ec[0] * u[2],
            ec[0] * u[1] - ec[1] * u[0],
        ];
        let transverse = 2.0 * s * (1.0 - s * s).max(0.0).sqrt();
        let axial = 2.0 * s * s - 1.0;
        let bloch = [
            transverse * (phi.cos() * u[0] + phi.sin() * v[0]) + axial * ec[0],
            transverse * (phi.cos() * u[1] + phi.sin() * v[1]) + axial * ec[1],
            transverse * (phi.cos() * u[2] + phi.sin() * v[2]) + axial * ec[2],
        ];
        Ok(QubitState { bloch })
    }

    pub fn bloch(&self) -> [f64; 3] {
        self.bloch
    }

    /// Probability of reading `outcome` when measuring along `axis`.
    pub fn measure_prob(&self, axis: &Direction, outcome: Outcome) -> f64 {
        let ac = axis.components();
        let projection = ac[0] * self.bloch[0] + ac[1] * self.bloch[1] + ac[2] * self.bloch[2];
        (0.5 * (1.0 + outcome.sign() * projection)).clamp(0.0, 1.0)
    }

    /// Post-measurement state after reading `outcome` along `axis`. Errors
    /// when that branch has probability zero.
    pub fn collapse(&self, axis: &Direction, outcome: Outcome) -> Result<QubitState> {
        if self.measure_prob(axis, outcome) <= 0.0 {
            return Err(Error::ZeroProbabilityBranch);
        }
        Ok(QubitState::after_reading(axis, outcome))
    }

    /// The state any measurement leaves behind: fully polarized along the
    /// signed axis.
    pub fn after_reading(axis: &Direction, outcome: Outcome) -> QubitState {
        let ac = axis.components();
        QubitState {
            bloch: [
                outcome.sign() * ac[0],
                outcome.sign() * ac[1],
                outcome.sign() * ac[2],
            ],
        }
    }

    /// Shrinks the Bloch vector by `lambda` (1 = no noise, 0 = fully mixed).
    pub fn depolarized(&self, lambda: f64) -> QubitState {
        QubitState {
            bloch: [
                lambda * self.bloch[0],
                lambda * self.bloch[1],
                lambda * self.bloch[2],
            ],
        }
    }
}

/// Exact probability of reading `outcomes.0` along `x` and then `outcomes.1`
/// along `y`, starting from `state`, with no noise between the measurements.
pub fn pair_prob_exact(
    state: &QubitState,
    x: &Direction,
    y: &Direction,
    outcomes: (Outcome, Outcome),
) -> f64 {
    pair_prob_depolarized(state, x, y, outcomes, 1.0)
}

/// Same as [`pair_prob_exact`] with depolarization `lambda` applied between
/// the two measurements.
pub fn pair_prob_depolarized(
    state: &QubitState,
    x: &Direction,
    y: &Direction,
    outcomes: (Outcome, Outcome),
    lambda: f64,
) -> f64 {
    let first = state.measure_prob(x, outcomes.0);
    let second =
        0.5 * (1.0 + outcomes.0.sign() * outcomes.1.sign() * lambda * x.dot(y));
    first * second.clamp(0.0, 1.0)
}

/// Exact expectation of the product of the two consecutive readings. It is
/// independent of the initial state: the four-cell combination of
/// [`pair_prob_exact`] collapses to the inner product of the axes.
pub fn expected_value_exact(x: &Direction, y: &Direction) -> f64 {
    x.dot(y)
}

/// Initial-state preparation, resolvable against a measurement
/// configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatePrep {
    /// Eigenstate of one configured axis, e.g. `{"eigenstate": "A+"}`.
    Eigenstate { eigenstate: SettingEigenstate },
    /// Explicit superposition over one axis's eigenbasis:
    /// `{"s": 0.6, "phi": 0.5, "e": [0, 0, 1]}`.
    Amplitudes { s: f64, phi: f64, e: Direction },
}

impl StatePrep {
    pub fn eigenstate(setting: SettingLabel, outcome: Outcome) -> StatePrep {
        StatePrep::Eigenstate {
            eigenstate: SettingEigenstate { setting, outcome },
        }
    }

    pub fn resolve(&self, config: &Config) -> Result<QubitState> {
        match self {
            StatePrep::Eigenstate { eigenstate } => Ok(QubitState::after_reading(
                &config.direction(eigenstate.setting),
                eigenstate.outcome,
            )),
            StatePrep::Amplitudes { s, phi, e } => QubitState::from_amplitudes(*s, *phi, e),
        }
    }
}

/// A named eigenstate like `A+`: the `outcome` eigenstate of the axis bound
/// to `setting`. Serialized as that two-character string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SettingEigenstate {
    pub setting: SettingLabel,
    pub outcome: Outcome,
}

impl Serialize for SettingEigenstate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let sign = if self.outcome == Outcome::Plus { '+' } else { '-' };
        serializer.serialize_str(&format!("{}{}", self.setting, sign))
    }
}

impl<'de> Deserialize<'de> for SettingEigenstate {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let text = String::deserialize(deserializer)?;
        let mut chars = text.chars();
        let bad = || D::Error::custom(format!("invalid eigenstate label {text:?}"));
        let setting: SettingLabel = chars
            .next()
            .ok_or_else(bad)?
            .to_string()
            .parse()
            .map_err(|_| bad())?;
        let outcome = match chars.next() {
            Some('+') => Outcome::Plus,
            Some('-') => Outcome::Minus,
            _ => return Err(bad()),
        };
        if chars.next().is_some() {
            return Err(bad());
        }
        Ok(SettingEigenstate { setting, outcome })
    }
}

#[derive(Clone, Debug)]
pub struct QuantumSimulation {
    pub table: CountTable,
    pub records: Option<Vec<RunRecord>>,
}

/// Simulates runs with a uniformly random ordered setting pair per run.
/// Deterministic in `seed`; the worker count never changes the result.
pub fn simulate_quantum(
    state: &QubitState,
    config: &Config,
    n_runs: u64,
    seed: u64,
    depolarization: f64,
    options: &SimOptions,
) -> Result<QuantumSimulation> {
    simulate(state, config, None, n_runs, seed, depolarization, options)
}

/// Simulates runs of one fixed ordered setting pair (a single series of the
/// two-series protocol).
pub fn simulate_quantum_fixed_pair(
    state: &QubitState,
    config: &Config,
    pair: (SettingLabel, SettingLabel),
    n_runs: u64,
    seed: u64,
    depolarization: f64,
    options: &SimOptions,
) -> Result<QuantumSimulation> {
    simulate(
        state,
        config,
        Some(pair),
        n_runs,
        seed,
        depolarization,
        options,
    )
}

fn simulate(
    state: &QubitState,
    config: &Config,
    fixed_pair: Option<(SettingLabel, SettingLabel)>,
    n_runs: u64,
    seed: u64,
    depolarization: f64,
    options: &SimOptions,
) -> Result<QuantumSimulation> {
    if !(0.0..=1.0).contains(&depolarization) {
        return Err(Error::Domain(format!(
            "depolarization = {depolarization} must lie in [0, 1]"
        )));
    }
    let keep = options.keep_records;
    let stream_base = options.stream_base;
    with_pool(options.workers, || {
        let batches: Vec<_> = batch_sizes(n_runs)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(index, size)| {
                quantum_batch(
                    state,
                    config,
                    fixed_pair,
                    depolarization,
                    seed,
                    stream_base + index,
                    size,
                    keep,
                )
            })
            .collect();
        let mut sim = QuantumSimulation {
            table: CountTable::new(),
            records: keep.then(Vec::new),
        };
        for (table, records) in batches {
            sim.table.merge(&table);
            if let (Some(all), Some(batch)) = (sim.records.as_mut(), records) {
                all.extend(batch);
            }
        }
        sim
    })
}

#[allow(clippy::too_many_arguments)]
fn quantum_batch(
    state: &QubitState,
    config: &Config,
    fixed_pair: Option<(SettingLabel, SettingLabel)>,
    lambda: f64,
    seed: u64,
    stream: u64,
    size: u64,
    keep_records: bool,
) -> (CountTable, Option<Vec<RunRecord>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut table = CountTable::new();
    let mut records = keep_records.then(|| Vec::with_capacity(size as usize));
    for _ in 0..size {
        // Draw order is fixed: pair index (free-pair mode only), then one
        // uniform variate per measurement.
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
        let record = quantum_run(state, config, first, second, lambda, &mut rng);
        table.record(&record);
        if let Some(records) = records.as_mut() {
            records.push(record);
        }
    }
    (table, records)
}

/// One run: measure `first_setting`'s axis, collapse, optionally depolarize,
/// measure `second_setting`'s axis. Consumes exactly two uniform variates.
pub fn quantum_run<R: Rng + ?Sized>(
    state: &QubitState,
    config: &Config,
    first_setting: SettingLabel,
    second_setting: SettingLabel,
    lambda: f64,
    rng: &mut R,
) -> RunRecord {
    let x = config.direction(first_setting);
    let y = config.direction(second_setting);
    let p_first_plus = state.measure_prob(&x, Outcome::Plus);
    let first_outcome = if rng.random::<f64>() < p_first_plus {
        Outcome::Plus
    } else {
        Outcome::Minus
    };
    let mid = QubitState::after_reading(&x, first_outcome).depolarized(lambda);
    let p_second_plus = mid.measure_prob(&y, Outcome::Plus);
    let second_outcome = if rng.random::<f64>() < p_second_plus {
        Outcome::Plus
    } else {
        Outcome::Minus
    };
    RunRecord {
        first_setting,
        second_setting,
        first_outcome,
        second_outcome,
        hidden_reality: None,
    }
}
