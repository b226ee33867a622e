//! Experiment harness: a JSON-described experiment is validated, simulated
//! under one of three protocols, and rendered into a report whose every
//! number can be recomputed from the persisted run records.
//!
//! Protocols:
//! - free-runs: every run draws a uniformly random ordered setting pair.
//! - two-series: for each setting pair of the expectation form, two fixed
//!   series are simulated and post-selected on the first outcome (+ and -).
//! - prepared-runs: the first axis's +1 eigenstate is prepared before every
//!   free run; the probability form is the target.
//!
//! Reports carry no wall-clock data, so identical (spec, seed) inputs render
//! byte-identical reports regardless of machine or worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Config, Outcome, SettingLabel};
use crate::inequality::{
    eval_counts_6_with, eval_expect_10_with, eval_prob_7_with, eval_prob_8_with, eval_prob_7,
    eval_prob_8, quantum_lhs_16, quantum_lhs_18, ExactPairProbs, ExpectationEstimate,
    InequalityReport, InequalityVariant, Normalization, Thresholds,
};
use crate::lhv::{
    counting_identity_ratio, simulate_lhv, RealityDistribution, RealityTally, SimOptions,
    STREAM_SPAN,
};
use crate::quantum::{simulate_quantum, simulate_quantum_fixed_pair, QubitState, StatePrep};
use crate::records::{cell_key, CountTable, ProbTable, SeriesRecords};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Lhv,
    Quantum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    FreeRuns,
    TwoSeries,
    PreparedRuns,
}

/// Initial-condition description: a distribution over joint assignments for
/// the hidden-variable model, or a state preparation for the quantum model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrepSpec {
    Distribution(RealityDistribution),
    State(StatePrep),
}

/// A complete experiment description, loadable from JSON.
///
/// When `prep` is omitted the model default applies: the uniform assignment
/// distribution for `lhv`, the first axis's +1 eigenstate for `quantum`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: Model,
    pub config: Config,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep: Option<PrepSpec>,
    pub protocol: Protocol,
    /// Runs for free protocols; runs per series for two-series.
    pub n_runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Bloch-vector shrink factor applied between the two measurements of a
    /// quantum run; 1 (default) is noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depolarization: Option<f64>,
    /// Default output directory for the CLI; overridable on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidSpec("n_runs must be at least 1".into()));
        }
        if self.model != Model::Quantum
            && matches!(self.protocol, Protocol::TwoSeries | Protocol::PreparedRuns)
        {
            return Err(Error::InvalidSpec(format!(
                "protocol {:?} requires the quantum model",
                self.protocol
            )));
        }
        match (self.model, &self.prep) {
            (Model::Lhv, Some(PrepSpec::State(_))) => {
                return Err(Error::InvalidSpec(
                    "the lhv model takes an assignment distribution, not a state prep".into(),
                ))
            }
            (Model::Quantum, Some(PrepSpec::Distribution(_))) => {
                return Err(Error::InvalidSpec(
                    "the quantum model takes a state prep, not an assignment distribution".into(),
                ))
            }
            _ => {}
        }
        if self.model == Model::Lhv && self.depolarization.is_some() {
            return Err(Error::InvalidSpec(
                "depolarization only applies to the quantum model".into(),
            ));
        }
        if let Some(lambda) = self.depolarization {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidSpec(format!(
                    "depolarization {lambda} must lie in [0, 1]"
                )));
            }
        }
        if self.protocol == Protocol::PreparedRuns {
            let default_prep = StatePrep::eigenstate(SettingLabel::A, Outcome::Plus);
            match &self.prep {
                None => {}
                Some(PrepSpec::State(prep)) if *prep == default_prep => {}
                Some(_) => {
                    return Err(Error::InvalidSpec(
                        "the prepared-runs protocol fixes the prep to the first axis's +1 \
                         eigenstate"
                            .into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentSpec::from_json(&text)
    }

    /// The assignment distribution in effect (lhv model).
    pub fn resolved_distribution(&self) -> Result<RealityDistribution> {
        match &self.prep {
            None => Ok(RealityDistribution::uniform()),
            Some(PrepSpec::Distribution(dist)) => Ok(dist.clone()),
            Some(PrepSpec::State(_)) => Err(Error::InvalidSpec(
                "state prep given where a distribution is needed".into(),
            )),
        }
    }

    /// The state preparation in effect (quantum model).
    pub fn resolved_prep(&self) -> Result<StatePrep> {
        match &self.prep {
            None => Ok(StatePrep::eigenstate(SettingLabel::A, Outcome::Plus)),
            Some(PrepSpec::State(prep)) => Ok(*prep),
            Some(PrepSpec::Distribution(_)) => Err(Error::InvalidSpec(
                "distribution given where a state prep is needed".into(),
            )),
        }
    }

    pub fn resolved_state(&self) -> Result<QubitState> {
        self.resolved_prep()?.resolve(&self.config)
    }

    pub fn depolarization(&self) -> f64 {
        self.depolarization.unwrap_or(1.0)
    }

    fn thresholds(&self) -> Thresholds {
        self.thresholds.unwrap_or_default()
    }
}

/// Seed precedence: command line, then spec file, then the TBS_SEED
/// environment variable, then 0.
pub fn resolve_seed(cli_seed: Option<u64>, spec_seed: Option<u64>) -> Result<u64> {
    if let Some(seed) = cli_seed {
        return Ok(seed);
    }
    if let Some(seed) = spec_seed {
        return Ok(seed);
    }
    match std::env::var("TBS_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            Error::Parse(format!("TBS_SEED = {text:?} is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

/// One estimated quantity with its standard error and supporting run count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    /// Empty for single-series protocols; `"AB+"` style for two-series.
    pub label: String,
    pub table: CountTable,
    /// Fraction of runs whose first outcome matched the series' retained
    /// sign (two-series only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_fraction: Option<f64>,
}

/// Hidden-assignment bookkeeping, reported for the lhv model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LhvDiagnostics {
    /// How often each joint assignment was drawn.
    pub reality_tally: BTreeMap<String, u64>,
    /// Assignments-consistent to observed-count ratio per canonical cell;
    /// converges to 9 under uniform pair choice. Missing cells give null.
    pub counting_identity: BTreeMap<String, Option<f64>>,
}

/// Closed-form predictions for the spec's model, prep, and configuration —
/// what the sampled estimates should converge to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactReference {
    /// Noiseless closed form of the expectation inequality's left side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_lhs_16: Option<f64>,
    /// Noiseless closed form of the probability inequality's left side
    /// under the first axis's +1 eigenstate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_lhs_18: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_7_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_8_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_10_lhs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub config_degenerate: bool,
    pub series: Vec<SeriesReport>,
    /// Per-pair conditional outcome probabilities, keyed like `"A+,C-"`.
    pub probabilities: BTreeMap<String, Estimate>,
    /// Product expectations per ordered pair, keyed like `"A,B"`.
    pub expectations: BTreeMap<String, Estimate>,
    pub inequalities: Vec<InequalityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lhv_diagnostics: Option<LhvDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_reference: Option<ExactReference>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    /// Keep (and return) per-run records for persistence.
    pub keep_records: bool,
}

/// A finished experiment: the report plus, when requested, the run records
/// it was computed from.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub records: Option<Vec<SeriesRecords>>,
}

/// Validates and runs the experiment under its protocol.
pub fn run_experiment(
    spec: &ExperimentSpec,
    seed: u64,
    options: &RunOptions,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    match spec.protocol {
        Protocol::FreeRuns => protocol_free_runs(spec, seed, options),
        Protocol::TwoSeries => protocol_two_series(spec, seed, options),
        Protocol::PreparedRuns => protocol_prepared_runs(spec, seed, options),
    }
}

/// Series labels of the two-series protocol, in report order: for each
/// ordered pair of the expectation form, the series retaining first-outcome
/// +1 and the one retaining -1.
pub const TWO_SERIES_LABELS: [&str; 6] = ["AB+", "AB-", "BC+", "BC-", "AC+", "AC-"];

const EXPECTATION_PAIRS: [(SettingLabel, SettingLabel); 3] = [
    (SettingLabel::A, SettingLabel::B),
    (SettingLabel::B, SettingLabel::C),
    (SettingLabel::A, SettingLabel::C),
];

/// The six cells entering the two probability forms.
const PROB_CELLS: [((SettingLabel, SettingLabel), (Outcome, Outcome)); 6] = [
    ((SettingLabel::A, SettingLabel::C), (Outcome::Plus, Outcome::Minus)),
    ((SettingLabel::A, SettingLabel::B), (Outcome::Plus, Outcome::Minus)),
    ((SettingLabel::B, SettingLabel::C), (Outcome::Plus, Outcome::Minus)),
    ((SettingLabel::A, SettingLabel::C), (Outcome::Minus, Outcome::Plus)),
    ((SettingLabel::A, SettingLabel::B), (Outcome::Minus, Outcome::Plus)),
    ((SettingLabel::B, SettingLabel::C), (Outcome::Minus, Outcome::Plus)),
];

struct SeriesData {
    label: String,
    table: CountTable,
    tally: Option<RealityTally>,
    records: Option<Vec<crate::records::RunRecord>>,
}

/// Free protocol: every run picks one of the 9 ordered setting pairs
/// uniformly. Evaluates the count form, both probability forms, and the
/// expectation form.
pub fn protocol_free_runs(
    spec: &ExperimentSpec,
    seed: u64,
    options: &RunOptions,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if spec.protocol != Protocol::FreeRuns {
        return Err(Error::InvalidSpec(
            "spec protocol does not name free-runs".into(),
        ));
    }
    let series = simulate_free_series(spec, seed, options)?;
    assemble(spec, seed, vec![series])
}

/// Prepared protocol: the first axis's +1 eigenstate is prepared before each
/// free run; the probability form is evaluated and compared against its
/// closed-form prediction.
pub fn protocol_prepared_runs(
    spec: &ExperimentSpec,
    seed: u64,
    options: &RunOptions,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if spec.protocol != Protocol::PreparedRuns {
        return Err(Error::InvalidSpec(
            "spec protocol does not name prepared-runs".into(),
        ));
    }
    let series = simulate_free_series(spec, seed, options)?;
    assemble(spec, seed, vec![series])
}

fn simulate_free_series(
    spec: &ExperimentSpec,
    seed: u64,
    options: &RunOptions,
) -> Result<SeriesData> {
    let sim_options = SimOptions {
        keep_records: options.keep_records,
        workers: options.workers,
        stream_base: 0,
    };
    match spec.model {
        Model::Lhv => {
            let dist = spec.resolved_distribution()?;
            let sim = simulate_lhv(&dist, spec.n_runs, seed, &sim_options)?;
            Ok(SeriesData {
                label: String::new(),
                table: sim.table,
                tally: Some(sim.tally),
                records: sim.records,
            })
        }
        Model::Quantum => {
            let state = spec.resolved_state()?;
            let sim = simulate_quantum(
                &state,
                &spec.config,
                spec.n_runs,
                seed,
                spec.depolarization(),
                &sim_options,
            )?;
            Ok(SeriesData {
                label: String::new(),
                table: sim.table,
                tally: None,
                records: sim.records,
            })
        }
    }
}

/// Two-series protocol: for each expectation-form pair, one series retains
/// runs whose first outcome was +1 and one retains -1 (post-selection,
/// not re-drawing); the expectation combines both series. Each series gets
/// its own RNG stream block under the one seed.
pub fn protocol_two_series(
    spec: &ExperimentSpec,
    seed: u64,
    options: &RunOptions,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if spec.protocol != Protocol::TwoSeries {
        return Err(Error::InvalidSpec(
            "spec protocol does not name two-series".into(),
        ));
    }
    let state = spec.resolved_state()?;
    let mut series = Vec::with_capacity(6);
    for (index, label) in TWO_SERIES_LABELS.iter().enumerate() {
        let pair = EXPECTATION_PAIRS[index / 2];
        let sim_options = SimOptions {
            keep_records: options.keep_records,
            workers: options.workers,
            stream_base: index as u64 * STREAM_SPAN,
        };
        let sim = simulate_quantum_fixed_pair(
            &state,
            &spec.config,
            pair,
            spec.n_runs,
            seed,
            spec.depolarization(),
            &sim_options,
        )?;
        series.push(SeriesData {
            label: label.to_string(),
            table: sim.table,
            tally: None,
            records: sim.records,
        });
    }
    assemble(spec, seed, series)
}

/// Re-renders the report for previously persisted run records. For matching
/// (spec, seed, records) this reproduces the simulate-time report exactly.
pub fn report_from_records(
    spec: &ExperimentSpec,
    seed: u64,
    series: &[SeriesRecords],
) -> Result<ExperimentReport> {
    spec.validate()?;
    let expected_labels: Vec<String> = match spec.protocol {
        Protocol::TwoSeries => TWO_SERIES_LABELS.iter().map(|s| s.to_string()).collect(),
        _ => vec![String::new()],
    };
    let found: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    if found != expected_labels.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(Error::InvalidSpec(format!(
            "record series {found:?} do not match the protocol's expected series \
             {expected_labels:?}"
        )));
    }
    let mut data = Vec::with_capacity(series.len());
    for s in series {
        let mut table = CountTable::new();
        let mut tally = RealityTally::new();
        for record in &s.records {
            table.record(record);
            if let Some(reality) = record.hidden_reality {
                tally.add(reality);
            }
        }
        if spec.model == Model::Lhv && tally.total() != table.total_runs() {
            return Err(Error::InvalidSpec(
                "lhv records must carry a hidden reality on every run".into(),
            ));
        }
        data.push(SeriesData {
            label: s.label.clone(),
            table,
            tally: (spec.model == Model::Lhv).then_some(tally),
            records: None,
        });
    }
    assemble(spec, seed, data).map(|outcome| outcome.report)
}

/// Re-analysis of run records without their experiment spec: the protocol
/// is inferred from the series labels, every estimable inequality is
/// evaluated at default thresholds, and spec-dependent extras (exact
/// references, degeneracy flags, hidden-assignment diagnostics) are left
/// out. The numbers match the spec-driven report for the same records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordsAnalysis {
    pub series: Vec<SeriesReport>,
    pub probabilities: BTreeMap<String, Estimate>,
    pub expectations: BTreeMap<String, Estimate>,
    pub inequalities: Vec<InequalityReport>,
}

pub fn analyze_records(series: &[SeriesRecords]) -> Result<RecordsAnalysis> {
    if series.is_empty() {
        return Err(Error::InvalidSpec("no run records to analyze".into()));
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    let protocol = if labels == TWO_SERIES_LABELS {
        Protocol::TwoSeries
    } else if series.len() == 1 {
        Protocol::FreeRuns
    } else {
        return Err(Error::InvalidSpec(format!(
            "series labels {labels:?} match no known protocol"
        )));
    };
    let mut data = Vec::with_capacity(series.len());
    for s in series {
        let mut table = CountTable::new();
        for record in &s.records {
            table.record(record);
        }
        if table.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "series {:?} holds no runs",
                s.label
            )));
        }
        data.push(SeriesData {
            label: s.label.clone(),
            table,
            tally: None,
            records: None,
        });
    }
    let analysis = analyze_series(protocol, &data, &Thresholds::default());
    Ok(RecordsAnalysis {
        series: data
            .iter()
            .map(|d| SeriesReport {
                label: d.label.clone(),
                table: d.table.clone(),
                retained_fraction: retained_fraction(protocol, d),
            })
            .collect(),
        probabilities: analysis.probabilities,
        expectations: analysis.expectations,
        inequalities: analysis.inequalities,
    })
}

/// The estimate maps and inequality evaluations for one protocol's series
/// tables; shared by spec-driven reports and the spec-free records
/// re-analysis.
#[derive(Clone, Debug, Default)]
struct Analysis {
    probabilities: BTreeMap<String, Estimate>,
    expectations: BTreeMap<String, Estimate>,
    inequalities: Vec<InequalityReport>,
}

fn analyze_series(protocol: Protocol, series: &[SeriesData], thresholds: &Thresholds) -> Analysis {
    let mut analysis = Analysis::default();
    match protocol {
        Protocol::FreeRuns | Protocol::PreparedRuns => {
            let table = &series[0].table;
            let probs = ProbTable::from_counts(table);
            for (pair, outcomes) in PROB_CELLS {
                if let (Some(p), Some(se)) =
                    (probs.prob(pair, outcomes), probs.std_error(pair, outcomes))
                {
                    analysis.probabilities.insert(
                        cell_key(pair.0, outcomes.0, pair.1, outcomes.1),
                        Estimate {
                            value: p,
                            std_error: se,
                            n: probs.pair_count(pair),
                        },
                    );
                }
            }
            for (x, y) in EXPECTATION_PAIRS {
                if let Some((value, std_error)) = table.expected_value(x, y) {
                    analysis.expectations.insert(
                        format!("{x},{y}"),
                        Estimate {
                            value,
                            std_error,
                            n: table.pair_total(x, y),
                        },
                    );
                }
            }
            if protocol == Protocol::FreeRuns {
                analysis
                    .inequalities
                    .push(eval_counts_6_with(table, thresholds));
            }
            analysis.inequalities.push(eval_prob_7_with(&probs, thresholds));
            if protocol == Protocol::FreeRuns {
                analysis.inequalities.push(eval_prob_8_with(&probs, thresholds));
                let estimates = EXPECTATION_PAIRS.map(|(x, y)| {
                    analysis
                        .expectations
                        .get(&format!("{x},{y}"))
                        .copied()
                        .map(Into::into)
                });
                analysis
                    .inequalities
                    .push(expect_10_from_estimates(estimates, thresholds));
            }
        }
        Protocol::TwoSeries => {
            let mut estimates: [Option<ExpectationEstimate>; 3] = [None; 3];
            let mut starved = false;
            for (pair_index, (x, y)) in EXPECTATION_PAIRS.into_iter().enumerate() {
                let plus = &series[pair_index * 2];
                let minus = &series[pair_index * 2 + 1];
                for (data, retained_outcome) in [(plus, Outcome::Plus), (minus, Outcome::Minus)] {
                    let n = data.table.total_runs();
                    for second in Outcome::BOTH {
                        let count = data.table.count(x, retained_outcome, y, second);
                        let p = count as f64 / n as f64;
                        analysis.probabilities.insert(
                            cell_key(x, retained_outcome, y, second),
                            Estimate {
                                value: p,
                                std_error: (p * (1.0 - p) / n as f64).max(0.0).sqrt(),
                                n,
                            },
                        );
                    }
                    let retained = data.table.count(x, retained_outcome, y, Outcome::Plus)
                        + data.table.count(x, retained_outcome, y, Outcome::Minus);
                    if retained == 0 {
                        starved = true;
                    }
                }
                let (value, std_error) = combine_two_series(&plus.table, &minus.table, (x, y));
                analysis.expectations.insert(
                    format!("{x},{y}"),
                    Estimate {
                        value,
                        std_error,
                        n: plus.table.total_runs() + minus.table.total_runs(),
                    },
                );
                estimates[pair_index] = Some(ExpectationEstimate::sampled(
                    // The combined estimator can stray past the physical
                    // range by sampling noise; evaluation clamps it.
                    value.clamp(-1.0, 1.0),
                    std_error,
                ));
            }
            let mut report = expect_10_from_estimates(estimates, thresholds);
            if starved {
                report.insufficient_stats = true;
                report.violated = false;
                report.verdict = None;
                report.z_score = None;
            }
            analysis.inequalities.push(report);
        }
    }
    analysis
}

/// Builds the report from per-series tables. Both the simulate path and the
/// records path land here, which is what makes re-rendered reports equal to
/// the originals.
fn assemble(
    spec: &ExperimentSpec,
    seed: u64,
    series: Vec<SeriesData>,
) -> Result<ExperimentOutcome> {
    let thresholds = spec.thresholds();
    let degenerate = spec.config.is_degenerate();

    let Analysis {
        probabilities,
        expectations,
        mut inequalities,
    } = analyze_series(spec.protocol, &series, &thresholds);

    for report in &mut inequalities {
        report.degenerate = Some(degenerate);
    }

    let lhv_diagnostics = if spec.model == Model::Lhv {
        let mut tally = RealityTally::new();
        for data in &series {
            if let Some(t) = &data.tally {
                tally.merge(t);
            }
        }
        let table = &series[0].table;
        let mut counting_identity = BTreeMap::new();
        for (x, y) in EXPECTATION_PAIRS {
            let key = cell_key(x, Outcome::Plus, y, Outcome::Minus);
            let ratio =
                counting_identity_ratio(&tally, table, (x, y), (Outcome::Plus, Outcome::Minus))
                    .ok();
            counting_identity.insert(key, ratio);
        }
        Some(LhvDiagnostics {
            reality_tally: tally.as_map(),
            counting_identity,
        })
    } else {
        None
    };

    let report = ExperimentReport {
        spec: spec.clone(),
        seed,
        config_degenerate: degenerate,
        series: series
            .iter()
            .map(|data| SeriesReport {
                label: data.label.clone(),
                table: data.table.clone(),
                retained_fraction: retained_fraction(spec.protocol, data),
            })
            .collect(),
        probabilities,
        expectations,
        inequalities,
        lhv_diagnostics,
        exact_reference: Some(exact_reference(spec)?),
    };
    let records: Option<Vec<SeriesRecords>> = {
        let collected: Vec<SeriesRecords> = series
            .into_iter()
            .filter_map(|data| {
                data.records.map(|records| SeriesRecords {
                    label: data.label,
                    records,
                })
            })
            .collect();
        (!collected.is_empty()).then_some(collected)
    };
    Ok(ExperimentOutcome { report, records })
}

fn retained_fraction(protocol: Protocol, data: &SeriesData) -> Option<f64> {
    if protocol != Protocol::TwoSeries {
        return None;
    }
    let index = TWO_SERIES_LABELS.iter().position(|l| *l == data.label)?;
    let (x, y) = EXPECTATION_PAIRS[index / 2];
    let sign = if index % 2 == 0 {
        Outcome::Plus
    } else {
        Outcome::Minus
    };
    let retained =
        data.table.count(x, sign, y, Outcome::Plus) + data.table.count(x, sign, y, Outcome::Minus);
    Some(retained as f64 / data.table.total_runs() as f64)
}

/// Combined estimator for one pair from its two post-selected series:
/// the retained half of each series contributes its signed cell difference.
fn combine_two_series(
    plus: &CountTable,
    minus: &CountTable,
    pair: (SettingLabel, SettingLabel),
) -> (f64, f64) {
    let (x, y) = pair;
    let np = plus.total_runs() as f64;
    let nm = minus.total_runs() as f64;
    let pp = plus.count(x, Outcome::Plus, y, Outcome::Plus) as f64 / np;
    let pm = plus.count(x, Outcome::Plus, y, Outcome::Minus) as f64 / np;
    let mm = minus.count(x, Outcome::Minus, y, Outcome::Minus) as f64 / nm;
    let mp = minus.count(x, Outcome::Minus, y, Outcome::Plus) as f64 / nm;
    let value = (pp - pm) + (mm - mp);
    let var_plus = ((pp + pm) - (pp - pm).powi(2)).max(0.0) / np;
    let var_minus = ((mm + mp) - (mm - mp).powi(2)).max(0.0) / nm;
    (value, (var_plus + var_minus).sqrt())
}

/// Expectation-form report from possibly-missing estimates; missing pairs
/// flag insufficient statistics (absent terms enter as zero).
fn expect_10_from_estimates(
    estimates: [Option<ExpectationEstimate>; 3],
    thresholds: &Thresholds,
) -> InequalityReport {
    if let [Some(ab), Some(bc), Some(ac)] = estimates {
        // Estimates from count tables always lie in [-1, 1], so the domain
        // check cannot fail here.
        eval_expect_10_with(ab, bc, ac, thresholds)
            .expect("count-table expectation estimates stay in range")
    } else {
        let value = |e: Option<ExpectationEstimate>| e.map(|e| e.value).unwrap_or(0.0);
        let lhs = value(estimates[0]) + value(estimates[1]) - value(estimates[2]);
        InequalityReport {
            variant: InequalityVariant::Expect10,
            lhs,
            bound: 1.0,
            margin: lhs - 1.0,
            std_error: None,
            z_score: None,
            violated: false,
            verdict: None,
            insufficient_stats: true,
            normalization: Normalization::PerPair,
            degenerate: None,
        }
    }
}

impl From<Estimate> for ExpectationEstimate {
    fn from(e: Estimate) -> Self {
        ExpectationEstimate::sampled(e.value, e.std_error)
    }
}

fn exact_reference(spec: &ExperimentSpec) -> Result<ExactReference> {
    match spec.model {
        Model::Lhv => {
            let dist = spec.resolved_distribution()?;
            use SettingLabel::*;
            Ok(ExactReference {
                quantum_lhs_16: None,
                quantum_lhs_18: None,
                prob_7_margin: Some(eval_prob_7(&dist).margin),
                prob_8_margin: Some(eval_prob_8(&dist).margin),
                expect_10_lhs: Some(
                    dist.expected_value(A, B) + dist.expected_value(B, C)
                        - dist.expected_value(A, C),
                ),
            })
        }
        Model::Quantum => {
            let exact = ExactPairProbs {
                state: spec.resolved_state()?,
                config: spec.config,
                depolarization: spec.depolarization(),
            };
            Ok(ExactReference {
                quantum_lhs_16: Some(quantum_lhs_16(&spec.config)),
                quantum_lhs_18: Some(quantum_lhs_18(&spec.config)),
                prob_7_margin: Some(eval_prob_7(&exact).margin),
                prob_8_margin: Some(eval_prob_8(&exact).margin),
                // Depolarization scales every product expectation alike.
                expect_10_lhs: Some(spec.depolarization() * quantum_lhs_16(&spec.config)),
            })
        }
    }
}

/// Writes the coplanar-sweep plot data: the symmetric family where the
/// middle axis bisects the outer two at `t` degrees each side. Columns:
/// `angle_deg,a_dot_b,b_dot_c,a_dot_c,lhs_ineq16,lhs_ineq18`.
pub fn write_sweep_csv<W: std::io::Write>(writer: W, step_deg: f64) -> Result<()> {
    use crate::geometry::Direction;
    if !(step_deg > 0.0 && step_deg <= 45.0) {
        return Err(Error::Domain(format!(
            "sweep step {step_deg} deg out of range (0, 45]"
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "angle_deg",
        "a_dot_b",
        "b_dot_c",
        "a_dot_c",
        "lhs_ineq16",
        "lhs_ineq18",
    ])?;
    let steps = (180.0 / step_deg).floor() as u64;
    for i in 0..=steps {
        let t_deg = i as f64 * step_deg;
        let t = t_deg.to_radians();
        let config = Config {
            a: Direction::new(-t.sin(), 0.0, t.cos())
                .expect("spherical components cannot all vanish"),
            b: Direction::plus_z(),
            c: Direction::new(t.sin(), 0.0, t.cos())
                .expect("spherical components cannot all vanish"),
        };
        wtr.write_record([
            format!("{t_deg}"),
            format!("{}", config.a.dot(&config.b)),
            format!("{}", config.b.dot(&config.c)),
            format!("{}", config.a.dot(&config.c)),
            format!("{}", quantum_lhs_16(&config)),
            format!("{}", quantum_lhs_18(&config)),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Direction;
    use crate::records::{read_run_records, write_run_records};

    fn dir(x: f64, y: f64, z: f64) -> Direction {
        Direction::new(x, y, z).unwrap()
    }

    fn reference_18_config() -> Config {
        Config {
            a: dir(1.0, 0.0, 0.0),
            c: dir(0.0, 1.0, 0.0),
            b: dir(1.0, 1.0, 0.0),
        }
    }

    fn lhv_spec(n_runs: u64) -> ExperimentSpec {
        ExperimentSpec {
            model: Model::Lhv,
            config: reference_18_config(),
            prep: None,
            protocol: Protocol::FreeRuns,
            n_runs,
            seed: None,
            depolarization: None,
            out_dir: None,
            thresholds: None,
        }
    }

    fn quantum_spec(protocol: Protocol, n_runs: u64) -> ExperimentSpec {
        ExperimentSpec {
            model: Model::Quantum,
            config: reference_18_config(),
            prep: None,
            protocol,
            n_runs,
            seed: None,
            depolarization: None,
            out_dir: None,
            thresholds: None,
        }
    }

    #[test]
    fn spec_parsing_and_validation() {
        let json = r#"{
            "model": "lhv",
            "config": {"a": [0, 0, 1], "b": [1, 0, 1], "c": [1, 0, 0]},
            "prep": {"+++": 1, "++-": 1, "+-+": 1, "+--": 1,
                     "-++": 1, "-+-": 1, "--+": 1, "---": 1},
            "protocol": "free-runs",
            "n_runs": 1000,
            "seed": 42
        }"#;
        let spec = ExperimentSpec::from_json(json).unwrap();
        assert_eq!(spec.model, Model::Lhv);
        assert_eq!(spec.seed, Some(42));
        assert_eq!(
            spec.resolved_distribution().unwrap(),
            RealityDistribution::uniform()
        );

        let json = r#"{
            "model": "quantum",
            "config": {"a": [1, 0, 0], "b": [1, 1, 0], "c": [0, 1, 0]},
            "prep": {"eigenstate": "A+"},
            "protocol": "prepared-runs",
            "n_runs": 10
        }"#;
        let spec = ExperimentSpec::from_json(json).unwrap();
        assert_eq!(
            spec.resolved_prep().unwrap(),
            StatePrep::eigenstate(SettingLabel::A, Outcome::Plus)
        );

        // Typos in field names are configuration errors.
        assert!(ExperimentSpec::from_json(
            r#"{"model": "lhv", "config": {"a": [0,0,1], "b": [0,0,1], "c": [0,0,1]},
                "protocol": "free-runs", "n_runs": 1, "sed": 1}"#
        )
        .is_err());
    }

    #[test]
    fn validation_rules() {
        let mut spec = lhv_spec(0);
        assert!(spec.validate().is_err());
        spec.n_runs = 10;
        assert!(spec.validate().is_ok());
        spec.protocol = Protocol::TwoSeries;
        assert!(spec.validate().is_err());

        let mut spec = lhv_spec(10);
        spec.depolarization = Some(0.5);
        assert!(spec.validate().is_err());

        let mut spec = quantum_spec(Protocol::FreeRuns, 10);
        spec.depolarization = Some(1.5);
        assert!(spec.validate().is_err());
        spec.depolarization = Some(0.5);
        assert!(spec.validate().is_ok());

        let mut spec = quantum_spec(Protocol::PreparedRuns, 10);
        spec.prep = Some(PrepSpec::State(StatePrep::eigenstate(
            SettingLabel::B,
            Outcome::Plus,
        )));
        assert!(spec.validate().is_err());
        spec.prep = Some(PrepSpec::State(StatePrep::eigenstate(
            SettingLabel::A,
            Outcome::Plus,
        )));
        assert!(spec.validate().is_ok());

        let mut spec = quantum_spec(Protocol::FreeRuns, 10);
        spec.prep = Some(PrepSpec::Distribution(RealityDistribution::uniform()));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn seed_resolution_order() {
        assert_eq!(resolve_seed(Some(5), Some(7)).unwrap(), 5);
        assert_eq!(resolve_seed(None, Some(7)).unwrap(), 7);
        // Environment fallback, then the default.
        std::env::set_var("TBS_SEED", "99");
        assert_eq!(resolve_seed(None, None).unwrap(), 99);
        std::env::set_var("TBS_SEED", "not a number");
        assert!(resolve_seed(None, None).is_err());
        std::env::remove_var("TBS_SEED");
        assert_eq!(resolve_seed(None, None).unwrap(), 0);
    }

    #[test]
    fn free_runs_lhv_report_shape() {
        let outcome = run_experiment(&lhv_spec(30_000), 11, &RunOptions::default()).unwrap();
        let report = outcome.report;
        assert_eq!(report.series.len(), 1);
        assert_eq!(report.series[0].table.total_runs(), 30_000);
        let variants: Vec<_> = report.inequalities.iter().map(|r| r.variant).collect();
        assert_eq!(
            variants,
            [
                InequalityVariant::Counts6,
                InequalityVariant::Prob7,
                InequalityVariant::Prob8,
                InequalityVariant::Expect10
            ]
        );
        for r in &report.inequalities {
            assert!(!r.violated, "{:?} violated in an lhv run", r.variant);
            assert_eq!(r.degenerate, Some(false));
        }
        let diag = report.lhv_diagnostics.unwrap();
        assert_eq!(diag.reality_tally.values().sum::<u64>(), 30_000);
        for ratio in diag.counting_identity.values() {
            let ratio = ratio.unwrap();
            assert!((ratio - 9.0).abs() < 1.5, "ratio {ratio}");
        }
        let exact = report.exact_reference.unwrap();
        assert!((exact.prob_7_margin.unwrap() + 0.25).abs() < 1e-12);
        assert!(exact.quantum_lhs_16.is_none());
        assert_eq!(report.probabilities.len(), 6);
        assert_eq!(report.expectations.len(), 3);
    }

    #[test]
    fn single_run_reports_insufficient_not_nan() {
        let outcome = run_experiment(&lhv_spec(1), 3, &RunOptions::default()).unwrap();
        for r in &outcome.report.inequalities {
            assert!(r.lhs.is_finite() && r.margin.is_finite(), "{:?}", r.variant);
            assert!(!r.violated);
            // Both probability forms and the expectation form need pairs a
            // single run cannot cover; the count form can only be sampled
            // if the one run landed in one of its cells.
            if r.variant != InequalityVariant::Counts6 {
                assert!(r.insufficient_stats, "{:?} not flagged", r.variant);
            }
        }
        for estimate in outcome.report.probabilities.values() {
            assert!(estimate.value.is_finite() && estimate.std_error.is_finite());
        }
    }

    #[test]
    fn prepared_runs_match_the_closed_form_prediction() {
        let spec = quantum_spec(Protocol::PreparedRuns, 200_000);
        let outcome = run_experiment(&spec, 17, &RunOptions::default()).unwrap();
        let report = outcome.report;
        assert_eq!(report.inequalities.len(), 1);
        let prob7 = &report.inequalities[0];
        assert_eq!(prob7.variant, InequalityVariant::Prob7);
        let predicted = report.exact_reference.as_ref().unwrap().prob_7_margin.unwrap();
        assert!((predicted - (std::f64::consts::SQRT_2 - 0.5) / 4.0).abs() < 1e-12);
        let se = prob7.std_error.unwrap();
        assert!(
            (prob7.margin - predicted).abs() < 5.0 * se,
            "margin {} vs predicted {predicted} (se {se})",
            prob7.margin
        );
        assert!(prob7.violated);
    }

    #[test]
    fn prepared_runs_with_equal_outer_axes_cannot_violate() {
        let mut spec = quantum_spec(Protocol::PreparedRuns, 50_000);
        spec.config = Config {
            a: dir(1.0, 0.0, 0.0),
            b: dir(1.0, 1.0, 0.0),
            c: dir(1.0, 0.0, 0.0),
        };
        let outcome = run_experiment(&spec, 5, &RunOptions::default()).unwrap();
        let prob7 = &outcome.report.inequalities[0];
        assert!(prob7.margin <= 0.0);
        assert!(!prob7.violated);
        assert_eq!(prob7.degenerate, Some(true));
        assert!(outcome.report.config_degenerate);
    }

    #[test]
    fn two_series_estimates_the_expectation_form() {
        let spec = quantum_spec(Protocol::TwoSeries, 50_000);
        let outcome = run_experiment(&spec, 23, &RunOptions::default()).unwrap();
        let report = outcome.report;
        assert_eq!(report.series.len(), 6);
        let labels: Vec<_> = report.series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, TWO_SERIES_LABELS);
        for series in &report.series {
            assert_eq!(series.table.total_runs(), 50_000);
            let retained = series.retained_fraction.unwrap();
            assert!((0.0..=1.0).contains(&retained));
        }
        // Retained fractions reflect the prepared state: first readings of A
        // under prep |a+> always retain in AB+ and never in AB-.
        assert!((report.series[0].retained_fraction.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(report.series[1].retained_fraction.unwrap(), 0.0);

        assert_eq!(report.inequalities.len(), 1);
        let e10 = &report.inequalities[0];
        assert_eq!(e10.variant, InequalityVariant::Expect10);
        // AB- retained nothing, so the combined estimator is starved.
        assert!(e10.insufficient_stats);

        let config = &spec.config;
        for ((x, y), key) in EXPECTATION_PAIRS.iter().zip(["A,B", "B,C", "A,C"]) {
            let estimate = &report.expectations[key];
            let exact = config.direction(*x).dot(&config.direction(*y));
            assert!(
                (estimate.value - exact).abs() < 0.05,
                "{key}: {} vs {exact}",
                estimate.value
            );
        }
    }

    #[test]
    fn two_series_with_generic_prep_hits_the_closed_form() {
        let mut spec = quantum_spec(Protocol::TwoSeries, 40_000);
        spec.config = Config {
            b: dir(1.0, 0.0, 0.0),
            c: dir(0.0, 1.0, 0.0),
            a: dir(1.0, -1.0, 0.0),
        };
        spec.prep = Some(PrepSpec::State(StatePrep::Amplitudes {
            s: 0.8,
            phi: 0.3,
            e: dir(0.2, 0.5, 1.0),
        }));
        let outcome = run_experiment(&spec, 29, &RunOptions::default()).unwrap();
        let e10 = &outcome.report.inequalities[0];
        assert!(!e10.insufficient_stats);
        let se = e10.std_error.unwrap();
        assert!(
            (e10.lhs - std::f64::consts::SQRT_2).abs() < 5.0 * se,
            "lhs {} vs sqrt2 (se {se})",
            e10.lhs
        );
        assert!(e10.z_score.is_some());
    }

    #[test]
    fn records_roundtrip_reproduces_the_report() {
        for spec in [
            lhv_spec(20_000),
            quantum_spec(Protocol::FreeRuns, 20_000),
            quantum_spec(Protocol::TwoSeries, 5_000),
            quantum_spec(Protocol::PreparedRuns, 20_000),
        ] {
            let options = RunOptions {
                keep_records: true,
                workers: None,
            };
            let outcome = run_experiment(&spec, 31, &options).unwrap();
            let records = outcome.records.unwrap();
            let mut buffer = Vec::new();
            write_run_records(&mut buffer, &records).unwrap();
            let read_back = read_run_records(buffer.as_slice()).unwrap();
            assert_eq!(read_back, records);
            let rerendered = report_from_records(&spec, 31, &read_back).unwrap();
            assert_eq!(rerendered, outcome.report, "protocol {:?}", spec.protocol);
        }
    }

    #[test]
    fn spec_free_analysis_matches_the_report_numbers() {
        let options = RunOptions {
            keep_records: true,
            workers: None,
        };
        for spec in [
            lhv_spec(10_000),
            quantum_spec(Protocol::TwoSeries, 4_000),
        ] {
            let outcome = run_experiment(&spec, 37, &options).unwrap();
            let analysis = analyze_records(outcome.records.as_ref().unwrap()).unwrap();
            assert_eq!(analysis.probabilities, outcome.report.probabilities);
            assert_eq!(analysis.expectations, outcome.report.expectations);
            assert_eq!(
                analysis.inequalities.len(),
                outcome.report.inequalities.len()
            );
            for (bare, full) in analysis
                .inequalities
                .iter()
                .zip(outcome.report.inequalities.iter())
            {
                assert_eq!(bare.variant, full.variant);
                assert_eq!(bare.lhs, full.lhs);
                assert_eq!(bare.margin, full.margin);
                assert_eq!(bare.z_score, full.z_score);
                assert_eq!(bare.degenerate, None);
            }
            let labels: Vec<_> = analysis.series.iter().map(|s| s.label.clone()).collect();
            let expected: Vec<_> = outcome
                .report
                .series
                .iter()
                .map(|s| s.label.clone())
                .collect();
            assert_eq!(labels, expected);
        }
        assert!(analyze_records(&[]).is_err());
    }

    #[test]
    fn records_from_the_wrong_protocol_are_rejected() {
        let outcome = run_experiment(
            &lhv_spec(1_000),
            1,
            &RunOptions {
                keep_records: true,
                workers: None,
            },
        )
        .unwrap();
        let records = outcome.records.unwrap();
        let two_series_spec = quantum_spec(Protocol::TwoSeries, 1_000);
        assert!(report_from_records(&two_series_spec, 1, &records).is_err());

        // Stripping hidden realities breaks the lhv contract.
        let mut stripped = records.clone();
        for r in &mut stripped[0].records {
            r.hidden_reality = None;
        }
        assert!(report_from_records(&lhv_spec(1_000), 1, &stripped).is_err());
    }

    #[test]
    fn free_and_prepared_estimates_agree() {
        // Same prep, same config: the conditional cell estimates must agree
        // across protocols within joint noise.
        let free = run_experiment(
            &quantum_spec(Protocol::FreeRuns, 300_000),
            41,
            &RunOptions::default(),
        )
        .unwrap()
        .report;
        let prepared = run_experiment(
            &quantum_spec(Protocol::PreparedRuns, 300_000),
            43,
            &RunOptions::default(),
        )
        .unwrap()
        .report;
        let key = "B+,C-";
        let a = &free.probabilities[key];
        let b = &prepared.probabilities[key];
        let spread = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!(
            (a.value - b.value).abs() < 5.0 * spread,
            "{} vs {} (spread {spread})",
            a.value,
            b.value
        );
    }

    #[test]
    fn report_json_roundtrip() {
        let outcome = run_experiment(&lhv_spec(5_000), 2, &RunOptions::default()).unwrap();
        let json = serde_json::to_string_pretty(&outcome.report).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, outcome.report);
    }

    #[test]
    fn sweep_covers_the_known_peaks() {
        let mut buffer = Vec::new();
        write_sweep_csv(&mut buffer, 1.0).unwrap();
        let mut rdr = csv::Reader::from_reader(buffer.as_slice());
        let mut best16 = f64::NEG_INFINITY;
        let mut best18 = f64::NEG_INFINITY;
        let mut at60 = None;
        for row in rdr.records() {
            let row = row.unwrap();
            let angle: f64 = row[0].parse().unwrap();
            let lhs16: f64 = row[4].parse().unwrap();
            let lhs18: f64 = row[5].parse().unwrap();
            best16 = best16.max(lhs16);
            best18 = best18.max(lhs18);
            if angle == 60.0 {
                at60 = Some(lhs16);
            }
        }
        assert!((at60.unwrap() - 1.5).abs() < 1e-12);
        assert!((best16 - 1.5).abs() < 1e-9);
        assert!(best18 > 2.333 && best18 <= 7.0 / 3.0 + 1e-9);
        assert!(write_sweep_csv(&mut Vec::new(), 0.0).is_err());
    }
}
