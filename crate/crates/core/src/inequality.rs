//! The inequality evaluators: count form, two probability forms, the
//! expectation form, and the two quantum closed forms, each producing an
//! [`InequalityReport`] with a violation margin and, for sampled data, a
//! significance classification.
//!
//! Every report obeys `margin = lhs - bound`. The count and probability
//! forms report the defect `lhs = X(a+,c-) - X(a+,b-) - X(b+,c-)` against
//! bound 0; the expectation and closed forms report their left side against
//! bound 1.

use serde::{Deserialize, Serialize};

use crate::geometry::{Config, Outcome, SettingLabel};
use crate::lhv::RealityDistribution;
use crate::quantum::{pair_prob_depolarized, QubitState};
use crate::records::{CountTable, ProbTable};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InequalityVariant {
    #[serde(rename = "counts-6")]
    Counts6,
    #[serde(rename = "prob-7")]
    Prob7,
    #[serde(rename = "prob-8")]
    Prob8,
    #[serde(rename = "expect-10")]
    Expect10,
    #[serde(rename = "quantum-16")]
    Quantum16,
    #[serde(rename = "quantum-18")]
    Quantum18,
}

impl InequalityVariant {
    pub fn name(&self) -> &'static str {
        match self {
            InequalityVariant::Counts6 => "counts-6",
            InequalityVariant::Prob7 => "prob-7",
            InequalityVariant::Prob8 => "prob-8",
            InequalityVariant::Expect10 => "expect-10",
            InequalityVariant::Quantum16 => "quantum-16",
            InequalityVariant::Quantum18 => "quantum-18",
        }
    }
}

/// How the evaluated quantities were normalized: raw event counts, per-pair
/// conditional frequencies, or exact (closed-form) probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    RawCounts,
    PerPair,
    Exact,
}

/// Significance classification of a sampled margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Violated,
    Suggestive,
    Consistent,
}

/// z-score cutoffs for the sampled-mode classification. Defaults follow the
/// conventional discovery thresholds: z > 5 violated, z in [3, 5] suggestive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub violated_z: f64,
    pub suggestive_z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            violated_z: 5.0,
            suggestive_z: 3.0,
        }
    }
}

impl Thresholds {
    pub fn classify(&self, z: f64) -> Verdict {
        if z > self.violated_z {
            Verdict::Violated
        } else if z >= self.suggestive_z {
            Verdict::Suggestive
        } else {
            Verdict::Consistent
        }
    }
}

/// Outcome of evaluating one inequality. `margin = lhs - bound` always; a
/// positive margin means the bound failed. Exact evaluations carry no
/// standard error and declare violation from the margin sign alone; sampled
/// evaluations attach `z = margin / std_error` and a [`Verdict`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub variant: InequalityVariant,
    pub lhs: f64,
    pub bound: f64,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Set when the data could not support the evaluation (empty cells or a
    /// zero spread); such reports are never marked violated.
    pub insufficient_stats: bool,
    pub normalization: Normalization,
    /// Whether the configuration in play had two (anti)parallel directions;
    /// absent when no configuration was involved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<bool>,
}

impl InequalityReport {
    /// Exact-mode report: violated exactly when the margin is positive.
    fn exact(variant: InequalityVariant, lhs: f64, bound: f64, normalization: Normalization) -> Self {
        let margin = lhs - bound;
        InequalityReport {
            variant,
            lhs,
            bound,
            margin,
            std_error: None,
            z_score: None,
            violated: margin > 0.0,
            verdict: None,
            insufficient_stats: false,
            normalization,
            degenerate: None,
        }
    }

    /// Sampled-mode report: classification via `margin / std_error`. A zero
    /// standard error leaves no basis for significance and is flagged as
    /// insufficient statistics.
    fn sampled(
        variant: InequalityVariant,
        lhs: f64,
        bound: f64,
        std_error: f64,
        thresholds: &Thresholds,
        normalization: Normalization,
    ) -> Self {
        let margin = lhs - bound;
        let mut report = InequalityReport {
            variant,
            lhs,
            bound,
            margin,
            std_error: Some(std_error),
            z_score: None,
            violated: false,
            verdict: None,
            insufficient_stats: false,
            normalization,
            degenerate: None,
        };
        if std_error > 0.0 {
            let z = margin / std_error;
            report.z_score = Some(z);
            report.verdict = Some(thresholds.classify(z));
            report.violated = z > thresholds.violated_z;
        } else {
            report.insufficient_stats = true;
        }
        report
    }

    fn insufficient(
        variant: InequalityVariant,
        lhs: f64,
        bound: f64,
        normalization: Normalization,
    ) -> Self {
        InequalityReport {
            variant,
            lhs,
            bound,
            margin: lhs - bound,
            std_error: None,
            z_score: None,
            violated: false,
            verdict: None,
            insufficient_stats: true,
            normalization,
            degenerate: None,
        }
    }
}

/// Source of the three cell probabilities the probability forms need:
/// either sampled per-pair frequencies (with standard errors) or an exact
/// evaluator (no standard errors).
pub trait PairProbs {
    /// Probability of `outcomes` given the ordered setting pair, or `None`
    /// when no data covers that pair.
    fn prob(&self, pair: (SettingLabel, SettingLabel), outcomes: (Outcome, Outcome))
        -> Option<f64>;

    /// Standard error of [`PairProbs::prob`]; `None` for exact sources.
    fn prob_std_error(
        &self,
        _pair: (SettingLabel, SettingLabel),
        _outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        None
    }
}

impl PairProbs for ProbTable {
    fn prob(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        ProbTable::prob(self, pair, outcomes)
    }

    fn prob_std_error(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        ProbTable::std_error(self, pair, outcomes)
    }
}

impl PairProbs for RealityDistribution {
    fn prob(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        Some(RealityDistribution::pair_prob(self, pair, outcomes))
    }
}

/// Exact sequential-measurement probabilities for a fixed state and
/// configuration; the noiseless case is `depolarization = 1`.
#[derive(Clone, Copy, Debug)]
pub struct ExactPairProbs {
    pub state: QubitState,
    pub config: Config,
    pub depolarization: f64,
}

impl ExactPairProbs {
    pub fn new(state: QubitState, config: Config) -> Self {
        ExactPairProbs {
            state,
            config,
            depolarization: 1.0,
        }
    }
}

impl PairProbs for ExactPairProbs {
    fn prob(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        Some(pair_prob_depolarized(
            &self.state,
            &self.config.direction(pair.0),
            &self.config.direction(pair.1),
            outcomes,
            self.depolarization,
        ))
    }
}

/// Count form: `N[a+,c-] <= N[a+,b-] + N[b+,c-]`, reported as the defect
/// `N1 - N2 - N3` against bound 0 with Poisson error `sqrt(N1 + N2 + N3)`.
/// All three relevant cells empty means insufficient statistics, not an
/// error.
pub fn eval_counts_6(table: &CountTable) -> InequalityReport {
    eval_counts_6_with(table, &Thresholds::default())
}

pub fn eval_counts_6_with(table: &CountTable, thresholds: &Thresholds) -> InequalityReport {
    use Outcome::*;
    use SettingLabel::*;
    let n1 = table.count(A, Plus, C, Minus);
    let n2 = table.count(A, Plus, B, Minus);
    let n3 = table.count(B, Plus, C, Minus);
    let lhs = n1 as f64 - n2 as f64 - n3 as f64;
    let total = n1 + n2 + n3;
    if total == 0 {
        return InequalityReport::insufficient(
            InequalityVariant::Counts6,
            lhs,
            0.0,
            Normalization::RawCounts,
        );
    }
    InequalityReport::sampled(
        InequalityVariant::Counts6,
        lhs,
        0.0,
        (total as f64).sqrt(),
        thresholds,
        Normalization::RawCounts,
    )
}

/// The two cells-by-form tables: probability form with + first
/// (`P(a+,c-) <= P(a+,b-) + P(b+,c-)`) and its all-signs-flipped mirror.
fn prob_form_cells(
    variant: InequalityVariant,
) -> [((SettingLabel, SettingLabel), (Outcome, Outcome)); 3] {
    use Outcome::*;
    use SettingLabel::*;
    match variant {
        InequalityVariant::Prob7 => [
            ((A, C), (Plus, Minus)),
            ((A, B), (Plus, Minus)),
            ((B, C), (Plus, Minus)),
        ],
        InequalityVariant::Prob8 => [
            ((A, C), (Minus, Plus)),
            ((A, B), (Minus, Plus)),
            ((B, C), (Minus, Plus)),
        ],
        _ => unreachable!("not a probability form"),
    }
}

/// Probability form: `P(a+,c-) <= P(a+,b-) + P(b+,c-)`, reported as the
/// defect against bound 0. Missing pairs flag insufficient statistics (the
/// available cells still enter the point estimate, counted as zero when
/// absent).
pub fn eval_prob_7<P: PairProbs>(source: &P) -> InequalityReport {
    eval_prob_form(InequalityVariant::Prob7, source, &Thresholds::default())
}

pub fn eval_prob_7_with<P: PairProbs>(source: &P, thresholds: &Thresholds) -> InequalityReport {
    eval_prob_form(InequalityVariant::Prob7, source, thresholds)
}

/// Mirror of [`eval_prob_7`] with every outcome sign flipped:
/// `P(a-,c+) <= P(a-,b+) + P(b-,c+)`.
pub fn eval_prob_8<P: PairProbs>(source: &P) -> InequalityReport {
    eval_prob_form(InequalityVariant::Prob8, source, &Thresholds::default())
}

pub fn eval_prob_8_with<P: PairProbs>(source: &P, thresholds: &Thresholds) -> InequalityReport {
    eval_prob_form(InequalityVariant::Prob8, source, thresholds)
}

fn eval_prob_form<P: PairProbs>(
    variant: InequalityVariant,
    source: &P,
    thresholds: &Thresholds,
) -> InequalityReport {
    let cells = prob_form_cells(variant);
    let probs: Vec<Option<f64>> = cells.iter().map(|(p, o)| source.prob(*p, *o)).collect();
    let errors: Vec<Option<f64>> = cells
        .iter()
        .map(|(p, o)| source.prob_std_error(*p, *o))
        .collect();
    let value = |i: usize| probs[i].unwrap_or(0.0);
    let lhs = value(0) - value(1) - value(2);
    if probs.iter().any(|p| p.is_none()) {
        return InequalityReport::insufficient(variant, lhs, 0.0, Normalization::PerPair);
    }
    if errors.iter().all(|e| e.is_some()) {
        let variance: f64 = errors.iter().map(|e| e.unwrap().powi(2)).sum();
        InequalityReport::sampled(
            variant,
            lhs,
            0.0,
            variance.sqrt(),
            thresholds,
            Normalization::PerPair,
        )
    } else {
        InequalityReport::exact(variant, lhs, 0.0, Normalization::Exact)
    }
}

/// One product-expectation estimate; exact values carry no standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEstimate {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

impl ExpectationEstimate {
    pub fn exact(value: f64) -> Self {
        ExpectationEstimate {
            value,
            std_error: None,
        }
    }

    pub fn sampled(value: f64, std_error: f64) -> Self {
        ExpectationEstimate {
            value,
            std_error: Some(std_error),
        }
    }
}

/// Expectation form: `E(a,b) + E(b,c) - E(a,c) <= 1`. Each estimate must lie
/// in [-1, 1].
pub fn eval_expect_10(
    e_ab: ExpectationEstimate,
    e_bc: ExpectationEstimate,
    e_ac: ExpectationEstimate,
) -> Result<InequalityReport> {
    eval_expect_10_with(e_ab, e_bc, e_ac, &Thresholds::default())
}

pub fn eval_expect_10_with(
    e_ab: ExpectationEstimate,
    e_bc: ExpectationEstimate,
    e_ac: ExpectationEstimate,
    thresholds: &Thresholds,
) -> Result<InequalityReport> {
    for (name, e) in [("E(a,b)", e_ab), ("E(b,c)", e_bc), ("E(a,c)", e_ac)] {
        if !e.value.is_finite() || e.value.abs() > 1.0 {
            return Err(Error::Domain(format!(
                "{name} = {} lies outside [-1, 1]",
                e.value
            )));
        }
    }
    let lhs = e_ab.value + e_bc.value - e_ac.value;
    let estimates = [e_ab, e_bc, e_ac];
    let report = if estimates.iter().all(|e| e.std_error.is_some()) {
        let variance: f64 = estimates.iter().map(|e| e.std_error.unwrap().powi(2)).sum();
        InequalityReport::sampled(
            InequalityVariant::Expect10,
            lhs,
            1.0,
            variance.sqrt(),
            thresholds,
            Normalization::PerPair,
        )
    } else {
        InequalityReport::exact(InequalityVariant::Expect10, lhs, 1.0, Normalization::Exact)
    };
    Ok(report)
}

/// Closed form bounding the expectation combination for the quantum model:
/// `a.b - a.c + b.c`, to compare against 1.
pub fn quantum_lhs_16(config: &Config) -> f64 {
    let ab = config.a.dot(&config.b);
    let ac = config.a.dot(&config.c);
    let bc = config.b.dot(&config.c);
    ab - ac + bc
}

/// Closed form bounding the probability combination for the quantum model
/// with the first axis's +1 eigenstate prepared:
/// `b.(a+c) - 2 a.c + (a.b)(b.c)`, to compare against 1.
pub fn quantum_lhs_18(config: &Config) -> f64 {
    let ab = config.a.dot(&config.b);
    let ac = config.a.dot(&config.c);
    let bc = config.b.dot(&config.c);
    ab + bc - 2.0 * ac + ab * bc
}

/// [`quantum_lhs_16`] as a full exact-mode report (bound 1).
pub fn eval_quantum_16(config: &Config) -> InequalityReport {
    let mut report = InequalityReport::exact(
        InequalityVariant::Quantum16,
        quantum_lhs_16(config),
        1.0,
        Normalization::Exact,
    );
    report.degenerate = Some(config.is_degenerate());
    report
}

/// [`quantum_lhs_18`] as a full exact-mode report (bound 1).
pub fn eval_quantum_18(config: &Config) -> InequalityReport {
    let mut report = InequalityReport::exact(
        InequalityVariant::Quantum18,
        quantum_lhs_18(config),
        1.0,
        Normalization::Exact,
    );
    report.degenerate = Some(config.is_degenerate());
    report
}

/// z-score of a sampled margin: `margin / std_error`. Requires a strictly
/// positive, finite standard error.
pub fn significance(margin: f64, std_error: f64) -> Result<f64> {
    if !(std_error.is_finite() && std_error > 0.0) {
        return Err(Error::Domain(format!(
            "standard error {std_error} must be positive and finite"
        )));
    }
    Ok(margin / std_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Direction;
    use crate::geometry::{Outcome::*, SettingLabel::*};
    use crate::quantum::StatePrep;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dir(x: f64, y: f64, z: f64) -> Direction {
        Direction::new(x, y, z).unwrap()
    }

    fn reference_16_config() -> Config {
        Config {
            b: dir(1.0, 0.0, 0.0),
            c: dir(0.0, 1.0, 0.0),
            a: dir(1.0, -1.0, 0.0),
        }
    }

    fn reference_18_config() -> Config {
        Config {
            a: dir(1.0, 0.0, 0.0),
            c: dir(0.0, 1.0, 0.0),
            b: dir(1.0, 1.0, 0.0),
        }
    }

    fn random_config(rng: &mut ChaCha8Rng) -> Config {
        let random_dir = |rng: &mut ChaCha8Rng| loop {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            let y = rng.random::<f64>() * 2.0 - 1.0;
            let z = rng.random::<f64>() * 2.0 - 1.0;
            if let Ok(d) = Direction::new(x, y, z) {
                return d;
            }
        };
        Config {
            a: random_dir(rng),
            b: random_dir(rng),
            c: random_dir(rng),
        }
    }

    #[test]
    fn closed_forms_at_reference_configurations() {
        let sqrt2 = std::f64::consts::SQRT_2;
        assert!((quantum_lhs_16(&reference_16_config()) - sqrt2).abs() < 1e-12);
        assert!((quantum_lhs_18(&reference_18_config()) - (sqrt2 + 0.5)).abs() < 1e-12);

        // All equal: both forms sit exactly on the bound.
        let same = Config {
            a: dir(0.3, -0.4, 0.5),
            b: dir(0.3, -0.4, 0.5),
            c: dir(0.3, -0.4, 0.5),
        };
        assert!((quantum_lhs_16(&same) - 1.0).abs() < 1e-12);
        assert!((quantum_lhs_18(&same) - 1.0).abs() < 1e-12);
        let report = eval_quantum_16(&same);
        assert!(!report.violated);
        assert_eq!(report.degenerate, Some(true));

        // Coplanar at 0/60/120 degrees.
        let coplanar = Config {
            a: dir(0.0, 0.0, 1.0),
            b: dir(60f64.to_radians().sin(), 0.0, 60f64.to_radians().cos()),
            c: dir(120f64.to_radians().sin(), 0.0, 120f64.to_radians().cos()),
        };
        assert!((quantum_lhs_16(&coplanar) - 1.5).abs() < 1e-12);

        // Coplanar with the middle axis bisecting, a.b = b.c = 1/3.
        let theta = (1f64 / 3.0).acos();
        let bisect = Config {
            b: dir(0.0, 0.0, 1.0),
            a: dir(theta.sin(), 0.0, theta.cos()),
            c: dir(-theta.sin(), 0.0, theta.cos()),
        };
        assert!((quantum_lhs_18(&bisect) - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_reports_flag_violations() {
        let report = eval_quantum_16(&reference_16_config());
        assert!(report.violated);
        assert!((report.margin - (std::f64::consts::SQRT_2 - 1.0)).abs() < 1e-12);
        assert_eq!(report.bound, 1.0);
        assert_eq!(report.degenerate, Some(false));
        assert_eq!(report.normalization, Normalization::Exact);
    }

    #[test]
    fn count_form_evaluation() {
        let mut table = CountTable::new();
        table.add(A, Plus, C, Minus, 10);
        table.add(A, Plus, B, Minus, 3);
        table.add(B, Plus, C, Minus, 2);
        let report = eval_counts_6(&table);
        assert_eq!(report.lhs, 5.0);
        assert_eq!(report.bound, 0.0);
        assert_eq!(report.margin, 5.0);
        assert!((report.std_error.unwrap() - 15f64.sqrt()).abs() < 1e-12);
        assert!((report.z_score.unwrap() - 5.0 / 15f64.sqrt()).abs() < 1e-12);
        assert_eq!(report.verdict, Some(Verdict::Consistent));
        assert!(!report.violated);
        assert_eq!(report.normalization, Normalization::RawCounts);
    }

    #[test]
    fn count_form_on_empty_table() {
        let report = eval_counts_6(&CountTable::new());
        assert_eq!(report.margin, 0.0);
        assert!(report.insufficient_stats);
        assert!(!report.violated);
        assert!(report.z_score.is_none());
    }

    #[test]
    fn probability_forms_exact_from_distribution() {
        let uniform = RealityDistribution::uniform();
        let report = eval_prob_7(&uniform);
        // 0.25 - 0.25 - 0.25
        assert!((report.margin + 0.25).abs() < 1e-15);
        assert!(!report.violated);
        assert_eq!(report.normalization, Normalization::Exact);
        assert!(report.std_error.is_none());

        let mirror = eval_prob_8(&uniform);
        assert!((mirror.margin + 0.25).abs() < 1e-15);
    }

    #[test]
    fn lhv_distributions_never_violate_any_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let dist = RealityDistribution::random(&mut rng);
            let p7 = eval_prob_7(&dist);
            let p8 = eval_prob_8(&dist);
            assert!(p7.margin <= 1e-12 && !p7.violated);
            assert!(p8.margin <= 1e-12 && !p8.violated);
            let e10 = eval_expect_10(
                ExpectationEstimate::exact(dist.expected_value(A, B)),
                ExpectationEstimate::exact(dist.expected_value(B, C)),
                ExpectationEstimate::exact(dist.expected_value(A, C)),
            )
            .unwrap();
            assert!(e10.margin <= 1e-12 && !e10.violated);
        }
    }

    #[test]
    fn probability_form_sampled_and_missing_pairs() {
        let mut table = CountTable::new();
        table.add(A, Plus, C, Minus, 50);
        table.add(A, Plus, C, Plus, 50);
        table.add(A, Plus, B, Minus, 10);
        table.add(A, Plus, B, Plus, 90);
        // Pair (B, C) never sampled.
        let probs = ProbTable::from_counts(&table);
        let report = eval_prob_7(&probs);
        assert!(report.insufficient_stats);
        assert!(!report.violated);
        assert!((report.lhs - (0.5 - 0.1)).abs() < 1e-12);

        table.add(B, Plus, C, Minus, 20);
        table.add(B, Plus, C, Plus, 80);
        let probs = ProbTable::from_counts(&table);
        let report = eval_prob_7(&probs);
        assert!(!report.insufficient_stats);
        assert_eq!(report.normalization, Normalization::PerPair);
        let expected_se =
            (0.25f64 / 100.0 + 0.09 / 100.0 + 0.16 / 100.0).sqrt();
        assert!((report.std_error.unwrap() - expected_se).abs() < 1e-12);
        assert!((report.margin - 0.2).abs() < 1e-12);
        // z = 0.2 / sqrt(0.005) = 2.83: below every alarm threshold.
        assert_eq!(report.verdict, Some(Verdict::Consistent));
        assert!(!report.violated);
    }

    #[test]
    fn exact_quantum_probability_margin_matches_closed_form() {
        // With the first axis's +1 eigenstate prepared, the probability-form
        // defect is exactly (closed form - 1) / 4.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..200 {
            let config = random_config(&mut rng);
            let state = StatePrep::eigenstate(A, Plus).resolve(&config).unwrap();
            let exact = ExactPairProbs::new(state, config);
            let report = eval_prob_7(&exact);
            let predicted = (quantum_lhs_18(&config) - 1.0) / 4.0;
            assert!(
                (report.margin - predicted).abs() < 1e-12,
                "margin {} vs predicted {}",
                report.margin,
                predicted
            );
        }
    }

    #[test]
    fn exact_expectation_form_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for _ in 0..200 {
            let config = random_config(&mut rng);
            let report = eval_expect_10(
                ExpectationEstimate::exact(config.a.dot(&config.b)),
                ExpectationEstimate::exact(config.b.dot(&config.c)),
                ExpectationEstimate::exact(config.a.dot(&config.c)),
            )
            .unwrap();
            assert!((report.lhs - quantum_lhs_16(&config)).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_config_probability_margin() {
        let config = reference_18_config();
        let state = StatePrep::eigenstate(A, Plus).resolve(&config).unwrap();
        let report = eval_prob_7(&ExactPairProbs::new(state, config));
        let expected = (std::f64::consts::SQRT_2 - 0.5) / 4.0;
        assert!((report.margin - expected).abs() < 1e-12);
        assert!(report.violated);
    }

    #[test]
    fn expectation_form_validates_domain() {
        let bad = eval_expect_10(
            ExpectationEstimate::exact(1.2),
            ExpectationEstimate::exact(0.0),
            ExpectationEstimate::exact(0.0),
        );
        assert!(bad.is_err());
        let ok = eval_expect_10(
            ExpectationEstimate::sampled(0.7, 0.001),
            ExpectationEstimate::sampled(0.7, 0.001),
            ExpectationEstimate::sampled(-0.7, 0.001),
        )
        .unwrap();
        assert!((ok.lhs - 2.1).abs() < 1e-12);
        assert!(ok.violated);
        assert_eq!(ok.verdict, Some(Verdict::Violated));
        assert_eq!(ok.bound, 1.0);
    }

    #[test]
    fn significance_and_thresholds() {
        assert_eq!(significance(0.1, 0.02).unwrap(), 5.0);
        assert_eq!(significance(0.0, 0.5).unwrap(), 0.0);
        assert!(significance(0.1, 0.0).is_err());
        assert!(significance(0.1, -1.0).is_err());
        assert!(significance(0.1, f64::NAN).is_err());

        let thresholds = Thresholds::default();
        assert_eq!(thresholds.classify(6.0), Verdict::Violated);
        assert_eq!(thresholds.classify(5.0), Verdict::Suggestive);
        assert_eq!(thresholds.classify(3.0), Verdict::Suggestive);
        assert_eq!(thresholds.classify(2.9), Verdict::Consistent);
        assert_eq!(thresholds.classify(-10.0), Verdict::Consistent);
    }

    #[test]
    fn zero_spread_is_flagged_not_classified() {
        let mut table = CountTable::new();
        // All three pairs sampled but the relevant cells have zero frequency
        // with zero estimated spread: no basis for a significance call.
        table.add(A, Plus, C, Plus, 10);
        table.add(A, Plus, B, Plus, 10);
        table.add(B, Plus, C, Plus, 10);
        let probs = ProbTable::from_counts(&table);
        let report = eval_prob_7(&probs);
        assert!(report.insufficient_stats);
        assert!(!report.violated);
        assert!(report.z_score.is_none());
    }

    #[test]
    fn report_serialization_names() {
        let report = eval_quantum_18(&reference_18_config());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"variant\":\"quantum-18\""));
        assert!(json.contains("\"normalization\":\"exact\""));
        let back: InequalityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
