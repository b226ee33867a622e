//! Observable run data: run records, count tables, estimated probability
//! tables, and their CSV persistence.
//!
//! A run is two consecutive measurements; counts are indexed by
//! (first setting, first outcome, second setting, second outcome) over the
//! 9 ordered setting pairs and 4 outcome pairs.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::Error as DeError;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::{Outcome, SettingLabel};
use crate::lhv::JointReality;
use crate::Error;

/// One run: an ordered pair of settings with the observed outcomes, plus
/// the hidden reality when the LHV sampler produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunRecord {
    pub first_setting: SettingLabel,
    pub second_setting: SettingLabel,
    pub first_outcome: Outcome,
    pub second_outcome: Outcome,
    /// Populated only by the LHV sampler, for diagnostics; quantum runs
    /// leave it empty.
    pub hidden_reality: Option<JointReality>,
}

const CELLS: usize = 36;

fn cell_index(
    first_setting: SettingLabel,
    first_outcome: Outcome,
    second_setting: SettingLabel,
    second_outcome: Outcome,
) -> usize {
    ((first_setting.index() * 3 + second_setting.index()) * 2 + first_outcome.index()) * 2
        + second_outcome.index()
}

pub(crate) fn cell_key(
    first_setting: SettingLabel,
    first_outcome: Outcome,
    second_setting: SettingLabel,
    second_outcome: Outcome,
) -> String {
    format!(
        "{}{},{}{}",
        first_setting,
        sign_char(first_outcome),
        second_setting,
        sign_char(second_outcome)
    )
}

fn sign_char(outcome: Outcome) -> char {
    match outcome {
        Outcome::Plus => '+',
        Outcome::Minus => '-',
    }
}

fn outcome_from_sign(ch: char) -> Option<Outcome> {
    match ch {
        '+' => Some(Outcome::Plus),
        '-' => Some(Outcome::Minus),
        _ => None,
    }
}

fn parse_cell_key(key: &str) -> Result<(SettingLabel, Outcome, SettingLabel, Outcome), Error> {
    let bad = || Error::Parse(format!("invalid cell key {key:?}"));
    let mut chars = key.chars();
    let fs: SettingLabel = chars.next().ok_or_else(bad)?.to_string().parse()?;
    let fo = outcome_from_sign(chars.next().ok_or_else(bad)?).ok_or_else(bad)?;
    if chars.next() != Some(',') {
        return Err(bad());
    }
    let ss: SettingLabel = chars.next().ok_or_else(bad)?.to_string().parse()?;
    let so = outcome_from_sign(chars.next().ok_or_else(bad)?).ok_or_else(bad)?;
    if chars.next().is_some() {
        return Err(bad());
    }
    Ok((fs, fo, ss, so))
}

/// Iterates the 36 cells in canonical order: first setting, first outcome,
/// second setting, second outcome.
pub fn all_cells() -> impl Iterator<Item = (SettingLabel, Outcome, SettingLabel, Outcome)> {
    SettingLabel::ALL.into_iter().flat_map(|fs| {
        Outcome::BOTH.into_iter().flat_map(move |fo| {
            SettingLabel::ALL.into_iter().flat_map(move |ss| {
                Outcome::BOTH.into_iter().map(move |so| (fs, fo, ss, so))
            })
        })
    })
}

/// Run counts over every (first setting, first outcome, second setting,
/// second outcome) cell. The sum of all cells always equals `total_runs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTable {
    counts: [u64; CELLS],
    total_runs: u64,
}

impl Default for CountTable {
    fn default() -> Self {
        CountTable {
            counts: [0; CELLS],
            total_runs: 0,
        }
    }
}

impl CountTable {
    pub fn new() -> Self {
        CountTable::default()
    }

    pub fn record(&mut self, record: &RunRecord) {
        self.add(
            record.first_setting,
            record.first_outcome,
            record.second_setting,
            record.second_outcome,
            1,
        );
    }

    pub fn add(
        &mut self,
        first_setting: SettingLabel,
        first_outcome: Outcome,
        second_setting: SettingLabel,
        second_outcome: Outcome,
        count: u64,
    ) {
        self.counts[cell_index(first_setting, first_outcome, second_setting, second_outcome)] +=
            count;
        self.total_runs += count;
    }

    pub fn count(
        &self,
        first_setting: SettingLabel,
        first_outcome: Outcome,
        second_setting: SettingLabel,
        second_outcome: Outcome,
    ) -> u64 {
        self.counts[cell_index(first_setting, first_outcome, second_setting, second_outcome)]
    }

    /// Total runs whose ordered setting pair was (first, second).
    pub fn pair_total(&self, first_setting: SettingLabel, second_setting: SettingLabel) -> u64 {
        Outcome::BOTH
            .into_iter()
            .flat_map(|fo| {
                Outcome::BOTH
                    .into_iter()
                    .map(move |so| self.count(first_setting, fo, second_setting, so))
            })
            .sum()
    }

    pub fn total_runs(&self) -> u64 {
        self.total_runs
    }

    pub fn is_empty(&self) -> bool {
        self.total_runs == 0
    }

    /// Cellwise addition; the merge step of the parallel sampling contract.
    pub fn merge(&mut self, other: &CountTable) {
        for (dst, src) in self.counts.iter_mut().zip(other.counts.iter()) {
            *dst += src;
        }
        self.total_runs += other.total_runs;
    }

    /// Cell frequency conditional on the setting pair, or `None` when the
    /// pair was never sampled.
    pub fn frequency(
        &self,
        first_setting: SettingLabel,
        first_outcome: Outcome,
        second_setting: SettingLabel,
        second_outcome: Outcome,
    ) -> Option<f64> {
        let n = self.pair_total(first_setting, second_setting);
        if n == 0 {
            return None;
        }
        Some(
            self.count(first_setting, first_outcome, second_setting, second_outcome) as f64
                / n as f64,
        )
    }

    /// Estimated expectation of the outcome product for the ordered pair,
    /// with its standard error, or `None` when the pair was never sampled.
    pub fn expected_value(
        &self,
        first_setting: SettingLabel,
        second_setting: SettingLabel,
    ) -> Option<(f64, f64)> {
        let n = self.pair_total(first_setting, second_setting);
        if n == 0 {
            return None;
        }
        let n_f = n as f64;
        let same = self.count(first_setting, Outcome::Plus, second_setting, Outcome::Plus)
            + self.count(first_setting, Outcome::Minus, second_setting, Outcome::Minus);
        let diff = self.count(first_setting, Outcome::Plus, second_setting, Outcome::Minus)
            + self.count(first_setting, Outcome::Minus, second_setting, Outcome::Plus);
        let estimate = (same as f64 - diff as f64) / n_f;
        let variance = ((1.0 - estimate * estimate) / n_f).max(0.0);
        Some((estimate, variance.sqrt()))
    }

    /// Writes the table as CSV with columns
    /// `first_setting,first_outcome,second_setting,second_outcome,count`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "first_setting",
            "first_outcome",
            "second_setting",
            "second_outcome",
            "count",
        ])?;
        for (fs, fo, ss, so) in all_cells() {
            wtr.write_record([
                fs.to_string(),
                fo.to_string(),
                ss.to_string(),
                so.to_string(),
                self.count(fs, fo, ss, so).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<CountTable, Error> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut table = CountTable::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 5 {
                return Err(Error::Parse(format!(
                    "count table row has {} fields, expected 5",
                    row.len()
                )));
            }
            let fs: SettingLabel = row[0].parse()?;
            let fo: Outcome = row[1].parse()?;
            let ss: SettingLabel = row[2].parse()?;
            let so: Outcome = row[3].parse()?;
            let count: u64 = row[4]
                .parse()
                .map_err(|_| Error::Parse(format!("invalid count {:?}", &row[4])))?;
            table.add(fs, fo, ss, so, count);
        }
        Ok(table)
    }
}

impl Serialize for CountTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut cells = BTreeMap::new();
        for (fs, fo, ss, so) in all_cells() {
            cells.insert(cell_key(fs, fo, ss, so), self.count(fs, fo, ss, so));
        }
        let mut state = serializer.serialize_struct("CountTable", 2)?;
        state.serialize_field("total_runs", &self.total_runs)?;
        state.serialize_field("cells", &cells)?;
        state.end()
    }
}

impl<'de> Deserialize<'de> for CountTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            total_runs: u64,
            cells: BTreeMap<String, u64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut table = CountTable::new();
        for (key, count) in &raw.cells {
            let (fs, fo, ss, so) = parse_cell_key(key).map_err(D::Error::custom)?;
            table.add(fs, fo, ss, so, *count);
        }
        if table.total_runs != raw.total_runs {
            return Err(D::Error::custom(format!(
                "cell counts sum to {}, expected total_runs = {}",
                table.total_runs, raw.total_runs
            )));
        }
        Ok(table)
    }
}

/// Per-pair conditional probability estimates derived from a [`CountTable`].
#[derive(Clone, Debug)]
pub struct ProbTable {
    freq: [Option<f64>; CELLS],
    pair_totals: [u64; 9],
}

impl ProbTable {
    pub fn from_counts(table: &CountTable) -> ProbTable {
        let mut freq = [None; CELLS];
        let mut pair_totals = [0u64; 9];
        for (fs, fo, ss, so) in all_cells() {
            let idx = cell_index(fs, fo, ss, so);
            freq[idx] = table.frequency(fs, fo, ss, so);
            pair_totals[fs.index() * 3 + ss.index()] = table.pair_total(fs, ss);
        }
        ProbTable { freq, pair_totals }
    }

    pub fn prob(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        self.freq[cell_index(pair.0, outcomes.0, pair.1, outcomes.1)]
    }

    /// Normal-approximation standard error `sqrt(p(1-p)/n_pair)`.
    pub fn std_error(
        &self,
        pair: (SettingLabel, SettingLabel),
        outcomes: (Outcome, Outcome),
    ) -> Option<f64> {
        let p = self.prob(pair, outcomes)?;
        let n = self.pair_count(pair) as f64;
        Some((p * (1.0 - p) / n).max(0.0).sqrt())
    }

    pub fn pair_count(&self, pair: (SettingLabel, SettingLabel)) -> u64 {
        self.pair_totals[pair.0.index() * 3 + pair.1.index()]
    }
}

/// Run records of one named series. Single-series protocols use the empty
/// label; the two-series protocol labels series like `"AB+"`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRecords {
    pub label: String,
    pub records: Vec<RunRecord>,
}

const RECORD_HEADER: [&str; 7] = [
    "series",
    "run_index",
    "first_setting",
    "first_outcome",
    "second_setting",
    "second_outcome",
    "hidden_reality",
];

/// Writes run records as CSV, one row per run, indexed within each series.
pub fn write_run_records<W: Write>(writer: W, series: &[SeriesRecords]) -> Result<(), Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RECORD_HEADER)?;
    for s in series {
        for (index, record) in s.records.iter().enumerate() {
            wtr.write_record([
                s.label.clone(),
                index.to_string(),
                record.first_setting.to_string(),
                record.first_outcome.to_string(),
                record.second_setting.to_string(),
                record.second_outcome.to_string(),
                record
                    .hidden_reality
                    .map(|r| r.key())
                    .unwrap_or_default(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_run_records_file<P: AsRef<Path>>(
    path: P,
    series: &[SeriesRecords],
) -> Result<(), Error> {
    let file = std::fs::File::create(path)?;
    write_run_records(file, series)
}

/// Reads run records grouped by series, preserving first-seen series order.
pub fn read_run_records<R: Read>(reader: R) -> Result<Vec<SeriesRecords>, Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    {
        let headers = rdr.headers()?;
        if headers.len() != RECORD_HEADER.len() {
            return Err(Error::Parse(format!(
                "record file has {} columns, expected {}",
                headers.len(),
                RECORD_HEADER.len()
            )));
        }
    }
    let mut series: Vec<SeriesRecords> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let label = row[0].to_string();
        let record = RunRecord {
            first_setting: row[2].parse()?,
            first_outcome: row[3].parse()?,
            second_setting: row[4].parse()?,
            second_outcome: row[5].parse()?,
            hidden_reality: if row[6].is_empty() {
                None
            } else {
                Some(JointReality::from_key(&row[6])?)
            },
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.records.push(record),
            None => series.push(SeriesRecords {
                label,
                records: vec![record],
            }),
        }
    }
    Ok(series)
}

pub fn read_run_records_file<P: AsRef<Path>>(path: P) -> Result<Vec<SeriesRecords>, Error> {
    let file = std::fs::File::open(path)?;
    read_run_records(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Outcome::*, SettingLabel::*};

    fn sample_record() -> RunRecord {
        RunRecord {
            first_setting: A,
            second_setting: B,
            first_outcome: Plus,
            second_outcome: Minus,
            hidden_reality: Some(JointReality::new(Plus, Minus, Plus)),
        }
    }

    #[test]
    fn count_table_totals_stay_consistent() {
        let mut table = CountTable::new();
        table.record(&sample_record());
        table.add(C, Minus, C, Minus, 3);
        assert_eq!(table.total_runs(), 4);
        assert_eq!(table.count(A, Plus, B, Minus), 1);
        assert_eq!(table.pair_total(C, C), 3);
        assert_eq!(table.pair_total(B, A), 0);

        let mut other = CountTable::new();
        other.add(A, Plus, B, Minus, 2);
        table.merge(&other);
        assert_eq!(table.count(A, Plus, B, Minus), 3);
        assert_eq!(table.total_runs(), 6);

        let sum: u64 = all_cells()
            .map(|(fs, fo, ss, so)| table.count(fs, fo, ss, so))
            .sum();
        assert_eq!(sum, table.total_runs());
    }

    #[test]
    fn expected_value_from_counts() {
        let mut table = CountTable::new();
        table.add(A, Plus, B, Plus, 30);
        table.add(A, Minus, B, Minus, 30);
        table.add(A, Plus, B, Minus, 20);
        table.add(A, Minus, B, Plus, 20);
        let (e, se) = table.expected_value(A, B).unwrap();
        assert!((e - 0.2).abs() < 1e-12);
        assert!((se - (0.96f64 / 100.0).sqrt()).abs() < 1e-12);
        assert!(table.expected_value(B, C).is_none());
    }

    #[test]
    fn count_table_csv_roundtrip() {
        let mut table = CountTable::new();
        table.add(A, Plus, C, Minus, 7);
        table.add(B, Minus, B, Minus, 2);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = CountTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn count_table_json_roundtrip() {
        let mut table = CountTable::new();
        table.add(A, Plus, B, Minus, 5);
        let json = serde_json::to_string(&table).unwrap();
        assert!(json.contains("\"A+,B-\":5"));
        let back: CountTable = serde_json::from_str(&json).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn prob_table_estimates() {
        let mut table = CountTable::new();
        table.add(A, Plus, B, Minus, 25);
        table.add(A, Plus, B, Plus, 75);
        let probs = ProbTable::from_counts(&table);
        assert_eq!(probs.prob((A, B), (Plus, Minus)), Some(0.25));
        let se = probs.std_error((A, B), (Plus, Minus)).unwrap();
        assert!((se - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-12);
        assert_eq!(probs.prob((B, A), (Plus, Minus)), None);
        assert_eq!(probs.pair_count((A, B)), 100);
    }

    #[test]
    fn run_record_csv_roundtrip() {
        let series = vec![
            SeriesRecords {
                label: String::new(),
                records: vec![sample_record(), {
                    let mut r = sample_record();
                    r.hidden_reality = None;
                    r
                }],
            },
            SeriesRecords {
                label: "AB+".to_string(),
                records: vec![sample_record()],
            },
        ];
        let mut buf = Vec::new();
        write_run_records(&mut buf, &series).unwrap();
        let back = read_run_records(buf.as_slice()).unwrap();
        assert_eq!(series, back);
    }
}
