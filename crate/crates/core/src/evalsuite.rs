//! Evaluation over per-turn prediction records: joint goal accuracy, the
//! per-domain and turn-depth breakdowns, the Wrong/Ignore/Spurious error
//! taxonomy, slot-category accuracy, and run-to-run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Schema, SlotCategory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction records to evaluate")]
    Empty,
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// One evaluated turn: gold and predicted beliefs as plain maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub active_domains: Vec<String>,
    pub gold_belief: BTreeMap<String, String>,
    pub predicted_belief: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub dialogues: usize,
    pub turns: usize,
    pub jga: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub label: String,
    pub turns: usize,
    pub jga: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotErrorCounts {
    pub wrong: usize,
    pub ignore: usize,
    pub spurious: usize,
}

impl SlotErrorCounts {
    pub fn total(&self) -> usize {
        self.wrong + self.ignore + self.spurious
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub wrong: usize,
    pub ignore: usize,
    pub spurious: usize,
    /// Total slot-level disagreements; the base for the three rates.
    pub disagreements: usize,
    pub per_slot: BTreeMap<String, SlotErrorCounts>,
}

impl ErrorReport {
    /// (wrong, ignore, spurious) as fractions of all disagreements.
    pub fn rates(&self) -> (f64, f64, f64) {
        if self.disagreements == 0 {
            return (0.0, 0.0, 0.0);
        }
        let base = self.disagreements as f64;
        (
            self.wrong as f64 / base,
            self.ignore as f64 / base,
            self.spurious as f64 / base,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub slots: usize,
    pub turns: usize,
    pub jga: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_dialogues: usize,
    pub n_turns: usize,
    pub joint_goal_accuracy: f64,
    pub domain_jga: BTreeMap<String, DomainReport>,
    pub turn_bins: Vec<BinReport>,
    pub errors: ErrorReport,
    pub slot_type_jga: BTreeMap<String, GroupReport>,
    pub warnings_total: usize,
    /// Hash of (dialogue_id, turn_index, gold belief) over all records:
    /// two reports are comparable only if their fingerprints match.
    pub fingerprint: String,
}

/// Exact-match accuracy over full belief maps.
pub fn joint_goal_accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let matched = records
        .iter()
        .filter(|r| r.gold_belief == r.predicted_belief)
        .count();
    matched as f64 / records.len() as f64
}

fn restrict<'a>(
    belief: &'a BTreeMap<String, String>,
    keep: impl Fn(&str) -> bool + 'a,
) -> BTreeMap<&'a str, &'a str> {
    belief
        .iter()
        .filter(|(slot, _)| keep(slot))
        .map(|(slot, value)| (slot.as_str(), value.as_str()))
        .collect()
}

/// Per-domain accuracy: only dialogues that involve the domain count, and
/// both beliefs are restricted to the domain's slots before comparison.
pub fn domain_jga(records: &[PredictionRecord], schema: &Schema) -> BTreeMap<String, DomainReport> {
    let mut out = BTreeMap::new();
    for domain in schema.domains() {
        let prefix = format!("{domain}.");
        let involving: Vec<&PredictionRecord> = records
            .iter()
            .filter(|r| r.active_domains.iter().any(|d| d == &domain))
            .collect();
        if involving.is_empty() {
            continue;
        }
        let matched = involving
            .iter()
            .filter(|r| {
                restrict(&r.gold_belief, |s| s.starts_with(&prefix))
                    == restrict(&r.predicted_belief, |s| s.starts_with(&prefix))
            })
            .count();
        let dialogues = involving
            .iter()
            .map(|r| r.dialogue_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        out.insert(
            domain.clone(),
            DomainReport {
                dialogues,
                turns: involving.len(),
                jga: matched as f64 / involving.len() as f64,
            },
        );
    }
    out
}

const BIN_LABELS: [&str; 3] = ["1-3", "4-6", "7+"];

fn bin_for(previous_turns: u32) -> Option<usize> {
    match previous_turns {
        0 => None,
        1..=3 => Some(0),
        4..=6 => Some(1),
        _ => Some(2),
    }
}

/// Accuracy grouped by how many turns precede the evaluated one. First
/// turns have no preceding context and are excluded.
pub fn turn_binned_jga(records: &[PredictionRecord]) -> Vec<BinReport> {
    let mut turns = [0usize; 3];
    let mut matched = [0usize; 3];
    for record in records {
        if let Some(bin) = bin_for(record.turn_index.saturating_sub(1)) {
            turns[bin] += 1;
            if record.gold_belief == record.predicted_belief {
                matched[bin] += 1;
            }
        }
    }
    BIN_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| BinReport {
            label: label.to_string(),
            turns: turns[i],
            jga: if turns[i] == 0 {
                0.0
            } else {
                matched[i] as f64 / turns[i] as f64
            },
        })
        .collect()
}

/// Partitions every slot-level disagreement: Wrong (both sides have a
/// value, they differ), Ignore (gold has a value, prediction lacks it),
/// Spurious (prediction has a value, gold lacks it). "dontcare" is an
/// ordinary value here.
pub fn classify_errors(records: &[PredictionRecord], schema: &Schema) -> ErrorReport {
    let mut report = ErrorReport {
        wrong: 0,
        ignore: 0,
        spurious: 0,
        disagreements: 0,
        per_slot: BTreeMap::new(),
    };
    for record in records {
        for spec in schema.slots() {
            let gold = record.gold_belief.get(&spec.slot_id);
            let predicted = record.predicted_belief.get(&spec.slot_id);
            let counts = match (gold, predicted) {
                (Some(g), Some(p)) if g != p => {
                    report.wrong += 1;
                    Some("wrong")
                }
                (Some(_), None) => {
                    report.ignore += 1;
                    Some("ignore")
                }
                (None, Some(_)) => {
                    report.spurious += 1;
                    Some("spurious")
                }
                _ => None,
            };
            if let Some(kind) = counts {
                let entry = report.per_slot.entry(spec.slot_id.clone()).or_default();
                match kind {
                    "wrong" => entry.wrong += 1,
                    "ignore" => entry.ignore += 1,
                    _ => entry.spurious += 1,
                }
            }
        }
    }
    report.disagreements = report.wrong + report.ignore + report.spurious;
    report
}

/// Accuracy per slot category: beliefs restricted to the category's slots.
pub fn slot_type_jga(
    records: &[PredictionRecord],
    schema: &Schema,
) -> BTreeMap<String, GroupReport> {
    let mut out = BTreeMap::new();
    for category in [
        SlotCategory::Explicit,
        SlotCategory::Implicit,
        SlotCategory::Other,
    ] {
        let members: BTreeSet<&str> = schema.category_slots(category).into_iter().collect();
        if members.is_empty() {
            continue;
        }
        let matched = records
            .iter()
            .filter(|r| {
                restrict(&r.gold_belief, |s| members.contains(s))
                    == restrict(&r.predicted_belief, |s| members.contains(s))
            })
            .count();
        out.insert(
            category.to_string(),
            GroupReport {
                slots: members.len(),
                turns: records.len(),
                jga: if records.is_empty() {
                    0.0
                } else {
                    matched as f64 / records.len() as f64
                },
            },
        );
    }
    out
}

/// FNV-1a hash of the evaluation set identity (ids, turn indices, gold).
pub fn eval_fingerprint(records: &[PredictionRecord]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    for record in records {
        feed(record.dialogue_id.as_bytes());
        feed(&record.turn_index.to_le_bytes());
        for (slot, value) in &record.gold_belief {
            feed(slot.as_bytes());
            feed(b"=");
            feed(value.as_bytes());
            feed(b";");
        }
        feed(b"\x1e");
    }
    format!("{hash:016x}")
}

impl EvalReport {
    pub fn from_records(
        records: &[PredictionRecord],
        schema: &Schema,
    ) -> Result<EvalReport, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let dialogues: BTreeSet<&str> =
            records.iter().map(|r| r.dialogue_id.as_str()).collect();
        Ok(EvalReport {
            n_dialogues: dialogues.len(),
            n_turns: records.len(),
            joint_goal_accuracy: joint_goal_accuracy(records),
            domain_jga: domain_jga(records, schema),
            turn_bins: turn_binned_jga(records),
            errors: classify_errors(records, schema),
            slot_type_jga: slot_type_jga(records, schema),
            warnings_total: records.iter().map(|r| r.warnings).sum(),
            fingerprint: eval_fingerprint(records),
        })
    }

    /// Headline figures: sizes, warnings, and the joint goal accuracy.
    pub fn render_summary(&self) -> String {
        format!(
            "turns: {}  dialogues: {}  parse warnings: {}\njoint goal accuracy: {:.4}\n",
            self.n_turns, self.n_dialogues, self.warnings_total, self.joint_goal_accuracy
        )
    }

    pub fn render_domains(&self) -> String {
        let mut out = String::from("domain jga:\n");
        for (domain, report) in &self.domain_jga {
            out.push_str(&format!(
                "  {domain}: {:.4} ({} dialogues, {} turns)\n",
                report.jga, report.dialogues, report.turns
            ));
        }
        out
    }

    pub fn render_bins(&self) -> String {
        let mut out = String::from("turn-binned jga (by previous turns):\n");
        for bin in &self.turn_bins {
            if bin.turns == 0 {
                out.push_str(&format!("  {}: n/a (0 turns)\n", bin.label));
            } else {
                out.push_str(&format!(
                    "  {}: {:.4} ({} turns)\n",
                    bin.label, bin.jga, bin.turns
                ));
            }
        }
        out
    }

    pub fn render_errors(&self) -> String {
        let (wrong, ignore, spurious) = self.errors.rates();
        let mut out = format!(
            "errors: wrong {} ({:.1}%), ignore {} ({:.1}%), spurious {} ({:.1}%) of {} disagreements\n",
            self.errors.wrong,
            wrong * 100.0,
            self.errors.ignore,
            ignore * 100.0,
            self.errors.spurious,
            spurious * 100.0,
            self.errors.disagreements
        );
        for (slot, counts) in &self.errors.per_slot {
            out.push_str(&format!(
                "  {slot}: wrong {} ignore {} spurious {}\n",
                counts.wrong, counts.ignore, counts.spurious
            ));
        }
        out
    }

    pub fn render_slot_types(&self) -> String {
        let mut out = String::from("slot-type jga:\n");
        for (category, report) in &self.slot_type_jga {
            out.push_str(&format!(
                "  {category}: {:.4} ({} slots)\n",
                report.jga, report.slots
            ));
        }
        out
    }

    /// Plain-text rendering of the full report.
    pub fn render(&self) -> String {
        [
            self.render_summary(),
            self.render_domains(),
            self.render_bins(),
            self.render_errors(),
            self.render_slot_types(),
        ]
        .concat()
    }
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub baseline: f64,
    pub candidate: f64,
    /// Candidate minus baseline, in percentage points.
    pub delta_pp: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub rows: Vec<CompareRow>,
    pub fingerprint_match: bool,
}

/// Aligns two reports metric by metric. Error rates are normalized within
/// each report (its own disagreement total), so they stay comparable even
/// when the absolute error counts differ.
pub fn compare_runs(baseline: &EvalReport, candidate: &EvalReport) -> RunComparison {
    let mut rows = Vec::new();
    let mut push = |metric: &str, a: f64, b: f64, higher_is_better: bool| {
        rows.push(CompareRow {
            metric: metric.to_string(),
            baseline: a,
            candidate: b,
            delta_pp: (b - a) * 100.0,
            higher_is_better,
        });
    };
    push(
        "joint goal accuracy",
        baseline.joint_goal_accuracy,
        candidate.joint_goal_accuracy,
        true,
    );
    for (domain, a) in &baseline.domain_jga {
        if let Some(b) = candidate.domain_jga.get(domain) {
            push(&format!("domain {domain} jga"), a.jga, b.jga, true);
        }
    }
    for (a, b) in baseline.turn_bins.iter().zip(&candidate.turn_bins) {
        if a.turns > 0 && b.turns > 0 {
            push(&format!("turns {} jga", a.label), a.jga, b.jga, true);
        }
    }
    let (aw, ai, asp) = baseline.errors.rates();
    let (bw, bi, bsp) = candidate.errors.rates();
    push("wrong rate", aw, bw, false);
    push("ignore rate", ai, bi, false);
    push("spurious rate", asp, bsp, false);
    for (category, a) in &baseline.slot_type_jga {
        if let Some(b) = candidate.slot_type_jga.get(category) {
            push(&format!("{category} jga"), a.jga, b.jga, true);
        }
    }
    RunComparison {
        rows,
        fingerprint_match: baseline.fingerprint == candidate.fingerprint,
    }
}

impl RunComparison {
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.fingerprint_match {
            out.push_str("warning: reports cover different evaluation sets\n");
        }
        let width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(0);
        for row in &self.rows {
            let marker = if row.delta_pp.abs() < 1e-9 {
                '='
            } else if (row.delta_pp > 0.0) == row.higher_is_better {
                '▲'
            } else {
                '▽'
            };
            out.push_str(&format!(
                "{:width$}  {:.4} -> {:.4}  {:+.2} pp {}\n",
                row.metric,
                row.baseline,
                row.candidate,
                row.delta_pp,
                marker,
                width = width
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Record and report files
// ---------------------------------------------------------------------------

pub fn save_records(records: &[PredictionRecord], path: &Path) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization");
        writeln!(writer, "{line}").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

pub fn load_records(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| EvalError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok(records)
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(report).expect("report serialization");
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Parse {
        path: path.display().to_string(),
        line: 0,
        source,
    })
}
