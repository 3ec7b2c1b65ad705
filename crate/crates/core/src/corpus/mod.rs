//! Multi-domain dialogue corpora with per-turn gold belief annotations:
//! loading and normalization, domain filtering, few-shot sampling,
//! domain-transfer splits, and a deterministic synthetic generator.

mod multiwoz;
mod synth;

pub use synth::{generate_synthetic, synthetic_schema, SynthConfig};

use multiwoz::convert_multiwoz;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::Schema;

/// Canonical spelling of the "don't care" sentinel value.
pub const DONTCARE: &str = "dontcare";
/// The absence sentinel. Never stored in a belief state; the backend answers
/// with it and the tracker omits the slot.
pub const NOT_MENTIONED: &str = "not mentioned";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse corpus file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate dialogue_id {0}")]
    DuplicateDialogueId(String),
    #[error("malformed record in dialogue {dialogue_id} turn {turn_index}: {reason}")]
    Malformed {
        dialogue_id: String,
        turn_index: u32,
        reason: String,
    },
    #[error("unknown slot-id {slot_id} in dialogue {dialogue_id} turn {turn_index}")]
    UnknownSlot {
        dialogue_id: String,
        turn_index: u32,
        slot_id: String,
    },
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("target domain {0} does not appear in the corpus")]
    UnknownDomain(String),
}

/// Normalizes a belief value: lowercase, collapse internal whitespace, strip
/// punctuation at the ends, canonicalize the dontcare sentinel.
pub fn normalize_value(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    // trim punctuation and whitespace together so stripping one cannot
    // expose the other at the edge (keeps normalization idempotent)
    let stripped = collapsed
        .trim_matches(|c: char| c.is_whitespace() || ".,!?;:'\"".contains(c))
        .to_string();
    match stripped.as_str() {
        "don't care" | "dont care" | "do n't care" | "do not care" => DONTCARE.to_string(),
        _ => stripped,
    }
}

/// Normalizes an utterance: lowercase, collapse whitespace.
pub fn normalize_utterance(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// A slot -> value mapping. Absence of a slot means "not mentioned"; the
/// stored values are normalized and may be the "dontcare" sentinel but never
/// the literal "not mentioned".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeliefState {
    entries: BTreeMap<String, String>,
}

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from raw pairs, normalizing values and dropping
    /// entries that normalize to absence.
    pub fn from_pairs<I, S, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, V)>,
        S: Into<String>,
        V: AsRef<str>,
    {
        let mut state = Self::new();
        for (slot, value) in pairs {
            state.set(slot.into(), value.as_ref());
        }
        state
    }

    /// Inserts a normalized value; a value that normalizes to empty or to
    /// "not mentioned" erases the slot instead.
    pub fn set(&mut self, slot_id: String, raw_value: &str) {
        let value = normalize_value(raw_value);
        if value.is_empty() || value == NOT_MENTIONED {
            self.entries.remove(&slot_id);
        } else {
            self.entries.insert(slot_id, value);
        }
    }

    pub fn get(&self, slot_id: &str) -> Option<&str> {
        self.entries.get(slot_id).map(String::as_str)
    }

    pub fn contains(&self, slot_id: &str) -> bool {
        self.entries.contains_key(slot_id)
    }

    pub fn remove(&mut self, slot_id: &str) -> Option<String> {
        self.entries.remove(slot_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries restricted to slots of one domain.
    pub fn domain_entries<'a>(&'a self, domain: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        let prefix = format!("{domain}.");
        self.iter().filter(move |(slot, _)| slot.starts_with(&prefix))
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.clone()
    }
}

/// One dialogue turn: the system utterance that preceded the user's message
/// (empty at the first turn), the user's message, and the cumulative gold
/// belief after this turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub turn_index: u32,
    pub system_utterance: String,
    pub user_utterance: String,
    pub gold_belief: BeliefState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub active_domains: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub schema_id: String,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Native,
    MultiwozStyle,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(CorpusFormat::Native),
            "multiwoz-style" | "multiwoz" => Ok(CorpusFormat::MultiwozStyle),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Wire format (native)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TurnFile {
    turn_index: u32,
    #[serde(default)]
    system_utterance: String,
    user_utterance: String,
    #[serde(default)]
    belief: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueFile {
    dialogue_id: String,
    active_domains: Vec<String>,
    turns: Vec<TurnFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusFile {
    schema_id: String,
    dialogues: Vec<DialogueFile>,
}

fn domain_of(slot_id: &str) -> &str {
    slot_id.split('.').next().unwrap_or(slot_id)
}

impl Corpus {
    /// Validates and normalizes raw dialogues into a corpus. Values are
    /// normalized, turn indices checked, duplicate ids rejected, and slot
    /// ids checked against the schema when one is given.
    fn from_file(file: CorpusFile, schema: Option<&Schema>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut dialogues = Vec::with_capacity(file.dialogues.len());
        for dlg in file.dialogues {
            if !seen.insert(dlg.dialogue_id.clone()) {
                return Err(CorpusError::DuplicateDialogueId(dlg.dialogue_id));
            }
            let active_domains: BTreeSet<String> =
                dlg.active_domains.into_iter().collect();
            if dlg.turns.is_empty() {
                return Err(CorpusError::Malformed {
                    dialogue_id: dlg.dialogue_id,
                    turn_index: 0,
                    reason: "dialogue has no turns".to_string(),
                });
            }
            let mut turns = Vec::with_capacity(dlg.turns.len());
            for (pos, turn) in dlg.turns.into_iter().enumerate() {
                let expected = pos as u32 + 1;
                if turn.turn_index != expected {
                    return Err(CorpusError::Malformed {
                        dialogue_id: dlg.dialogue_id,
                        turn_index: turn.turn_index,
                        reason: format!("expected turn_index {expected}"),
                    });
                }
                let user_utterance = normalize_utterance(&turn.user_utterance);
                if user_utterance.is_empty() {
                    return Err(CorpusError::Malformed {
                        dialogue_id: dlg.dialogue_id,
                        turn_index: turn.turn_index,
                        reason: "empty user utterance".to_string(),
                    });
                }
                let mut gold_belief = BeliefState::new();
                for (slot_id, value) in turn.belief {
                    if let Some(schema) = schema {
                        if !schema.contains(&slot_id) {
                            return Err(CorpusError::UnknownSlot {
                                dialogue_id: dlg.dialogue_id,
                                turn_index: turn.turn_index,
                                slot_id,
                            });
                        }
                    }
                    if !active_domains.contains(domain_of(&slot_id)) {
                        return Err(CorpusError::Malformed {
                            dialogue_id: dlg.dialogue_id,
                            turn_index: turn.turn_index,
                            reason: format!(
                                "slot {slot_id} outside active domains"
                            ),
                        });
                    }
                    gold_belief.set(slot_id, &value);
                }
                turns.push(Turn {
                    turn_index: turn.turn_index,
                    system_utterance: normalize_utterance(&turn.system_utterance),
                    user_utterance,
                    gold_belief,
                });
            }
            dialogues.push(Dialogue {
                dialogue_id: dlg.dialogue_id,
                active_domains,
                turns,
            });
        }
        Ok(Corpus {
            schema_id: file.schema_id,
            dialogues,
        })
    }

    fn to_file(&self) -> CorpusFile {
        CorpusFile {
            schema_id: self.schema_id.clone(),
            dialogues: self
                .dialogues
                .iter()
                .map(|d| DialogueFile {
                    dialogue_id: d.dialogue_id.clone(),
                    active_domains: d.active_domains.iter().cloned().collect(),
                    turns: d
                        .turns
                        .iter()
                        .map(|t| TurnFile {
                            turn_index: t.turn_index,
                            system_utterance: t.system_utterance.clone(),
                            user_utterance: t.user_utterance.clone(),
                            belief: t
                                .gold_belief
                                .iter()
                                .map(|(k, v)| (k.to_string(), v.to_string()))
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn dialogue_count(&self) -> usize {
        self.dialogues.len()
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn dialogue_ids(&self) -> Vec<&str> {
        self.dialogues.iter().map(|d| d.dialogue_id.as_str()).collect()
    }

    /// All domains named by any dialogue, sorted.
    pub fn domains(&self) -> BTreeSet<String> {
        self.dialogues
            .iter()
            .flat_map(|d| d.active_domains.iter().cloned())
            .collect()
    }

    /// Checks every belief slot against the schema. Used before training
    /// and tracking to catch schema/corpus mismatches early.
    pub fn validate_against(&self, schema: &Schema) -> Result<(), CorpusError> {
        for dlg in &self.dialogues {
            for turn in &dlg.turns {
                for (slot_id, _) in turn.gold_belief.iter() {
                    if !schema.contains(slot_id) {
                        return Err(CorpusError::UnknownSlot {
                            dialogue_id: dlg.dialogue_id.clone(),
                            turn_index: turn.turn_index,
                            slot_id: slot_id.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Drops dialogues whose domains are all excluded and strips excluded
    /// domains' belief entries from the survivors. The input is unchanged.
    pub fn filter_domains(&self, excluded: &BTreeSet<String>) -> Corpus {
        let mut dialogues = Vec::new();
        for dlg in &self.dialogues {
            let kept: BTreeSet<String> = dlg
                .active_domains
                .iter()
                .filter(|d| !excluded.contains(*d))
                .cloned()
                .collect();
            if kept.is_empty() {
                continue;
            }
            let turns = dlg
                .turns
                .iter()
                .map(|t| {
                    let mut gold_belief = t.gold_belief.clone();
                    let dropped: Vec<String> = gold_belief
                        .slot_ids()
                        .filter(|s| excluded.contains(domain_of(s)))
                        .map(str::to_string)
                        .collect();
                    for slot in dropped {
                        gold_belief.remove(&slot);
                    }
                    Turn {
                        turn_index: t.turn_index,
                        system_utterance: t.system_utterance.clone(),
                        user_utterance: t.user_utterance.clone(),
                        gold_belief,
                    }
                })
                .collect();
            dialogues.push(Dialogue {
                dialogue_id: dlg.dialogue_id.clone(),
                active_domains: kept,
                turns,
            });
        }
        Corpus {
            schema_id: self.schema_id.clone(),
            dialogues,
        }
    }

    /// Uniform sample without replacement of whole dialogues:
    /// floor(fraction * N) of them, at least one, deterministic per seed.
    pub fn sample_fewshot(&self, fraction: f64, seed: u64) -> Result<Corpus, CorpusError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CorpusError::InvalidFraction(fraction));
        }
        let n = self.dialogues.len();
        if n == 0 {
            return Ok(self.clone());
        }
        let k = ((fraction * n as f64).floor() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        Ok(Corpus {
            schema_id: self.schema_id.clone(),
            dialogues: picked.iter().map(|&i| self.dialogues[i].clone()).collect(),
        })
    }

    /// Splits for domain transfer: dialogues with no target-domain
    /// involvement form the pretrain corpus; a few-shot sample of the
    /// dialogues that involve the target forms the finetune corpus.
    pub fn split_domain_transfer(
        &self,
        target_domain: &str,
        target_fraction: f64,
        seed: u64,
    ) -> Result<(Corpus, Corpus), CorpusError> {
        let involved: Vec<Dialogue> = self
            .dialogues
            .iter()
            .filter(|d| d.active_domains.contains(target_domain))
            .cloned()
            .collect();
        if involved.is_empty() {
            return Err(CorpusError::UnknownDomain(target_domain.to_string()));
        }
        let pretrain = Corpus {
            schema_id: self.schema_id.clone(),
            dialogues: self
                .dialogues
                .iter()
                .filter(|d| !d.active_domains.contains(target_domain))
                .cloned()
                .collect(),
        };
        let pool = Corpus {
            schema_id: self.schema_id.clone(),
            dialogues: involved,
        };
        let finetune = pool.sample_fewshot(target_fraction, seed)?;
        Ok((pretrain, finetune))
    }
}

/// Loads a corpus file, normalizing values and validating invariants.
/// Passing the governing schema additionally checks every slot id.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    schema: Option<&Schema>,
) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file = match format {
        CorpusFormat::Native => {
            serde_json::from_str::<CorpusFile>(&text).map_err(|source| CorpusError::Parse {
                path: path.display().to_string(),
                source,
            })?
        }
        CorpusFormat::MultiwozStyle => {
            convert_multiwoz(&text).map_err(|source| CorpusError::Parse {
                path: path.display().to_string(),
                source,
            })?
        }
    };
    Corpus::from_file(file, schema)
}

/// Writes a corpus in the native format. Output is deterministic: fixed
/// field order and sorted belief maps.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(&corpus.to_file()).expect("corpus serialization");
    std::fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Schema, SchemaFileEntry};

    fn schema_for(ids: &[&str]) -> Schema {
        Schema::from_entries(
            ids.iter()
                .map(|id| SchemaFileEntry {
                    slot_id: id.to_string(),
                    domain: None,
                    main_question: format!("What is the {}?", id.replace('.', " ")),
                    aux_question: None,
                    category: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn native_fixture() -> String {
        serde_json::json!({
            "schema_id": "test-v1",
            "dialogues": [
                {
                    "dialogue_id": "d1",
                    "active_domains": ["hotel"],
                    "turns": [
                        {"turn_index": 1, "system_utterance": "",
                         "user_utterance": "i need a hotel in the east",
                         "belief": {"hotel.area": "east"}},
                        {"turn_index": 2, "system_utterance": "okay",
                         "user_utterance": "a cheap one please",
                         "belief": {"hotel.area": "east", "hotel.pricerange": "cheap"}}
                    ]
                },
                {
                    "dialogue_id": "d2",
                    "active_domains": ["train"],
                    "turns": [
                        {"turn_index": 1, "system_utterance": "",
                         "user_utterance": "train on monday",
                         "belief": {"train.day": "monday"}}
                    ]
                }
            ]
        })
        .to_string()
    }

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn load_native_identity() {
        let (_dir, path) = write_tmp(&native_fixture());
        let schema = schema_for(&["hotel.area", "hotel.pricerange", "train.day"]);
        let corpus = load_corpus(&path, CorpusFormat::Native, Some(&schema)).unwrap();
        assert_eq!(corpus.dialogue_count(), 2);
        assert_eq!(corpus.dialogue_ids(), ["d1", "d2"]);
        assert_eq!(corpus.schema_id, "test-v1");
        assert_eq!(
            corpus.dialogues[0].turns[1].gold_belief.get("hotel.pricerange"),
            Some("cheap")
        );
    }

    #[test]
    fn load_normalizes_dontcare() {
        let raw = native_fixture().replace("\"east\"", "\"Dont Care\"");
        let (_dir, path) = write_tmp(&raw);
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        assert_eq!(
            corpus.dialogues[0].turns[0].gold_belief.get("hotel.area"),
            Some(DONTCARE)
        );
    }

    #[test]
    fn duplicate_dialogue_id_names_the_id() {
        let raw = native_fixture().replace("\"d2\"", "\"d1\"");
        let (_dir, path) = write_tmp(&raw);
        let err = load_corpus(&path, CorpusFormat::Native, None).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateDialogueId(id) if id == "d1"));
    }

    #[test]
    fn unknown_slot_is_an_error_with_schema() {
        let (_dir, path) = write_tmp(&native_fixture());
        let schema = schema_for(&["hotel.area", "hotel.pricerange"]);
        let err = load_corpus(&path, CorpusFormat::Native, Some(&schema)).unwrap_err();
        match err {
            CorpusError::UnknownSlot {
                dialogue_id,
                turn_index,
                slot_id,
            } => {
                assert_eq!(dialogue_id, "d2");
                assert_eq!(turn_index, 1);
                assert_eq!(slot_id, "train.day");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_turn_index_is_reported() {
        let raw = native_fixture().replace("\"turn_index\":2", "\"turn_index\":3");
        assert_ne!(raw, native_fixture(), "fixture edit must apply");
        let (_dir, path) = write_tmp(&raw);
        let err = load_corpus(&path, CorpusFormat::Native, None).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { turn_index: 3, .. }));
    }

    #[test]
    fn value_normalization_is_idempotent() {
        for raw in [
            "  East  ",
            "DON'T CARE",
            "do n't care",
            "guest   house.",
            "'centre'",
            "",
            "  ",
            "4",
        ] {
            let once = normalize_value(raw);
            assert_eq!(normalize_value(&once), once, "raw = {raw:?}");
        }
    }

    #[test]
    fn filter_empty_exclusion_is_identity() {
        let (_dir, path) = write_tmp(&native_fixture());
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        let filtered = corpus.filter_domains(&BTreeSet::new());
        assert_eq!(filtered, corpus);
    }

    #[test]
    fn filter_drops_fully_excluded_dialogues() {
        let raw = serde_json::json!({
            "schema_id": "t",
            "dialogues": [
                {"dialogue_id": "h1", "active_domains": ["hospital"],
                 "turns": [{"turn_index": 1, "system_utterance": "",
                            "user_utterance": "i need a hospital", "belief": {}}]},
                {"dialogue_id": "k1", "active_domains": ["hotel"],
                 "turns": [{"turn_index": 1, "system_utterance": "",
                            "user_utterance": "hotel please", "belief": {"hotel.area": "east"}}]}
            ]
        })
        .to_string();
        let (_dir, path) = write_tmp(&raw);
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        let excluded: BTreeSet<String> =
            ["hospital".to_string(), "police".to_string()].into_iter().collect();
        let filtered = corpus.filter_domains(&excluded);
        assert_eq!(filtered.dialogue_ids(), ["k1"]);
        // the input corpus is untouched
        assert_eq!(corpus.dialogue_count(), 2);
    }

    #[test]
    fn filter_strips_excluded_entries_from_cross_domain_dialogues() {
        let raw = serde_json::json!({
            "schema_id": "t",
            "dialogues": [
                {"dialogue_id": "x1", "active_domains": ["hotel", "police"],
                 "turns": [{"turn_index": 1, "system_utterance": "",
                            "user_utterance": "hotel east and the police station",
                            "belief": {"hotel.area": "east", "police.name": "parkside"}}]}
            ]
        })
        .to_string();
        let (_dir, path) = write_tmp(&raw);
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        let excluded: BTreeSet<String> = ["police".to_string()].into_iter().collect();
        let filtered = corpus.filter_domains(&excluded);
        assert_eq!(filtered.dialogue_count(), 1);
        // oracle re-scan: no surviving belief entry of an excluded domain
        for dlg in &filtered.dialogues {
            assert!(!dlg.active_domains.contains("police"));
            for turn in &dlg.turns {
                for (slot, _) in turn.gold_belief.iter() {
                    assert!(!slot.starts_with("police."));
                }
            }
        }
        assert_eq!(
            filtered.dialogues[0].turns[0].gold_belief.get("hotel.area"),
            Some("east")
        );
    }

    #[test]
    fn fewshot_identity_at_full_fraction() {
        let (_dir, path) = write_tmp(&native_fixture());
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        let sampled = corpus.sample_fewshot(1.0, 3).unwrap();
        assert_eq!(sampled.dialogue_ids(), corpus.dialogue_ids());
    }

    #[test]
    fn fewshot_floor_rule_and_determinism() {
        let cfg = SynthConfig {
            dialogue_count: 1000,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        let a = corpus.sample_fewshot(0.1, 7).unwrap();
        assert_eq!(a.dialogue_count(), 100);
        let b = corpus.sample_fewshot(0.1, 7).unwrap();
        assert_eq!(a.dialogue_ids(), b.dialogue_ids());
        let c = corpus.sample_fewshot(0.1, 8).unwrap();
        assert_ne!(a.dialogue_ids(), c.dialogue_ids());
        // subset property
        let all: BTreeSet<&str> = corpus.dialogue_ids().into_iter().collect();
        assert!(a.dialogue_ids().iter().all(|id| all.contains(id)));
    }

    #[test]
    fn fewshot_minimum_one_dialogue() {
        let cfg = SynthConfig {
            dialogue_count: 3,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        let sampled = corpus.sample_fewshot(0.01, 5).unwrap();
        assert_eq!(sampled.dialogue_count(), 1);
    }

    #[test]
    fn fewshot_rejects_bad_fraction() {
        let (_dir, path) = write_tmp(&native_fixture());
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        assert!(matches!(
            corpus.sample_fewshot(0.0, 1),
            Err(CorpusError::InvalidFraction(_))
        ));
        assert!(matches!(
            corpus.sample_fewshot(1.5, 1),
            Err(CorpusError::InvalidFraction(_))
        ));
    }

    #[test]
    fn domain_transfer_partitions_by_involvement() {
        let cfg = SynthConfig {
            dialogue_count: 200,
            seed: 11,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        let target = corpus.domains().into_iter().next().unwrap();
        let (pretrain, finetune) = corpus.split_domain_transfer(&target, 1.0, 3).unwrap();
        // no pretrain dialogue lists the target domain
        for dlg in &pretrain.dialogues {
            assert!(!dlg.active_domains.contains(&target));
        }
        for dlg in &finetune.dialogues {
            assert!(dlg.active_domains.contains(&target));
        }
        // disjoint by id, and together they cover the corpus at fraction 1.0
        let pre: BTreeSet<&str> = pretrain.dialogue_ids().into_iter().collect();
        let fin: BTreeSet<&str> = finetune.dialogue_ids().into_iter().collect();
        assert!(pre.is_disjoint(&fin));
        assert_eq!(pre.len() + fin.len(), corpus.dialogue_count());
    }

    #[test]
    fn domain_transfer_fraction_floor() {
        let cfg = SynthConfig {
            dialogue_count: 400,
            seed: 5,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        let target = corpus.domains().into_iter().next().unwrap();
        let involved = corpus
            .dialogues
            .iter()
            .filter(|d| d.active_domains.contains(&target))
            .count();
        let (_, finetune) = corpus.split_domain_transfer(&target, 0.05, 3).unwrap();
        assert_eq!(
            finetune.dialogue_count(),
            ((0.05 * involved as f64).floor() as usize).max(1)
        );
    }

    #[test]
    fn domain_transfer_unknown_domain() {
        let (_dir, path) = write_tmp(&native_fixture());
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        assert!(matches!(
            corpus.split_domain_transfer("spaceport", 0.5, 1),
            Err(CorpusError::UnknownDomain(d)) if d == "spaceport"
        ));
    }

    #[test]
    fn save_load_round_trip_is_stable() {
        let (_dir, path) = write_tmp(&native_fixture());
        let corpus = load_corpus(&path, CorpusFormat::Native, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("a.json");
        let out2 = dir.path().join("b.json");
        save_corpus(&corpus, &out1).unwrap();
        let reloaded = load_corpus(&out1, CorpusFormat::Native, None).unwrap();
        assert_eq!(reloaded, corpus);
        save_corpus(&reloaded, &out2).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
    }
}
