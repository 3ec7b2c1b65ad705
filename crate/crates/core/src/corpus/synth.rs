//! Deterministic synthetic corpus generator. Dialogues are built from fixed
//! templates over small name and value pools so that the gold belief for a
//! turn is a function of the dialogue text alone: every mention clause names
//! its domain and slot explicitly, and paraphrased values use a letter-shift
//! surface form that never coincides with a pool value.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use super::{BeliefState, Corpus, Dialogue, Turn, DONTCARE};
use crate::schema::{Schema, SchemaFileEntry, SlotCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domains: usize,
    pub slots_per_domain: usize,
    pub value_vocab: usize,
    pub dialogue_count: usize,
    /// Fewest turns a dialogue may have. Clamped into `1..=max_turns`.
    #[serde(default = "default_min_turns")]
    pub min_turns: usize,
    pub max_turns: usize,
    /// Probability that a value mention of an implicit-category slot is
    /// paraphrased instead of quoted verbatim.
    pub implicit_rate: f64,
    pub seed: u64,
}

fn default_min_turns() -> usize {
    1
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            domains: 2,
            slots_per_domain: 3,
            value_vocab: 60,
            dialogue_count: 100,
            min_turns: 1,
            max_turns: 6,
            implicit_rate: 0.1,
            seed: 17,
        }
    }
}

const DOMAIN_NAMES: [&str; 10] = [
    "hotel", "restaurant", "attraction", "train", "taxi", "cinema", "museum", "spa", "ferry",
    "library",
];

const SLOT_NAMES: [&str; 10] = [
    "area", "pricerange", "day", "food", "type", "parking", "stay", "people", "time", "name",
];

const VALUE_WORDS: [&str; 60] = [
    "east", "west", "north", "south", "centre", "cheap", "moderate", "expensive", "monday",
    "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "italian", "chinese",
    "indian", "british", "french", "thai", "korean", "turkish", "polish", "danish", "red", "blue",
    "green", "gold", "silver", "amber", "ivory", "coral", "olive", "plum", "grand", "royal",
    "plaza", "garden", "bridge", "castle", "tower", "lodge", "villa", "manor", "sunrise", "sunset",
    "harbor", "station", "square", "palace", "meadow", "orchard", "willow", "maple", "cedar",
    "aspen", "birch", "hazel", "rowan",
];

const SYSTEM_LINES: [&str; 4] = [
    "okay what else do you need",
    "sure i can help with that",
    "noted anything else i can do",
    "alright i will look into that",
];

const FILLER_LINE: &str = "can you check what is available for me";

fn domain_name(i: usize) -> String {
    DOMAIN_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("domain{i}"))
}

fn slot_name(i: usize) -> String {
    SLOT_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("slot{i}"))
}

fn value_word(i: usize) -> String {
    VALUE_WORDS
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("val{i}"))
}

/// Shifts every lowercase letter forward by one (z wraps to a). The image
/// of a pool value is never itself a pool value, so a paraphrased mention
/// cannot be mistaken for a verbatim one.
fn caesar(value: &str) -> String {
    value
        .chars()
        .map(|c| match c {
            'a'..='z' => (((c as u8 - b'a' + 1) % 26) + b'a') as char,
            _ => c,
        })
        .collect()
}

fn category_for(global_slot: usize) -> SlotCategory {
    match global_slot % 3 {
        0 => SlotCategory::Explicit,
        1 => SlotCategory::Implicit,
        _ => SlotCategory::Other,
    }
}

struct SlotTable {
    /// Per global slot: (domain index, slot-name index).
    slots: Vec<(usize, usize)>,
    values: Vec<String>,
}

impl SlotTable {
    fn new(cfg: &SynthConfig) -> Self {
        let slots = (0..cfg.domains)
            .flat_map(|d| (0..cfg.slots_per_domain).map(move |s| (d, s)))
            .collect::<Vec<_>>();
        let n_values = cfg.value_vocab.max(2);
        let values = (0..n_values).map(value_word).collect::<Vec<_>>();
        Self { slots, values }
    }

    fn slot_id(&self, k: usize) -> String {
        let (d, s) = self.slots[k];
        format!("{}.{}", domain_name(d), slot_name(s))
    }

    fn domain_slot_words(&self, k: usize) -> (String, String) {
        let (d, s) = self.slots[k];
        (domain_name(d), slot_name(s))
    }

    /// The value pool: every slot draws from the full shared value list, so
    /// a slot's identity never narrows the candidate values and a tracker
    /// must read the value off the dialogue text rather than guess from the
    /// slot name.
    fn pool(&self) -> Vec<&str> {
        self.values.iter().map(String::as_str).collect()
    }
}

fn mention_clause(rng: &mut ChaCha8Rng, domain: &str, slot: &str, surface: &str) -> String {
    match rng.gen_range(0..3u8) {
        0 => format!("the {domain} {slot} should be {surface}"),
        1 => format!("i want {surface} for the {domain} {slot}"),
        _ => format!("give me something with {domain} {slot} {surface}"),
    }
}

fn overwrite_clause(rng: &mut ChaCha8Rng, domain: &str, slot: &str, surface: &str) -> String {
    match rng.gen_range(0..2u8) {
        0 => format!("actually change the {domain} {slot} to {surface}"),
        _ => format!("on second thought make the {domain} {slot} {surface}"),
    }
}

/// Builds the schema that governs corpora from the same configuration.
pub fn synthetic_schema(cfg: &SynthConfig) -> Schema {
    let table = SlotTable::new(cfg);
    let entries = (0..table.slots.len())
        .map(|k| {
            let (domain, slot) = table.domain_slot_words(k);
            SchemaFileEntry {
                slot_id: table.slot_id(k),
                domain: Some(domain.clone()),
                main_question: format!("what is the {domain} {slot}?"),
                aux_question: None,
                category: Some(category_for(k)),
            }
        })
        .collect();
    Schema::from_entries(entries).expect("synthetic schema is well formed")
}

/// Generates a corpus. Identical configurations produce byte-identical
/// corpora; beliefs are cumulative and every belief slot belongs to an
/// active domain of its dialogue.
pub fn generate_synthetic(cfg: &SynthConfig) -> Corpus {
    assert!(cfg.domains >= 1, "need at least one domain");
    assert!(cfg.slots_per_domain >= 1, "need at least one slot per domain");
    assert!(cfg.max_turns >= 1, "need at least one turn");
    assert!(
        (0.0..=1.0).contains(&cfg.implicit_rate),
        "implicit_rate outside [0, 1]"
    );
    let table = SlotTable::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dialogues = Vec::with_capacity(cfg.dialogue_count);

    for i in 0..cfg.dialogue_count {
        let n_active = if cfg.domains >= 2 && rng.gen_bool(0.3) { 2 } else { 1 };
        let chosen = rand::seq::index::sample(&mut rng, cfg.domains, n_active).into_vec();
        let primary = chosen[0];
        let slot_pool: Vec<usize> = (0..table.slots.len())
            .filter(|&k| chosen.contains(&table.slots[k].0))
            .collect();

        let floor = cfg.min_turns.clamp(1, cfg.max_turns);
        let n_turns = rng.gen_range(floor..=cfg.max_turns);
        let mut belief: Vec<(usize, String)> = Vec::new();
        let mut turns = Vec::with_capacity(n_turns);

        for t in 1..=n_turns {
            let system_utterance = if t == 1 {
                String::new()
            } else {
                SYSTEM_LINES[rng.gen_range(0..SYSTEM_LINES.len())].to_string()
            };
            let mut clauses: Vec<String> = Vec::new();
            if t == 1 {
                let dn = domain_name(primary);
                clauses.push(match rng.gen_range(0..2u8) {
                    0 => format!("i need a {dn}"),
                    _ => format!("hello i am looking for a {dn}"),
                });
            }

            let unfilled: Vec<usize> = slot_pool
                .iter()
                .copied()
                .filter(|k| !belief.iter().any(|(b, _)| b == k))
                .collect();
            let cap = unfilled.len().min(2);
            let n_new = if cap == 0 {
                0
            } else if t == 1 {
                rng.gen_range(1..=cap)
            } else {
                rng.gen_range(0..=cap)
            };
            let picks = rand::seq::index::sample(&mut rng, unfilled.len().max(1), n_new);
            for pick in picks.iter() {
                let k = unfilled[pick];
                let (dn, sn) = table.domain_slot_words(k);
                if rng.gen_bool(0.1) {
                    clauses.push(format!("any {dn} {sn} is fine with me"));
                    belief.push((k, DONTCARE.to_string()));
                } else {
                    let pool = table.pool();
                    let value = pool[rng.gen_range(0..pool.len())].to_string();
                    let implicit = category_for(k) == SlotCategory::Implicit
                        && cfg.implicit_rate > 0.0
                        && rng.gen_bool(cfg.implicit_rate);
                    let surface = if implicit { caesar(&value) } else { value.clone() };
                    clauses.push(mention_clause(&mut rng, &dn, &sn, &surface));
                    belief.push((k, value));
                }
            }

            if t > 1 && !belief.is_empty() && rng.gen_bool(0.2) {
                let pos = rng.gen_range(0..belief.len());
                let (k, current) = (belief[pos].0, belief[pos].1.clone());
                let pool = table.pool();
                let candidates: Vec<&str> =
                    pool.iter().copied().filter(|v| *v != current).collect();
                if !candidates.is_empty() {
                    let value = candidates[rng.gen_range(0..candidates.len())].to_string();
                    let (dn, sn) = table.domain_slot_words(k);
                    let implicit = category_for(k) == SlotCategory::Implicit
                        && cfg.implicit_rate > 0.0
                        && rng.gen_bool(cfg.implicit_rate);
                    let surface = if implicit { caesar(&value) } else { value.clone() };
                    clauses.push(overwrite_clause(&mut rng, &dn, &sn, &surface));
                    belief[pos].1 = value;
                }
            }

            if clauses.is_empty() {
                clauses.push(FILLER_LINE.to_string());
            }

            let gold_belief = BeliefState::from_pairs(
                belief.iter().map(|(k, v)| (table.slot_id(*k), v.as_str())),
            );
            turns.push(Turn {
                turn_index: t as u32,
                system_utterance,
                user_utterance: clauses.join(" and "),
                gold_belief,
            });
        }

        let active_domains: BTreeSet<String> =
            chosen.iter().map(|&d| domain_name(d)).collect();
        dialogues.push(Dialogue {
            dialogue_id: format!("syn{i:04}"),
            active_domains,
            turns,
        });
    }

    Corpus {
        schema_id: schema_id(cfg),
        dialogues,
    }
}

fn schema_id(cfg: &SynthConfig) -> String {
    format!("synthetic-{}x{}", cfg.domains, cfg.slots_per_domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caesar_shift_examples() {
        assert_eq!(caesar("east"), "fbtu");
        assert_eq!(caesar("zoo"), "app");
        assert_eq!(caesar("val7"), "wbm7");
        assert_ne!(caesar("east"), "east");
    }

    #[test]
    fn caesar_images_stay_outside_the_value_pool() {
        let pool: std::collections::BTreeSet<&str> = VALUE_WORDS.iter().copied().collect();
        for word in VALUE_WORDS {
            assert!(
                !pool.contains(caesar(word).as_str()),
                "caesar({word}) collides with a pool value"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg);
        let b = generate_synthetic(&cfg);
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        });
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_shape_and_invariants() {
        let cfg = SynthConfig::default();
        let corpus = generate_synthetic(&cfg);
        let schema = synthetic_schema(&cfg);
        assert_eq!(corpus.dialogue_count(), cfg.dialogue_count);
        assert_eq!(corpus.schema_id, "synthetic-2x3");
        corpus.validate_against(&schema).unwrap();
        assert!(corpus.dialogues.iter().any(|d| d.turns.len() > 1));
        for dlg in &corpus.dialogues {
            assert_eq!(dlg.turns[0].system_utterance, "");
            for (pos, turn) in dlg.turns.iter().enumerate() {
                assert_eq!(turn.turn_index as usize, pos + 1);
                assert!(!turn.user_utterance.is_empty());
                for (slot, _) in turn.gold_belief.iter() {
                    let domain = slot.split('.').next().unwrap();
                    assert!(dlg.active_domains.contains(domain));
                }
            }
        }
    }

    #[test]
    fn beliefs_are_cumulative() {
        let corpus = generate_synthetic(&SynthConfig::default());
        for dlg in &corpus.dialogues {
            for pair in dlg.turns.windows(2) {
                for (slot, _) in pair[0].gold_belief.iter() {
                    assert!(
                        pair[1].gold_belief.contains(slot),
                        "slot {slot} dropped between turns in {}",
                        dlg.dialogue_id
                    );
                }
            }
        }
    }

    #[test]
    fn zero_implicit_rate_mentions_values_verbatim() {
        let cfg = SynthConfig {
            implicit_rate: 0.0,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        for dlg in &corpus.dialogues {
            let mut previous = BeliefState::new();
            for turn in &dlg.turns {
                for (slot, value) in turn.gold_belief.iter() {
                    if value == DONTCARE || previous.get(slot) == Some(value) {
                        continue;
                    }
                    assert!(
                        turn.user_utterance.contains(value),
                        "value {value:?} missing from {:?}",
                        turn.user_utterance
                    );
                }
                previous = turn.gold_belief.clone();
            }
        }
    }

    #[test]
    fn full_implicit_rate_paraphrases_implicit_slots() {
        let cfg = SynthConfig {
            implicit_rate: 1.0,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        let schema = synthetic_schema(&cfg);
        let mut saw_implicit_mention = false;
        for dlg in &corpus.dialogues {
            let mut previous = BeliefState::new();
            for turn in &dlg.turns {
                for (slot, value) in turn.gold_belief.iter() {
                    if value == DONTCARE || previous.get(slot) == Some(value) {
                        continue;
                    }
                    let category = schema.slot(slot).unwrap().category;
                    if category == SlotCategory::Implicit {
                        saw_implicit_mention = true;
                        assert!(
                            !turn.user_utterance.contains(value),
                            "implicit value {value:?} appears verbatim in {:?}",
                            turn.user_utterance
                        );
                        assert!(turn.user_utterance.contains(&caesar(value)));
                    } else {
                        assert!(turn.user_utterance.contains(value));
                    }
                }
                previous = turn.gold_belief.clone();
            }
        }
        assert!(saw_implicit_mention);
    }

    #[test]
    fn schema_matches_generator_naming() {
        let schema = synthetic_schema(&SynthConfig::default());
        assert_eq!(schema.n(), 6);
        let slot = schema.slot("hotel.area").unwrap();
        assert_eq!(slot.main_question, "what is the hotel area?");
        assert_eq!(slot.aux_question, "Are they talking about hotel area?");
        assert_eq!(slot.category, SlotCategory::Explicit);
        assert_eq!(
            schema.slot("hotel.pricerange").unwrap().category,
            SlotCategory::Implicit
        );
        assert_eq!(schema.slot("hotel.day").unwrap().category, SlotCategory::Other);
    }

    #[test]
    fn single_domain_config_works() {
        let cfg = SynthConfig {
            domains: 1,
            slots_per_domain: 2,
            dialogue_count: 20,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg);
        assert_eq!(corpus.dialogue_count(), 20);
        for dlg in &corpus.dialogues {
            assert_eq!(dlg.active_domains.len(), 1);
        }
    }
}
