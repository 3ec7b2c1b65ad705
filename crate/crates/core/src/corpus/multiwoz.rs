//! Converter for MultiWOZ-style dialogue logs: a JSON object mapping
//! dialogue ids to `{goal, log}` records where `log` alternates user and
//! system entries and each system entry's `metadata` holds the full belief
//! state after the preceding user message.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{CorpusFile, DialogueFile, TurnFile};

#[derive(Debug, Deserialize)]
struct RawDialogue {
    #[serde(default)]
    goal: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    log: Vec<RawLogEntry>,
}

#[derive(Debug, Deserialize)]
struct RawLogEntry {
    #[serde(default)]
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, RawDomainState>,
}

#[derive(Debug, Deserialize)]
struct RawDomainState {
    #[serde(default)]
    semi: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    book: BTreeMap<String, serde_json::Value>,
}

/// Keys of the `goal` object that never name a domain.
const NON_DOMAIN_GOAL_KEYS: [&str; 2] = ["message", "topic"];

fn normalize_key(domain: &str, key: &str) -> String {
    let key = key.to_lowercase();
    let key = key.strip_prefix("book ").unwrap_or(&key).replace(' ', "");
    // the source annotation says "stars"; the schema names the slot "star"
    let key = if key == "stars" { "star".to_string() } else { key };
    format!("{}.{}", domain.to_lowercase(), key)
}

fn push_value(flat: &mut BTreeMap<String, String>, slot_id: String, value: &serde_json::Value) {
    let Some(text) = value.as_str() else { return };
    let trimmed = text.trim();
    if trimmed.is_empty()
        || trimmed.eq_ignore_ascii_case("none")
        || trimmed.eq_ignore_ascii_case("not mentioned")
    {
        return;
    }
    flat.insert(slot_id, trimmed.to_string());
}

/// Flattens per-domain `semi`/`book` objects into `domain.slot` pairs,
/// dropping absence markers and the bookkeeping `booked` list.
fn flatten_metadata(metadata: &BTreeMap<String, RawDomainState>) -> BTreeMap<String, String> {
    let mut flat = BTreeMap::new();
    for (domain, state) in metadata {
        for (key, value) in &state.semi {
            push_value(&mut flat, normalize_key(domain, key), value);
        }
        for (key, value) in &state.book {
            if key.eq_ignore_ascii_case("booked") {
                continue;
            }
            push_value(&mut flat, normalize_key(domain, key), value);
        }
    }
    flat
}

/// Converts raw MultiWOZ-style JSON into the native wire form. The native
/// turn pairs each user message with the system reply that came before it,
/// so the first turn has an empty system utterance; the belief attached to
/// a turn is read from the system reply that follows the user message. A
/// log that ends on a user message carries the previous turn's belief
/// forward.
pub(super) fn convert_multiwoz(text: &str) -> Result<CorpusFile, serde_json::Error> {
    let raw: BTreeMap<String, RawDialogue> = serde_json::from_str(text)?;
    let mut dialogues = Vec::with_capacity(raw.len());
    for (dialogue_id, dlg) in raw {
        if dlg.log.is_empty() {
            continue;
        }
        let n_turns = (dlg.log.len() + 1) / 2;
        let mut turns = Vec::with_capacity(n_turns);
        let mut previous = BTreeMap::new();
        for t in 1..=n_turns {
            let user_pos = 2 * (t - 1);
            let system_utterance = if t == 1 {
                String::new()
            } else {
                dlg.log[user_pos - 1].text.clone()
            };
            let belief = match dlg.log.get(user_pos + 1) {
                Some(reply) => flatten_metadata(&reply.metadata),
                None => previous.clone(),
            };
            previous = belief.clone();
            turns.push(TurnFile {
                turn_index: t as u32,
                system_utterance,
                user_utterance: dlg.log[user_pos].text.clone(),
                belief,
            });
        }
        let mut active_domains: BTreeSet<String> = turns
            .iter()
            .flat_map(|t| t.belief.keys())
            .filter_map(|slot| slot.split('.').next())
            .map(str::to_string)
            .collect();
        if active_domains.is_empty() {
            active_domains = dlg
                .goal
                .iter()
                .filter(|(key, value)| {
                    !NON_DOMAIN_GOAL_KEYS.contains(&key.as_str()) && !is_empty_goal(value)
                })
                .map(|(key, _)| key.to_lowercase())
                .collect();
        }
        dialogues.push(DialogueFile {
            dialogue_id,
            active_domains: active_domains.into_iter().collect(),
            turns,
        });
    }
    Ok(CorpusFile {
        schema_id: "multiwoz".to_string(),
        dialogues,
    })
}

fn is_empty_goal(value: &serde_json::Value) -> bool {
    match value {
        serde_json::Value::Null => true,
        serde_json::Value::Object(map) => map.is_empty(),
        serde_json::Value::Array(items) => items.is_empty(),
        serde_json::Value::String(s) => s.is_empty(),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use crate::corpus::{load_corpus, CorpusFormat};

    fn fixture() -> String {
        serde_json::json!({
            "MUL0001.json": {
                "goal": {"hotel": {"info": {"area": "east"}}, "message": ["find a hotel"]},
                "log": [
                    {"text": "I need a hotel in the east.", "metadata": {}},
                    {"text": "Sure, any price range?", "metadata": {
                        "hotel": {"semi": {"area": "east"}, "book": {}}
                    }},
                    {"text": "Cheap, for 3 people.", "metadata": {}},
                    {"text": "Booked!", "metadata": {
                        "hotel": {
                            "semi": {"area": "east", "pricerange": "cheap", "stars": "4"},
                            "book": {"people": "3", "booked": [{"name": "acorn"}]}
                        }
                    }}
                ]
            },
            "AAA0002.json": {
                "goal": {"train": {"info": {"day": "monday"}}},
                "log": [
                    {"text": "Train to town on Monday.", "metadata": {}},
                    {"text": "There are many.", "metadata": {
                        "train": {"semi": {"day": "monday", "destination": "none"}, "book": {}}
                    }},
                    {"text": "Thanks, that is all.", "metadata": {}}
                ]
            }
        })
        .to_string()
    }

    #[test]
    fn converts_alignment_and_flattening() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        std::fs::write(&path, fixture()).unwrap();
        let corpus = load_corpus(&path, CorpusFormat::MultiwozStyle, None).unwrap();

        // dialogues come out sorted by id
        assert_eq!(corpus.dialogue_ids(), ["AAA0002.json", "MUL0001.json"]);

        let hotel = &corpus.dialogues[1];
        assert_eq!(hotel.turns.len(), 2);
        // first native turn: empty system side, belief from the first reply
        assert_eq!(hotel.turns[0].system_utterance, "");
        assert_eq!(hotel.turns[0].user_utterance, "i need a hotel in the east.");
        assert_eq!(hotel.turns[0].gold_belief.get("hotel.area"), Some("east"));
        assert_eq!(hotel.turns[0].gold_belief.len(), 1);
        // second native turn pairs the reply before the user message
        assert_eq!(hotel.turns[1].system_utterance, "sure, any price range?");
        let b = &hotel.turns[1].gold_belief;
        assert_eq!(b.get("hotel.pricerange"), Some("cheap"));
        assert_eq!(b.get("hotel.people"), Some("3"));
        // "stars" is renamed, "booked" is dropped
        assert_eq!(b.get("hotel.star"), Some("4"));
        assert!(!b.contains("hotel.stars"));
        assert!(!b.contains("hotel.booked"));
        assert!(hotel.active_domains.contains("hotel"));
    }

    #[test]
    fn odd_length_log_carries_previous_belief() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        std::fs::write(&path, fixture()).unwrap();
        let corpus = load_corpus(&path, CorpusFormat::MultiwozStyle, None).unwrap();
        let train = &corpus.dialogues[0];
        assert_eq!(train.turns.len(), 2);
        // "none" is an absence marker in the source annotation
        assert!(!train.turns[0].gold_belief.contains("train.destination"));
        assert_eq!(train.turns[0].gold_belief.get("train.day"), Some("monday"));
        // final user message has no following reply: belief carried forward
        assert_eq!(train.turns[1].gold_belief, train.turns[0].gold_belief);
    }

    #[test]
    fn goal_fallback_for_domains_without_beliefs() {
        let raw = serde_json::json!({
            "X.json": {
                "goal": {"taxi": {"info": {}}, "message": ["hi"], "police": {}},
                "log": [
                    {"text": "Hello there.", "metadata": {}},
                    {"text": "How can I help?", "metadata": {}}
                ]
            }
        })
        .to_string();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        std::fs::write(&path, raw).unwrap();
        let corpus = load_corpus(&path, CorpusFormat::MultiwozStyle, None).unwrap();
        let domains = &corpus.dialogues[0].active_domains;
        assert!(domains.contains("taxi"));
        assert!(!domains.contains("message"));
        assert!(!domains.contains("police"));
    }
}
