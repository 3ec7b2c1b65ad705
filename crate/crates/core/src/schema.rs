//! The slot universe: every trackable slot with its natural-language main
//! question, its slot-gate auxiliary question, and an explicit/implicit
//! category used by the evaluation suite.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("failed to read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse schema file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate slot_id {0}")]
    DuplicateSlot(String),
    #[error("malformed slot_id {0:?}: expected lowercase \"domain.name\"")]
    MalformedSlotId(String),
    #[error("slot {0} has an empty question")]
    EmptyQuestion(String),
    #[error("schema contains no slots")]
    Empty,
}

/// Whether a slot's gold value tends to appear verbatim in the dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotCategory {
    Explicit,
    Implicit,
    Other,
}

impl fmt::Display for SlotCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotCategory::Explicit => write!(f, "explicit"),
            SlotCategory::Implicit => write!(f, "implicit"),
            SlotCategory::Other => write!(f, "other"),
        }
    }
}

/// One trackable slot: identifier, domain, question pair, category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot_id: String,
    pub domain: String,
    pub main_question: String,
    pub aux_question: String,
    pub category: SlotCategory,
}

/// Ordered slot list. The file order is the canonical iteration order for
/// serialization, decoding, and reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    slots: Vec<SlotSpec>,
}

/// On-disk schema entry; `domain`, `aux_question`, and `category` may be
/// omitted and are derived from the slot_id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFileEntry {
    pub slot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub main_question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<SlotCategory>,
}

fn valid_slot_part(part: &str) -> bool {
    !part.is_empty()
        && part
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Splits a "domain.name" slot id, rejecting anything not lowercase
/// `domain "." name`.
pub fn split_slot_id(slot_id: &str) -> Result<(&str, &str), SchemaError> {
    let mut parts = slot_id.splitn(2, '.');
    let domain = parts.next().unwrap_or("");
    let name = parts.next().unwrap_or("");
    if valid_slot_part(domain) && valid_slot_part(name) {
        Ok((domain, name))
    } else {
        Err(SchemaError::MalformedSlotId(slot_id.to_string()))
    }
}

/// Instantiates the slot-gate inquiry template for a slot id, replacing the
/// "." with a space: "attraction.name" -> "Are they talking about attraction
/// name?".
pub fn build_aux_question(slot_id: &str) -> Result<String, SchemaError> {
    let (domain, name) = split_slot_id(slot_id)?;
    Ok(format!("Are they talking about {domain} {name}?"))
}

/// The stock categorization of the standard slot universe: ten slots whose
/// answers usually match the dialogue text exactly, ten whose answers usually
/// do not. Everything else is `Other`.
pub fn default_multiwoz_categories() -> BTreeMap<String, SlotCategory> {
    const EXPLICIT: [&str; 10] = [
        "train.day",
        "restaurant.area",
        "hotel.star",
        "attraction.area",
        "hotel.stay",
        "hotel.area",
        "restaurant.day",
        "hotel.people",
        "hotel.day",
        "restaurant.pricerange",
    ];
    const IMPLICIT: [&str; 10] = [
        "hotel.type",
        "hotel.internet",
        "hotel.parking",
        "taxi.leaveat",
        "attraction.name",
        "taxi.departure",
        "attraction.type",
        "train.leaveat",
        "taxi.destination",
        "hotel.name",
    ];
    let mut map = BTreeMap::new();
    for id in EXPLICIT {
        map.insert(id.to_string(), SlotCategory::Explicit);
    }
    for id in IMPLICIT {
        map.insert(id.to_string(), SlotCategory::Implicit);
    }
    map
}

impl Schema {
    /// Builds a schema from file entries, filling in defaults and checking
    /// invariants. Order is preserved.
    pub fn from_entries(entries: Vec<SchemaFileEntry>) -> Result<Self, SchemaError> {
        if entries.is_empty() {
            return Err(SchemaError::Empty);
        }
        let default_categories = default_multiwoz_categories();
        let mut seen = std::collections::BTreeSet::new();
        let mut slots = Vec::with_capacity(entries.len());
        for entry in entries {
            let (domain, _) = split_slot_id(&entry.slot_id)?;
            if !seen.insert(entry.slot_id.clone()) {
                return Err(SchemaError::DuplicateSlot(entry.slot_id));
            }
            if entry.main_question.trim().is_empty() {
                return Err(SchemaError::EmptyQuestion(entry.slot_id));
            }
            let aux_question = match entry.aux_question {
                Some(q) if !q.trim().is_empty() => q,
                Some(_) => return Err(SchemaError::EmptyQuestion(entry.slot_id)),
                None => build_aux_question(&entry.slot_id)?,
            };
            let category = entry
                .category
                .or_else(|| default_categories.get(&entry.slot_id).copied())
                .unwrap_or(SlotCategory::Other);
            slots.push(SlotSpec {
                domain: entry.domain.unwrap_or_else(|| domain.to_string()),
                slot_id: entry.slot_id,
                main_question: entry.main_question,
                aux_question,
                category,
            });
        }
        Ok(Schema { slots })
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    /// Number of slots; the summation bound of the belief loss.
    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, slot_id: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.slot_id == slot_id)
    }

    pub fn contains(&self, slot_id: &str) -> bool {
        self.slot(slot_id).is_some()
    }

    /// Position of a slot in the canonical order.
    pub fn index_of(&self, slot_id: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.slot_id == slot_id)
    }

    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for slot in &self.slots {
            if !out.contains(&slot.domain) {
                out.push(slot.domain.clone());
            }
        }
        out
    }

    /// Slot ids of a domain, in canonical order.
    pub fn domain_slots(&self, domain: &str) -> Vec<&str> {
        self.slots
            .iter()
            .filter(|s| s.domain == domain)
            .map(|s| s.slot_id.as_str())
            .collect()
    }

    /// Slot ids of a category, in canonical order.
    pub fn category_slots(&self, category: SlotCategory) -> Vec<&str> {
        self.slots
            .iter()
            .filter(|s| s.category == category)
            .map(|s| s.slot_id.as_str())
            .collect()
    }

    /// Looks a slot up by its main or auxiliary question text. Used by the
    /// gold oracle to recover which slot an input is asking about.
    pub fn slot_for_question(&self, question: &str) -> Option<(&SlotSpec, bool)> {
        for slot in &self.slots {
            if slot.main_question == question {
                return Some((slot, false));
            }
            if slot.aux_question == question {
                return Some((slot, true));
            }
        }
        None
    }

    pub fn to_entries(&self) -> Vec<SchemaFileEntry> {
        self.slots
            .iter()
            .map(|s| SchemaFileEntry {
                slot_id: s.slot_id.clone(),
                domain: Some(s.domain.clone()),
                main_question: s.main_question.clone(),
                aux_question: Some(s.aux_question.clone()),
                category: Some(s.category),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SchemaError> {
        let text =
            serde_json::to_string_pretty(&self.to_entries()).expect("schema serialization");
        std::fs::write(path, text).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Loads a schema file (a JSON list of slot entries). Slot order in the file
/// is the canonical order everywhere downstream.
pub fn load_schema(path: &Path) -> Result<Schema, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<SchemaFileEntry> =
        serde_json::from_str(&text).map_err(|source| SchemaError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    Schema::from_entries(entries)
}
