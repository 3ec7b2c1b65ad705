//! Self-feeding inference: walk a dialogue turn by turn, ask the backend
//! every slot question, assemble the answers into the predicted belief,
//! and feed that prediction — never the gold state — into the next turn's
//! input. Auxiliary questions are a training device and are not asked here.

use rayon::prelude::*;

use crate::corpus::{BeliefState, Corpus, Dialogue};
use crate::evalsuite::PredictionRecord;
use crate::schema::Schema;
use crate::seq2seq::Backend;
use crate::serializer::{
    history_pairs, parse_value, serialize_belief, serialize_history, serialize_input,
};

/// Everything the backend saw and said for one slot of one turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTrace {
    pub slot_id: String,
    pub input_text: String,
    pub raw_output: String,
    /// Parsed value; `None` means "not mentioned".
    pub value: Option<String>,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnOutcome {
    pub turn_index: u32,
    pub belief: BeliefState,
    pub warnings: usize,
    pub slots: Vec<SlotTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueOutcome {
    pub dialogue_id: String,
    pub turns: Vec<TurnOutcome>,
}

/// Predicts the belief after one turn. The belief is assembled from this
/// turn's answers alone; persistence across turns comes from the backend
/// reading the fed-back belief, not from the tracker merging states.
pub fn track_turn<B: Backend + ?Sized>(
    backend: &B,
    dialogue: &Dialogue,
    turn_pos: usize,
    prev_belief: &BeliefState,
    schema: &Schema,
    max_history_tokens: Option<usize>,
) -> TurnOutcome {
    let history = serialize_history(&history_pairs(dialogue, turn_pos), max_history_tokens);
    let belief_text = serialize_belief(prev_belief, schema);
    let mut belief = BeliefState::new();
    let mut warnings = 0;
    let mut slots = Vec::with_capacity(schema.n());
    for spec in schema.slots() {
        let input_text = serialize_input(&history, &spec.main_question, &belief_text);
        let raw_output = backend.generate(&input_text);
        let (value, slot_warnings) = parse_value(&raw_output);
        if let Some(value) = &value {
            belief.set(spec.slot_id.clone(), value);
        }
        warnings += slot_warnings;
        slots.push(SlotTrace {
            slot_id: spec.slot_id.clone(),
            input_text,
            raw_output,
            value,
            warnings: slot_warnings,
        });
    }
    TurnOutcome {
        turn_index: dialogue.turns[turn_pos].turn_index,
        belief,
        warnings,
        slots,
    }
}

/// Tracks a whole dialogue, feeding each turn's predicted belief forward.
pub fn track_dialogue<B: Backend + ?Sized>(
    backend: &B,
    dialogue: &Dialogue,
    schema: &Schema,
    max_history_tokens: Option<usize>,
) -> DialogueOutcome {
    let mut prev = BeliefState::new();
    let mut turns = Vec::with_capacity(dialogue.turns.len());
    for turn_pos in 0..dialogue.turns.len() {
        let outcome = track_turn(backend, dialogue, turn_pos, &prev, schema, max_history_tokens);
        prev = outcome.belief.clone();
        turns.push(outcome);
    }
    DialogueOutcome {
        dialogue_id: dialogue.dialogue_id.clone(),
        turns,
    }
}

fn records_for(dialogue: &Dialogue, outcome: &DialogueOutcome) -> Vec<PredictionRecord> {
    dialogue
        .turns
        .iter()
        .zip(&outcome.turns)
        .map(|(turn, tracked)| PredictionRecord {
            dialogue_id: dialogue.dialogue_id.clone(),
            turn_index: turn.turn_index,
            active_domains: dialogue.active_domains.iter().cloned().collect(),
            gold_belief: turn.gold_belief.to_map(),
            predicted_belief: tracked.belief.to_map(),
            warnings: tracked.warnings,
        })
        .collect()
}

/// Tracks every dialogue and returns one record per turn, in corpus order.
/// Dialogues are independent, so they are distributed over `parallelism`
/// worker threads; the output is identical for any thread count.
pub fn track_corpus<B: Backend + ?Sized>(
    backend: &B,
    corpus: &Corpus,
    schema: &Schema,
    max_history_tokens: Option<usize>,
    parallelism: usize,
) -> Vec<PredictionRecord> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let per_dialogue: Vec<Vec<PredictionRecord>> = pool.install(|| {
        corpus
            .dialogues
            .par_iter()
            .map(|dialogue| {
                let outcome = track_dialogue(backend, dialogue, schema, max_history_tokens);
                records_for(dialogue, &outcome)
            })
            .collect()
    });
    per_dialogue.into_iter().flatten().collect()
}
