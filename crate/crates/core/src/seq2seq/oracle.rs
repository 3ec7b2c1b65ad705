//! A backend that answers every question from gold annotations. It indexes
//! a corpus by (serialized history, question) and is the reference point
//! for tests: tracking a corpus with its own oracle must reproduce the gold
//! beliefs exactly, and training the oracle must change nothing.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Backend, StepLoss, TrainableBackend};
use crate::corpus::{Corpus, NOT_MENTIONED};
use crate::schema::Schema;
use crate::serializer::{
    history_pairs, serialize_history, AUX_YES, BELIEF_PREFIX, CONTEXT_PREFIX, QUESTION_PREFIX,
};

pub struct GoldOracleBackend {
    answers: HashMap<(String, String), String>,
    conflicts: usize,
    misses: AtomicUsize,
}

impl GoldOracleBackend {
    /// Indexes gold answers for every (dialogue prefix, question) pair.
    /// `max_history_tokens` must match what inference will use, because the
    /// lookup key is the serialized history text.
    pub fn from_corpus(
        corpus: &Corpus,
        schema: &Schema,
        max_history_tokens: Option<usize>,
    ) -> Self {
        let mut answers = HashMap::new();
        let mut conflicts = 0;
        for dialogue in &corpus.dialogues {
            for turn_pos in 0..dialogue.turns.len() {
                let history =
                    serialize_history(&history_pairs(dialogue, turn_pos), max_history_tokens);
                let gold = &dialogue.turns[turn_pos].gold_belief;
                for spec in schema.slots() {
                    let main = gold
                        .get(&spec.slot_id)
                        .unwrap_or(NOT_MENTIONED)
                        .to_string();
                    let aux = if gold.contains(&spec.slot_id) {
                        AUX_YES.to_string()
                    } else {
                        NOT_MENTIONED.to_string()
                    };
                    for (question, answer) in [
                        (spec.main_question.clone(), main),
                        (spec.aux_question.clone(), aux),
                    ] {
                        let key = (history.clone(), question);
                        match answers.get(&key) {
                            None => {
                                answers.insert(key, answer);
                            }
                            Some(existing) if *existing != answer => conflicts += 1,
                            Some(_) => {}
                        }
                    }
                }
            }
        }
        Self {
            answers,
            conflicts,
            misses: AtomicUsize::new(0),
        }
    }

    /// Identical dialogue prefixes annotated with different gold beliefs.
    /// Zero on corpora where the belief is a function of the text.
    pub fn conflicts(&self) -> usize {
        self.conflicts
    }

    /// Lookups that fell outside the indexed corpus.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Splits an assembled input back into (history, question).
    fn parse_input(input: &str) -> Option<(&str, &str)> {
        let rest = input.strip_prefix(CONTEXT_PREFIX)?;
        let question_mark = format!(" {QUESTION_PREFIX} ");
        let belief_mark = format!(" {BELIEF_PREFIX} ");
        let (history, rest) = rest.split_once(&question_mark)?;
        let (question, _belief) = rest.split_once(&belief_mark)?;
        Some((history.trim(), question.trim()))
    }
}

impl Backend for GoldOracleBackend {
    fn generate(&self, input_text: &str) -> String {
        let Some((history, question)) = Self::parse_input(input_text) else {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return NOT_MENTIONED.to_string();
        };
        match self
            .answers
            .get(&(history.to_string(), question.to_string()))
        {
            Some(answer) => answer.clone(),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                NOT_MENTIONED.to_string()
            }
        }
    }
}

impl TrainableBackend for GoldOracleBackend {
    /// Zero when the oracle already produces the target, one otherwise.
    fn example_nll(&self, input_text: &str, target_text: &str) -> f64 {
        if self.generate(input_text) == target_text {
            0.0
        } else {
            1.0
        }
    }

    /// The oracle has no parameters: losses are reported, nothing changes.
    fn train_batch(
        &mut self,
        main: &[(&str, &str)],
        aux: &[(&str, &str)],
        aux_weight: f64,
    ) -> StepLoss {
        let mean = |examples: &[(&str, &str)]| {
            if examples.is_empty() {
                0.0
            } else {
                examples
                    .iter()
                    .map(|(i, t)| self.example_nll(i, t))
                    .sum::<f64>()
                    / examples.len() as f64
            }
        };
        let belief = mean(main);
        let aux_loss = mean(aux);
        StepLoss {
            belief,
            aux: aux_loss,
            aux_weight,
            total: super::joint_loss(belief, aux_loss, aux_weight),
        }
    }
}
