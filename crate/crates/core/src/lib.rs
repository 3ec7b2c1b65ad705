//! Dialogue state tracking as reading comprehension.
//!
//! The toolkit turns per-turn belief tracking into text-to-text question
//! answering: every slot in the schema has a natural-language question, the
//! model answers it from the serialized dialogue history, and the assembled
//! answers become the belief state that is fed back into the next turn's
//! input. Training adds a slot-gate auxiliary question ("Are they talking
//! about ...?") with a weighted joint loss.
//!
//! Module map:
//! - [`corpus`]: dialogue corpora — loading, normalization, domain filtering,
//!   few-shot sampling, domain-transfer splits, and a synthetic generator.
//! - [`schema`]: the slot universe with main and auxiliary questions.
//! - [`serializer`]: the deterministic text contract between dialogues and
//!   the backend (history markers, belief round-trip, training examples).
//! - [`seq2seq`]: backend trait, a trainable encoder-decoder, a gold oracle,
//!   the joint training loop, and a finite-difference gradient check.
//! - [`tracker`]: the self-feeding inference state machine.
//! - [`evalsuite`]: joint goal accuracy and the analysis metrics.
//! - [`manifest`]: run manifests recording how each artifact was produced.
//! - [`cli`]: the `dstkit` command-line workflows.

pub mod cli;
pub mod corpus;
pub mod evalsuite;
pub mod manifest;
pub mod schema;
pub mod seq2seq;
pub mod serializer;
pub mod tracker;

pub use corpus::{BeliefState, Corpus, Dialogue, Turn};
pub use evalsuite::{EvalReport, PredictionRecord};
pub use schema::{Schema, SlotSpec};
pub use seq2seq::{Backend, BackendConfig, TrainConfig, TrainReport};
