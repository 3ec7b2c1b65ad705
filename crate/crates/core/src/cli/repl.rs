//! Interactive tracking session: type a dialogue turn by turn and watch
//! the belief state the tracker assembles after every user utterance.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use super::{input_err, CliResult, ReplArgs};
use crate::corpus::{normalize_utterance, Dialogue, Turn};
use crate::schema::load_schema;
use crate::seq2seq::checkpoint;
use crate::serializer::serialize_belief;
use crate::BeliefState;

pub(super) fn cmd_repl(args: &ReplArgs) -> CliResult {
    let schema = load_schema(&args.schema).map_err(input_err)?;
    let (model, schema_id) = checkpoint::load_checkpoint(&args.checkpoint).map_err(input_err)?;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut stdout = std::io::stdout();
    println!("tracking session (checkpoint schema: {schema_id})");
    println!("type the system utterance (empty on the first turn), then the user utterance");
    println!("commands: :belief  :reset  :quit");

    let mut turns: Vec<(String, String)> = Vec::new();
    let mut belief = BeliefState::new();
    let mut pending_system: Option<String> = None;
    loop {
        let prompt = if pending_system.is_none() {
            "system> "
        } else {
            "user> "
        };
        write!(stdout, "{prompt}").and_then(|_| stdout.flush()).map_err(input_err)?;
        let line = match lines.next() {
            None => break,
            Some(line) => line.map_err(input_err)?,
        };
        let line = line.trim().to_string();
        match line.as_str() {
            ":quit" => break,
            ":reset" => {
                turns.clear();
                belief = BeliefState::new();
                pending_system = None;
                println!("state cleared");
                continue;
            }
            ":belief" => {
                println!("{}", serialize_belief(&belief, &schema));
                continue;
            }
            _ => {}
        }
        match pending_system.take() {
            None => pending_system = Some(line),
            Some(system) => {
                if normalize_utterance(&line).is_empty() {
                    println!("user utterance must not be empty");
                    pending_system = Some(system);
                    continue;
                }
                turns.push((system, line));
                let dialogue = build_dialogue(&turns);
                let outcome = crate::tracker::track_turn(
                    &model,
                    &dialogue,
                    turns.len() - 1,
                    &belief,
                    &schema,
                    args.max_history_tokens,
                );
                for slot in &outcome.slots {
                    let suffix = if slot.warnings > 0 {
                        format!("  [{} parse warnings]", slot.warnings)
                    } else {
                        String::new()
                    };
                    println!("  {}: {}{}", slot.slot_id, slot.raw_output, suffix);
                }
                belief = outcome.belief;
                println!("belief after turn {}: {}", turns.len(), serialize_belief(&belief, &schema));
            }
        }
    }
    Ok(())
}

/// The session transcript as a dialogue; gold beliefs stay empty because
/// tracking never reads them.
fn build_dialogue(turns: &[(String, String)]) -> Dialogue {
    Dialogue {
        dialogue_id: "repl".to_string(),
        active_domains: BTreeSet::new(),
        turns: turns
            .iter()
            .enumerate()
            .map(|(i, (system, user))| Turn {
                turn_index: (i + 1) as u32,
                system_utterance: normalize_utterance(system),
                user_utterance: normalize_utterance(user),
                gold_belief: BeliefState::new(),
            })
            .collect(),
    }
}
