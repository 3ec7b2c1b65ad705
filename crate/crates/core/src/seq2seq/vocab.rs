//! Whitespace-level vocabulary with a light punctuation split. Structural
//! characters (`; = ? :`) become standalone tokens so belief separators and
//! question marks never fuse with the words next to them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

/// Characters always separated into their own tokens.
const SPLIT_CHARS: [char; 4] = [';', '=', '?', ':'];

/// Splits text into tokens: whitespace-separated words, with structural
/// characters isolated. Deterministic and allocation-simple.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if SPLIT_CHARS.contains(&c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Self {
        vocab.tokens
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary over the given texts: the three specials first,
    /// then every distinct token in first-seen order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab::from(SPECIALS.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        for text in texts {
            for token in tokenize(text) {
                if !vocab.index.contains_key(&token) {
                    vocab.index.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token);
                }
            }
        }
        vocab
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Encodes text to ids, mapping unknown tokens to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Decodes ids to space-joined text, skipping the special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS && id != UNK)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
