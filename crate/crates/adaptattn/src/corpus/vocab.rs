use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Id reserved for padding positions.
pub const PAD_ID: u32 = 0;
/// Id substituted for tokens absent from the vocabulary.
pub const UNK_ID: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id table with ids 0 and 1 reserved for PAD and UNK.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn pad_id(&self) -> u32 {
        PAD_ID
    }

    pub fn unk_id(&self) -> u32 {
        UNK_ID
    }

    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id of `token`, falling back to [`UNK_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token = Vec::with_capacity(tokens.len() + 2);
        id_to_token.push(PAD_TOKEN.to_string());
        id_to_token.push(UNK_TOKEN.to_string());
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    /// Writes the vocabulary file: one token per line, ids implied by line
    /// order starting at 2 (lines 0 and 1 are the implicit PAD and UNK).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for token in &self.id_to_token[2..] {
            body.push_str(token);
            body.push('\n');
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary file written by [`Vocabulary::save`], bit-exact.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = body.lines().map(|l| l.to_string()).collect();
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Builds a vocabulary from tokenized documents: ids 0 and 1 are reserved,
/// the remaining slots go to the most frequent tokens with frequency at
/// least `min_freq`, ties broken lexicographically.
pub fn build_vocab<'a, I>(docs: I, max_vocab: usize, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_vocab < 2 {
        return Err(Error::Config(format!(
            "max_vocab must be at least 2 to hold PAD and UNK, got {max_vocab}"
        )));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for token in doc {
            *freq.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, count)| count >= min_freq)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(max_vocab - 2);
    Ok(Vocabulary::from_tokens(
        entries.into_iter().map(|(t, _)| t.to_string()).collect(),
    ))
}
