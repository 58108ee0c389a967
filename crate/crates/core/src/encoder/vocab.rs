use std::collections::BTreeMap;
use std::io::{Read, Write};

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: usize = 2;

/// Codepoint vocabulary. Index 0 is padding, 1 is the unknown character,
/// real characters follow in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl CharVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary over the NFC-normalised characters of `words`, in order of
    /// first appearance.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        v.extend(words);
        v
    }

    /// Adds unseen characters; returns how many were added.
    pub fn extend<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) -> usize {
        let before = self.chars.len();
        for w in words {
            for c in w.nfc() {
                self.insert(c);
            }
        }
        self.chars.len() - before
    }

    pub fn insert(&mut self, c: char) -> usize {
        if let Some(i) = self.index.get(&c) {
            return *i;
        }
        let idx = self.chars.len() + RESERVED;
        self.chars.push(c);
        self.index.insert(c, idx);
        idx
    }

    /// Total size including the two reserved indices.
    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_at(&self, idx: usize) -> Option<char> {
        idx.checked_sub(RESERVED).and_then(|i| self.chars.get(i)).copied()
    }

    /// One codepoint per line; line `i` holds index `i + 2`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for c in &self.chars {
            if *c == '\n' || *c == '\r' {
                return Err(Error::Input(format!(
                    "line break {c:?} cannot be stored in a vocabulary file"
                )));
            }
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::Data(format!("vocabulary is not valid UTF-8: {e}")))?;
        let mut v = Self::new();
        let body = text.strip_suffix('\n').unwrap_or(&text);
        if body.is_empty() {
            return Ok(v);
        }
        for (lineno, line) in body.split('\n').enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => {
                    if v.index.contains_key(&c) {
                        return Err(Error::Data(format!("duplicate character {c:?} on line {}", lineno + 1)));
                    }
                    v.insert(c);
                }
                _ => {
                    return Err(Error::Data(format!(
                        "vocabulary line {} must hold exactly one codepoint",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Maps a raw word to vocabulary indices.
///
/// The word is NFC-normalised, every codepoint (spaces included) is looked
/// up with unknowns mapped to [`UNK`], the sequence is truncated at
/// `max_len` and right-padded with [`PAD`] up to `min_len`.
pub fn normalize_word(raw: &str, vocab: &CharVocab, min_len: usize, max_len: usize) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Err(Error::Input("empty word".into()));
    }
    let mut seq: Vec<usize> = raw.nfc().take(max_len).map(|c| vocab.index_of(c)).collect();
    if seq.len() < min_len {
        seq.resize(min_len, PAD);
    }
    Ok(seq)
}
