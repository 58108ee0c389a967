//! Desk-scale cognate corpora with a known sound-shift relation.
//!
//! Language A words are random consonant/vowel strings. A cognate partner
//! applies the sound-shift map to every character and then a few random
//! edits. Morphology pairs for A come from separate lemmas: the inflected
//! form alternates stem characters along the same map (like umlaut or
//! initial mutation) and appends a suffix.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{build_negatives, CognateDataset, NegRatio, Source};
use crate::detector::{CandidatePair, Label, WordPair};
use crate::error::{Error, Result};
use crate::morphology::MorphPair;
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of cognate pairs.
    pub lexicon_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub consonants: String,
    pub vowels: String,
    pub shift_map: BTreeMap<char, char>,
    /// Maximum random edits applied to each cognate partner.
    pub edit_budget: usize,
    /// Fraction of cognates among all pairs.
    pub cognate_ratio: f64,
    /// Lemmas of language A used only for morphology pairs.
    pub morph_lemmas: usize,
    pub inflections_per_lemma: usize,
    pub suffixes: Vec<String>,
    /// Chance that a mappable stem character alternates in an inflection.
    pub alternation_rate: f64,
    pub language_pair: (String, String),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        // Every segment shifts, so cognates share almost no literal characters.
        let shift = [
            ('a', 'o'),
            ('o', 'u'),
            ('u', 'a'),
            ('e', 'i'),
            ('i', 'e'),
            ('p', 'b'),
            ('b', 'p'),
            ('t', 'd'),
            ('d', 't'),
            ('k', 'g'),
            ('g', 'k'),
            ('s', 'h'),
            ('h', 's'),
            ('m', 'n'),
            ('n', 'm'),
            ('l', 'r'),
            ('r', 'l'),
        ];
        Self {
            lexicon_size: 300,
            min_len: 4,
            max_len: 8,
            consonants: "ptkbdgmnslrvh".into(),
            vowels: "aeiou".into(),
            shift_map: shift.into_iter().collect(),
            edit_budget: 1,
            cognate_ratio: 0.5,
            morph_lemmas: 300,
            inflections_per_lemma: 2,
            suffixes: vec!["an".into(), "ini".into(), "ta".into(), "em".into()],
            alternation_rate: 0.5,
            language_pair: ("sa".into(), "sb".into()),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let alphabet = self.alphabet();
        if self.consonants.is_empty() || self.vowels.is_empty() {
            return Err(Error::Input("synthetic alphabet needs consonants and vowels".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Input(format!(
                "bad word length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if let Some((a, b)) = self
            .shift_map
            .iter()
            .find(|(a, b)| !alphabet.contains(a) || !alphabet.contains(b))
        {
            return Err(Error::Input(format!("sound shift {a}→{b} leaves the alphabet")));
        }
        if !(self.cognate_ratio > 0.0 && self.cognate_ratio <= 1.0) {
            return Err(Error::Input("cognate ratio must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.alternation_rate) {
            return Err(Error::Input("alternation rate must lie in [0, 1]".into()));
        }
        if self.lexicon_size < 2 {
            return Err(Error::Input("synthetic lexicon needs at least 2 words".into()));
        }
        Ok(())
    }

    fn alphabet(&self) -> BTreeSet<char> {
        self.consonants.chars().chain(self.vowels.chars()).collect()
    }

    /// Applies the sound-shift map to every character.
    pub fn shift(&self, word: &str) -> String {
        word.chars().map(|c| *self.shift_map.get(&c).unwrap_or(&c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub dataset: CognateDataset,
    pub morphology: Vec<MorphPair>,
}

struct Gen<'a> {
    spec: &'a SyntheticSpec,
    consonants: Vec<char>,
    vowels: Vec<char>,
    alphabet: Vec<char>,
}

impl Gen<'_> {
    fn word(&self, rng: &mut Rng) -> String {
        let len = self.spec.min_len + rng.below(self.spec.max_len - self.spec.min_len + 1);
        let mut vowel = rng.bernoulli(0.5);
        (0..len)
            .map(|_| {
                let pool = if vowel { &self.vowels } else { &self.consonants };
                vowel = !vowel;
                pool[rng.below(pool.len())]
            })
            .collect()
    }

    fn lexicon(&self, n: usize, taken: &mut BTreeSet<String>, rng: &mut Rng) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        let mut tries = 0;
        while out.len() < n && tries < 100 * n + 100 {
            let w = self.word(rng);
            if taken.insert(w.clone()) {
                out.push(w);
            }
            tries += 1;
        }
        out
    }

    fn edit(&self, word: &str, rng: &mut Rng) -> String {
        let mut chars: Vec<char> = word.chars().collect();
        let edits = rng.below(self.spec.edit_budget + 1);
        for _ in 0..edits {
            let c = self.alphabet[rng.below(self.alphabet.len())];
            match rng.below(3) {
                0 => {
                    let i = rng.below(chars.len());
                    chars[i] = c;
                }
                1 => {
                    let i = rng.below(chars.len() + 1);
                    chars.insert(i, c);
                }
                _ if chars.len() > 2 => {
                    chars.remove(rng.below(chars.len()));
                }
                _ => {}
            }
        }
        chars.into_iter().collect()
    }

    fn inflect(&self, lemma: &str, rng: &mut Rng) -> String {
        let mut stem: String = lemma
            .chars()
            .map(|c| match self.spec.shift_map.get(&c) {
                Some(t) if rng.bernoulli(self.spec.alternation_rate) => *t,
                _ => c,
            })
            .collect();
        if !self.spec.suffixes.is_empty() {
            stem.push_str(&self.spec.suffixes[rng.below(self.spec.suffixes.len())]);
        }
        stem
    }
}

/// Generates a labeled cognate dataset and morphology pairs for language A.
/// The output depends only on `spec` and the state of `rng`.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let gen = Gen {
        spec,
        consonants: spec.consonants.chars().collect(),
        vowels: spec.vowels.chars().collect(),
        alphabet: spec.alphabet().into_iter().collect(),
    };
    let mut taken = BTreeSet::new();
    let lexicon = gen.lexicon(spec.lexicon_size, &mut taken, rng);
    let mut seen = BTreeSet::new();
    let mut cognates = Vec::with_capacity(lexicon.len());
    for w in &lexicon {
        let partner = gen.edit(&spec.shift(w), rng);
        let pair = WordPair::new(w.clone(), partner);
        if seen.insert(pair.clone()) {
            cognates.push(pair);
        }
    }
    let ratio = NegRatio::new(
        (spec.cognate_ratio * 1000.0).round() as u32,
        ((1.0 - spec.cognate_ratio) * 1000.0).round() as u32,
    )?;
    let negatives = if ratio.non_cognates == 0 {
        Vec::new()
    } else {
        build_negatives(&cognates, ratio, rng)?
    };
    let mut pairs: Vec<CandidatePair> = cognates
        .into_iter()
        .map(|p| CandidatePair {
            pair: p,
            label: Some(Label::Cognate),
        })
        .chain(negatives.into_iter().map(|p| CandidatePair {
            pair: p,
            label: Some(Label::NonCognate),
        }))
        .collect();
    rng.shuffle(&mut pairs);
    let dataset = CognateDataset::new(pairs, spec.language_pair.clone(), Source::Synthetic)?;

    let lemmas = gen.lexicon(spec.morph_lemmas, &mut taken, rng);
    let mut morph_seen = BTreeSet::new();
    let mut morphology = Vec::new();
    for lemma in &lemmas {
        for _ in 0..spec.inflections_per_lemma {
            let form = gen.inflect(lemma, rng);
            if morph_seen.insert((lemma.clone(), form.clone())) {
                morphology.push(MorphPair::new(lemma.clone(), form, spec.language_pair.0.clone()));
            }
        }
    }
    Ok(SyntheticCorpus { dataset, morphology })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_without_edits_copies_words() {
        let spec = SyntheticSpec {
            shift_map: BTreeMap::new(),
            edit_budget: 0,
            lexicon_size: 20,
            ..SyntheticSpec::default()
        };
        let corpus = gen_synthetic(&spec, &mut Rng::new(1)).unwrap();
        for c in corpus.dataset.pairs.iter().filter(|c| c.label == Some(Label::Cognate)) {
            assert_eq!(c.pair.word1, c.pair.word2);
        }
    }

    #[test]
    fn shift_map_application() {
        let spec = SyntheticSpec {
            shift_map: [('a', 'o')].into_iter().collect(),
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.shift("banana"), "bonono");
        assert_eq!(SyntheticSpec::default().shift("banana"), "pomomo");
    }

    #[test]
    fn counts_follow_the_ratio() {
        let corpus = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(2)).unwrap();
        let c = corpus.dataset.counts();
        assert_eq!(c.cognates, 300);
        assert_eq!(c.non_cognates, 300);
        let spec = SyntheticSpec::default();
        assert!(corpus.morphology.len() > 300 && corpus.morphology.len() <= 600);
        assert!(corpus
            .morphology
            .iter()
            .all(|p| spec.suffixes.iter().any(|s| p.word2.ends_with(s.as_str()))));
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(7)).unwrap();
        let b = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(7)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn shift_leaving_alphabet_is_rejected() {
        let spec = SyntheticSpec {
            shift_map: [('a', 'ß')].into_iter().collect(),
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
