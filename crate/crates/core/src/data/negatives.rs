use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::detector::WordPair;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Target proportion of cognates to non-cognates, e.g. `60:40`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegRatio {
    pub cognates: u32,
    pub non_cognates: u32,
}

impl Default for NegRatio {
    fn default() -> Self {
        Self {
            cognates: 60,
            non_cognates: 40,
        }
    }
}

impl NegRatio {
    pub fn new(cognates: u32, non_cognates: u32) -> Result<Self> {
        if cognates == 0 {
            return Err(Error::Input("ratio needs a nonzero cognate share".into()));
        }
        Ok(Self { cognates, non_cognates })
    }

    /// Published class counts for the known language pairs; the default
    /// split otherwise.
    pub fn for_language_pair(a: &str, b: &str) -> Self {
        let counts = match (a.to_lowercase().as_str(), b.to_lowercase().as_str()) {
            ("hi", "mr") => (15726, 15983),
            ("hi", "gu") => (17021, 15057),
            ("hi", "pa") => (14097, 15166),
            ("hi", "bn") | ("hi", "ba") => (15312, 16119),
            ("hi", "ta") => (3363, 4005),
            ("hi", "as") => (3478, 4101),
            ("ga", "gv") => (335, 223),
            ("ga", "gd") => (676, 450),
            ("zu", "xh") => (2236, 1490),
            ("zu", "ss") => (14, 9),
            _ => return Self::default(),
        };
        Self {
            cognates: counts.0,
            non_cognates: counts.1,
        }
    }
}

impl fmt::Display for NegRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.cognates, self.non_cognates)
    }
}

impl FromStr for NegRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("ratio must look like 60:40, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Self::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }
}

/// Number of negatives that puts `positives` at the requested ratio.
pub fn negative_count(positives: usize, ratio: NegRatio) -> usize {
    ((positives as f64) * ratio.non_cognates as f64 / ratio.cognates as f64).round() as usize
}

/// Pairs `word1` of one cognate pair with `word2` of another. Generated
/// pairs never coincide with a known cognate and never repeat.
pub fn build_negatives(cognates: &[WordPair], ratio: NegRatio, rng: &mut Rng) -> Result<Vec<WordPair>> {
    let n = cognates.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "negative sampling needs at least 2 cognate pairs, got {n}"
        )));
    }
    let target = negative_count(n, ratio);
    let positives: BTreeSet<&WordPair> = cognates.iter().collect();
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    let mut accept = |i: usize, j: usize, out: &mut Vec<WordPair>| {
        let cand = WordPair::new(cognates[i].word1.clone(), cognates[j].word2.clone());
        if !positives.contains(&cand) && chosen.insert(cand.clone()) {
            out.push(cand);
        }
    };

    let space = n * (n - 1);
    if space <= 4 * target.max(1) || space <= 4096 {
        // Small space: enumerate every candidate and take a random prefix.
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        rng.shuffle(&mut all);
        for (i, j) in all {
            if out.len() == target {
                break;
            }
            accept(i, j, &mut out);
        }
    } else {
        let mut tries = 0;
        while out.len() < target && tries < 50 * target {
            let i = rng.below(n);
            let j = rng.below(n - 1);
            let j = if j >= i { j + 1 } else { j };
            accept(i, j, &mut out);
            tries += 1;
        }
    }
    if out.len() < target {
        warn!(
            "only {} of {target} negatives could be formed without duplicates",
            out.len()
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing_and_counts() {
        let r: NegRatio = "50:50".parse().unwrap();
        assert_eq!(negative_count(101, r), 101);
        assert_eq!(negative_count(60, NegRatio::default()), 40);
        assert!("0:5".parse::<NegRatio>().is_err());
        assert!("half".parse::<NegRatio>().is_err());
        assert_eq!(NegRatio::for_language_pair("Hi", "Mr").to_string(), "15726:15983");
    }

    #[test]
    fn two_pairs_give_the_derangements() {
        let cognates = vec![WordPair::new("a", "b"), WordPair::new("c", "d")];
        let neg = build_negatives(&cognates, NegRatio::new(1, 1).unwrap(), &mut Rng::new(0)).unwrap();
        let mut neg = neg;
        neg.sort();
        assert_eq!(neg, vec![WordPair::new("a", "d"), WordPair::new("c", "b")]);
    }

    #[test]
    fn never_emits_a_known_positive() {
        // (x, y) is both a cognate and the cross pairing of rows 0 and 1.
        let cognates = vec![
            WordPair::new("x", "q"),
            WordPair::new("p", "y"),
            WordPair::new("x", "y"),
        ];
        for seed in 0..20 {
            let neg = build_negatives(&cognates, NegRatio::new(1, 2).unwrap(), &mut Rng::new(seed)).unwrap();
            assert!(neg.iter().all(|p| !cognates.contains(p)));
        }
    }

    #[test]
    fn unattainable_ratio_is_best_effort() {
        let cognates = vec![WordPair::new("a", "b"), WordPair::new("c", "d")];
        let neg = build_negatives(&cognates, NegRatio::new(1, 5).unwrap(), &mut Rng::new(0)).unwrap();
        assert_eq!(neg.len(), 2);
    }

    #[test]
    fn one_pair_is_rejected() {
        assert!(build_negatives(&[WordPair::new("a", "b")], NegRatio::default(), &mut Rng::new(0)).is_err());
    }
}
