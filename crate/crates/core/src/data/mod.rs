//! Cognate datasets: loading, negative sampling, folds and synthetic corpora.

mod folds;
mod negatives;
mod synthetic;

pub use folds::{stratified_kfold, stratify, FoldPlan};
pub use negatives::{build_negatives, negative_count, NegRatio};
pub use synthetic::{gen_synthetic, SyntheticCorpus, SyntheticSpec};

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::detector::{CandidatePair, Label, WordPair};
use crate::error::{Error, Result};
use crate::morphology::{pairs_from_unimorph, MorphPair, UnimorphStats};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub cognates: usize,
    pub non_cognates: usize,
    pub unlabeled: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.cognates + self.non_cognates + self.unlabeled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognateDataset {
    pub pairs: Vec<CandidatePair>,
    pub language_pair: (String, String),
    pub source: Source,
}

impl CognateDataset {
    /// Rejects duplicate `(word1, word2)` pairs.
    pub fn new(pairs: Vec<CandidatePair>, language_pair: (String, String), source: Source) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &pairs {
            if !seen.insert(&c.pair) {
                return Err(Error::Data(format!(
                    "duplicate pair ({}, {})",
                    c.pair.word1, c.pair.word2
                )));
            }
        }
        Ok(Self {
            pairs,
            language_pair,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for p in &self.pairs {
            match p.label {
                Some(Label::Cognate) => c.cognates += 1,
                Some(Label::NonCognate) => c.non_cognates += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }

    /// The pairs with labels stripped.
    pub fn word_pairs(&self) -> Vec<WordPair> {
        self.pairs.iter().map(|c| c.pair.clone()).collect()
    }

    /// Labels of all pairs; fails if any pair is unlabeled.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.pairs
            .iter()
            .map(|c| {
                c.label
                    .ok_or_else(|| Error::Input(format!("pair ({}, {}) has no label", c.pair.word1, c.pair.word2)))
            })
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<CandidatePair> {
        indices.iter().map(|&i| self.pairs[i].clone()).collect()
    }

    /// Writes `word1<TAB>word2<TAB>label` rows; unlabeled pairs get two columns.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for c in &self.pairs {
            match c.label {
                Some(l) => writeln!(w, "{}\t{}\t{}", c.pair.word1, c.pair.word2, l)?,
                None => writeln!(w, "{}\t{}", c.pair.word1, c.pair.word2)?,
            }
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_tsv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Expected per-class counts of a cognate file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub cognates: usize,
    pub non_cognates: usize,
}

impl Manifest {
    pub fn of(dataset: &CognateDataset) -> Self {
        let c = dataset.counts();
        Self {
            cognates: c.cognates,
            non_cognates: c.non_cognates,
        }
    }

    pub fn check(&self, counts: &ClassCounts) -> Result<()> {
        if counts.cognates != self.cognates || counts.non_cognates != self.non_cognates {
            return Err(Error::Data(format!(
                "class counts {}:{} do not match manifest {}:{}",
                counts.cognates, counts.non_cognates, self.cognates, self.non_cognates
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Manifest location for a cognate file: `<file>.manifest.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub accepted: usize,
    pub blank: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

/// Parses cognate TSV rows `word1<TAB>word2[<TAB>label]`.
///
/// Rows without a second word or with a label other than 0/1 are skipped
/// and counted, as are repeated pairs. Invalid UTF-8 is fatal.
pub fn read_cognates(
    mut reader: impl Read,
    language_pair: (String, String),
    source: Source,
) -> Result<(CognateDataset, LoadStats)> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Data(format!("cognate file is not UTF-8: {e}")))?;
    let mut stats = LoadStats::default();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            stats.blank += 1;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (w1, w2) = match cols.as_slice() {
            [w1, w2, ..] if !w1.is_empty() && !w2.is_empty() => (*w1, *w2),
            _ => {
                stats.malformed += 1;
                continue;
            }
        };
        let label = match cols.get(2) {
            None | Some(&"") => None,
            Some(s) => match s.parse::<Label>() {
                Ok(l) => Some(l),
                Err(_) => {
                    stats.malformed += 1;
                    continue;
                }
            },
        };
        let pair = WordPair::new(w1, w2);
        if !seen.insert(pair.clone()) {
            stats.duplicates += 1;
            continue;
        }
        pairs.push(CandidatePair { pair, label });
        stats.accepted += 1;
    }
    if pairs.is_empty() {
        warn!("cognate input contains no usable pairs");
    }
    if stats.malformed > 0 {
        warn!("skipped {} malformed cognate rows", stats.malformed);
    }
    Ok((CognateDataset::new(pairs, language_pair, source)?, stats))
}

/// Loads a cognate file and, if `<file>.manifest.json` exists, checks the
/// class counts against it.
pub fn load_cognates(path: impl AsRef<Path>) -> Result<(CognateDataset, LoadStats)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let language_pair = language_pair_from_name(path);
    let (ds, stats) = read_cognates(file, language_pair, Source::Real)?;
    let manifest = manifest_path(path);
    if manifest.exists() {
        Manifest::load(&manifest)?.check(&ds.counts())?;
    }
    Ok((ds, stats))
}

/// `hi-mr.tsv` → ("hi", "mr"); anything else → ("a", "b").
fn language_pair_from_name(path: &Path) -> (String, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    match stem.split_once(['-', '_']) {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => (a.to_lowercase(), b.to_lowercase()),
        _ => ("a".into(), "b".into()),
    }
}

pub fn load_unimorph(path: impl AsRef<Path>, language: &str) -> Result<(Vec<MorphPair>, UnimorphStats)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let (pairs, stats) = pairs_from_unimorph(file, language)?;
    if stats.malformed > 0 {
        warn!("skipped {} malformed morphology rows", stats.malformed);
    }
    Ok((pairs, stats))
}

/// Shrinks or grows the morphology set by `percent` (e.g. −30 or +30).
/// Down-sampling draws without replacement and keeps input order;
/// up-sampling keeps every original and appends draws with replacement.
pub fn morph_resample(pairs: &[MorphPair], percent: i32, rng: &mut Rng) -> Result<Vec<MorphPair>> {
    if percent <= -100 {
        return Err(Error::Input(format!("cannot resample by {percent}%")));
    }
    let n = pairs.len();
    let target = ((n as f64) * (100.0 + percent as f64) / 100.0).round() as usize;
    if target <= n {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(target);
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| pairs[i].clone()).collect())
    } else {
        let mut out = pairs.to_vec();
        out.extend((n..target).map(|_| pairs[rng.below(n)].clone()));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp() -> (String, String) {
        ("hi".into(), "mr".into())
    }

    #[test]
    fn reads_rows_and_counts_problems() {
        let text = "kamal\tkamaL\t1\n\nghar\t\t1\npani\tpaani\t0\npani\tpaani\t0\nx\ty\tmaybe\nnadi\tnadee\n";
        let (ds, stats) = read_cognates(text.as_bytes(), lp(), Source::Real).unwrap();
        assert_eq!(
            stats,
            LoadStats {
                accepted: 3,
                blank: 1,
                malformed: 2,
                duplicates: 1
            }
        );
        assert_eq!(
            ds.counts(),
            ClassCounts {
                cognates: 1,
                non_cognates: 1,
                unlabeled: 1
            }
        );
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let (ds, _) = read_cognates(&b""[..], lp(), Source::Real).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn invalid_utf8_is_fatal() {
        assert!(matches!(
            read_cognates(&b"a\t\xff\t1\n"[..], lp(), Source::Real),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let ds = CognateDataset::new(
            vec![
                CandidatePair::labeled("ab", "ob", Label::Cognate),
                CandidatePair::labeled("ab", "ku", Label::NonCognate),
                CandidatePair::unlabeled("ku", "ob"),
            ],
            lp(),
            Source::Synthetic,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_tsv(&mut buf).unwrap();
        let (back, _) = read_cognates(&buf[..], lp(), Source::Synthetic).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn duplicates_rejected_on_construction() {
        let pairs = vec![
            CandidatePair::labeled("ab", "ob", Label::Cognate),
            CandidatePair::labeled("ab", "ob", Label::NonCognate),
        ];
        assert!(CognateDataset::new(pairs, lp(), Source::Real).is_err());
    }

    #[test]
    fn manifest_mismatch_is_an_error() {
        let m = Manifest {
            cognates: 2,
            non_cognates: 1,
        };
        assert!(m
            .check(&ClassCounts {
                cognates: 2,
                non_cognates: 1,
                unlabeled: 0
            })
            .is_ok());
        assert!(m
            .check(&ClassCounts {
                cognates: 1,
                non_cognates: 1,
                unlabeled: 0
            })
            .is_err());
    }

    #[test]
    fn language_pair_from_file_name() {
        assert_eq!(
            language_pair_from_name(Path::new("/d/Ga-Gv.tsv")),
            ("ga".into(), "gv".into())
        );
        assert_eq!(
            language_pair_from_name(Path::new("pairs.tsv")),
            ("a".into(), "b".into())
        );
    }

    #[test]
    fn resample_sizes() {
        let pairs: Vec<MorphPair> = (0..100)
            .map(|i| MorphPair::new(format!("w{i}"), format!("w{i}s"), "x"))
            .collect();
        let mut rng = Rng::new(1);
        assert_eq!(morph_resample(&pairs, 0, &mut rng).unwrap(), pairs);
        let down = morph_resample(&pairs, -30, &mut rng).unwrap();
        assert_eq!(down.len(), 70);
        assert!(down.iter().all(|p| pairs.contains(p)));
        let up = morph_resample(&pairs, 30, &mut rng).unwrap();
        assert_eq!(up.len(), 130);
        assert_eq!(&up[..100], &pairs[..]);
        assert!(morph_resample(&pairs, -100, &mut rng).is_err());
    }
}
