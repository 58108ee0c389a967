//! Scoring, cluster-to-label mapping, the orthographic baseline and
//! significance testing.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::detector::{Label, WordPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Counts with the cognate class as positive.
    pub fn from_predictions(predicted: &[Label], gold: &[Label]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::dim(
                "confusion",
                format!("{} predictions for {} labels", predicted.len(), gold.len()),
            ));
        }
        let mut c = Self::default();
        for (p, g) in predicted.iter().zip(gold) {
            match (p, g) {
                (Label::Cognate, Label::Cognate) => c.tp += 1,
                (Label::Cognate, Label::NonCognate) => c.fp += 1,
                (Label::NonCognate, Label::Cognate) => c.fn_ += 1,
                (Label::NonCognate, Label::NonCognate) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and F1 of the cognate class; zero denominators give 0.
pub fn f_score(c: &ConfusionCounts) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f }
}

/// Bijection from the two cluster ids to labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMapping {
    /// Label of cluster 0 and cluster 1.
    pub labels: [Label; 2],
}

impl ClusterMapping {
    pub const IDENTITY: Self = Self {
        labels: [Label::NonCognate, Label::Cognate],
    };
    pub const SWAP: Self = Self {
        labels: [Label::Cognate, Label::NonCognate],
    };

    pub fn apply(&self, cluster: usize) -> Label {
        self.labels[cluster.min(1)]
    }

    pub fn apply_all(&self, clusters: &[usize]) -> Vec<Label> {
        clusters.iter().map(|&c| self.apply(c)).collect()
    }
}

/// Picks the bijection with the higher accuracy on `labels`; a tie keeps
/// the identity mapping. With one cluster empty this maps the other
/// cluster to its majority label.
pub fn map_clusters(clusters: &[usize], labels: &[Label]) -> Result<ClusterMapping> {
    if clusters.len() != labels.len() {
        return Err(Error::dim(
            "map_clusters",
            format!("{} cluster ids for {} labels", clusters.len(), labels.len()),
        ));
    }
    if let Some(bad) = clusters.iter().find(|&&c| c > 1) {
        return Err(Error::Input(format!("cluster id {bad} outside {{0, 1}}")));
    }
    if clusters.iter().all(|&c| c == 0) || clusters.iter().all(|&c| c == 1) {
        warn!("one cluster is empty on the mapping split");
    }
    let hits = |m: &ClusterMapping| clusters.iter().zip(labels).filter(|(c, l)| m.apply(**c) == **l).count();
    Ok(if hits(&ClusterMapping::SWAP) > hits(&ClusterMapping::IDENTITY) {
        ClusterMapping::SWAP
    } else {
        ClusterMapping::IDENTITY
    })
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − levenshtein / max length`, in `[0, 1]`; two empty strings score 1.
pub fn orthographic_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Cognate iff similarity reaches `threshold`.
pub fn orthographic_baseline(pairs: &[WordPair], threshold: f64) -> Result<Vec<Label>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(pairs
        .iter()
        .map(|p| {
            if orthographic_similarity(&p.word1, &p.word2) >= threshold {
                Label::Cognate
            } else {
                Label::NonCognate
            }
        })
        .collect())
}

/// Threshold maximising F on the given pairs. Candidates are the observed
/// similarities; ties go to the smallest threshold.
pub fn fit_threshold(pairs: &[WordPair], labels: &[Label]) -> Result<f64> {
    if pairs.len() != labels.len() {
        return Err(Error::dim(
            "fit_threshold",
            format!("{} pairs for {} labels", pairs.len(), labels.len()),
        ));
    }
    let mut scored: Vec<(f64, Label)> = pairs
        .iter()
        .zip(labels)
        .map(|(p, l)| (orthographic_similarity(&p.word1, &p.word2), *l))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = labels.iter().filter(|l| **l == Label::Cognate).count();
    // Sweep thresholds upward: at scored[i].0 every pair from i on is predicted cognate.
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut below_pos = 0;
    let mut below_neg = 0;
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        let counts = ConfusionCounts {
            tp: positives - below_pos,
            fp: (scored.len() - positives) - below_neg,
            fn_: below_pos,
            tn: below_neg,
        };
        let f = f_score(&counts).f;
        if f > best.0 {
            best = (f, t);
        }
        while i < scored.len() && scored[i].0 == t {
            match scored[i].1 {
                Label::Cognate => below_pos += 1,
                Label::NonCognate => below_neg += 1,
            }
            i += 1;
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub significant: bool,
}

/// Level below which a difference counts as significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample Welch t-test.
pub fn significance(a: &[f64], b: &[f64]) -> Result<Significance> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Precondition(
            "Welch test needs at least two samples per side".into(),
        ));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        let differ = ma != mb;
        warn!("Welch test with zero variance on both sides");
        return Ok(Significance {
            t: if differ {
                (ma - mb).signum() * f64::INFINITY
            } else {
                0.0
            },
            df: na + nb - 2.0,
            p: if differ { 0.0 } else { 1.0 },
            significant: differ,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Precondition(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(Significance {
        t,
        df,
        p,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl FoldScore {
    pub fn new(fold: usize, counts: ConfusionCounts) -> Self {
        let Prf { precision, recall, f } = f_score(&counts);
        Self {
            fold,
            counts,
            precision,
            recall,
            f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub folds: Vec<FoldScore>,
    pub mean_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalReport {
    pub fn new(mode: impl Into<String>, seed: u64, config_hash: impl Into<String>, folds: Vec<FoldScore>) -> Self {
        let mean_f = if folds.is_empty() {
            0.0
        } else {
            folds.iter().map(|f| f.f).sum::<f64>() / folds.len() as f64
        };
        Self {
            mode: mode.into(),
            seed,
            config_hash: config_hash.into(),
            folds,
            mean_f,
            note: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// F-scores laid out with methods as rows and language pairs as columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ResultsTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, method: impl Into<String>, scores: Vec<Option<f64>>) {
        self.rows.push((method.into(), scores));
    }
}

impl fmt::Display for ResultsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|(m, _)| m.chars().count())
            .chain([7])
            .max()
            .unwrap_or(7);
        write!(f, "{:<width$}", "Method")?;
        for c in &self.columns {
            write!(f, " | {c:>8}")?;
        }
        writeln!(f)?;
        writeln!(f, "{}", "-".repeat(width + self.columns.len() * 11))?;
        for (method, scores) in &self.rows {
            write!(f, "{method:<width$}")?;
            for s in scores {
                match s {
                    Some(v) => write!(f, " | {v:>8.3}")?,
                    None => write!(f, " | {:>8}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
