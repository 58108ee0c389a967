//! Cross-validated experiments for every training regime.
//!
//! Label-free regimes (weakly supervised and unsupervised) cluster all
//! pairs once with labels stripped; each fold then maps cluster ids to
//! labels on its training part and is scored on its test part.
//! Supervised and baseline regimes are fitted per fold.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{stratify, CognateDataset, FoldPlan};
use crate::detector::{
    init_centroids, predict, pretrain_unsupervised, self_train, train_supervised, Detector, DetectorConfig,
    KMeansConfig, Label, PredictMode, PretrainConfig, SelfTrainConfig, SelfTrainReport, SupervisedConfig, WordPair,
    CLASSES,
};
use crate::encoder::{CharVocab, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{fit_threshold, map_clusters, orthographic_baseline, ConfusionCounts, FoldScore};
use crate::morphology::{train_morphology, MorphPair, MorphReport, MorphTrainConfig, MorphologyModel};
use crate::numerics::{Checkpoint, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Supervised,
    Weakly,
    Unsupervised,
    Baseline,
}

impl Mode {
    pub fn is_label_free(self) -> bool {
        matches!(self, Self::Weakly | Self::Unsupervised)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Supervised => "supervised",
            Self::Weakly => "weakly",
            Self::Unsupervised => "unsupervised",
            Self::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "weakly" => Ok(Self::Weakly),
            "unsupervised" => Ok(Self::Unsupervised),
            "baseline" => Ok(Self::Baseline),
            other => Err(Error::Input(format!("unknown mode {other:?}"))),
        }
    }
}

/// Encoder weights learned from morphology, with their vocabulary.
#[derive(Debug, Clone)]
pub struct Knowledge {
    pub checkpoint: Checkpoint,
    pub vocab: CharVocab,
}

/// Trains the morphology learner and keeps only its encoder.
pub fn learn_morphology(
    pairs: &[MorphPair],
    encoder: &EncoderConfig,
    config: &MorphTrainConfig,
) -> Result<(Knowledge, MorphReport)> {
    let mut rng = Rng::new(config.seed);
    let mut model = MorphologyModel::<f32>::new(encoder.clone(), pairs, config.proj_dim, &mut rng)?;
    let report = train_morphology(&mut model, pairs, config)?;
    let (checkpoint, vocab) = model.export_encoder(false);
    Ok((Knowledge { checkpoint, vocab }, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub detector: DetectorConfig,
    pub pretrain: PretrainConfig,
    pub kmeans: KMeansConfig,
    pub self_train: SelfTrainConfig,
    pub supervised: SupervisedConfig,
    pub folds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            pretrain: PretrainConfig::default(),
            kmeans: KMeansConfig::default(),
            self_train: SelfTrainConfig::default(),
            supervised: SupervisedConfig::default(),
            folds: 5,
        }
    }
}

fn new_detector(
    config: &DetectorConfig,
    knowledge: Option<&Knowledge>,
    words: &[WordPair],
    rng: &mut Rng,
) -> Result<Detector<f32>> {
    let all = words.iter().flat_map(|p| [p.word1.as_str(), p.word2.as_str()]);
    match knowledge {
        Some(k) => Detector::with_pretrained(&k.checkpoint, k.vocab.clone(), config, all, rng),
        None => Detector::new(config, all, rng),
    }
}

/// Output of the label-free pipeline over a whole pair list.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub pretrain_losses: Vec<f64>,
    pub self_train: SelfTrainReport,
    pub detector: Detector<f32>,
}

/// Clustering-loss pretraining, k-means initialisation and self-training
/// on unlabeled pairs.
pub fn cluster_pairs(
    pairs: &[WordPair],
    knowledge: Option<&Knowledge>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Clustering> {
    let mut rng = Rng::new(seed);
    let mut det = new_detector(&config.detector, knowledge, pairs, &mut rng)?;
    let pretrain = PretrainConfig {
        seed: rng.next_u64(),
        ..config.pretrain.clone()
    };
    let report = pretrain_unsupervised(&mut det, pairs, &pretrain)?;
    let centroids = init_centroids(&report.z, CLASSES, &config.kmeans, &mut rng)?;
    det.set_centroids(centroids)?;
    let st = SelfTrainConfig {
        seed: rng.next_u64(),
        ..config.self_train.clone()
    };
    let st_report = self_train(&det.net, &mut det.store, pairs, &st)?;
    Ok(Clustering {
        assignments: st_report.assignments.clone(),
        pretrain_losses: report.epochs.iter().map(|e| e.loss).collect(),
        self_train: st_report,
        detector: det,
    })
}

fn score(fold: usize, predicted: &[Label], gold: &[Label]) -> Result<FoldScore> {
    Ok(FoldScore::new(
        fold,
        ConfusionCounts::from_predictions(predicted, gold)?,
    ))
}

/// Scores label-free cluster assignments fold by fold.
pub fn score_clusters(
    assignments: &[usize],
    labels: &[Label],
    plan: &FoldPlan,
    folds: &[usize],
) -> Result<Vec<FoldScore>> {
    folds
        .iter()
        .map(|&i| {
            let (train, test) = plan.split(i);
            let pick = |idx: &[usize]| -> (Vec<usize>, Vec<Label>) {
                idx.iter().map(|&j| (assignments[j], labels[j])).unzip()
            };
            let (train_ids, train_labels) = pick(&train);
            let (test_ids, test_labels) = pick(&test);
            let mapping = map_clusters(&train_ids, &train_labels)?;
            score(i, &mapping.apply_all(&test_ids), &test_labels)
        })
        .collect()
}

/// Runs `mode` on the folds listed in `folds` (all folds when empty).
pub fn run_folds(
    dataset: &CognateDataset,
    mode: Mode,
    knowledge: Option<&Knowledge>,
    config: &ExperimentConfig,
    plan: &FoldPlan,
    folds: &[usize],
    seed: u64,
) -> Result<Vec<FoldScore>> {
    let labels = dataset.labels()?;
    let all_folds: Vec<usize> = (0..plan.k).collect();
    let folds = if folds.is_empty() { &all_folds[..] } else { folds };
    if mode == Mode::Weakly && knowledge.is_none() {
        return Err(Error::Input(
            "weakly supervised mode needs a morphology checkpoint".into(),
        ));
    }
    match mode {
        Mode::Weakly | Mode::Unsupervised => {
            let pairs = dataset.word_pairs();
            let clustering = cluster_pairs(&pairs, knowledge, config, seed)?;
            score_clusters(&clustering.assignments, &labels, plan, folds)
        }
        Mode::Supervised => folds
            .iter()
            .map(|&i| {
                let (train, test) = plan.split(i);
                let mut rng = Rng::new(seed).fork(i as u64);
                let train_pairs = dataset.select(&train);
                let mut det = new_detector(&config.detector, knowledge, &dataset.word_pairs(), &mut rng)?;
                let sup = SupervisedConfig {
                    seed: rng.next_u64(),
                    ..config.supervised.clone()
                };
                train_supervised(&mut det, &train_pairs, &sup)?;
                let test_pairs: Vec<WordPair> = test.iter().map(|&j| dataset.pairs[j].pair.clone()).collect();
                let pred = predict(&det, &test_pairs, PredictMode::Classes)?;
                let predicted: Vec<Label> = pred
                    .ids
                    .iter()
                    .map(|&c| Label::from_index(c).expect("two classes"))
                    .collect();
                let gold: Vec<Label> = test.iter().map(|&j| labels[j]).collect();
                info!("fold {i}: supervised training done");
                score(i, &predicted, &gold)
            })
            .collect(),
        Mode::Baseline => folds
            .iter()
            .map(|&i| {
                let (train, test) = plan.split(i);
                let words =
                    |idx: &[usize]| -> Vec<WordPair> { idx.iter().map(|&j| dataset.pairs[j].pair.clone()).collect() };
                let gold = |idx: &[usize]| -> Vec<Label> { idx.iter().map(|&j| labels[j]).collect() };
                let threshold = fit_threshold(&words(&train), &gold(&train))?;
                score(i, &orthographic_baseline(&words(&test), threshold)?, &gold(&test))
            })
            .collect(),
    }
}

/// Full k-fold cross-validation with a stratified plan drawn from `seed`.
pub fn cross_validate(
    dataset: &CognateDataset,
    mode: Mode,
    knowledge: Option<&Knowledge>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(FoldPlan, Vec<FoldScore>)> {
    let plan = stratify(&dataset.labels()?, config.folds, seed)?;
    let scores = run_folds(dataset, mode, knowledge, config, &plan, &[], seed)?;
    Ok((plan, scores))
}

/// How ten scores per method are collected for significance testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Two rounds of k-fold CV with different fold seeds.
    RepeatedCv,
    /// One fixed test fold, ten training seeds.
    FixedFold,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeated-cv" | "2x5" => Ok(Self::RepeatedCv),
            "fixed-fold" => Ok(Self::FixedFold),
            other => Err(Error::Input(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Ten F-scores for `mode` under `protocol`.
pub fn protocol_scores(
    dataset: &CognateDataset,
    mode: Mode,
    knowledge: Option<&Knowledge>,
    config: &ExperimentConfig,
    protocol: Protocol,
    seed: u64,
) -> Result<Vec<f64>> {
    let labels = dataset.labels()?;
    let mut out = Vec::with_capacity(10);
    match protocol {
        Protocol::RepeatedCv => {
            for round in 0..2u64 {
                let plan = stratify(&labels, config.folds, seed.wrapping_add(round))?;
                let scores = run_folds(dataset, mode, knowledge, config, &plan, &[], seed.wrapping_add(round))?;
                out.extend(scores.iter().map(|s| s.f));
            }
        }
        Protocol::FixedFold => {
            let plan = stratify(&labels, config.folds, seed)?;
            for run in 0..10u64 {
                let scores = run_folds(dataset, mode, knowledge, config, &plan, &[0], seed.wrapping_add(run))?;
                out.push(scores[0].f);
            }
        }
    }
    Ok(out)
}
