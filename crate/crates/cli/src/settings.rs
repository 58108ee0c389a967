//! Run configuration: a flat table of `key = value` settings.
//!
//! Values are layered: built-in defaults, then the language-family preset,
//! then the config file, then `--set key=value`, then dedicated flags.
//! The resolved table is written next to every output so a run can be
//! replayed with `--config <snapshot>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha1::{Digest, Sha1};
use wscd_core::detector::{DetectorConfig, KMeansConfig, PretrainConfig, SelfTrainConfig, SupervisedConfig};
use wscd_core::encoder::EncoderConfig;
use wscd_core::morphology::{MorphObjective, MorphTrainConfig};
use wscd_core::numerics::Sgd;
use wscd_core::pipeline::ExperimentConfig;
use wscd_core::presets::LanguageFamily;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const KEYS: &[Key] = &[
    key("seed", "0", "seed for every random stream of the run"),
    key("family", "", "language family preset: indian, celtic or south-african"),
    key("mode", "weakly", "supervised, weakly, unsupervised or baseline"),
    key("data", "", "labeled cognate TSV"),
    key("init", "", "morphology checkpoint for the shared encoder"),
    key("unimorph", "", "UniMorph-style lemma/form TSV"),
    key("lang", "", "language code of the morphology data"),
    key("out", "", "output file or directory"),
    key("folds", "5", "number of cross-validation folds"),
    key(
        "protocol",
        "",
        "empty for plain k-fold, or repeated-cv / fixed-fold for ten scores",
    ),
    key("compare", "", "scores.json of another run to test against"),
    key("cognates", "", "cognate list to build a dataset from"),
    key("synthetic", "", "'default' or a JSON synthetic spec"),
    key(
        "neg_ratio",
        "",
        "cognates:non-cognates, e.g. 60:40; empty picks per language pair",
    ),
    key("resample", "0", "morphology resampling in percent, e.g. -30 or 30"),
    key("grid", "-30..30:15", "ablation grid start..end:step in percent"),
    key("encoder.char_dim", "64", "character embedding size"),
    key("encoder.filters", "64", "filters per n-gram order"),
    key("encoder.orders", "2,3,4,5,6", "n-gram orders"),
    key("encoder.max_len", "40", "maximum word length"),
    key("encoder.positional", "true", "add positional tables to feature maps"),
    key("detector.proj_dim", "128", "size of the projected word vectors"),
    key("detector.sense_dim", "128", "size of the pair representation"),
    key("detector.cosine_gain", "3", "initial weight bound of the cosine input"),
    key("sgd.decay", "0.95", "per-epoch learning-rate decay"),
    key("pretrain.lr", "0.01", "clustering-loss pretraining learning rate"),
    key("pretrain.epochs", "10", "clustering-loss pretraining epochs"),
    key("pretrain.batch", "64", "clustering-loss pretraining batch size"),
    key("kmeans.batch", "256", "minibatch k-means batch size"),
    key("kmeans.epochs", "20", "minibatch k-means passes"),
    key("selftrain.lr", "0.01", "self-training learning rate"),
    key("selftrain.max_epochs", "50", "self-training epoch limit"),
    key("selftrain.update_interval", "1", "epochs between target refreshes"),
    key(
        "selftrain.tol",
        "0.001",
        "stop when at most this fraction of assignments changes",
    ),
    key("selftrain.batch", "64", "self-training batch size"),
    key("supervised.lr", "0.01", "supervised learning rate"),
    key("supervised.epochs", "20", "supervised epochs"),
    key("supervised.batch", "32", "supervised batch size"),
    key("morph.lr", "0.1", "morphology learning rate"),
    key("morph.epochs", "20", "morphology epochs"),
    key("morph.batch", "32", "morphology batch size"),
    key("morph.proj_dim", "128", "morphology projection size"),
    key("morph.objective", "standardized", "standardized or plain"),
    key(
        "morph.patience",
        "5",
        "epochs without held-out improvement before stopping",
    ),
    key("morph.weight_decay", "0.00001", "morphology weight decay"),
    key("morph.holdout", "0.1", "held-out fraction for early stopping"),
];

fn known(name: &str) -> bool {
    KEYS.iter().any(|k| k.name == name)
}

/// SHA-1 of `blob <len>\0<text>`, as `git hash-object` computes it.
pub fn blob_hash(text: &str) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key = value` lines. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let k = k.trim();
        if !known(k) {
            return Err(config_err(format!("line {}: unknown setting {k:?}", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_assignment(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got {s:?}")))?;
    let k = k.trim();
    if !known(k) {
        return Err(config_err(format!("unknown setting {k:?}")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Layers defaults, family preset, `file`, `sets` and `flags`
    /// (later wins). Flags with `None` leave the value alone.
    pub fn resolve(file: Option<&Path>, sets: &[String], flags: &[(&str, Option<String>)]) -> Result<Self, CliError> {
        let mut user = BTreeMap::new();
        if let Some(path) = file {
            let text =
                fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            user.extend(parse_config(&text)?);
        }
        for s in sets {
            let (k, v) = parse_assignment(s)?;
            user.insert(k, v);
        }
        for (k, v) in flags {
            debug_assert!(known(k), "flag maps to unknown key {k}");
            if let Some(v) = v {
                user.insert(k.to_string(), v.clone());
            }
        }
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        if let Some(f) = user.get("family").filter(|f| !f.is_empty()) {
            let family: LanguageFamily = f.parse().map_err(|e: wscd_core::Error| config_err(e.to_string()))?;
            values.insert("morph.lr".into(), family.morphology_lr().to_string());
            values.insert("pretrain.lr".into(), family.detector_lr().to_string());
            values.insert("selftrain.lr".into(), family.detector_lr().to_string());
        }
        values.extend(user);
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// The value, or `None` when it is empty.
    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.opt(key)
            .ok_or_else(|| config_err(format!("missing required setting {key:?}")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| config_err(format!("setting {key} = {:?}: {e}", self.get(key))))
    }

    pub fn snapshot(&self) -> String {
        let mut s = String::from("# wscd run configuration; replay with --config <this file>\n");
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Git-style blob hash of the snapshot.
    pub fn hash(&self) -> String {
        blob_hash(&self.snapshot())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    fn sgd(&self, lr_key: &str) -> Result<Sgd, CliError> {
        Ok(Sgd::new(self.parse(lr_key)?, self.parse("sgd.decay")?))
    }

    pub fn encoder(&self) -> Result<EncoderConfig, CliError> {
        let orders = self
            .get("encoder.orders")
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| config_err(format!("encoder.orders: {e}")))?;
        let config = EncoderConfig {
            char_dim: self.parse("encoder.char_dim")?,
            filters_per_n: self.parse("encoder.filters")?,
            ngram_orders: orders,
            max_word_len: self.parse("encoder.max_len")?,
            positional: self.parse("encoder.positional")?,
            ..EncoderConfig::default()
        };
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let seed = self.seed()?;
        Ok(ExperimentConfig {
            detector: DetectorConfig {
                encoder: self.encoder()?,
                proj_dim: self.parse("detector.proj_dim")?,
                sense_dim: self.parse("detector.sense_dim")?,
                cosine_gain: self.parse("detector.cosine_gain")?,
                ..DetectorConfig::default()
            },
            pretrain: PretrainConfig {
                sgd: self.sgd("pretrain.lr")?,
                epochs: self.parse("pretrain.epochs")?,
                batch_size: self.parse("pretrain.batch")?,
                seed,
            },
            kmeans: KMeansConfig {
                batch_size: self.parse("kmeans.batch")?,
                epochs: self.parse("kmeans.epochs")?,
            },
            self_train: SelfTrainConfig {
                sgd: self.sgd("selftrain.lr")?,
                max_epochs: self.parse("selftrain.max_epochs")?,
                update_interval: self.parse("selftrain.update_interval")?,
                tol: self.parse("selftrain.tol")?,
                batch_size: self.parse("selftrain.batch")?,
                seed,
            },
            supervised: SupervisedConfig {
                sgd: self.sgd("supervised.lr")?,
                epochs: self.parse("supervised.epochs")?,
                batch_size: self.parse("supervised.batch")?,
                seed,
            },
            folds: self.parse("folds")?,
        })
    }

    pub fn morph(&self) -> Result<MorphTrainConfig, CliError> {
        let objective = match self.get("morph.objective") {
            "standardized" => MorphObjective::Standardized,
            "plain" => MorphObjective::Plain,
            other => {
                return Err(config_err(format!(
                    "morph.objective must be standardized or plain, got {other:?}"
                )))
            }
        };
        let config = MorphTrainConfig {
            objective,
            sgd: self
                .sgd("morph.lr")?
                .with_weight_decay(self.parse("morph.weight_decay")?),
            epochs: self.parse("morph.epochs")?,
            batch_size: self.parse("morph.batch")?,
            proj_dim: self.parse("morph.proj_dim")?,
            holdout_fraction: self.parse("morph.holdout")?,
            patience: self.parse("morph.patience")?,
            seed: self.seed()?,
            ..MorphTrainConfig::default()
        };
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }

    /// Grid `start..end:step`, inclusive of both ends.
    pub fn grid(&self) -> Result<Vec<i32>, CliError> {
        let raw = self.get("grid");
        let bad = || config_err(format!("grid must look like -30..30:15, got {raw:?}"));
        let (range, step) = raw.split_once(':').ok_or_else(bad)?;
        let (start, end) = range.split_once("..").ok_or_else(bad)?;
        let (start, end, step): (i32, i32, i32) = (
            start.trim().parse().map_err(|_| bad())?,
            end.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if step <= 0 || end < start {
            return Err(bad());
        }
        Ok((start..=end).step_by(step as usize).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_unknown_keys() {
        let m = parse_config("# header\nseed = 3  # trailing\n\nfolds=4\n").unwrap();
        assert_eq!(m["seed"], "3");
        assert_eq!(m["folds"], "4");
        assert!(parse_config("bogus = 1").is_err());
        assert!(parse_config("seed 3").is_err());
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "seed = 1\nfolds = 3\nmorph.lr = 0.5\n").unwrap();
        let s = Settings::resolve(
            Some(&path),
            &["folds=4".into()],
            &[("seed", Some("9".into())), ("mode", None)],
        )
        .unwrap();
        assert_eq!(s.get("seed"), "9");
        assert_eq!(s.get("folds"), "4");
        assert_eq!(s.get("morph.lr"), "0.5");
        assert_eq!(s.get("mode"), "weakly");
    }

    #[test]
    fn family_preset_sits_below_user_values() {
        let s = Settings::resolve(None, &["family=celtic".into()], &[]).unwrap();
        assert_eq!(s.parse::<f64>("morph.lr").unwrap(), 2e-3);
        assert_eq!(s.parse::<f64>("pretrain.lr").unwrap(), 1e-1);
        let s = Settings::resolve(None, &["family=celtic".into(), "morph.lr=0.3".into()], &[]).unwrap();
        assert_eq!(s.parse::<f64>("morph.lr").unwrap(), 0.3);
    }

    #[test]
    fn snapshot_replays_to_same_settings() {
        let s = Settings::resolve(None, &["seed=5".into(), "grid=-10..10:5".into()], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        fs::write(&path, s.snapshot()).unwrap();
        let again = Settings::resolve(Some(&path), &[], &[]).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.hash(), s.hash());
        assert_eq!(s.hash().len(), 40);
        assert_eq!(s.grid().unwrap(), vec![-10, -5, 0, 5, 10]);
    }

    #[test]
    fn git_blob_hash_of_known_text() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    }
}
