use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wscd_core::data::{
    build_negatives, gen_synthetic, load_cognates, load_unimorph, manifest_path, morph_resample, read_cognates,
    stratify, CognateDataset, Manifest, NegRatio, Source, SyntheticSpec,
};
use wscd_core::detector::{CandidatePair, Label, WordPair};
use wscd_core::encoder::CharVocab;
use wscd_core::eval::{significance, EvalReport, FoldScore, ResultsTable};
use wscd_core::morphology::{MorphPair, COLLAPSE_WARNING};
use wscd_core::numerics::{Checkpoint, Rng};
use wscd_core::pipeline::{
    cluster_pairs, learn_morphology, protocol_scores, run_folds, score_clusters, Knowledge, Mode, Protocol,
};

use crate::logging::event;
use crate::settings::Settings;
use crate::CliError;

/// `<path><suffix>`, e.g. `model.wscd` → `model.wscd.vocab`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| wscd_core::Error::Data(format!("cannot write {}: {e}", path.display())).into())
}

fn out_dir(s: &Settings) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(s.require("out")?);
    fs::create_dir_all(&dir).map_err(|e| wscd_core::Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_snapshot(s: &Settings, path: &Path) -> Result<(), CliError> {
    write(path, s.snapshot())?;
    event("config", json!({"path": path, "hash": s.hash()}));
    Ok(())
}

fn parse_ratio(s: &Settings) -> Result<Option<NegRatio>, CliError> {
    s.opt("neg_ratio")
        .map(|r| r.parse::<NegRatio>().map_err(|e| CliError::Config(e.to_string())))
        .transpose()
}

pub fn build_dataset(s: &Settings) -> Result<(), CliError> {
    let out = PathBuf::from(s.require("out")?);
    let seed = s.seed()?;
    let mut rng = Rng::new(seed);
    let dataset = match (s.opt("synthetic"), s.opt("cognates")) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either --synthetic or --cognates, not both".into(),
            ))
        }
        (None, None) => return Err(CliError::Config("build-dataset needs --synthetic or --cognates".into())),
        (Some(spec), None) => {
            let mut spec: SyntheticSpec = if spec == "default" {
                SyntheticSpec::default()
            } else {
                let text =
                    fs::read_to_string(spec).map_err(|e| CliError::Config(format!("cannot read spec {spec}: {e}")))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad synthetic spec: {e}")))?
            };
            if let Some(r) = parse_ratio(s)? {
                spec.cognate_ratio = r.cognates as f64 / (r.cognates + r.non_cognates) as f64;
            }
            let corpus = gen_synthetic(&spec, &mut rng)?;
            let morph_path = out.with_extension("morph.tsv");
            let lines: String = corpus
                .morphology
                .iter()
                .map(|p| format!("{}\t{}\tSYN\n", p.word1, p.word2))
                .collect();
            write(&morph_path, lines)?;
            event(
                "morphology_written",
                json!({"path": morph_path, "pairs": corpus.morphology.len()}),
            );
            corpus.dataset
        }
        (None, Some(path)) => {
            let file = fs::File::open(path).map_err(|e| wscd_core::Error::Data(format!("cannot open {path}: {e}")))?;
            let lp = language_pair(&out);
            let (raw, stats) = read_cognates(file, lp.clone(), Source::Real)?;
            event("cognates_read", json!({"path": path, "stats": stats}));
            let (positives, dropped): (Vec<CandidatePair>, Vec<CandidatePair>) =
                raw.pairs.into_iter().partition(|c| c.label != Some(Label::NonCognate));
            if !dropped.is_empty() {
                warn!(
                    "ignoring {} rows labeled non-cognate; negatives are generated",
                    dropped.len()
                );
            }
            if positives.is_empty() {
                return Err(wscd_core::Error::Data(format!("{path} contains no cognate pairs")).into());
            }
            let ratio = parse_ratio(s)?.unwrap_or_else(|| NegRatio::for_language_pair(&lp.0, &lp.1));
            let cognates: Vec<WordPair> = positives.into_iter().map(|c| c.pair).collect();
            let negatives = build_negatives(&cognates, ratio, &mut rng)?;
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
            CognateDataset::new(pairs, lp, Source::Real)?
        }
    };
    dataset.save_tsv(&out)?;
    let manifest = Manifest::of(&dataset);
    manifest.save(manifest_path(&out))?;
    write_snapshot(s, &sibling(&out, ".config.txt"))?;
    event(
        "dataset_written",
        json!({"path": out, "cognates": manifest.cognates, "non_cognates": manifest.non_cognates}),
    );
    println!(
        "wrote {} ({} cognates, {} non-cognates)",
        out.display(),
        manifest.cognates,
        manifest.non_cognates
    );
    Ok(())
}

/// Language pair from a file name such as `hi-mr.tsv`.
fn language_pair(path: &Path) -> (String, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    match stem.split_once(['-', '_']) {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => (a.to_lowercase(), b.to_lowercase()),
        _ => ("a".into(), "b".into()),
    }
}

fn load_morphology(s: &Settings) -> Result<Vec<MorphPair>, CliError> {
    let path = s.require("unimorph")?;
    let lang = s.opt("lang").map(str::to_string).unwrap_or_else(|| {
        Path::new(path)
            .file_stem()
            .and_then(|x| x.to_str())
            .unwrap_or("xx")
            .to_string()
    });
    let (pairs, stats) = load_unimorph(path, &lang)?;
    event("morphology_read", json!({"path": path, "stats": stats}));
    if pairs.is_empty() {
        return Err(wscd_core::Error::Data(format!("{path} contains no usable morphology pairs")).into());
    }
    Ok(pairs)
}

fn resample(pairs: &[MorphPair], percent: i32, seed: u64) -> Result<Vec<MorphPair>, CliError> {
    // Own stream so the draw does not depend on anything else in the run.
    Ok(morph_resample(pairs, percent, &mut Rng::new(seed).fork(1))?)
}

fn train_knowledge(s: &Settings, pairs: &[MorphPair]) -> Result<Knowledge, CliError> {
    let (knowledge, report) = learn_morphology(pairs, &s.encoder()?, &s.morph()?)?;
    for e in &report.epochs {
        event("morph_epoch", json!(e));
    }
    let last = report.epochs.last().map(|e| e.collapse).unwrap_or(0.0);
    if last > COLLAPSE_WARNING {
        warn!("morphology encodings look collapsed (mean cosine {last:.3})");
    }
    event(
        "morph_done",
        json!({"best_epoch": report.best_epoch, "stopped_early": report.stopped_early}),
    );
    Ok(knowledge)
}

pub fn train_morph(s: &Settings) -> Result<(), CliError> {
    let out = PathBuf::from(s.require("out")?);
    let pairs = load_morphology(s)?;
    let pairs = resample(&pairs, s.parse("resample")?, s.seed()?)?;
    let knowledge = train_knowledge(s, &pairs)?;
    knowledge.checkpoint.save(&out)?;
    knowledge.vocab.save(sibling(&out, ".vocab"))?;
    write_snapshot(s, &sibling(&out, ".config.txt"))?;
    println!("wrote {} from {} morphology pairs", out.display(), pairs.len());
    Ok(())
}

fn load_knowledge(s: &Settings) -> Result<Option<Knowledge>, CliError> {
    s.opt("init")
        .map(|path| {
            let path = Path::new(path);
            Ok(Knowledge {
                checkpoint: Checkpoint::load(path)?,
                vocab: CharVocab::load(sibling(path, ".vocab"))?,
            })
        })
        .transpose()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoresFile {
    pub mode: String,
    pub protocol: String,
    pub config_hash: String,
    pub scores: Vec<f64>,
}

fn parse_mode(s: &Settings) -> Result<Mode, CliError> {
    s.get("mode")
        .parse()
        .map_err(|e: wscd_core::Error| CliError::Config(e.to_string()))
}

fn check_init(mode: Mode, knowledge: &Option<Knowledge>) -> Result<(), CliError> {
    match (mode, knowledge.is_some()) {
        (Mode::Weakly, false) => Err(CliError::Config(
            "weakly supervised mode needs morphological knowledge: pass --init <checkpoint>".into(),
        )),
        (Mode::Unsupervised | Mode::Baseline, true) => Err(CliError::Config(format!("mode {mode} takes no --init"))),
        _ => Ok(()),
    }
}

/// Scores for one mode on `plan`; label-free modes also return cluster ids.
fn evaluate(
    ds: &CognateDataset,
    mode: Mode,
    knowledge: Option<&Knowledge>,
    s: &Settings,
    plan: &wscd_core::data::FoldPlan,
) -> Result<(Vec<FoldScore>, Option<Vec<usize>>), CliError> {
    let config = s.experiment()?;
    let seed = s.seed()?;
    if mode.is_label_free() {
        let clustering = cluster_pairs(&ds.word_pairs(), knowledge, &config, seed)?;
        for (i, l) in clustering.pretrain_losses.iter().enumerate() {
            event("pretrain_epoch", json!({"epoch": i, "loss": l}));
        }
        for r in &clustering.self_train.refreshes {
            event("self_train_refresh", json!(r));
        }
        let all: Vec<usize> = (0..plan.k).collect();
        let scores = score_clusters(&clustering.assignments, &ds.labels()?, plan, &all)?;
        Ok((scores, Some(clustering.assignments)))
    } else {
        Ok((run_folds(ds, mode, knowledge, &config, plan, &[], seed)?, None))
    }
}

pub fn train_detector(s: &Settings) -> Result<(), CliError> {
    let mode = parse_mode(s)?;
    let knowledge = load_knowledge(s)?;
    check_init(mode, &knowledge)?;
    let data = s.require("data")?;
    let (ds, stats) = load_cognates(data)?;
    event("cognates_read", json!({"path": data, "stats": stats}));
    let dir = out_dir(s)?;
    write_snapshot(s, &dir.join("config.txt"))?;
    let seed = s.seed()?;
    let lp = format!("{}-{}", ds.language_pair.0, ds.language_pair.1);

    if let Some(protocol) = s.opt("protocol") {
        let protocol: Protocol = protocol
            .parse()
            .map_err(|e: wscd_core::Error| CliError::Config(e.to_string()))?;
        let scores = protocol_scores(&ds, mode, knowledge.as_ref(), &s.experiment()?, protocol, seed)?;
        let file = ScoresFile {
            mode: mode.to_string(),
            protocol: s.get("protocol").to_string(),
            config_hash: s.hash(),
            scores,
        };
        write(
            &dir.join("scores.json"),
            serde_json::to_string_pretty(&file).map_err(wscd_core::Error::from)?,
        )?;
        let mean = file.scores.iter().sum::<f64>() / file.scores.len() as f64;
        println!("{mode} on {lp}: mean F {mean:.4} over {} runs", file.scores.len());
        if let Some(other) = s.opt("compare") {
            let text =
                fs::read_to_string(other).map_err(|e| wscd_core::Error::Data(format!("cannot read {other}: {e}")))?;
            let other: ScoresFile =
                serde_json::from_str(&text).map_err(|e| wscd_core::Error::Data(format!("bad scores file: {e}")))?;
            let sig = significance(&file.scores, &other.scores)?;
            write(
                &dir.join("significance.json"),
                serde_json::to_string_pretty(&sig).map_err(wscd_core::Error::from)?,
            )?;
            println!(
                "vs {}: t {:.3}, df {:.2}, p {:.4} ({})",
                other.mode,
                sig.t,
                sig.df,
                sig.p,
                if sig.significant {
                    "significant at 0.01"
                } else {
                    "not significant at 0.01"
                }
            );
        }
        return Ok(());
    }

    let plan = stratify(&ds.labels()?, s.parse("folds")?, seed)?;
    let (folds, assignments) = evaluate(&ds, mode, knowledge.as_ref(), s, &plan)?;
    for f in &folds {
        event("fold", json!(f));
    }
    if let Some(ids) = assignments {
        let text: String = ds
            .pairs
            .iter()
            .zip(&ids)
            .map(|(c, id)| format!("{}\t{}\t{id}\n", c.pair.word1, c.pair.word2))
            .collect();
        write(&dir.join("assignments.tsv"), text)?;
    }
    let report = EvalReport::new(mode.to_string(), seed, s.hash(), folds);
    write(&dir.join("report.json"), report.to_json()?)?;
    let mut table = ResultsTable::new(vec![lp]);
    table.push(mode.to_string(), vec![Some(report.mean_f)]);
    write(&dir.join("results.txt"), table.to_string())?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    percent: i32,
    morph_pairs: usize,
    mean_f: f64,
    folds: Vec<FoldScore>,
}

pub fn ablate(s: &Settings) -> Result<(), CliError> {
    let mode = parse_mode(s)?;
    if !matches!(mode, Mode::Weakly | Mode::Supervised) {
        return Err(CliError::Config(
            "ablation varies morphology data; use mode weakly or supervised".into(),
        ));
    }
    let grid = s.grid()?;
    let morph = load_morphology(s)?;
    let data = s.require("data")?;
    let (ds, _) = load_cognates(data)?;
    let dir = out_dir(s)?;
    write_snapshot(s, &dir.join("config.txt"))?;
    let seed = s.seed()?;
    let plan = stratify(&ds.labels()?, s.parse("folds")?, seed)?;
    let lp = format!("{}-{}", ds.language_pair.0, ds.language_pair.1);
    let mut table = ResultsTable::new(vec![lp]);
    let mut rows = Vec::with_capacity(grid.len());
    for &pct in &grid {
        let pairs = resample(&morph, pct, seed)?;
        let knowledge = train_knowledge(s, &pairs)?;
        let (folds, _) = evaluate(&ds, mode, Some(&knowledge), s, &plan)?;
        let report = EvalReport::new(mode.to_string(), seed, s.hash(), folds);
        event(
            "ablation_point",
            json!({"percent": pct, "morph_pairs": pairs.len(), "mean_f": report.mean_f}),
        );
        table.push(format!("{pct:+}% ({} pairs)", pairs.len()), vec![Some(report.mean_f)]);
        rows.push(AblationRow {
            percent: pct,
            morph_pairs: pairs.len(),
            mean_f: report.mean_f,
            folds: report.folds,
        });
    }
    write(
        &dir.join("ablation.json"),
        serde_json::to_string_pretty(&rows).map_err(wscd_core::Error::from)?,
    )?;
    write(&dir.join("results.txt"), table.to_string())?;
    print!("{table}");
    Ok(())
}

/// Resolved settings with a comment per key, ready to save as a config file.
pub fn show_config(s: &Settings) {
    println!("# resolved configuration, hash {}", s.hash());
    for k in crate::settings::KEYS {
        println!("# {}\n{} = {}", k.help, k.name, s.get(k.name));
    }
}
