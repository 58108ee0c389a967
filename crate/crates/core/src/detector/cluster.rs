//! Centroid initialisation and clustering self-training.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{DetectorNet, WordPair};
use crate::error::{Error, Result};
use crate::numerics::ops::{argmax, kl_div, student_t};
use crate::numerics::{NodeId, ParamId, ParamStore, Real, Rng, Sgd, Tape, Tensor};

/// Floor for cluster frequencies in the target distribution.
const FREQ_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 20,
        }
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.f64() - y) * (x.f64() - y)).sum()
}

fn nearest<T: Real>(x: &[T], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by minibatch k-means with per-centre
/// learning rates `1/count`.
pub fn init_centroids<T: Real>(z: &Tensor<T>, k: usize, config: &KMeansConfig, rng: &mut Rng) -> Result<Tensor<T>> {
    if z.rank() != 2 {
        return Err(Error::dim(
            "init_centroids",
            format!("expected [N×D], got {:?}", z.shape()),
        ));
    }
    let n = z.rows();
    if k == 0 || n < k {
        return Err(Error::Precondition(format!(
            "k-means needs at least k={k} points, got {n}"
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Input("k-means batch size must be positive".into()));
    }
    let to_f64 = |row: &[T]| row.iter().map(|v| v.f64()).collect::<Vec<f64>>();

    let mut centers = vec![to_f64(z.row(rng.below(n)))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &centers[0])).collect();
    while centers.len() < k {
        let pick = rng.weighted(&d2).unwrap_or_else(|| rng.below(n));
        let c = to_f64(z.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), &c));
        }
        centers.push(c);
    }

    let mut counts = vec![0usize; k];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let assigned: Vec<usize> = batch.iter().map(|&i| nearest(z.row(i), &centers).0).collect();
            for (&i, &j) in batch.iter().zip(&assigned) {
                counts[j] += 1;
                let eta = 1.0 / counts[j] as f64;
                for (c, x) in centers[j].iter_mut().zip(z.row(i)) {
                    *c = (1.0 - eta) * *c + eta * x.f64();
                }
            }
        }
    }
    let data = centers.into_iter().flatten().map(T::of).collect();
    Tensor::new(vec![k, z.cols()], data)
}

/// Sum of squared distances from each row to its nearest centroid.
pub fn kmeans_inertia<T: Real>(z: &Tensor<T>, centroids: &Tensor<T>) -> f64 {
    let centers: Vec<Vec<f64>> = (0..centroids.rows())
        .map(|j| centroids.row(j).iter().map(|v| v.f64()).collect())
        .collect();
    (0..z.rows()).map(|i| nearest(z.row(i), &centers).1).sum()
}

/// Student's t soft assignment `q_ij ∝ (1 + ‖z_i − c_j‖²)⁻¹`.
pub fn soft_assign<T: Real>(z: &Tensor<T>, centroids: &Tensor<T>) -> Result<Tensor<T>> {
    student_t(z, centroids)
}

/// Sharpened targets `p_ij ∝ q_ij² / f_j` with cluster frequencies
/// `f_j = Σ_i q_ij`.
pub fn target_distribution<T: Real>(q: &Tensor<T>) -> Result<Tensor<T>> {
    if q.rank() != 2 {
        return Err(Error::dim(
            "target_distribution",
            format!("expected [N×k], got {:?}", q.shape()),
        ));
    }
    let (n, k) = (q.rows(), q.cols());
    if n == 1 {
        // f = q, so the target is q itself; skip the rounding of q²/q.
        return q.clone().ensure_finite("target_distribution");
    }
    let mut freq = vec![T::zero(); k];
    for i in 0..n {
        for (f, v) in freq.iter_mut().zip(q.row(i)) {
            *f = *f + *v;
        }
    }
    if freq.iter().any(|f| f.f64() <= FREQ_EPS) {
        warn!("empty cluster in target distribution; clamping its frequency");
    }
    let freq: Vec<T> = freq.into_iter().map(|f| f.max(T::of(FREQ_EPS))).collect();
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let row = out.row_mut(i);
        for j in 0..k {
            let qij = q.row(i)[j];
            row[j] = qij * qij / freq[j];
        }
        let sum = row.iter().copied().fold(T::zero(), |a, b| a + b);
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out.ensure_finite("target_distribution")
}

/// Something that maps items to cluster-space embeddings on a tape and
/// owns a trainable centroid parameter.
pub trait ClusterEmbedder<T: Real> {
    type Item;

    /// Records `[N×D]` embeddings of `items`.
    fn embed(&self, tape: &mut Tape<T>, store: &ParamStore<T>, items: &[&Self::Item]) -> Result<NodeId>;

    fn centroid_param(&self) -> ParamId;
}

impl<T: Real> ClusterEmbedder<T> for DetectorNet {
    type Item = WordPair;

    fn embed(&self, tape: &mut Tape<T>, store: &ParamStore<T>, items: &[&WordPair]) -> Result<NodeId> {
        DetectorNet::embed(self, tape, store, items)
    }

    fn centroid_param(&self) -> ParamId {
        self.centroids()
    }
}

/// Identity embedder: items are already points. Only the centroids train.
#[derive(Debug, Clone)]
pub struct PointEmbedder {
    centroids: ParamId,
}

impl PointEmbedder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, k: usize, dim: usize) -> Result<Self> {
        let centroids = store.add("cluster.centroids", Tensor::zeros(&[k, dim]))?;
        Ok(Self { centroids })
    }
}

impl<T: Real> ClusterEmbedder<T> for PointEmbedder {
    type Item = Vec<T>;

    fn embed(&self, tape: &mut Tape<T>, _store: &ParamStore<T>, items: &[&Vec<T>]) -> Result<NodeId> {
        let rows: Vec<Vec<T>> = items.iter().map(|r| (*r).clone()).collect();
        tape.constant(Tensor::from_rows(&rows)?)
    }

    fn centroid_param(&self) -> ParamId {
        self.centroids
    }
}

/// Forward-only embeddings of all items, in order.
pub fn embed_all<T: Real, E: ClusterEmbedder<T>>(
    embedder: &E,
    store: &ParamStore<T>,
    items: &[E::Item],
    batch_size: usize,
) -> Result<Tensor<T>> {
    let mut rows = Vec::with_capacity(items.len());
    let refs: Vec<&E::Item> = items.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let z = embedder.embed(&mut tape, store, chunk)?;
        let z = tape.value(z);
        rows.extend((0..z.rows()).map(|i| z.row(i).to_vec()));
    }
    Tensor::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub sgd: Sgd,
    pub max_epochs: usize,
    /// Epochs between target refreshes.
    pub update_interval: usize,
    /// Stop once at most this fraction of hard assignments changes
    /// between refreshes.
    pub tol: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            sgd: Sgd::new(0.01, 0.95),
            max_epochs: 50,
            update_interval: 1,
            tol: 0.001,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// One training interval between two target refreshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshLog {
    pub epoch: usize,
    /// Mean per-item KL(P‖Q) against the interval's fixed target, before
    /// and after the interval.
    pub kl_start: f64,
    pub kl_end: f64,
    /// Fraction of hard assignments that changed during the interval.
    pub changed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub assignments: Vec<usize>,
    pub refreshes: Vec<RefreshLog>,
    pub converged: bool,
    /// Set when the run hit the epoch limit and the lowest-KL parameters
    /// were restored.
    pub restored_best: bool,
}

impl SelfTrainReport {
    /// Fraction of refreshes over which KL did not increase.
    pub fn kl_non_increasing_fraction(&self) -> f64 {
        if self.refreshes.is_empty() {
            return 1.0;
        }
        let ok = self.refreshes.iter().filter(|r| r.kl_end <= r.kl_start).count();
        ok as f64 / self.refreshes.len() as f64
    }
}

fn hard_assignments<T: Real>(q: &Tensor<T>) -> Vec<usize> {
    (0..q.rows()).map(|i| argmax(q.row(i)).0).collect()
}

fn mean_kl<T: Real>(p: &Tensor<T>, q: &Tensor<T>) -> Result<f64> {
    Ok(kl_div(p, q)?.f64() / p.rows().max(1) as f64)
}

/// Refines embeddings and centroids by fitting soft assignments to their
/// sharpened targets. Centroids must already be initialised.
pub fn self_train<T: Real, E: ClusterEmbedder<T>>(
    embedder: &E,
    store: &mut ParamStore<T>,
    items: &[E::Item],
    config: &SelfTrainConfig,
) -> Result<SelfTrainReport> {
    if items.is_empty() {
        return Err(Error::Precondition("self-training needs at least one item".into()));
    }
    if config.batch_size == 0 || config.update_interval == 0 {
        return Err(Error::Input("batch size and update interval must be positive".into()));
    }
    run_self_train(embedder, store, items, config).map_err(|e| match e {
        Error::NonFinite(op) => Error::Divergence(format!("non-finite value in {op} during self-training")),
        other => other,
    })
}

fn run_self_train<T: Real, E: ClusterEmbedder<T>>(
    embedder: &E,
    store: &mut ParamStore<T>,
    items: &[E::Item],
    config: &SelfTrainConfig,
) -> Result<SelfTrainReport> {
    let n = items.len();
    let mut rng = Rng::new(config.seed);
    let cid = embedder.centroid_param();
    let assign_all = |store: &ParamStore<T>| -> Result<Tensor<T>> {
        let z = embed_all(embedder, store, items, config.batch_size)?;
        soft_assign(&z, store.value(cid))
    };

    let mut q = assign_all(store)?;
    let mut assignments = hard_assignments(&q);
    let mut target = target_distribution(&q)?;
    let mut refreshes = Vec::new();
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut converged = false;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0;

    while epoch < config.max_epochs {
        let kl_start = mean_kl(&target, &q)?;
        for _ in 0..config.update_interval {
            if epoch >= config.max_epochs {
                break;
            }
            rng.shuffle(&mut order);
            for batch in order.chunks(config.batch_size) {
                let refs: Vec<&E::Item> = batch.iter().map(|&i| &items[i]).collect();
                let rows: Vec<Vec<T>> = batch.iter().map(|&i| target.row(i).to_vec()).collect();
                let mut tape = Tape::new();
                let z = embedder.embed(&mut tape, store, &refs)?;
                let c = tape.param(store, cid);
                let qb = tape.student_t(z, c)?;
                let pb = tape.constant(Tensor::from_rows(&rows)?)?;
                let kl = tape.kl_div(pb, qb)?;
                let loss = tape.scale(kl, T::of(1.0 / batch.len() as f64))?;
                tape.backward(loss, store)?;
                config.sgd.step(store, epoch);
            }
            epoch += 1;
        }
        q = assign_all(store)?;
        let kl_end = mean_kl(&target, &q)?;
        let next = hard_assignments(&q);
        let changed = next.iter().zip(&assignments).filter(|(a, b)| a != b).count() as f64 / n as f64;
        refreshes.push(RefreshLog {
            epoch,
            kl_start,
            kl_end,
            changed,
        });
        if best.as_ref().is_none_or(|(kl, _)| kl_end < *kl) {
            best = Some((kl_end, store.clone()));
        }
        assignments = next;
        target = target_distribution(&q)?;
        if changed <= config.tol {
            converged = true;
            break;
        }
    }

    let mut restored_best = false;
    if !converged {
        if let Some((kl, snapshot)) = best {
            warn!(
                "self-training did not settle within {} epochs; keeping the state with KL {kl:.6}",
                config.max_epochs
            );
            *store = snapshot;
            assignments = hard_assignments(&assign_all(store)?);
            restored_best = true;
        }
    }
    Ok(SelfTrainReport {
        assignments,
        refreshes,
        converged,
        restored_best,
    })
}
