//! Gradient and distribution checks runnable from an installed binary.

use serde_json::json;
use wscd_core::detector::{soft_assign, target_distribution, Detector, DetectorConfig, WordPair};
use wscd_core::encoder::EncoderConfig;
use wscd_core::numerics::gradcheck::{check_gradients, GradCheckOptions};
use wscd_core::numerics::{ops, ParamStore, Rng, Tape, Tensor};

use crate::logging::event;
use crate::CliError;

const INSTANCES: usize = 5;
const TOLERANCE: f64 = 1e-3;

fn tiny() -> DetectorConfig {
    DetectorConfig {
        encoder: EncoderConfig {
            char_dim: 3,
            filters_per_n: 3,
            ngram_orders: vec![2, 3],
            max_word_len: 8,
            ..EncoderConfig::default()
        },
        proj_dim: 3,
        sense_dim: 3,
        ..DetectorConfig::default()
    }
}

fn word(rng: &mut Rng) -> String {
    let alphabet: Vec<char> = "abdeklmor".chars().collect();
    (0..3 + rng.below(5))
        .map(|_| alphabet[rng.below(alphabet.len())])
        .collect()
}

/// Largest relative gradient error over the clustering loss and the
/// self-training KL of small random detectors.
fn gradient_error(inject_fault: bool) -> Result<f64, CliError> {
    let opts = GradCheckOptions {
        inject_fault,
        ..GradCheckOptions::f64_default()
    };
    let mut rng = Rng::new(17);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let pairs: Vec<WordPair> = (0..4).map(|_| WordPair::new(word(&mut rng), word(&mut rng))).collect();
        let mut det = Detector::<f64>::new(&tiny(), ["abdeklmor"], &mut rng)?;
        det.set_centroids(Tensor::from_fn(&[2, 3], |_| rng.uniform(-1.0, 1.0)))?;
        let net = det.net.clone();
        let refs: Vec<&WordPair> = pairs.iter().collect();
        let lu = check_gradients(
            &mut det.store,
            |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
                let nodes = net.forward(tape, store, &refs)?;
                tape.cluster_loss(nodes.p)
            },
            opts,
            &mut rng,
        )?;
        let mut tape = Tape::new();
        let z = net.embed(&mut tape, &det.store, &refs)?;
        let target = target_distribution(&soft_assign(tape.value(z), det.centroids())?)?;
        let kl = check_gradients(
            &mut det.store,
            |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
                let z = net.embed(tape, store, &refs)?;
                let c = tape.param(store, net.centroids());
                let q = tape.student_t(z, c)?;
                let p = tape.constant(target.clone())?;
                tape.kl_div(p, q)
            },
            opts,
            &mut rng,
        )?;
        worst = worst.max(lu.max_rel_error).max(kl.max_rel_error);
    }
    Ok(worst)
}

/// Largest row-sum deviation of soft assignments and targets, and the
/// largest |KL(P‖P)|.
fn distribution_error() -> Result<(f64, f64), CliError> {
    let mut rng = Rng::new(29);
    let (mut rows, mut kl) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n, k, d) = (1 + rng.below(12), 2 + rng.below(3), 1 + rng.below(5));
        let z = Tensor::from_fn(&[n, d], |_| rng.uniform(-3.0, 3.0));
        let c = Tensor::from_fn(&[k, d], |_| rng.uniform(-3.0, 3.0));
        let q = soft_assign(&z, &c)?;
        let p = target_distribution(&q)?;
        for t in [&q, &p] {
            for i in 0..t.rows() {
                rows = rows.max((t.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
        kl = kl.max(ops::kl_div(&p, &p)?.abs());
    }
    Ok((rows, kl))
}

pub fn run(inject_fault: bool) -> Result<(), CliError> {
    println!(
        "wscd selfcheck: numerics {}, checkpoint format {}{}",
        wscd_core::numerics::NUMERICS_VERSION,
        String::from_utf8_lossy(wscd_core::numerics::checkpoint::MAGIC),
        wscd_core::numerics::checkpoint::FORMAT_VERSION
    );
    let grad = gradient_error(inject_fault)?;
    let (rows, kl) = distribution_error()?;
    event(
        "selfcheck",
        json!({"max_rel_grad_error": grad, "max_row_sum_error": rows, "max_self_kl": kl}),
    );
    println!("gradients: max relative error {grad:.2e} (limit {TOLERANCE:.0e})");
    println!("distributions: max row-sum error {rows:.1e}, max KL(P||P) {kl:.1e}");
    if !(grad < TOLERANCE) {
        return Err(CliError::Check(format!("gradient relative error {grad:.2e}")));
    }
    if !(rows <= 1e-6 && kl <= 1e-9) {
        return Err(CliError::Check("distribution invariants violated".into()));
    }
    println!("selfcheck passed");
    Ok(())
}
