//! Central finite-difference checks of the tape's analytic gradients.

use crate::error::Result;

use super::{NodeId, ParamStore, Real, Rng, Tape};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation for the central difference.
    pub eps: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are compared absolutely.
    pub floor: f64,
    /// Maximum number of entries probed per parameter tensor.
    pub max_entries: usize,
    /// Corrupts the analytic gradient; used to prove the checker can fail.
    pub inject_fault: bool,
}

impl GradCheckOptions {
    /// Settings for `f64` runs.
    pub fn f64_default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_entries: 24,
            inject_fault: false,
        }
    }

    /// Settings for `f32` runs (ε = 1e-3).
    pub fn f32_default() -> Self {
        Self {
            eps: 1e-3,
            floor: 1e-2,
            max_entries: 24,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.entries_checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<T: Real, F>(store: &ParamStore<T>, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    Ok(tape.value(loss).item().f64())
}

/// Compares analytic and numeric gradients of `loss_fn` for every trainable
/// parameter in `store`. The store's values are restored afterwards.
pub fn check_gradients<T: Real, F>(
    store: &mut ParamStore<T>,
    loss_fn: F,
    opts: GradCheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<NodeId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().filter(|id| store.get(*id).trainable).collect();
    for id in ids {
        let len = store.value(id).len();
        let analytic: Vec<f64> = match store.value(id).grad() {
            Some(g) => g.iter().map(|v| v.f64()).collect(),
            None => vec![0.0; len],
        };
        let mut entries: Vec<usize> = (0..len).collect();
        if len > opts.max_entries {
            rng.shuffle(&mut entries);
            entries.truncate(opts.max_entries);
        }
        for idx in entries {
            let orig = store.value(id).data()[idx];
            let h = T::of(opts.eps);
            store.get_mut(id).value.data_mut()[idx] = orig + h;
            let plus = eval_loss(store, &loss_fn)?;
            store.get_mut(id).value.data_mut()[idx] = orig - h;
            let minus = eval_loss(store, &loss_fn)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            // Divide by the step actually taken after rounding to T.
            let step = ((orig + h) - (orig - h)).f64();
            let numeric = (plus - minus) / step;
            let mut a = analytic[idx];
            if opts.inject_fault {
                a = a * 1.5 + 0.1;
            }
            let err = relative_error(a, numeric, opts.floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst_param = store.get(id).name.clone();
                    report.worst_index = idx;
                }
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
