//! Central finite-difference checks of analytic gradients.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    /// Number of scalars compared.
    pub checked: usize,
}

/// Compares the gradient of `loss` with respect to every trainable entry of
/// `store` against central differences with step `h`.
///
/// `loss` must be deterministic: any randomness (dropout) has to be seeded
/// identically on every call. Values below `floor` are compared absolutely.
pub fn check_gradients<L>(store: &mut ParamStore<f64>, h: f64, floor: f64, loss: L) -> Result<GradReport>
where
    L: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    let graph = Graph::new();
    let out = loss(&graph, store)?;
    let grads = graph.backward(out)?;
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::inference();
        let l = loss(&g, store)?;
        g.check_finite()?;
        Ok(l.value().item())
    };
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.value(id).len();
        let analytic = grads.param(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("gradient check of {}", store.name(id))));
            }
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{i}] analytic {a:e} numeric {numeric:e}", store.name(id));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
