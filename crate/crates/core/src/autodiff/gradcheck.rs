//! Central-difference gradient verification.

use crate::autodiff::graph::{Graph, Value};
use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};

/// Compares the analytic gradient of a scalar function of the store against
/// central differences, for every entry of every parameter.
///
/// Returns `max |analytic − numeric| / max(1, |numeric|)`. The store's
/// gradients are left zeroed and its values unchanged.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Value>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        Ok(g.scalar(root))
    };

    store.zero_grad();
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    g.backward(root)?;
    g.write_param_grads(store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad().to_vec()).collect();
    store.zero_grad();

    let mut worst = 0.0f64;
    let ids: Vec<_> = (0..store.len()).collect();
    for i in ids {
        let id = crate::autodiff::params::ParamId::from_index(i);
        for j in 0..store.get(id).data().len() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[i][j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
