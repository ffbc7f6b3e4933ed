//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use serde::Serialize;

use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    fn from_entries(entries: Vec<GradCheckEntry>, h: f64, tol: f64) -> Self {
        let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
        Self { h, tol, max_rel_err, passed: max_rel_err <= tol, entries }
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every element of every input of a scalar function built by `f`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect::<Result<_, _>>()?;
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64, NnError> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect::<Result<_, _>>()?;
        let l = f(&mut g, &vars)?;
        Ok(g.value(l).item())
    };
    let mut entries = Vec::new();
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.var(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            entries.push(GradCheckEntry {
                name: format!("input{k}"),
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    Ok(GradCheckReport::from_entries(entries, h, tol))
}

/// Checks the gradient of `f` with respect to stored parameters. With
/// `per_tensor = Some(k)`, only `k` randomly chosen elements of each
/// parameter are perturbed; `None` checks every element.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    tol: f64,
    per_tensor: Option<usize>,
    rng: &mut StreamRng,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::no_grad();
        let l = f(&mut g, s)?;
        Ok(g.value(l).item())
    };
    let mut entries = Vec::new();
    for &id in ids {
        let n = store.tensor(id).len();
        let picks: Vec<usize> = match per_tensor {
            Some(k) if k < n => {
                let mut v = sample(rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.tensor(id).shape()));
        for i in picks {
            let x0 = store.tensor(id).data()[i];
            store.tensor_mut(id).data_mut()[i] = x0 + h;
            let fp = eval(store);
            store.tensor_mut(id).data_mut()[i] = x0 - h;
            let fm = eval(store);
            store.tensor_mut(id).data_mut()[i] = x0;
            let numeric = (fp? - fm?) / (2.0 * h);
            let a = analytic.data()[i];
            entries.push(GradCheckEntry {
                name: store.get(id).name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    Ok(GradCheckReport::from_entries(entries, h, tol))
}
