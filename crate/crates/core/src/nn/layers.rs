use super::graph::BnMode;
use super::params::kaiming_uniform;
use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Kaiming,
    Zero,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut StreamRng,
    ) -> Self {
        let shape = [cout, cin, k, k];
        let w = match init {
            Init::Kaiming => kaiming_uniform(&shape, cin * k * k, rng),
            Init::Zero => Tensor::zeros(&shape),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, stride, pad }
    }

    /// Same-size 3x3 convolution with bias.
    pub fn same3(store: &mut ParamStore, name: &str, cin: usize, cout: usize, init: Init, rng: &mut StreamRng) -> Self {
        Self::new(store, name, cin, cout, 3, 1, 1, true, init, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight)?;
        let b = self.bias.map(|b| g.param(store, b)).transpose()?;
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fin: usize,
        fout: usize,
        bias: bool,
        init: Init,
        rng: &mut StreamRng,
    ) -> Self {
        let w = match init {
            Init::Kaiming => kaiming_uniform(&[fout, fin], fin, rng),
            Init::Zero => Tensor::zeros(&[fout, fin]),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fout])));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight)?;
        let b = self.bias.map(|b| g.param(store, b)).transpose()?;
        g.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[c])),
        }
    }

    /// Training mode normalizes with batch statistics and queues a running
    /// statistics update on the graph; eval mode uses the running values.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, training: bool) -> Result<Var, NnError> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        if !training {
            let mode = BnMode::Eval {
                mean: store.tensor(self.running_mean).data(),
                var: store.tensor(self.running_var).data(),
            };
            return Ok(g.batch_norm(x, gamma, beta, mode, BN_EPS)?.0);
        }
        let (y, stats) = g.batch_norm(x, gamma, beta, BnMode::Train, BN_EPS)?;
        let stats = stats.expect("training mode returns statistics");
        let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        let rm = store.tensor(self.running_mean);
        let rv = store.tensor(self.running_var);
        let new_mean: Vec<f64> =
            rm.data().iter().zip(&stats.mean).map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m).collect();
        let new_var: Vec<f64> = rv
            .data()
            .iter()
            .zip(&stats.var)
            .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbias)
            .collect();
        let c = new_mean.len();
        g.push_buffer_update(self.running_mean, Tensor::new(&[c], new_mean)?);
        g.push_buffer_update(self.running_var, Tensor::new(&[c], new_var)?);
        Ok(y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Applies queued buffer updates (running statistics) from a graph.
pub fn apply_buffer_updates(store: &mut ParamStore, g: &mut Graph) -> Result<(), NnError> {
    for (id, t) in g.take_buffer_updates() {
        store.set(id, t)?;
    }
    Ok(())
}
