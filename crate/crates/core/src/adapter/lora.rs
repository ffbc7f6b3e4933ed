use crate::nn::{kaiming_uniform, Graph, Init, Linear, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

/// Low-rank update `scale * up(down(x))` with `up` zero-initialized.
#[derive(Debug, Clone)]
pub struct Lora {
    pub down: ParamId,
    pub up: ParamId,
    pub scale: f64,
}

impl Lora {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fin: usize,
        fout: usize,
        rank: usize,
        alpha: f64,
        rng: &mut StreamRng,
    ) -> Self {
        let down = store.add(format!("{name}.down"), kaiming_uniform(&[rank, fin], fin, rng));
        let up = store.add(format!("{name}.up"), Tensor::zeros(&[fout, rank]));
        Self { down, up, scale: alpha / rank as f64 }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.down, self.up]
    }

    /// Dense delta `scale * up @ down`, shape `(out, in)`.
    pub fn delta(&self, store: &ParamStore) -> Vec<f64> {
        let (a, b) = (store.tensor(self.down), store.tensor(self.up));
        let (r, fin) = (a.shape()[0], a.shape()[1]);
        let fout = b.shape()[0];
        let mut d = vec![0.0; fout * fin];
        for o in 0..fout {
            for k in 0..r {
                let bv = b.data()[o * r + k] * self.scale;
                if bv == 0.0 {
                    continue;
                }
                for i in 0..fin {
                    d[o * fin + i] += bv * a.data()[k * fin + i];
                }
            }
        }
        d
    }
}

/// A frozen-able linear layer with an optional LoRA branch that is applied
/// per item of the leading axis according to `gates`.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    pub name: String,
    pub base: Linear,
    pub lora: Option<Lora>,
}

impl LoraLinear {
    pub fn new(store: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut StreamRng) -> Self {
        Self { name: name.to_string(), base: Linear::new(store, name, fin, fout, true, Init::Kaiming, rng), lora: None }
    }

    /// `gates[i]` multiplies the LoRA term of item `i`; all-zero gates skip
    /// the branch entirely.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, gates: &[f64]) -> Result<Var, NnError> {
        let y = self.base.forward(g, store, x)?;
        let Some(lora) = &self.lora else { return Ok(y) };
        if gates.iter().all(|&v| v == 0.0) {
            return Ok(y);
        }
        let a = g.param(store, lora.down)?;
        let b = g.param(store, lora.up)?;
        let h = g.linear(x, a, None)?;
        let d = g.linear(h, b, None)?;
        let scaled: Vec<f64> = gates.iter().map(|v| v * lora.scale).collect();
        let d = g.scale_batch(d, &scaled)?;
        g.add(y, d)
    }
}
