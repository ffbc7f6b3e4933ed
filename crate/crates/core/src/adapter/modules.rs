//! Two-frame adapter modules. Both act on the deflated batch `(2b, c, h, w)`
//! (frame 0 and frame 1 of item `i` at batch `2i` and `2i + 1`) and reduce
//! to the identity while their output projections are zero.

use super::backbone::FrameHooks;
use crate::nn::{Conv2d, Graph, Init, Linear, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

/// `f + Z(conv(silu(conv(f))))` over the frame-concatenated channels.
#[derive(Debug, Clone)]
pub struct SpatialAlign {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub zero: Conv2d,
    channels: usize,
}

impl SpatialAlign {
    /// `c` is the per-frame width; the convolutions run on `2c` channels.
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut StreamRng) -> Self {
        let c2 = 2 * c;
        Self {
            conv1: Conv2d::same3(store, &format!("{name}.conv1"), c2, c2, Init::Kaiming, rng),
            conv2: Conv2d::same3(store, &format!("{name}.conv2"), c2, c2, Init::Kaiming, rng),
            zero: Conv2d::new(store, &format!("{name}.zero"), c2, c2, 1, 1, 0, true, Init::Zero, rng),
            channels: c,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.conv1.params(), self.conv2.params(), self.zero.params()].concat()
    }

    /// Deflated `(2b, c, h, w)` in and out.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, f: Var) -> Result<Var, NnError> {
        let sh = g.shape(f).to_vec();
        if sh.len() != 4 || !sh[0].is_multiple_of(2) || sh[1] != self.channels {
            return Err(NnError::Shape(format!("spatial align over {sh:?} with width {}", self.channels)));
        }
        // (2b, c, h, w) is (b, 2, c, h, w) in memory: frames become channels
        let r = g.reshape(f, &[sh[0] / 2, 2 * sh[1], sh[2], sh[3]])?;
        let y = self.conv1.forward(g, s, r)?;
        let y = g.silu(y)?;
        let y = self.conv2.forward(g, s, y)?;
        let z = self.zero.forward(g, s, y)?;
        let out = g.add(r, z)?;
        g.reshape(out, &sh)
    }
}

/// 2D sinusoidal embedding `(h*w, c)`: the first half of the channels
/// encodes the row, the second half the column.
pub fn positional_embedding_2d(h: usize, w: usize, c: usize) -> Vec<f64> {
    let half = c / 2;
    let quarter = half / 2;
    let mut pe = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let row = &mut pe[(y * w + x) * c..(y * w + x + 1) * c];
            for (offset, pos) in [(0, y), (half, x)] {
                for k in 0..quarter {
                    let f = (-(k as f64) / quarter as f64 * 10000f64.ln()).exp();
                    row[offset + 2 * k] = (pos as f64 * f).sin();
                    row[offset + 2 * k + 1] = (pos as f64 * f).cos();
                }
            }
        }
    }
    pe
}

/// Joint self-attention over the tokens of both frames, residual through a
/// zero-initialized two-layer MLP.
#[derive(Debug, Clone)]
pub struct CrossDomainAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub mlp1: Linear,
    pub mlp2: Linear,
    channels: usize,
}

impl CrossDomainAttention {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut StreamRng) -> Self {
        let lin = |store: &mut ParamStore, s: &str, init, rng: &mut StreamRng| {
            Linear::new(store, &format!("{name}.{s}"), c, c, true, init, rng)
        };
        Self {
            q: lin(store, "q", Init::Kaiming, rng),
            k: lin(store, "k", Init::Kaiming, rng),
            v: lin(store, "v", Init::Kaiming, rng),
            mlp1: lin(store, "mlp1", Init::Kaiming, rng),
            mlp2: lin(store, "mlp2", Init::Zero, rng),
            channels: c,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.mlp1, &self.mlp2].iter().flat_map(|l| l.params()).collect()
    }

    /// Deflated `(2b, c, h, w)` in and out.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, f: Var) -> Result<Var, NnError> {
        let sh = g.shape(f).to_vec();
        if sh.len() != 4 || !sh[0].is_multiple_of(2) || sh[1] != self.channels {
            return Err(NnError::Shape(format!("cross-domain attention over {sh:?} with width {}", self.channels)));
        }
        let (b, c, h, w) = (sh[0] / 2, sh[1], sh[2], sh[3]);
        let five = g.reshape(f, &[b, 2, c, h, w])?;
        let perm = g.permute(five, &[0, 1, 3, 4, 2])?;
        let tokens = g.reshape(perm, &[b, 2 * h * w, c])?;
        // same embedding for both frames: correspondence is positional
        let pe = positional_embedding_2d(h, w, c);
        let pe: Vec<f64> = (0..2 * b).flat_map(|_| pe.iter().copied()).collect();
        let pe = g.constant(Tensor::new(&[b, 2 * h * w, c], pe)?)?;
        let x = g.add(tokens, pe)?;
        let q = self.q.forward(g, s, x)?;
        let k = self.k.forward(g, s, x)?;
        let v = self.v.forward(g, s, x)?;
        let a = g.attention(q, k, v)?;
        let z = self.mlp1.forward(g, s, a)?;
        let z = g.silu(z)?;
        let z = self.mlp2.forward(g, s, z)?;
        let out = g.add(tokens, z)?;
        let out = g.reshape(out, &[b, 2, h, w, c])?;
        let out = g.permute(out, &[0, 1, 4, 2, 3])?;
        g.reshape(out, &sh)
    }
}

/// One alignment module per shallow level and one bottleneck attention.
#[derive(Debug, Clone)]
pub struct AdapterModules {
    pub align: [SpatialAlign; 2],
    pub attn: CrossDomainAttention,
}

impl AdapterModules {
    pub fn params(&self) -> Vec<ParamId> {
        [self.align[0].params(), self.align[1].params(), self.attn.params()].concat()
    }
}

impl FrameHooks for AdapterModules {
    fn shallow(&self, g: &mut Graph, store: &ParamStore, level: usize, h: Var) -> Result<Var, NnError> {
        self.align[level].forward(g, store, h)
    }

    fn bottleneck(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var, NnError> {
        self.attn.forward(g, store, h)
    }
}
