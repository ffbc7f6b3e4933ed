//! Small conditional denoiser used as the frozen base model: two
//! resolution levels, a self-attention bottleneck, timestep embedding added
//! per block and prompt embedding applied as feature-wise modulation.

use serde::{Deserialize, Serialize};

use super::lora::{Lora, LoraLinear};
use crate::nn::{Conv2d, Graph, Init, Linear, NnError, ParamId, ParamStore, Var};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub latent_channels: usize,
    pub widths: [usize; 2],
    pub time_dim: usize,
    pub prompt_dim: usize,
}

impl BackboneConfig {
    /// Noisy latent, mask, masked-image latent.
    pub fn input_channels(&self) -> usize {
        2 * self.latent_channels + 1
    }
}

/// Conditioning shared by every block of one forward pass, one row per item.
pub struct StepContext<'a> {
    /// `(n, time_dim)` after the timestep MLP.
    pub temb: Var,
    /// `(n, prompt_dim)`.
    pub prompt: Var,
    /// LoRA gate per item.
    pub gates: &'a [f64],
}

/// Extension points used by the two-frame adapter.
pub trait FrameHooks {
    /// Called on the output of shallow level `level` (0 or 1).
    fn shallow(&self, g: &mut Graph, store: &ParamStore, level: usize, h: Var) -> Result<Var, NnError>;
    /// Called on the bottleneck features.
    fn bottleneck(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var, NnError>;
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    time: Linear,
    modulation: LoraLinear,
    conv2: Conv2d,
    channels: usize,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize, cfg: &BackboneConfig, rng: &mut StreamRng) -> Self {
        Self {
            conv1: Conv2d::same3(store, &format!("{name}.conv1"), c, c, Init::Kaiming, rng),
            time: Linear::new(store, &format!("{name}.time"), cfg.time_dim, c, true, Init::Kaiming, rng),
            modulation: LoraLinear::new(store, &format!("{name}.modulation"), cfg.prompt_dim, 2 * c, rng),
            conv2: Conv2d::same3(store, &format!("{name}.conv2"), c, c, Init::Zero, rng),
            channels: c,
        }
    }

    fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, ctx: &StepContext) -> Result<Var, NnError> {
        let c = self.channels;
        let h = g.silu(x)?;
        let h = self.conv1.forward(g, s, h)?;
        let t = self.time.forward(g, s, ctx.temb)?;
        let h = g.add_channel(h, t)?;
        let m = self.modulation.forward(g, s, ctx.prompt, ctx.gates)?;
        let scale = g.narrow(m, 1, 0, c)?;
        let shift = g.narrow(m, 1, c, c)?;
        let h = g.modulate(h, scale, shift)?;
        let h = g.silu(h)?;
        let h = self.conv2.forward(g, s, h)?;
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    q: LoraLinear,
    k: LoraLinear,
    v: LoraLinear,
    out: Linear,
}

impl SelfAttention {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut StreamRng) -> Self {
        Self {
            q: LoraLinear::new(store, &format!("{name}.q"), c, c, rng),
            k: LoraLinear::new(store, &format!("{name}.k"), c, c, rng),
            v: LoraLinear::new(store, &format!("{name}.v"), c, c, rng),
            out: Linear::new(store, &format!("{name}.out"), c, c, true, Init::Zero, rng),
        }
    }

    /// Attention over the `h*w` sites of each item separately.
    fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, gates: &[f64]) -> Result<Var, NnError> {
        let sh = g.shape(x).to_vec();
        let (n, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
        let flat = g.reshape(x, &[n, c, hw])?;
        let tokens = g.permute(flat, &[0, 2, 1])?;
        let q = self.q.forward(g, s, tokens, gates)?;
        let k = self.k.forward(g, s, tokens, gates)?;
        let v = self.v.forward(g, s, tokens, gates)?;
        let a = g.attention(q, k, v)?;
        let o = self.out.forward(g, s, a)?;
        let o = g.permute(o, &[0, 2, 1])?;
        let o = g.reshape(o, &sh)?;
        g.add(x, o)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    in_conv: Conv2d,
    time_mlp: Linear,
    block0: ResBlock,
    down0: Conv2d,
    block1: ResBlock,
    down1: Conv2d,
    mid: ResBlock,
    mid_attn: SelfAttention,
    up1_conv: Conv2d,
    up1: ResBlock,
    up0_conv: Conv2d,
    up0: ResBlock,
    out_conv: Conv2d,
}

/// Spatial dims of the latent must be a multiple of this.
pub const BACKBONE_STRIDE: usize = 4;

impl Backbone {
    /// Parameters are named `{prefix}...`.
    pub fn new(store: &mut ParamStore, prefix: &str, config: BackboneConfig, rng: &mut StreamRng) -> Self {
        let [w0, w1] = config.widths;
        let n = |s: &str| format!("{prefix}{s}");
        let cfg = &config;
        let in_conv = Conv2d::same3(store, &n("in_conv"), cfg.input_channels(), w0, Init::Kaiming, rng);
        let time_mlp = Linear::new(store, &n("time_mlp"), cfg.time_dim, cfg.time_dim, true, Init::Kaiming, rng);
        let block0 = ResBlock::new(store, &n("block0"), w0, cfg, rng);
        let down0 = Conv2d::new(store, &n("down0"), w0, w1, 3, 2, 1, true, Init::Kaiming, rng);
        let block1 = ResBlock::new(store, &n("block1"), w1, cfg, rng);
        let down1 = Conv2d::new(store, &n("down1"), w1, w1, 3, 2, 1, true, Init::Kaiming, rng);
        let mid = ResBlock::new(store, &n("mid"), w1, cfg, rng);
        let mid_attn = SelfAttention::new(store, &n("mid_attn"), w1, rng);
        let up1_conv = Conv2d::same3(store, &n("up1_conv"), 2 * w1, w1, Init::Kaiming, rng);
        let up1 = ResBlock::new(store, &n("up1"), w1, cfg, rng);
        let up0_conv = Conv2d::same3(store, &n("up0_conv"), w1 + w0, w0, Init::Kaiming, rng);
        let up0 = ResBlock::new(store, &n("up0"), w0, cfg, rng);
        // residual branches and the output start at zero so activations stay bounded without normalization
        let out_conv = Conv2d::same3(store, &n("out_conv"), w0, cfg.latent_channels, Init::Zero, rng);
        Self {
            config,
            in_conv,
            time_mlp,
            block0,
            down0,
            block1,
            down1,
            mid,
            mid_attn,
            up1_conv,
            up1,
            up0_conv,
            up0,
            out_conv,
        }
    }

    fn lora_targets(&mut self) -> Vec<&mut LoraLinear> {
        let mut v: Vec<&mut LoraLinear> = Vec::new();
        for b in [&mut self.block0, &mut self.block1, &mut self.mid, &mut self.up1, &mut self.up0] {
            v.push(&mut b.modulation);
        }
        v.push(&mut self.mid_attn.q);
        v.push(&mut self.mid_attn.k);
        v.push(&mut self.mid_attn.v);
        v
    }

    /// Attaches a LoRA branch to every modulation and attention projection;
    /// LoRA tensors are named `{prefix}{layer}` with the backbone prefix removed.
    pub fn attach_lora(
        &mut self,
        store: &mut ParamStore,
        backbone_prefix: &str,
        prefix: &str,
        rank: usize,
        alpha: f64,
        rng: &mut StreamRng,
    ) {
        for l in self.lora_targets() {
            let w = store.tensor(l.base.weight).shape().to_vec();
            let name = format!("{prefix}{}", l.name.strip_prefix(backbone_prefix).unwrap_or(&l.name));
            l.lora = Some(Lora::new(store, &name, w[1], w[0], rank, alpha, rng));
        }
    }

    pub fn loras(&self) -> Vec<&Lora> {
        let blocks = [&self.block0, &self.block1, &self.mid, &self.up1, &self.up0];
        let mut v: Vec<&Lora> = blocks.iter().filter_map(|b| b.modulation.lora.as_ref()).collect();
        v.extend([&self.mid_attn.q, &self.mid_attn.k, &self.mid_attn.v].into_iter().filter_map(|l| l.lora.as_ref()));
        v
    }

    pub fn lora_params(&self) -> Vec<ParamId> {
        self.loras().iter().flat_map(|l| l.params()).collect()
    }

    /// Channel width at each hook point: two shallow levels, bottleneck.
    pub fn hook_widths(&self) -> [usize; 3] {
        [self.config.widths[0], self.config.widths[1], self.config.widths[1]]
    }

    /// `x`: `(n, 2 c_lat + 1, h, w)`, `temb_in`: `(n, time_dim)` sinusoidal
    /// embeddings, `prompt`: `(n, prompt_dim)`. Returns the `(n, c_lat, h, w)`
    /// noise prediction.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        x: Var,
        temb_in: Var,
        prompt: Var,
        gates: &[f64],
        hooks: Option<&dyn FrameHooks>,
    ) -> Result<Var, NnError> {
        let sh = g.shape(x).to_vec();
        if sh.len() != 4 || sh[1] != self.config.input_channels() || !sh[2].is_multiple_of(BACKBONE_STRIDE) || !sh[3].is_multiple_of(BACKBONE_STRIDE) {
            return Err(NnError::Shape(format!(
                "backbone input {sh:?}: need (n, {}, h, w) with h, w multiples of {BACKBONE_STRIDE}",
                self.config.input_channels()
            )));
        }
        let t = self.time_mlp.forward(g, s, temb_in)?;
        let temb = g.silu(t)?;
        let ctx = StepContext { temb, prompt, gates };
        let h = self.in_conv.forward(g, s, x)?;
        let mut h0 = self.block0.forward(g, s, h, &ctx)?;
        if let Some(k) = hooks {
            h0 = k.shallow(g, s, 0, h0)?;
        }
        let d = self.down0.forward(g, s, h0)?;
        let mut h1 = self.block1.forward(g, s, d, &ctx)?;
        if let Some(k) = hooks {
            h1 = k.shallow(g, s, 1, h1)?;
        }
        let d = self.down1.forward(g, s, h1)?;
        let m = self.mid.forward(g, s, d, &ctx)?;
        let mut m = self.mid_attn.forward(g, s, m, gates)?;
        if let Some(k) = hooks {
            m = k.bottleneck(g, s, m)?;
        }
        let u = g.upsample2(m)?;
        let u = g.concat(&[u, h1], 1)?;
        let u = self.up1_conv.forward(g, s, u)?;
        let u = self.up1.forward(g, s, u, &ctx)?;
        let u = g.upsample2(u)?;
        let u = g.concat(&[u, h0], 1)?;
        let u = self.up0_conv.forward(g, s, u)?;
        let u = self.up0.forward(g, s, u, &ctx)?;
        let u = g.silu(u)?;
        self.out_conv.forward(g, s, u)
    }
}
