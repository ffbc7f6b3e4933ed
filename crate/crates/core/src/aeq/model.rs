//! Edge-quality classifier: a three-level encoder-decoder over the
//! 8-channel input, two logits per pixel (high quality, low quality).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::input::{pad_input, AeqInput, AEQ_INPUT_CHANNELS};
use super::AeqError;
use crate::edge::Plane;
use crate::nn::{
    load_checkpoint, record_text, save_checkpoint, text_record, BatchNorm2d, Conv2d, Graph, Init, NnError,
    ParamStore, Tensor, Var,
};
use crate::rng::substream;

const CONFIG_RECORD: &str = "meta/aeq_config";
/// Spatial dims must be a multiple of this (three 2x poolings).
pub const AEQ_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeqConfig {
    /// Hidden channels of the three encoder levels.
    pub widths: [usize; 3],
    pub seed: u64,
}

impl Default for AeqConfig {
    fn default() -> Self {
        Self { widths: [64, 128, 256], seed: 0 }
    }
}

impl AeqConfig {
    /// Same shape at reduced width: `[w, 2w, 4w]`.
    pub fn with_base_width(w: usize, seed: u64) -> Self {
        Self { widths: [w, 2 * w, 4 * w], seed }
    }

    pub fn validate(&self) -> Result<(), AeqError> {
        if self.widths.contains(&0) {
            return Err(AeqError::Config("classifier widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    c1: Conv2d,
    b1: BatchNorm2d,
    c2: Conv2d,
    b2: BatchNorm2d,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut crate::rng::StreamRng) -> Self {
        Self {
            c1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, 1, false, Init::Kaiming, rng),
            b1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout),
            c2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, Init::Kaiming, rng),
            b2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
        }
    }

    fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, training: bool) -> Result<Var, NnError> {
        let x = self.c1.forward(g, s, x)?;
        let x = self.b1.forward(g, s, x, training)?;
        let x = g.relu(x)?;
        let x = self.c2.forward(g, s, x)?;
        let x = self.b2.forward(g, s, x, training)?;
        g.relu(x)
    }
}

#[derive(Debug, Clone)]
pub struct AeqClassifier {
    config: AeqConfig,
    pub store: ParamStore,
    down: [Block; 3],
    up: [Block; 3],
    head: Conv2d,
}

impl AeqClassifier {
    /// Kaiming-initialized blocks and a zero-initialized head, so an
    /// untrained classifier outputs p = 0.5 everywhere.
    pub fn new(config: AeqConfig) -> Result<Self, AeqError> {
        config.validate()?;
        let [w1, w2, w3] = config.widths;
        let mut rng = substream(config.seed, "aeq-init");
        let mut store = ParamStore::new();
        let s = &mut store;
        let down = [
            Block::new(s, "down1", AEQ_INPUT_CHANNELS, w1, &mut rng),
            Block::new(s, "down2", w1, w2, &mut rng),
            Block::new(s, "down3", w2, w3, &mut rng),
        ];
        // Each up block upsamples, concatenates the matching skip and
        // reduces to the next level's width.
        let up = [
            Block::new(s, "up3", 2 * w3, w2, &mut rng),
            Block::new(s, "up2", 2 * w2, w1, &mut rng),
            Block::new(s, "up1", 2 * w1, w1, &mut rng),
        ];
        let head = Conv2d::new(s, "head", w1, 2, 1, 1, 0, true, Init::Zero, &mut rng);
        Ok(Self { config, store, down, up, head })
    }

    pub fn config(&self) -> &AeqConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.store.trainable().iter().map(|&id| self.store.tensor(id).len()).sum()
    }

    /// `(n, 8, h, w)` to `(n, 2, h, w)` logits; `h` and `w` must be
    /// multiples of [`AEQ_STRIDE`].
    pub fn forward(&self, g: &mut Graph, x: Var, training: bool) -> Result<Var, NnError> {
        let s = &self.store;
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != AEQ_INPUT_CHANNELS || !shape[2].is_multiple_of(AEQ_STRIDE) || !shape[3].is_multiple_of(AEQ_STRIDE) {
            return Err(NnError::Shape(format!("classifier input {shape:?}")));
        }
        let s1 = self.down[0].forward(g, s, x, training)?;
        let p = g.max_pool2(s1)?;
        let s2 = self.down[1].forward(g, s, p, training)?;
        let p = g.max_pool2(s2)?;
        let s3 = self.down[2].forward(g, s, p, training)?;
        let mut y = g.max_pool2(s3)?;
        for (block, skip) in self.up.iter().zip([s3, s2, s1]) {
            let u = g.upsample2(y)?;
            let cat = g.concat(&[u, skip], 1)?;
            y = block.forward(g, s, cat, training)?;
        }
        self.head.forward(g, s, y)
    }

    /// Per-pixel low-quality probability in eval mode. Inputs of any size
    /// are padded with transparent pixels and the map cropped back.
    pub fn low_probability(&self, input: &AeqInput) -> Result<Plane, AeqError> {
        let (w, h) = (input.width(), input.height());
        let (pw, ph) = (w.next_multiple_of(AEQ_STRIDE), h.next_multiple_of(AEQ_STRIDE));
        let t = pad_input(&input.tensor, ph, pw).reshape(&[1, AEQ_INPUT_CHANNELS, ph, pw])?;
        let mut g = Graph::no_grad();
        let x = g.constant(t)?;
        let logits = self.forward(&mut g, x, false)?;
        let z = g.value(logits).data();
        let n = ph * pw;
        // softmax over two classes is the logistic of the difference
        let p = Plane::from_fn(w, h, |x, y| {
            let i = y * pw + x;
            1.0 / (1.0 + (z[i] - z[n + i]).exp())
        });
        Ok(p)
    }

    pub fn records(&self) -> Result<Vec<(String, Tensor)>, AeqError> {
        let mut recs = self.store.records();
        let json = serde_json::to_string(&self.config).map_err(|e| AeqError::Config(e.to_string()))?;
        recs.push(text_record(CONFIG_RECORD, &json));
        Ok(recs)
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self, AeqError> {
        let (_, t) = records
            .iter()
            .find(|(n, _)| n == CONFIG_RECORD)
            .ok_or_else(|| AeqError::Config("checkpoint has no classifier config".into()))?;
        let config: AeqConfig =
            serde_json::from_str(&record_text(t)?).map_err(|e| AeqError::Config(e.to_string()))?;
        let mut clf = Self::new(config)?;
        let loaded = clf.store.load_from(records)?;
        if loaded != clf.store.len() {
            return Err(AeqError::Config(format!(
                "checkpoint holds {loaded} of {} classifier tensors",
                clf.store.len()
            )));
        }
        Ok(clf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AeqError> {
        Ok(save_checkpoint(path, &self.records()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AeqError> {
        Self::from_records(&load_checkpoint(path)?)
    }
}
