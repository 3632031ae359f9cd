//! Adaptive multimodal fusion network and its single-modality/Add/Concat variants.
//!
//! Per modality, the encoder output plus the time embedding passes through a
//! self-attention block. With both modalities and attention fusion, each side
//! then queries the other through a cross-attention block, and the two
//! sequences are blended per timestep by `s = logistic(α)`:
//! `z_t = s·z_TS,t + (1 − s)·z_Text,t`. The blended sequence goes through an
//! MLP, attention pooling, `tanh`, a linear head and a logistic output.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::encoders::{
    check_finite, GruParams, Projection, RagInjection, TimeEmbed, DEFAULT_OMEGA_MAX, DEFAULT_TIME_FREQS,
};
use crate::error::{Error, Result};
use crate::nn::{AttentionBlock, AttnPool, Graph, Grads, Linear, Mat, ParamId, ParamSet, Var};
use crate::par::{self, Execution};

pub const PROB_CLAMP: f64 = 1e-7;
pub const CHECKPOINT_FORMAT: &str = "realm-checkpoint";
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    #[default]
    Attention,
    Add,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub time_freqs: usize,
    pub omega_max: f64,
    pub use_ts: bool,
    pub use_text: bool,
    pub rag_ts: bool,
    pub rag_text: bool,
    pub fusion: FusionKind,
    pub rag_injection: RagInjection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 312,
            heads: 4,
            ff_mult: 4,
            time_freqs: DEFAULT_TIME_FREQS,
            omega_max: DEFAULT_OMEGA_MAX,
            use_ts: true,
            use_text: true,
            rag_ts: true,
            rag_text: true,
            fusion: FusionKind::Attention,
            rag_injection: RagInjection::Symmetric,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("model.d", "must be positive"));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::config("model.heads", format!("must divide d = {}", self.d)));
        }
        if self.ff_mult == 0 {
            return Err(Error::config("model.ff_mult", "must be positive"));
        }
        if self.time_freqs == 0 {
            return Err(Error::config("model.time_freqs", "must be positive"));
        }
        if !(self.omega_max.is_finite() && self.omega_max >= 1.0) {
            return Err(Error::config("model.omega_max", "must be finite and at least 1"));
        }
        if !self.use_ts && !self.use_text {
            return Err(Error::config("model.use_ts", "at least one modality must be enabled"));
        }
        if self.rag_ts && !self.use_ts {
            return Err(Error::config("model.rag_ts", "requires use_ts"));
        }
        if self.rag_text && !self.use_text {
            return Err(Error::config("model.rag_text", "requires use_text"));
        }
        if self.rag_ts && self.rag_injection == RagInjection::TextOnly {
            return Err(Error::config("model.rag_ts", "needs rag_injection = symmetric"));
        }
        Ok(())
    }

    pub fn both_modalities(&self) -> bool {
        self.use_ts && self.use_text
    }
}

/// Input widths fixed by the data: lab feature count and note/bundle embedding size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub n_features: usize,
    pub text_dim: usize,
}

/// One patient's encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// T×F imputed, standardized lab values.
    pub ts: Mat,
    pub times: Vec<f64>,
    /// T×D note embeddings; missing notes are zero rows.
    pub notes: Mat,
    pub note_present: Vec<bool>,
    pub rag_ts: Vec<f64>,
    pub rag_text: Vec<f64>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Diagnostics and prediction for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedOutput {
    pub z: Mat,
    pub z_star: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
    pub pool_weights: Vec<f64>,
    pub attention: Vec<(String, Vec<Mat>)>,
}

#[derive(Clone, Debug)]
struct Layout {
    time: TimeEmbed,
    gru: Option<GruParams>,
    ts_proj: Option<Projection>,
    text_proj: Option<Projection>,
    sa_ts: Option<AttentionBlock>,
    sa_text: Option<AttentionBlock>,
    ca_ts: Option<AttentionBlock>,
    ca_text: Option<AttentionBlock>,
    alpha: Option<ParamId>,
    concat_proj: Option<Linear>,
    mlp: Linear,
    pool: AttnPool,
    head: Linear,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: InputDims,
    pub params: ParamSet,
    layout: Layout,
}

/// Graph handles produced by one forward pass.
pub struct Trace {
    pub logit: Var,
    pub z: Var,
    pub z_star: Var,
    pub pool_weights: Var,
    pub z_ts: Option<Var>,
    pub z_text: Option<Var>,
    pub attention: Vec<(String, Vec<Mat>)>,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl Model {
    pub fn new(config: ModelConfig, dims: InputDims, rng: &mut impl Rng) -> Result<Model> {
        config.validate()?;
        if config.use_ts && dims.n_features == 0 {
            return Err(Error::config("model.use_ts", "dataset has no lab features"));
        }
        if config.use_text && dims.text_dim == 0 {
            return Err(Error::config("model.use_text", "text embedding dimension is zero"));
        }
        let (d, h, ff) = (config.d, config.heads, config.ff_mult);
        let mut ps = ParamSet::new();
        let time = TimeEmbed::new(&mut ps, "time", config.time_freqs, config.omega_max, d, rng);
        let gru = config.use_ts.then(|| GruParams::new(&mut ps, "gru", dims.n_features, d, rng));
        let ts_proj = config
            .rag_ts
            .then(|| Projection::new(&mut ps, "ts_rag_proj", d + dims.text_dim, d, rng));
        let text_in = if config.rag_text { 2 * dims.text_dim } else { dims.text_dim };
        let text_proj = config.use_text.then(|| Projection::new(&mut ps, "note_proj", text_in, d, rng));
        let sa_ts = config.use_ts.then(|| AttentionBlock::new(&mut ps, "sa_ts", d, h, ff, rng));
        let sa_text = config.use_text.then(|| AttentionBlock::new(&mut ps, "sa_text", d, h, ff, rng));
        let both = config.both_modalities();
        let attention = both && config.fusion == FusionKind::Attention;
        let ca_ts = attention.then(|| AttentionBlock::new(&mut ps, "ca_ts", d, h, ff, rng));
        let ca_text = attention.then(|| AttentionBlock::new(&mut ps, "ca_text", d, h, ff, rng));
        let alpha = attention.then(|| ps.add_const("alpha", 1, 1, 0.0));
        let concat_proj = (both && config.fusion == FusionKind::Concat)
            .then(|| Linear::new(&mut ps, "concat_proj", 2 * d, d, true, rng));
        let mlp = Linear::new(&mut ps, "mlp", d, d, true, rng);
        let pool = AttnPool::new(&mut ps, "pool", d, rng);
        let head = Linear::new(&mut ps, "head", d, 1, true, rng);
        let layout = Layout {
            time,
            gru,
            ts_proj,
            text_proj,
            sa_ts,
            sa_text,
            ca_ts,
            ca_text,
            alpha,
            concat_proj,
            mlp,
            pool,
            head,
        };
        Ok(Model { config, dims, params: ps, layout })
    }

    pub fn alpha_param(&self) -> Option<ParamId> {
        self.layout.alpha
    }

    pub fn head(&self) -> Linear {
        self.layout.head
    }

    /// Parameters of the final linear head.
    pub fn head_params(&self) -> Vec<ParamId> {
        let h = self.layout.head;
        std::iter::once(h.w).chain(h.b).collect()
    }

    /// Blend weight `logistic(α)` when attention fusion is active.
    pub fn blend_weight(&self) -> Option<f64> {
        self.layout.alpha.map(|a| logistic(self.params.value(a)[[0, 0]]))
    }

    pub fn validate_input(&self, x: &ModelInput, mask: Option<&[bool]>) -> Result<()> {
        let t = x.len();
        if t == 0 {
            return Err(Error::InvalidInput("patient has no timesteps".into()));
        }
        if let Some(m) = mask {
            if m.len() != t {
                return Err(Error::DimensionMismatch { expected: t, actual: m.len() });
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::InvalidInput("all positions are masked".into()));
            }
        }
        if x.times.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("timestamps".into()));
        }
        let c = &self.config;
        if c.use_ts {
            if x.ts.dim() != (t, self.dims.n_features) {
                return Err(Error::DimensionMismatch { expected: t * self.dims.n_features, actual: x.ts.len() });
            }
            check_finite(&x.ts, "time-series input")?;
        }
        if c.use_text {
            if x.notes.dim() != (t, self.dims.text_dim) {
                return Err(Error::DimensionMismatch { expected: t * self.dims.text_dim, actual: x.notes.len() });
            }
            check_finite(&x.notes, "note embeddings")?;
        }
        for (on, v, what) in [(c.rag_ts, &x.rag_ts, "ts bundle"), (c.rag_text, &x.rag_text, "text bundle")] {
            if on {
                if v.len() != self.dims.text_dim {
                    return Err(Error::DimensionMismatch { expected: self.dims.text_dim, actual: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(what.into()));
                }
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g`. `mask` marks real (non-padded) timesteps.
    pub fn forward(&self, g: &mut Graph, x: &ModelInput, mask: Option<&[bool]>) -> Result<Trace> {
        self.validate_input(x, mask)?;
        let l = &self.layout;
        let c = &self.config;
        let h_time = l.time.forward(g, &x.times);
        let row = |g: &mut Graph, v: &[f64]| g.input(Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row"));
        let mut attention = Vec::new();

        let s_ts = match l.gru {
            Some(gru) => {
                let input = g.input(x.ts.clone());
                let h = gru.forward(g, input);
                let h = match l.ts_proj {
                    Some(p) => {
                        let r = row(g, &x.rag_ts);
                        p.forward(g, h, Some(r))
                    }
                    None => h,
                };
                let h = g.add(h, h_time);
                let (s, maps) = l.sa_ts.as_ref().unwrap().forward(g, h, h, mask);
                attention.push(("sa_ts".to_string(), maps));
                Some(s)
            }
            None => None,
        };
        let s_text = match l.text_proj {
            Some(p) => {
                let notes = g.input(x.notes.clone());
                let r = c.rag_text.then(|| row(g, &x.rag_text));
                let h = p.forward(g, notes, r);
                let h = g.add(h, h_time);
                let (s, maps) = l.sa_text.as_ref().unwrap().forward(g, h, h, mask);
                attention.push(("sa_text".to_string(), maps));
                Some(s)
            }
            None => None,
        };

        let (z, z_ts, z_text) = match (s_ts, s_text) {
            (Some(a), Some(b)) => match c.fusion {
                FusionKind::Attention => {
                    let (za, ma) = l.ca_ts.as_ref().unwrap().forward(g, a, b, mask);
                    let (zb, mb) = l.ca_text.as_ref().unwrap().forward(g, b, a, mask);
                    attention.push(("ca_ts".to_string(), ma));
                    attention.push(("ca_text".to_string(), mb));
                    let alpha = g.param(l.alpha.unwrap());
                    let s = g.sigmoid(alpha);
                    let one_minus = g.affine(s, -1.0, 1.0);
                    let wa = g.scalar_mul(s, za);
                    let wb = g.scalar_mul(one_minus, zb);
                    (g.add(wa, wb), Some(za), Some(zb))
                }
                FusionKind::Add => (g.add(a, b), Some(a), Some(b)),
                FusionKind::Concat => {
                    let cat = g.concat_cols(&[a, b]);
                    (l.concat_proj.unwrap().forward(g, cat), Some(a), Some(b))
                }
            },
            (Some(a), None) => (a, Some(a), None),
            (None, Some(b)) => (b, None, Some(b)),
            (None, None) => unreachable!("validated config has a modality"),
        };

        let m = l.mlp.forward(g, z);
        let m = g.gelu(m);
        let (z_star, pool_weights) = l.pool.forward(g, m, mask);
        let act = g.tanh(z_star);
        let logit = l.head.forward(g, act);
        Ok(Trace {
            logit,
            z,
            z_star,
            pool_weights,
            z_ts,
            z_text,
            attention,
        })
    }

    pub fn predict(&self, x: &ModelInput, mask: Option<&[bool]>) -> Result<FusedOutput> {
        let mut g = Graph::new(&self.params);
        let tr = self.forward(&mut g, x, mask)?;
        let logit = g.value(tr.logit)[[0, 0]];
        Ok(FusedOutput {
            z: g.value(tr.z).clone(),
            z_star: g.value(tr.z_star).row(0).to_vec(),
            logit,
            y_hat: clamp_probability(logistic(logit)),
            pool_weights: g.value(tr.pool_weights).row(0).to_vec(),
            attention: tr.attention,
        })
    }

    pub fn predict_proba(&self, x: &ModelInput) -> Result<f64> {
        Ok(self.predict(x, None)?.y_hat)
    }

    pub fn predict_all(&self, xs: &[ModelInput], exec: Execution) -> Result<Vec<f64>> {
        par::map(exec, xs, |x| self.predict_proba(x)).into_iter().collect()
    }

    /// Mean BCE over `batch` and its gradient.
    ///
    /// Patients are processed in fixed chunks whose partial sums are folded in
    /// order, so the result is bit-identical across execution modes.
    pub fn loss_and_grad(&self, batch: &[(&ModelInput, f64)], exec: Execution) -> Result<(f64, Grads)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let n = batch.len() as f64;
        let chunks: Vec<&[(&ModelInput, f64)]> = batch.chunks(GRAD_CHUNK).collect();
        let partials = par::map(exec, &chunks, |chunk| -> Result<(f64, Grads)> {
            let mut grads = self.params.zeros_like();
            let mut loss = 0.0;
            for (x, y) in chunk.iter() {
                let mut g = Graph::new(&self.params);
                let tr = self.forward(&mut g, x, None)?;
                let logit = g.value(tr.logit)[[0, 0]];
                let (l, dl) = bce_with_logit(logit, *y);
                loss += l;
                g.backward(tr.logit, Mat::from_elem((1, 1), dl / n), &mut grads);
            }
            Ok((loss, grads))
        });
        let mut total = 0.0;
        let mut acc: Option<Grads> = None;
        for p in partials {
            let (l, gr) = p?;
            total += l;
            match &mut acc {
                Some(a) => a.accumulate(&gr),
                None => acc = Some(gr),
            }
        }
        Ok((total / n, acc.expect("non-empty batch")))
    }

    /// Evaluates the loss only.
    pub fn loss(&self, batch: &[(&ModelInput, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in batch {
            total += bce_with_logit(self.predict(x, None)?.logit, *y).0;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    fn manifest(&self, extra: &Value) -> Value {
        let tensors: Vec<Value> = self
            .params
            .iter()
            .map(|(name, m)| json!({"name": name, "shape": [m.nrows(), m.ncols()]}))
            .collect();
        json!({
            "format": CHECKPOINT_FORMAT,
            "dtype": "f32",
            "endianness": "little",
            "modules": {"encoders": 1, "fusion": 1},
            "model": self.config,
            "dims": self.dims,
            "tensors": tensors,
            "extra": extra,
        })
    }

    /// Serializes as a JSON manifest line followed by little-endian `f32` payloads.
    pub fn checkpoint_bytes(&self, extra: &Value) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.manifest(extra)).expect("manifest serializes");
        out.push(b'\n');
        for (_, m) in self.params.iter() {
            for &v in m.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path, extra: &Value) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.checkpoint_bytes(extra))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], path: &Path) -> Result<(Model, Value)> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing manifest line".into()))?;
        let manifest: Value = serde_json::from_slice(&bytes[..nl]).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest["format"] != CHECKPOINT_FORMAT {
            return Err(corrupt("unknown checkpoint format".into()));
        }
        let config: ModelConfig =
            serde_json::from_value(manifest["model"].clone()).map_err(|e| corrupt(format!("model config: {e}")))?;
        let dims: InputDims =
            serde_json::from_value(manifest["dims"].clone()).map_err(|e| corrupt(format!("dims: {e}")))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(config, dims, &mut rng)?;
        let tensors = manifest["tensors"].as_array().ok_or_else(|| corrupt("missing tensor list".into()))?;
        if tensors.len() != model.params.len() {
            return Err(corrupt(format!("expected {} tensors, found {}", model.params.len(), tensors.len())));
        }
        let mut payload = &bytes[nl + 1..];
        for (id, t) in model.params.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
            let name = model.params.name(id).to_string();
            if t["name"] != name.as_str() {
                return Err(corrupt(format!("tensor {} out of order, expected {name}", t["name"])));
            }
            let shape = model.params.value(id).dim();
            if t["shape"] != json!([shape.0, shape.1]) {
                return Err(corrupt(format!("tensor {name} has shape {}", t["shape"])));
            }
            let n = shape.0 * shape.1 * 4;
            if payload.len() < n {
                return Err(corrupt("truncated payload".into()));
            }
            let vals: Vec<f64> = payload[..n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            model.params.value_mut(id).as_slice_mut().expect("standard layout").copy_from_slice(&vals);
            payload = &payload[n..];
        }
        if !payload.is_empty() {
            return Err(corrupt("trailing bytes after payload".into()));
        }
        model.params.check_finite()?;
        Ok((model, manifest["extra"].clone()))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Model, Value)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_checkpoint_bytes(&bytes, path)
    }
}

use rand::SeedableRng;

/// BCE on a clamped logistic output, and its derivative with respect to the logit.
pub fn bce_with_logit(logit: f64, y: f64) -> (f64, f64) {
    let raw = logistic(logit);
    let p = clamp_probability(raw);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = if raw == p { p - y } else { 0.0 };
    (loss, grad)
}

/// `logistic(head(tanh(z*)))`, clamped.
pub fn predict(ps: &ParamSet, head: &Linear, z_star: &[f64]) -> Result<f64> {
    if z_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("z*".into()));
    }
    let mut g = Graph::new(ps);
    let z = g.input(Mat::from_shape_vec((1, z_star.len()), z_star.to_vec()).expect("row"));
    let a = g.tanh(z);
    let y = head.forward(&mut g, a);
    Ok(clamp_probability(logistic(g.value(y)[[0, 0]])))
}

/// Attention pooling of `h` over unmasked rows. Returns the pooled vector and the weights.
pub fn attn_pool(ps: &ParamSet, pool: &AttnPool, h: &Mat, mask: Option<&[bool]>) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(m) = mask {
        if m.len() != h.nrows() {
            return Err(Error::DimensionMismatch { expected: h.nrows(), actual: m.len() });
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidInput("all positions are masked".into()));
        }
    }
    if h.nrows() == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let mut g = Graph::new(ps);
    let x = g.input(h.clone());
    let (out, w) = pool.forward(&mut g, x, mask);
    Ok((g.value(out).row(0).to_vec(), g.value(w).row(0).to_vec()))
}

/// Add: elementwise sum. Concat: column concatenation, projected to `d` by the model.
pub fn fuse_variant(kind: FusionKind, z_ts: &Mat, z_text: &Mat) -> Result<Mat> {
    match kind {
        FusionKind::Add => {
            if z_ts.dim() != z_text.dim() {
                return Err(Error::DimensionMismatch { expected: z_ts.len(), actual: z_text.len() });
            }
            Ok(z_ts + z_text)
        }
        FusionKind::Concat => {
            if z_ts.nrows() != z_text.nrows() {
                return Err(Error::DimensionMismatch { expected: z_ts.nrows(), actual: z_text.nrows() });
            }
            Ok(ndarray::concatenate(ndarray::Axis(1), &[z_ts.view(), z_text.view()]).expect("rows agree"))
        }
        FusionKind::Attention => Err(Error::InvalidInput("attention fusion is not a static combiner".into())),
    }
}
