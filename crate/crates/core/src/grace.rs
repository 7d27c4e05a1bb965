//! GRACE: embedding, GRU, self-attention over the GRU outputs, masked mean
//! pooling, dropout, a ReLU dense layer and a softmax output, trained with
//! Adam and early stopping on validation loss.
//!
//! Arithmetic is 64-bit throughout. Parameters are rounded to 32-bit values
//! after initialization and after training, which is what the model file
//! stores, so a saved model reproduces its in-memory outputs exactly.

use std::fmt;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cbow::{EmbeddingMatrix, Vocabulary, PAD};
use crate::container::{ContainerError, ModelFile, ModelKind, Tensor};
use crate::corpus::Review;
use crate::label::{Label, NUM_CLASSES};
use crate::seed;

/// Log clamp in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attention {
    /// Scaled dot product over the GRU outputs, no projections.
    Dot,
    /// `v · tanh(h_i + h_j)` with a learned vector `v`.
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Concat,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraceConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dense: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub attention: Attention,
    pub combine: Combine,
    pub freeze_embedding: bool,
}

impl Default for GraceConfig {
    fn default() -> Self {
        GraceConfig {
            embed_dim: 200,
            hidden: 896,
            dense: 256,
            max_len: 150,
            dropout: 0.5,
            attention: Attention::Dot,
            combine: Combine::Concat,
            freeze_embedding: false,
        }
    }
}

impl GraceConfig {
    pub fn features(&self) -> usize {
        match self.combine {
            Combine::Concat => 2 * self.hidden,
            Combine::Sum => self.hidden,
        }
    }

    pub fn validate(&self) -> Result<(), GraceError> {
        if self.embed_dim == 0 || self.hidden == 0 || self.dense == 0 || self.max_len == 0 {
            return Err(GraceError::Config("dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GraceError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            batch_size: 256,
            patience: 3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// 1-based.
    pub stopped_epoch: usize,
    /// 1-based; the restored weights come from this epoch.
    pub best_epoch: usize,
}

impl fmt::Display for TrainTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch,train_loss,val_loss,val_accuracy")?;
        for i in 0..self.train_loss.len() {
            writeln!(
                f,
                "{},{},{},{}",
                i + 1,
                self.train_loss[i],
                self.val_loss.get(i).copied().unwrap_or(f64::NAN),
                self.val_accuracy.get(i).copied().unwrap_or(f64::NAN)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraceError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("row {row} has no valid (non-PAD) steps")]
    NoValidSteps { row: usize },
    #[error("row {row}: token index {index} outside vocabulary")]
    IndexOutOfRange { row: usize, index: usize },
    #[error("row {row}: mask does not match PAD positions")]
    MaskMismatch { row: usize },
    #[error("batch shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<TrainTrace> },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("review {0} has not been tokenized")]
    Untokenized(String),
    #[error("embedding has dim {found}, model expects {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("model vocabulary does not match the expected vocabulary")]
    VocabMismatch,
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Every trainable tensor. Gradients and Adam moments share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GraceParams {
    pub embedding: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
    /// Empty unless attention is additive.
    pub attn_v: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl GraceParams {
    fn zeros(cfg: &GraceConfig, vocab: usize) -> Self {
        let (e, h, d, f) = (cfg.embed_dim, cfg.hidden, cfg.dense, cfg.features());
        let v = if cfg.attention == Attention::Additive { h } else { 0 };
        GraceParams {
            embedding: Array2::zeros((vocab, e)),
            w_z: Array2::zeros((e, h)),
            u_z: Array2::zeros((h, h)),
            b_z: Array1::zeros(h),
            w_r: Array2::zeros((e, h)),
            u_r: Array2::zeros((h, h)),
            b_r: Array1::zeros(h),
            w_h: Array2::zeros((e, h)),
            u_h: Array2::zeros((h, h)),
            b_h: Array1::zeros(h),
            attn_v: Array1::zeros(v),
            w1: Array2::zeros((f, d)),
            b1: Array1::zeros(d),
            w2: Array2::zeros((d, NUM_CLASSES)),
            b2: Array1::zeros(NUM_CLASSES),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named views in declaration order; the empty attention vector is skipped.
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let mut v = vec![
            ("embedding", self.embedding.view().into_dyn()),
            ("gru.w_z", self.w_z.view().into_dyn()),
            ("gru.u_z", self.u_z.view().into_dyn()),
            ("gru.b_z", self.b_z.view().into_dyn()),
            ("gru.w_r", self.w_r.view().into_dyn()),
            ("gru.u_r", self.u_r.view().into_dyn()),
            ("gru.b_r", self.b_r.view().into_dyn()),
            ("gru.w_h", self.w_h.view().into_dyn()),
            ("gru.u_h", self.u_h.view().into_dyn()),
            ("gru.b_h", self.b_h.view().into_dyn()),
            ("attn.v", self.attn_v.view().into_dyn()),
            ("dense1.w", self.w1.view().into_dyn()),
            ("dense1.b", self.b1.view().into_dyn()),
            ("output.w", self.w2.view().into_dyn()),
            ("output.b", self.b2.view().into_dyn()),
        ];
        v.retain(|(_, t)| !t.is_empty());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let GraceParams {
            embedding,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            attn_v,
            w1,
            b1,
            w2,
            b2,
        } = self;
        let mut v = vec![
            ("embedding", embedding.view_mut().into_dyn()),
            ("gru.w_z", w_z.view_mut().into_dyn()),
            ("gru.u_z", u_z.view_mut().into_dyn()),
            ("gru.b_z", b_z.view_mut().into_dyn()),
            ("gru.w_r", w_r.view_mut().into_dyn()),
            ("gru.u_r", u_r.view_mut().into_dyn()),
            ("gru.b_r", b_r.view_mut().into_dyn()),
            ("gru.w_h", w_h.view_mut().into_dyn()),
            ("gru.u_h", u_h.view_mut().into_dyn()),
            ("gru.b_h", b_h.view_mut().into_dyn()),
            ("attn.v", attn_v.view_mut().into_dyn()),
            ("dense1.w", w1.view_mut().into_dyn()),
            ("dense1.b", b1.view_mut().into_dyn()),
            ("output.w", w2.view_mut().into_dyn()),
            ("output.b", b2.view_mut().into_dyn()),
        ];
        v.retain(|(_, t)| !t.is_empty());
        v
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, k: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * k);
        }
    }

    fn add_scaled(&mut self, k: f64, other: &GraceParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(k, &b);
        }
    }

    fn quantize(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x as f32 as f64);
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }
}

fn glorot(rng: &mut seed::Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let d = Uniform::new_inclusive(-limit, limit);
    Array2::from_shape_simple_fn((rows, cols), || d.sample(rng))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probs: [f64; NUM_CLASSES],
}

impl Prediction {
    fn from_probs(p: ndarray::ArrayView1<f64>) -> Self {
        let probs = [p[0], p[1], p[2]];
        Prediction {
            label: Label::argmax(&probs),
            probs,
        }
    }
}

/// Sequences as their valid prefixes, truncated to `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub seqs: Vec<Vec<usize>>,
    pub labels: Vec<Label>,
}

impl EncodedSet {
    pub fn from_tokens<S: AsRef<str>>(
        vocab: &Vocabulary,
        docs: &[Vec<S>],
        labels: &[Label],
        max_len: usize,
    ) -> Result<Self, GraceError> {
        if docs.len() != labels.len() {
            return Err(GraceError::Shape(format!("{} docs vs {} labels", docs.len(), labels.len())));
        }
        let seqs = encode_docs(vocab, docs, max_len)?;
        Ok(EncodedSet {
            seqs,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

fn encode_docs<S: AsRef<str>>(vocab: &Vocabulary, docs: &[Vec<S>], max_len: usize) -> Result<Vec<Vec<usize>>, GraceError> {
    docs.iter()
        .enumerate()
        .map(|(row, d)| {
            let (idx, mask) = vocab.encode_padded(d, max_len);
            let n = mask.iter().filter(|&&m| m).count();
            if n == 0 {
                return Err(GraceError::NoValidSteps { row });
            }
            Ok(idx[..n].to_vec())
        })
        .collect()
}

struct StepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    hc: Array2<f64>,
}

struct SeqCache {
    hs: Array2<f64>,
    attn: Array2<f64>,
}

struct Cache {
    steps: Vec<StepCache>,
    seqs: Vec<SeqCache>,
    drop_mask: Option<Array2<f64>>,
    dropped: Array2<f64>,
    a1: Array2<f64>,
    probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraceModel {
    pub config: GraceConfig,
    pub vocab: Vocabulary,
    pub params: GraceParams,
}

impl GraceModel {
    /// Random GRU/dense weights with the embedding copied from CBOW.
    pub fn new(config: GraceConfig, embedding: &EmbeddingMatrix, seed: u64) -> Result<Self, GraceError> {
        if embedding.dim() != config.embed_dim {
            return Err(GraceError::EmbeddingDim {
                expected: config.embed_dim,
                found: embedding.dim(),
            });
        }
        let mut m = Self::random(config, embedding.vocab.clone(), seed)?;
        m.params.embedding.assign(&embedding.vectors);
        m.params.embedding.row_mut(PAD).fill(0.0);
        m.params.quantize();
        Ok(m)
    }

    /// Every tensor random; the embedding uses the CBOW init range.
    pub fn random(config: GraceConfig, vocab: Vocabulary, seed: u64) -> Result<Self, GraceError> {
        config.validate()?;
        let (e, h, d, f) = (config.embed_dim, config.hidden, config.dense, config.features());
        let mut rng = seed::rng(seed);
        let mut p = GraceParams::zeros(&config, vocab.len());
        let half = 0.5 / e as f64;
        let ed = Uniform::new(-half, half);
        p.embedding.mapv_inplace(|_| ed.sample(&mut rng));
        p.embedding.row_mut(PAD).fill(0.0);
        p.w_z = glorot(&mut rng, e, h);
        p.u_z = glorot(&mut rng, h, h);
        p.w_r = glorot(&mut rng, e, h);
        p.u_r = glorot(&mut rng, h, h);
        p.w_h = glorot(&mut rng, e, h);
        p.u_h = glorot(&mut rng, h, h);
        if config.attention == Attention::Additive {
            p.attn_v = glorot(&mut rng, 1, h).row(0).to_owned();
        }
        p.w1 = glorot(&mut rng, f, d);
        p.w2 = glorot(&mut rng, d, NUM_CLASSES);
        p.quantize();
        Ok(GraceModel {
            config,
            vocab,
            params: p,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Converts padded index rows plus masks into valid prefixes.
    fn prefixes<'a>(&self, indices: &'a [Vec<usize>], masks: &[Vec<bool>]) -> Result<Vec<&'a [usize]>, GraceError> {
        if indices.len() != masks.len() {
            return Err(GraceError::Shape(format!("{} rows vs {} masks", indices.len(), masks.len())));
        }
        indices
            .iter()
            .zip(masks)
            .enumerate()
            .map(|(row, (idx, mask))| {
                if idx.len() != mask.len() {
                    return Err(GraceError::MaskMismatch { row });
                }
                let n = mask.iter().take_while(|&&m| m).count();
                if mask[n..].iter().any(|&m| m) {
                    return Err(GraceError::MaskMismatch { row });
                }
                if n == 0 {
                    return Err(GraceError::NoValidSteps { row });
                }
                for (t, &i) in idx.iter().enumerate() {
                    if i >= self.vocab.len() {
                        return Err(GraceError::IndexOutOfRange { row, index: i });
                    }
                    if (i == PAD) == mask[t] {
                        return Err(GraceError::MaskMismatch { row });
                    }
                }
                Ok(&idx[..n])
            })
            .collect()
    }

    fn attention_scores(&self, hs: &Array2<f64>) -> Array2<f64> {
        let l = hs.nrows();
        match self.config.attention {
            Attention::Dot => hs.dot(&hs.t()) / (self.config.hidden as f64).sqrt(),
            Attention::Additive => {
                let v = &self.params.attn_v;
                Array2::from_shape_fn((l, l), |(i, j)| {
                    hs.row(i)
                        .iter()
                        .zip(hs.row(j))
                        .zip(v)
                        .map(|((a, b), vk)| vk * (a + b).tanh())
                        .sum()
                })
            }
        }
    }

    /// `first` is the position of `seqs[0]` within the logical batch, used
    /// to key per-example dropout masks.
    fn forward_cached(&self, seqs: &[&[usize]], dropout: Option<(u64, usize)>) -> Cache {
        let p = &self.params;
        let (b, e, h) = (seqs.len(), self.config.embed_dim, self.config.hidden);
        let t_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);

        let mut steps = Vec::with_capacity(t_max);
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(t_max);
        let mut h_prev = Array2::<f64>::zeros((b, h));
        for t in 0..t_max {
            let mut x = Array2::zeros((b, e));
            for (row, s) in seqs.iter().enumerate() {
                let idx = s.get(t).copied().unwrap_or(PAD);
                x.row_mut(row).assign(&p.embedding.row(idx));
            }
            let mut z = x.dot(&p.w_z) + h_prev.dot(&p.u_z) + &p.b_z;
            z.mapv_inplace(sigmoid);
            let mut r = x.dot(&p.w_r) + h_prev.dot(&p.u_r) + &p.b_r;
            r.mapv_inplace(sigmoid);
            let rh = &r * &h_prev;
            let mut hc = x.dot(&p.w_h) + rh.dot(&p.u_h) + &p.b_h;
            hc.mapv_inplace(f64::tanh);
            let h_new = &h_prev + &(&z * &(&hc - &h_prev));
            outputs.push(h_new.clone());
            steps.push(StepCache {
                x,
                h_prev: std::mem::replace(&mut h_prev, h_new),
                z,
                r,
                hc,
            });
        }

        let f = self.config.features();
        let mut pooled = Array2::zeros((b, f));
        let mut seq_caches = Vec::with_capacity(b);
        for (row, s) in seqs.iter().enumerate() {
            let l = s.len();
            let mut hs = Array2::zeros((l, h));
            for t in 0..l {
                hs.row_mut(t).assign(&outputs[t].row(row));
            }
            let mut attn = self.attention_scores(&hs);
            softmax_rows(&mut attn);
            let c = attn.dot(&hs);
            let mean_h = hs.mean_axis(Axis(0)).expect("non-empty");
            let mean_c = c.mean_axis(Axis(0)).expect("non-empty");
            let feat = match self.config.combine {
                Combine::Concat => concatenate![Axis(0), mean_h, mean_c],
                Combine::Sum => mean_h + mean_c,
            };
            pooled.row_mut(row).assign(&feat);
            seq_caches.push(SeqCache { hs, attn });
        }

        let drop_mask = dropout.filter(|_| self.config.dropout > 0.0).map(|(seed, first)| {
            let keep = 1.0 - self.config.dropout;
            let mut m = Array2::zeros((b, f));
            for row in 0..b {
                let mut rng = seed::rng(seed::derive(seed, "dropout", (first + row) as u64));
                for v in m.row_mut(row) {
                    *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
            }
            m
        });
        let dropped = match &drop_mask {
            Some(m) => &pooled * m,
            None => pooled.clone(),
        };
        let mut a1 = dropped.dot(&p.w1) + &p.b1;
        a1.mapv_inplace(|x| x.max(0.0));
        let mut probs = a1.dot(&p.w2) + &p.b2;
        softmax_rows(&mut probs);
        Cache {
            steps,
            seqs: seq_caches,
            drop_mask,
            dropped,
            a1,
            probs,
        }
    }

    fn backward(&self, seqs: &[&[usize]], cache: &Cache, labels: &[[f64; NUM_CLASSES]], scale: f64) -> GraceParams {
        let p = &self.params;
        let mut g = p.zeros_like();
        let (b, h) = (seqs.len(), self.config.hidden);

        // d loss / d logits, with the clamp's zero slope honoured.
        let mut dlogits = Array2::zeros((b, NUM_CLASSES));
        for row in 0..b {
            for c in 0..NUM_CLASSES {
                let y = labels[row][c];
                if y == 0.0 || cache.probs[[row, c]] < PROB_FLOOR {
                    continue;
                }
                for k in 0..NUM_CLASSES {
                    let ind = if k == c { 1.0 } else { 0.0 };
                    dlogits[[row, k]] += y * (cache.probs[[row, k]] - ind) * scale;
                }
            }
        }
        g.w2 = cache.a1.t().dot(&dlogits);
        g.b2 = dlogits.sum_axis(Axis(0));
        let mut da1 = dlogits.dot(&p.w2.t());
        da1.zip_mut_with(&cache.a1, |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        g.w1 = cache.dropped.t().dot(&da1);
        g.b1 = da1.sum_axis(Axis(0));
        let mut dpooled = da1.dot(&p.w1.t());
        if let Some(m) = &cache.drop_mask {
            dpooled *= m;
        }

        let t_max = cache.steps.len();
        let mut dh_out: Vec<Array2<f64>> = (0..t_max).map(|_| Array2::zeros((b, h))).collect();
        let sqrt_h = (h as f64).sqrt();
        for (row, sc) in cache.seqs.iter().enumerate() {
            let l = sc.hs.nrows();
            let dp = dpooled.row(row);
            let (dh_direct, dc) = match self.config.combine {
                Combine::Concat => (dp.slice(s![..h]).to_owned(), dp.slice(s![h..]).to_owned()),
                Combine::Sum => (dp.to_owned(), dp.to_owned()),
            };
            let inv_l = 1.0 / l as f64;
            let dc_rows = Array2::from_shape_fn((l, h), |(_, k)| dc[k] * inv_l);
            let mut dhs = Array2::from_shape_fn((l, h), |(_, k)| dh_direct[k] * inv_l);
            // C = A·Hs
            let da = dc_rows.dot(&sc.hs.t());
            dhs += &sc.attn.t().dot(&dc_rows);
            let mut ds = Array2::zeros((l, l));
            for i in 0..l {
                let dot: f64 = (0..l).map(|k| sc.attn[[i, k]] * da[[i, k]]).sum();
                for j in 0..l {
                    ds[[i, j]] = sc.attn[[i, j]] * (da[[i, j]] - dot);
                }
            }
            match self.config.attention {
                Attention::Dot => {
                    let sym = &ds + &ds.t();
                    dhs += &(sym.dot(&sc.hs) / sqrt_h);
                }
                Attention::Additive => {
                    let v = &p.attn_v;
                    for i in 0..l {
                        for j in 0..l {
                            let w = ds[[i, j]];
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..h {
                                let tk = (sc.hs[[i, k]] + sc.hs[[j, k]]).tanh();
                                g.attn_v[k] += w * tk;
                                let gk = w * v[k] * (1.0 - tk * tk);
                                dhs[[i, k]] += gk;
                                dhs[[j, k]] += gk;
                            }
                        }
                    }
                }
            }
            for t in 0..l {
                let mut d = dh_out[t].row_mut(row);
                d += &dhs.row(t);
            }
        }

        let mut dh_next = Array2::<f64>::zeros((b, h));
        for t in (0..t_max).rev() {
            let st = &cache.steps[t];
            let dh = &dh_out[t] + &dh_next;
            let dz = &dh * &(&st.hc - &st.h_prev);
            let dhc = &dh * &st.z;
            let mut dh_prev = &dh * &st.z.mapv(|z| 1.0 - z);
            let da_h = &dhc * &st.hc.mapv(|x| 1.0 - x * x);
            let rh = &st.r * &st.h_prev;
            general_mat_mul(1.0, &st.x.t(), &da_h, 1.0, &mut g.w_h);
            general_mat_mul(1.0, &rh.t(), &da_h, 1.0, &mut g.u_h);
            g.b_h += &da_h.sum_axis(Axis(0));
            let drh = da_h.dot(&p.u_h.t());
            let dr = &drh * &st.h_prev;
            dh_prev += &(&drh * &st.r);
            let da_z = &dz * &st.z.mapv(|z| z * (1.0 - z));
            let da_r = &dr * &st.r.mapv(|r| r * (1.0 - r));
            general_mat_mul(1.0, &st.x.t(), &da_z, 1.0, &mut g.w_z);
            general_mat_mul(1.0, &st.h_prev.t(), &da_z, 1.0, &mut g.u_z);
            g.b_z += &da_z.sum_axis(Axis(0));
            general_mat_mul(1.0, &st.x.t(), &da_r, 1.0, &mut g.w_r);
            general_mat_mul(1.0, &st.h_prev.t(), &da_r, 1.0, &mut g.u_r);
            g.b_r += &da_r.sum_axis(Axis(0));
            general_mat_mul(1.0, &da_z, &p.u_z.t(), 1.0, &mut dh_prev);
            general_mat_mul(1.0, &da_r, &p.u_r.t(), 1.0, &mut dh_prev);
            if !self.config.freeze_embedding {
                let dx = da_z.dot(&p.w_z.t()) + da_r.dot(&p.w_r.t()) + da_h.dot(&p.w_h.t());
                for (row, s) in seqs.iter().enumerate() {
                    if let Some(&idx) = s.get(t) {
                        let mut e = g.embedding.row_mut(idx);
                        e += &dx.row(row);
                    }
                }
            }
            dh_next = dh_prev;
        }
        g.embedding.row_mut(PAD).fill(0.0);
        g
    }

    fn probs_for(&self, seqs: &[&[usize]]) -> Array2<f64> {
        let mut out = Array2::zeros((seqs.len(), NUM_CLASSES));
        for (ci, chunk) in seqs.chunks(CHUNK).enumerate() {
            let c = self.forward_cached(chunk, None);
            out.slice_mut(s![ci * CHUNK..ci * CHUNK + chunk.len(), ..]).assign(&c.probs);
        }
        out
    }

    /// Class probabilities for padded index rows. Dropout applies only when
    /// `dropout_seed` is given (training mode).
    pub fn forward(
        &self,
        indices: &[Vec<usize>],
        masks: &[Vec<bool>],
        dropout_seed: Option<u64>,
    ) -> Result<Array2<f64>, GraceError> {
        let seqs = self.prefixes(indices, masks)?;
        match dropout_seed {
            None => Ok(self.probs_for(&seqs)),
            Some(s) => {
                let mut out = Array2::zeros((seqs.len(), NUM_CLASSES));
                for (ci, chunk) in seqs.chunks(CHUNK).enumerate() {
                    let c = self.forward_cached(chunk, Some((s, ci * CHUNK)));
                    out.slice_mut(s![ci * CHUNK..ci * CHUNK + chunk.len(), ..]).assign(&c.probs);
                }
                Ok(out)
            }
        }
    }

    fn loss_grad_seqs(
        &self,
        seqs: &[&[usize]],
        labels: &[[f64; NUM_CLASSES]],
        dropout_seed: Option<u64>,
    ) -> (f64, GraceParams) {
        let n = seqs.len() as f64;
        let mut total = self.params.zeros_like();
        let mut loss = 0.0;
        for (ci, (chunk, ys)) in seqs.chunks(CHUNK).zip(labels.chunks(CHUNK)).enumerate() {
            let cache = self.forward_cached(chunk, dropout_seed.map(|s| (s, ci * CHUNK)));
            loss += cross_entropy_sum(&cache.probs, ys);
            let g = self.backward(chunk, &cache, ys, 1.0 / n);
            total.add_scaled(1.0, &g);
        }
        (loss / n, total)
    }

    /// Mean cross-entropy over the batch and its gradient for every tensor.
    pub fn loss_and_gradients(
        &self,
        indices: &[Vec<usize>],
        masks: &[Vec<bool>],
        labels: &[[f64; NUM_CLASSES]],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GraceParams), GraceError> {
        let seqs = self.prefixes(indices, masks)?;
        if labels.len() != seqs.len() {
            return Err(GraceError::Shape(format!("{} rows vs {} labels", seqs.len(), labels.len())));
        }
        let (loss, g) = self.loss_grad_seqs(&seqs, labels, dropout_seed);
        if let Some(param) = g.first_non_finite() {
            return Err(GraceError::NonFiniteGradient { param: param.into() });
        }
        Ok((loss, g))
    }

    pub fn loss(
        &self,
        indices: &[Vec<usize>],
        masks: &[Vec<bool>],
        labels: &[[f64; NUM_CLASSES]],
        dropout_seed: Option<u64>,
    ) -> Result<f64, GraceError> {
        let probs = self.forward(indices, masks, dropout_seed)?;
        Ok(cross_entropy_sum(&probs, labels) / labels.len() as f64)
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, docs: &[Vec<S>]) -> Result<Vec<Prediction>, GraceError> {
        let seqs = encode_docs(&self.vocab, docs, self.config.max_len)?;
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let probs = self.probs_for(&refs);
        Ok(probs.rows().into_iter().map(Prediction::from_probs).collect())
    }

    pub fn predict_reviews(&self, reviews: &[Review]) -> Result<Vec<Prediction>, GraceError> {
        let docs: Vec<&Vec<String>> = reviews
            .iter()
            .map(|r| r.tokens.as_ref().ok_or_else(|| GraceError::Untokenized(r.review_id.clone())))
            .collect::<Result<_, _>>()?;
        let docs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
        self.predict_tokens(&docs)
    }

    fn evaluate_set(&self, set: &EncodedSet) -> (f64, f64) {
        let refs: Vec<&[usize]> = set.seqs.iter().map(Vec::as_slice).collect();
        let probs = self.probs_for(&refs);
        let ys: Vec<[f64; NUM_CLASSES]> = set.labels.iter().map(|l| l.one_hot()).collect();
        let loss = cross_entropy_sum(&probs, &ys) / set.len() as f64;
        let correct = probs
            .rows()
            .into_iter()
            .zip(&set.labels)
            .filter(|(p, l)| Prediction::from_probs(p.view()).label == **l)
            .count();
        (loss, correct as f64 / set.len() as f64)
    }

    /// Accuracy of argmax predictions on `set`.
    pub fn accuracy(&self, set: &EncodedSet) -> f64 {
        self.evaluate_set(set).1
    }

    pub fn to_model_file(&self) -> ModelFile {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| Tensor::from_f64(name, t.shape(), t.iter().copied()))
            .collect();
        ModelFile {
            kind: ModelKind::Grace,
            config_json,
            vocab: self.vocab.tokens().to_vec(),
            tensors,
        }
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self, GraceError> {
        file.expect_kind(ModelKind::Grace)?;
        let config: GraceConfig =
            serde_json::from_str(&file.config_json).map_err(|e| ContainerError::Config(e.to_string()))?;
        config.validate()?;
        let vocab = Vocabulary::from_tokens(file.vocab.clone()).map_err(|_| GraceError::VocabMismatch)?;
        let mut params = GraceParams::zeros(&config, vocab.len());
        for (name, mut t) in params.tensors_mut() {
            let shape = t.shape().to_vec();
            let src = file.tensor(name, &shape)?;
            for (d, s) in t.iter_mut().zip(&src.data) {
                *d = f64::from(*s);
            }
        }
        Ok(GraceModel { config, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), GraceError> {
        Ok(self.to_model_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, GraceError> {
        Self::from_model_file(&ModelFile::load(path)?)
    }

    /// Loads and checks the vocabulary against an expected hash.
    pub fn load_expecting(path: &Path, vocab_hash: &[u8; 32]) -> Result<Self, GraceError> {
        let m = Self::load(path)?;
        if &m.vocab.hash() != vocab_hash {
            return Err(GraceError::VocabMismatch);
        }
        Ok(m)
    }
}

fn cross_entropy_sum(probs: &Array2<f64>, labels: &[[f64; NUM_CLASSES]]) -> f64 {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, y)| -(0..NUM_CLASSES).map(|c| y[c] * p[c].max(PROB_FLOOR).ln()).sum::<f64>())
        .sum()
}

/// Patience-based stopping on a strictly improving validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's loss; true when training should stop now.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        self.epoch - self.best_epoch >= self.patience
    }

    pub fn improved_last(&self) -> bool {
        self.best_epoch == self.epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// `(stopped_epoch, best_epoch)` for a scripted loss sequence, both 1-based.
pub fn early_stopping_outcome(val_losses: &[f64], patience: usize) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    for (i, &l) in val_losses.iter().enumerate() {
        if es.observe(l) {
            return (i + 1, es.best_epoch());
        }
    }
    (val_losses.len(), es.best_epoch())
}

struct Adam {
    m: GraceParams,
    v: GraceParams,
    t: i32,
}

impl Adam {
    fn new(p: &GraceParams) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut GraceParams, grads: &GraceParams, cfg: &TrainConfig, skip_embedding: bool) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let it = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((name, mut p), (_, g)), (_, mut m)), (_, mut v)) in it {
            if skip_embedding && name == "embedding" {
                continue;
            }
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *p -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                });
        }
    }
}

/// Trains in place, restoring the best-validation weights. Stops after
/// `patience` epochs without strict improvement or at `epochs`.
pub fn train(
    model: &mut GraceModel,
    train_set: &EncodedSet,
    val_set: &EncodedSet,
    cfg: &TrainConfig,
) -> Result<TrainTrace, GraceError> {
    train_with_progress(model, train_set, val_set, cfg, |_, _| {})
}

pub fn train_with_progress(
    model: &mut GraceModel,
    train_set: &EncodedSet,
    val_set: &EncodedSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainTrace),
) -> Result<TrainTrace, GraceError> {
    if train_set.is_empty() {
        return Err(GraceError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(GraceError::EmptySet("validation"));
    }
    if cfg.batch_size == 0 || cfg.patience == 0 {
        return Err(GraceError::Config("batch_size and patience must be >= 1".into()));
    }
    let vocab_len = model.vocab.len();
    for s in train_set.seqs.iter().chain(&val_set.seqs) {
        if let Some(&bad) = s.iter().find(|&&i| i >= vocab_len || i == PAD) {
            return Err(GraceError::IndexOutOfRange { row: 0, index: bad });
        }
    }

    let mut adam = Adam::new(&model.params);
    let mut es = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = batch.iter().map(|&i| train_set.seqs[i].as_slice()).collect();
            let ys: Vec<[f64; NUM_CLASSES]> = batch.iter().map(|&i| train_set.labels[i].one_hot()).collect();
            let (loss, mut g) = model.loss_grad_seqs(&seqs, &ys, Some(seed::derive(cfg.seed, "dropout", step)));
            step += 1;
            if !loss.is_finite() {
                trace.train_loss.push(loss);
                trace.stopped_epoch = epoch;
                return Err(GraceError::Diverged {
                    epoch,
                    trace: Box::new(trace),
                });
            }
            if let Some(param) = g.first_non_finite() {
                return Err(GraceError::NonFiniteGradient { param: param.into() });
            }
            let norm = g.global_norm();
            if norm > cfg.clip_norm {
                g.scale(cfg.clip_norm / norm);
            }
            adam.step(&mut model.params, &g, cfg, model.config.freeze_embedding);
            model.params.embedding.row_mut(PAD).fill(0.0);
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_acc) = model.evaluate_set(val_set);
        trace.train_loss.push(loss_sum / train_set.len() as f64);
        trace.val_loss.push(val_loss);
        trace.val_accuracy.push(val_acc);
        if !val_loss.is_finite() {
            trace.stopped_epoch = epoch;
            return Err(GraceError::Diverged {
                epoch,
                trace: Box::new(trace),
            });
        }
        let stop = es.observe(val_loss);
        if es.improved_last() {
            best = model.params.clone();
        }
        trace.stopped_epoch = epoch;
        trace.best_epoch = es.best_epoch();
        on_epoch(epoch, &trace);
        if stop {
            break;
        }
    }
    if trace.best_epoch > 0 {
        model.params = best;
    }
    model.params.quantize();
    Ok(trace)
}

/// Largest relative error per tensor between analytic gradients and central
/// differences of the full loss.
pub fn gradient_check(
    model: &GraceModel,
    indices: &[Vec<usize>],
    masks: &[Vec<bool>],
    labels: &[[f64; NUM_CLASSES]],
    dropout_seed: Option<u64>,
    eps: f64,
) -> Result<Vec<(String, f64)>, GraceError> {
    let (_, g) = model.loss_and_gradients(indices, masks, labels, dropout_seed)?;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (ti, (name, analytic)) in g.tensors().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = nth_mut(&mut probe.params, ti, k, None);
            nth_mut(&mut probe.params, ti, k, Some(orig + eps));
            let up = probe.loss(indices, masks, labels, dropout_seed)?;
            nth_mut(&mut probe.params, ti, k, Some(orig - eps));
            let down = probe.loss(indices, masks, labels, dropout_seed)?;
            nth_mut(&mut probe.params, ti, k, Some(orig));
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.iter().nth(k).copied().unwrap_or(0.0);
            worst = worst.max(crate::cbow::relative_error(a, numeric));
        }
        out.push((name.to_string(), worst));
    }
    Ok(out)
}

/// Reads (and optionally writes) the k-th element of the ti-th tensor.
fn nth_mut(p: &mut GraceParams, ti: usize, k: usize, set: Option<f64>) -> f64 {
    let mut tensors = p.tensors_mut();
    let (_, t) = &mut tensors[ti];
    let cell = t.iter_mut().nth(k).expect("index in range");
    let old = *cell;
    if let Some(v) = set {
        *cell = v;
    }
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_vocab(n: usize) -> Vocabulary {
        let mut t = vec!["<pad>".to_string(), "<unk>".to_string()];
        t.extend((0..n).map(|i| format!("w{i}")));
        Vocabulary::from_tokens(t).unwrap()
    }

    fn tiny(attention: Attention, combine: Combine) -> GraceModel {
        let cfg = GraceConfig {
            embed_dim: 4,
            hidden: 3,
            dense: 5,
            max_len: 5,
            attention,
            combine,
            ..GraceConfig::default()
        };
        let mut m = GraceModel::random(cfg, tiny_vocab(6), 11).unwrap();
        // Larger embeddings than the CBOW init so gradients are well scaled.
        let mut rng = seed::rng(4);
        let d = Uniform::new(-0.8, 0.8);
        m.params.embedding.mapv_inplace(|_| d.sample(&mut rng));
        m.params.embedding.row_mut(PAD).fill(0.0);
        for b in [&mut m.params.b_z, &mut m.params.b_h, &mut m.params.b1] {
            b.mapv_inplace(|_| d.sample(&mut rng));
        }
        m
    }

    fn batch() -> (Vec<Vec<usize>>, Vec<Vec<bool>>, Vec<[f64; 3]>) {
        let idx = vec![vec![2, 5, 3, 7, 4], vec![6, 1, 2, 0, 0]];
        let mask = idx.iter().map(|r| r.iter().map(|&i| i != PAD).collect()).collect();
        (idx, mask, vec![Label::Pb.one_hot(), Label::Pir.one_hot()])
    }

    #[test]
    fn gradient_check_all_variants() {
        let (idx, mask, ys) = batch();
        for att in [Attention::Dot, Attention::Additive] {
            for comb in [Combine::Concat, Combine::Sum] {
                let m = tiny(att, comb);
                for (name, err) in gradient_check(&m, &idx, &mask, &ys, Some(3), 1e-6).unwrap() {
                    assert!(err < 1e-3, "{att:?}/{comb:?} {name}: {err}");
                }
            }
        }
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let mut m = tiny(Attention::Dot, Combine::Concat);
        m.params = m.params.zeros_like();
        let (idx, mask, ys) = batch();
        let p = m.forward(&idx, &mask, None).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let loss = m.loss(&idx, &mask, &ys, None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rows_are_distributions_and_inference_is_deterministic() {
        let m = tiny(Attention::Dot, Combine::Concat);
        let (idx, mask, _) = batch();
        let a = m.forward(&idx, &mask, None).unwrap();
        let b = m.forward(&idx, &mask, None).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn invalid_batches_rejected() {
        let m = tiny(Attention::Dot, Combine::Concat);
        let r = m.forward(&[vec![0, 0]], &[vec![false, false]], None);
        assert!(matches!(r, Err(GraceError::NoValidSteps { row: 0 })));
        let r = m.forward(&[vec![2, 0]], &[vec![true, true]], None);
        assert!(matches!(r, Err(GraceError::MaskMismatch { .. })));
        let r = m.forward(&[vec![99]], &[vec![true]], None);
        assert!(matches!(r, Err(GraceError::IndexOutOfRange { .. })));
    }

    #[test]
    fn early_stopping_examples() {
        assert_eq!(early_stopping_outcome(&[1.0, 0.9, 0.95, 0.96, 0.97], 3), (5, 2));
        assert_eq!(early_stopping_outcome(&[1.0, 1.0, 1.0, 1.0], 3), (4, 1));
        assert_eq!(early_stopping_outcome(&[3.0, 2.0, 1.0], 3), (3, 3));
    }

    #[test]
    fn predictions_follow_argmax_and_ties() {
        let p = Prediction::from_probs(ndarray::arr1(&[0.2, 0.5, 0.3]).view());
        assert_eq!(p.label, Label::Pb);
        let t = Prediction::from_probs(ndarray::arr1(&[1.0 / 3.0; 3]).view());
        assert_eq!(t.label, Label::Pfr);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let m = tiny(Attention::Additive, Combine::Concat);
        let mut m = m;
        m.params.quantize();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        m.save(&path).unwrap();
        let back = GraceModel::load(&path).unwrap();
        assert_eq!(back, m);
        let (idx, mask, _) = batch();
        assert_eq!(m.forward(&idx, &mask, None).unwrap(), back.forward(&idx, &mask, None).unwrap());
        assert!(GraceModel::load_expecting(&path, &[0; 32]).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(GraceModel::load(&path).is_err());
    }

    #[test]
    fn full_size_shapes() {
        let cfg = GraceConfig::default();
        let m = GraceModel::random(cfg.clone(), tiny_vocab(8), 1).unwrap();
        let (v, e, h, d) = (10, 200, 896, 256);
        let expected = v * e + 3 * (e * h + h * h + h) + 2 * h * d + d + d * 3 + 3;
        assert_eq!(m.param_count(), expected);
        let p = m.predict_tokens(&[vec!["w1", "w2", "w3"]]).unwrap();
        assert!((p[0].probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn memorizes_small_set() {
        let vocab = tiny_vocab(30);
        let cfg = GraceConfig {
            embed_dim: 8,
            hidden: 8,
            dense: 8,
            max_len: 10,
            ..GraceConfig::default()
        };
        let mut m = GraceModel::random(cfg, vocab.clone(), 2).unwrap();
        let mut rng = seed::rng(8);
        let docs: Vec<Vec<String>> = (0..24)
            .map(|_| (0..rng.gen_range(2..8)).map(|_| format!("w{}", rng.gen_range(0..30))).collect())
            .collect();
        let labels: Vec<Label> = (0..24).map(|i| Label::from_code(i % 3).unwrap()).collect();
        let set = EncodedSet::from_tokens(&vocab, &docs, &labels, 10).unwrap();
        let tc = TrainConfig {
            epochs: 200,
            batch_size: 8,
            patience: 200,
            lr: 1e-2,
            seed: 1,
            ..TrainConfig::default()
        };
        let trace = train(&mut m, &set, &set, &tc).unwrap();
        assert_eq!(m.accuracy(&set), 1.0, "{trace}");
        assert!(trace.best_epoch <= trace.stopped_epoch);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn padding_never_changes_output(
            seq in proptest::collection::vec(1usize..8, 1..5),
            extra in 1usize..6,
        ) {
            let m = tiny(Attention::Dot, Combine::Concat);
            let mask = vec![true; seq.len()];
            let mut padded = seq.clone();
            padded.extend(std::iter::repeat(PAD).take(extra));
            let mut pmask = mask.clone();
            pmask.extend(std::iter::repeat(false).take(extra));
            let a = m.forward(&[seq], &[mask], None).unwrap();
            let b = m.forward(&[padded], &[pmask], None).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn early_stopping_definition(
            losses in proptest::collection::vec(0u8..6, 1..30),
            patience in 1usize..5,
        ) {
            let losses: Vec<f64> = losses.iter().map(|&l| l as f64).collect();
            let (stop, best) = early_stopping_outcome(&losses, patience);
            prop_assert!(best >= 1 && best <= stop && stop <= losses.len());
            let seen = &losses[..stop];
            let min = seen.iter().copied().fold(f64::INFINITY, f64::min);
            let first_min = seen.iter().position(|&l| l == min).unwrap() + 1;
            prop_assert_eq!(best, first_min);
            if stop < losses.len() {
                prop_assert_eq!(stop - best, patience);
            } else {
                prop_assert!(stop - best <= patience);
            }
        }

        #[test]
        fn batch_equals_sequential(n in 1usize..6, s in any::<u64>()) {
            let m = tiny(Attention::Dot, Combine::Sum);
            let mut rng = seed::rng(s);
            let docs: Vec<Vec<String>> = (0..n)
                .map(|_| (0..rng.gen_range(1..6)).map(|_| format!("w{}", rng.gen_range(0..6))).collect())
                .collect();
            let all = m.predict_tokens(&docs).unwrap();
            for (d, p) in docs.iter().zip(&all) {
                let one = m.predict_tokens(std::slice::from_ref(d)).unwrap();
                for c in 0..3 {
                    prop_assert!((one[0].probs[c] - p.probs[c]).abs() < 1e-12);
                }
            }
        }
    }
}
