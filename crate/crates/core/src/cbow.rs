//! CBOW word embeddings trained with negative sampling.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::seed;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_DIM: usize = 200;
pub const DEFAULT_MAX_LEN: usize = 150;

#[derive(Debug, thiserror::Error)]
pub enum CbowError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    pub min_count: u64,
}

impl Vocabulary {
    /// Indices ordered by frequency (desc) then token; PAD and UNK first.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: u64) -> Result<Self, CbowError> {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in corpus {
            for t in doc {
                *freq.entry(t.as_ref()).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(CbowError::EmptyCorpus);
        }
        let mut unk = 0;
        let mut kept: Vec<(&str, u64)> = Vec::new();
        for (t, c) in freq {
            if c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN {
                kept.push((t, c));
            } else {
                unk += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, unk];
        for (t, c) in kept {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts, min_count))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            counts,
            min_count,
        }
    }

    /// Rebuilds a vocabulary from its ordered token list (counts unknown).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CbowError> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(CbowError::Format {
                line: 0,
                message: "vocabulary must start with <pad>, <unk>".into(),
            });
        }
        let n = tokens.len();
        let v = Self::from_parts(tokens, vec![0; n], 0);
        if v.index.len() != n {
            return Err(CbowError::Format {
                line: 0,
                message: "duplicate token in vocabulary".into(),
            });
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    /// Head-truncated, PAD-post-padded indices plus validity mask.
    pub fn encode_padded<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> (Vec<usize>, Vec<bool>) {
        let mut idx: Vec<usize> = tokens.iter().take(max_len).map(|t| self.encode(t.as_ref())).collect();
        let valid = idx.len();
        idx.resize(max_len, PAD);
        let mask = (0..max_len).map(|i| i < valid).collect();
        (idx, mask)
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> [u8; 32] {
        crate::container::vocab_hash(&self.tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: DEFAULT_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            min_count: 2,
            seed: 0,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self) -> Result<(), CbowError> {
        let bad = |m: &str| Err(CbowError::Config(m.into()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if !(self.initial_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return bad("need 0 < min_lr <= initial_lr");
        }
        Ok(())
    }
}

/// Input (context) and output (prediction) matrices, both |V|×dim.
#[derive(Debug, Clone, PartialEq)]
pub struct CbowModel {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
}

impl CbowModel {
    /// Input uniform in (−0.5/dim, 0.5/dim), output zero, PAD row zero.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let half = 0.5 / dim as f64;
        let dist = Uniform::new(-half, half);
        let mut input = Array2::from_shape_simple_fn((vocab_size, dim), || dist.sample(&mut rng));
        input.row_mut(PAD).fill(0.0);
        CbowModel {
            input,
            output: Array2::zeros((vocab_size, dim)),
        }
    }
}

/// One training example: context rows predict `center` against `negatives`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbowExample {
    pub context: Vec<usize>,
    pub center: usize,
    pub negatives: Vec<usize>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// −log σ(x) computed without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn context_mean(model: &CbowModel, ctx: &[usize]) -> Array1<f64> {
    let mut h = Array1::zeros(model.input.ncols());
    for &c in ctx {
        h += &model.input.row(c);
    }
    h / ctx.len() as f64
}

/// Negative-sampling logistic loss of one example.
pub fn example_loss(model: &CbowModel, ex: &CbowExample) -> f64 {
    let h = context_mean(model, &ex.context);
    let mut loss = neg_log_sigmoid(model.output.row(ex.center).dot(&h));
    for &n in &ex.negatives {
        loss += neg_log_sigmoid(-model.output.row(n).dot(&h));
    }
    loss
}

/// Sparse gradient: (row, d loss / d row) pairs; rows may repeat.
pub struct SparseGrad {
    pub input: Vec<(usize, Array1<f64>)>,
    pub output: Vec<(usize, Array1<f64>)>,
}

pub fn example_gradients(model: &CbowModel, ex: &CbowExample) -> (f64, SparseGrad) {
    let h = context_mean(model, &ex.context);
    let mut dh = Array1::zeros(h.len());
    let mut output = Vec::with_capacity(1 + ex.negatives.len());
    let mut loss = 0.0;
    let targets = std::iter::once((ex.center, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)));
    for (row, label) in targets {
        let u: ArrayView1<f64> = model.output.row(row);
        let s = u.dot(&h);
        loss += if label == 1.0 { neg_log_sigmoid(s) } else { neg_log_sigmoid(-s) };
        let g = sigmoid(s) - label;
        dh.scaled_add(g, &u);
        output.push((row, &h * g));
    }
    let share = dh / ex.context.len() as f64;
    let input = ex.context.iter().map(|&c| (c, share.clone())).collect();
    (loss, SparseGrad { input, output })
}

/// Largest relative error between analytic and central-difference gradients
/// over every entry of both matrices.
pub fn gradient_check(model: &CbowModel, ex: &CbowExample, eps: f64) -> f64 {
    let (_, sparse) = example_gradients(model, ex);
    let mut g_in = Array2::<f64>::zeros(model.input.raw_dim());
    let mut g_out = Array2::<f64>::zeros(model.output.raw_dim());
    for (r, g) in &sparse.input {
        let mut row = g_in.row_mut(*r);
        row += g;
    }
    for (r, g) in &sparse.output {
        let mut row = g_out.row_mut(*r);
        row += g;
    }
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for which in 0..2 {
        let shape = model.input.raw_dim();
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                let m = if which == 0 { &mut probe.input } else { &mut probe.output };
                let orig = m[[i, j]];
                m[[i, j]] = orig + eps;
                let up = example_loss(&probe, ex);
                let m = if which == 0 { &mut probe.input } else { &mut probe.output };
                m[[i, j]] = orig - eps;
                let down = example_loss(&probe, ex);
                let m = if which == 0 { &mut probe.input } else { &mut probe.output };
                m[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = if which == 0 { g_in[[i, j]] } else { g_out[[i, j]] };
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
    }
    worst
}

/// |a − b| / max(|a|, |b|, 1e-6).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbowTrace {
    /// Mean example loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub examples_per_epoch: usize,
}

/// Input-side embedding table paired with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vocab: Vocabulary,
    pub vectors: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Indices, mask and the max_len×dim embedded sequence.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Lookup {
        let (indices, mask) = self.vocab.encode_padded(tokens, max_len);
        let mut embedded = Array2::zeros((max_len, self.dim()));
        for (t, &i) in indices.iter().enumerate() {
            embedded.row_mut(t).assign(&self.vectors.row(i));
        }
        Lookup {
            indices,
            mask,
            embedded,
        }
    }

    /// Text format: `vocab_size dim` header, then `token v1 ... vdim` rows
    /// with values written as 32-bit floats.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.vocab.len(), self.dim())?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            write!(w, "{tok}")?;
            for v in self.vectors.row(i) {
                write!(w, " {}", *v as f32)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CbowError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, CbowError> {
        let mut lines = r.lines();
        let fmt_err = |line: usize, message: String| CbowError::Format { line, message };
        let header = lines.next().ok_or_else(|| fmt_err(1, "missing header".into()))??;
        let mut hp = header.split_whitespace().map(str::parse::<usize>);
        let (n, dim) = match (hp.next(), hp.next(), hp.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) if d > 0 => (n, d),
            _ => return Err(fmt_err(1, format!("bad header {header:?}"))),
        };
        let mut tokens = Vec::with_capacity(n);
        let mut vectors = Array2::zeros((n, dim));
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| fmt_err(i + 2, "fewer rows than header declares".into()))??;
            let mut parts = line.split(' ');
            let tok = parts.next().unwrap_or_default();
            tokens.push(tok.to_string());
            let mut k = 0;
            for p in parts {
                if k >= dim {
                    return Err(fmt_err(i + 2, "too many values".into()));
                }
                let v: f32 = p.parse().map_err(|_| fmt_err(i + 2, format!("bad value {p:?}")))?;
                vectors[[i, k]] = f64::from(v);
                k += 1;
            }
            if k != dim {
                return Err(fmt_err(i + 2, format!("expected {dim} values, got {k}")));
            }
        }
        let vocab = Vocabulary::from_tokens(tokens)?;
        Ok(EmbeddingMatrix { vocab, vectors })
    }

    pub fn load(path: &Path) -> Result<Self, CbowError> {
        Self::read_text(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
    pub embedded: Array2<f64>,
}

fn examples_for<'a>(
    doc: &'a [usize],
    window: usize,
) -> impl Iterator<Item = (usize, Vec<usize>)> + 'a {
    (0..doc.len()).filter_map(move |i| {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(doc.len());
        let ctx: Vec<usize> = (lo..hi).filter(|&j| j != i).map(|j| doc[j]).collect();
        (!ctx.is_empty()).then_some((doc[i], ctx))
    })
}

/// Trains with a fixed vocabulary. Sub-threshold tokens train the UNK row.
pub fn train_with_vocab<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: &Vocabulary,
    config: &CbowConfig,
) -> Result<(EmbeddingMatrix, CbowTrace), CbowError> {
    config.validate()?;
    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| d.iter().map(|t| vocab.encode(t.as_ref())).collect())
        .collect();
    let mut model = CbowModel::init(vocab.len(), config.dim, config.seed);

    let mut unigram: Vec<u64> = vec![0; vocab.len()];
    for d in &docs {
        for &t in d {
            unigram[t] += 1;
        }
    }
    let weights: Vec<f64> = unigram.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|_| CbowError::EmptyCorpus)?;
    let single_noise = weights.iter().filter(|&&w| w > 0.0).count() == 1;

    let per_epoch: usize = docs.iter().map(|d| examples_for(d, config.window).count()).sum();
    let total = (per_epoch * config.epochs).max(1) as f64;
    let mut rng = seed::rng(seed::derive(config.seed, "cbow-train", 0));
    let mut trace = CbowTrace {
        epoch_loss: Vec::with_capacity(config.epochs),
        examples_per_epoch: per_epoch,
    };
    let mut step = 0usize;
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        for doc in &docs {
            for (center, context) in examples_for(doc, config.window) {
                let negatives: Vec<usize> = (0..config.negatives)
                    .map(|_| loop {
                        let n = noise.sample(&mut rng);
                        if n != center {
                            break n;
                        }
                        if single_noise {
                            break n;
                        }
                    })
                    .collect();
                let ex = CbowExample {
                    context,
                    center,
                    negatives,
                };
                let lr = (config.initial_lr * (1.0 - step as f64 / total)).max(config.min_lr);
                let (loss, g) = example_gradients(&model, &ex);
                sum += loss;
                for (r, d) in &g.output {
                    model.output.row_mut(*r).scaled_add(-lr, d);
                }
                for (r, d) in &g.input {
                    model.input.row_mut(*r).scaled_add(-lr, d);
                }
                step += 1;
            }
        }
        model.input.row_mut(PAD).fill(0.0);
        trace.epoch_loss.push(if per_epoch == 0 { 0.0 } else { sum / per_epoch as f64 });
    }
    Ok((
        EmbeddingMatrix {
            vocab: vocab.clone(),
            vectors: model.input,
        },
        trace,
    ))
}

/// Builds the vocabulary from `corpus` and trains on it.
pub fn train_cbow<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &CbowConfig,
) -> Result<(EmbeddingMatrix, CbowTrace), CbowError> {
    let vocab = Vocabulary::build(corpus, config.min_count)?;
    train_with_vocab(corpus, &vocab, config)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d = a.dot(&b);
    let n = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if n == 0.0 {
        0.0
    } else {
        d / n
    }
}
