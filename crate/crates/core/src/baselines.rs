//! Classical reference models: TF-IDF or mean-CBOW document vectors fed to
//! SGD-trained one-vs-rest linear classifiers, plus a two-stage hierarchical
//! variant (privacy-related vs irrelevant, then feature request vs bug).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cbow::{EmbeddingMatrix, Vocabulary, UNK};
use crate::container::{ContainerError, ModelFile, ModelKind, Tensor};
use crate::label::{Label, NUM_CLASSES};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("empty training corpus")]
    Empty,
    #[error("{0} feature rows vs {1} labels")]
    Shape(usize, usize),
    #[error("training diverged (non-finite weights)")]
    Diverged,
    #[error("stage-2 training needs privacy-related examples")]
    NoPrivacyExamples,
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Sparse row: sorted `(feature index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVectorizer {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    pub idf: Vec<f64>,
    pub normalize: bool,
}

impl TfidfVectorizer {
    /// Terms sorted lexicographically; idf = ln((1+N)/(1+df)) + 1.
    pub fn fit<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<Self, BaselineError> {
        if docs.is_empty() {
            return Err(BaselineError::Empty);
        }
        let mut df: BTreeMap<&str, u64> = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<&str> = d.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let terms: Vec<String> = df.keys().map(|t| t.to_string()).collect();
        let idf = df.values().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        Ok(Self::from_parts(terms, idf))
    }

    fn from_parts(terms: Vec<String>, idf: Vec<f64>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TfidfVectorizer {
            terms,
            index,
            idf,
            normalize: true,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    /// Raw counts times idf, L2-normalized; unseen terms ignored.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.index.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        if self.normalize {
            let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, x) in &mut v {
                    *x /= norm;
                }
            }
        }
        v
    }
}

/// Mean of the embedding rows of in-vocabulary tokens; zero if none.
pub fn mean_embedding<S: AsRef<str>>(emb: &EmbeddingMatrix, doc: &[S]) -> Array1<f64> {
    let mut acc = Array1::zeros(emb.dim());
    let mut n = 0usize;
    for t in doc {
        match emb.vocab.get(t.as_ref()) {
            Some(i) if i != UNK => {
                acc += &emb.vectors.row(i);
                n += 1;
            }
            _ => {}
        }
    }
    if n > 0 {
        acc /= n as f64;
    }
    acc
}

fn dense_to_sparse(v: &Array1<f64>) -> SparseVec {
    v.iter().copied().enumerate().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Log,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub loss: Loss,
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            loss: Loss::Log,
            lr: 0.01,
            l2: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

/// One-vs-rest linear scorer over `k` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(k: usize, dim: usize) -> Self {
        LinearModel {
            weights: Array2::zeros((k, dim)),
            bias: Array1::zeros(k),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn scores(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                let w = self.weights.row(c);
                self.bias[c] + x.iter().map(|&(i, v)| w[i] * v).sum::<f64>()
            })
            .collect()
    }

    /// Argmax class code; ties go to the lowest code.
    pub fn predict_code(&self, x: &SparseVec) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        best
    }
}

/// SGD with per-epoch seeded shuffling and lr_t = lr / (1 + lr·l2·t).
pub fn train_linear(
    features: &[SparseVec],
    labels: &[usize],
    k: usize,
    dim: usize,
    cfg: &LinearConfig,
) -> Result<LinearModel, BaselineError> {
    if features.len() != labels.len() {
        return Err(BaselineError::Shape(features.len(), labels.len()));
    }
    let mut m = LinearModel::zeros(k, dim);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "linear-epoch", epoch as u64)));
        for &i in &order {
            let lr = cfg.lr / (1.0 + cfg.lr * cfg.l2 * t as f64);
            let x = &features[i];
            let shrink = 1.0 - lr * cfg.l2;
            for c in 0..k {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let mut w = m.weights.row_mut(c);
                let margin = y * (m.bias[c] + x.iter().map(|&(j, v)| w[j] * v).sum::<f64>());
                let coef = match cfg.loss {
                    // d/dz log(1 + e^{-y z}) = -y σ(-y z)
                    Loss::Log => -y / (1.0 + margin.exp()),
                    Loss::Hinge => {
                        if margin < 1.0 {
                            -y
                        } else {
                            0.0
                        }
                    }
                };
                w *= shrink;
                for &(j, v) in x {
                    w[j] -= lr * coef * v;
                }
                m.bias[c] -= lr * coef;
            }
            t += 1;
        }
        if m.weights.iter().chain(m.bias.iter()).any(|v| !v.is_finite()) {
            return Err(BaselineError::Diverged);
        }
    }
    Ok(m)
}

/// Stage 1 separates privacy-related (code 0) from irrelevant (code 1);
/// stage 2 separates feature requests (0) from bugs (1).
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub stage1: LinearModel,
    pub stage2: LinearModel,
}

impl HierarchicalModel {
    /// Stage 2 sees only gold privacy-related examples.
    pub fn train(
        features: &[SparseVec],
        labels: &[Label],
        dim: usize,
        cfg: &LinearConfig,
    ) -> Result<Self, BaselineError> {
        if features.len() != labels.len() {
            return Err(BaselineError::Shape(features.len(), labels.len()));
        }
        let y1: Vec<usize> = labels.iter().map(|l| usize::from(!l.is_privacy_related())).collect();
        let stage1 = train_linear(features, &y1, 2, dim, cfg)?;
        let (x2, y2): (Vec<SparseVec>, Vec<usize>) = features
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_privacy_related())
            .map(|(x, l)| (x.clone(), usize::from(*l == Label::Pb)))
            .unzip();
        if x2.is_empty() {
            return Err(BaselineError::NoPrivacyExamples);
        }
        let cfg2 = LinearConfig {
            seed: seed::derive(cfg.seed, "stage2", 0),
            ..cfg.clone()
        };
        let stage2 = train_linear(&x2, &y2, 2, dim, &cfg2)?;
        Ok(HierarchicalModel { stage1, stage2 })
    }

    pub fn predict(&self, x: &SparseVec) -> Label {
        if self.stage1.predict_code(x) == 1 {
            Label::Pir
        } else if self.stage2.predict_code(x) == 0 {
            Label::Pfr
        } else {
            Label::Pb
        }
    }

    /// Ranking scores for ROC-AUC: with s1 the privacy margin and s2 the
    /// request-vs-bug margin, PFR = s1 + s2, PB = s1 − s2, PIR = −s1.
    pub fn scores(&self, x: &SparseVec) -> [f64; NUM_CLASSES] {
        let a = self.stage1.scores(x);
        let b = self.stage2.scores(x);
        let s1 = a[0] - a[1];
        let s2 = b[0] - b[1];
        [s1 + s2, s1 - s2, -s1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Tfidf(TfidfVectorizer),
    CbowMean(EmbeddingMatrix),
}

impl Representation {
    pub fn name(&self) -> &'static str {
        match self {
            Representation::Tfidf(_) => "tfidf",
            Representation::CbowMean(_) => "cbow-mean",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Representation::Tfidf(v) => v.dim(),
            Representation::CbowMean(e) => e.dim(),
        }
    }

    pub fn featurize<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        match self {
            Representation::Tfidf(v) => v.transform(doc),
            Representation::CbowMean(e) => dense_to_sparse(&mean_embedding(e, doc)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineHead {
    Flat(LinearModel),
    Hierarchical(HierarchicalModel),
}

/// Representation plus classifier head, saved as one model file.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub repr: Representation,
    pub head: BaselineHead,
    pub config: LinearConfig,
}

#[derive(Serialize, Deserialize)]
struct BaselineMeta {
    repr: String,
    linear: LinearConfig,
}

impl Baseline {
    pub fn train<S: AsRef<str>>(
        repr: Representation,
        docs: &[Vec<S>],
        labels: &[Label],
        hierarchical: bool,
        cfg: &LinearConfig,
    ) -> Result<Self, BaselineError> {
        if docs.is_empty() {
            return Err(BaselineError::Empty);
        }
        let x: Vec<SparseVec> = docs.iter().map(|d| repr.featurize(d)).collect();
        let dim = repr.dim();
        let head = if hierarchical {
            BaselineHead::Hierarchical(HierarchicalModel::train(&x, labels, dim, cfg)?)
        } else {
            let y: Vec<usize> = labels.iter().map(|l| l.code()).collect();
            BaselineHead::Flat(train_linear(&x, &y, NUM_CLASSES, dim, cfg)?)
        };
        let trained = Baseline {
            repr,
            head,
            config: cfg.clone(),
        };
        // Round-trip through storage precision so saved and in-memory models agree.
        Self::from_model_file(&trained.to_model_file())
    }

    pub fn predict<S: AsRef<str>>(&self, doc: &[S]) -> Label {
        let x = self.repr.featurize(doc);
        match &self.head {
            BaselineHead::Flat(m) => Label::from_code(m.predict_code(&x)).expect("3 classes"),
            BaselineHead::Hierarchical(h) => h.predict(&x),
        }
    }

    pub fn scores<S: AsRef<str>>(&self, doc: &[S]) -> [f64; NUM_CLASSES] {
        let x = self.repr.featurize(doc);
        match &self.head {
            BaselineHead::Flat(m) => {
                let s = m.scores(&x);
                [s[0], s[1], s[2]]
            }
            BaselineHead::Hierarchical(h) => h.scores(&x),
        }
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = BaselineMeta {
            repr: self.repr.name().into(),
            linear: self.config.clone(),
        };
        let mut tensors = Vec::new();
        let vocab = match &self.repr {
            Representation::Tfidf(v) => {
                tensors.push(Tensor::from_f64("tfidf.idf", &[v.dim()], v.idf.iter().copied()));
                v.terms().to_vec()
            }
            Representation::CbowMean(e) => {
                let shape = [e.vectors.nrows(), e.vectors.ncols()];
                tensors.push(Tensor::from_f64("embedding", &shape, e.vectors.iter().copied()));
                e.vocab.tokens().to_vec()
            }
        };
        let push = |t: &mut Vec<Tensor>, prefix: &str, m: &LinearModel| {
            let shape = [m.weights.nrows(), m.weights.ncols()];
            t.push(Tensor::from_f64(&format!("{prefix}.w"), &shape, m.weights.iter().copied()));
            t.push(Tensor::from_f64(&format!("{prefix}.b"), &[m.bias.len()], m.bias.iter().copied()));
        };
        let kind = match &self.head {
            BaselineHead::Flat(m) => {
                push(&mut tensors, "linear", m);
                ModelKind::Linear
            }
            BaselineHead::Hierarchical(h) => {
                push(&mut tensors, "stage1", &h.stage1);
                push(&mut tensors, "stage2", &h.stage2);
                ModelKind::Hierarchical
            }
        };
        ModelFile {
            kind,
            config_json: serde_json::to_string(&meta).expect("meta serializes"),
            vocab,
            tensors,
        }
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self, BaselineError> {
        let meta: BaselineMeta =
            serde_json::from_str(&f.config_json).map_err(|e| BaselineError::Format(e.to_string()))?;
        let n = f.vocab.len();
        let repr = match meta.repr.as_str() {
            "tfidf" => {
                let idf = f.tensor("tfidf.idf", &[n])?.to_f64();
                Representation::Tfidf(TfidfVectorizer::from_parts(f.vocab.clone(), idf))
            }
            "cbow-mean" => {
                let t = f
                    .tensors
                    .iter()
                    .find(|t| t.name == "embedding")
                    .ok_or_else(|| ContainerError::MissingTensor("embedding".into()))?;
                let dim = *t.shape.get(1).ok_or_else(|| BaselineError::Format("embedding rank".into()))?;
                let vectors = Array2::from_shape_vec((n, dim), f.tensor("embedding", &[n, dim])?.to_f64())
                    .map_err(|e| BaselineError::Format(e.to_string()))?;
                let vocab = Vocabulary::from_tokens(f.vocab.clone()).map_err(|e| BaselineError::Format(e.to_string()))?;
                Representation::CbowMean(EmbeddingMatrix { vocab, vectors })
            }
            other => return Err(BaselineError::Format(format!("unknown representation {other:?}"))),
        };
        let dim = repr.dim();
        let read = |prefix: &str, k: usize| -> Result<LinearModel, BaselineError> {
            let w = f.tensor(&format!("{prefix}.w"), &[k, dim])?.to_f64();
            let b = f.tensor(&format!("{prefix}.b"), &[k])?.to_f64();
            Ok(LinearModel {
                weights: Array2::from_shape_vec((k, dim), w).map_err(|e| BaselineError::Format(e.to_string()))?,
                bias: Array1::from(b),
            })
        };
        let head = match f.kind {
            ModelKind::Linear => BaselineHead::Flat(read("linear", NUM_CLASSES)?),
            ModelKind::Hierarchical => BaselineHead::Hierarchical(HierarchicalModel {
                stage1: read("stage1", 2)?,
                stage2: read("stage2", 2)?,
            }),
            ModelKind::Grace => {
                return Err(ContainerError::WrongKind {
                    expected: ModelKind::Linear,
                    found: ModelKind::Grace,
                }
                .into())
            }
        };
        Ok(Baseline {
            repr,
            head,
            config: meta.linear,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(self.to_model_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        Self::from_model_file(&ModelFile::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn idf_smoothing_and_norm() {
        let docs = vec![toks("a b"), toks("a c"), toks("a")];
        let v = TfidfVectorizer::fit(&docs).unwrap();
        assert_eq!(v.idf[0], 1.0);
        let x = v.transform(&toks("c"));
        assert_eq!(x, vec![(2, 1.0)]);
        assert!(v.transform(&toks("zzz")).is_empty());
        assert!(v.transform::<&str>(&[]).is_empty());
    }

    #[test]
    fn tfidf_hand_computation() {
        // N = 3; df(a)=3, df(b)=1, df(c)=2.
        let docs = vec![toks("a b b"), toks("a c"), toks("a c")];
        let v = TfidfVectorizer::fit(&docs).unwrap();
        let idf_b = (4.0f64 / 2.0).ln() + 1.0;
        let idf_c = (4.0f64 / 3.0).ln() + 1.0;
        assert!((v.idf[1] - idf_b).abs() < 1e-15);
        assert!((v.idf[2] - idf_c).abs() < 1e-15);
        let x = v.transform(&docs[0]);
        let (ra, rb) = (1.0, 2.0 * idf_b);
        let n = (ra * ra + rb * rb as f64).sqrt();
        assert!((x[0].1 - ra / n).abs() < 1e-15);
        assert!((x[1].1 - rb / n).abs() < 1e-15);
    }

    fn emb() -> EmbeddingMatrix {
        let vocab = Vocabulary::from_tokens(vec!["<pad>".into(), "<unk>".into(), "e".into(), "m".into()]).unwrap();
        let vectors = ndarray::arr2(&[[0.0, 0.0], [9.0, 9.0], [1.0, 2.0], [-1.0, -2.0]]);
        EmbeddingMatrix { vocab, vectors }
    }

    #[test]
    fn mean_embedding_examples() {
        let e = emb();
        assert_eq!(mean_embedding(&e, &["e"]).to_vec(), vec![1.0, 2.0]);
        assert_eq!(mean_embedding(&e, &["e", "m"]).to_vec(), vec![0.0, 0.0]);
        assert_eq!(mean_embedding(&e, &["zz", "<unk>"]).to_vec(), vec![0.0, 0.0]);
        assert_eq!(mean_embedding(&e, &["e", "m", "e"]), mean_embedding(&e, &["m", "e", "e"]));
    }

    fn blobs(n: usize, seed: u64) -> (Vec<SparseVec>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let mut v = vec![0.0; 4];
            v[c] = 3.0 + rng.gen::<f64>();
            v[3] = rng.gen::<f64>();
            x.push(v.into_iter().enumerate().collect());
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(60, 1);
        for loss in [Loss::Log, Loss::Hinge] {
            let cfg = LinearConfig { loss, ..LinearConfig::default() };
            let m = train_linear(&x, &y, 3, 4, &cfg).unwrap();
            let acc = x.iter().zip(&y).filter(|(xi, &yi)| m.predict_code(xi) == yi).count();
            assert_eq!(acc, 60, "{loss:?}");
            assert_eq!(m, train_linear(&x, &y, 3, 4, &cfg).unwrap());
        }
        let zero = train_linear(&x, &y, 3, 4, &LinearConfig { epochs: 0, ..LinearConfig::default() }).unwrap();
        assert_eq!(zero.predict_code(&x[1]), 0);
    }

    #[test]
    fn hierarchical_gating() {
        let mut h = HierarchicalModel {
            stage1: LinearModel::zeros(2, 1),
            stage2: LinearModel::zeros(2, 1),
        };
        h.stage1.bias[1] = 1.0;
        h.stage2.bias[0] = 5.0;
        assert_eq!(h.predict(&vec![]), Label::Pir);
        h.stage1.bias[1] = -1.0;
        h.stage2.bias[0] = -5.0;
        assert_eq!(h.predict(&vec![]), Label::Pb);
    }

    #[test]
    fn baseline_round_trips_through_file() {
        let docs = vec![toks("add option hide location"), toks("app leak location"), toks("fun game")];
        let labels = [Label::Pfr, Label::Pb, Label::Pir];
        let dir = tempfile::tempdir().unwrap();
        for hier in [false, true] {
            let repr = Representation::Tfidf(TfidfVectorizer::fit(&docs).unwrap());
            let b = Baseline::train(repr, &docs, &labels, hier, &LinearConfig::default()).unwrap();
            let p = dir.path().join("b.bin");
            b.save(&p).unwrap();
            let back = Baseline::load(&p).unwrap();
            for d in &docs {
                assert_eq!(back.predict(d), b.predict(d));
                let (s1, s2) = (back.scores(d), b.scores(d));
                for c in 0..3 {
                    assert!((s1[c] - s2[c]).abs() < 1e-5);
                }
            }
        }
        let repr = Representation::CbowMean(emb());
        let b = Baseline::train(repr, &[toks("e"), toks("m"), toks("e m")], &labels, false, &LinearConfig::default())
            .unwrap();
        let p = dir.path().join("c.bin");
        b.save(&p).unwrap();
        assert_eq!(Baseline::load(&p).unwrap().predict(&["e"]), b.predict(&["e"]));
    }

    proptest! {
        #[test]
        fn scaling_features_scales_scores(
            w in proptest::collection::vec(-3.0f64..3.0, 6),
            x in proptest::collection::vec(-2.0f64..2.0, 2),
            c in 0.1f64..10.0,
        ) {
            let m = LinearModel {
                weights: Array2::from_shape_vec((3, 2), w).unwrap(),
                bias: Array1::zeros(3),
            };
            let xs: SparseVec = x.iter().copied().enumerate().collect();
            let xc: SparseVec = x.iter().map(|v| v * c).enumerate().collect();
            let (a, b) = (m.scores(&xs), m.scores(&xc));
            for k in 0..3 {
                prop_assert!((b[k] - c * a[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn hierarchy_never_emits_request_or_bug_when_gated(
            w in proptest::collection::vec(-3.0f64..3.0, 4),
            v in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let stage1 = LinearModel { weights: Array2::from_shape_vec((2, 2), w.clone()).unwrap(), bias: Array1::zeros(2) };
            let stage2 = LinearModel { weights: Array2::from_shape_vec((2, 2), w).unwrap(), bias: Array1::ones(2) };
            let h = HierarchicalModel { stage1, stage2 };
            let x: SparseVec = v.into_iter().enumerate().collect();
            if h.stage1.predict_code(&x) == 1 {
                prop_assert_eq!(h.predict(&x), Label::Pir);
            }
        }
    }
}
