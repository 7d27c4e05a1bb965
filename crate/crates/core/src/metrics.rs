//! Evaluation metrics: confusion matrices, precision/recall/F1, one-vs-rest
//! ROC-AUC, Cohen's kappa, MTLD and latency benchmarking.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use crate::label::{Label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} true labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("class code {0} out of range for {1} classes")]
    ClassOutOfRange(usize, usize),
    #[error("no examples to evaluate")]
    Empty,
    #[error("no class has both positive and negative examples")]
    NoDefinedAuc,
    #[error("non-finite score at row {0}")]
    NonFinite(usize),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        ConfusionMatrix { counts: rows }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// CSV with a header of class names and one row per true class.
    pub fn write_csv<W: Write>(&self, mut w: W, names: &[&str]) -> std::io::Result<()> {
        write!(w, "true\\pred")?;
        for n in names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (i, row) in self.counts.iter().enumerate() {
            write!(w, "{}", names.get(i).copied().unwrap_or("?"))?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn confusion_codes(k: usize, truth: &[usize], pred: &[usize]) -> Result<ConfusionMatrix, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    let mut m = ConfusionMatrix::new(k);
    for (&t, &p) in truth.iter().zip(pred) {
        for c in [t, p] {
            if c >= k {
                return Err(MetricError::ClassOutOfRange(c, k));
            }
        }
        m.counts[t][p] += 1;
    }
    Ok(m)
}

pub fn confusion(truth: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, MetricError> {
    let t: Vec<usize> = truth.iter().map(|l| l.code()).collect();
    let p: Vec<usize> = pred.iter().map(|l| l.code()).collect();
    confusion_codes(NUM_CLASSES, &t, &p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A zero denominator was replaced by the 0 convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn prf_macro(m: &ConfusionMatrix) -> Result<PrfReport, MetricError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricError::Empty);
    }
    let k = m.k();
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = m.counts[c][c];
            let (precision, dp) = ratio(tp, m.col_sum(c));
            let (recall, dr) = ratio(tp, m.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: m.row_sum(c),
                degenerate: dp || dr,
            }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(PrfReport {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: m.trace() as f64 / total as f64,
        total,
        per_class,
    })
}

/// Mann-Whitney AUC with average ranks for ties. `None` when either side is empty.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied block i..=j shares the mean rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    /// `None` for classes lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
}

impl AucReport {
    pub fn undefined_classes(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&c| self.per_class[c].is_none()).collect()
    }
}

/// One-vs-rest AUC per class over an n×k score matrix; macro over defined classes.
pub fn roc_auc_ovr<S: AsRef<[f64]>>(truth: &[usize], scores: &[S]) -> Result<AucReport, MetricError> {
    if truth.len() != scores.len() {
        return Err(MetricError::LengthMismatch(truth.len(), scores.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let k = scores[0].as_ref().len();
    for (i, row) in scores.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != k || row.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        if truth[i] >= k {
            return Err(MetricError::ClassOutOfRange(truth[i], k));
        }
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            let col: Vec<f64> = scores.iter().map(|r| r.as_ref()[c]).collect();
            binary_auc(&pos, &col)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricError::NoDefinedAuc);
    }
    Ok(AucReport {
        macro_auc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// Cross-tabulation of two annotators over co-labeled items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementTable {
    pub counts: Vec<Vec<u64>>,
}

impl AgreementTable {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        AgreementTable { counts: rows }
    }

    pub fn from_labels(a: &[Label], b: &[Label]) -> Result<Self, MetricError> {
        let m = confusion(a, b)?;
        Ok(AgreementTable { counts: m.counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// Expected agreement was 1, so the ratio is undefined.
    pub degenerate: bool,
}

pub fn cohens_kappa(table: &AgreementTable) -> Result<Kappa, MetricError> {
    let n = table.total();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let n = n as f64;
    let k = table.counts.len();
    let p_o = (0..k).map(|i| table.counts[i][i]).sum::<u64>() as f64 / n;
    let p_e: f64 = (0..k)
        .map(|c| {
            let row: u64 = table.counts[c].iter().sum();
            let col: u64 = table.counts.iter().map(|r| r[c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if (p_o - 1.0).abs() < 1e-15 {
            Kappa {
                value: 1.0,
                degenerate: false,
            }
        } else {
            Kappa {
                value: 0.0,
                degenerate: true,
            }
        });
    }
    Ok(Kappa {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

pub const MTLD_THRESHOLD: f64 = 0.72;

fn mtld_pass<'a>(tokens: impl Iterator<Item = &'a str>, threshold: f64) -> f64 {
    let mut types: HashSet<&str> = HashSet::new();
    let mut count = 0usize;
    let mut total = 0usize;
    let mut factors = 0.0;
    let mut ttr = 1.0;
    for t in tokens {
        total += 1;
        count += 1;
        types.insert(t);
        ttr = types.len() as f64 / count as f64;
        if ttr < threshold {
            factors += 1.0;
            types.clear();
            count = 0;
            ttr = 1.0;
        }
    }
    if count > 0 {
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    if factors == 0.0 {
        total as f64
    } else {
        total as f64 / factors
    }
}

/// Mean of forward and backward MTLD passes.
pub fn mtld<S: AsRef<str>>(tokens: &[S], threshold: f64) -> Result<f64, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::Empty);
    }
    let fwd = mtld_pass(tokens.iter().map(AsRef::as_ref), threshold);
    let bwd = mtld_pass(tokens.iter().rev().map(AsRef::as_ref), threshold);
    Ok((fwd + bwd) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between closest ranks.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Summary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        q1: quantile(&s, 0.25),
        q3: quantile(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityProfile {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    /// Reviews without tokens, which have no MTLD.
    pub skipped_before: usize,
    pub skipped_after: usize,
}

pub fn diversity_profile<S: AsRef<str>>(
    before: &[Vec<S>],
    after: &[Vec<S>],
    threshold: f64,
) -> DiversityProfile {
    let col = |docs: &[Vec<S>]| {
        let vals: Vec<f64> = docs.iter().filter_map(|d| mtld(d, threshold).ok()).collect();
        let skipped = docs.len() - vals.len();
        (vals, skipped)
    };
    let (before, skipped_before) = col(before);
    let (after, skipped_after) = col(after);
    DiversityProfile {
        before,
        after,
        skipped_before,
        skipped_after,
    }
}

impl DiversityProfile {
    /// `row,before,after` per review, then `mean`, `median`, `q1`, `q3`,
    /// `min` and `max` rows. Shorter columns are left blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,before,after")?;
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..self.before.len().max(self.after.len()) {
            writeln!(w, "{},{},{}", i, cell(self.before.get(i)), cell(self.after.get(i)))?;
        }
        let (sb, sa) = (summarize(&self.before), summarize(&self.after));
        let stat = |s: &Option<Summary>, f: fn(&Summary) -> f64| {
            s.as_ref().map(|s| f(s).to_string()).unwrap_or_default()
        };
        let rows: [(&str, fn(&Summary) -> f64); 6] = [
            ("mean", |s| s.mean),
            ("median", |s| s.median),
            ("q1", |s| s.q1),
            ("q3", |s| s.q3),
            ("min", |s| s.min),
            ("max", |s| s.max),
        ];
        for (name, f) in rows {
            writeln!(w, "{name},{},{}", stat(&sb, f), stat(&sa, f))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub runs: usize,
    pub warmups: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

/// Times `runs` calls of `f` after `warmups` untimed calls.
pub fn time_runs(runs: usize, warmups: usize, mut f: impl FnMut()) -> Timing {
    let runs = runs.max(1);
    for _ in 0..warmups {
        f();
    }
    let samples: Vec<f64> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    let min_ms = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ms = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_ms = (samples.iter().sum::<f64>() / runs as f64).clamp(min_ms, max_ms);
    Timing {
        runs,
        warmups,
        min_ms,
        max_ms,
        mean_ms,
    }
}

pub const BENCH_RUNS: usize = 100;
pub const BENCH_WARMUPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub size_bytes: u64,
    pub timing: Timing,
}

impl BenchReport {
    pub fn size_mb(&self) -> f64 {
        self.size_bytes as f64 / (1u64 << 20) as f64
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[bench]")?;
        writeln!(f, "size_bytes = {}", self.size_bytes)?;
        writeln!(f, "size_mb = {:.4}", self.size_mb())?;
        writeln!(f, "runs = {}", self.timing.runs)?;
        writeln!(f, "warmups = {}", self.timing.warmups)?;
        writeln!(f, "min_ms = {:.4}", self.timing.min_ms)?;
        writeln!(f, "max_ms = {:.4}", self.timing.max_ms)?;
        writeln!(f, "mean_ms = {:.4}", self.timing.mean_ms)?;
        writeln!(f, "mode = single-input, serial, idle process required")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub prf: PrfReport,
    pub auc: Option<AucReport>,
}

/// Builds the full report from gold codes, predicted codes and per-class scores.
pub fn evaluate<S: AsRef<[f64]>>(
    truth: &[usize],
    pred: &[usize],
    scores: &[S],
) -> Result<EvaluationReport, MetricError> {
    let confusion = confusion_codes(NUM_CLASSES, truth, pred)?;
    let prf = prf_macro(&confusion)?;
    let auc = match roc_auc_ovr(truth, scores) {
        Ok(a) => Some(a),
        Err(MetricError::NoDefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport { confusion, prf, auc })
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[summary]")?;
        writeln!(f, "examples = {}", self.prf.total)?;
        writeln!(f, "accuracy = {:.6}", self.prf.accuracy)?;
        writeln!(f, "macro_precision = {:.6}", self.prf.macro_precision)?;
        writeln!(f, "macro_recall = {:.6}", self.prf.macro_recall)?;
        writeln!(f, "macro_f1 = {:.6}", self.prf.macro_f1)?;
        match &self.auc {
            Some(a) => writeln!(f, "macro_roc_auc = {:.6}", a.macro_auc)?,
            None => writeln!(f, "macro_roc_auc = undefined")?,
        }
        for (c, s) in self.prf.per_class.iter().enumerate() {
            let name = Label::from_code(c).map(Label::as_str).unwrap_or("?");
            writeln!(f, "\n[class.{name}]")?;
            writeln!(f, "support = {}", s.support)?;
            writeln!(f, "precision = {:.6}", s.precision)?;
            writeln!(f, "recall = {:.6}", s.recall)?;
            writeln!(f, "f1 = {:.6}", s.f1)?;
            writeln!(f, "zero_denominator = {}", s.degenerate)?;
            if let Some(a) = &self.auc {
                match a.per_class.get(c).copied().flatten() {
                    Some(v) => writeln!(f, "roc_auc = {v:.6}")?,
                    None => writeln!(f, "roc_auc = undefined")?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::*;

    #[test]
    fn confusion_examples() {
        let t = [Pfr, Pb, Pir, Pb];
        let m = confusion(&t, &t).unwrap();
        assert_eq!(m.trace(), 4);
        let m = confusion(&t, &[Pir; 4]).unwrap();
        assert_eq!(m.col_sum(2), 4);
        assert!(confusion(&t, &[Pir]).is_err());
    }

    #[test]
    fn prf_fixture() {
        let m = ConfusionMatrix::from_rows(vec![vec![4, 1, 0], vec![1, 4, 0], vec![0, 0, 2]]);
        let r = prf_macro(&m).unwrap();
        assert!((r.accuracy - 10.0 / 12.0).abs() < 1e-15);
        assert!((r.per_class[0].precision - 0.8).abs() < 1e-15);
        assert!((r.per_class[0].recall - 0.8).abs() < 1e-15);
        assert!((r.per_class[0].f1 - 0.8).abs() < 1e-15);
        let diag = ConfusionMatrix::from_rows(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(prf_macro(&diag).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn degenerate_class_flagged() {
        let m = ConfusionMatrix::from_rows(vec![vec![3, 1, 0], vec![1, 2, 0], vec![0, 0, 0]]);
        let r = prf_macro(&m).unwrap();
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!(r.per_class[2].degenerate);
        assert!(prf_macro(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn auc_examples() {
        let truth = [0, 1, 2, 0, 1, 2];
        let perfect: Vec<[f64; 3]> = truth
            .iter()
            .map(|&t| {
                let mut s = [0.0; 3];
                s[t] = 1.0;
                s
            })
            .collect();
        let r = roc_auc_ovr(&truth, &perfect).unwrap();
        assert_eq!(r.macro_auc, 1.0);
        let flat = vec![[0.3, 0.3, 0.4]; 6];
        assert_eq!(roc_auc_ovr(&truth, &flat).unwrap().macro_auc, 0.5);
        let single = vec![[0.1, 0.2, 0.7]; 3];
        let r = roc_auc_ovr(&[0, 0, 0], &single);
        assert_eq!(r, Err(MetricError::NoDefinedAuc));
    }

    #[test]
    fn kappa_examples() {
        let k = cohens_kappa(&AgreementTable::from_rows(vec![vec![4, 1], vec![1, 4]])).unwrap();
        assert!((k.value - 0.6).abs() < 1e-12);
        let same = [Pfr, Pb, Pir, Pir];
        assert_eq!(cohens_kappa(&AgreementTable::from_labels(&same, &same).unwrap()).unwrap().value, 1.0);
        let indep = AgreementTable::from_rows(vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(cohens_kappa(&indep).unwrap().value, 0.0);
        let all_one = AgreementTable::from_rows(vec![vec![5, 0], vec![0, 0]]);
        assert_eq!(cohens_kappa(&all_one).unwrap(), Kappa { value: 1.0, degenerate: false });
        assert!(cohens_kappa(&AgreementTable::from_rows(vec![vec![0, 0], vec![0, 0]])).is_err());
    }

    #[test]
    fn mtld_examples() {
        let same = vec!["x"; 100];
        assert_eq!(mtld(&same, MTLD_THRESHOLD).unwrap(), 2.0);
        let distinct: Vec<String> = (0..50).map(|i| format!("t{i}")).collect();
        assert_eq!(mtld(&distinct, MTLD_THRESHOLD).unwrap(), 50.0);
        let ab: Vec<&str> = (0..40).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let fwd = mtld_pass(ab.iter().copied(), MTLD_THRESHOLD);
        let bwd = mtld_pass(ab.iter().rev().copied(), MTLD_THRESHOLD);
        assert_eq!(fwd, bwd);
        assert!(mtld::<&str>(&[], MTLD_THRESHOLD).is_err());
    }

    #[test]
    fn timing_order_statistics() {
        let t = time_runs(1, 0, || {});
        assert_eq!(t.min_ms, t.max_ms);
        assert_eq!(t.mean_ms, t.min_ms);
        let t = time_runs(25, 2, || {
            std::hint::black_box((0..1000).sum::<u64>());
        });
        assert!(t.min_ms <= t.mean_ms && t.mean_ms <= t.max_ms);
    }

    #[test]
    fn diversity_csv_summary() {
        let docs: Vec<Vec<&str>> = vec![vec!["a", "b", "a"], vec!["c", "c", "c", "d"], vec![]];
        let p = diversity_profile(&docs, &docs, MTLD_THRESHOLD);
        assert_eq!(p.before, p.after);
        assert_eq!(p.skipped_before, 1);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mean = (p.before[0] + p.before[1]) / 2.0;
        assert!(text.contains(&format!("mean,{mean},{mean}")));
    }

    fn brute_auc(pos: &[bool], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(
            rows in proptest::collection::vec((0usize..3, 0u8..6, 0u8..6, 0u8..6), 2..50)
        ) {
            let truth: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let scores: Vec<[f64; 3]> = rows.iter()
                .map(|r| [r.1 as f64 / 5.0, r.2 as f64 / 5.0, r.3 as f64 / 5.0]).collect();
            if let Ok(rep) = roc_auc_ovr(&truth, &scores) {
                for c in 0..3 {
                    let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                    let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
                    match rep.per_class[c] {
                        Some(v) => prop_assert!((v - brute_auc(&pos, &col)).abs() < 1e-12),
                        None => prop_assert!(pos.iter().all(|&p| p) || pos.iter().all(|&p| !p)),
                    }
                }
            }
        }

        #[test]
        fn kappa_permutation_invariant(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60),
            perm in Just([0usize, 1, 2]).prop_shuffle(),
        ) {
            let a: Vec<Label> = pairs.iter().map(|p| Label::from_code(p.0).unwrap()).collect();
            let b: Vec<Label> = pairs.iter().map(|p| Label::from_code(p.1).unwrap()).collect();
            let pa: Vec<Label> = pairs.iter().map(|p| Label::from_code(perm[p.0]).unwrap()).collect();
            let pb: Vec<Label> = pairs.iter().map(|p| Label::from_code(perm[p.1]).unwrap()).collect();
            let k1 = cohens_kappa(&AgreementTable::from_labels(&a, &b).unwrap()).unwrap();
            let k2 = cohens_kappa(&AgreementTable::from_labels(&pa, &pb).unwrap()).unwrap();
            prop_assert!((k1.value - k2.value).abs() < 1e-12);
            prop_assert!(k1.value <= 1.0 + 1e-12 && k1.value >= -1.0 - 1e-12);
        }

        #[test]
        fn macro_f1_is_mean_and_bounded(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..80)
        ) {
            let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let m = confusion_codes(3, &t, &p).unwrap();
            prop_assert_eq!(m.total() as usize, pairs.len());
            let r = prf_macro(&m).unwrap();
            let mean = r.per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
            prop_assert!((r.macro_f1 - mean).abs() < 1e-15);
            for v in [r.macro_f1, r.macro_precision, r.macro_recall, r.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn mtld_palindromes_symmetric(half in proptest::collection::vec("[a-d]", 1..30)) {
            let mut toks = half.clone();
            toks.extend(half.iter().rev().cloned());
            let f = mtld_pass(toks.iter().map(String::as_str), MTLD_THRESHOLD);
            let b = mtld_pass(toks.iter().rev().map(String::as_str), MTLD_THRESHOLD);
            prop_assert_eq!(f, b);
        }
    }
}
