//! Pointwise squared-loss gradient-boosted regression trees.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "signagent-gbdt";
pub const VERSION: u32 = 1;
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("need at least {MIN_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error("row {0}: label outside [0, 1]")]
    LabelOutOfRange(usize),
    #[error("row {row}: {got} features, expected {expected}")]
    RaggedFeatures { row: usize, expected: usize, got: usize },
    #[error("row {0}: non-finite value")]
    NonFinite(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) per tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig { n_trees: 50, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 1, subsample: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    /// Set when every training label was identical; the model is constant.
    #[serde(default)]
    pub degenerate: bool,
    pub trees: Vec<Tree>,
}

impl Gbdt {
    pub fn predict(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::FeatureCount { expected: self.n_features, got: x.len() });
        }
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    pub fn save(&self, path: &Path) -> Result<(), GbdtError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GbdtError> {
        let m: Gbdt = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(GbdtError::Format(format!("{} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = rows.iter().map(|&r| self.residual[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(TreeNode::Leaf { value });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold, gain) by exact scan over sorted values.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..self.x[rows[0]].len() {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.residual[order[i]];
                let (lo, hi) = (self.x[order[i]][f], self.x[order[i + 1]][f]);
                let nl = i + 1;
                if lo == hi || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, lo + (hi - lo) / 2.0, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return self.leaf(rows);
        }
        let Some((feature, threshold)) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[at] = TreeNode::Split { feature, threshold, left, right };
        at
    }
}

fn check_rows(rows: &[(Vec<f64>, f64)], cfg: &GbdtConfig) -> Result<usize, GbdtError> {
    if rows.len() < MIN_ROWS {
        return Err(GbdtError::TooFewRows(rows.len()));
    }
    if cfg.n_trees == 0 || cfg.max_depth == 0 || cfg.min_samples_leaf == 0 {
        return Err(GbdtError::InvalidConfig("n_trees, max_depth and min_samples_leaf must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) || !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
        return Err(GbdtError::InvalidConfig("learning_rate and subsample must lie in (0, 1]".into()));
    }
    let d = rows[0].0.len();
    for (i, (x, y)) in rows.iter().enumerate() {
        if x.len() != d {
            return Err(GbdtError::RaggedFeatures { row: i, expected: d, got: x.len() });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GbdtError::NonFinite(i));
        }
        if !(0.0..=1.0).contains(y) {
            return Err(GbdtError::LabelOutOfRange(i));
        }
    }
    Ok(d)
}

/// Fits the ensemble. Identical labels yield a constant model with
/// `degenerate` set instead of an error, so callers can still rank.
pub fn train_ranker(rows: &[(Vec<f64>, f64)], cfg: &GbdtConfig) -> Result<Gbdt, GbdtError> {
    let d = check_rows(rows, cfg)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let n = y.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut model = Gbdt {
        format: FORMAT.into(),
        version: VERSION,
        n_features: d,
        base_score,
        learning_rate: cfg.learning_rate,
        degenerate: y.iter().all(|&v| v == y[0]),
        trees: Vec::new(),
    };
    if model.degenerate {
        model.base_score = y[0];
        return Ok(model);
    }
    let mut pred = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let take = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    for _ in 0..cfg.n_trees {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let mut rows_used: Vec<usize> = if take == n { (0..n).collect() } else { sample(&mut rng, n, take).into_vec() };
        rows_used.sort_unstable();
        let mut b = Builder {
            x: &x,
            residual: &residual,
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_samples_leaf,
            nodes: Vec::new(),
        };
        b.build(&rows_used, 0);
        let tree = Tree { nodes: b.nodes };
        for (p, xi) in pred.iter_mut().zip(&x) {
            *p += cfg.learning_rate * tree.predict(xi);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn monotone_rows(n: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                let y = x[0];
                (x, y)
            })
            .collect()
    }

    #[test]
    fn self_fit_rank_correlation() {
        let rows = monotone_rows(200, 7);
        let m = train_ranker(&rows, &GbdtConfig::default()).unwrap();
        let p: Vec<f64> = rows.iter().map(|r| m.predict(&r.0).unwrap()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        assert!(spearman(&p, &y) >= 0.99, "{}", spearman(&p, &y));
    }

    #[test]
    fn single_stump_orders_two_points() {
        let mut rows: Vec<(Vec<f64>, f64)> = (0..5).map(|_| (vec![0.0], 0.2)).collect();
        rows.extend((0..5).map(|_| (vec![1.0], 0.9)));
        let cfg = GbdtConfig { n_trees: 1, max_depth: 1, learning_rate: 1.0, ..Default::default() };
        let m = train_ranker(&rows, &cfg).unwrap();
        // midpoint split at 0.5; leaves hold the residuals -0.35 and +0.35
        assert_eq!(m.trees[0].nodes[0], TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2 });
        assert!((m.predict(&[0.0]).unwrap() - 0.2).abs() < 1e-12);
        assert!((m.predict(&[1.0]).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_labels() {
        let rows: Vec<(Vec<f64>, f64)> = (0..12).map(|i| (vec![i as f64], 0.5)).collect();
        let m = train_ranker(&rows, &GbdtConfig::default()).unwrap();
        assert!(m.degenerate && m.trees.is_empty());
        assert_eq!(m.predict(&[3.0]).unwrap(), 0.5);
    }

    #[test]
    fn deterministic_and_round_trip() {
        let rows = monotone_rows(120, 3);
        let cfg = GbdtConfig { subsample: 0.7, seed: 42, ..Default::default() };
        let a = train_ranker(&rows, &cfg).unwrap();
        let b = train_ranker(&rows, &cfg).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        a.save(&p).unwrap();
        let c = Gbdt::load(&p).unwrap();
        for r in &rows {
            assert_eq!(a.predict(&r.0).unwrap().to_bits(), c.predict(&r.0).unwrap().to_bits());
        }
    }

    #[test]
    fn input_errors() {
        assert!(matches!(train_ranker(&monotone_rows(5, 1), &GbdtConfig::default()), Err(GbdtError::TooFewRows(5))));
        let mut rows = monotone_rows(20, 1);
        rows[3].1 = 1.5;
        assert!(matches!(train_ranker(&rows, &GbdtConfig::default()), Err(GbdtError::LabelOutOfRange(3))));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    }
}
