//! Multiclass gradient-boosted regression trees with a softmax
//! cross-entropy objective.
//!
//! Every round fits one tree per class to the residuals `1[y = k] - p_k`
//! using exact greedy variance-reduction splits and Newton leaf values
//! `(K - 1) / K * Σg / Σ|g|(1 - |g|)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::gesture::GestureClass;

pub const N_CLASSES: usize = 4;
pub const MODEL_MAGIC: &[u8; 4] = b"GBDT";
pub const MODEL_VERSION: u32 = 1;

const HESSIAN_FLOOR: f64 = 1e-12;
const ABSENT_CLASS_PRIOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbdtError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Kept for reproducible CLI runs; training itself draws no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { rounds: 100, learning_rate: 0.1, max_depth: 3, min_samples_leaf: 5, seed: 42 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), GbdtError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbdtError::InvalidConfig(format!("learning_rate {} not in (0, 1]", self.learning_rate)));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(GbdtError::InvalidConfig("max_depth and min_samples_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
    Leaf { value: f64 },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Node::Leaf { value } => json!([value]),
            Node::Split { feature, threshold, left, right } => {
                json!([feature, threshold, left.to_json(), right.to_json()])
            }
        }
    }

    fn from_json(v: &Value, n_features: usize) -> Result<Node, GbdtError> {
        let corrupt = |m: &str| GbdtError::CorruptModel(m.to_string());
        let arr = v.as_array().ok_or_else(|| corrupt("tree node is not an array"))?;
        match arr.as_slice() {
            [value] => {
                let value = value.as_f64().filter(|x| x.is_finite()).ok_or_else(|| corrupt("leaf value not finite"))?;
                Ok(Node::Leaf { value })
            }
            [feature, threshold, left, right] => {
                let feature = feature.as_u64().ok_or_else(|| corrupt("feature index not an integer"))? as usize;
                if feature >= n_features {
                    return Err(corrupt("feature index out of range"));
                }
                let threshold = threshold.as_f64().ok_or_else(|| corrupt("threshold not a number"))?;
                Ok(Node::Split {
                    feature,
                    threshold,
                    left: Box::new(Node::from_json(left, n_features)?),
                    right: Box::new(Node::from_json(right, n_features)?),
                })
            }
            _ => Err(corrupt("tree node has wrong arity")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub root: Node,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.root.predict(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub n_features: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub base_scores: [f64; N_CLASSES],
    /// One tree per class per round.
    pub trees: Vec<[RegressionTree; N_CLASSES]>,
}

pub fn softmax(scores: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for k in 0..N_CLASSES {
        out[k] = (scores[k] - max).exp();
        sum += out[k];
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
    out
}

/// Cross-entropy of one sample given raw scores.
pub fn sample_loss(scores: &[f64; N_CLASSES], label: usize) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[label]
}

/// Negative gradient of [`sample_loss`] with respect to the scores.
pub fn residuals(scores: &[f64; N_CLASSES], label: usize) -> [f64; N_CLASSES] {
    let p = softmax(scores);
    let mut g = [0.0; N_CLASSES];
    for k in 0..N_CLASSES {
        g[k] = if k == label { 1.0 } else { 0.0 } - p[k];
    }
    g
}

/// Argmax with ties resolved toward the lowest class index.
pub fn argmax(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

impl Ensemble {
    /// Zero-round model whose probabilities equal the class frequencies.
    pub fn from_priors(n_features: usize, counts: &[usize; N_CLASSES], learning_rate: f64, max_depth: usize) -> Self {
        let total: usize = counts.iter().sum();
        let mut base_scores = [0.0; N_CLASSES];
        for k in 0..N_CLASSES {
            let prior = if total == 0 { 1.0 / N_CLASSES as f64 } else { counts[k] as f64 / total as f64 };
            base_scores[k] = prior.max(ABSENT_CLASS_PRIOR).ln();
        }
        Self { n_features, learning_rate, max_depth, base_scores, trees: Vec::new() }
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    pub fn raw_scores(&self, x: &[f64]) -> Result<[f64; N_CLASSES], GbdtError> {
        self.check_dim(x)?;
        let mut s = self.base_scores;
        for round in &self.trees {
            for k in 0..N_CLASSES {
                s[k] += self.learning_rate * round[k].predict(x);
            }
        }
        Ok(s)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; N_CLASSES], GbdtError> {
        Ok(softmax(&self.raw_scores(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<GestureClass, GbdtError> {
        let p = self.predict_proba(x)?;
        Ok(GestureClass::TRAINABLE[argmax(&p)])
    }
}

/// Training matrix: row-major features plus class indices.
struct Matrix<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<usize>,
    n_features: usize,
}

impl<'a> Matrix<'a> {
    fn new(samples: &'a [(Vec<f64>, GestureClass)]) -> Result<Self, GbdtError> {
        let first = samples.first().ok_or(GbdtError::EmptyDataset)?;
        let n_features = first.0.len();
        let mut rows = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for (x, c) in samples {
            if x.len() != n_features {
                return Err(GbdtError::DimensionMismatch { expected: n_features, got: x.len() });
            }
            if !c.is_trainable() {
                return Err(GbdtError::InvalidConfig(format!("{c} is not a trainable label")));
            }
            rows.push(x.as_slice());
            labels.push(c.index());
        }
        Ok(Self { rows, labels, n_features })
    }

    fn value(&self, row: u32, feature: usize) -> f64 {
        self.rows[row as usize][feature]
    }

    /// For each feature, row indices in ascending value order (ties by row).
    fn presort(&self) -> Vec<Vec<u32>> {
        (0..self.n_features)
            .map(|f| {
                let mut idx: Vec<u32> = (0..self.rows.len() as u32).collect();
                idx.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)).then(a.cmp(&b)));
                idx
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of squared deviations from the child means.
    pub sse: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Best variance-reduction split of the rows in `sorted` (one ascending list
/// per feature). Returns `None` when no split leaves `min_leaf` rows on both
/// sides or none improves on the unsplit node.
fn best_split(
    m: &Matrix<'_>,
    sorted: &[Vec<u32>],
    target: &[f64],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = sorted[0].len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = sorted[0].iter().map(|&r| target[r as usize]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut best_score = parent;
    for (f, rows) in sorted.iter().enumerate() {
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += target[rows[i] as usize];
            let n_left = i + 1;
            if n_left < min_leaf {
                continue;
            }
            if n - n_left < min_leaf {
                break;
            }
            let a = m.value(rows[i], f);
            let b = m.value(rows[i + 1], f);
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64;
            if score > best_score * (1.0 + 1e-12) + 1e-15 {
                best_score = score;
                best = Some((f, midpoint(a, b), score));
            }
        }
    }
    best
}

fn leaf_value(rows: &[u32], target: &[f64]) -> f64 {
    let k = N_CLASSES as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for &r in rows {
        let g = target[r as usize];
        num += g;
        den += g.abs() * (1.0 - g.abs());
    }
    (k - 1.0) / k * num / den.max(HESSIAN_FLOOR)
}

fn build_node(
    m: &Matrix<'_>,
    sorted: Vec<Vec<u32>>,
    target: &[f64],
    depth: usize,
    config: &TrainConfig,
    goes_left: &mut [bool],
) -> Node {
    if depth < config.max_depth {
        if let Some((feature, threshold, _)) = best_split(m, &sorted, target, config.min_samples_leaf) {
            for &r in &sorted[0] {
                goes_left[r as usize] = m.value(r, feature) <= threshold;
            }
            let mut left = Vec::with_capacity(sorted.len());
            let mut right = Vec::with_capacity(sorted.len());
            for rows in &sorted {
                let (l, r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| goes_left[r as usize]);
                left.push(l);
                right.push(r);
            }
            drop(sorted);
            let left = build_node(m, left, target, depth + 1, config, goes_left);
            let right = build_node(m, right, target, depth + 1, config, goes_left);
            return Node::Split { feature, threshold, left: Box::new(left), right: Box::new(right) };
        }
    }
    Node::Leaf { value: leaf_value(&sorted[0], target) }
}

fn fit_tree(m: &Matrix<'_>, presorted: &[Vec<u32>], target: &[f64], config: &TrainConfig) -> RegressionTree {
    let mut goes_left = vec![false; m.rows.len()];
    RegressionTree { root: build_node(m, presorted.to_vec(), target, 0, config, &mut goes_left) }
}

/// Chooses the single best split over `rows` (all rows of `x`) by the same
/// search the trainer uses, exposed for verification.
pub fn choose_split(x: &[Vec<f64>], target: &[f64], min_samples_leaf: usize) -> Option<SplitChoice> {
    let samples: Vec<(Vec<f64>, GestureClass)> = x.iter().map(|r| (r.clone(), GestureClass::Move)).collect();
    let m = Matrix::new(&samples).ok()?;
    let sorted = m.presort();
    let (feature, threshold, _) = best_split(&m, &sorted, target, min_samples_leaf)?;
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for (row, t) in x.iter().zip(target) {
        if row[feature] <= threshold {
            ls += t;
            ln += 1;
        } else {
            rs += t;
            rn += 1;
        }
    }
    let (lm, rm) = (ls / ln as f64, rs / rn as f64);
    let sse = x
        .iter()
        .zip(target)
        .map(|(row, t)| if row[feature] <= threshold { (t - lm).powi(2) } else { (t - rm).powi(2) })
        .sum();
    Some(SplitChoice { feature, threshold, sse })
}

/// Training result with the mean training cross-entropy before the first
/// round and after every round.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Ensemble,
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }
}

fn mean_loss(scores: &[[f64; N_CLASSES]], labels: &[usize]) -> f64 {
    scores.iter().zip(labels).map(|(s, &y)| sample_loss(s, y)).sum::<f64>() / labels.len() as f64
}

pub fn train(samples: &[(Vec<f64>, GestureClass)], config: &TrainConfig) -> Result<Ensemble, GbdtError> {
    Ok(train_with_history(samples, config)?.model)
}

pub fn train_with_history(
    samples: &[(Vec<f64>, GestureClass)],
    config: &TrainConfig,
) -> Result<TrainOutcome, GbdtError> {
    config.validate()?;
    let m = Matrix::new(samples)?;
    let mut counts = [0usize; N_CLASSES];
    for &y in &m.labels {
        counts[y] += 1;
    }
    let mut model = Ensemble::from_priors(m.n_features, &counts, config.learning_rate, config.max_depth);
    let presorted = m.presort();
    let mut scores = vec![model.base_scores; m.rows.len()];
    let mut loss_history = vec![mean_loss(&scores, &m.labels)];

    for _ in 0..config.rounds {
        let mut targets = vec![vec![0.0; m.rows.len()]; N_CLASSES];
        for (i, s) in scores.iter().enumerate() {
            let g = residuals(s, m.labels[i]);
            for k in 0..N_CLASSES {
                targets[k][i] = g[k];
            }
        }
        // classes are independent within a round, so fitting them on
        // separate threads gives the same trees as fitting them in order
        let trees: Vec<RegressionTree> = std::thread::scope(|scope| {
            let handles: Vec<_> = targets
                .iter()
                .map(|t| {
                    let (m, presorted) = (&m, &presorted);
                    scope.spawn(move || fit_tree(m, presorted, t, config))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("tree fitting thread")).collect()
        });
        let round: [RegressionTree; N_CLASSES] = trees.try_into().expect("one tree per class");
        for (i, s) in scores.iter_mut().enumerate() {
            for k in 0..N_CLASSES {
                s[k] += config.learning_rate * round[k].predict(m.rows[i]);
            }
        }
        model.trees.push(round);
        loss_history.push(mean_loss(&scores, &m.labels));
    }
    Ok(TrainOutcome { model, loss_history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

pub fn evaluate(model: &Ensemble, samples: &[(Vec<f64>, GestureClass)]) -> Result<Evaluation, GbdtError> {
    if samples.is_empty() {
        return Err(GbdtError::EmptyDataset);
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (x, c) in samples {
        let pred = model.predict(x)?;
        confusion[c.index()][pred.index()] += 1;
    }
    let correct: usize = (0..N_CLASSES).map(|k| confusion[k][k]).sum();
    Ok(Evaluation { accuracy: correct as f64 / samples.len() as f64, confusion })
}

/// Per-class shuffled split; `round(n_k * test_fraction)` rows of every
/// class go to the test side. Both index lists are returned sorted.
pub fn stratified_split(labels: &[GestureClass], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in GestureClass::TRAINABLE {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, c)| **c == class).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn save_model(model: &Ensemble) -> Vec<u8> {
    let trees: Vec<Value> = model
        .trees
        .iter()
        .map(|round| Value::Array(round.iter().map(|t| t.root.to_json()).collect()))
        .collect();
    let classes: Vec<&str> = GestureClass::TRAINABLE.iter().map(|c| c.name()).collect();
    let body = json!({
        "base_scores": model.base_scores,
        "class_order": classes,
        "learning_rate": model.learning_rate,
        "max_depth": model.max_depth,
        "n_features": model.n_features,
        "trees": trees,
    });
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(serde_json::to_string(&body).expect("model body serializes").as_bytes());
    out
}

pub fn load_model(bytes: &[u8]) -> Result<Ensemble, GbdtError> {
    let corrupt = |m: &str| GbdtError::CorruptModel(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(corrupt("missing GBDT header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != MODEL_VERSION {
        return Err(GbdtError::UnsupportedVersion(version));
    }
    let body: Value = serde_json::from_slice(&bytes[8..]).map_err(|e| GbdtError::CorruptModel(e.to_string()))?;
    let obj = body.as_object().ok_or_else(|| corrupt("body is not an object"))?;
    const KEYS: [&str; 6] = ["base_scores", "class_order", "learning_rate", "max_depth", "n_features", "trees"];
    if obj.len() != KEYS.len() || !KEYS.iter().all(|k| obj.contains_key(*k)) {
        return Err(corrupt("unexpected body keys"));
    }
    let classes: Vec<&str> = GestureClass::TRAINABLE.iter().map(|c| c.name()).collect();
    if obj["class_order"] != json!(classes) {
        return Err(corrupt("unexpected class order"));
    }
    let n_features = obj["n_features"].as_u64().ok_or_else(|| corrupt("n_features"))? as usize;
    let max_depth = obj["max_depth"].as_u64().ok_or_else(|| corrupt("max_depth"))? as usize;
    let learning_rate = obj["learning_rate"].as_f64().ok_or_else(|| corrupt("learning_rate"))?;
    if !(learning_rate > 0.0 && learning_rate <= 1.0) {
        return Err(corrupt("learning_rate outside (0, 1]"));
    }
    let base = obj["base_scores"].as_array().ok_or_else(|| corrupt("base_scores"))?;
    if base.len() != N_CLASSES {
        return Err(corrupt("base_scores length"));
    }
    let mut base_scores = [0.0; N_CLASSES];
    for (k, v) in base.iter().enumerate() {
        base_scores[k] = v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| corrupt("base score"))?;
    }
    let rounds = obj["trees"].as_array().ok_or_else(|| corrupt("trees"))?;
    let mut trees = Vec::with_capacity(rounds.len());
    for round in rounds {
        let round = round.as_array().filter(|r| r.len() == N_CLASSES).ok_or_else(|| corrupt("round shape"))?;
        let mut parsed = Vec::with_capacity(N_CLASSES);
        for t in round {
            let root = Node::from_json(t, n_features)?;
            if root.depth() > max_depth {
                return Err(corrupt("tree deeper than max_depth"));
            }
            parsed.push(RegressionTree { root });
        }
        trees.push(parsed.try_into().expect("checked length"));
    }
    Ok(Ensemble { n_features, learning_rate, max_depth, base_scores, trees })
}
