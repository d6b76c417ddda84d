//! Linear-probe harness over frozen image embeddings: a one-hidden-layer
//! MLP trained with BCE loss and plain SGD, with early stopping and a grid
//! search over hidden size and learning rate.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::TidaError;
use crate::skills::{image_has_skill, Skill, SkillLexicon};

const EPS: f64 = 1e-12;
pub const EMB_MAGIC: &[u8; 8] = b"TIDAEMB1";

/// One image embedding; all vectors in a file share the same dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_sizes: vec![16, 64, 256],
            learning_rates: vec![1e-1, 1e-2, 1e-3],
            patience: 5,
            max_epochs: 100,
            batch_size: 32,
            seed: 0,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub best_hidden: usize,
    pub best_lr: f64,
    /// Positive-class metrics on the test split, percent scale.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Macro-averaged F1 over both classes, reported alongside.
    pub f1_macro: f64,
    pub epochs_run: usize,
    pub val_loss_curve: Vec<f64>,
}

/// Parameters of the one-hidden-layer probe.
#[derive(Debug, Clone)]
pub struct MlpParams {
    /// hidden x input weight matrix, row-major per hidden unit.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub activation: Activation,
}

impl MlpParams {
    /// Seeded uniform init scaled by 1/sqrt(fan_in).
    pub fn init(input_dim: usize, hidden: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let scale1 = 1.0 / (input_dim as f64).sqrt();
        let scale2 = 1.0 / (hidden as f64).sqrt();
        MlpParams {
            w1: (0..hidden)
                .map(|_| (0..input_dim).map(|_| rng.gen_range(-scale1..scale1)).collect())
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.gen_range(-scale2..scale2)).collect(),
            b2: 0.0,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Identity => z,
    }
}

fn act_grad(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Identity => 1.0,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass: sigmoid(w2 . act(W1 x + b1) + b2).
pub fn mlp_forward(x: &[f64], params: &MlpParams) -> Result<f64, TidaError> {
    if x.len() != params.input_dim() {
        return Err(TidaError::Config(format!(
            "input dimension {} does not match parameters ({})",
            x.len(),
            params.input_dim()
        )));
    }
    let pre = params.hidden_pre(x);
    let logit = pre
        .iter()
        .zip(&params.w2)
        .map(|(z, w)| act(params.activation, *z) * w)
        .sum::<f64>()
        + params.b2;
    Ok(sigmoid(logit))
}

/// Binary cross-entropy of a clamped probability.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Gradients of the BCE loss w.r.t. every parameter, same shapes as the
/// parameters themselves.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpGrads {
    fn zeros(params: &MlpParams) -> Self {
        MlpGrads {
            w1: params.w1.iter().map(|row| vec![0.0; row.len()]).collect(),
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.b1.iter_mut().zip(&other.b1) {
            *x += scale * y;
        }
        for (x, y) in self.w2.iter_mut().zip(&other.w2) {
            *x += scale * y;
        }
        self.b2 += scale * other.b2;
    }
}

/// Loss and analytic gradients for one labeled example, backpropagated
/// through the forward pass.
pub fn loss_and_grad(params: &MlpParams, x: &[f64], y: f64) -> Result<(f64, MlpGrads), TidaError> {
    if x.len() != params.input_dim() {
        return Err(TidaError::Config("input dimension mismatch".into()));
    }
    let pre = params.hidden_pre(x);
    let h: Vec<f64> = pre.iter().map(|z| act(params.activation, *z)).collect();
    let logit = h.iter().zip(&params.w2).map(|(hj, w)| hj * w).sum::<f64>() + params.b2;
    let p = sigmoid(logit);
    let loss = bce_loss(p, y);

    // d loss / d logit for sigmoid + BCE
    let dz = p - y;
    let mut grads = MlpGrads::zeros(params);
    grads.b2 = dz;
    for (j, hj) in h.iter().enumerate() {
        grads.w2[j] = dz * hj;
        let dpre = dz * params.w2[j] * act_grad(params.activation, pre[j]);
        grads.b1[j] = dpre;
        for (i, xi) in x.iter().enumerate() {
            grads.w1[j][i] = dpre * xi;
        }
    }
    Ok((loss, grads))
}

fn sgd_step(params: &mut MlpParams, grads: &MlpGrads, lr: f64) {
    for (row, grow) in params.w1.iter_mut().zip(&grads.w1) {
        for (w, g) in row.iter_mut().zip(grow) {
            *w -= lr * g;
        }
    }
    for (b, g) in params.b1.iter_mut().zip(&grads.b1) {
        *b -= lr * g;
    }
    for (w, g) in params.w2.iter_mut().zip(&grads.w2) {
        *w -= lr * g;
    }
    params.b2 -= lr * grads.b2;
}

/// Disjoint index sets into the embedding list.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn mean_loss(
    params: &MlpParams,
    data: &[(Vec<f64>, f64)],
    indices: &[usize],
) -> Result<f64, TidaError> {
    let mut total = 0.0;
    for &i in indices {
        let p = mlp_forward(&data[i].0, params)?;
        total += bce_loss(p, data[i].1);
    }
    Ok(total / indices.len().max(1) as f64)
}

struct CellOutcome {
    params: MlpParams,
    best_val_loss: f64,
    epochs_run: usize,
    curve: Vec<f64>,
}

fn train_cell(
    data: &[(Vec<f64>, f64)],
    split: &SplitIndices,
    hidden: usize,
    lr: f64,
    cfg: &ProbeConfig,
    cell_seed: u64,
) -> Result<CellOutcome, TidaError> {
    let input_dim = data[0].0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
    let mut params = MlpParams::init(input_dim, hidden, cfg.activation, &mut rng);
    let mut best_params = params.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut bad_epochs = 0;
    let mut curve = Vec::new();
    let mut order: Vec<usize> = split.train.clone();
    let mut epochs_run = 0;

    for _ in 0..cfg.max_epochs {
        epochs_run += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut accum = MlpGrads::zeros(&params);
            for &i in batch {
                let (_, grads) = loss_and_grad(&params, &data[i].0, data[i].1)?;
                accum.add_scaled(&grads, 1.0 / batch.len() as f64);
            }
            sgd_step(&mut params, &accum, lr);
        }
        let val_loss = mean_loss(&params, data, &split.val)?;
        curve.push(val_loss);
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    Ok(CellOutcome {
        params: best_params,
        best_val_loss,
        epochs_run,
        curve,
    })
}

/// Grid-search training: per (hidden, lr) cell run early-stopped mini-batch
/// SGD, select the cell with lowest validation loss (lexicographic
/// tie-break), and report test-split P/R/F1 at threshold 0.5.
pub fn train_probe(
    embeddings: &[EmbeddingRecord],
    labels: &HashMap<String, u8>,
    cfg: &ProbeConfig,
    split: &SplitIndices,
) -> Result<ProbeResult, TidaError> {
    if cfg.hidden_sizes.is_empty() || cfg.learning_rates.is_empty() {
        return Err(TidaError::Config("empty grid".into()));
    }
    let data: Vec<(Vec<f64>, f64)> = embeddings
        .iter()
        .map(|e| {
            let y = labels.get(&e.image_id).copied().ok_or_else(|| {
                TidaError::Integrity(format!("missing label for image: {}", e.image_id))
            })?;
            Ok((e.vector.clone(), y as f64))
        })
        .collect::<Result<_, TidaError>>()?;
    let dim = data.first().map(|(v, _)| v.len()).unwrap_or(0);
    for (v, _) in &data {
        if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
            return Err(TidaError::Integrity(
                "embedding vectors must share one finite dimension".into(),
            ));
        }
    }
    let train_labels: Vec<f64> = split.train.iter().map(|&i| data[i].1).collect();
    if train_labels.is_empty()
        || train_labels.iter().all(|&y| y == 0.0)
        || train_labels.iter().all(|&y| y == 1.0)
    {
        return Err(TidaError::DegenerateLabels(
            "training labels contain a single class".into(),
        ));
    }

    let mut best: Option<(usize, f64, CellOutcome)> = None;
    for (hi, &hidden) in cfg.hidden_sizes.iter().enumerate() {
        for (li, &lr) in cfg.learning_rates.iter().enumerate() {
            let cell_seed = cfg
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((hi * cfg.learning_rates.len() + li) as u64);
            let outcome = train_cell(&data, split, hidden, lr, cfg, cell_seed)?;
            let better = match &best {
                None => true,
                Some((_, _, b)) => outcome.best_val_loss < b.best_val_loss,
            };
            if better {
                best = Some((hidden, lr, outcome));
            }
        }
    }
    let (best_hidden, best_lr, outcome) = best.expect("nonempty grid");

    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &i in &split.test {
        let p = mlp_forward(&data[i].0, &outcome.params)?;
        let predicted = p >= 0.5;
        let truth = data[i].1 >= 0.5;
        match (predicted, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let precision = rate(tp, tp + fp);
    let recall = rate(tp, tp + fn_);
    let harm = |a: f64, b: f64| if a + b == 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
    let f1 = harm(precision, recall);
    let f1_neg = harm(rate(tn, tn + fn_), rate(tn, tn + fp));
    Ok(ProbeResult {
        best_hidden,
        best_lr,
        precision,
        recall,
        f1,
        f1_macro: (f1 + f1_neg) / 2.0,
        epochs_run: outcome.epochs_run,
        val_loss_curve: outcome.curve,
    })
}

/// Label every image of a dataset by whether any of its reference captions
/// bears the skill, pairing it with its stored embedding.
pub fn build_probe_dataset(
    d: &Dataset,
    skill: Skill,
    lexicon: &SkillLexicon,
    embeddings_file: &Path,
) -> Result<(Vec<EmbeddingRecord>, HashMap<String, u8>), TidaError> {
    let all = read_embeddings(embeddings_file)?;
    let by_id: HashMap<&str, &EmbeddingRecord> =
        all.iter().map(|e| (e.image_id.as_str(), e)).collect();
    let mut embeddings = Vec::with_capacity(d.images.len());
    let mut labels = HashMap::new();
    for img in &d.images {
        let emb = by_id.get(img.image_id.as_str()).ok_or_else(|| {
            TidaError::Integrity(format!("missing embedding for image: {}", img.image_id))
        })?;
        embeddings.push((*emb).clone());
        let refs: Vec<&str> = d
            .captions_of(&img.image_id)
            .iter()
            .map(|c| c.text.as_str())
            .collect();
        let label = image_has_skill(&refs, skill, lexicon);
        labels.insert(img.image_id.clone(), label as u8);
    }
    Ok((embeddings, labels))
}

/// Read embeddings from JSONL or the binary layout, detected by magic bytes.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, TidaError> {
    let mut file =
        std::fs::File::open(path).map_err(|e| TidaError::Io(format!("{}: {e}", path.display())))?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic).map_err(|e| TidaError::Io(e.to_string()))?;
    if n == 8 && &magic == EMB_MAGIC {
        return read_embeddings_binary(file);
    }
    drop(file);
    let file =
        std::fs::File::open(path).map_err(|e| TidaError::Io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TidaError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| TidaError::Parse {
            offset: 0,
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    validate_embeddings(&records)?;
    Ok(records)
}

// Binary layout: magic "TIDAEMB1", u32 LE dimension, then per record a
// u32 LE id byte length, the id bytes, and D f64 LE components.
fn read_embeddings_binary<R: Read>(mut reader: R) -> Result<Vec<EmbeddingRecord>, TidaError> {
    let mut buf4 = [0u8; 4];
    reader
        .read_exact(&mut buf4)
        .map_err(|e| TidaError::Io(format!("embedding header: {e}")))?;
    let dim = u32::from_le_bytes(buf4) as usize;
    let mut records = Vec::new();
    loop {
        match reader.read_exact(&mut buf4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(TidaError::Io(e.to_string())),
        }
        let id_len = u32::from_le_bytes(buf4) as usize;
        let mut id = vec![0u8; id_len];
        reader.read_exact(&mut id).map_err(|e| TidaError::Io(e.to_string()))?;
        let image_id = String::from_utf8(id)
            .map_err(|e| TidaError::Integrity(format!("embedding id not UTF-8: {e}")))?;
        let mut vector = Vec::with_capacity(dim);
        let mut buf8 = [0u8; 8];
        for _ in 0..dim {
            reader.read_exact(&mut buf8).map_err(|e| TidaError::Io(e.to_string()))?;
            vector.push(f64::from_le_bytes(buf8));
        }
        records.push(EmbeddingRecord { image_id, vector });
    }
    validate_embeddings(&records)?;
    Ok(records)
}

/// Write embeddings in the binary layout.
pub fn write_embeddings_binary<W: Write>(
    records: &[EmbeddingRecord],
    mut out: W,
) -> Result<(), TidaError> {
    validate_embeddings(records)?;
    let dim = records.first().map(|r| r.vector.len()).unwrap_or(0);
    out.write_all(EMB_MAGIC).map_err(|e| TidaError::Io(e.to_string()))?;
    out.write_all(&(dim as u32).to_le_bytes())
        .map_err(|e| TidaError::Io(e.to_string()))?;
    for rec in records {
        out.write_all(&(rec.image_id.len() as u32).to_le_bytes())
            .map_err(|e| TidaError::Io(e.to_string()))?;
        out.write_all(rec.image_id.as_bytes())
            .map_err(|e| TidaError::Io(e.to_string()))?;
        for v in &rec.vector {
            out.write_all(&v.to_le_bytes()).map_err(|e| TidaError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

fn validate_embeddings(records: &[EmbeddingRecord]) -> Result<(), TidaError> {
    let dim = records.first().map(|r| r.vector.len());
    for rec in records {
        if Some(rec.vector.len()) != dim {
            return Err(TidaError::Integrity(format!(
                "embedding dimension mismatch at {}",
                rec.image_id
            )));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(TidaError::Integrity(format!(
                "non-finite embedding component at {}",
                rec.image_id
            )));
        }
    }
    Ok(())
}
