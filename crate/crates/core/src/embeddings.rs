//! Skip-gram word vectors trained with negative sampling, the cosine score
//! used throughout the crate, and a plain-text embedding file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{vocab_hash, Vocabulary};
use crate::linalg::{axpy, dot, norm, sigmoid};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("corpus has no (center, context) pairs to train on")]
    DegenerateCorpus,
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// A `V x D` table of word vectors, one row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(tokens: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != tokens.len() * dim {
            return Err(EmbeddingError::DimensionMismatch {
                left: data.len(),
                right: tokens.len() * dim,
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(format!(
                "entry {} of row {}",
                pos % dim.max(1),
                pos / dim.max(1)
            )));
        }
        Ok(EmbeddingMatrix { tokens, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn vocab_hash(&self) -> String {
        vocab_hash(&self.tokens)
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingMatrix {
            tokens: self.tokens.clone(),
            dim: self.dim,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_to(&mut out).map_err(io_err)
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (token, row) in self.tokens.iter().zip(self.rows()) {
            out.write_all(token.as_bytes())?;
            for x in row {
                write!(out, " {}", format_significant(*x, 9))?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let parse = |line: usize, message: String| EmbeddingError::Parse { line, message };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse(1, "missing header".into()))?
            .map_err(|e| parse(1, e.to_string()))?;
        let (rows, dim) = match header.split_whitespace().collect::<Vec<_>>()[..] {
            [v, d] => (
                v.parse::<usize>()
                    .map_err(|e| parse(1, format!("bad row count: {e}")))?,
                d.parse::<usize>()
                    .map_err(|e| parse(1, format!("bad dimension: {e}")))?,
            ),
            _ => return Err(parse(1, "expected header `V D`".into())),
        };
        if dim == 0 {
            return Err(parse(1, "dimension must be positive".into()));
        }

        let mut tokens = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if tokens.len() == rows {
                return Err(parse(lineno, format!("more than the {rows} rows in the header")));
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            let before = data.len();
            for field in fields {
                let x: f64 = field
                    .parse()
                    .map_err(|e| parse(lineno, format!("bad value {field:?}: {e}")))?;
                if !x.is_finite() {
                    return Err(parse(lineno, format!("non-finite value {field:?}")));
                }
                data.push(x);
            }
            if data.len() - before != dim {
                return Err(parse(
                    lineno,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
            tokens.push(token.to_owned());
        }
        if tokens.len() != rows {
            return Err(parse(
                tokens.len() + 2,
                format!("header declares {rows} rows, found {}", tokens.len()),
            ));
        }
        EmbeddingMatrix::new(tokens, dim, data)
    }
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    m.save(path)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::load(path)
}

/// Decimal rendering with `digits` significant digits, switching to
/// exponent notation for very large or small magnitudes.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exponent) {
        let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.prec$e}", prec = digits - 1)
    }
}

/// Cosine similarity. Returns exactly 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub unigram_power: f64,
    /// Single-threaded and bit-reproducible when true; lock-free
    /// multi-threaded (and nondeterministic) otherwise.
    pub deterministic: bool,
    /// Worker count in fast mode; 0 means one per available core.
    pub threads: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            seed: 1,
            unigram_power: 0.75,
            deterministic: true,
            threads: 0,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(EmbeddingError::InvalidConfig(m.to_owned()));
        if self.dim < 2 {
            return fail("dim must be >= 2");
        }
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if !(self.initial_lr > 0.0) || !(self.min_lr > 0.0) {
            return fail("learning rates must be > 0");
        }
        if !self.unigram_power.is_finite() {
            return fail("unigram_power must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgnsOutput {
    pub embeddings: EmbeddingMatrix,
    /// Mean per-pair loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub deterministic: bool,
}

/// Negative-sampling loss for one (center, context) pair:
/// `-ln s(u_ctx . v) - sum_n ln s(-u_n . v)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = -log_sigmoid(dot(context, center));
    for neg in negatives {
        loss -= log_sigmoid(-dot(neg, center));
    }
    loss
}

/// Analytic gradient of [`pair_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_loss_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let g = sigmoid(dot(context, center)) - 1.0;
    let mut grad_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let grad_context = center.iter().map(|v| g * v).collect();
    let grad_negs = negatives
        .iter()
        .map(|neg| {
            let s = sigmoid(dot(neg, center));
            axpy(s, neg, &mut grad_center);
            center.iter().map(|v| s * v).collect()
        })
        .collect();
    PairGradient {
        center: grad_center,
        context: grad_context,
        negatives: grad_negs,
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    // ln s(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Row-addressable parameter storage so the same SGD kernel drives both the
/// single-threaded and the lock-free trainer.
trait RowStore {
    fn read(&self, row: usize, out: &mut [f64]);
    fn add(&mut self, row: usize, delta: &[f64], scale: f64);
}

struct DenseRows<'a> {
    data: &'a mut [f64],
    dim: usize,
}

impl RowStore for DenseRows<'_> {
    fn read(&self, row: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[row * self.dim..(row + 1) * self.dim]);
    }

    fn add(&mut self, row: usize, delta: &[f64], scale: f64) {
        axpy(scale, delta, &mut self.data[row * self.dim..(row + 1) * self.dim]);
    }
}

/// f64 bit patterns in atomics; concurrent writers may lose updates, which
/// is the usual lock-free SGD trade-off.
#[derive(Clone, Copy)]
struct SharedRows<'a> {
    data: &'a [AtomicU64],
    dim: usize,
}

impl RowStore for SharedRows<'_> {
    fn read(&self, row: usize, out: &mut [f64]) {
        let src = &self.data[row * self.dim..(row + 1) * self.dim];
        for (o, a) in out.iter_mut().zip(src) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn add(&mut self, row: usize, delta: &[f64], scale: f64) {
        let dst = &self.data[row * self.dim..(row + 1) * self.dim];
        for (a, d) in dst.iter().zip(delta) {
            let cur = f64::from_bits(a.load(Ordering::Relaxed));
            a.store((cur + scale * d).to_bits(), Ordering::Relaxed);
        }
    }
}

struct Kernel<'a> {
    config: &'a SgnsConfig,
    noise: &'a WeightedIndex<f64>,
    total_work: f64,
}

struct Scratch {
    center: Vec<f64>,
    target: Vec<f64>,
    grad: Vec<f64>,
}

impl Kernel<'_> {
    fn lr(&self, done: usize) -> f64 {
        let c = self.config;
        let frac = (done as f64 / self.total_work).min(1.0);
        (c.initial_lr - (c.initial_lr - c.min_lr) * frac).max(c.min_lr)
    }

    /// One pass over `docs`. Returns (summed loss, pair count).
    fn run<I: RowStore, O: RowStore>(
        &self,
        docs: &[&[usize]],
        input: &mut I,
        output: &mut O,
        rng: &mut ChaCha8Rng,
        progress: &AtomicUsize,
        scratch: &mut Scratch,
    ) -> (f64, usize) {
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for doc in docs {
            let lr = self.lr(progress.fetch_add(doc.len(), Ordering::Relaxed));
            for (pos, &center) in doc.iter().enumerate() {
                let reach = rng.random_range(1..=self.config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(doc.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = doc[ctx_pos];
                    input.read(center, &mut scratch.center);
                    scratch.grad.fill(0.0);
                    for n in 0..=self.config.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0)
                        } else {
                            let t = self.noise.sample(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        output.read(target, &mut scratch.target);
                        let f = dot(&scratch.target, &scratch.center);
                        loss -= if label > 0.0 {
                            log_sigmoid(f)
                        } else {
                            log_sigmoid(-f)
                        };
                        // descent step on the pair loss
                        let g = (label - sigmoid(f)) * lr;
                        axpy(g, &scratch.target, &mut scratch.grad);
                        output.add(target, &scratch.center, g);
                    }
                    input.add(center, &scratch.grad, 1.0);
                    pairs += 1;
                }
            }
        }
        (loss, pairs)
    }
}

/// Trains skip-gram embeddings with negative sampling over id sequences.
/// Returns the input-side vectors.
pub fn train_sgns(
    documents: &[Vec<usize>],
    vocab: &Vocabulary,
    config: &SgnsConfig,
) -> Result<SgnsOutput> {
    config.validate()?;
    let v = vocab.len();
    if let Some(bad) = documents.iter().flatten().find(|&&id| id >= v) {
        return Err(EmbeddingError::InvalidConfig(format!(
            "token id {bad} out of range for vocabulary of {v}"
        )));
    }
    let docs: Vec<&[usize]> = documents
        .iter()
        .filter(|d| d.len() >= 2)
        .map(Vec::as_slice)
        .collect();
    if docs.is_empty() {
        return Err(EmbeddingError::DegenerateCorpus);
    }

    let weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c.max(1) as f64).powf(config.unigram_power))
        .collect();
    let noise = WeightedIndex::new(&weights)
        .map_err(|e| EmbeddingError::InvalidConfig(format!("noise distribution: {e}")))?;

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..v * dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; v * dim];

    let tokens_per_epoch: usize = docs.iter().map(|d| d.len()).sum();
    let kernel = Kernel {
        config,
        noise: &noise,
        total_work: (tokens_per_epoch * config.epochs) as f64,
    };
    let progress = AtomicUsize::new(0);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    if config.deterministic {
        let mut scratch = Scratch {
            center: vec![0.0; dim],
            target: vec![0.0; dim],
            grad: vec![0.0; dim],
        };
        for epoch in 0..config.epochs {
            let (loss, pairs) = kernel.run(
                &docs,
                &mut DenseRows {
                    data: &mut input,
                    dim,
                },
                &mut DenseRows {
                    data: &mut output,
                    dim,
                },
                &mut rng,
                &progress,
                &mut scratch,
            );
            epoch_losses.push(check_epoch(epoch, loss, pairs, &input)?);
        }
    } else {
        let threads = match config.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
        .min(docs.len());
        let shared_in: Vec<AtomicU64> = input.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let shared_out: Vec<AtomicU64> = output.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let shard = docs.len().div_ceil(threads);
        for epoch in 0..config.epochs {
            let results: Vec<(f64, usize)> = std::thread::scope(|scope| {
                let handles: Vec<_> = docs
                    .chunks(shard)
                    .enumerate()
                    .map(|(t, chunk)| {
                        let kernel = &kernel;
                        let progress = &progress;
                        let mut inp = SharedRows {
                            data: &shared_in,
                            dim,
                        };
                        let mut out = SharedRows {
                            data: &shared_out,
                            dim,
                        };
                        let seed = config
                            .seed
                            .wrapping_add((epoch * threads + t + 1) as u64 * 0x9E37_79B9);
                        scope.spawn(move || {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            let mut scratch = Scratch {
                                center: vec![0.0; dim],
                                target: vec![0.0; dim],
                                grad: vec![0.0; dim],
                            };
                            kernel.run(chunk, &mut inp, &mut out, &mut rng, progress, &mut scratch)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sgns worker panicked"))
                    .collect()
            });
            let (loss, pairs) = results
                .into_iter()
                .fold((0.0, 0), |acc, r| (acc.0 + r.0, acc.1 + r.1));
            let snapshot: Vec<f64> = shared_in
                .iter()
                .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
                .collect();
            epoch_losses.push(check_epoch(epoch, loss, pairs, &snapshot)?);
        }
        input = shared_in
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect();
    }

    Ok(SgnsOutput {
        embeddings: EmbeddingMatrix::new(vocab.tokens().to_vec(), dim, input)?,
        epoch_losses,
        deterministic: config.deterministic,
    })
}

fn check_epoch(epoch: usize, loss: f64, pairs: usize, weights: &[f64]) -> Result<f64> {
    if pairs == 0 {
        return Err(EmbeddingError::DegenerateCorpus);
    }
    let mean = loss / pairs as f64;
    if !mean.is_finite() || weights.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite(format!("epoch {}", epoch + 1)));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, VocabFilters};

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.5];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.70710678).abs() < 1e-8);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.0, 9), "0");
        assert_eq!(format_significant(1.0, 9), "1.00000000");
        assert_eq!(format_significant(-0.00123456789123, 9), "-0.00123456789");
        assert_eq!(format_significant(1.5e-20, 9), "1.50000000e-20");
    }

    #[test]
    fn save_load_round_trip() {
        let m = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![0.123456789123, -1.0, 3.0e-7, 42.5, -0.0, 1e-12],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.tokens(), m.tokens());
        for (x, y) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn load_rejects_row_count_mismatch() {
        let text = "2 3\na 1 2 3\nb 1 2 3\nc 1 2 3\n";
        match EmbeddingMatrix::read_from(text.as_bytes()) {
            Err(EmbeddingError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let short = "2 3\na 1 2 3\n";
        assert!(matches!(
            EmbeddingMatrix::read_from(short.as_bytes()),
            Err(EmbeddingError::Parse { .. })
        ));
        let ragged = "1 3\na 1 2\n";
        assert!(matches!(
            EmbeddingMatrix::read_from(ragged.as_bytes()),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn single_token_documents_are_degenerate() {
        let docs = vec![vec!["aa"], vec!["bb"]];
        let vocab = build_vocabulary(
            &docs,
            VocabFilters {
                min_count: 1,
                max_doc_ratio: 1.0,
            },
        )
        .unwrap();
        let ids: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
        assert!(matches!(
            train_sgns(&ids, &vocab, &SgnsConfig::default()),
            Err(EmbeddingError::DegenerateCorpus)
        ));
    }

    #[test]
    fn config_validation() {
        let bad = SgnsConfig {
            dim: 1,
            ..SgnsConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SgnsConfig {
            initial_lr: 0.0,
            ..SgnsConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_sigmoid_matches_direct_form() {
        for x in [-30.0, -2.0, 0.0, 0.7, 12.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
    }
}
