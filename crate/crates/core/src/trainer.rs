//! CBOW embeddings trained with negative sampling.
//!
//! For a center word w with context positions c_1..c_C, the hidden vector is
//! the mean of the context input rows, h = (1/C) sum W[c_i]. With K noise
//! words n_1..n_K drawn from the unigram^(3/4) distribution, the loss of one
//! window is
//!
//! E = -log sigmoid(<W'[w], h>) - sum_k log sigmoid(-<W'[n_k], h>)
//!
//! Gradients follow from d E / d s_j = sigmoid(s_j) - label_j with scores
//! s_j = <W'[j], h>; the hidden gradient is split evenly (1/C) over the
//! context input rows. Updates are plain SGD with a linearly decaying
//! learning rate driven by a global update counter.
//!
//! Multiple workers update the shared matrices concurrently without locks;
//! colliding writes may drop each other (the usual hogwild trade). With one
//! worker the whole procedure is sequential and bit-reproducible.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::matrix::{AtomicMatrix, Matrix};
use crate::seeding;
use crate::vecmath;
use crate::vocab::{NoiseDistribution, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dims: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub final_lr: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: 150,
            window: 6,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            final_lr: 1e-4,
            seed: 42,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.dims == 0 {
            return bad("dims must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !self.initial_lr.is_finite() || !self.final_lr.is_finite() {
            return bad("learning rates must be finite");
        }
        if self.final_lr < 0.0 || self.initial_lr <= self.final_lr {
            return bad("need initial_lr > final_lr >= 0");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(sigmoid(x)) computed without overflow on either tail.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Context indices for the center position t: every position within
/// `window` of t, excluding t itself, clipped to the document bounds.
pub fn context_window(doc: &[usize], t: usize, window: usize) -> Vec<usize> {
    let lo = t.saturating_sub(window);
    let hi = (t + window + 1).min(doc.len());
    let mut ctx = Vec::with_capacity(hi - lo);
    for (i, &w) in doc.iter().enumerate().take(hi).skip(lo) {
        if i != t {
            ctx.push(w);
        }
    }
    ctx
}

/// All (center, context) training pairs of a document, in position order.
/// Positions with an empty context (single-token documents) produce none.
pub fn context_windows(doc: &[usize], window: usize) -> Vec<(usize, Vec<usize>)> {
    (0..doc.len())
        .filter_map(|t| {
            let ctx = context_window(doc, t, window);
            if ctx.is_empty() {
                None
            } else {
                Some((doc[t], ctx))
            }
        })
        .collect()
}

/// Loss and gradients of one window with respect to the current weights,
/// accumulated per distinct row and sorted by row index.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// d E / d h, the gradient at the hidden layer.
    pub hidden: Vec<f64>,
    /// (input row index, d E / d W[row])
    pub input: Vec<(usize, Vec<f64>)>,
    /// (output row index, d E / d W'[row])
    pub output: Vec<(usize, Vec<f64>)>,
}

pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    input: AtomicMatrix,
    output: AtomicMatrix,
    dims: usize,
    window: usize,
    negatives: usize,
}

impl EmbeddingModel {
    /// Fresh model: input rows uniform in [-0.5/dims, +0.5/dims), output
    /// rows zero. The fill order is row-major, so a given seed always
    /// produces the same matrix.
    pub fn init(vocab: &Vocabulary, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        use rand::Rng;
        let v = vocab.len();
        let n = cfg.dims;
        let bound = 0.5 / n as f64;
        let mut rng = seeding::derive_rng(cfg.seed, &[seeding::TAG_INIT]);
        let mut init = Matrix::zeros(v, n);
        for r in 0..v {
            for c in 0..n {
                init.row_mut(r)[c] = rng.random_range(-bound..bound);
            }
        }
        Ok(EmbeddingModel {
            words: vocab.words().to_vec(),
            index: vocab.words().iter().enumerate().map(|(i, w)| (w.clone(), i)).collect(),
            input: AtomicMatrix::from_matrix(&init),
            output: AtomicMatrix::zeros(v, n),
            dims: n,
            window: cfg.window,
            negatives: cfg.negatives,
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn negatives(&self) -> usize {
        self.negatives
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    pub fn input_row(&self, i: usize) -> Vec<f64> {
        self.input.row_copy(i)
    }

    pub fn input_row_into(&self, i: usize, buf: &mut [f64]) {
        self.input.row_copy_into(i, buf);
    }

    pub fn output_row(&self, i: usize) -> Vec<f64> {
        self.output.row_copy(i)
    }

    pub fn input_matrix(&self) -> Matrix {
        self.input.to_matrix()
    }

    pub fn output_matrix(&self) -> Matrix {
        self.output.to_matrix()
    }

    pub fn set_input_weight(&mut self, r: usize, c: usize, v: f64) {
        self.input.set(r, c, v);
    }

    pub fn set_output_weight(&mut self, r: usize, c: usize, v: f64) {
        self.output.set(r, c, v);
    }

    /// Mean of the context rows. Panics on an empty context; callers skip
    /// windows without context.
    pub fn hidden_vector(&self, context: &[usize]) -> Vec<f64> {
        assert!(!context.is_empty(), "empty context has no hidden vector");
        let mut h = vec![0.0; self.dims];
        for &i in context {
            let base = self.input.row_copy(i);
            vecmath::add_scaled(&mut h, 1.0, &base);
        }
        vecmath::scale(&mut h, 1.0 / context.len() as f64);
        h
    }

    fn score(&self, row: usize, h: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, hv) in h.iter().enumerate() {
            s += self.output.get(row, c) * hv;
        }
        s
    }

    /// sigmoid(<W'[target], h>): the probability the pair is a true one.
    pub fn positive_probability(&self, target: usize, h: &[f64]) -> f64 {
        sigmoid(self.score(target, h))
    }

    /// Full softmax over the output layer; only used by diagnostics and
    /// tests, training never materializes it.
    pub fn softmax_probabilities(&self, h: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = (0..self.vocab_len()).map(|j| self.score(j, h)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    pub fn negative_sampling_loss(&self, target: usize, context: &[usize], negatives: &[usize]) -> f64 {
        let h = self.hidden_vector(context);
        self.loss_given_hidden(target, negatives, &h)
    }

    fn loss_given_hidden(&self, target: usize, negatives: &[usize], h: &[f64]) -> f64 {
        let mut loss = -log_sigmoid(self.score(target, h));
        for &k in negatives {
            loss += -log_sigmoid(-self.score(k, h));
        }
        loss
    }

    /// Per-output-row coefficients d E / d s_j, summed over repeated rows,
    /// target first then negatives in draw order. Also returns the loss and
    /// d E / d h, everything with respect to the current weights.
    fn output_coefficients(
        &self,
        target: usize,
        negatives: &[usize],
        h: &[f64],
    ) -> (f64, Vec<(usize, f64)>, Vec<f64>) {
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(negatives.len() + 1);
        let mut add = |row: usize, c: f64| match coeffs.iter_mut().find(|(r, _)| *r == row) {
            Some((_, acc)) => *acc += c,
            None => coeffs.push((row, c)),
        };
        let s_target = self.score(target, h);
        let mut loss = -log_sigmoid(s_target);
        add(target, sigmoid(s_target) - 1.0);
        for &k in negatives {
            let s = self.score(k, h);
            loss += -log_sigmoid(-s);
            add(k, sigmoid(s));
        }
        let mut grad_h = vec![0.0; h.len()];
        for &(row, coeff) in &coeffs {
            for (c, g) in grad_h.iter_mut().enumerate() {
                *g += coeff * self.output.get(row, c);
            }
        }
        (loss, coeffs, grad_h)
    }

    /// Analytic gradients of the window loss with respect to every involved
    /// parameter row.
    pub fn gradients(&self, target: usize, context: &[usize], negatives: &[usize]) -> Gradients {
        let h = self.hidden_vector(context);
        let (loss, coeffs, grad_h) = self.output_coefficients(target, negatives, &h);
        let mut output: Vec<(usize, Vec<f64>)> = coeffs
            .iter()
            .map(|&(row, coeff)| (row, h.iter().map(|x| coeff * x).collect()))
            .collect();
        output.sort_unstable_by_key(|(row, _)| *row);

        let inv_c = 1.0 / context.len() as f64;
        let mut input: Vec<(usize, Vec<f64>)> = Vec::new();
        for &i in context {
            match input.iter_mut().find(|(r, _)| *r == i) {
                Some((_, g)) => vecmath::add_scaled(g, inv_c, &grad_h),
                None => input.push((i, grad_h.iter().map(|x| inv_c * x).collect())),
            }
        }
        input.sort_unstable_by_key(|(row, _)| *row);
        Gradients { loss, hidden: grad_h, input, output }
    }

    fn check_step_indices(&self, target: usize, context: &[usize], negatives: &[usize]) -> Result<()> {
        let v = self.vocab_len();
        if context.is_empty() {
            return Err(Error::InvalidInput("empty context window".into()));
        }
        let oob = context.iter().chain(negatives).chain(std::iter::once(&target)).any(|&i| i >= v);
        if oob {
            return Err(Error::InvalidInput(format!("word index out of range (vocabulary {v})")));
        }
        Ok(())
    }

    /// One SGD update against fixed negatives. Returns the loss measured
    /// before the update.
    pub fn sgd_step_fixed(
        &mut self,
        target: usize,
        context: &[usize],
        negatives: &[usize],
        lr: f64,
    ) -> Result<f64> {
        self.check_step_indices(target, context, negatives)?;
        Ok(self.step_shared(target, context, negatives, lr))
    }

    /// One SGD update with negatives drawn from the noise distribution.
    pub fn sgd_step<R: rand::Rng>(
        &mut self,
        target: usize,
        context: &[usize],
        noise: &NoiseDistribution,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_step_indices(target, context, &[])?;
        let negatives: Vec<usize> =
            (0..self.negatives).map(|_| noise.sample_negative(target, rng)).collect();
        Ok(self.step_shared(target, context, &negatives, lr))
    }

    /// The lock-free update shared by the public step functions and the
    /// training workers. All gradients are taken against the weights as
    /// read at entry, then applied.
    fn step_shared(&self, target: usize, context: &[usize], negatives: &[usize], lr: f64) -> f64 {
        let h = self.hidden_vector(context);
        let (loss, coeffs, grad_h) = self.output_coefficients(target, negatives, &h);
        for &(row, coeff) in &coeffs {
            self.output.add_scaled_row(row, -lr * coeff, &h);
        }
        let share = -lr / context.len() as f64;
        for &i in context {
            self.input.add_scaled_row(i, share, &grad_h);
        }
        loss
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        save_matrix(path, header, &self.words, &self.input)
    }

    /// The output-matrix sidecar, same layout as the main file.
    pub fn save_output(&self, path: &Path, header: &ArtifactHeader) -> Result<()> {
        save_matrix(path, header, &self.words, &self.output)
    }

    pub fn load_from<R: BufRead>(mut reader: R, source: &Path) -> Result<(Option<ArtifactHeader>, Self)> {
        let mut line_no = 0usize;
        let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
        let mut lines = ModelLines { leftover, reader, line_no, source };

        let shape = lines.next_line()?.ok_or_else(|| {
            Error::parse(source, lines.line_no, "missing `V N` shape line")
        })?;
        let mut parts = shape.split_whitespace();
        let bad_shape = || Error::parse(source, 1, format!("bad shape line `{shape}`"));
        let v: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_shape)?;
        let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_shape)?;
        if parts.next().is_some() {
            return Err(bad_shape());
        }

        let mut words = Vec::with_capacity(v.min(4096));
        let mut data: Vec<f64> = Vec::with_capacity(v.min(4096).saturating_mul(n.min(1024)));
        let mut index = HashMap::new();
        while let Some(line) = lines.next_line()? {
            if line.is_empty() {
                continue;
            }
            let line_no = lines.line_no;
            let mut fields = line.split(' ');
            let surface = fields.next().unwrap_or_default();
            if surface.is_empty() {
                return Err(Error::parse(source, line_no, "empty word surface"));
            }
            if index.insert(surface.to_string(), words.len()).is_some() {
                return Err(Error::parse(source, line_no, format!("duplicate word `{surface}`")));
            }
            let mut row = 0usize;
            for field in fields {
                let x: f64 = field.parse().map_err(|_| {
                    Error::parse(source, line_no, format!("bad float `{field}`"))
                })?;
                if !x.is_finite() {
                    return Err(Error::parse(source, line_no, "non-finite weight"));
                }
                data.push(x);
                row += 1;
            }
            if row != n {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("row has {row} values, expected {n}"),
                ));
            }
            words.push(surface.to_string());
            if words.len() > v {
                return Err(Error::parse(source, line_no, format!("more than {v} rows")));
            }
        }
        if words.len() != v {
            return Err(Error::parse(
                source,
                lines.line_no,
                format!("expected {v} rows, found {}", words.len()),
            ));
        }

        let parse_extra = |key: &str, default: usize| -> usize {
            header
                .as_ref()
                .and_then(|h| h.extra(key))
                .and_then(|s| s.parse().ok())
                .unwrap_or(default)
        };
        let window = parse_extra("window", TrainConfig::default().window);
        let negatives = parse_extra("negatives", TrainConfig::default().negatives);
        let input = AtomicMatrix::from_matrix(&Matrix::from_flat(v, n, data));
        let output = AtomicMatrix::zeros(v, n);
        Ok((header, EmbeddingModel { words, index, input, output, dims: n, window, negatives }))
    }

    pub fn load(path: &Path) -> Result<(Option<ArtifactHeader>, Self)> {
        Self::load_from(artifact::open_reader(path)?, path)
    }
}

struct ModelLines<'a, R: BufRead> {
    leftover: Option<String>,
    reader: R,
    line_no: usize,
    source: &'a Path,
}

impl<R: BufRead> ModelLines<'_, R> {
    fn next_line(&mut self) -> Result<Option<String>> {
        if let Some(l) = self.leftover.take() {
            return Ok(Some(l));
        }
        let mut buf = String::new();
        let n = self.reader.read_line(&mut buf).map_err(|e| Error::io(self.source, e))?;
        if n == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        Ok(Some(buf.trim_end_matches(['\n', '\r']).to_string()))
    }
}

fn save_matrix(path: &Path, header: &ArtifactHeader, words: &[String], m: &AtomicMatrix) -> Result<()> {
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    writeln!(w, "{} {}", m.rows(), m.cols()).map_err(io_err)?;
    let mut row = vec![0.0; m.cols()];
    for (i, word) in words.iter().enumerate() {
        m.row_copy_into(i, &mut row);
        write!(w, "{word}").map_err(io_err)?;
        for x in &row {
            write!(w, " {x}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Train a CBOW model over documents already mapped to vocabulary indices.
/// Bit-reproducible for a given seed when `workers` is 1; with more workers
/// the updates interleave freely.
pub fn train(docs: &[Vec<usize>], vocab: &Vocabulary, cfg: &TrainConfig) -> Result<EmbeddingModel> {
    cfg.validate()?;
    if vocab.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs a vocabulary of at least 2 entries, got {}",
            vocab.len()
        )));
    }
    if docs.iter().flatten().any(|&i| i >= vocab.len()) {
        return Err(Error::InvalidInput("document index outside the vocabulary".into()));
    }
    let windows_per_epoch: u64 =
        docs.iter().map(|d| if d.len() >= 2 { d.len() as u64 } else { 0 }).sum();
    if windows_per_epoch == 0 {
        return Err(Error::InvalidInput(
            "no trainable context windows: every document has fewer than 2 in-vocabulary tokens"
                .into(),
        ));
    }

    let noise = NoiseDistribution::new(vocab)?;
    let model = EmbeddingModel::init(vocab, cfg)?;
    let total_updates = windows_per_epoch * cfg.epochs as u64;
    let counter = AtomicU64::new(0);
    let span = cfg.initial_lr - cfg.final_lr;

    let chunk_size = docs.len().div_ceil(cfg.workers);
    std::thread::scope(|scope| {
        for (worker_id, chunk) in docs.chunks(chunk_size).enumerate() {
            let model = &model;
            let noise = &noise;
            let counter = &counter;
            scope.spawn(move || {
                let mut rng =
                    seeding::derive_rng(cfg.seed, &[seeding::TAG_TRAIN, worker_id as u64]);
                let mut negatives = Vec::with_capacity(cfg.negatives);
                let mut context = Vec::with_capacity(2 * cfg.window);
                let mut loss_sum = 0.0;
                let mut steps = 0u64;
                for _epoch in 0..cfg.epochs {
                    for doc in chunk {
                        for t in 0..doc.len() {
                            context.clear();
                            let lo = t.saturating_sub(cfg.window);
                            let hi = (t + cfg.window + 1).min(doc.len());
                            for (i, &w) in doc.iter().enumerate().take(hi).skip(lo) {
                                if i != t {
                                    context.push(w);
                                }
                            }
                            if context.is_empty() {
                                continue;
                            }
                            let u = counter.fetch_add(1, Ordering::Relaxed);
                            let lr = (cfg.initial_lr - span * u as f64 / total_updates as f64)
                                .max(cfg.final_lr);
                            let target = doc[t];
                            negatives.clear();
                            for _ in 0..cfg.negatives {
                                negatives.push(noise.sample_negative(target, &mut rng));
                            }
                            loss_sum += model.step_shared(target, &context, &negatives, lr);
                            steps += 1;
                        }
                    }
                }
                if steps > 0 {
                    log::debug!(
                        "trainer worker {worker_id}: {steps} updates, mean loss {:.4}",
                        loss_sum / steps as f64
                    );
                }
            });
        }
    });

    let finite = (0..model.vocab_len()).all(|r| {
        (0..model.dims).all(|c| model.input.get(r, c).is_finite() && model.output.get(r, c).is_finite())
    });
    if !finite {
        return Err(Error::InvalidInput(
            "training diverged: model contains non-finite weights".into(),
        ));
    }
    Ok(model)
}
