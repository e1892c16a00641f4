//! Answer classifiers that score a question against an image (VQA) or a
//! bag-of-words caption (VQA-Caption).
//!
//! Both heads share one architecture:
//!
//! ```text
//! z_in  = tanh(W_in x_in + b_in)
//! z_q   = tanh(W_q  x_q  + b_q)
//! h     = z_in ⊙ z_q            (optional dropout on h)
//! s     = W_s h + b_s           (answer logits)
//! log p = log_softmax(s)
//! ```

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::{derive_seed, rng, Rng};
use crate::numcore::{
    apply_site, log_softmax_cols, rmsprop_step, softmax_cols, Activation, DropoutMask, DropoutSite, GradCheckable, LinearLayer, Matrix,
    Mode, RmsPropConfig,
};

/// Dropout site id of the head's hidden layer.
pub const HEAD_HIDDEN_SITE: u32 = 0x10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Image features in; `P_I(A | Q, I)`.
    Image,
    /// Bag-of-words caption in; `P_C(A | Q, C)`.
    Caption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub input: usize,
    pub question: usize,
    pub multimodal: usize,
    pub answers: usize,
}

impl HeadDims {
    /// 4096-d image encoding, 2048-d question encoding, 1024-d joint space,
    /// 1000 answers.
    pub fn image_default() -> Self {
        Self {
            input: 4096,
            question: 2048,
            multimodal: 1024,
            answers: 1000,
        }
    }

    /// As [`HeadDims::image_default`] with a 1000-word bag-of-words input.
    pub fn caption_default() -> Self {
        Self {
            input: 1000,
            ..Self::image_default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqaHead {
    pub kind: HeadKind,
    pub proj_input: LinearLayer,
    pub proj_question: LinearLayer,
    pub answer_layer: LinearLayer,
    /// Keep probability of the dropout on `h`; 1 disables it.
    pub hidden_keep_prob: f64,
}

/// Image head parameters.
pub type VqaHeadParams = VqaHead;
/// Caption head parameters; same layout with `kind == HeadKind::Caption`.
pub type VqaCaptionHeadParams = VqaHead;

/// One (question, answer) fact, tied to the image it was asked about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question_id: String,
    pub question_features: Vec<f64>,
    pub answer_index: usize,
    pub source_image_id: String,
}

/// Intermediate values kept for the backward pass. Columns index the batch.
#[derive(Clone, Debug)]
pub struct HeadForward {
    pub z_in: Matrix,
    pub z_q: Matrix,
    pub hidden: Matrix,
    pub hidden_dropped: Matrix,
    pub mask: DropoutMask,
    pub logits: Matrix,
    pub log_probs: Matrix,
}

impl VqaHead {
    pub fn new(kind: HeadKind, dims: HeadDims, rng: &mut Rng) -> Self {
        Self {
            kind,
            proj_input: LinearLayer::init(dims.multimodal, dims.input, rng),
            proj_question: LinearLayer::init(dims.multimodal, dims.question, rng),
            answer_layer: LinearLayer::init(dims.answers, dims.multimodal, rng),
            hidden_keep_prob: 1.0,
        }
    }

    pub fn zeros(kind: HeadKind, dims: HeadDims) -> Self {
        Self {
            kind,
            proj_input: LinearLayer::zeros(dims.multimodal, dims.input),
            proj_question: LinearLayer::zeros(dims.multimodal, dims.question),
            answer_layer: LinearLayer::zeros(dims.answers, dims.multimodal),
            hidden_keep_prob: 1.0,
        }
    }

    pub fn with_dropout(mut self, keep_prob: f64) -> Self {
        self.hidden_keep_prob = keep_prob;
        self
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            input: self.proj_input.in_dim(),
            question: self.proj_question.in_dim(),
            multimodal: self.proj_input.out_dim(),
            answers: self.answer_layer.out_dim(),
        }
    }

    pub fn num_answers(&self) -> usize {
        self.answer_layer.out_dim()
    }

    pub fn dropout_sites(&self) -> Vec<DropoutSite> {
        if self.hidden_keep_prob < 1.0 {
            vec![DropoutSite {
                id: HEAD_HIDDEN_SITE,
                units: self.proj_input.out_dim(),
                keep_prob: self.hidden_keep_prob,
            }]
        } else {
            Vec::new()
        }
    }

    fn check_structure(&self) -> Result<()> {
        let d = self.proj_input.out_dim();
        if self.proj_question.out_dim() != d || self.answer_layer.in_dim() != d {
            return Err(Error::shape(
                "VqaHead",
                format!("all projections into {d} dims"),
                format!(
                    "question proj {} / answer layer input {}",
                    self.proj_question.out_dim(),
                    self.answer_layer.in_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Batched forward pass: `x_in` is `d_in × B`, `x_q` is `d_q × B`.
    pub fn forward(&self, x_in: &Matrix, x_q: &Matrix, mode: &Mode) -> Result<HeadForward> {
        self.check_structure()?;
        if x_in.cols() != x_q.cols() {
            return Err(Error::shape(
                "vqa_forward",
                format!("{} question columns", x_in.cols()),
                format!("{} question columns", x_q.cols()),
            ));
        }
        let z_in = Activation::Tanh.forward(&self.proj_input.forward(x_in)?);
        let z_q = Activation::Tanh.forward(&self.proj_question.forward(x_q)?);
        let hidden = z_in.hadamard(&z_q)?;
        let (hidden_dropped, mask) = if self.hidden_keep_prob < 1.0 {
            apply_site(&hidden, self.hidden_keep_prob, mode, HEAD_HIDDEN_SITE)?
        } else {
            apply_site(&hidden, 1.0, &Mode::Infer, HEAD_HIDDEN_SITE)?
        };
        let logits = self.answer_layer.forward(&hidden_dropped)?;
        let log_probs = log_softmax_cols(&logits);
        Ok(HeadForward {
            z_in,
            z_q,
            hidden,
            hidden_dropped,
            mask,
            logits,
            log_probs,
        })
    }

    /// Answer log-probabilities (`M × B`).
    pub fn log_probs(&self, x_in: &Matrix, x_q: &Matrix, mode: &Mode) -> Result<Matrix> {
        Ok(self.forward(x_in, x_q, mode)?.log_probs)
    }

    /// Accumulates parameter gradients given `∂L/∂logits` (`M × B`).
    pub fn backward(&mut self, x_in: &Matrix, x_q: &Matrix, fwd: &HeadForward, grad_logits: &Matrix) -> Result<()> {
        let g_dropped = self.answer_layer.backward(&fwd.hidden_dropped, grad_logits)?;
        let g_hidden = fwd.mask.backward(&g_dropped);
        let g_zin = g_hidden.hadamard(&fwd.z_q)?;
        let g_zq = g_hidden.hadamard(&fwd.z_in)?;
        let g_pre_in = Activation::Tanh.backward(&fwd.z_in, &g_zin)?;
        let g_pre_q = Activation::Tanh.backward(&fwd.z_q, &g_zq)?;
        self.proj_input.backward(x_in, &g_pre_in)?;
        self.proj_question.backward(x_q, &g_pre_q)?;
        Ok(())
    }

    /// `z_in = tanh(W_in x + b_in)`, the head's projection of its input into
    /// the joint space; usable as an alternative grounding feature.
    pub fn hidden_features(&self, x_in: &Matrix) -> Result<Matrix> {
        Ok(Activation::Tanh.forward(&self.proj_input.forward(x_in)?))
    }

    pub fn layers_mut(&mut self) -> [&mut LinearLayer; 3] {
        [&mut self.proj_input, &mut self.proj_question, &mut self.answer_layer]
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }
}

fn check_answer(head: &VqaHead, answer: usize) -> Result<()> {
    if answer >= head.num_answers() {
        return Err(Error::Param(format!(
            "answer index {answer} out of range for {} answers",
            head.num_answers()
        )));
    }
    Ok(())
}

fn forward_single(head: &VqaHead, kind: HeadKind, x_in: &[f64], x_q: &[f64], mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)> {
    if head.kind != kind {
        return Err(Error::Param(format!("expected a {kind:?} head, got {:?}", head.kind)));
    }
    let f = head.forward(&Matrix::column(x_in), &Matrix::column(x_q), mode)?;
    Ok((f.log_probs.into_vec(), f.hidden.into_vec()))
}

/// Single-example image head: returns (answer log-probs, `z_I ⊙ z_Q`).
pub fn vqa_forward(head: &VqaHead, x_img: &[f64], x_q: &[f64], mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)> {
    forward_single(head, HeadKind::Image, x_img, x_q, mode)
}

/// Single-example caption head: returns (answer log-probs, `z_C ⊙ z_Q`).
pub fn vqacaption_forward(head: &VqaHead, x_cap_bow: &[f64], x_q: &[f64], mode: &Mode) -> Result<(Vec<f64>, Vec<f64>)> {
    forward_single(head, HeadKind::Caption, x_cap_bow, x_q, mode)
}

/// Probability of `answer` for one (input, question) pair.
pub fn answer_prob(head: &VqaHead, x_in: &[f64], x_q: &[f64], answer: usize, mode: &Mode) -> Result<f64> {
    check_answer(head, answer)?;
    let (lp, _) = forward_single(head, head.kind, x_in, x_q, mode)?;
    Ok(lp[answer].exp())
}

/// A training example: column `input` of the input matrix, column `question`
/// of the question matrix, and the target answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub input: usize,
    pub question: usize,
    pub answer: usize,
}

#[derive(Clone, Debug)]
pub struct HeadDataset<'a> {
    pub inputs: &'a Matrix,
    pub questions: &'a Matrix,
    pub triples: &'a [Triple],
}

impl HeadDataset<'_> {
    fn validate(&self, head: &VqaHead) -> Result<()> {
        if self.triples.is_empty() {
            return Err(Error::Data("empty VQA training set".into()));
        }
        for (i, t) in self.triples.iter().enumerate() {
            if t.input >= self.inputs.cols() || t.question >= self.questions.cols() {
                return Err(Error::Data(format!("triple {i} references a missing feature column")));
            }
            check_answer(head, t.answer)?;
        }
        Ok(())
    }

    pub fn gather(&self, idx: &[usize]) -> (Matrix, Matrix, Vec<usize>) {
        let ins: Vec<usize> = idx.iter().map(|&i| self.triples[i].input).collect();
        let qs: Vec<usize> = idx.iter().map(|&i| self.triples[i].question).collect();
        let ans = idx.iter().map(|&i| self.triples[i].answer).collect();
        (self.inputs.select_cols(&ins), self.questions.select_cols(&qs), ans)
    }
}

/// Mean `−log p(answer)` and its gradient w.r.t. the logits.
pub fn nll_and_grad(log_probs: &Matrix, answers: &[usize]) -> (f64, Matrix) {
    let b = answers.len() as f64;
    let mut grad = log_probs.map(f64::exp);
    let mut loss = 0.0;
    for (j, &a) in answers.iter().enumerate() {
        loss -= log_probs[(a, j)];
        grad[(a, j)] -= 1.0;
    }
    (loss / b, grad.scale(1.0 / b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub rmsprop: RmsPropConfig,
    pub batch_size: usize,
    pub iterations: u64,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            rmsprop: RmsPropConfig::with_learning_rate(1e-3),
            batch_size: 100,
            iterations: 2_000,
            log_every: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub loss: f64,
}

/// Epoch-wise shuffled mini-batches over `0..n`.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchSampler {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            rng: rng(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Next `size` distinct indices (capped at the population size).
    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }

    pub(crate) fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }
}

/// Minimizes the mean answer NLL with RMSProp over seeded mini-batches.
///
/// The trace starts with the loss of the first batch before any update, then
/// holds the mean batch loss of every `log_every` iterations.
pub fn train_vqa_head(head: &mut VqaHead, data: &HeadDataset<'_>, cfg: &HeadTrainConfig) -> Result<Vec<TracePoint>> {
    data.validate(head)?;
    cfg.rmsprop.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Param("batch_size must be positive".into()));
    }
    let mut sampler = BatchSampler::new(data.triples.len(), derive_seed(cfg.seed, 1));
    let mut trace = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0u64;
    head.zero_grad();
    for it in 0..cfg.iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let (x_in, x_q, answers) = data.gather(&idx);
        let mode = Mode::Train {
            seed: derive_seed(cfg.seed, 1_000_000 + it),
        };
        let fwd = head.forward(&x_in, &x_q, &mode)?;
        let (loss, grad) = nll_and_grad(&fwd.log_probs, &answers);
        if it == 0 {
            trace.push(TracePoint { iteration: 0, loss });
        }
        head.backward(&x_in, &x_q, &fwd, &grad)?;
        for l in head.layers_mut() {
            rmsprop_step(l, &cfg.rmsprop, it);
        }
        window += loss;
        window_n += 1;
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            trace.push(TracePoint {
                iteration: it + 1,
                loss: window / window_n as f64,
            });
            window = 0.0;
            window_n = 0;
        }
    }
    Ok(trace)
}

/// Mean NLL over a whole dataset in inference mode.
pub fn dataset_nll(head: &VqaHead, data: &HeadDataset<'_>) -> Result<f64> {
    let idx: Vec<usize> = (0..data.triples.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(512) {
        let (x_in, x_q, answers) = data.gather(chunk);
        let lp = head.log_probs(&x_in, &x_q, &Mode::Infer)?;
        total += nll_and_grad(&lp, &answers).0 * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Fraction of triples whose arg-max answer is the target.
pub fn accuracy(head: &VqaHead, data: &HeadDataset<'_>) -> Result<f64> {
    let idx: Vec<usize> = (0..data.triples.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(512) {
        let (x_in, x_q, answers) = data.gather(chunk);
        let lp = head.log_probs(&x_in, &x_q, &Mode::Infer)?;
        for (j, &a) in answers.iter().enumerate() {
            let col = lp.col(j);
            let best = col
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            correct += usize::from(best == a);
        }
    }
    Ok(correct as f64 / idx.len().max(1) as f64)
}

/// Fixed batch NLL objective, for gradient checking a head.
pub struct HeadObjective {
    pub head: VqaHead,
    pub x_in: Matrix,
    pub x_q: Matrix,
    pub answers: Vec<usize>,
}

impl GradCheckable for HeadObjective {
    fn loss(&self) -> Result<f64> {
        let lp = self.head.log_probs(&self.x_in, &self.x_q, &Mode::Infer)?;
        Ok(nll_and_grad(&lp, &self.answers).0)
    }

    fn backprop(&mut self) -> Result<f64> {
        self.head.zero_grad();
        let fwd = self.head.forward(&self.x_in, &self.x_q, &Mode::Infer)?;
        let (loss, grad) = nll_and_grad(&fwd.log_probs, &self.answers);
        self.head.backward(&self.x_in, &self.x_q, &fwd, &grad)?;
        Ok(loss)
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut LinearLayer)> {
        let [a, b, c] = self.head.layers_mut();
        vec![("proj_input".into(), a), ("proj_question".into(), b), ("answer_layer".into(), c)]
    }
}

/// Softmax probabilities of a head's answers (`M × B`).
pub fn answer_probs(head: &VqaHead, x_in: &Matrix, x_q: &Matrix, mode: &Mode) -> Result<Matrix> {
    let f = head.forward(x_in, x_q, mode)?;
    Ok(softmax_cols(&f.logits))
}
