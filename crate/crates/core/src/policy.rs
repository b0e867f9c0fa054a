//! Fixed-window neural autoregressive character model.
//!
//! The network scores one token from its preceding `k`-token window:
//! the window's embeddings are concatenated, pushed through one tanh hidden
//! layer, and projected to a softmax over the vocabulary. Sequence scores
//! are exact sums of per-token log-probabilities and the parameter gradient
//! is exact backpropagation, so every loss built on top of this model can be
//! checked against finite differences.
//!
//! Parameter vector layout (row-major, in this order):
//!
//! ```text
//! embedding  V*d      row v = embedding of token v
//! hidden_w   (k*d)*h  row m = weights from input coordinate m
//! hidden_b   h
//! output_w   h*V      row j = weights from hidden unit j
//! output_b   V
//! ```

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocabulary, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Network dimensions. The parameter count is a function of these alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub context_window: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl Arch {
    pub fn param_count(&self) -> usize {
        let (k, d, h, v) = (
            self.context_window,
            self.embedding_dim,
            self.hidden_dim,
            self.vocab_size,
        );
        v * d + (k * d) * h + h + h * v + v
    }

    pub fn layout(&self) -> ParamLayout {
        let (k, d, h, v) = (
            self.context_window,
            self.embedding_dim,
            self.hidden_dim,
            self.vocab_size,
        );
        let embedding = 0..v * d;
        let hidden_w = embedding.end..embedding.end + (k * d) * h;
        let hidden_b = hidden_w.end..hidden_w.end + h;
        let output_w = hidden_b.end..hidden_b.end + h * v;
        let output_b = output_w.end..output_w.end + v;
        ParamLayout {
            embedding,
            hidden_w,
            hidden_b,
            output_w,
            output_b,
        }
    }

    fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.context_window == 0
            || self.embedding_dim == 0
            || self.hidden_dim == 0
            || self.vocab_size == 0
        {
            return Err(Error::Config(format!("all arch dimensions must be >= 1: {self:?}")));
        }
        if self.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "arch vocab_size {} does not match vocabulary size {}",
                self.vocab_size,
                vocab.size()
            )));
        }
        Ok(())
    }
}

/// Index ranges of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub embedding: Range<usize>,
    pub hidden_w: Range<usize>,
    pub hidden_b: Range<usize>,
    pub output_w: Range<usize>,
    pub output_b: Range<usize>,
}

/// Log-probability of a scored sequence, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLogProb<T> {
    /// Sum of per-token log-probabilities; never positive.
    pub value: T,
    /// Number of scored tokens (response tokens including the terminal EOS).
    pub token_count: usize,
}

/// The policy: a parameter vector plus the architecture and vocabulary that
/// give it meaning. Evaluation never mutates the model, so a `&PolicyModel`
/// can be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<T> {
    vocab: Vocabulary,
    arch: Arch,
    rng_seed: u64,
    theta: Vec<T>,
}

impl<T: Scalar> PolicyModel<T> {
    /// Initializes weights uniformly in `±1/sqrt(fan_in)` (embedding rows use
    /// their own dimension as fan-in) and biases at zero, drawing from a
    /// ChaCha20 stream seeded by `seed`. Identical `(arch, seed)` pairs
    /// produce identical parameter vectors.
    pub fn init(vocab: Vocabulary, arch: Arch, seed: u64) -> Result<Self> {
        arch.validate(&vocab)?;
        let layout = arch.layout();
        let mut theta = vec![T::zero(); arch.param_count()];
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, fan_in: usize, theta: &mut [T]| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for slot in &mut theta[range] {
                *slot = T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * scale);
            }
        };
        fill(layout.embedding, arch.embedding_dim, &mut theta);
        fill(
            layout.hidden_w,
            arch.context_window * arch.embedding_dim,
            &mut theta,
        );
        fill(layout.output_w, arch.hidden_dim, &mut theta);
        Ok(PolicyModel {
            vocab,
            arch,
            rng_seed: seed,
            theta,
        })
    }

    /// Rebuilds a model from stored parts (used by snapshot loading).
    pub fn from_parts(vocab: Vocabulary, arch: Arch, rng_seed: u64, theta: Vec<T>) -> Result<Self> {
        arch.validate(&vocab)?;
        if theta.len() != arch.param_count() {
            return Err(Error::Config(format!(
                "theta length {} does not match arch parameter count {}",
                theta.len(),
                arch.param_count()
            )));
        }
        Ok(PolicyModel {
            vocab,
            arch,
            rng_seed,
            theta,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn layout(&self) -> ParamLayout {
        self.arch.layout()
    }

    /// Zeroes the output projection and bias, which makes every next-token
    /// distribution exactly uniform. Handy for fixtures with known scores.
    pub fn zero_output_layer(&mut self) {
        let layout = self.arch.layout();
        self.theta[layout.output_w].fill(T::zero());
        self.theta[layout.output_b].fill(T::zero());
    }

    /// SHA-256 over the architecture and the parameter vector (as little-endian
    /// `f64`), hex-encoded. Identifies model content independent of provenance.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for dim in [
            self.arch.context_window,
            self.arch.embedding_dim,
            self.arch.hidden_dim,
            self.arch.vocab_size,
        ] {
            hasher.update((dim as u32).to_le_bytes());
        }
        for &w in &self.theta {
            hasher.update(w.to_f64().to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        for &t in tokens {
            if t.index() >= self.arch.vocab_size {
                return Err(Error::Encoding(format!(
                    "token id {} out of range for vocabulary of size {}",
                    t.0, self.arch.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Next-token distribution for a context of at most `k` tokens (shorter
    /// contexts are left-padded with PAD). Entries are positive and sum to 1.
    pub fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<T>> {
        self.check_tokens(context)?;
        let k = self.arch.context_window;
        let mut window = vec![PAD; k];
        let take = context.len().min(k);
        window[k - take..].copy_from_slice(&context[context.len() - take..]);
        let mut ws = Workspace::new(&self.arch);
        self.forward(&window, &mut ws);
        let lse = log_sum_exp(&ws.logits);
        Ok(ws.logits.iter().map(|&l| (l - lse).exp()).collect())
    }

    /// Exact log-probability of `response` given `prompt` under teacher
    /// forcing. Each response token is scored from the `k` tokens preceding it
    /// in `prompt ‖ response`, left-padded with PAD; the terminal EOS produced
    /// by [`Vocabulary::encode_response`] is the final scored token.
    pub fn sequence_logprob(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
    ) -> Result<SequenceLogProb<T>> {
        self.score(prompt, response, None)
    }

    /// Gradient of [`Self::sequence_logprob`] with respect to every parameter.
    pub fn logprob_gradient(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); self.theta.len()];
        self.accumulate_logprob_gradient(prompt, response, T::one(), &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * ∂ logprob / ∂θ` into `grad` and returns the log-probability.
    pub fn accumulate_logprob_gradient(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
        scale: T,
        grad: &mut [T],
    ) -> Result<T> {
        assert_eq!(grad.len(), self.theta.len(), "gradient buffer size mismatch");
        Ok(self.score(prompt, response, Some((scale, grad)))?.value)
    }

    /// Convenience wrapper that encodes strings through the model vocabulary.
    pub fn sequence_logprob_str(&self, prompt: &str, response: &str) -> Result<SequenceLogProb<T>> {
        let p = self.vocab.encode_prompt(prompt)?;
        let r = self.vocab.encode_response(response)?;
        self.sequence_logprob(&p, &r)
    }

    /// Forward (and optionally backward) over all scored positions.
    fn score(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
        mut backward: Option<(T, &mut [T])>,
    ) -> Result<SequenceLogProb<T>> {
        if response.is_empty() {
            return Err(Error::Domain("cannot score an empty response".into()));
        }
        self.check_tokens(prompt)?;
        self.check_tokens(response)?;

        let k = self.arch.context_window;
        let stream: Vec<TokenId> = prompt.iter().chain(response.iter()).copied().collect();
        let mut ws = Workspace::new(&self.arch);
        let mut window = vec![PAD; k];
        let mut total = T::zero();

        for pos in prompt.len()..stream.len() {
            let target = stream[pos];
            let start = pos.saturating_sub(k);
            let ctx = &stream[start..pos];
            window.iter_mut().for_each(|w| *w = PAD);
            window[k - ctx.len()..].copy_from_slice(ctx);

            self.forward(&window, &mut ws);
            let lse = log_sum_exp(&ws.logits);
            total += ws.logits[target.index()] - lse;

            if let Some((scale, grad)) = backward.as_mut() {
                self.backward(&window, target, lse, *scale, &mut ws, grad);
            }
        }

        Ok(SequenceLogProb {
            value: total,
            token_count: response.len(),
        })
    }

    /// Computes hidden activations and logits for one window into `ws`.
    fn forward(&self, window: &[TokenId], ws: &mut Workspace<T>) {
        let Arch {
            embedding_dim: d,
            hidden_dim: h,
            vocab_size: v,
            ..
        } = self.arch;
        let layout = self.arch.layout();
        let emb = &self.theta[layout.embedding];
        let w1 = &self.theta[layout.hidden_w];
        let b1 = &self.theta[layout.hidden_b];
        let w2 = &self.theta[layout.output_w];
        let b2 = &self.theta[layout.output_b];

        for (slot, &tok) in ws.x.chunks_mut(d).zip(window) {
            slot.copy_from_slice(&emb[tok.index() * d..(tok.index() + 1) * d]);
        }
        ws.hidden.copy_from_slice(b1);
        for (m, &xm) in ws.x.iter().enumerate() {
            let row = &w1[m * h..(m + 1) * h];
            for (aj, &wj) in ws.hidden.iter_mut().zip(row) {
                *aj += xm * wj;
            }
        }
        for z in &mut ws.hidden {
            *z = z.tanh();
        }
        ws.logits.copy_from_slice(b2);
        for (j, &zj) in ws.hidden.iter().enumerate() {
            let row = &w2[j * v..(j + 1) * v];
            for (lv, &wv) in ws.logits.iter_mut().zip(row) {
                *lv += zj * wv;
            }
        }
    }

    /// Accumulates `scale * ∂ log p(target | window) / ∂θ` into `grad`, using
    /// the activations left in `ws` by `forward`.
    fn backward(
        &self,
        window: &[TokenId],
        target: TokenId,
        lse: T,
        scale: T,
        ws: &mut Workspace<T>,
        grad: &mut [T],
    ) {
        let Arch {
            embedding_dim: d,
            hidden_dim: h,
            vocab_size: v,
            ..
        } = self.arch;
        let layout = self.arch.layout();
        let w1 = &self.theta[layout.hidden_w.clone()];
        let w2 = &self.theta[layout.output_w.clone()];

        // d log p[y] / d logits = onehot(y) - softmax(logits)
        for (dl, &l) in ws.dlogits.iter_mut().zip(&ws.logits) {
            *dl = -(l - lse).exp();
        }
        ws.dlogits[target.index()] += T::one();

        let (gw2, gb2) = {
            let (a, b) = grad.split_at_mut(layout.output_b.start);
            (&mut a[layout.output_w.clone()], b)
        };
        for (gb, &dl) in gb2.iter_mut().zip(&ws.dlogits) {
            *gb += scale * dl;
        }
        for (j, &zj) in ws.hidden.iter().enumerate() {
            let row = &mut gw2[j * v..(j + 1) * v];
            let wrow = &w2[j * v..(j + 1) * v];
            let mut dz = T::zero();
            for ((g, &dl), &wv) in row.iter_mut().zip(&ws.dlogits).zip(wrow) {
                *g += scale * zj * dl;
                dz += wv * dl;
            }
            // tanh'(a) = 1 - z^2
            ws.dhidden[j] = dz * (T::one() - zj * zj);
        }

        let gb1 = &mut grad[layout.hidden_b.clone()];
        for (gb, &da) in gb1.iter_mut().zip(&ws.dhidden) {
            *gb += scale * da;
        }
        let gw1 = &mut grad[layout.hidden_w.clone()];
        for (m, &xm) in ws.x.iter().enumerate() {
            let grow = &mut gw1[m * h..(m + 1) * h];
            let wrow = &w1[m * h..(m + 1) * h];
            let mut dx = T::zero();
            for ((g, &da), &wj) in grow.iter_mut().zip(&ws.dhidden).zip(wrow) {
                *g += scale * xm * da;
                dx += wj * da;
            }
            ws.dx[m] = dx;
        }

        let gemb = &mut grad[layout.embedding];
        for (t, &tok) in window.iter().enumerate() {
            let rows = &mut gemb[tok.index() * d..(tok.index() + 1) * d];
            for (g, &dx) in rows.iter_mut().zip(&ws.dx[t * d..(t + 1) * d]) {
                *g += scale * dx;
            }
        }
    }
}

/// Scratch buffers reused across scored positions.
struct Workspace<T> {
    x: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
    dlogits: Vec<T>,
    dhidden: Vec<T>,
    dx: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(arch: &Arch) -> Self {
        let kd = arch.context_window * arch.embedding_dim;
        Workspace {
            x: vec![T::zero(); kd],
            hidden: vec![T::zero(); arch.hidden_dim],
            logits: vec![T::zero(); arch.vocab_size],
            dlogits: vec![T::zero(); arch.vocab_size],
            dhidden: vec![T::zero(); arch.hidden_dim],
            dx: vec![T::zero(); kd],
        }
    }
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let m = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let sum = logits
        .iter()
        .map(|&l| (l - m).exp())
        .fold(T::zero(), |acc, e| acc + e);
    m + sum.ln()
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One supervised example: the model is trained to reproduce `response`
/// after `prompt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub prompt: String,
    pub response: String,
}

/// Supervised fine-tuning hyperparameters. Plain mini-batch SGD with a fixed
/// learning rate; the run is fully determined by the seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        // One gentle epoch: enough structure for the model to prefer sorted
        // strings, while per-source reward accuracy stays off its ceiling so
        // the partitioner has a real signal to order by.
        SftConfig {
            epochs: 1,
            batch_size: 32,
            learning_rate: 0.02,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("sft batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("sft learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Maximum-likelihood training on `(prompt, response)` pairs: mini-batch SGD
/// on the negative sequence log-probability. Returns a new snapshot; the
/// input model is untouched. Identical `(model, corpus, config)` triples
/// yield bit-identical parameters.
pub fn sft_train<T: Scalar>(
    model: &PolicyModel<T>,
    corpus: &[SftExample],
    config: &SftConfig,
) -> Result<PolicyModel<T>> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Domain("sft corpus is empty".into()));
    }
    let encoded: Vec<(Vec<TokenId>, Vec<TokenId>)> = corpus
        .iter()
        .map(|ex| {
            Ok((
                model.vocab().encode_prompt(&ex.prompt)?,
                model.vocab().encode_response(&ex.response)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut trained = model.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut grad = vec![T::zero(); trained.theta().len()];
    let lr = T::from_f64(config.learning_rate);

    for _epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut batch_nll = T::zero();
            // scale -1/|batch|: gradient of the mean NLL
            let scale = -T::one() / T::from_f64(batch.len() as f64);
            for &i in batch {
                let (prompt, response) = &encoded[i];
                let lp =
                    trained.accumulate_logprob_gradient(prompt, response, scale, &mut grad)?;
                batch_nll -= lp;
            }
            batch_nll /= T::from_f64(batch.len() as f64);
            if !batch_nll.is_finite() {
                return Err(Error::NonFinite {
                    context: "sft batch loss".into(),
                    detail: format!(
                        "loss {batch_nll}, batch sample indices {:?}, prompts {:?}",
                        batch,
                        batch
                            .iter()
                            .map(|&i| corpus[i].prompt.as_str())
                            .collect::<Vec<_>>()
                    ),
                });
            }
            for (w, &g) in trained.theta_mut().iter_mut().zip(&grad) {
                *w = *w - lr * g;
            }
        }
    }
    Ok(trained)
}

/// Mean per-token negative log-likelihood of a corpus; the quantity SFT
/// drives down.
pub fn mean_nll<T: Scalar>(model: &PolicyModel<T>, corpus: &[SftExample]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty corpus".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in corpus {
        let lp = model.sequence_logprob_str(&ex.prompt, &ex.response)?;
        total -= lp.value.to_f64();
        tokens += lp.token_count;
    }
    Ok(total / tokens as f64)
}

/// Fisher–Yates shuffle driven by the given RNG. Kept local so the shuffle
/// algorithm (and therefore every training trace) is pinned by this crate,
/// not by a dependency's internals.
pub(crate) fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
