//! Shared-embedding GRU encoder-decoder with bilinear attention and input
//! feeding. The encoder is bidirectional and serves both styles; the target
//! style is selected solely by the tag token prefixed to the source.
//!
//! Per target step `t`:
//!
//! ```text
//! s_t   = GRU([emb(y_{t-1}); o_{t-1}], s_{t-1})     s_0 = tanh(W_i mean(h) + b_i)
//! a_t   = softmax_i(s_t · (W_a h_i))
//! c_t   = Σ_i a_t,i h_i
//! o_t   = tanh(W_c [s_t; c_t] + b_c)
//! p(y_t) = softmax(W_o o_t + b_o)
//! ```

mod checkpoint;
pub mod gru;
pub mod params;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSequence, BOS, EOS, UNK};
use crate::trainer::TrainingPair;
use gru::{GruCache, GruGrads, GruWeights};
use params::*;
use tensor::{add_into, axpy, dot, softmax_in_place, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Ids below this are special tokens; only EOS and UNK may be generated.
    pub num_specials: usize,
    pub embed_dim: usize,
    /// Per-direction encoder size; also the decoder state and attentional
    /// output size. Encoder states are `2 * hidden_dim` wide.
    pub hidden_dim: usize,
    /// Longest sequence, in subwords, including the style tag and EOS.
    pub max_len: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Weights are initialized uniform in `±init_scale`, biases at zero.
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_specials: usize) -> Self {
        ModelConfig {
            vocab_size,
            num_specials,
            embed_dim: 64,
            hidden_dim: 64,
            max_len: 100,
            learning_rate: 0.01,
            clip_norm: 5.0,
            init_scale: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be >= 1");
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2");
        }
        if self.num_specials <= UNK as usize || self.vocab_size < self.num_specials {
            return bad("vocab_size must cover all special ids");
        }
        // written negated so that NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.init_scale > 0.0) {
            return bad("learning_rate, clip_norm and init_scale must be positive");
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        Params::shapes(self.vocab_size, self.embed_dim, self.hidden_dim)
    }
}

/// Bag-of-embeddings `w` and summed encoder states `e` over the content
/// positions of a sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEmbedding {
    pub w: Vec<f64>,
    pub e: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: Params,
    optimizer: Adam,
}

struct Encoded {
    ids: Vec<u32>,
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
    states: Vec<Vec<f64>>,
}

struct DecoderStart {
    mean: Vec<f64>,
    s0: Vec<f64>,
    keys: Vec<Vec<f64>>,
}

struct DecoderStep {
    input: u32,
    gru: GruCache,
    alpha: Vec<f64>,
    joined: Vec<f64>,
    out: Vec<f64>,
    probs: Vec<f64>,
}

fn gru_grads(g: &mut Params, base: usize) -> GruGrads<'_> {
    let [w, u, bx, bh] = &mut g.tensors[base..base + 4] else {
        unreachable!("GRU parameter groups have four tensors")
    };
    GruGrads { w, u, bx, bh }
}

// Batches are split into fixed-size chunks so the reduction order, and hence
// the result, does not depend on the number of threads.
const GRAD_CHUNK: usize = 5;

impl Model {
    pub fn init(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = Params::random(&cfg.shapes(), cfg.init_scale, &mut rng);
        Ok(Model::from_params(cfg, params))
    }

    fn from_params(cfg: ModelConfig, params: Params) -> Self {
        let optimizer = Adam::new(&params);
        Model {
            cfg,
            params,
            optimizer,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// Discards optimizer moments, e.g. between training phases.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = Adam::new(&self.params);
    }

    fn is_content(&self, id: u32) -> bool {
        id == UNK || id as usize >= self.cfg.num_specials
    }

    fn t(&self, i: usize) -> &Mat {
        &self.params.tensors[i]
    }

    fn gru(&self, base: usize) -> GruWeights<'_> {
        let t = &self.params.tensors;
        GruWeights {
            w: &t[base],
            u: &t[base + 1],
            bx: &t[base + 2],
            bh: &t[base + 3],
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn encoder_input(&self, src: &TokenSequence) -> Result<Vec<u32>> {
        let mut ids = src.ids.clone();
        ids.push(EOS);
        if ids.len() > self.cfg.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len: self.cfg.max_len,
            });
        }
        self.check_ids(&ids)?;
        Ok(ids)
    }

    fn encode(&self, ids: &[u32]) -> Encoded {
        let h = self.cfg.hidden_dim;
        let emb = self.t(EMB);
        let n = ids.len();
        let mut fwd = Vec::with_capacity(n);
        let mut prev = vec![0.0; h];
        for &id in ids {
            let c = gru::step(&self.gru(ENC_FWD), emb.row(id as usize).to_vec(), &prev);
            prev.clone_from(&c.h);
            fwd.push(c);
        }
        let mut bwd = Vec::with_capacity(n);
        prev = vec![0.0; h];
        for &id in ids.iter().rev() {
            let c = gru::step(&self.gru(ENC_BWD), emb.row(id as usize).to_vec(), &prev);
            prev.clone_from(&c.h);
            bwd.push(c);
        }
        let states = (0..n)
            .map(|i| {
                let mut s = fwd[i].h.clone();
                s.extend_from_slice(&bwd[n - 1 - i].h);
                s
            })
            .collect();
        Encoded {
            ids: ids.to_vec(),
            fwd,
            bwd,
            states,
        }
    }

    fn decoder_start(&self, enc: &Encoded) -> DecoderStart {
        let n = enc.states.len() as f64;
        let mut mean = vec![0.0; 2 * self.cfg.hidden_dim];
        for s in &enc.states {
            axpy(1.0 / n, s, &mut mean);
        }
        let mut s0 = self.t(INIT_B).data.clone();
        self.t(INIT_W).matvec_acc(&mean, &mut s0);
        s0.iter_mut().for_each(|x| *x = x.tanh());
        let keys = enc.states.iter().map(|s| self.t(ATTN).matvec(s)).collect();
        DecoderStart { mean, s0, keys }
    }

    fn decoder_step(&self, enc: &Encoded, start: &DecoderStart, input: u32, prev_out: &[f64], prev_state: &[f64]) -> DecoderStep {
        let h = self.cfg.hidden_dim;
        let mut x = self.t(EMB).row(input as usize).to_vec();
        x.extend_from_slice(prev_out);
        let g = gru::step(&self.gru(DEC), x, prev_state);
        let mut alpha: Vec<f64> = start.keys.iter().map(|k| dot(k, &g.h)).collect();
        softmax_in_place(&mut alpha);
        let mut joined = g.h.clone();
        joined.resize(3 * h, 0.0);
        for (a, s) in alpha.iter().zip(&enc.states) {
            axpy(*a, s, &mut joined[h..]);
        }
        let mut out = self.t(COMB_B).data.clone();
        self.t(COMB_W).matvec_acc(&joined, &mut out);
        out.iter_mut().for_each(|x| *x = x.tanh());
        let mut probs = self.t(OUT_B).data.clone();
        self.t(OUT_W).matvec_acc(&out, &mut probs);
        softmax_in_place(&mut probs);
        DecoderStep {
            input,
            gru: g,
            alpha,
            joined,
            out,
            probs,
        }
    }

    fn decoder_target(&self, tgt: &TokenSequence) -> Result<Vec<u32>> {
        let mut ids: Vec<u32> = tgt.body().to_vec();
        ids.push(EOS);
        if ids.len() > self.cfg.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len: self.cfg.max_len,
            });
        }
        self.check_ids(&ids)?;
        Ok(ids)
    }

    /// Teacher-forced loss of one example; gradients scaled by `scale` are
    /// accumulated into `grads` when given.
    fn example(&self, src: &[u32], tgt: &[u32], scale: f64, grads: Option<&mut Params>) -> f64 {
        let h = self.cfg.hidden_dim;
        let e = self.cfg.embed_dim;
        let enc = self.encode(src);
        let start = self.decoder_start(&enc);
        let mut steps = Vec::with_capacity(tgt.len());
        let mut loss = 0.0;
        let mut prev_out = vec![0.0; h];
        let mut prev_state = start.s0.clone();
        let mut input = BOS;
        for &y in tgt {
            let st = self.decoder_step(&enc, &start, input, &prev_out, &prev_state);
            loss -= st.probs[y as usize].max(1e-300).ln();
            prev_out.clone_from(&st.out);
            prev_state.clone_from(&st.gru.h);
            input = y;
            steps.push(st);
        }
        let Some(g) = grads else { return loss };

        let n = enc.states.len();
        let mut d_states = vec![vec![0.0; 2 * h]; n];
        let mut d_keys = vec![vec![0.0; h]; n];
        let mut ds_next = vec![0.0; h];
        let mut do_next = vec![0.0; h];
        for (st, &y) in steps.iter().zip(tgt).rev() {
            let mut dlogits: Vec<f64> = st.probs.iter().map(|p| p * scale).collect();
            dlogits[y as usize] -= scale;
            g.tensors[OUT_W].outer_acc(&dlogits, &st.out);
            add_into(&mut g.tensors[OUT_B].data, &dlogits);
            let mut d_out = do_next.clone();
            self.t(OUT_W).matvec_t_acc(&dlogits, &mut d_out);
            for (d, o) in d_out.iter_mut().zip(&st.out) {
                *d *= 1.0 - o * o;
            }
            g.tensors[COMB_W].outer_acc(&d_out, &st.joined);
            add_into(&mut g.tensors[COMB_B].data, &d_out);
            let mut d_joined = vec![0.0; 3 * h];
            self.t(COMB_W).matvec_t_acc(&d_out, &mut d_joined);
            let (ds_part, d_ctx) = d_joined.split_at(h);
            let mut ds = ds_next.clone();
            add_into(&mut ds, ds_part);

            let d_alpha: Vec<f64> = enc.states.iter().map(|s| dot(d_ctx, s)).collect();
            for (ds_i, &a) in d_states.iter_mut().zip(&st.alpha) {
                axpy(a, d_ctx, ds_i);
            }
            let mix = dot(&st.alpha, &d_alpha);
            for i in 0..n {
                let d_score = st.alpha[i] * (d_alpha[i] - mix);
                axpy(d_score, &start.keys[i], &mut ds);
                axpy(d_score, &st.gru.h, &mut d_keys[i]);
            }

            let (dx, dh_prev) = gru::backward(&self.gru(DEC), &mut gru_grads(g, DEC), &st.gru, &ds);
            add_into(g.tensors[EMB].row_mut(st.input as usize), &dx[..e]);
            do_next = dx[e..].to_vec();
            ds_next = dh_prev;
        }

        let mut d_pre = ds_next;
        for (d, s) in d_pre.iter_mut().zip(&start.s0) {
            *d *= 1.0 - s * s;
        }
        g.tensors[INIT_W].outer_acc(&d_pre, &start.mean);
        add_into(&mut g.tensors[INIT_B].data, &d_pre);
        let mut d_mean = vec![0.0; 2 * h];
        self.t(INIT_W).matvec_t_acc(&d_pre, &mut d_mean);
        for i in 0..n {
            axpy(1.0 / n as f64, &d_mean, &mut d_states[i]);
            g.tensors[ATTN].outer_acc(&d_keys[i], &enc.states[i]);
            self.t(ATTN).matvec_t_acc(&d_keys[i], &mut d_states[i]);
        }

        self.encoder_backward(&enc, &d_states, g);
        loss
    }

    fn encoder_backward(&self, enc: &Encoded, d_states: &[Vec<f64>], g: &mut Params) {
        let h = self.cfg.hidden_dim;
        let n = enc.ids.len();
        for (base, backward) in [(ENC_FWD, false), (ENC_BWD, true)] {
            let mut carry = vec![0.0; h];
            for j in (0..n).rev() {
                let pos = if backward { n - 1 - j } else { j };
                let cache = if backward { &enc.bwd[j] } else { &enc.fwd[j] };
                let half = if backward { &d_states[pos][h..] } else { &d_states[pos][..h] };
                let mut dh = carry;
                add_into(&mut dh, half);
                let (dx, dprev) = gru::backward(&self.gru(base), &mut gru_grads(g, base), cache, &dh);
                add_into(g.tensors[EMB].row_mut(enc.ids[pos] as usize), &dx);
                carry = dprev;
            }
        }
    }

    fn prepare(&self, batch: &[TrainingPair]) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        batch
            .iter()
            .map(|p| Ok((self.encoder_input(&p.src)?, self.decoder_target(&p.tgt)?)))
            .collect()
    }

    /// Mean per-token cross-entropy of the batch.
    pub fn loss(&self, batch: &[TrainingPair]) -> Result<f64> {
        let data = self.prepare(batch)?;
        let tokens: usize = data.iter().map(|(_, t)| t.len()).sum();
        let total: f64 = data
            .par_iter()
            .map(|(s, t)| self.example(s, t, 0.0, None))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        Ok(total / tokens as f64)
    }

    /// Mean per-token cross-entropy and its gradient.
    pub fn loss_and_grad(&self, batch: &[TrainingPair]) -> Result<(f64, Params)> {
        let data = self.prepare(batch)?;
        let tokens: usize = data.iter().map(|(_, t)| t.len()).sum();
        let scale = 1.0 / tokens as f64;
        let shapes = self.cfg.shapes();
        let parts: Vec<(f64, Params)> = data
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = Params::zeros(&shapes);
                let l = chunk.iter().map(|(s, t)| self.example(s, t, scale, Some(&mut g))).sum();
                (l, g)
            })
            .collect();
        let mut grads = Params::zeros(&shapes);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            grads.add_assign(g);
        }
        Ok((loss * scale, grads))
    }

    /// One clipped Adam update; returns the pre-update batch loss.
    pub fn train_step(&mut self, batch: &[TrainingPair]) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_grad(batch)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::InvalidArgument("non-finite loss or gradient".into()));
        }
        let norm = grads.l2_norm();
        if norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        self.optimizer.update(&mut self.params, &grads, self.cfg.learning_rate);
        debug_assert!(self.params.all_finite());
        Ok(loss)
    }

    /// Sentence representations over content positions (style tags and
    /// boundary tokens excluded).
    pub fn represent(&self, seq: &TokenSequence) -> Result<DualEmbedding> {
        let ids = self.encoder_input(seq)?;
        let enc = self.encode(&ids);
        let emb = self.t(EMB);
        let mut w = vec![0.0; self.cfg.embed_dim];
        let mut e = vec![0.0; 2 * self.cfg.hidden_dim];
        for (i, &id) in ids.iter().enumerate() {
            if self.is_content(id) {
                add_into(&mut w, emb.row(id as usize));
                add_into(&mut e, &enc.states[i]);
            }
        }
        Ok(DualEmbedding { w, e })
    }

    pub fn represent_all(&self, seqs: &[TokenSequence]) -> Result<Vec<DualEmbedding>> {
        seqs.par_iter().map(|s| self.represent(s)).collect()
    }

    /// Greedy decoding of `src` into the style whose tag id is `target_tag`.
    /// Returns content ids only; at most `max_len` tokens.
    pub fn decode(&self, src: &TokenSequence, target_tag: u32, max_len: usize) -> Result<TokenSequence> {
        let ids = self.encoder_input(&src.with_prefix(target_tag))?;
        let enc = self.encode(&ids);
        let start = self.decoder_start(&enc);
        let mut out_ids = Vec::new();
        let mut prev_out = vec![0.0; self.cfg.hidden_dim];
        let mut prev_state = start.s0.clone();
        let mut input = BOS;
        for _ in 0..max_len {
            let st = self.decoder_step(&enc, &start, input, &prev_out, &prev_state);
            let next = st
                .probs
                .iter()
                .enumerate()
                .filter(|&(i, _)| i as u32 == EOS || self.is_content(i as u32))
                .fold((EOS, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i as u32, p) } else { best })
                .0;
            if next == EOS {
                break;
            }
            out_ids.push(next);
            prev_out = st.out;
            prev_state = st.gru.h;
            input = next;
        }
        Ok(TokenSequence::new(out_ids, false))
    }

    pub fn decode_all(&self, srcs: &[TokenSequence], target_tag: u32, max_len: usize) -> Result<Vec<TokenSequence>> {
        srcs.par_iter().map(|s| self.decode(s, target_tag, max_len)).collect()
    }
}

#[cfg(test)]
mod tests;
