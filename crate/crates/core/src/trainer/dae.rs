use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, EncodedCorpus, Origin, TrainingPair};
use crate::error::{Error, Result};
use crate::noiser::{noise, NoiseConfig};
use crate::seqmodel::Model;
use crate::tokenizer::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub noise: NoiseConfig,
    /// Punctuation ids that delimit segments for permutation.
    pub boundaries: Vec<u32>,
    pub log_every: usize,
    /// Dev sentences per side used for the logged dev loss.
    pub dev_limit: usize,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            steps: 2000,
            batch_size: 50,
            noise: NoiseConfig::default(),
            boundaries: Vec::new(),
            log_every: 100,
            dev_limit: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeRecord {
    pub step: usize,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

const DEV_SALT: u64 = 0xdae0_0de5;

/// Cycles through a corpus in reshuffled epochs.
struct Feed {
    order: Vec<usize>,
    at: usize,
}

impl Feed {
    fn new(n: usize) -> Self {
        Feed {
            order: (0..n).collect(),
            at: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.at == self.order.len() {
            self.order.shuffle(rng);
            self.at = 0;
        }
        self.at += 1;
        self.order[self.at - 1]
    }
}

fn noised_pair(c: &EncodedCorpus, i: usize, dir: Direction, cfg: &DaeConfig, rng: &mut ChaCha8Rng) -> Result<TrainingPair> {
    let clean = c.seqs[i].with_prefix(c.tag_id);
    let np = noise(&clean, &cfg.noise, &cfg.boundaries, rng)?;
    Ok(TrainingPair {
        src: np.noisy,
        tgt: np.clean,
        direction: dir,
        origin: Origin::Denoising,
    })
}

fn dev_pairs(dev: (&EncodedCorpus, &EncodedCorpus), cfg: &DaeConfig) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed ^ DEV_SALT);
    let mut out = Vec::new();
    for (c, dir) in [(dev.0, Direction::BToA), (dev.1, Direction::AToB)] {
        for i in 0..c.len().min(cfg.dev_limit) {
            out.push(noised_pair(c, i, dir, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

/// Trains `model` to reconstruct noised sentences of both styles. Each
/// target carries its own style tag. Batches are split evenly between the
/// two corpora.
pub fn pretrain_dae(
    mut model: Model,
    a: &EncodedCorpus,
    b: &EncodedCorpus,
    dev: Option<(&EncodedCorpus, &EncodedCorpus)>,
    cfg: &DaeConfig,
) -> Result<(Model, Vec<DaeRecord>)> {
    if cfg.steps == 0 {
        return Ok((model, Vec::new()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("denoising corpora".into()));
    }
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::InvalidArgument("batch_size and log_every must be >= 1".into()));
    }
    cfg.noise.validate()?;
    let dev = dev.map(|d| dev_pairs(d, cfg)).transpose()?.filter(|d| !d.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut feeds = [Feed::new(a.len()), Feed::new(b.len())];
    let mut log = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for k in 0..cfg.batch_size {
            let (c, dir, feed) = if k % 2 == 0 {
                (a, Direction::BToA, &mut feeds[0])
            } else {
                (b, Direction::AToB, &mut feeds[1])
            };
            let i = feed.next(&mut rng);
            batch.push(noised_pair(c, i, dir, cfg, &mut rng)?);
        }
        window.0 += model.train_step(&batch)?;
        window.1 += 1;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let dev_loss = dev.as_ref().map(|d| model.loss(d)).transpose()?;
            let rec = DaeRecord {
                step,
                train_loss: window.0 / window.1 as f64,
                dev_loss,
            };
            log::info!("dae step {step}: train {:.4} dev {:?}", rec.train_loss, rec.dev_loss);
            log.push(rec);
            window = (0.0, 0);
        }
    }
    Ok((model, log))
}

fn lcs(x: &[u32], y: &[u32]) -> usize {
    let mut row = vec![0usize; y.len() + 1];
    for &a in x {
        let mut diag = 0;
        for (j, &b) in y.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if a == b { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[y.len()]
}

/// Token accuracy of reconstructing clean sentences from their noised forms
/// under the sentences' own tag: longest common subsequence of output and
/// reference over the longer of the two. Noise is drawn from a fixed
/// stream, so the score is comparable across calls.
pub fn reconstruction_accuracy(model: &Model, corpus: &EncodedCorpus, cfg: &DaeConfig, limit: usize) -> Result<f64> {
    let n = corpus.len().min(limit);
    if n == 0 {
        return Err(Error::Empty("reconstruction set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed ^ DEV_SALT);
    let noisy: Vec<_> = (0..n)
        .map(|i| noised_pair(corpus, i, Direction::AToB, cfg, &mut rng).map(|p| p.src))
        .collect::<Result<_>>()?;
    score_reconstruction(model, corpus, &noisy)
}

/// Token accuracy of reproducing clean sentences fed in unchanged, scored
/// as in [`reconstruction_accuracy`].
pub fn clean_reconstruction_accuracy(model: &Model, corpus: &EncodedCorpus, limit: usize) -> Result<f64> {
    let n = corpus.len().min(limit);
    if n == 0 {
        return Err(Error::Empty("reconstruction set".into()));
    }
    let inputs: Vec<_> = corpus.seqs[..n].iter().map(|s| s.with_prefix(corpus.tag_id)).collect();
    score_reconstruction(model, corpus, &inputs)
}

fn score_reconstruction(model: &Model, corpus: &EncodedCorpus, inputs: &[TokenSequence]) -> Result<f64> {
    let max_len = model.config().max_len - 2;
    let outs = model.decode_all(inputs, corpus.tag_id, max_len)?;
    let mut hit = 0usize;
    let mut total = 0usize;
    for (o, r) in outs.iter().zip(&corpus.seqs) {
        hit += lcs(&o.ids, &r.ids);
        total += o.len().max(r.len());
    }
    Ok(hit as f64 / total as f64)
}
