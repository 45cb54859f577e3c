use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{audit_pair, Direction, EncodedCorpus, Origin, TrainingPair};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::mining::{DualIndex, IndexMode, Miner, MiningConfig};
use crate::seqmodel::Model;
use crate::tokenizer::{BpeModel, TokenSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_len: usize,
    pub dae_steps: usize,
    pub spe_k: usize,
    pub mining_mode: IndexMode,
    pub use_spe: bool,
    pub use_bt: bool,
    pub use_dae: bool,
    /// Checkpoints without a dev ATA improvement before stopping.
    pub patience: usize,
    /// Updates between checkpoints.
    pub checkpoint_every: usize,
    pub max_steps: usize,
    /// Fraction of rejected sentences that are back-translated.
    pub bt_sample_rate: f64,
    /// Dev sentences per side used for dev ATA.
    pub dev_limit: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            max_len: 100,
            dae_steps: 2000,
            spe_k: 4,
            mining_mode: IndexMode::Exact,
            use_spe: true,
            use_bt: true,
            use_dae: true,
            patience: 5,
            checkpoint_every: 500,
            max_steps: 20_000,
            bt_sample_rate: 1.0,
            dev_limit: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !self.use_spe && !self.use_bt {
            return bad("at least one of use_spe and use_bt must be on");
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.spe_k == 0 {
            return bad("batch_size, checkpoint_every and spe_k must be >= 1");
        }
        if self.max_len < 3 {
            return bad("max_len must be >= 3");
        }
        if !(0.0..=1.0).contains(&self.bt_sample_rate) {
            return bad("bt_sample_rate must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub dev_ata: f64,
    /// Back-translation quality over the window since the previous record;
    /// absent when no back-translations were made.
    pub bt_flu: Option<f64>,
    pub bt_cp: Option<f64>,
    pub bt_ata: Option<f64>,
    pub accepted_count: usize,
    pub rejected_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Step of the returned snapshot.
    pub best_step: usize,
    pub best_dev_ata: f64,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// What the loop needs beyond the training corpora.
pub struct TrainContext<'a> {
    pub bpe: &'a BpeModel,
    pub evaluator: &'a Evaluator<'a>,
    pub dev_a: &'a EncodedCorpus,
    pub dev_b: &'a EncodedCorpus,
}

/// Back-translates sentences of style T (tag `own_tag`) into the opposite
/// style and pairs each output, re-tagged with T, with its original.
pub fn bt_generate(
    model: &Model,
    rejected: &[TokenSequence],
    own_tag: u32,
    opposite_tag: u32,
    direction: Direction,
) -> Result<Vec<TrainingPair>> {
    let room = model.config().max_len - 2;
    let outs = model.decode_all(rejected, opposite_tag, room)?;
    Ok(outs
        .into_iter()
        .zip(rejected)
        .map(|(hat, s)| TrainingPair {
            src: hat.with_prefix(own_tag),
            tgt: s.with_prefix(own_tag),
            direction,
            origin: Origin::BackTranslated,
        })
        .collect())
}

const SHUFFLE_SALT: u64 = 0x3577_0001;
const BT_SALT: u64 = 0x3577_0002;

#[derive(Default)]
struct Window {
    accepted: usize,
    rejected: usize,
    bt: usize,
    flu: f64,
    cp: f64,
    ata: f64,
}

struct Run<'a> {
    model: Model,
    a: &'a EncodedCorpus,
    b: &'a EncodedCorpus,
    ctx: &'a TrainContext<'a>,
    cfg: &'a TrainConfig,
    genuine_a: HashSet<&'a [u32]>,
    genuine_b: HashSet<&'a [u32]>,
    step: usize,
    window: Window,
    log: TrainLog,
    best: Option<Model>,
    stale: usize,
}

impl Run<'_> {
    fn dev_ata(&self) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (from, to) in [(self.ctx.dev_a, self.ctx.dev_b), (self.ctx.dev_b, self.ctx.dev_a)] {
            let n = from.len().min(self.cfg.dev_limit);
            let outs = self.model.decode_all(&from.seqs[..n], to.tag_id, self.cfg.max_len - 2)?;
            for o in &outs {
                let text = self.ctx.bpe.decode(o)?;
                hits += usize::from(self.ctx.evaluator.classifier.predict(&text) == &to.tag);
            }
            total += n;
        }
        if total == 0 {
            return Err(Error::Empty("dev sets".into()));
        }
        Ok(100.0 * hits as f64 / total as f64)
    }

    fn checkpoint(&mut self) -> Result<()> {
        let dev_ata = self.dev_ata()?;
        let w = std::mem::take(&mut self.window);
        let bt = |x: f64| (w.bt > 0).then(|| x / w.bt as f64);
        let rec = TrainRecord {
            step: self.step,
            dev_ata,
            bt_flu: bt(100.0 * w.flu),
            bt_cp: bt(w.cp),
            bt_ata: bt(100.0 * w.ata),
            accepted_count: w.accepted,
            rejected_count: w.rejected,
        };
        log::info!(
            "step {}: dev ata {:.1} bt ata {:?} accepted {} rejected {}",
            rec.step,
            rec.dev_ata,
            rec.bt_ata,
            rec.accepted_count,
            rec.rejected_count
        );
        self.log.records.push(rec);
        if self.best.is_none() || dev_ata > self.log.best_dev_ata {
            self.best = Some(self.model.clone());
            self.log.best_step = self.step;
            self.log.best_dev_ata = dev_ata;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(())
    }

    /// Trains on `pairs` in batches. Returns true when training should stop.
    fn update(&mut self, pairs: &[TrainingPair]) -> Result<bool> {
        for chunk in pairs.chunks(self.cfg.batch_size) {
            for p in chunk {
                let genuine = if p.tgt.prefix() == Some(self.a.tag_id) {
                    &self.genuine_a
                } else {
                    &self.genuine_b
                };
                audit_pair(p, genuine)?;
            }
            self.model.train_step(chunk)?;
            self.step += 1;
            if self.step.is_multiple_of(self.cfg.checkpoint_every) {
                self.checkpoint()?;
                if self.stale >= self.cfg.patience {
                    return Ok(true);
                }
            }
            if self.step >= self.cfg.max_steps {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn seqs(c: &EncodedCorpus, ids: &[u32]) -> Vec<TokenSequence> {
        ids.iter()
            .map(|id| c.seqs[c.position(*id).expect("id comes from this corpus")].clone())
            .collect()
    }

    fn back_translate(&mut self, ids: &[u32], own_is_a: bool) -> Result<Vec<TrainingPair>> {
        let (own, other, dir) = if own_is_a {
            (self.a, self.b, Direction::BToA)
        } else {
            (self.b, self.a, Direction::AToB)
        };
        let pairs = bt_generate(&self.model, &Run::seqs(own, ids), own.tag_id, other.tag_id, dir)?;
        for (p, id) in pairs.iter().zip(ids) {
            let s = &own.texts[own.position(*id).expect("id comes from this corpus")];
            let hat = self.ctx.bpe.decode_ids(p.src.body())?;
            let sc = self.ctx.evaluator.score(s, &hat, &other.tag)?;
            self.window.bt += 1;
            self.window.flu += sc.flu as f64;
            self.window.cp += sc.cp;
            self.window.ata += sc.ata as f64;
        }
        Ok(pairs)
    }

    fn extracted(&self, a_id: u32, b_id: u32) -> [TrainingPair; 2] {
        let sa = &self.a.seqs[self.a.position(a_id).expect("mined from this corpus")];
        let sb = &self.b.seqs[self.b.position(b_id).expect("mined from this corpus")];
        let (ta, tb) = (self.a.tag_id, self.b.tag_id);
        [
            TrainingPair {
                src: sa.with_prefix(tb),
                tgt: sb.with_prefix(tb),
                direction: Direction::AToB,
                origin: Origin::Extracted,
            },
            TrainingPair {
                src: sb.with_prefix(ta),
                tgt: sa.with_prefix(ta),
                direction: Direction::BToA,
                origin: Origin::Extracted,
            },
        ]
    }

    /// One pass over the smaller corpus. Returns true when training should stop.
    fn pass(&mut self, shuffle: &mut ChaCha8Rng, bt_rng: &mut ChaCha8Rng) -> Result<bool> {
        let miner = if self.cfg.use_spe {
            let mode = self.cfg.mining_mode;
            let ia = DualIndex::from_model(&self.model, &self.a.ids, &self.a.seqs, mode)?;
            let ib = DualIndex::from_model(&self.model, &self.b.ids, &self.b.seqs, mode)?;
            let mcfg = MiningConfig {
                k: self.cfg.spe_k,
                mode,
                ..MiningConfig::default()
            };
            Some(Miner::new(&ia, &ib, &mcfg)?)
        } else {
            None
        };
        let mut order_a = self.a.ids.clone();
        let mut order_b = self.b.ids.clone();
        order_a.shuffle(shuffle);
        order_b.shuffle(shuffle);
        let n = order_a.len().min(order_b.len());
        let bs = self.cfg.batch_size;
        for start in (0..n).step_by(bs) {
            let end = (start + bs).min(n);
            let (ba, bb) = (&order_a[start..end], &order_b[start..end]);
            let (accepted, mut rej_a, mut rej_b) = match &miner {
                Some(m) => {
                    let r = m.extract(ba, bb)?;
                    (r.accepted, r.rejected_a, r.rejected_b)
                }
                None => (Vec::new(), ba.to_vec(), bb.to_vec()),
            };
            self.window.accepted += accepted.len();
            self.window.rejected += rej_a.len() + rej_b.len();
            let pairs: Vec<TrainingPair> = accepted.iter().flat_map(|p| self.extracted(p.a_id, p.b_id)).collect();
            if self.update(&pairs)? {
                return Ok(true);
            }
            if self.cfg.use_bt {
                if self.cfg.bt_sample_rate < 1.0 {
                    let rate = self.cfg.bt_sample_rate;
                    rej_a.retain(|_| bt_rng.random_bool(rate));
                    rej_b.retain(|_| bt_rng.random_bool(rate));
                }
                let mut bt = self.back_translate(&rej_a, true)?;
                bt.extend(self.back_translate(&rej_b, false)?);
                if self.update(&bt)? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Joint training: each pass mines pairs with the pass-start model, trains
/// both directions on accepted pairs and back-translates the rejected
/// sentences. Returns the snapshot with the best dev ATA.
pub fn train_3st(model: Model, a: &EncodedCorpus, b: &EncodedCorpus, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("training corpora".into()));
    }
    if a.tag_id == b.tag_id {
        return Err(Error::InvalidArgument("the two corpora share a style tag".into()));
    }
    if model.config().max_len != cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "model max_len {} differs from training max_len {}",
            model.config().max_len,
            cfg.max_len
        )));
    }
    let mut run = Run {
        model,
        a,
        b,
        ctx,
        cfg,
        genuine_a: a.seqs.iter().map(|s| s.ids.as_slice()).collect(),
        genuine_b: b.seqs.iter().map(|s| s.ids.as_slice()).collect(),
        step: 0,
        window: Window::default(),
        log: TrainLog::default(),
        best: None,
        stale: 0,
    };
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut bt_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BT_SALT);
    loop {
        let before = run.step;
        if run.pass(&mut shuffle, &mut bt_rng)? {
            break;
        }
        if run.step == before {
            log::warn!("a full pass produced no training pairs; stopping");
            break;
        }
    }
    if run.log.records.last().is_none_or(|r| r.step != run.step) {
        run.checkpoint()?;
    }
    let best = run.best.take().expect("at least one checkpoint");
    Ok((best, run.log))
}
