//! Online parallel-pair extraction. Sentences of both styles are embedded
//! twice (bag of word embeddings `w`, summed encoder states `e`), scored with
//! the ratio margin against cross-style neighborhoods, and a pair is kept
//! only when it is the mutual best match under both representations.

mod index;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::tensor::{dot, norm};
use crate::seqmodel::Model;
use crate::tokenizer::TokenSequence;

pub use index::{build_index, hit_order, normalized, top_k, Hit, IndexMode, VectorIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Neighborhood size for the margin denominator.
    pub k: usize,
    pub mode: IndexMode,
    /// Optional lower bound on both margins, off by default.
    pub threshold: Option<f64>,
    /// Lower clamp of the margin denominator.
    pub epsilon: f64,
    /// Approximate mode only: nearest neighbors considered as argmax
    /// candidates.
    pub candidates: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 4,
            mode: IndexMode::Exact,
            threshold: None,
            epsilon: 1e-6,
            candidates: 16,
        }
    }
}

/// Ratio margin of a pair given the cosines of each side's `k` nearest
/// cross-style neighbors.
pub fn margin_score(x: &[f64], y: &[f64], nn_x: &[f64], nn_y: &[f64], k: usize, epsilon: f64) -> Result<f64> {
    if k == 0 || nn_x.len() != k || nn_y.len() != k {
        return Err(Error::InvalidArgument(format!(
            "margin neighborhoods must both have k = {k} entries, got {} and {}",
            nn_x.len(),
            nn_y.len()
        )));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let denom = norm(x) * norm(y);
    let cos = if denom > 0.0 { dot(x, y) / denom } else { 0.0 };
    let mean_x = nn_x.iter().sum::<f64>() / k as f64;
    let mean_y = nn_y.iter().sum::<f64>() / k as f64;
    Ok(margin_from_cos(cos, mean_x, mean_y, epsilon))
}

#[inline]
pub fn margin_from_cos(cos: f64, mean_x: f64, mean_y: f64, epsilon: f64) -> f64 {
    cos / ((mean_x + mean_y) / 2.0).max(epsilon)
}

/// Both representation indexes for one style, built from one model snapshot.
#[derive(Clone, Debug)]
pub struct DualIndex {
    pub w: VectorIndex,
    pub e: VectorIndex,
}

impl DualIndex {
    pub fn build(ids: &[u32], w: &[Vec<f64>], e: &[Vec<f64>], mode: IndexMode) -> Result<Self> {
        let pack = |vs: &[Vec<f64>]| -> Vec<(u32, Vec<f64>)> { ids.iter().copied().zip(vs.iter().cloned()).collect() };
        Ok(DualIndex {
            w: build_index(&pack(w), mode)?,
            e: build_index(&pack(e), mode)?,
        })
    }

    /// Embeds `seqs` (style prefix removed) with the model and indexes them.
    pub fn from_model(model: &Model, ids: &[u32], seqs: &[TokenSequence], mode: IndexMode) -> Result<Self> {
        let plain: Vec<TokenSequence> = seqs.iter().map(TokenSequence::without_prefix).collect();
        let reps = model.represent_all(&plain)?;
        let (w, e): (Vec<_>, Vec<_>) = reps.into_iter().map(|r| (r.w, r.e)).unzip();
        DualIndex::build(ids, &w, &e, mode)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        self.w.ids()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub a_id: u32,
    pub b_id: u32,
    pub score_w: f64,
    pub score_e: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeResult {
    pub accepted: Vec<CandidatePair>,
    pub rejected_a: Vec<u32>,
    pub rejected_b: Vec<u32>,
}

/// Best cross-style match of every row under one representation.
#[derive(Clone, Debug)]
struct BestMatches {
    /// For each A position: (B position, margin).
    a_to_b: Vec<(usize, f64)>,
    b_to_a: Vec<(usize, f64)>,
}

fn neighborhood_means(from: &VectorIndex, to: &VectorIndex, k: usize) -> Vec<f64> {
    (0..from.len())
        .into_par_iter()
        .map(|i| {
            let hits = to.search_unit(from.row(i), k);
            hits.iter().map(|h| h.cos).sum::<f64>() / hits.len() as f64
        })
        .collect()
}

fn best_for_each(
    from: &VectorIndex,
    to: &VectorIndex,
    from_means: &[f64],
    to_means: &[f64],
    cfg: &MiningConfig,
) -> Vec<(usize, f64)> {
    let pick = |best: Option<(usize, f64)>, j: usize, m: f64| match best {
        Some((bj, bm)) if bm > m || (bm == m && to.ids()[bj] < to.ids()[j]) => best,
        _ => Some((j, m)),
    };
    (0..from.len())
        .into_par_iter()
        .map(|i| {
            let q = from.row(i);
            let mut best: Option<(usize, f64)> = None;
            match to.mode() {
                IndexMode::Exact => {
                    for (j, cos) in to.scan(q).into_iter().enumerate() {
                        let m = margin_from_cos(cos, from_means[i], to_means[j], cfg.epsilon);
                        best = pick(best, j, m);
                    }
                }
                IndexMode::Approximate { .. } => {
                    for h in to.search_unit(q, cfg.candidates.max(1)) {
                        let j = to.position(h.id).expect("hit comes from this index");
                        let m = margin_from_cos(h.cos, from_means[i], to_means[j], cfg.epsilon);
                        best = pick(best, j, m);
                    }
                }
            }
            best.expect("index is not empty")
        })
        .collect()
}

fn best_matches(a: &VectorIndex, b: &VectorIndex, cfg: &MiningConfig) -> Result<BestMatches> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mining index".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let k = cfg.k.min(a.len()).min(b.len());
    let means_a = neighborhood_means(a, b, k);
    let means_b = neighborhood_means(b, a, k);
    Ok(BestMatches {
        a_to_b: best_for_each(a, b, &means_a, &means_b, cfg),
        b_to_a: best_for_each(b, a, &means_b, &means_a, cfg),
    })
}

/// Mutual-best-match tables for one model snapshot. Build once per pass and
/// query batch by batch.
#[derive(Clone, Debug)]
pub struct Miner {
    a_ids: Vec<u32>,
    b_ids: Vec<u32>,
    w: BestMatches,
    e: BestMatches,
    threshold: Option<f64>,
}

impl Miner {
    pub fn new(index_a: &DualIndex, index_b: &DualIndex, cfg: &MiningConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::InvalidArgument("mining k must be >= 1".into()));
        }
        if index_a.w.ids() != index_a.e.ids() || index_b.w.ids() != index_b.e.ids() {
            return Err(Error::InvalidArgument("w and e indexes must cover the same sentences".into()));
        }
        Ok(Miner {
            a_ids: index_a.ids().to_vec(),
            b_ids: index_b.ids().to_vec(),
            w: best_matches(&index_a.w, &index_b.w, cfg)?,
            e: best_matches(&index_a.e, &index_b.e, cfg)?,
            threshold: cfg.threshold,
        })
    }

    /// The accepted partner of A position `i`, if any.
    fn partner_of_a(&self, i: usize) -> Option<CandidatePair> {
        let (jw, sw) = self.w.a_to_b[i];
        let (je, se) = self.e.a_to_b[i];
        let mutual = jw == je && self.w.b_to_a[jw].0 == i && self.e.b_to_a[je].0 == i;
        let above = self.threshold.is_none_or(|t| sw >= t && se >= t);
        (mutual && above).then(|| CandidatePair {
            a_id: self.a_ids[i],
            b_id: self.b_ids[jw],
            score_w: sw,
            score_e: se,
        })
    }

    fn partner_of_b(&self, j: usize) -> Option<CandidatePair> {
        let i = self.w.b_to_a[j].0;
        self.partner_of_a(i).filter(|p| p.b_id == self.b_ids[j])
    }

    /// All accepted pairs of the snapshot, ordered by A id.
    pub fn all_pairs(&self) -> Vec<CandidatePair> {
        let mut v: Vec<CandidatePair> = (0..self.a_ids.len()).filter_map(|i| self.partner_of_a(i)).collect();
        v.sort_by_key(|p| p.a_id);
        v
    }

    fn positions(ids: &[u32], batch: &[u32]) -> Result<Vec<usize>> {
        let lookup: std::collections::HashMap<u32, usize> = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
        batch
            .iter()
            .map(|id| {
                lookup
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("sentence id {id} is not indexed")))
            })
            .collect()
    }

    /// Processes a batch from each side. A pair is listed once even when both
    /// of its sentences are in the batches.
    pub fn extract(&self, batch_a: &[u32], batch_b: &[u32]) -> Result<SpeResult> {
        let pa = Miner::positions(&self.a_ids, batch_a)?;
        let pb = Miner::positions(&self.b_ids, batch_b)?;
        let mut seen = BTreeSet::new();
        let mut res = SpeResult::default();
        for (&i, &id) in pa.iter().zip(batch_a) {
            match self.partner_of_a(i) {
                Some(p) => {
                    if seen.insert((p.a_id, p.b_id)) {
                        res.accepted.push(p);
                    }
                }
                None => res.rejected_a.push(id),
            }
        }
        for (&j, &id) in pb.iter().zip(batch_b) {
            match self.partner_of_b(j) {
                Some(p) => {
                    if seen.insert((p.a_id, p.b_id)) {
                        res.accepted.push(p);
                    }
                }
                None => res.rejected_b.push(id),
            }
        }
        Ok(res)
    }
}

/// Mines pairs for a batch of A sentences against the full B index.
pub fn extract_pairs(batch_a: &[u32], index_a: &DualIndex, index_b: &DualIndex, cfg: &MiningConfig) -> Result<SpeResult> {
    Miner::new(index_a, index_b, cfg)?.extract(batch_a, &[])
}
