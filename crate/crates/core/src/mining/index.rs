//! Cosine-similarity index over unit-normalized vectors. Exact mode scans
//! every row; approximate mode is an inverted-file index over spherical
//! k-means cells.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::tensor::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IndexMode {
    Exact,
    /// `lists` k-means cells, `probe` cells scanned per query.
    Approximate { lists: usize, probe: usize },
}

/// A (id, cosine) hit. Orders by descending cosine, then ascending id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub id: u32,
    pub cos: f64,
}

pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.cos.total_cmp(&a.cos).then(a.id.cmp(&b.id))
}

#[derive(Clone, Debug)]
struct Cells {
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    probe: usize,
}

#[derive(Clone, Debug)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<u32>,
    positions: HashMap<u32, usize>,
    rows: Vec<Vec<f64>>,
    mode: IndexMode,
    cells: Option<Cells>,
}

pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument("cannot index a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Keeps the best `k` hits under [`hit_order`].
pub fn top_k(hits: impl Iterator<Item = Hit>, k: usize) -> Vec<Hit> {
    let mut best: Vec<Hit> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    for h in hits {
        if best.len() == k && hit_order(&h, &best[k - 1]) != Ordering::Less {
            continue;
        }
        let pos = best.partition_point(|b| hit_order(b, &h) == Ordering::Less);
        best.insert(pos, h);
        best.truncate(k);
    }
    best
}

pub fn build_index(embs: &[(u32, Vec<f64>)], mode: IndexMode) -> Result<VectorIndex> {
    let dim = embs.first().map(|(_, v)| v.len()).unwrap_or(0);
    let mut ids = Vec::with_capacity(embs.len());
    let mut rows = Vec::with_capacity(embs.len());
    for (id, v) in embs {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        ids.push(*id);
        rows.push(normalized(v)?);
    }
    let cells = match mode {
        IndexMode::Exact => None,
        IndexMode::Approximate { lists, probe } => {
            if lists == 0 || probe == 0 {
                return Err(Error::InvalidArgument("approximate index needs lists, probe >= 1".into()));
            }
            Some(kmeans_cells(&rows, lists.min(rows.len().max(1)), probe))
        }
    };
    let positions = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    Ok(VectorIndex {
        dim,
        ids,
        positions,
        rows,
        mode,
        cells,
    })
}

fn nearest_centroid(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let s = dot(cen, v);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    best
}

fn kmeans_cells(rows: &[Vec<f64>], lists: usize, probe: usize) -> Cells {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0x1f1f);
    let mut centroids: Vec<Vec<f64>> = if rows.is_empty() {
        Vec::new()
    } else {
        sample(&mut rng, rows.len(), lists).into_iter().map(|i| rows[i].clone()).collect()
    };
    let mut assign = vec![0usize; rows.len()];
    for _ in 0..10 {
        assign = rows.par_iter().map(|r| nearest_centroid(&centroids, r)).collect();
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        for (r, &c) in rows.iter().zip(&assign) {
            for (s, x) in sums[c].iter_mut().zip(r) {
                *s += x;
            }
        }
        for (c, s) in centroids.iter_mut().zip(sums) {
            if let Ok(n) = normalized(&s) {
                *c = n;
            }
        }
    }
    let mut members = vec![Vec::new(); centroids.len()];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    Cells {
        centroids,
        members,
        probe,
    }
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Unit-normalized row at storage position `pos`.
    pub fn row(&self, pos: usize) -> &[f64] {
        &self.rows[pos]
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("index".into()));
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Cosines of a unit query against every row, in storage order.
    pub fn scan(&self, unit_query: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, unit_query)).collect()
    }

    /// Top-k rows by cosine with `query` (normalized here).
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        let q = normalized(query)?;
        Ok(self.search_unit(&q, k))
    }

    pub(crate) fn search_unit(&self, q: &[f64], k: usize) -> Vec<Hit> {
        match &self.cells {
            None => top_k(
                self.rows.iter().zip(&self.ids).map(|(r, &id)| Hit { id, cos: dot(r, q) }),
                k,
            ),
            Some(cells) => {
                let probes = top_k(
                    cells
                        .centroids
                        .iter()
                        .enumerate()
                        .map(|(c, cen)| Hit { id: c as u32, cos: dot(cen, q) }),
                    cells.probe,
                );
                let candidates = probes.iter().flat_map(|p| &cells.members[p.id as usize]).map(|&i| Hit {
                    id: self.ids[i],
                    cos: dot(&self.rows[i], q),
                });
                top_k(candidates, k)
            }
        }
    }
}
