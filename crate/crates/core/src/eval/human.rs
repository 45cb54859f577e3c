//! Statistics over human judgments: success rate, Krippendorff's alpha and
//! the Wilcoxon signed-rank test.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One rater's Likert judgments of one prediction. `None` marks a blank cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub item_id: String,
    pub rater_id: String,
    pub cp: Option<u8>,
    pub flu: Option<u8>,
    pub ata: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    Cp,
    Flu,
    Ata,
}

impl Rating {
    pub fn get(&self, d: Dimension) -> Option<u8> {
        match d {
            Dimension::Cp => self.cp,
            Dimension::Flu => self.flu,
            Dimension::Ata => self.ata,
        }
    }
}

fn likert(field: &str, line: usize) -> Result<Option<u8>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<u8>() {
        Ok(v @ 1..=5) => Ok(Some(v)),
        _ => Err(Error::Format(format!("line {line}: rating {field:?} is not in 1..=5"))),
    }
}

/// Reads `item_id,rater_id,cp,flu,ata` rows (with header). Blank cells are
/// missing ratings.
pub fn read_ratings(path: &Path) -> Result<Vec<Rating>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rec.len() != 5 {
            return Err(Error::Format(format!("line {line}: expected 5 fields, got {}", rec.len())));
        }
        out.push(Rating {
            item_id: rec[0].to_string(),
            rater_id: rec[1].to_string(),
            cp: likert(&rec[2], line)?,
            flu: likert(&rec[3], line)?,
            ata: likert(&rec[4], line)?,
        });
    }
    Ok(out)
}

/// Percentage of judged predictions rated 4 or 5 on all three dimensions.
/// Every rating row is one judgment.
pub fn success_rate(ratings: &[Rating]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::Empty("ratings".into()));
    }
    let mut ok = 0usize;
    for r in ratings {
        let (Some(cp), Some(flu), Some(ata)) = (r.cp, r.flu, r.ata) else {
            return Err(Error::InvalidArgument(format!(
                "item {} rater {} is missing a rating",
                r.item_id, r.rater_id
            )));
        };
        if cp >= 4 && flu >= 4 && ata >= 4 {
            ok += 1;
        }
    }
    Ok(100.0 * ok as f64 / ratings.len() as f64)
}

/// Items × raters, one dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingsMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    pub cells: Vec<Vec<Option<u8>>>,
}

impl RatingsMatrix {
    pub fn from_rows(rows: Vec<Vec<Option<u8>>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("ragged ratings matrix".into()));
        }
        if rows.iter().flatten().flatten().any(|v| !(1..=5).contains(v)) {
            return Err(Error::InvalidArgument("rating outside 1..=5".into()));
        }
        Ok(RatingsMatrix {
            items: (0..rows.len()).map(|i| i.to_string()).collect(),
            raters: (0..width).map(|i| i.to_string()).collect(),
            cells: rows,
        })
    }

    pub fn from_ratings(ratings: &[Rating], dim: Dimension) -> Result<Self> {
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        let mut raters: BTreeMap<&str, usize> = BTreeMap::new();
        for r in ratings {
            let n = items.len();
            items.entry(&r.item_id).or_insert(n);
            let n = raters.len();
            raters.entry(&r.rater_id).or_insert(n);
        }
        let mut cells = vec![vec![None; raters.len()]; items.len()];
        for r in ratings {
            let cell = &mut cells[items[r.item_id.as_str()]][raters[r.rater_id.as_str()]];
            if cell.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "rater {} rated item {} twice",
                    r.rater_id, r.item_id
                )));
            }
            *cell = r.get(dim);
        }
        let order = |m: BTreeMap<&str, usize>| {
            let mut v: Vec<(&str, usize)> = m.into_iter().collect();
            v.sort_by_key(|&(_, i)| i);
            v.into_iter().map(|(s, _)| s.to_string()).collect()
        };
        Ok(RatingsMatrix {
            items: order(items),
            raters: order(raters),
            cells,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMetric {
    #[default]
    Ordinal,
    Interval,
}

/// Krippendorff's alpha from the coincidence matrix. Items with fewer than
/// two ratings are not pairable and are ignored.
pub fn krippendorff_alpha(m: &RatingsMatrix, metric: AlphaMetric) -> Result<f64> {
    const V: usize = 5;
    let mut o = [[0.0f64; V]; V];
    let mut units = 0usize;
    for row in &m.cells {
        let vals: Vec<usize> = row.iter().flatten().map(|&v| v as usize - 1).collect();
        let mu = vals.len();
        if mu < 2 {
            continue;
        }
        units += 1;
        let w = 1.0 / (mu - 1) as f64;
        for (i, &c) in vals.iter().enumerate() {
            for (j, &k) in vals.iter().enumerate() {
                if i != j {
                    o[c][k] += w;
                }
            }
        }
    }
    if units < 2 {
        return Err(Error::InvalidArgument("need at least two items with two or more ratings".into()));
    }
    let nc: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    let delta = |c: usize, k: usize| -> f64 {
        match metric {
            AlphaMetric::Interval => ((c as f64) - (k as f64)).powi(2),
            AlphaMetric::Ordinal => {
                let (lo, hi) = (c.min(k), c.max(k));
                let s: f64 = nc[lo..=hi].iter().sum::<f64>() - (nc[c] + nc[k]) / 2.0;
                s * s
            }
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..V {
        for k in 0..V {
            let d = delta(c, k);
            d_o += o[c][k] * d;
            d_e += nc[c] * nc[k] * d;
        }
    }
    if d_e == 0.0 {
        return Err(Error::Undefined("alpha: all pairable ratings are identical".into()));
    }
    Ok(1.0 - (n - 1.0) * d_o / d_e)
}

/// Largest sample (after dropping zero differences) that uses the exact null
/// distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub r_plus: f64,
    pub n: usize,
    pub exact: bool,
    pub p_value: f64,
}

fn average_ranks(abs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; ties share average ranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(Error::InvalidArgument("all paired differences are zero".into()));
    }
    if d.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "{} nonzero differences, need at least 6",
            d.len()
        )));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let r_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        // distribution of the doubled positive rank sum over all 2^n sign patterns
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut count = vec![0.0f64; total + 1];
        count[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if count[s] != 0.0 {
                    count[s + r] += count[s];
                }
            }
            reach += r;
        }
        let t = (2.0 * r_plus).round() as usize;
        let all = 2f64.powi(n as i32);
        let lower: f64 = count[..=t].iter().sum::<f64>() / all;
        let upper: f64 = count[t..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(WilcoxonResult { r_plus, n, exact: true, p_value: p });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    for g in sorted.chunk_by(|x, y| x == y) {
        let t = g.len() as f64;
        var -= (t * t * t - t) / 48.0;
    }
    let z = (r_plus - mean) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z.abs())).min(1.0);
    Ok(WilcoxonResult { r_plus, n, exact: false, p_value: p })
}
