//! Logistic style classifier over hashed word uni- and bigrams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{StyleCorpus, StyleTag};
use crate::error::{Error, Result};

const BUCKETS: usize = 1 << 16;

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

pub(crate) fn features(text: &str) -> Vec<usize> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut f: Vec<usize> = words.iter().map(|w| (fnv1a(&["1", w]) % BUCKETS as u64) as usize).collect();
    f.extend(
        words
            .windows(2)
            .map(|p| (fnv1a(&["2", p[0], p[1]]) % BUCKETS as u64) as usize),
    );
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 8,
            learning_rate: 0.2,
            l2: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleClassifier {
    /// `labels[0]` is predicted when the score is negative.
    pub labels: [StyleTag; 2],
    weights: Vec<f64>,
    bias: f64,
    /// Macro-F1 on the development split, when one was given.
    pub dev_macro_f1: Option<f64>,
}

impl StyleClassifier {
    fn score(&self, text: &str) -> f64 {
        self.bias + features(text).iter().map(|&i| self.weights[i]).sum::<f64>()
    }

    /// Probability of `labels[1]`.
    pub fn prob_second(&self, text: &str) -> f64 {
        1.0 / (1.0 + (-self.score(text)).exp())
    }

    pub fn predict(&self, text: &str) -> &StyleTag {
        &self.labels[usize::from(self.score(text) >= 0.0)]
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Trains on labeled texts (`label` is 0 or 1 into `labels`).
pub fn train_on_examples(labels: [StyleTag; 2], data: &[(String, usize)], cfg: &ClassifierConfig) -> Result<StyleClassifier> {
    if data.is_empty() {
        return Err(Error::Empty("classifier training data".into()));
    }
    let feats: Vec<(Vec<usize>, f64)> = data.iter().map(|(t, y)| (features(t), *y as f64)).collect();
    let mut clf = StyleClassifier {
        labels,
        weights: vec![0.0; BUCKETS],
        bias: 0.0,
        dev_macro_f1: None,
    };
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate / (1.0 + epoch as f64);
        for &i in &order {
            let (f, y) = &feats[i];
            let s = clf.bias + f.iter().map(|&j| clf.weights[j]).sum::<f64>();
            let g = 1.0 / (1.0 + (-s).exp()) - y;
            for &j in f {
                clf.weights[j] -= lr * (g + cfg.l2 * clf.weights[j]);
            }
            clf.bias -= lr * g;
        }
    }
    Ok(clf)
}

/// Macro-averaged F1 over the two labels.
pub fn macro_f1(gold: &[usize], pred: &[usize]) -> f64 {
    let f1 = |c: usize| {
        let tp = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|&(&g, &p)| g != c && p == c).count() as f64;
        let fneg = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p != c).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    };
    (f1(0) + f1(1)) / 2.0
}

fn labeled(a: &StyleCorpus, b: &StyleCorpus) -> Vec<(String, usize)> {
    a.texts()
        .map(|t| (t.to_string(), 0))
        .chain(b.texts().map(|t| (t.to_string(), 1)))
        .collect()
}

/// Trains on the two training corpora and, when dev corpora are given,
/// records dev macro-F1.
pub fn train_style_classifier(
    train: (&StyleCorpus, &StyleCorpus),
    dev: Option<(&StyleCorpus, &StyleCorpus)>,
    cfg: &ClassifierConfig,
) -> Result<StyleClassifier> {
    if train.0.is_empty() || train.1.is_empty() {
        return Err(Error::Empty("classifier training corpus".into()));
    }
    let labels = [train.0.style.clone(), train.1.style.clone()];
    let mut clf = train_on_examples(labels, &labeled(train.0, train.1), cfg)?;
    if let Some((da, db)) = dev {
        clf.dev_macro_f1 = Some(evaluate_macro_f1(&clf, &labeled(da, db)));
    }
    Ok(clf)
}

pub fn evaluate_macro_f1(clf: &StyleClassifier, data: &[(String, usize)]) -> f64 {
    let gold: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
    let pred: Vec<usize> = data
        .iter()
        .map(|(t, _)| usize::from(clf.predict(t) == &clf.labels[1]))
        .collect();
    macro_f1(&gold, &pred)
}
