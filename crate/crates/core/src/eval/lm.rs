//! Word trigram language model with interpolated absolute discounting, and
//! the binary fluency proxy calibrated on it.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const DISCOUNT: f64 = 0.75;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Context {
    total: u64,
    followers: HashMap<String, u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigramLm {
    unigrams: HashMap<String, u64>,
    tokens: u64,
    bigrams: HashMap<String, Context>,
    trigrams: HashMap<String, Context>,
}

fn padded(text: &str) -> Vec<&str> {
    let mut v = vec![BOS, BOS];
    v.extend(text.split_whitespace());
    v.push(EOS);
    v
}

impl Context {
    fn prob(&self, w: &str, lower: f64) -> f64 {
        if self.total == 0 {
            return lower;
        }
        let c = self.followers.get(w).copied().unwrap_or(0) as f64;
        let t = self.total as f64;
        (c - DISCOUNT).max(0.0) / t + DISCOUNT * self.followers.len() as f64 / t * lower
    }
}

impl TrigramLm {
    pub fn train<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut lm = TrigramLm {
            unigrams: HashMap::new(),
            tokens: 0,
            bigrams: HashMap::new(),
            trigrams: HashMap::new(),
        };
        for s in sentences {
            let w = padded(s);
            for i in 2..w.len() {
                *lm.unigrams.entry(w[i].to_string()).or_default() += 1;
                lm.tokens += 1;
                let bi = lm.bigrams.entry(w[i - 1].to_string()).or_default();
                bi.total += 1;
                *bi.followers.entry(w[i].to_string()).or_default() += 1;
                let tri = lm.trigrams.entry(format!("{} {}", w[i - 2], w[i - 1])).or_default();
                tri.total += 1;
                *tri.followers.entry(w[i].to_string()).or_default() += 1;
            }
        }
        if lm.tokens == 0 {
            return Err(Error::Empty("language model training text".into()));
        }
        Ok(lm)
    }

    fn unigram(&self, w: &str) -> f64 {
        // add-one over the vocabulary plus one unknown slot
        let v = self.unigrams.len() as f64 + 1.0;
        (self.unigrams.get(w).copied().unwrap_or(0) as f64 + 1.0) / (self.tokens as f64 + v)
    }

    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        let p1 = self.unigram(w);
        let p2 = self.bigrams.get(v).map_or(p1, |c| c.prob(w, p1));
        self.trigrams.get(&format!("{u} {v}")).map_or(p2, |c| c.prob(w, p2))
    }

    /// Mean natural-log probability per predicted token (including `</s>`).
    pub fn mean_log_prob(&self, text: &str) -> f64 {
        let w = padded(text);
        let n = w.len() - 2;
        (2..w.len()).map(|i| self.prob(w[i - 2], w[i - 1], w[i]).ln()).sum::<f64>() / n as f64
    }

    pub fn perplexity(&self, text: &str) -> f64 {
        (-self.mean_log_prob(text)).exp()
    }
}

/// Random word order, different from the input whenever the sentence has
/// two distinct words.
pub fn shuffle_words<R: Rng>(text: &str, rng: &mut R) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let original = words.clone();
    for _ in 0..10 {
        words.shuffle(rng);
        if words != original {
            break;
        }
    }
    words.join(" ")
}

/// Grammatical/ungrammatical decision by thresholding LM mean log-probability.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluencyScorer {
    lm: TrigramLm,
    threshold: Option<f64>,
}

impl FluencyScorer {
    pub fn new(lm: TrigramLm) -> Self {
        FluencyScorer { lm, threshold: None }
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Picks the threshold with the best accuracy at separating `clean`
    /// from `corrupted`; returns that accuracy.
    pub fn calibrate(&mut self, clean: &[String], corrupted: &[String]) -> Result<f64> {
        if clean.is_empty() || corrupted.is_empty() {
            return Err(Error::Empty("fluency calibration set".into()));
        }
        let mut scored: Vec<(f64, bool)> = clean
            .iter()
            .map(|s| (self.lm.mean_log_prob(s), true))
            .chain(corrupted.iter().map(|s| (self.lm.mean_log_prob(s), false)))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = scored.len();
        // threshold below position i: everything from i upward is fluent
        let mut correct = clean.len();
        let mut best = (correct, scored[0].0 - 1.0);
        for i in 0..total {
            correct = if scored[i].1 { correct - 1 } else { correct + 1 };
            let thr = if i + 1 < total {
                (scored[i].0 + scored[i + 1].0) / 2.0
            } else {
                scored[i].0 + 1.0
            };
            if correct > best.0 {
                best = (correct, thr);
            }
        }
        self.threshold = Some(best.1);
        Ok(best.0 as f64 / total as f64)
    }

    pub fn lm(&self) -> &TrigramLm {
        &self.lm
    }

    /// 1 for fluent, 0 otherwise.
    pub fn fluency(&self, text: &str) -> Result<u8> {
        let thr = self
            .threshold
            .ok_or_else(|| Error::Uncalibrated("fluency scorer has no threshold".into()))?;
        if text.trim().is_empty() {
            return Err(Error::Empty("fluency input".into()));
        }
        Ok(u8::from(self.lm.mean_log_prob(text) >= thr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate_split, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities_normalize_over_vocabulary() {
        let lm = TrigramLm::train(["a b c", "a b d", "b c a"]).unwrap();
        let vocab = ["a", "b", "c", "d", EOS];
        for (u, v) in [(BOS, BOS), ("a", "b"), ("x", "y"), (BOS, "a")] {
            let known: f64 = vocab.iter().map(|w| lm.prob(u, v, w)).sum();
            let unk = lm.prob(u, v, "zzz");
            // all unknown words share one slot
            assert!((known + unk - 1.0).abs() < 1e-9, "{u} {v}: {}", known + unk);
        }
        assert!(lm.perplexity("a b c") < lm.perplexity("c b a"));
        assert!(TrigramLm::train(Vec::<&str>::new()).is_err());
    }

    #[test]
    fn calibrated_on_clean_versus_shuffled() {
        let train = synth_generate_split(1000, 5, Split::Train);
        let dev = synth_generate_split(400, 5, Split::Dev);
        let lm = TrigramLm::train(train.a.texts().chain(train.b.texts())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean: Vec<String> = dev.a.texts().chain(dev.b.texts()).map(String::from).collect();
        let (cal, held) = clean.split_at(400);
        let shuffled = |xs: &[String], rng: &mut ChaCha8Rng| -> Vec<String> { xs.iter().map(|s| shuffle_words(s, rng)).collect() };
        let mut scorer = FluencyScorer::new(lm);
        assert!(matches!(scorer.fluency("the pizza was tasty ."), Err(Error::Uncalibrated(_))));
        let cal_bad = shuffled(cal, &mut rng);
        scorer.calibrate(cal, &cal_bad).unwrap();

        let fluent = held.iter().filter(|s| scorer.fluency(s).unwrap() == 1).count();
        assert!(fluent as f64 >= 0.95 * held.len() as f64, "{fluent}/{}", held.len());
        let held_bad = shuffled(held, &mut rng);
        let disfluent = held_bad.iter().filter(|s| scorer.fluency(s).unwrap() == 0).count();
        assert!(disfluent as f64 >= 0.95 * held.len() as f64, "{disfluent}/{}", held.len());
        assert!(matches!(scorer.fluency(""), Err(Error::Empty(_))));
    }
}
