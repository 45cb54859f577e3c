//! Automatic style-transfer metrics: content preservation (CP), fluency
//! (FLU), attribute transfer accuracy (ATA), their sentence-level
//! aggregate (AGG) and the cross-task difference Δ.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::classifier::{features, StyleClassifier};
use super::lm::FluencyScorer;
use crate::corpus::StyleTag;
use crate::error::{Error, Result};
use crate::seqmodel::tensor::{dot, norm};
use crate::seqmodel::Model;
use crate::tokenizer::{BpeModel, UNK};

pub trait SentenceEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl<F> SentenceEmbedder for F
where
    F: Fn(&str) -> Vec<f64>,
{
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self(text))
    }
}

/// Cosine of the two sentence embeddings, clamped to [0, 1].
pub fn content_preservation(src: &str, pred: &str, embedder: &dyn SentenceEmbedder) -> Result<f64> {
    if src.trim().is_empty() || pred.trim().is_empty() {
        return Err(Error::Empty("content preservation input".into()));
    }
    let x = embedder.embed(src)?;
    let y = embedder.embed(pred)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d = norm(&x) * norm(&y);
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(&x, &y) / d).clamp(0.0, 1.0))
}

fn idf_table<'a>(docs: impl IntoIterator<Item = Vec<&'a str>>) -> (HashMap<&'a str, f64>, f64) {
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut n = 0usize;
    for doc in docs {
        n += 1;
        let mut seen: Vec<&str> = doc;
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1;
        }
    }
    let idf = |c: usize| ((1.0 + n as f64) / (1.0 + c as f64)).ln() + 1.0;
    let table = df.into_iter().map(|(w, c)| (w, idf(c))).collect();
    (table, idf(0))
}

/// Hashed bag of words weighted by idf; needs no trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BagOfWordsEmbedder {
    idf: HashMap<String, f64>,
    unseen_idf: f64,
}

impl BagOfWordsEmbedder {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let (idf, unseen_idf) = idf_table(corpus.into_iter().map(|s| s.split_whitespace().collect()));
        BagOfWordsEmbedder {
            idf: idf.into_iter().map(|(w, v)| (w.to_string(), v)).collect(),
            unseen_idf,
        }
    }
}

impl SentenceEmbedder for BagOfWordsEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; 1 << 16];
        for (w, slot) in text.split_whitespace().zip(features(text)) {
            v[slot] += self.idf.get(w).copied().unwrap_or(self.unseen_idf);
        }
        Ok(v)
    }
}

/// Idf-weighted sum of a trained model's input embeddings over the content
/// subwords of a sentence.
pub struct ModelEmbedder {
    bpe: BpeModel,
    rows: Vec<Vec<f64>>,
    idf: Vec<f64>,
}

impl ModelEmbedder {
    pub fn new<'a>(model: &Model, bpe: BpeModel, corpus: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        if model.config().vocab_size != bpe.vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: bpe.vocab_size(),
                got: model.config().vocab_size,
            });
        }
        let emb = &model.params().tensors[crate::seqmodel::params::EMB];
        let rows = (0..emb.rows).map(|r| emb.row(r).to_vec()).collect();
        let docs: Vec<Vec<u32>> = corpus
            .into_iter()
            .map(|s| bpe.encode(s, None).map(|t| t.ids))
            .collect::<Result<_>>()?;
        let keyed: Vec<Vec<String>> = docs.iter().map(|d| d.iter().map(|i| i.to_string()).collect()).collect();
        let (table, unseen) = idf_table(keyed.iter().map(|d| d.iter().map(String::as_str).collect()));
        let idf = (0..bpe.vocab_size())
            .map(|i| table.get(i.to_string().as_str()).copied().unwrap_or(unseen))
            .collect();
        Ok(ModelEmbedder { bpe, rows, idf })
    }
}

impl SentenceEmbedder for ModelEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let seq = self.bpe.encode(text, None)?;
        let mut v = vec![0.0; self.rows[0].len()];
        for &id in &seq.ids {
            if id == UNK || !self.bpe.is_special(id) {
                let w = self.idf[id as usize];
                for (x, e) in v.iter_mut().zip(&self.rows[id as usize]) {
                    *x += w * e;
                }
            }
        }
        Ok(v)
    }
}

/// Percentage of predictions the classifier assigns to `target`.
pub fn attribute_accuracy<S: AsRef<str>>(preds: &[S], target: &StyleTag, clf: &StyleClassifier) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("prediction list".into()));
    }
    if !clf.labels.contains(target) {
        return Err(Error::InvalidArgument(format!("classifier does not know style {target}")));
    }
    let hits = preds.iter().filter(|p| clf.predict(p.as_ref()) == target).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub cp: f64,
    pub flu: u8,
    pub ata: u8,
}

/// `100 · mean(ata · flu · cp)`.
pub fn aggregate(scores: &[SentenceScores]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("score list".into()));
    }
    let sum: f64 = scores.iter().map(|s| s.ata as f64 * s.flu as f64 * s.cp).sum();
    Ok(100.0 * sum / scores.len() as f64)
}

/// Mean model score minus mean reference score over the shared tasks.
pub fn delta(model: &BTreeMap<String, f64>, reference: &BTreeMap<String, f64>) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::Empty("task scores".into()));
    }
    if model.keys().ne(reference.keys()) {
        return Err(Error::InvalidArgument(format!(
            "task keys differ: {:?} vs {:?}",
            model.keys().collect::<Vec<_>>(),
            reference.keys().collect::<Vec<_>>()
        )));
    }
    let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len() as f64;
    Ok(mean(model) - mean(reference))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub src: String,
    pub pred: String,
    pub cp: f64,
    pub flu: u8,
    pub ata: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n: usize,
    pub cp_mean: f64,
    pub flu_rate: f64,
    pub ata: f64,
    pub agg: f64,
    pub per_sentence: Vec<SentenceRecord>,
}

/// Everything needed to score transfers into one target style.
pub struct Evaluator<'a> {
    pub classifier: &'a StyleClassifier,
    pub fluency: &'a FluencyScorer,
    pub embedder: &'a (dyn SentenceEmbedder + Sync),
}

impl Evaluator<'_> {
    pub fn score(&self, src: &str, pred: &str, target: &StyleTag) -> Result<SentenceScores> {
        // empty predictions keep the sentence in the denominators but score zero
        if pred.trim().is_empty() {
            return Ok(SentenceScores { cp: 0.0, flu: 0, ata: 0 });
        }
        Ok(SentenceScores {
            cp: content_preservation(src, pred, self.embedder)?,
            flu: self.fluency.fluency(pred)?,
            ata: u8::from(self.classifier.predict(pred) == target),
        })
    }

    pub fn evaluate<S: AsRef<str>, P: AsRef<str>>(&self, task: &str, srcs: &[S], preds: &[P], target: &StyleTag) -> Result<EvalReport> {
        if srcs.len() != preds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sources but {} predictions",
                srcs.len(),
                preds.len()
            )));
        }
        if srcs.is_empty() {
            return Err(Error::Empty("evaluation set".into()));
        }
        let mut per_sentence = Vec::with_capacity(srcs.len());
        let mut scores = Vec::with_capacity(srcs.len());
        for (s, p) in srcs.iter().zip(preds) {
            let sc = self.score(s.as_ref(), p.as_ref(), target)?;
            scores.push(sc);
            per_sentence.push(SentenceRecord {
                src: s.as_ref().to_string(),
                pred: p.as_ref().to_string(),
                cp: sc.cp,
                flu: sc.flu,
                ata: sc.ata,
            });
        }
        let n = scores.len() as f64;
        Ok(EvalReport {
            task: task.to_string(),
            n: scores.len(),
            cp_mean: scores.iter().map(|s| s.cp).sum::<f64>() / n,
            flu_rate: 100.0 * scores.iter().map(|s| s.flu as f64).sum::<f64>() / n,
            ata: 100.0 * scores.iter().map(|s| s.ata as f64).sum::<f64>() / n,
            agg: aggregate(&scores)?,
            per_sentence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tasks(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn cp_cases() {
        let bag = BagOfWordsEmbedder::fit(["the food was good", "service was slow"]);
        let s = "the food was good";
        assert!((content_preservation(s, s, &bag).unwrap() - 1.0).abs() < 1e-12);
        assert!(content_preservation("alpha beta", "gamma delta", &bag).unwrap() < 1e-9);
        let hand = |t: &str| if t == "x" { vec![1.0, 0.0] } else { vec![1.0, 1.0] };
        let v = content_preservation("x", "y", &hand).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(content_preservation("", "y", &hand).is_err());
    }

    #[test]
    fn aggregate_cases() {
        let s = |cp, flu, ata| SentenceScores { cp, flu, ata };
        let v = aggregate(&[s(0.8, 1, 1), s(0.9, 1, 0), s(0.5, 0, 1)]).unwrap();
        assert!((v - 80.0 / 3.0).abs() < 1e-12);
        assert_eq!(aggregate(&[s(1.0, 1, 1); 4]).unwrap(), 100.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn delta_cases() {
        let dar = tasks(&[("For", 14.2), ("Pol", 15.8)]);
        let ours = tasks(&[("For", 54.7), ("Pol", 35.3)]);
        assert!((delta(&dar, &ours).unwrap() - -30.0).abs() < 1e-12);
        assert_eq!(delta(&dar, &dar).unwrap(), 0.0);
        let v = delta(&tasks(&[("Civ", 39.8)]), &tasks(&[("Civ", 39.0)])).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert!(delta(&dar, &tasks(&[("For", 1.0)])).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_bounded_by_each_factor(raw in prop::collection::vec((0.0f64..=1.0, 0u8..2, 0u8..2), 1..50)) {
            let scores: Vec<SentenceScores> = raw.iter().map(|&(cp, flu, ata)| SentenceScores { cp, flu, ata }).collect();
            let n = scores.len() as f64;
            let agg = aggregate(&scores).unwrap();
            let ata = 100.0 * scores.iter().map(|s| s.ata as f64).sum::<f64>() / n;
            let flu = 100.0 * scores.iter().map(|s| s.flu as f64).sum::<f64>() / n;
            let cp = 100.0 * scores.iter().map(|s| s.cp).sum::<f64>() / n;
            prop_assert!(agg <= ata.min(flu).min(cp) + 1e-9);
            prop_assert!((0.0..=100.0).contains(&agg));
        }

        #[test]
        fn delta_antisymmetric(a in prop::collection::vec(0.0f64..100.0, 1..5), b in prop::collection::vec(0.0f64..100.0, 5)) {
            let x: BTreeMap<String, f64> = a.iter().enumerate().map(|(i, v)| (format!("t{i}"), *v)).collect();
            let y: BTreeMap<String, f64> = x.keys().zip(&b).map(|(k, v)| (k.clone(), *v)).collect();
            prop_assert!((delta(&x, &y).unwrap() + delta(&y, &x).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn cp_symmetric(a in "[a-e]{1,3}( [a-e]{1,3}){0,5}", b in "[a-e]{1,3}( [a-e]{1,3}){0,5}") {
            let bag = BagOfWordsEmbedder::fit([a.as_str(), b.as_str()]);
            let x = content_preservation(&a, &b, &bag).unwrap();
            let y = content_preservation(&b, &a, &bag).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
