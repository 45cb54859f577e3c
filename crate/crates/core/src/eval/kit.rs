use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::{train_style_classifier, ClassifierConfig, StyleClassifier};
use super::lm::{shuffle_words, FluencyScorer, TrigramLm};
use super::metrics::{BagOfWordsEmbedder, Evaluator, SentenceEmbedder};
use crate::corpus::StyleCorpus;
use crate::error::Result;

/// The trained evaluation proxies for one task: style classifier, fluency
/// scorer and a model-free CP embedder. Built from train and dev corpora
/// only, deterministically in `seed`.
pub struct EvalKit {
    pub classifier: StyleClassifier,
    pub fluency: FluencyScorer,
    pub bag: BagOfWordsEmbedder,
    /// Clean-versus-shuffled accuracy of the fluency threshold on dev.
    pub fluency_calibration: f64,
}

impl EvalKit {
    pub fn build(train: (&StyleCorpus, &StyleCorpus), dev: (&StyleCorpus, &StyleCorpus), seed: u64) -> Result<Self> {
        let classifier = train_style_classifier(
            train,
            Some(dev),
            &ClassifierConfig {
                seed,
                ..ClassifierConfig::default()
            },
        )?;
        let lm = TrigramLm::train(train.0.texts().chain(train.1.texts()))?;
        let mut fluency = FluencyScorer::new(lm);
        let clean: Vec<String> = dev.0.texts().chain(dev.1.texts()).map(String::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1u64);
        let shuffled: Vec<String> = clean.iter().map(|s| shuffle_words(s, &mut rng)).collect();
        let fluency_calibration = fluency.calibrate(&clean, &shuffled)?;
        let bag = BagOfWordsEmbedder::fit(train.0.texts().chain(train.1.texts()));
        Ok(EvalKit {
            classifier,
            fluency,
            bag,
            fluency_calibration,
        })
    }

    /// An evaluator using `embedder` for CP, or the bag-of-words embedder.
    pub fn evaluator<'a>(&'a self, embedder: Option<&'a (dyn SentenceEmbedder + Sync)>) -> Evaluator<'a> {
        Evaluator {
            classifier: &self.classifier,
            fluency: &self.fluency,
            embedder: embedder.unwrap_or(&self.bag),
        }
    }
}
