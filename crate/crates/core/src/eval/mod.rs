//! Automatic metrics and human-evaluation statistics.

mod classifier;
mod human;
mod kit;
mod lm;
mod metrics;

pub use classifier::{
    evaluate_macro_f1, macro_f1, train_on_examples, train_style_classifier, ClassifierConfig, StyleClassifier,
};
pub use human::{
    krippendorff_alpha, read_ratings, success_rate, wilcoxon_signed_rank, AlphaMetric, Dimension, Rating,
    RatingsMatrix, WilcoxonResult, WILCOXON_EXACT_MAX,
};
pub use kit::EvalKit;
pub use lm::{shuffle_words, FluencyScorer, TrigramLm};
pub use metrics::{
    aggregate, attribute_accuracy, content_preservation, delta, BagOfWordsEmbedder, EvalReport, Evaluator,
    ModelEmbedder, SentenceEmbedder, SentenceRecord, SentenceScores,
};
