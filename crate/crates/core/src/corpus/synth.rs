//! Template corpus with two swappable adjective lexicons. Every sentence has
//! a known counterpart in the other style that differs only in the
//! adjective slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Sentence, Split, StyleCorpus, StyleTag};

/// (positive, negative) adjective pairs.
pub const ADJECTIVE_PAIRS: [(&str, &str); 10] = [
    ("tasty", "bland"),
    ("friendly", "rude"),
    ("fast", "slow"),
    ("cheap", "pricey"),
    ("clean", "dirty"),
    ("fun", "boring"),
    ("fresh", "stale"),
    ("comfy", "stiff"),
    ("lovely", "ugly"),
    ("huge", "tiny"),
];

const NOUNS: [&str; 20] = [
    "pizza", "pasta", "soup", "waiter", "host", "service", "delivery", "price", "bill", "wine list",
    "room", "lobby", "music", "band", "coffee", "bread", "chair", "bed", "view", "burger",
];

const FILLERS: [&str; 6] = ["today", "tonight", "again", "this week", "on sunday", "last night"];

const TEMPLATES: [&str; 20] = [
    "the {N} was {A} {F} .",
    "i thought the {N} was {A} {F} .",
    "honestly the {N} here is {A} {F} .",
    "{F} the {N} was {A} .",
    "we found the {N} {A} {F} .",
    "my friend said the {N} was {A} {F} .",
    "overall the {N} was {A} {F} .",
    "the {N} seemed {A} to me {F} .",
    "{F} the {N} was really {A} .",
    "{F} , the {N} was {A} .",
    "our {N} was {A} {F} and we left .",
    "the {N} is always {A} here , even {F} .",
    "i found the {N} to be {A} {F} .",
    "the {N} looked {A} {F} .",
    "everyone agreed the {N} was {A} {F} .",
    "as usual the {N} was {A} {F} .",
    "we all felt the {N} was {A} {F} .",
    "{F} the {N} at this place was {A} .",
    "the {N} we had {F} was {A} .",
    "you will see the {N} is {A} {F} .",
];

/// Two style corpora plus, for every sentence, its gold counterpart in the
/// other style.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpora {
    pub a: StyleCorpus,
    pub b: StyleCorpus,
    pub gold_a: Vec<String>,
    pub gold_b: Vec<String>,
}

impl SynthCorpora {
    /// Sidecar rows `style_a \t style_b`: first each A sentence with its
    /// gold B counterpart, then each B sentence with its gold A counterpart.
    pub fn gold_tsv(&self) -> String {
        let mut out = String::new();
        for (s, g) in self.a.sentences.iter().zip(&self.gold_a) {
            out.push_str(&format!("{}\t{}\n", s.text, g));
        }
        for (s, g) in self.b.sentences.iter().zip(&self.gold_b) {
            out.push_str(&format!("{}\t{}\n", g, s.text));
        }
        out
    }

    pub fn style_a() -> StyleTag {
        StyleTag::new("pos")
    }

    pub fn style_b() -> StyleTag {
        StyleTag::new("neg")
    }
}

struct Draw {
    template: usize,
    noun: usize,
    filler: usize,
}

impl Draw {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Draw {
            template: rng.random_range(0..TEMPLATES.len()),
            noun: rng.random_range(0..NOUNS.len()),
            filler: rng.random_range(0..FILLERS.len()),
        }
    }

    /// The adjective pair is a fixed but arbitrary function of the whole
    /// frame (template, noun and filler). A counterpart is recognizable by
    /// its frame, while no single context word predicts the pair and frames
    /// are too many to memorize.
    fn adjective(&self) -> usize {
        let key = ((self.template * NOUNS.len() + self.noun) * FILLERS.len() + self.filler) as u64;
        (key.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 32) as usize % ADJECTIVE_PAIRS.len()
    }

    fn render(&self, positive: bool) -> String {
        let (p, n) = ADJECTIVE_PAIRS[self.adjective()];
        TEMPLATES[self.template]
            .replace("{N}", NOUNS[self.noun])
            .replace("{A}", if positive { p } else { n })
            .replace("{F}", FILLERS[self.filler])
    }
}

/// Share of training sentences written with the other style's adjective,
/// as scraped style corpora are never clean. Without it the style tag
/// always agrees with the adjective, so a tag-conditioned denoiser learns to
/// restyle on its own. Dev and test sides are clean.
pub const TRAIN_LABEL_NOISE: f64 = 0.05;

fn side(n: usize, rng: &mut ChaCha8Rng, positive: bool, split: Split) -> (StyleCorpus, Vec<String>) {
    let style = if positive {
        SynthCorpora::style_a()
    } else {
        SynthCorpora::style_b()
    };
    let mut sentences = Vec::with_capacity(n);
    let mut gold = Vec::with_capacity(n);
    let noise = if split == Split::Train { TRAIN_LABEL_NOISE } else { 0.0 };
    for i in 0..n {
        let d = Draw::sample(rng);
        let polarity = positive ^ rng.random_bool(noise);
        sentences.push(Sentence::new(i as u32, &d.render(polarity), style.clone()));
        gold.push(d.render(!polarity));
    }
    let corpus = StyleCorpus {
        style,
        split,
        sentences,
        preprocessing: vec!["synthetic templates".to_string()],
    };
    (corpus, gold)
}

/// Training-role synthetic corpora. Deterministic in `seed`.
pub fn synth_generate(n_per_style: usize, seed: u64) -> SynthCorpora {
    synth_generate_split(n_per_style, seed, Split::Train)
}

/// Synthetic corpora for one split role. The A and B sides are sampled
/// independently, so they are not aligned.
pub fn synth_generate_split(n_per_style: usize, seed: u64, split: Split) -> SynthCorpora {
    let salt = match split {
        Split::Train => 0x5eed_0001,
        Split::Dev => 0x5eed_0002,
        Split::Test => 0x5eed_0003,
    };
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt);
    let (a, gold_a) = side(n_per_style, &mut rng_a, true, split);
    let (b, gold_b) = side(n_per_style, &mut rng_b, false, split);
    SynthCorpora { a, b, gold_a, gold_b }
}
