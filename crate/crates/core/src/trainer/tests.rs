use std::collections::HashSet;
use std::sync::OnceLock;

use super::*;
use crate::corpus::{dedup, synth_generate_split, Split, SynthCorpora};
use crate::eval::EvalKit;
use crate::seqmodel::ModelConfig;
use crate::tokenizer::train_bpe;

const MAX_LEN: usize = 40;

struct Fixture {
    bpe: BpeModel,
    a: EncodedCorpus,
    b: EncodedCorpus,
    dev_a: EncodedCorpus,
    dev_b: EncodedCorpus,
    kit: EvalKit,
    init: Model,
    dae: Model,
    dae_log: Vec<DaeRecord>,
    dae_cfg: DaeConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tr = synth_generate_split(300, 1, Split::Train);
        let dv = synth_generate_split(100, 1, Split::Dev);
        let (ca, cb) = (dedup(&tr.a), dedup(&tr.b));
        let bpe = train_bpe(&[&ca, &cb], 300).unwrap();
        let enc = |c| EncodedCorpus::new(c, &bpe, MAX_LEN).unwrap();
        let (a, b, dev_a, dev_b) = (enc(&ca), enc(&cb), enc(&dv.a), enc(&dv.b));
        let kit = EvalKit::build((&ca, &cb), (&dv.a, &dv.b), 1).unwrap();
        let init = Model::init(small_config(&bpe, 1)).unwrap();
        let dae_cfg = DaeConfig {
            steps: 1000,
            batch_size: 20,
            boundaries: bpe.punctuation_ids(),
            log_every: 50,
            ..DaeConfig::default()
        };
        let (dae, dae_log) = pretrain_dae(init.clone(), &a, &b, Some((&dev_a, &dev_b)), &dae_cfg).unwrap();
        Fixture {
            bpe,
            a,
            b,
            dev_a,
            dev_b,
            kit,
            init,
            dae,
            dae_log,
            dae_cfg,
        }
    })
}

fn small_config(bpe: &BpeModel, seed: u64) -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        hidden_dim: 32,
        max_len: MAX_LEN,
        seed,
        ..ModelConfig::new(bpe.vocab_size(), bpe.num_specials())
    }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 20,
        max_len: MAX_LEN,
        checkpoint_every: 10,
        max_steps: 30,
        dev_limit: 40,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_dae_steps_is_identity() {
    let f = fixture();
    let cfg = DaeConfig {
        steps: 0,
        ..DaeConfig::default()
    };
    let (m, log) = pretrain_dae(f.init.clone(), &f.a, &f.b, None, &cfg).unwrap();
    assert_eq!(m.params(), f.init.params());
    assert!(log.is_empty());
}

#[test]
fn dae_needs_both_corpora() {
    let f = fixture();
    let mut empty = f.b.clone();
    empty.ids.clear();
    empty.seqs.clear();
    empty.texts.clear();
    let cfg = DaeConfig {
        steps: 1,
        ..DaeConfig::default()
    };
    assert!(pretrain_dae(f.init.clone(), &f.a, &empty, None, &cfg).is_err());
}

#[test]
fn dae_dev_loss_trends_down() {
    let f = fixture();
    let dev: Vec<f64> = f.dae_log.iter().map(|r| r.dev_loss.unwrap()).collect();
    assert_eq!(dev.len(), 20);
    // moving average over 3 checkpoints, allowed to wobble by 2%
    let smooth: Vec<f64> = dev.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0] * 1.02, "dev loss rose: {dev:?}");
    }
    assert!(dev[dev.len() - 1] < 0.5 * dev[0], "{dev:?}");
    let steps: Vec<usize> = f.dae_log.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn dae_reconstructs_clean_dev_sentences() {
    let f = fixture();
    let clean_a = clean_reconstruction_accuracy(&f.dae, &f.dev_a, 100).unwrap();
    let clean_b = clean_reconstruction_accuracy(&f.dae, &f.dev_b, 100).unwrap();
    assert!(clean_a >= 0.9 && clean_b >= 0.9, "{clean_a} {clean_b}");
    let noised = reconstruction_accuracy(&f.dae, &f.dev_a, &f.dae_cfg, 100).unwrap();
    assert!((0.0..=1.0).contains(&noised));
    // masked slots cannot always be recovered, but most of the sentence is
    assert!(noised > 0.6, "{noised}");
    let untrained = clean_reconstruction_accuracy(&f.init, &f.dev_a, 100).unwrap();
    assert!(untrained < 0.5, "{untrained}");
}

#[test]
fn bt_of_nothing_is_nothing() {
    let f = fixture();
    let out = bt_generate(&f.dae, &[], f.a.tag_id, f.b.tag_id, Direction::BToA).unwrap();
    assert!(out.is_empty());
}

#[test]
fn bt_pairs_map_one_to_one_onto_inputs() {
    let f = fixture();
    let rejected = &f.a.seqs[..30];
    let pairs = bt_generate(&f.dae, rejected, f.a.tag_id, f.b.tag_id, Direction::BToA).unwrap();
    assert_eq!(pairs.len(), rejected.len());
    for (p, s) in pairs.iter().zip(rejected) {
        assert_eq!(p.tgt.body(), s.ids.as_slice());
        assert_eq!(p.src.prefix(), Some(f.a.tag_id));
        assert_eq!(p.tgt.prefix(), Some(f.a.tag_id));
        assert_eq!(p.origin, Origin::BackTranslated);
        assert_eq!(p.direction, Direction::BToA);
    }
    let genuine: HashSet<&[u32]> = f.a.seqs.iter().map(|s| s.ids.as_slice()).collect();
    for p in &pairs {
        audit_pair(p, &genuine).unwrap();
    }
}

#[test]
fn bt_with_copy_model_changes_only_the_prefix() {
    let f = fixture();
    let mut m = Model::init(small_config(&f.bpe, 9)).unwrap();
    // identity under either tag
    let items: Vec<(&[u32], u32)> = f.a.seqs[..200]
        .iter()
        .map(|s| s.ids.as_slice())
        .flat_map(|s| [(s, f.a.tag_id), (s, f.b.tag_id)])
        .collect();
    for step in 0..250 {
        let batch: Vec<TrainingPair> = (0..20)
            .map(|k| {
                let (s, t) = items[(step * 20 + k) % items.len()];
                TrainingPair::copy(s, t)
            })
            .collect();
        m.train_step(&batch).unwrap();
    }
    let rejected = &f.a.seqs[..40];
    let direct = m.decode_all(rejected, f.b.tag_id, MAX_LEN - 2).unwrap();
    let copied: Vec<usize> = (0..rejected.len()).filter(|&i| direct[i].ids == rejected[i].ids).collect();
    assert!(copied.len() >= 36, "copy oracle only copies {} of 40", copied.len());
    let pairs = bt_generate(&m, rejected, f.a.tag_id, f.b.tag_id, Direction::BToA).unwrap();
    for &i in &copied {
        assert_eq!(pairs[i].src.body(), pairs[i].tgt.body());
        assert_eq!(pairs[i].src.ids[0], f.a.tag_id);
        assert_ne!(pairs[i].src.ids[0], f.b.tag_id);
    }
}

#[test]
fn audit_catches_bad_pairs() {
    let f = fixture();
    let genuine: HashSet<&[u32]> = f.a.seqs.iter().map(|s| s.ids.as_slice()).collect();
    let s = &f.a.seqs[0];
    let ta = f.a.tag_id;
    let tb = f.b.tag_id;
    let pair = |src: TokenSequence, tgt: TokenSequence, origin| TrainingPair {
        src,
        tgt,
        direction: Direction::BToA,
        origin,
    };
    let ok = pair(f.b.seqs[0].with_prefix(ta), s.with_prefix(ta), Origin::Extracted);
    assert!(audit_pair(&ok, &genuine).is_ok());
    let wrong_tag = pair(f.b.seqs[0].with_prefix(tb), s.with_prefix(ta), Origin::Extracted);
    assert!(audit_pair(&wrong_tag, &genuine).is_err());
    let no_prefix = pair(f.b.seqs[0].clone(), s.with_prefix(ta), Origin::BackTranslated);
    assert!(audit_pair(&no_prefix, &genuine).is_err());
    // a model-generated target is never allowed
    let made_up = TokenSequence::new(vec![ta, s.ids[0], s.ids[0], s.ids[0]], true);
    let fake = pair(s.with_prefix(ta), made_up.clone(), Origin::BackTranslated);
    assert!(audit_pair(&fake, &genuine).is_err());

    let mut masked = s.with_prefix(ta);
    masked.ids[1] = MASK;
    assert!(audit_pair(&pair(masked, s.with_prefix(ta), Origin::Denoising), &genuine).is_ok());
    let mut extra = s.with_prefix(ta);
    extra.ids.push(f.b.seqs[0].ids[0]);
    extra.ids.push(f.b.seqs[0].ids[0]);
    extra.ids.push(f.b.seqs[0].ids[0]);
    let not_noise = pair(extra, s.with_prefix(ta), Origin::Denoising);
    assert!(audit_pair(&not_noise, &genuine).is_err());
}

#[test]
fn encoded_corpus_drops_what_does_not_fit() {
    let f = fixture();
    let long = "the pizza was tasty ".repeat(20);
    let c = crate::corpus::StyleCorpus::from_lines(SynthCorpora::style_a(), Split::Train, &["the bed was huge today .", long.as_str()]);
    let e = EncodedCorpus::new(&c, &f.bpe, MAX_LEN).unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e.position(c.sentences[0].id), Some(0));
    assert_eq!(e.position(c.sentences[1].id), None);
    let unknown = crate::corpus::StyleCorpus::from_lines(crate::corpus::StyleTag::new("other"), Split::Train, &["x"]);
    assert!(EncodedCorpus::new(&unknown, &f.bpe, MAX_LEN).is_err());
}

#[test]
fn transfer_keeps_count_and_order() {
    let f = fixture();
    let none: [&str; 0] = [];
    assert!(transfer(&f.dae, &f.bpe, &none, &SynthCorpora::style_b()).unwrap().is_empty());
    let long = "the soup was bland again . ".repeat(30);
    let inputs = ["the pizza was tasty today .", "", long.as_str(), "we found the bed comfy tonight ."];
    let out = transfer(&f.dae, &f.bpe, &inputs, &SynthCorpora::style_a()).unwrap();
    assert_eq!(out.len(), inputs.len());
    let direct = f.dae.decode(&f.bpe.encode(inputs[0], None).unwrap(), f.a.tag_id, MAX_LEN - 2).unwrap();
    assert_eq!(out[0], f.bpe.decode(&direct).unwrap());
    assert!(transfer(&f.dae, &f.bpe, &inputs, &crate::corpus::StyleTag::new("nope")).is_err());
}

#[test]
fn joint_training_needs_a_supervision_source() {
    let f = fixture();
    let ev = f.kit.evaluator(None);
    let ctx = TrainContext {
        bpe: &f.bpe,
        evaluator: &ev,
        dev_a: &f.dev_a,
        dev_b: &f.dev_b,
    };
    let cfg = TrainConfig {
        use_spe: false,
        use_bt: false,
        ..small_train(1)
    };
    assert!(cfg.validate().is_err());
    assert!(train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &cfg).is_err());
    assert!(train_3st(f.dae.clone(), &f.a, &f.a, &ctx, &small_train(1)).is_err());
    let bad_len = TrainConfig {
        max_len: 100,
        ..small_train(1)
    };
    assert!(train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &bad_len).is_err());
}

fn dev_ata(f: &Fixture, m: &Model, limit: usize) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for (from, to) in [(&f.dev_a, &f.dev_b), (&f.dev_b, &f.dev_a)] {
        let n = from.len().min(limit);
        let texts: Vec<&str> = from.texts[..n].iter().map(String::as_str).collect();
        for t in transfer(m, &f.bpe, &texts, &to.tag).unwrap() {
            hits += usize::from(f.kit.classifier.predict(&t) == &to.tag);
        }
        total += n;
    }
    100.0 * hits as f64 / total as f64
}

#[test]
fn joint_training_is_deterministic_and_keeps_the_best_snapshot() {
    let f = fixture();
    let ev = f.kit.evaluator(None);
    let ctx = TrainContext {
        bpe: &f.bpe,
        evaluator: &ev,
        dev_a: &f.dev_a,
        dev_b: &f.dev_b,
    };
    let cfg = small_train(3);
    let (m1, log1) = train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &cfg).unwrap();
    let (m2, log2) = train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &cfg).unwrap();
    assert_eq!(log1, log2);
    assert_eq!(log1.to_jsonl().unwrap(), log2.to_jsonl().unwrap());
    assert_eq!(m1.params(), m2.params());

    let steps: Vec<usize> = log1.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![10, 20, 30]);
    for r in &log1.records {
        assert!((0.0..=100.0).contains(&r.dev_ata));
        for x in [r.bt_flu, r.bt_ata].into_iter().flatten() {
            assert!((0.0..=100.0).contains(&x));
        }
        if let Some(cp) = r.bt_cp {
            assert!((0.0..=1.0).contains(&cp));
        }
    }
    let max = log1.records.iter().map(|r| r.dev_ata).fold(f64::MIN, f64::max);
    assert_eq!(log1.best_dev_ata, max);
    let first_best = log1.records.iter().find(|r| r.dev_ata == max).unwrap().step;
    assert_eq!(log1.best_step, first_best);
    assert_eq!(dev_ata(f, &m1, cfg.dev_limit), max);

    let other = train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &small_train(4)).unwrap().1;
    assert_ne!(other, log1);
}

#[test]
fn ablations_run_and_log() {
    let f = fixture();
    let ev = f.kit.evaluator(None);
    let ctx = TrainContext {
        bpe: &f.bpe,
        evaluator: &ev,
        dev_a: &f.dev_a,
        dev_b: &f.dev_b,
    };
    let no_spe = TrainConfig {
        use_spe: false,
        ..small_train(5)
    };
    let (_, log) = train_3st(f.dae.clone(), &f.a, &f.b, &ctx, &no_spe).unwrap();
    // nothing is mined, so everything is rejected and back-translated
    assert!(log.records.iter().all(|r| r.accepted_count == 0 && r.bt_ata.is_some()));

    let no_bt = TrainConfig {
        use_bt: false,
        ..small_train(5)
    };
    let (_, log) = train_3st(f.init.clone(), &f.a, &f.b, &ctx, &no_bt).unwrap();
    assert!(log.records.iter().all(|r| r.bt_ata.is_none()));
    assert!(!log.records.is_empty());
}

#[test]
fn train_log_is_json_lines() {
    let log = TrainLog {
        records: vec![TrainRecord {
            step: 500,
            dev_ata: 50.0,
            bt_flu: Some(90.0),
            bt_cp: None,
            bt_ata: Some(12.5),
            accepted_count: 3,
            rejected_count: 97,
        }],
        best_step: 500,
        best_dev_ata: 50.0,
    };
    let text = log.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["step", "dev_ata", "bt_flu", "bt_cp", "bt_ata", "accepted_count", "rejected_count"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert!(v["bt_cp"].is_null());
}
