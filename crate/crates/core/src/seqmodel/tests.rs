use super::*;
use crate::trainer::TrainingPair;
use rand::Rng;

const TAG_A: u32 = 5;
const TAG_B: u32 = 6;

fn tiny_cfg(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 14,
        num_specials: 7,
        embed_dim: 4,
        hidden_dim: 3,
        max_len: 12,
        learning_rate: 0.01,
        clip_norm: 5.0,
        init_scale: 0.5,
        seed,
    }
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::new(ids.to_vec(), false)
}

#[test]
fn init_is_deterministic_and_seeded() {
    let a = Model::init(tiny_cfg(1)).unwrap();
    let b = Model::init(tiny_cfg(1)).unwrap();
    let c = Model::init(tiny_cfg(2)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let bad = ModelConfig {
        embed_dim: 0,
        ..tiny_cfg(1)
    };
    assert!(Model::init(bad).is_err());
}

#[test]
fn w_of_single_token_is_its_embedding_row() {
    let m = Model::init(tiny_cfg(3)).unwrap();
    let r = m.represent(&seq(&[9])).unwrap();
    assert_eq!(r.w, m.params().tensors[params::EMB].row(9));
    // tags are excluded from both sums
    let tagged = m.represent(&TokenSequence::new(vec![TAG_A, 9], true)).unwrap();
    assert_eq!(tagged.w, r.w);
}

#[test]
fn w_is_additive_and_order_free() {
    let m = Model::init(tiny_cfg(4)).unwrap();
    let full = m.represent(&seq(&[8, 10, 12])).unwrap();
    let perm = m.represent(&seq(&[12, 8, 10])).unwrap();
    let mut sum = vec![0.0; 4];
    for t in [8, 10, 12] {
        add_into(&mut sum, &m.represent(&seq(&[t])).unwrap().w);
    }
    for i in 0..4 {
        assert!((full.w[i] - sum[i]).abs() < 1e-12);
        assert!((full.w[i] - perm.w[i]).abs() < 1e-12);
    }
    assert_eq!(full, m.represent(&seq(&[8, 10, 12])).unwrap());
    assert!(full.e.iter().all(|x| x.is_finite()));
    assert_eq!(full.e.len(), 6);
}

#[test]
fn over_length_and_bad_ids_rejected() {
    let mut m = Model::init(tiny_cfg(5)).unwrap();
    assert!(matches!(m.represent(&seq(&[8; 12])), Err(Error::TooLong { .. })));
    assert!(matches!(m.represent(&seq(&[99])), Err(Error::IdOutOfRange { .. })));
    assert!(m.train_step(&[]).is_err());
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainingPair> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..5);
            let src: Vec<u32> = (0..len).map(|_| rng.random_range(7..14)).collect();
            let tlen = rng.random_range(1..5);
            let tgt: Vec<u32> = (0..tlen).map(|_| rng.random_range(7..14)).collect();
            let mut p = TrainingPair::copy(&tgt, TAG_B);
            p.src = TokenSequence::new([vec![TAG_B], src].concat(), true);
            p
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut model = Model::init(tiny_cfg(7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let batch = random_batch(&mut rng, 4);
    let (_, grads) = model.loss_and_grad(&batch).unwrap();
    // fourth-order central stencil; keeps truncation and roundoff well
    // below the tolerance at this step size
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for ti in 0..grads.tensors.len() {
        for k in 0..grads.tensors[ti].data.len() {
            let orig = model.params().tensors[ti].data[k];
            let mut at = |delta: f64| {
                model.params_mut().tensors[ti].data[k] = orig + delta;
                model.loss(&batch).unwrap()
            };
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            model.params_mut().tensors[ti].data[k] = orig;
            let analytic = grads.tensors[ti].data[k];
            let denom = analytic.abs().max(numeric.abs());
            // exactly-zero gradients (unused embedding rows) compare absolutely
            if denom < 1e-12 {
                assert!((analytic - numeric).abs() < 1e-12);
                continue;
            }
            let rel = (analytic - numeric).abs() / denom;
            assert!(rel < 1e-4, "{} [{k}]: analytic {analytic} numeric {numeric}", params::NAMES[ti]);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 300);
    assert!(worst < 1e-4);
}

#[test]
fn train_step_keeps_parameters_finite_and_lowers_loss() {
    let mut model = Model::init(tiny_cfg(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random_batch(&mut rng, 6);
    let first = model.loss(&batch).unwrap();
    for _ in 0..60 {
        let l = model.train_step(&batch).unwrap();
        assert!(l >= 0.0);
        assert!(model.params().all_finite());
    }
    assert!(model.loss(&batch).unwrap() < first);
}

#[test]
fn copy_task_oracle() {
    let cfg = ModelConfig {
        vocab_size: 20,
        num_specials: 7,
        embed_dim: 16,
        hidden_dim: 24,
        max_len: 12,
        learning_rate: 0.01,
        clip_norm: 5.0,
        init_scale: 0.1,
        seed: 11,
    };
    let mut model = Model::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.random_range(2..6);
        (0..len).map(|_| rng.random_range(7..20)).collect()
    };
    for _ in 0..600 {
        let batch: Vec<TrainingPair> = (0..20).map(|_| TrainingPair::copy(&sample(&mut rng), TAG_A)).collect();
        model.train_step(&batch).unwrap();
    }
    let mut exact = 0;
    let trials = 50;
    for _ in 0..trials {
        let s = sample(&mut rng);
        let out = model.decode(&seq(&s), TAG_A, 10).unwrap();
        assert!(out.len() <= 10);
        assert_eq!(out, model.decode(&seq(&s), TAG_A, 10).unwrap());
        exact += usize::from(out.ids == s);
    }
    assert!(exact >= 45, "copied {exact}/{trials}");
}

#[test]
fn decode_respects_length_limit_and_skips_specials() {
    let m = Model::init(tiny_cfg(9)).unwrap();
    for limit in [0, 1, 3, 8] {
        let out = m.decode(&seq(&[8, 9]), TAG_B, limit).unwrap();
        assert!(out.len() <= limit);
        assert!(out.ids.iter().all(|&i| i == UNK || i >= 7));
    }
}

#[test]
fn checkpoint_roundtrip_and_rejections() {
    let m = Model::init(tiny_cfg(10)).unwrap();
    let bytes = m.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.config(), m.config());

    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    assert!(Model::from_bytes(&wrong_version).is_err());
    assert!(Model::from_bytes(&bytes[..bytes.len() - 8]).is_err());

    // header claims a larger vocabulary than the stored tensors
    let text = String::from_utf8_lossy(&bytes).to_string();
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header = &text[20..20 + hlen];
    let forged = header.replacen("\"vocab_size\":14", "\"vocab_size\":15", 1);
    let mut tampered = bytes[..12].to_vec();
    tampered.extend_from_slice(&(forged.len() as u64).to_le_bytes());
    tampered.extend_from_slice(forged.as_bytes());
    tampered.extend_from_slice(&bytes[20 + hlen..]);
    assert!(Model::from_bytes(&tampered).is_err());
}
