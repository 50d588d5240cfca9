use super::*;
use crate::forge::image::synthetic_fundus;
use crate::forge::tokenizer::{encode_prompt, BOS};
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(size, size, (0..size * size * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn checksum(t: &[f64]) -> f64 {
    t.iter().enumerate().map(|(i, x)| x * (1.0 + (i % 7) as f64)).sum()
}

fn small() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        heads: 2,
        ffn_hidden: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        max_tokens: 64,
        ..ModelConfig::default()
    }
}

#[test]
fn declared_shapes_follow_config() {
    let m = Model::init(ModelConfig::default(), 1).unwrap();
    let shape = |n: &str| m.params.by_name(n).unwrap().shape().to_vec();
    assert_eq!(shape("adapter.w"), [64, 6]);
    assert_eq!(shape("signs.cls"), [6, 64]);
    assert_eq!(shape("decoder.head"), [64, 259]);
    assert_eq!(shape("vision.patch.w"), [192, 64]);
    assert!((m.params.by_name("logit_scale").unwrap().item() - libm::log(1.0 / 0.07)).abs() < 1e-15);
    assert_eq!(Model::init(ModelConfig::default(), 1).unwrap(), m);
    assert_ne!(Model::init(ModelConfig::default(), 2).unwrap().params, m.params);
}

#[test]
fn patchify_orders_patches_in_raster_order() {
    let mut img = Image::filled(4, 4, [0.0; 3]);
    img.set_pixel(2, 0, [1.0, 0.5, 0.25]);
    img.set_pixel(1, 3, [0.1, 0.2, 0.3]);
    let p = patchify(&img, 4, 2).unwrap();
    assert_eq!(p.shape(), [4, 12]);
    assert_eq!(&p.row(1)[..3], [1.0, 0.5, 0.25]);
    assert_eq!(&p.row(2)[9..12], [0.1, 0.2, 0.3]);
}

#[test]
fn encode_image_contracts() {
    let m = Model::init(small(), 3).unwrap();
    let zero = Image::filled(32, 32, [0.0; 3]);
    let a = m.encode_image(&zero).unwrap();
    assert_eq!(a, m.encode_image(&zero).unwrap());
    assert_eq!(a.patch_tokens.shape(), [16, 16]);
    // Regression value from the first correct build.
    assert!((checksum(a.patch_tokens.data()) - ZERO_IMAGE_CHECKSUM).abs() < 1e-9, "{}", checksum(a.patch_tokens.data()));

    let mut one = zero.clone();
    one.set_pixel(0, 0, [1.0, 0.0, 0.0]);
    let b = m.encode_image(&one).unwrap();
    assert_ne!(a.patch_tokens.row(5), b.patch_tokens.row(5));

    assert!(matches!(m.encode_image(&Image::filled(16, 16, [0.0; 3])), Err(crate::Error::Shape { .. })));
}

const ZERO_IMAGE_CHECKSUM: f64 = -43.50942802703816;

#[test]
fn pooled_embedding_is_unit_norm() {
    let m = Model::init(ModelConfig::default(), 7).unwrap();
    let v = m.encode_image(&random_image(32, 7)).unwrap();
    let norm = libm::sqrt(v.pooled.iter().map(|x| x * x).sum());
    assert!((norm - 1.0).abs() < 1e-9);
}

#[test]
fn text_encoder_contracts() {
    let m = Model::init(small(), 4).unwrap();
    let toks = [BOS, 72, 105];
    let a = m.encode_text(&toks).unwrap();
    assert_eq!(a, m.encode_text(&toks).unwrap());
    let cos: f64 = a.iter().zip(&a).map(|(x, y)| x * y).sum();
    assert!((cos - 1.0).abs() < 1e-12);
    assert!(m.encode_text(&[]).is_err());
    assert!(m.encode_text(&[0; 65]).is_err());
    assert!(m.encode_text(&[300]).is_err());
}

#[test]
fn sign_prediction() {
    let mut m = Model::init(small(), 5).unwrap();
    let zero = VisualEmbedding { patch_tokens: Tensor::zeros(&[16, 16]), pooled: vec![0.0; 16] };
    let p = m.predict_signs(&zero).unwrap().probabilities();
    assert!(p.iter().all(|&x| x == 0.5));

    let v = m.encode_image(&random_image(32, 1)).unwrap();
    let before = m.predict_signs(&v).unwrap().probabilities();
    let w = m.layout.adapter_w;
    let alpha = 0.3;
    for (j, x) in v.pooled.iter().enumerate() {
        m.params.tensors_mut()[w].data_mut()[j * 6 + 2] += alpha * x;
    }
    let after = m.predict_signs(&v).unwrap().probabilities();
    assert!(after[2] > before[2]);
    assert_eq!(after[0], before[0]);
}

#[test]
fn assembly_slots_and_lengths() {
    let m = Model::init(small(), 6).unwrap();
    let v = m.encode_image(&random_image(32, 2)).unwrap();
    let one = m.assemble(&v, &[0.9, 0.1, 0.1, 0.1, 0.1, 0.1], &[1, 2]).unwrap();
    assert_eq!(one.signs, [Sign::Vascular]);
    let none = m.assemble(&v, &[0.1; 6], &[1, 2]).unwrap();
    assert_eq!(none.signs, [Sign::Other]);
    let toks = vec![7; 40];
    let two = m.assemble(&v, &[0.9, 0.1, 0.1, 0.1, 0.6, 0.1], &toks).unwrap();
    assert_eq!(two.signs, [Sign::Vascular, Sign::Fhe]);
    assert_eq!(two.embeddings.shape(), [58, 16]);
    assert_eq!(two.prefix_len, 18);
    assert_eq!(two.dropped, 0);
    // Sign rows are the CLS table rows.
    let cls = m.params.get(m.layout.sign_cls);
    assert_eq!(two.embeddings.row(17), cls.row(4));
}

#[test]
fn assembly_truncates_from_the_left() {
    let m = Model::init(small(), 6).unwrap();
    let v = m.encode_image(&random_image(32, 2)).unwrap();
    let toks: Vec<TokenId> = (0..60).collect();
    let a = m.assemble(&v, &[0.0; 6], &toks).unwrap();
    assert_eq!(a.embeddings.rows(), 64);
    assert_eq!(a.dropped, 60 - (64 - 17));
    let tok = m.params.get(m.layout.decoder_tok);
    assert_eq!(a.embeddings.row(17), tok.row(a.dropped));
}

#[test]
fn pooled_projector_mode() {
    let m = Model::init(ModelConfig { projector: ProjectorMode::Pooled, ..small() }, 6).unwrap();
    let v = m.encode_image(&random_image(32, 2)).unwrap();
    let a = m.assemble(&v, &[0.0; 6], &[1, 2, 3]).unwrap();
    assert_eq!(a.prefix_len, 2);
    assert_eq!(a.embeddings.rows(), 5);
}

#[test]
fn decoder_is_causal() {
    let m = Model::init(small(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let emb = Tensor::matrix(10, 16, (0..160).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let base = m.lm_forward(&emb).unwrap();
    assert_eq!(base.shape(), [10, 259]);
    let mut changed = emb.clone();
    changed.data_mut()[9 * 16 + 3] += 1.0;
    let out = m.lm_forward(&changed).unwrap();
    for r in 0..9 {
        assert_eq!(base.row(r), out.row(r));
    }
    assert_ne!(base.row(9), out.row(9));

    let single = m.lm_forward(&Tensor::matrix(1, 16, emb.row(0).to_vec()).unwrap()).unwrap();
    let mut probs = vec![0.0; 259];
    crate::autodiff::kernels::softmax_into(single.row(0), &mut probs);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Regression value from the first correct build.
    assert!((checksum(base.data()) - LOGIT_CHECKSUM).abs() < 1e-9, "{}", checksum(base.data()));
}

const LOGIT_CHECKSUM: f64 = 24.204852445506248;

#[test]
fn generation_contracts() {
    let m = Model::init(small(), 9).unwrap();
    let img = random_image(32, 3);
    let prompt = encode_prompt("Hi");
    let a = m.generate(&img, &prompt, 12).unwrap();
    assert_eq!(a, m.generate(&img, &prompt, 12).unwrap());
    assert!(a.tokens.len() <= prompt.len() + 12);
    assert_eq!(&a.tokens[..prompt.len()], &prompt[..]);
    assert!(m.generate(&img, &prompt, 0).is_err());

    let (v, s) = m.perceive(&img).unwrap();
    let prefix = m.assemble(&v, &s.probabilities(), &[]).unwrap().prefix_len;
    let long = vec![65; 64 - prefix];
    assert!(m.generate(&img, &long, 5).is_err());
    let near = vec![65; 64 - prefix - 3];
    let g = m.generate(&img, &near, 50).unwrap();
    assert!(g.tokens.len() <= 64 - prefix);
    assert!(g.new_tokens().len() <= 3);
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn answer_log_likelihood_matches_logits() {
    let m = Model::init(small(), 10).unwrap();
    let img = random_image(32, 4);
    let prompt = encode_prompt("Q");
    let ll = m.answer_log_likelihood(&img, &prompt, &[65, 66]).unwrap();
    assert!(ll < 0.0 && ll.is_finite());
    let ll_longer = m.answer_log_likelihood(&img, &prompt, &[65, 66, 67]).unwrap();
    assert_ne!(ll, ll_longer);
}

#[test]
fn fundus_images_encode() {
    let m = Model::init(small(), 11).unwrap();
    let img = synthetic_fundus(32, &crate::forge::signs::SignVector::from_signs([Sign::Fhe]), 1);
    let (v, s) = m.perceive(&img).unwrap();
    assert_eq!(v.pooled.len(), 16);
    assert!(s.probabilities().iter().all(|p| (0.0..=1.0).contains(p)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn text_embeddings_are_unit_norm(toks in proptest::collection::vec(0u32..259, 1..20), seed in 0u64..4) {
        let m = Model::init(small(), seed).unwrap();
        let e = m.encode_text(&toks).unwrap();
        let norm = libm::sqrt(e.iter().map(|x| x * x).sum());
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_slot_count(probs in proptest::array::uniform6(0.0f64..1.0), threshold in 0.0f64..1.0) {
        let slots = selected_signs(&probs, threshold).len();
        let above = probs.iter().filter(|&&p| p >= threshold).count();
        prop_assert_eq!(slots, above.max(1));
    }

    #[test]
    fn causality_at_every_position(pos in 0usize..6, delta in -2.0f64..2.0) {
        prop_assume!(delta != 0.0);
        let m = Model::init(ModelConfig::tiny(), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let emb = Tensor::matrix(6, 8, (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut changed = emb.clone();
        changed.data_mut()[pos * 8] += delta;
        let (a, b) = (m.lm_forward(&emb).unwrap(), m.lm_forward(&changed).unwrap());
        for r in 0..pos {
            prop_assert_eq!(a.row(r), b.row(r));
        }
    }
}
