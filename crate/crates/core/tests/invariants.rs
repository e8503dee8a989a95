use acta_core::codec::{decode, encode, TokenDictionary};
use acta_core::corpus::{normalize_text, CertificateRecord, FieldKey};
use acta_core::imaging::{resize_to_height, PageImage};
use acta_core::metrics::{cer, edit_distance, wer};
use acta_core::model::{ModelConfig, Network};
use acta_core::transfer::{adapt_dictionary, ModelCheckpoint, TrainingMeta};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHARSET: &str = "abcdeñóáéÁÓZ 0129|";

fn text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(CHARSET.chars().collect::<Vec<_>>()),
        0..max,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn record() -> impl Strategy<Value = CertificateRecord> {
    prop::collection::vec(text(12).prop_map(|s| format!("x{s}")), FieldKey::COUNT)
        .prop_map(|v| CertificateRecord::new(v.try_into().unwrap()).unwrap())
}

fn tiny_checkpoint(chars: &str, seed: u64) -> ModelCheckpoint {
    let mut cfg = ModelConfig::desk();
    cfg.model_dim = 8;
    cfg.ffn_dim = 16;
    cfg.decoder_layers = 1;
    for c in &mut cfg.conv {
        c.channels = 8;
    }
    let dict = TokenDictionary::for_certificates(chars.chars().collect());
    let net = Network::new(&cfg, dict.len(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    ModelCheckpoint::from_network(&net, &dict, TrainingMeta::default()).unwrap()
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in text(16), b in text(16), c in text(16)) {
        let (a, b, c): (Vec<char>, Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect(), c.chars().collect());
        let ab = edit_distance(&a, &b);
        prop_assert_eq!(ab, edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(ab <= edit_distance(&a, &c) + edit_distance(&c, &b));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(ab <= a.len().max(b.len()));
    }

    #[test]
    fn normalization_never_adds_errors(r in text(20), h in text(20)) {
        let r = format!("q{r}");
        let (raw, n) = cer(&r, &h, false).unwrap();
        let (norm, n2) = cer(&r, &h, true).unwrap();
        prop_assert_eq!(n, n2);
        prop_assert!(norm <= raw);
        prop_assert_eq!(normalize_text(&normalize_text(&r)), normalize_text(&r));
        let (we, wn) = wer(&r, &h, false).unwrap();
        prop_assert!(wn >= 1);
        prop_assert!(we <= wn.max(h.split_whitespace().count()));
    }

    #[test]
    fn codec_round_trip(rec in record()) {
        let dict = TokenDictionary::for_certificates(rec.chars().collect());
        let seq = encode(&rec, &dict).unwrap();
        prop_assert!(seq.is_terminal(&dict));
        let back = decode(&seq, &dict);
        prop_assert_eq!(back.record(), Some(rec));
        prop_assert_eq!(TokenDictionary::from_text(&dict.to_text()).unwrap(), dict);
    }

    #[test]
    fn resize_keeps_aspect(w in 8usize..200, h in 8usize..200, target in 4usize..100) {
        let mut img = PageImage::blank(w, h, 300);
        for y in (0..h).step_by(3) {
            img.set_ink((y % w) as i64, y as i64);
        }
        let out = resize_to_height(&img, target);
        prop_assert_eq!(out.height, target);
        let expect = w as f64 * target as f64 / h as f64;
        prop_assert!((out.width as f64 - expect).abs() <= 1.0);
        prop_assert!(out.is_binary());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adaptation_is_idempotent(extra in text(6), seed in 0u64..1000) {
        let donor = tiny_checkpoint("abcde ", seed);
        let target = TokenDictionary::for_certificates(format!("abc{extra}").chars().collect());
        let once = adapt_dictionary(&donor, &target, 7).unwrap();
        let twice = adapt_dictionary(&once, &target, 7).unwrap();
        prop_assert_eq!(once.to_bytes(), twice.to_bytes());
        prop_assert_eq!(&once.dictionary, &target);
        let reloaded = ModelCheckpoint::from_bytes(&once.to_bytes()).unwrap();
        prop_assert_eq!(reloaded, once);
    }
}
