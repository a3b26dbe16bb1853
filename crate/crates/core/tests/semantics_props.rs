mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tryon::semantics::{clean_caption, parse_caption, serialize_caption, GarmentAttributes};

#[test]
fn serialize_then_parse_is_identity() {
    assert_eq!(round_trip_failures(1000, 51), 0);
}

#[test]
fn cleaning_is_idempotent_on_corpus() {
    let corpus = caption_corpus();
    assert_eq!(corpus.len(), 50);
    let bad = clean_not_idempotent();
    assert!(bad.is_empty(), "{bad:#?}");
    // most entries are recoverable
    let ok = corpus.iter().filter(|c| clean_caption(c).and_then(|t| parse_caption(&t)).is_ok()).count();
    assert!(ok >= 30, "{ok}");
}

#[test]
fn fallback_chain_covers_scripted_failures() {
    let bad = fallback_chain_failures();
    assert!(bad.is_empty(), "{bad:#?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip(seed in any::<u64>()) {
        let a = GarmentAttributes::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let text = serialize_caption(&a);
        prop_assert_eq!(clean_caption(&text).unwrap(), text.clone());
        prop_assert_eq!(parse_caption(&text).unwrap(), a);
    }

    #[test]
    fn clean_is_idempotent(raw in "[ -~]{0,120}") {
        if let Ok(once) = clean_caption(&raw) {
            prop_assert_eq!(clean_caption(&once).unwrap(), once);
        }
    }

    #[test]
    fn decorated_captions_recover(seed in any::<u64>(), prefix in prop::sample::select(vec!["", "Caption: ", "assistant: ", "<image> "]), quote in prop::bool::ANY) {
        let a = GarmentAttributes::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let body = serialize_caption(&a);
        let raw = if quote { format!("{prefix}\"{body}\"") } else { format!("{prefix}{body}") };
        prop_assert_eq!(parse_caption(&clean_caption(&raw).unwrap()).unwrap(), a);
    }
}
