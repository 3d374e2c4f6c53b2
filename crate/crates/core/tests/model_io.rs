mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tilecast::{parse_model, Error};

use common::random_model;

proptest! {
    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let m = random_model(&mut ChaCha8Rng::seed_from_u64(seed));
        let back = parse_model(&m.to_text()).unwrap();
        prop_assert_eq!(m, back);
    }
}

#[test]
fn errors_carry_line_numbers() {
    let e = parse_model("name=t\ninput=4x4\ndense 4\nconv 3\n").unwrap_err();
    assert!(matches!(e, Error::Syntax { line: 4, .. }), "{e}");
    let e = parse_model("name=t\ninput=4x4\ndense 4 shift=99\n").unwrap_err();
    assert!(matches!(e, Error::Syntax { line: 3, .. }), "{e}");
}

#[test]
fn broken_chain_names_both_layers() {
    let e = parse_model("name=t\ninput=4x4\ndense 8\ndense 3x5\n").unwrap_err();
    let s = e.to_string();
    assert!(s.contains("layer 0") && s.contains("layer 1"), "{s}");
}

#[test]
fn bundled_models_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/models");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        tilecast::ModelSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
