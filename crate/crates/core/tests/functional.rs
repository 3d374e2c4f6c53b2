mod common;

use proptest::prelude::*;
use tilecast::model::{Layer, ResolvedLayer};
use tilecast::sim::{random_input, random_params, reference_forward, run_functional, Matrix, ModelParams, ParamOptions};
use tilecast::{default_aie_ml, ModelSpec};

use common::random_instance;

/// Straightforward dense forward pass written without the library's
/// quantization helpers.
fn naive_forward(model: &ModelSpec, x: &Matrix<i8>, p: &ModelParams) -> Matrix<i8> {
    let mut cur: Vec<Vec<i64>> = (0..x.rows).map(|r| (0..x.cols).map(|c| x.get(r, c) as i64).collect()).collect();
    for (i, (l, r)) in model.layers.iter().zip(model.resolve().unwrap()).enumerate() {
        let (Layer::Dense(d), ResolvedLayer::Dense(dims)) = (l, r) else {
            panic!("dense-only model expected");
        };
        let w = &p.layers[i].as_ref().unwrap().weights;
        let b = &p.layers[i].as_ref().unwrap().bias;
        let mut next = vec![vec![0i64; dims.n]; dims.m];
        for m in 0..dims.m {
            for n in 0..dims.n {
                let mut acc: i64 = 0;
                for k in 0..dims.k {
                    acc += cur[m][k] * w.get(k, n) as i64;
                }
                let mut v = (acc as i32).wrapping_add(if d.bias { b[n] } else { 0 }) as i64;
                if d.relu {
                    v = v.max(0);
                }
                let scaled = (v as f64 / f64::powi(2.0, d.shift as i32)).round();
                next[m][n] = scaled.clamp(-128.0, 127.0) as i64;
            }
        }
        cur = next;
    }
    Matrix::from_fn(cur.len(), cur[0].len(), |r, c| cur[r][c] as i8)
}

#[test]
fn jsc_m_matches_naive_oracle() {
    let m = ModelSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/jsc_m.model")).unwrap();
    for seed in 0..4 {
        let x = random_input(&m, seed);
        let p = random_params(&m, seed, ParamOptions { bias_range: Some((-2000, 2000)) }).unwrap();
        let r = reference_forward(&m, &x, &p).unwrap();
        assert_eq!(r.output(), &naive_forward(&m, &x, &p), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn functional_equals_reference(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let arch = default_aie_ml();
        let want = reference_forward(&inst.model, &inst.input, &inst.params).unwrap();
        let got = run_functional(&inst.design, &arch, &inst.input, &inst.params).unwrap();
        // outputs and the pre-bias partial sums reaching the last tile of each row
        prop_assert_eq!(&want.outputs, &got.outputs);
        prop_assert_eq!(&want.accumulators, &got.accumulators);
    }
}
