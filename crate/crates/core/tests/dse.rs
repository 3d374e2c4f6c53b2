mod common;

use std::cmp::Ordering;
use std::collections::HashSet;

use proptest::prelude::*;
use tilecast::dse::design::DesignOptions;
use tilecast::dse::search::{compare_points, enumerate_mappings, evaluate_mapping, search, SearchOptions};
use tilecast::mapping::LayerPlan;
use tilecast::perf::{dma_comm_latency, end_to_end_latency, single_aie_latency};
use tilecast::profile::{Port, Variant};
use tilecast::{default_aie_ml, default_profile, parse_model, Exec, KernelShape};

use common::random_instance;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn placement_is_sound(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let a = default_aie_ml();
        let d = &inst.design;
        d.placement.validate(&d.plans, &a).unwrap();
        let mut seen = HashSet::new();
        for (i, plan) in d.plans.iter().enumerate() {
            match *plan {
                LayerPlan::Dense { part, .. } => {
                    prop_assert!(part.is_pow2());
                    for x in 0..part.a { for y in 0..part.b { for z in 0..part.c {
                        let t = d.placement.dense_tile(i, part.c, x, y, z);
                        prop_assert!(t.row < a.rows && t.col < a.cols);
                        prop_assert!(seen.insert(t), "tile {} used twice", t);
                    }}}
                }
                LayerPlan::Aggregate { tiles, .. } => {
                    for x in 0..tiles {
                        prop_assert!(seen.insert(d.placement.aggregate_tile(i, x)));
                    }
                }
            }
        }
        prop_assert_eq!(seen.len(), d.total_tiles());
    }

    #[test]
    fn breakdown_sums_to_total(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let a = default_aie_ml();
        let e = end_to_end_latency(&inst.design, &a, &default_profile());
        let sum = e.compute_cycles() + e.comm_cycles();
        prop_assert!((sum - e.total_cycles).abs() < 1e-9);
        prop_assert_eq!(e.edges.len(), inst.design.plans.len() + 1);
    }

    #[test]
    fn dma_cost_is_affine(bits in 1u64..100_000, d in 0usize..50, k in 1u64..100) {
        let a = default_aie_ml();
        let p = default_profile();
        let base = dma_comm_latency(bits, d, &a, &p);
        let more_bits = dma_comm_latency(bits + k * a.dma_bits_per_cycle, d, &a, &p);
        let further = dma_comm_latency(bits, d + 1, &a, &p);
        prop_assert!((more_bits - base - k as f64).abs() < 1e-9);
        prop_assert!((further - base - a.dma_hop_cycles).abs() < 1e-9);
        prop_assert!((base - p.dma_init - bits.div_ceil(a.dma_bits_per_cycle) as f64 - a.dma_hop_cycles * d as f64).abs() < 1e-9);
    }

    #[test]
    fn kernel_latency_monotone(h in 1usize..5, w1 in 1usize..9, w2 in 1usize..5, br in any::<bool>()) {
        let a = default_aie_ml();
        let p = default_profile();
        let v = Variant::new(Port::Dma, Port::Dma, br);
        let k = |h: usize, w1: usize, w2: usize| KernelShape::new(16 * h, 8 * w1, 16 * w2);
        let l = single_aie_latency(k(h, w1, w2), &a, &p, v);
        prop_assert!(single_aie_latency(k(h + 1, w1, w2), &a, &p, v) >= l);
        prop_assert!(single_aie_latency(k(h, w1 + 1, w2), &a, &p, v) >= l);
        prop_assert!(single_aie_latency(k(h, w1, w2 + 1), &a, &p, v) >= l);
    }
}

#[test]
fn search_matches_exhaustive_on_small_grids() {
    let p = default_profile();
    let models = [
        "name=a\ninput=32x64\ndense 64 bias relu\ndense 32 bias\n",
        "name=b\ninput=40x16\ndense 32 bias relu\naggregate mean\ndense 32 bias relu\ndense 8\n",
        "name=c\ninput=64x32\ndense 64 relu\ndense 64 relu\ndense 16\n",
    ];
    for (text, grid) in models.iter().zip([(4, 6), (4, 4), (4, 8)]) {
        let a = default_aie_ml().with_grid(grid.0, grid.1);
        let m = parse_model(text).unwrap();
        let opts = SearchOptions { topk: 3, ..SearchOptions::default() };
        let r = search(&m, &a, &p, &opts).unwrap();
        let mut all: Vec<_> = enumerate_mappings(&m, &a)
            .unwrap()
            .filter_map(|map| evaluate_mapping(&m, &map, &a, &p, DesignOptions::default()).ok())
            .collect();
        all.sort_by(compare_points);
        let got: Vec<_> = r.ranked.iter().map(|d| d.design.mapping.clone()).collect();
        let want: Vec<_> = all.iter().take(3).map(|d| d.design.mapping.clone()).collect();
        assert_eq!(got, want, "{}", m.name);
        for w in r.ranked.windows(2) {
            assert_ne!(compare_points(&w[0], &w[1]), Ordering::Greater);
        }
    }
}

#[test]
fn parallel_and_sequential_agree() {
    let a = default_aie_ml();
    let p = default_profile();
    let m = tilecast::ModelSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/models/jsc_xl.model")).unwrap();
    let run = |exec| {
        let r = search(&m, &a, &p, &SearchOptions { topk: 5, exec, ..SearchOptions::default() }).unwrap();
        r.ranked.iter().map(|d| (d.design.mapping.clone(), d.estimate.total_cycles)).collect::<Vec<_>>()
    };
    assert_eq!(run(Exec::Parallel), run(Exec::Sequential));
}
