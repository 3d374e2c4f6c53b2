#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tilecast::dse::design::{Boundary, Design, DesignOptions, WeightSource};
use tilecast::dse::search::design_for_mapping;
use tilecast::mapping::{layer_candidates, Mapping, Partition};
use tilecast::model::{AggregationLayer, DenseLayer, Layer, ReduceKind, ResolvedLayer};
use tilecast::sim::{random_input, random_params, Matrix, ModelParams, ParamOptions};
use tilecast::{default_aie_ml, ArchSpec, ModelSpec};

pub struct Instance {
    pub model: ModelSpec,
    pub design: Design,
    pub params: ModelParams,
    pub input: Matrix<i8>,
}

/// Random chain of 1 to 4 dense layers with dims up to 64, sometimes with an
/// aggregation, mapped with random legal partitions and boundary options.
pub fn random_model(rng: &mut ChaCha8Rng) -> ModelSpec {
    let dense = rng.gen_range(1..=4);
    let agg_after = if rng.gen_bool(0.5) { Some(rng.gen_range(0..dense)) } else { None };
    let mut layers = Vec::new();
    for i in 0..dense {
        layers.push(Layer::Dense(DenseLayer {
            n: rng.gen_range(1..=64),
            bias: rng.gen_bool(0.7),
            relu: rng.gen_bool(0.6),
            shift: rng.gen_range(0..=12),
        }));
        if agg_after == Some(i) {
            layers.push(Layer::Aggregate(AggregationLayer {
                reduce: if rng.gen_bool(0.5) { ReduceKind::Sum } else { ReduceKind::Mean },
                shift: rng.gen_range(0..=4),
            }));
        }
    }
    ModelSpec {
        name: "random".into(),
        input_rows: rng.gen_range(1..=64),
        input_cols: rng.gen_range(1..=64),
        layers,
    }
}

pub fn random_mapping(model: &ModelSpec, arch: &ArchSpec, rng: &mut ChaCha8Rng) -> Mapping {
    let resolved = model.resolve().expect("generated models chain");
    let mut parts = Vec::new();
    for (i, r) in resolved.iter().enumerate() {
        if let ResolvedLayer::Dense(d) = r {
            let feeds_agg = matches!(resolved.get(i + 1), Some(ResolvedLayer::Aggregate { .. }));
            let c = layer_candidates(*d, arch, feeds_agg);
            let small: Vec<Partition> = c.into_iter().filter(|p| p.tiles() <= 32).collect();
            parts.push(*small.choose(rng).unwrap_or(&Partition::UNIT));
        }
    }
    Mapping::new(parts)
}

pub fn random_options(rng: &mut ChaCha8Rng) -> DesignOptions {
    let b = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.3) { Boundary::Cascade } else { Boundary::Plio };
    DesignOptions {
        ingress: b(rng),
        egress: b(rng),
        weights: if rng.gen_bool(0.3) { WeightSource::Dma } else { WeightSource::Preloaded },
    }
}

pub fn random_instance(seed: u64) -> Instance {
    let arch = default_aie_ml();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let model = random_model(&mut rng);
        let mapping = random_mapping(&model, &arch, &mut rng);
        let opts = random_options(&mut rng);
        let Ok(design) = design_for_mapping(&model, &mapping, &arch, opts) else {
            continue;
        };
        let bias_range = if rng.gen_bool(0.5) { None } else { Some((-1 << 14, 1 << 14)) };
        let params = random_params(&model, seed, ParamOptions { bias_range }).unwrap();
        let input = random_input(&model, seed);
        return Instance {
            model,
            design,
            params,
            input,
        };
    }
}
