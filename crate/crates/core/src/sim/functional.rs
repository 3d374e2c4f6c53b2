//! Bit-exact execution of a placed design, tile by tile.
//!
//! Every tile owns its local buffers. Data moves only along the channels of
//! the communication plan or along cascade rows, and each destination buffer
//! must be covered exactly once over its valid region.

use std::collections::HashMap;

use crate::arch::ArchSpec;
use crate::dse::design::{Boundary, Channel, Design, LinkKind, Payload, Tile, WeightSource};
use crate::error::{Error, Result};
use crate::mapping::LayerPlan;
use crate::model::ReduceKind;
use crate::quant::{div_round, epilogue, requantize};

use super::{ForwardResult, Matrix, ModelParams};

/// Buffer held by one tile, with the logical coordinates of its `(0, 0)`.
#[derive(Debug, Clone)]
struct Held {
    data: Matrix<i8>,
    row0: usize,
    col0: usize,
}

impl Held {
    fn read(&self, r: usize, c: usize) -> Result<i8> {
        let (lr, lc) = (r.wrapping_sub(self.row0), c.wrapping_sub(self.col0));
        if lr >= self.data.rows || lc >= self.data.cols {
            return Err(Error::Invariant(format!(
                "read of ({r}, {c}) outside buffer at ({}, {})",
                self.row0, self.col0
            )));
        }
        Ok(self.data.get(lr, lc))
    }
}

/// Destination buffer with a write counter per element.
struct Landing {
    held: Held,
    hits: Matrix<u8>,
    valid_rows: usize,
    valid_cols: usize,
}

impl Landing {
    fn new(rows: usize, cols: usize, row0: usize, col0: usize, valid_rows: usize, valid_cols: usize) -> Self {
        Landing {
            held: Held {
                data: Matrix::zeros(rows, cols),
                row0,
                col0,
            },
            hits: Matrix::zeros(rows, cols),
            valid_rows,
            valid_cols,
        }
    }

    fn write(&mut self, r: usize, c: usize, v: i8) -> Result<()> {
        let (lr, lc) = (r.wrapping_sub(self.held.row0), c.wrapping_sub(self.held.col0));
        if lr >= self.held.data.rows || lc >= self.held.data.cols {
            return Err(Error::Invariant(format!("write of ({r}, {c}) outside destination buffer")));
        }
        self.held.data.set(lr, lc, v);
        self.hits.set(lr, lc, self.hits.get(lr, lc).saturating_add(1));
        Ok(())
    }

    /// Valid elements written once, padding untouched.
    fn check(&self, what: &str) -> Result<()> {
        for lr in 0..self.hits.rows {
            for lc in 0..self.hits.cols {
                let valid = self.held.row0 + lr < self.valid_rows && self.held.col0 + lc < self.valid_cols;
                let h = self.hits.get(lr, lc);
                if h != valid as u8 {
                    return Err(Error::Invariant(format!(
                        "{what}: element ({}, {}) written {h} times",
                        self.held.row0 + lr,
                        self.held.col0 + lc
                    )));
                }
            }
        }
        Ok(())
    }
}

fn deliver(
    ch: &Channel,
    read: impl Fn(usize, usize) -> Result<i8>,
    landings: &mut HashMap<Tile, Landing>,
) -> Result<()> {
    for d in &ch.dests {
        let land = landings
            .get_mut(d)
            .ok_or_else(|| Error::Invariant(format!("channel targets tile {d} outside the layer")))?;
        for r in ch.region.row0..ch.region.row0 + ch.region.rows {
            for c in ch.region.col0..ch.region.col0 + ch.region.cols {
                land.write(r, c, read(r, c)?)?;
            }
        }
    }
    Ok(())
}

/// `acc += x * w` over `(B_M, B_K, B_N)` blocks with wrapping INT32 adds.
fn blocked_mac(acc: &mut Matrix<i32>, x: &Matrix<i8>, w: &Matrix<i8>, arch: &ArchSpec) {
    let (bm, bk, bn) = (arch.block.m, arch.block.k, arch.block.n);
    for i0 in (0..acc.rows).step_by(bm) {
        for j0 in (0..acc.cols).step_by(bn) {
            for k0 in (0..x.cols).step_by(bk) {
                for i in i0..(i0 + bm).min(acc.rows) {
                    for j in j0..(j0 + bn).min(acc.cols) {
                        let mut s = acc.get(i, j);
                        for k in k0..(k0 + bk).min(x.cols) {
                            s = s.wrapping_add(x.get(i, k) as i32 * w.get(k, j) as i32);
                        }
                        acc.set(i, j, s);
                    }
                }
            }
        }
    }
}

/// Runs `design` on `input`, returning the same per-layer views as the oracle.
pub fn run_functional(
    design: &Design,
    arch: &ArchSpec,
    input: &Matrix<i8>,
    params: &ModelParams,
) -> Result<ForwardResult> {
    if params.layers.len() != design.plans.len() {
        return Err(Error::Simulation("parameter count does not match the design".into()));
    }
    let input_held = Held {
        data: input.clone(),
        row0: 0,
        col0: 0,
    };
    // Output buffers of the previous layer, by producing tile.
    let mut prev: HashMap<Tile, Held> = HashMap::new();
    let mut outputs = Vec::new();
    let mut accumulators = Vec::new();

    for (i, plan) in design.plans.iter().enumerate() {
        let edge = &design.comm.edges[i];
        match *plan {
            LayerPlan::Dense {
                dims,
                part,
                kernel,
                layer,
            } => {
                let p = params.layers[i]
                    .as_ref()
                    .ok_or_else(|| Error::Simulation(format!("layer {i}: missing weights")))?;
                if (p.weights.rows, p.weights.cols) != (dims.k, dims.n) || p.bias.len() != dims.n {
                    return Err(Error::Simulation(format!("layer {i}: parameter shape mismatch")));
                }
                let tile = |a: u32, b: u32, c: u32| design.placement.dense_tile(i, part.c, a, b, c);
                let mut xs: HashMap<Tile, Landing> = HashMap::new();
                let mut ws: HashMap<Tile, Landing> = HashMap::new();
                for a in 0..part.a {
                    for b in 0..part.b {
                        for c in 0..part.c {
                            let (r0, k0, n0) = (a as usize * kernel.h1, b as usize * kernel.w1, c as usize * kernel.w2);
                            xs.insert(tile(a, b, c), Landing::new(kernel.h1, kernel.w1, r0, k0, dims.m, dims.k));
                            ws.insert(tile(a, b, c), Landing::new(kernel.w1, kernel.w2, k0, n0, dims.k, dims.n));
                        }
                    }
                }

                // activations
                match edge.link {
                    LinkKind::Dma => {
                        for ch in edge.data_channels() {
                            match ch.src {
                                None => deliver(ch, |r, c| input_held.read(r, c), &mut xs)?,
                                Some(s) => {
                                    let held = prev.get(&s).ok_or_else(|| {
                                        Error::Invariant(format!("layer {i}: channel source {s} holds no output"))
                                    })?;
                                    deliver(ch, |r, c| held.read(r, c), &mut xs)?
                                }
                            }
                        }
                    }
                    LinkKind::Cascade => {
                        // Each row receives one stream; every tile keeps its own K slice.
                        for a in 0..part.a {
                            for c in 0..part.c {
                                let r0 = a as usize * kernel.h1;
                                let stream: Held = if i == 0 {
                                    if design.options.ingress != Boundary::Cascade {
                                        return Err(Error::Invariant("cascade ingress without cascade boundary".into()));
                                    }
                                    input_held.clone()
                                } else {
                                    let src = match design.plans[i - 1] {
                                        LayerPlan::Dense { part: pp, .. } => {
                                            design.placement.dense_tile(i - 1, pp.c, a, pp.b - 1, 0)
                                        }
                                        LayerPlan::Aggregate { .. } => design.placement.aggregate_tile(i - 1, 0),
                                    };
                                    prev.get(&src).cloned().ok_or_else(|| {
                                        Error::Invariant(format!("layer {i}: cascade source {src} holds no output"))
                                    })?
                                };
                                for b in 0..part.b {
                                    let land = xs.get_mut(&tile(a, b, c)).expect("tile registered");
                                    let k0 = b as usize * kernel.w1;
                                    for r in r0..(r0 + kernel.h1).min(dims.m) {
                                        for k in k0..(k0 + kernel.w1).min(dims.k) {
                                            land.write(r, k, stream.read(r, k)?)?;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    LinkKind::SharedMem => {
                        return Err(Error::Invariant(format!("layer {i}: dense layer fed over shared memory")))
                    }
                }
                for (t, l) in &xs {
                    l.check(&format!("layer {i} input at {t}"))?;
                }

                // weights
                match design.options.weights {
                    WeightSource::Dma => {
                        for ch in edge.weight_channels() {
                            debug_assert_eq!(ch.payload, Payload::Weights);
                            deliver(ch, |r, c| Ok(p.weights.get(r, c)), &mut ws)?;
                        }
                    }
                    WeightSource::Preloaded => {
                        for l in ws.values_mut() {
                            for lr in 0..l.held.data.rows {
                                for lc in 0..l.held.data.cols {
                                    let (r, c) = (l.held.row0 + lr, l.held.col0 + lc);
                                    if r < dims.k && c < dims.n {
                                        l.write(r, c, p.weights.get(r, c))?;
                                    }
                                }
                            }
                        }
                    }
                }
                for (t, l) in &ws {
                    l.check(&format!("layer {i} weights at {t}"))?;
                }

                // compute: partial sums run east along each row, the last tile finishes
                let mut acc_full = Matrix::<i32>::zeros(dims.m, dims.n);
                let mut out_full = Matrix::<i8>::zeros(dims.m, dims.n);
                let mut next: HashMap<Tile, Held> = HashMap::new();
                for a in 0..part.a {
                    for c in 0..part.c {
                        let mut acc = Matrix::<i32>::zeros(kernel.h1, kernel.w2);
                        for b in 0..part.b {
                            let t = tile(a, b, c);
                            blocked_mac(&mut acc, &xs[&t].held.data, &ws[&t].held.data, arch);
                        }
                        let (r0, n0) = (a as usize * kernel.h1, c as usize * kernel.w2);
                        let out = Matrix::from_fn(kernel.h1, kernel.w2, |r, j| {
                            let n = n0 + j;
                            let bias = if layer.bias && n < dims.n { p.bias[n] } else { 0 };
                            epilogue(acc.get(r, j), bias, layer.relu, layer.shift)
                        });
                        for r in 0..kernel.h1 {
                            for j in 0..kernel.w2 {
                                if r0 + r < dims.m && n0 + j < dims.n {
                                    acc_full.set(r0 + r, n0 + j, acc.get(r, j));
                                    out_full.set(r0 + r, n0 + j, out.get(r, j));
                                }
                            }
                        }
                        next.insert(
                            tile(a, part.b - 1, c),
                            Held {
                                data: out,
                                row0: r0,
                                col0: n0,
                            },
                        );
                    }
                }
                accumulators.push(acc_full);
                outputs.push(out_full);
                prev = next;
            }
            LayerPlan::Aggregate {
                m,
                f,
                tiles,
                h1,
                w2,
                reduce,
                shift,
            } => {
                if edge.link != LinkKind::SharedMem {
                    return Err(Error::Invariant(format!("layer {i}: aggregation input not in shared memory")));
                }
                let mut land: HashMap<Tile, Landing> = (0..tiles)
                    .map(|a| {
                        let t = design.placement.aggregate_tile(i, a);
                        (t, Landing::new(h1, w2, a as usize * h1, 0, m, f))
                    })
                    .collect();
                for ch in edge.data_channels() {
                    let s = ch.src.ok_or_else(|| Error::Invariant("aggregation input from boundary".into()))?;
                    let held = prev
                        .get(&s)
                        .ok_or_else(|| Error::Invariant(format!("layer {i}: source {s} holds no output")))?;
                    deliver(ch, |r, c| held.read(r, c), &mut land)?;
                }
                for (t, l) in &land {
                    l.check(&format!("layer {i} input at {t}"))?;
                }
                // Top tile starts the chain; tile 0 finishes.
                let mut running = vec![0i32; w2];
                for a in (0..tiles).rev() {
                    let l = &land[&design.placement.aggregate_tile(i, a)];
                    let valid = m.saturating_sub(a as usize * h1).min(h1);
                    let part = ones_row_mac(&l.held.data, valid, arch);
                    for (r, p) in running.iter_mut().zip(part) {
                        *r = r.wrapping_add(p);
                    }
                }
                let out = Matrix::from_fn(1, w2, |_, c| {
                    let s = running[c];
                    let v = match reduce {
                        ReduceKind::Sum => s,
                        ReduceKind::Mean => div_round(s, m as i32),
                    };
                    requantize(v, shift)
                });
                accumulators.push(Matrix::from_fn(1, f, |_, c| running[c]));
                outputs.push(Matrix::from_fn(1, f, |_, c| out.get(0, c)));
                prev = HashMap::from([(
                    design.placement.aggregate_tile(i, 0),
                    Held {
                        data: out,
                        row0: 0,
                        col0: 0,
                    },
                )]);
            }
        }
    }
    Ok(ForwardResult { outputs, accumulators })
}

/// Column sums of the first `valid` rows as a `1 x rows` ones vector times the
/// buffer, in `B_K`-row blocks.
pub(crate) fn ones_row_mac(x: &Matrix<i8>, valid: usize, arch: &ArchSpec) -> Vec<i32> {
    let ones = Matrix::from_fn(1, x.rows, |_, r| (r < valid) as i8);
    let mut acc = Matrix::<i32>::zeros(1, x.cols);
    blocked_mac(&mut acc, &ones, x, arch);
    acc.data
}

/// Column sums of the first `valid` rows, one row at a time.
pub(crate) fn row_extract_sum(x: &Matrix<i8>, valid: usize) -> Vec<i32> {
    let mut s = vec![0i32; x.cols];
    for r in 0..valid {
        for (c, v) in s.iter_mut().enumerate() {
            *v = v.wrapping_add(x.get(r, c) as i32);
        }
    }
    s
}
