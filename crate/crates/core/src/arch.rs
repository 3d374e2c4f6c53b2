//! Structural description of the tile array and its interconnect.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// Bits per activation / weight element.
pub const ELEM_BITS: u64 = 8;
/// Bits per accumulator element.
pub const ACC_BITS: u64 = 32;

pub const VEK280_TOML: &str = include_str!("../data/arch/vek280.toml");

/// Per-instruction matrix-multiply block `B_M x B_K x B_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    /// Tile rows; row 0 is the bottom row, adjacent to the PLIO interface.
    pub rows: usize,
    pub cols: usize,
    /// PLIO streams available for first-layer input plus last-layer output.
    pub plio: usize,
    pub block: BlockShape,
    pub macs_per_cycle: usize,
    pub dma_bits_per_cycle: u64,
    pub shared_mem_bits_per_cycle: u64,
    pub cascade_bits_per_cycle: u64,
    pub cascade_fifo_depth: usize,
    /// DMA routing latency per unit of Manhattan distance.
    pub dma_hop_cycles: f64,
    pub freq_ghz: f64,
}

impl ArchSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_file(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let a: ArchSpec = toml::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch serializes")
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Arch(m.to_string()));
        if self.rows == 0 || self.cols == 0 || self.plio == 0 {
            return bad("rows, cols and plio must be >= 1");
        }
        if self.block.m == 0 || self.block.k == 0 || self.block.n == 0 {
            return bad("block dims must be >= 1");
        }
        if self.macs_per_cycle != self.block.m * self.block.k * self.block.n {
            return bad("macs_per_cycle must equal B_M * B_K * B_N");
        }
        if self.dma_bits_per_cycle == 0
            || self.shared_mem_bits_per_cycle == 0
            || self.cascade_bits_per_cycle == 0
        {
            return bad("bandwidths must be > 0");
        }
        if self.cascade_fifo_depth == 0 {
            return bad("cascade fifo depth must be >= 1");
        }
        if !(self.freq_ghz > 0.0) || !(self.dma_hop_cycles >= 0.0) {
            return bad("freq_ghz must be > 0 and dma_hop_cycles >= 0");
        }
        Ok(())
    }

    /// Copy of this spec with a different grid size.
    pub fn with_grid(&self, rows: usize, cols: usize) -> Self {
        ArchSpec {
            rows,
            cols,
            ..self.clone()
        }
    }

    pub fn with_plio(&self, plio: usize) -> Self {
        ArchSpec {
            plio,
            ..self.clone()
        }
    }
}

/// The bundled VEK280-like AIE-ML array.
pub fn default_aie_ml() -> ArchSpec {
    ArchSpec::from_toml(VEK280_TOML).expect("bundled arch is valid")
}

pub fn cycles_to_ns(cycles: f64, arch: &ArchSpec) -> f64 {
    cycles / arch.freq_ghz
}

pub fn ns_to_cycles(ns: f64, arch: &ArchSpec) -> f64 {
    ns * arch.freq_ghz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vek280_defaults() {
        let a = default_aie_ml();
        assert_eq!((a.rows, a.cols), (8, 38));
        assert_eq!(a.block, BlockShape { m: 4, k: 8, n: 8 });
        assert_eq!(a.macs_per_cycle, 256);
        assert_eq!(a.dma_bits_per_cycle, 32);
        assert_eq!(a.shared_mem_bits_per_cycle, 256);
        assert_eq!(a.cascade_bits_per_cycle, 512);
        assert_eq!(a.cascade_fifo_depth, 4);
        assert_eq!(a.dma_hop_cycles, 4.0);
        assert_eq!(a.freq_ghz, 1.25);
    }

    #[test]
    fn conversions() {
        let a = default_aie_ml();
        assert!((cycles_to_ns(162.0, &a) - 129.6).abs() < 1e-9);
        assert!((cycles_to_ns(548.0, &a) - 438.4).abs() < 1e-9);
        assert_eq!(cycles_to_ns(0.0, &a), 0.0);
        assert_eq!(
            cycles_to_ns(100.0, &a) + cycles_to_ns(60.0, &a),
            cycles_to_ns(160.0, &a)
        );
    }

    #[test]
    fn rejects_inconsistent_macs() {
        let mut a = default_aie_ml();
        a.macs_per_cycle = 128;
        assert!(a.validate().is_err());
        let t = default_aie_ml().to_toml();
        assert_eq!(ArchSpec::from_toml(&t).unwrap(), default_aie_ml());
    }
}
