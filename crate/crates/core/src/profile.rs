//! Fitted overhead constants consumed by the latency model.
//!
//! Kept apart from [`ArchSpec`](crate::arch::ArchSpec) so calibration can
//! rewrite it without touching structural parameters. Every constant carries a
//! provenance string in the file's `[provenance]` table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

pub const VEK280_PROFILE_TOML: &str = include_str!("../data/profiles/vek280.toml");

/// Where a kernel reads its activation input from or writes its output to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Dma,
    Cascade,
    /// Shared local memory between neighbouring tiles.
    Local,
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Port::Dma => "dma",
            Port::Cascade => "cascade",
            Port::Local => "local",
        })
    }
}

impl std::str::FromStr for Port {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dma" => Ok(Port::Dma),
            "cascade" => Ok(Port::Cascade),
            "local" => Ok(Port::Local),
            other => Err(Error::Profile(format!("unknown port '{other}'"))),
        }
    }
}

/// Communication variant of a kernel, the key of the non-pipelined overhead table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub input: Port,
    pub output: Port,
    pub bias_relu: bool,
}

impl Variant {
    pub const fn new(input: Port, output: Port, bias_relu: bool) -> Self {
        Variant {
            input,
            output,
            bias_relu,
        }
    }

    /// Every variant a dense kernel can be mapped with.
    pub fn all_dense() -> Vec<Variant> {
        let mut v = Vec::new();
        for input in [Port::Dma, Port::Cascade] {
            for output in [Port::Dma, Port::Cascade, Port::Local] {
                for bias_relu in [false, true] {
                    v.push(Variant::new(input, output, bias_relu));
                }
            }
        }
        v
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.input, self.output)?;
        if self.bias_relu {
            f.write_str("+br")?;
        }
        Ok(())
    }
}

/// How the payload of a multi-channel DMA edge enters the transfer term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DmaPayload {
    /// Largest single channel; channels run concurrently.
    #[default]
    PerChannelMax,
    /// All channel payloads serialized.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelOverhead {
    #[serde(flatten)]
    pub variant: Variant,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    /// j-loop epilogue.
    pub epilogue: f64,
    /// j-loop epilogue including bias add and ReLU.
    pub epilogue_bias_relu: f64,
    /// Extra per-j-loop latency of tiles downstream in a partial-sum cascade chain.
    pub cascade_interference: f64,
    /// DMA initialization and lock synchronization.
    pub dma_init: f64,
    /// Constant gap between producer and consumer compute across a cascade edge.
    pub cascade_gap: f64,
    /// Per-tile cost of the chained aggregation hand-off.
    pub aggregation_hop: f64,
    /// Cost of one extract/add/insert row operation in the row-extract aggregation.
    pub aggregation_row_op: f64,
    #[serde(default)]
    pub dma_payload: DmaPayload,
    pub kernel_overhead: Vec<KernelOverhead>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl CalibrationProfile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_file(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: CalibrationProfile = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// All constants zero: the ideal, overhead-free machine.
    pub fn zero() -> Self {
        CalibrationProfile {
            epilogue: 0.0,
            epilogue_bias_relu: 0.0,
            cascade_interference: 0.0,
            dma_init: 0.0,
            cascade_gap: 0.0,
            aggregation_hop: 0.0,
            aggregation_row_op: 0.0,
            dma_payload: DmaPayload::PerChannelMax,
            kernel_overhead: Variant::all_dense()
                .into_iter()
                .map(|variant| KernelOverhead {
                    variant,
                    cycles: 0.0,
                })
                .collect(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("epilogue", self.epilogue),
            ("epilogue_bias_relu", self.epilogue_bias_relu),
            ("cascade_interference", self.cascade_interference),
            ("dma_init", self.dma_init),
            ("cascade_gap", self.cascade_gap),
            ("aggregation_hop", self.aggregation_hop),
            ("aggregation_row_op", self.aggregation_row_op),
        ];
        for (name, v) in scalars {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Profile(format!("{name} must be a finite value >= 0")));
            }
        }
        for ko in &self.kernel_overhead {
            if !(ko.cycles >= 0.0) || !ko.cycles.is_finite() {
                return Err(Error::Profile(format!(
                    "kernel overhead for {} must be >= 0",
                    ko.variant
                )));
            }
        }
        for v in Variant::all_dense() {
            if self.lookup(v).is_none() {
                return Err(Error::Profile(format!("missing kernel overhead for {v}")));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, v: Variant) -> Option<f64> {
        self.kernel_overhead
            .iter()
            .find(|k| k.variant == v)
            .map(|k| k.cycles)
    }

    /// Non-pipelined kernel overhead for a variant; the profile is validated on load.
    pub fn kernel_overhead(&self, v: Variant) -> f64 {
        self.lookup(v)
            .unwrap_or_else(|| panic!("profile has no kernel overhead for {v}"))
    }

    pub fn set_kernel_overhead(&mut self, v: Variant, cycles: f64) {
        match self.kernel_overhead.iter_mut().find(|k| k.variant == v) {
            Some(k) => k.cycles = cycles,
            None => self.kernel_overhead.push(KernelOverhead { variant: v, cycles }),
        }
    }

    pub fn epilogue_for(&self, bias_relu: bool) -> f64 {
        if bias_relu {
            self.epilogue_bias_relu
        } else {
            self.epilogue
        }
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::from(
            "# Overhead constants for the latency model, in cycles.\n\
             # Written by `tilecast calibrate`; see [provenance] for where each value comes from.\n\n",
        );
        s.push_str(&toml::to_string(self).expect("profile serializes"));
        s
    }
}

/// The bundled profile fitted for the VEK280 defaults.
pub fn default_profile() -> CalibrationProfile {
    CalibrationProfile::from_toml(VEK280_PROFILE_TOML).expect("bundled profile is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_profile_is_complete() {
        let z = CalibrationProfile::zero();
        z.validate().unwrap();
        let back = CalibrationProfile::from_toml(&z.to_toml()).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn missing_variant_rejected() {
        let mut z = CalibrationProfile::zero();
        z.kernel_overhead.pop();
        assert!(z.validate().is_err());
    }

    #[test]
    fn negative_rejected() {
        let mut z = CalibrationProfile::zero();
        z.dma_init = -1.0;
        assert!(z.validate().is_err());
    }
}
