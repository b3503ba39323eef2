use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "DSC")]
    Dsc,
    #[serde(rename = "DSC-SE")]
    DscSe,
    #[serde(rename = "M-DSC")]
    MDsc,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Dsc, Architecture::DscSe, Architecture::MDsc];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Dsc => "DSC",
            Architecture::DscSe => "DSC-SE",
            Architecture::MDsc => "M-DSC",
        }
    }

    /// M-DSC swaps batch norm for group norm and hardswish for ReLU.
    pub fn is_modified(self) -> bool {
        self == Architecture::MDsc
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dsc" => Ok(Architecture::Dsc),
            "dsc-se" | "dscse" => Ok(Architecture::DscSe),
            "m-dsc" | "mdsc" => Ok(Architecture::MDsc),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?}; expected DSC, DSC-SE or M-DSC"
            ))),
        }
    }
}

/// Hyper-parameters that fix the shape of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub fragment_size: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub stem_out_channels: usize,
    pub stem_kernel: usize,
    pub block_channels: Vec<usize>,
    pub branch_kernels: Vec<usize>,
    pub branch_strides: Vec<usize>,
    pub shortcut_stride: usize,
    pub pool_window: usize,
    pub head_channels: usize,
    pub norm_groups: usize,
    pub se_reduction: usize,
    pub dropout_p: f64,
}

impl ModelConfig {
    /// Default channel plan: stem 32 -> 32, blocks 32 -> 64 -> 96 -> 128.
    pub fn new(architecture: Architecture, fragment_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            architecture,
            fragment_size,
            num_classes,
            embed_dim: 32,
            stem_out_channels: 32,
            stem_kernel: 11,
            block_channels: vec![64, 96, 128],
            branch_kernels: vec![11, 19, 27],
            branch_strides: vec![1, 1, 1],
            shortcut_stride: 4,
            pool_window: 4,
            head_channels: 128,
            norm_groups: 8,
            se_reduction: 16,
            dropout_p: if architecture.is_modified() { 0.1 } else { 0.0 },
        }
    }

    pub fn with_fragment_size(&self, fragment_size: usize) -> Self {
        ModelConfig { fragment_size, ..self.clone() }
    }

    /// Input channel count of every block, followed by the output channels of the last.
    pub fn channel_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.stem_out_channels];
        chain.extend(&self.block_channels);
        chain
    }

    /// Spatial length after the pooling chain.
    pub fn final_length(&self) -> usize {
        self.fragment_size / self.pool_window.pow(self.block_channels.len() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.block_channels.len() != 3 {
            return bad(format!("expected 3 inception blocks, got {}", self.block_channels.len()));
        }
        if [self.embed_dim, self.stem_out_channels, self.head_channels].contains(&0)
            || self.block_channels.contains(&0)
        {
            return bad("channel counts must be positive".into());
        }
        if self.branch_kernels.is_empty()
            || self.branch_kernels.iter().any(|&k| k % 2 == 0)
            || self.stem_kernel % 2 == 0
        {
            return bad("kernel lengths must be odd".into());
        }
        if self.branch_strides.len() != self.branch_kernels.len()
            || self.branch_strides.iter().any(|&s| s != 1)
        {
            return bad("every branch convolution must use stride 1".into());
        }
        if self.pool_window < 2 || self.shortcut_stride != self.pool_window {
            return bad(format!(
                "shortcut stride {} must equal the pool window {}",
                self.shortcut_stride, self.pool_window
            ));
        }
        let reduce = self.pool_window.pow(3);
        if self.fragment_size == 0 || self.fragment_size % reduce != 0 {
            return bad(format!(
                "fragment size {} is not divisible by {reduce}",
                self.fragment_size
            ));
        }
        if self.block_channels[2] != self.head_channels {
            return bad(format!(
                "last block width {} must equal the head width {}",
                self.block_channels[2], self.head_channels
            ));
        }
        match self.architecture {
            Architecture::MDsc => {
                if self.stem_out_channels != self.embed_dim {
                    return bad("a depthwise stem keeps the embedding width".into());
                }
                for &c in &self.channel_chain() {
                    if self.norm_groups == 0 || c % self.norm_groups != 0 {
                        return bad(format!("{} groups do not divide {c} channels", self.norm_groups));
                    }
                }
                if !(0.0..1.0).contains(&self.dropout_p) {
                    return bad(format!("dropout rate {} outside [0, 1)", self.dropout_p));
                }
            }
            Architecture::DscSe => {
                for &c in &self.block_channels {
                    if self.se_reduction == 0 || c % self.se_reduction != 0 {
                        return bad(format!("SE reduction {} does not divide {c}", self.se_reduction));
                    }
                }
            }
            Architecture::Dsc => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for arch in Architecture::ALL {
            for size in [512, 4096] {
                let c = ModelConfig::new(arch, size, 75);
                c.validate().unwrap();
                assert_eq!(c.final_length(), if size == 512 { 8 } else { 64 });
            }
        }
    }

    #[test]
    fn rejects_bad_plans() {
        let base = ModelConfig::new(Architecture::DscSe, 512, 5);
        let mut c = base.clone();
        c.fragment_size = 500;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.block_channels = vec![64, 96, 120];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.block_channels = vec![40, 96, 128];
        assert!(c.validate().is_err(), "SE reduction 16 does not divide 40");
        let mut c = ModelConfig::new(Architecture::MDsc, 512, 5);
        c.block_channels = vec![68, 96, 128];
        assert!(c.validate().is_err(), "8 groups do not divide 68");
        let mut c = base;
        c.num_classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for arch in Architecture::ALL {
            assert_eq!(arch.name().parse::<Architecture>().unwrap(), arch);
            let json = serde_json::to_string(&arch).unwrap();
            assert_eq!(json, format!("\"{}\"", arch.name()));
        }
        assert!("resnet".parse::<Architecture>().is_err());
    }
}
