use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Token subsampling used by the per-view cross-attention sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MinibatchScheme {
    #[default]
    Full,
    Half,
    Quarter,
    /// Uniform sampling without replacement at the quarter rate.
    Random,
}

impl MinibatchScheme {
    /// Number of blocks the token sets are split into.
    pub fn blocks(self) -> usize {
        match self {
            MinibatchScheme::Full => 1,
            MinibatchScheme::Half => 2,
            MinibatchScheme::Quarter | MinibatchScheme::Random => 4,
        }
    }
}

/// Viewpoint grid resolution relative to the input images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ViewpointRes {
    /// Same resolution as the images.
    F,
    /// Half per side.
    #[default]
    H,
    /// Quarter per side.
    Q,
}

impl ViewpointRes {
    pub fn divisor(self) -> usize {
        match self {
            ViewpointRes::F => 1,
            ViewpointRes::H => 2,
            ViewpointRes::Q => 4,
        }
    }

    /// Viewpoint grid size for an `h × w` image.
    pub fn grid(self, h: usize, w: usize) -> (usize, usize) {
        (h / self.divisor(), w / self.divisor())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub patch: usize,
    /// Token uplifting factor `k`.
    pub uplift: usize,
    pub mlp_ratio: usize,
    pub minibatch: MinibatchScheme,
    pub use_uplift: bool,
    pub use_self_attention: bool,
    pub use_group_attention: bool,
    pub viewpoint_res: ViewpointRes,
    /// Depth range of decoded Gaussians, in normalized scene units.
    pub near: f64,
    pub far: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            patch: 8,
            uplift: 2,
            mlp_ratio: 4,
            minibatch: MinibatchScheme::Full,
            use_uplift: true,
            use_self_attention: true,
            use_group_attention: false,
            viewpoint_res: ViewpointRes::H,
            near: 0.1,
            far: 100.0,
        }
    }
}

impl ModelConfig {
    /// Small model that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            patch: 4,
            ..Self::default()
        }
    }

    /// Uplift factor actually applied; 1 when uplifting is disabled.
    pub fn effective_uplift(&self) -> usize {
        if self.use_uplift {
            self.uplift
        } else {
            1
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(config(alloc::format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden,
                self.heads
            )));
        }
        if self.patch == 0 || self.uplift == 0 || self.mlp_ratio == 0 {
            return Err(config("patch, uplift and mlp_ratio must be at least 1"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(config(alloc::format!("need 0 < near < far, got {} and {}", self.near, self.far)));
        }
        if self.use_group_attention && self.minibatch != MinibatchScheme::Full {
            return Err(config("group attention runs over all tokens; minibatch must be full"));
        }
        Ok(())
    }

    /// Checks the uplifted viewpoint length against the image token length.
    pub fn check_lengths(&self, viewpoint_tokens: usize, image_tokens: usize) -> Result<()> {
        let k = self.effective_uplift();
        if viewpoint_tokens * k > image_tokens {
            return Err(config(alloc::format!(
                "uplifted viewpoint tokens ({} × {}) exceed image tokens ({})",
                viewpoint_tokens,
                k,
                image_tokens
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_scale() {
        let c = ModelConfig::default();
        assert_eq!((c.layers, c.hidden, c.heads, c.patch, c.uplift), (12, 768, 12, 8, 2));
        assert_eq!(c.head_dim(), 64);
        c.validate().unwrap();
    }

    #[test]
    fn uplift_length_limit() {
        let c = ModelConfig::default();
        c.check_lengths(256, 1024).unwrap();
        c.check_lengths(512, 1024).unwrap();
        assert!(c.check_lengths(1024, 1024).is_err());
        let plain = ModelConfig { use_uplift: false, ..c };
        plain.check_lengths(1024, 1024).unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad = ModelConfig {
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            use_group_attention: true,
            minibatch: MinibatchScheme::Half,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let c: ModelConfig = serde_json::from_str(r#"{"layers": 3, "minibatch": "quarter", "viewpoint_res": "Q"}"#).unwrap();
        assert_eq!(c.layers, 3);
        assert_eq!(c.minibatch, MinibatchScheme::Quarter);
        assert_eq!(c.viewpoint_res, ViewpointRes::Q);
        assert_eq!(c.hidden, 768);
    }
}
