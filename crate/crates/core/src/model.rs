//! The full reconstruction model: tokenizer, update layers and decoder head.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::gaussian::{self, GaussianVars};
use crate::params::{Bound, ParamStore};
use crate::scalar::Real;
use crate::tokenizer;
use crate::update::{self, ViewInput};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Freshly initialized model. Parameter values depend only on `seed` and
    /// the configuration.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (p, d) = (config.patch, config.hidden);
        tokenizer::init_params(&mut params, p, d, &mut rng);
        for layer in 0..config.layers {
            update::init_layer_params(&mut params, layer, &config, &mut rng);
        }
        gaussian::init_params(&mut params, p, d, &mut rng);
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Views (already in the normalized scene frame) to Gaussians, one
    /// Gaussian per viewpoint pixel per view, concatenated in view order.
    pub fn reconstruct(&self, tape: &mut Tape<T>, w: &Bound, views: &[ViewInput<T>], seed: u64) -> Result<GaussianVars> {
        let cfg = &self.config;
        let tokens = update::forward(tape, w, cfg, views, seed)?;
        let mut parts = Vec::with_capacity(views.len());
        for (view, v) in views.iter().zip(&tokens) {
            let raw = gaussian::decode_tokens(tape, v, w)?;
            let act = gaussian::activate(tape, &raw, cfg.near, cfg.far)?;
            let cam = view.camera.rescaled(v.width, v.height);
            parts.push(gaussian::unproject(tape, &act, &cam, v.height, v.width)?);
        }
        GaussianVars::concat(tape, &parts)
    }
}
