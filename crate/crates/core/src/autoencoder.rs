//! Seeded autoencoder for learning maps in a lower-dimensional latent space.
//!
//! The encoder and decoder are independent GELU networks trained jointly on
//! mean squared reconstruction error with AdamW. After training both halves
//! are frozen: downstream code encodes populations, fits transport maps in
//! latent coordinates, and decodes predictions back to feature space.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde_json::json;

use crate::nn::io::{mlp_from_container, push_mlp_blocks, write_sidecar};
use crate::nn::{
    adamw_step, init_mlp, mlp_backward, mlp_forward, AdamWConfig, AdamWState, MlpParams,
    ParamContainer, read_container, write_container,
};
use crate::{seed, Error, Result};

/// Training settings. `hidden` lists the encoder's hidden widths; the
/// decoder mirrors them in reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            hidden: vec![64, 64],
            epochs: 200,
            batch_size: 64,
            seed: 0,
            // Reconstruction is a plain regression problem; it tolerates a
            // larger step size than the transport map does.
            optimizer: AdamWConfig {
                learning_rate: 1e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

impl AutoencoderConfig {
    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epoch count must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// A trained encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: MlpParams,
    decoder: MlpParams,
}

impl Autoencoder {
    /// Pairs two networks, checking that their widths are compatible.
    pub fn new(encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::shape(format!(
                "encoder emits {} coordinates but decoder consumes {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::shape(format!(
                "encoder consumes {} features but decoder emits {}",
                encoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    /// Width of the feature space.
    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Width of the latent space.
    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Maps rows of features to latent coordinates.
    pub fn encode(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        mlp_forward(&self.encoder, data).map(|(out, _)| out)
    }

    /// Maps rows of latent coordinates back to feature space.
    pub fn decode(&self, latent: &Array2<f64>) -> Result<Array2<f64>> {
        mlp_forward(&self.decoder, latent).map(|(out, _)| out)
    }

    /// `decode(encode(data))`.
    pub fn reconstruct(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(data)?)
    }

    /// Stores both halves in one parameter container plus a JSON sidecar.
    pub fn save(&self, path: &Path, extra_meta: &serde_json::Value) -> Result<()> {
        let meta = json!({
            "kind": "autoencoder",
            "activation": "gelu",
            "encoder_layer_sizes": self.encoder.layer_sizes(),
            "decoder_layer_sizes": self.decoder.layer_sizes(),
            "extra": extra_meta,
        });
        let mut blocks = Vec::new();
        push_mlp_blocks(&mut blocks, "encoder.", &self.encoder);
        push_mlp_blocks(&mut blocks, "decoder.", &self.decoder);
        write_container(path, &ParamContainer { meta: meta.clone(), blocks })?;
        write_sidecar(path, &meta)
    }

    /// Loads a pair stored by [`Autoencoder::save`].
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let container = read_container(path)?;
        if container.meta.get("kind").and_then(|v| v.as_str()) != Some("autoencoder") {
            return Err(Error::data(format!(
                "{} does not store an autoencoder",
                path.display()
            )));
        }
        let depth = |key: &str| -> Result<usize> {
            let sizes = container
                .meta
                .get(key)
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::data(format!("autoencoder metadata lacks {key}")))?;
            if sizes.len() < 2 {
                return Err(Error::data(format!("{key} must list at least two widths")));
            }
            Ok(sizes.len() - 1)
        };
        let encoder = mlp_from_container(&container, "encoder.", depth("encoder_layer_sizes")?)?;
        let decoder = mlp_from_container(&container, "decoder.", depth("decoder_layer_sizes")?)?;
        Ok((Self::new(encoder, decoder)?, container.meta))
    }
}

/// Mean squared reconstruction error over all entries.
pub fn reconstruction_mse(model: &Autoencoder, data: &Array2<f64>) -> Result<f64> {
    let recon = model.reconstruct(data)?;
    let diff = &recon - data;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

/// Trains an autoencoder on `data` (rows are samples).
///
/// Every epoch shuffles the rows with a dedicated seed stream and sweeps
/// them once in minibatches. Returns the trained pair together with the
/// per-epoch mean squared training loss.
pub fn train_autoencoder(
    data: &Array2<f64>,
    cfg: &AutoencoderConfig,
) -> Result<(Autoencoder, Vec<f64>)> {
    cfg.validate()?;
    let (n, d) = data.dim();
    if n == 0 || d == 0 {
        return Err(Error::data("training data must be non-empty".to_string()));
    }
    if cfg.latent_dim > d {
        return Err(Error::invalid(format!(
            "latent dimension {} exceeds the {d} data features",
            cfg.latent_dim
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("training data contains non-finite values".to_string()));
    }

    let mut enc_sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    enc_sizes.push(d);
    enc_sizes.extend_from_slice(&cfg.hidden);
    enc_sizes.push(cfg.latent_dim);
    let mut dec_sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    dec_sizes.push(cfg.latent_dim);
    dec_sizes.extend(cfg.hidden.iter().rev());
    dec_sizes.push(d);

    let mut encoder = init_mlp(&enc_sizes, seed::derive(cfg.seed, "ae-encoder-init"))?;
    let mut decoder = init_mlp(&dec_sizes, seed::derive(cfg.seed, "ae-decoder-init"))?;
    let mut enc_state = AdamWState::new(&encoder);
    let mut dec_state = AdamWState::new(&decoder);
    let mut shuffle_rng = seed::rng(cfg.seed, "ae-batches");

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut squared_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.min(n)) {
            let batch = data.select(Axis(0), chunk);
            let (latent, enc_tape) = mlp_forward(&encoder, &batch)?;
            let (recon, dec_tape) = mlp_forward(&decoder, &latent)?;
            let diff = &recon - &batch;
            squared_sum += diff.iter().map(|v| v * v).sum::<f64>();

            let scale = 2.0 / (chunk.len() * d) as f64;
            let grad_out = diff.mapv(|v| v * scale);
            let (dec_grads, grad_latent) = mlp_backward(&decoder, &dec_tape, &grad_out)?;
            let (enc_grads, _) = mlp_backward(&encoder, &enc_tape, &grad_latent)?;
            adamw_step(&mut decoder, &dec_grads, &mut dec_state, &cfg.optimizer)?;
            adamw_step(&mut encoder, &enc_grads, &mut enc_state, &cfg.optimizer)?;
        }
        history.push(squared_sum / (n * d) as f64);
    }
    Ok((Autoencoder::new(encoder, decoder)?, history))
}
