//! End-to-end model: semantic encoder, channel codec, noisy channel, and
//! count decoder sharing one parameter store so they train jointly.

use rand_chacha::ChaCha8Rng;

use crate::channel::{transmit, ChannelCodec, ChannelConfig};
use crate::decoder::{CountDecoder, DecoderConfig};
use crate::encoder::{EncoderConfig, SemanticEncoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Node handles for every intermediate stage of one forward pass.
pub struct ForwardPass {
    /// Predicted density maps, `[N, 1, H, W]`.
    pub density: NodeId,
    /// Same maps flattened to `[N, M]`.
    pub density_flat: NodeId,
    /// Power-normalized channel symbols, `[N, k]`.
    pub symbols: NodeId,
    /// Symbols after gain and additive noise, `[N, k]`.
    pub received: NodeId,
    /// Maps recovered by the codec decoder, `[N, M]`.
    pub recovered: NodeId,
    /// Predicted vehicle counts, `[N, 1]`.
    pub counts: NodeId,
}

/// The full pipeline plus its parameter store.
pub struct SemComModel<F: Scalar> {
    pub encoder: SemanticEncoder<F>,
    pub codec: ChannelCodec<F>,
    pub decoder: CountDecoder<F>,
    pub channel: ChannelConfig,
    pub store: ParamStore<F>,
    /// Seed all parameter initialization streams derive from.
    pub seed: u64,
}

impl<F: Scalar> SemComModel<F> {
    /// Build all three trainable stages with deterministic, seed-derived
    /// initialization. The channel symbol length defaults from the map size
    /// unless `channel.k` was set explicitly.
    pub fn new(
        encoder_cfg: EncoderConfig,
        channel_cfg: ChannelConfig,
        decoder_cfg: DecoderConfig,
        seed: u64,
    ) -> Result<Self> {
        encoder_cfg.validate()?;
        channel_cfg.validate()?;
        decoder_cfg.validate()?;
        let map_len = encoder_cfg.map_len();

        let mut store = ParamStore::new();
        let mut enc_rng = stream(seed, "init-encoder", 0);
        let encoder = SemanticEncoder::new(encoder_cfg, &mut store, &mut enc_rng)?;
        let mut codec_rng = stream(seed, "init-codec", 0);
        let codec = ChannelCodec::new(map_len, channel_cfg.k, &mut store, &mut codec_rng)?;
        let mut dec_rng = stream(seed, "init-decoder", 0);
        let decoder = CountDecoder::new(decoder_cfg, map_len, &mut store, &mut dec_rng)?;

        Ok(Self { encoder, codec, decoder, channel: channel_cfg, store, seed })
    }

    /// Flattened density map length M.
    pub fn map_len(&self) -> usize {
        self.encoder.config().map_len()
    }

    /// All parameters in registration order (encoder, codec, decoder).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.codec.param_ids());
        ids.extend(self.decoder.param_ids());
        ids
    }

    /// Run the pipeline on `images` `[N, C, H, W]`. `noise` is added to the
    /// transmitted symbols when given and must be `[N, k]`; pass `None` for
    /// a noiseless pass. `rng` drives dropout when `training` is set.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        images: Tensor<F>,
        noise: Option<&Tensor<F>>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        let batch = *images
            .shape()
            .first()
            .ok_or_else(|| Error::shape("forward", "images must be 4-d"))?;
        let map_len = self.map_len();

        let image_node = g.constant(images);
        let density = self.encoder.encode(g, &self.store, image_node)?;
        let density_flat = g.reshape(density, vec![batch, map_len])?;
        let symbols = self.codec.encode(g, &self.store, density_flat)?;
        let received = transmit(g, symbols, &self.channel, noise)?;
        let recovered = self.codec.decode(g, &self.store, received)?;
        let counts = self.decoder.decode(g, &self.store, recovered, training, rng)?;

        Ok(ForwardPass { density, density_flat, symbols, received, recovered, counts })
    }
}
