//! Convolutional semantic encoder: image batch in, same-size density maps out.
//!
//! The network is a stack of 3x3 conv blocks with max pooling, a low-channel
//! 1x1 squeeze, a dilated 3x3 stage, a 1x1 feature re-weighting conv, one
//! stride-2 transposed conv per pooling stage to restore resolution, and a
//! 1x1 predictor with a rectifier so density values stay non-negative.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyper-parameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Output channels of each 3x3 conv block; every block ends in a
    /// stride-2 max pool.
    pub block_channels: Vec<usize>,
    /// Dilation of the atrous stage.
    pub atrous_rate: usize,
    /// Width of the squeezed 1x1 / atrous / re-weighting stages.
    pub reweight_channels: usize,
    /// Output channels of the stride-2 transposed convs; one per pool.
    pub deconv_channels: Vec<usize>,
}

impl Default for EncoderConfig {
    /// Desk-scale default: 64x64 grayscale frames.
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            input_channels: 1,
            block_channels: vec![32, 64],
            atrous_rate: 2,
            reweight_channels: 16,
            deconv_channels: vec![32, 16],
        }
    }
}

impl EncoderConfig {
    /// Tiny 8x8 config used by gradient checks.
    pub fn micro() -> Self {
        Self {
            input_height: 8,
            input_width: 8,
            input_channels: 1,
            block_channels: vec![4, 8],
            atrous_rate: 2,
            reweight_channels: 4,
            deconv_channels: vec![8, 4],
        }
    }

    /// Pixels per density map (the flattened symbol source length M).
    pub fn map_len(&self) -> usize {
        self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return Err(Error::Config("encoder input dimensions must be positive".into()));
        }
        if self.block_channels.is_empty() {
            return Err(Error::Config("encoder needs at least one conv block".into()));
        }
        if self.block_channels.iter().chain(&self.deconv_channels).any(|&c| c == 0)
            || self.reweight_channels == 0
        {
            return Err(Error::Config("encoder channel counts must be positive".into()));
        }
        if self.atrous_rate < 1 {
            return Err(Error::Config("atrous_rate must be >= 1".into()));
        }
        if self.deconv_channels.len() != self.block_channels.len() {
            return Err(Error::Config(format!(
                "{} stride-2 pools need {} transposed convs to restore the input \
                 size, got {}",
                self.block_channels.len(),
                self.block_channels.len(),
                self.deconv_channels.len()
            )));
        }
        let factor = 1usize << self.block_channels.len();
        if self.input_height % factor != 0 || self.input_width % factor != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by the total pooling factor {}",
                self.input_height, self.input_width, factor
            )));
        }
        // the dilated 3x3 stage must fit the pooled feature map
        let pooled_h = self.input_height / factor;
        let pooled_w = self.input_width / factor;
        let extent = 2 * self.atrous_rate + 1;
        if pooled_h + 2 * self.atrous_rate < extent || pooled_w + 2 * self.atrous_rate < extent {
            return Err(Error::Config(format!(
                "atrous_rate {} does not fit the {}x{} pooled feature map",
                self.atrous_rate, pooled_h, pooled_w
            )));
        }
        Ok(())
    }
}

/// One pixel grid of non-negative densities; its sum is the implied count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap<F: Scalar> {
    tensor: Tensor<F>,
}

impl<F: Scalar> DensityMap<F> {
    /// Wrap a `[height, width]` tensor.
    pub fn new(tensor: Tensor<F>) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(Error::shape(
                "density map",
                format!("expected [h, w], got {:?}", tensor.shape()),
            ));
        }
        Ok(Self { tensor })
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.tensor
    }

    /// Implied vehicle count: the sum over all pixels.
    pub fn count(&self) -> F {
        self.tensor.sum()
    }
}

/// Total count implied by a map (sum of every pixel's density).
pub fn count_from_map<F: Scalar>(map: &DensityMap<F>) -> F {
    map.count()
}

struct ConvParams {
    kernel: ParamId,
    bias: ParamId,
}

/// Parameter handles for the encoder network.
pub struct SemanticEncoder<F: Scalar> {
    config: EncoderConfig,
    blocks: Vec<ConvParams>,
    squeeze: ConvParams,
    atrous: ConvParams,
    reweight: ConvParams,
    deconvs: Vec<ConvParams>,
    predictor: ConvParams,
    _marker: std::marker::PhantomData<F>,
}

fn conv_init<F: Scalar>(
    store: &mut ParamStore<F>,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> ConvParams {
    let fan_in = (in_ch * k * k) as f64;
    let kernel = store.register(Tensor::uniform(&[out_ch, in_ch, k, k], 1.0 / fan_in.sqrt(), rng));
    let bias = store.register(Tensor::zeros(&[out_ch]));
    ConvParams { kernel, bias }
}

fn deconv_init<F: Scalar>(
    store: &mut ParamStore<F>,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> ConvParams {
    let fan_in = (in_ch * k * k) as f64;
    // transposed-conv kernel layout is [in_ch, out_ch, k, k]
    let kernel = store.register(Tensor::uniform(&[in_ch, out_ch, k, k], 1.0 / fan_in.sqrt(), rng));
    let bias = store.register(Tensor::zeros(&[out_ch]));
    ConvParams { kernel, bias }
}

impl<F: Scalar> SemanticEncoder<F> {
    /// Register all encoder parameters in `store` with fan-in scaled
    /// uniform init driven by `rng`.
    pub fn new(config: EncoderConfig, store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let mut in_ch = config.input_channels;
        for &out_ch in &config.block_channels {
            blocks.push(conv_init(store, out_ch, in_ch, 3, rng));
            in_ch = out_ch;
        }
        let squeeze = conv_init(store, config.reweight_channels, in_ch, 1, rng);
        let atrous = conv_init(store, config.reweight_channels, config.reweight_channels, 3, rng);
        let reweight = conv_init(store, config.reweight_channels, config.reweight_channels, 1, rng);
        let mut deconvs = Vec::new();
        let mut in_ch = config.reweight_channels;
        for &out_ch in &config.deconv_channels {
            deconvs.push(deconv_init(store, in_ch, out_ch, 2, rng));
            in_ch = out_ch;
        }
        let predictor = conv_init(store, 1, in_ch, 1, rng);
        Ok(Self {
            config,
            blocks,
            squeeze,
            atrous,
            reweight,
            deconvs,
            predictor,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Ids of all encoder parameters, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for p in self
            .blocks
            .iter()
            .chain([&self.squeeze, &self.atrous, &self.reweight])
            .chain(&self.deconvs)
            .chain([&self.predictor])
        {
            ids.push(p.kernel);
            ids.push(p.bias);
        }
        ids
    }

    /// Map an image batch `[N,C,h,w]` to density maps `[N,1,h,w]`.
    pub fn encode(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        images: NodeId,
    ) -> Result<NodeId> {
        let shape = g.value(images).shape().to_vec();
        let want = [
            self.config.input_channels,
            self.config.input_height,
            self.config.input_width,
        ];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                "encode",
                format!("expected [N,{},{},{}], got {:?}", want[0], want[1], want[2], shape),
            ));
        }

        let mut x = images;
        for block in &self.blocks {
            let k = g.param(store, block.kernel);
            let b = g.param(store, block.bias);
            let c = g.conv2d(x, k, 1, 1, 1)?;
            let cb = g.add_channel_bias(c, b)?;
            let a = g.relu(cb);
            x = g.max_pool2d(a, 2, 2)?;
        }

        for (stage, dilation) in
            [(&self.squeeze, 1), (&self.atrous, self.config.atrous_rate), (&self.reweight, 1)]
        {
            let k = g.param(store, stage.kernel);
            let b = g.param(store, stage.bias);
            let kh = g.value(k).shape()[2];
            let padding = if kh == 1 { 0 } else { dilation };
            let c = g.conv2d(x, k, 1, dilation, padding)?;
            let cb = g.add_channel_bias(c, b)?;
            x = g.relu(cb);
        }

        for deconv in &self.deconvs {
            let k = g.param(store, deconv.kernel);
            let b = g.param(store, deconv.bias);
            let c = g.transposed_conv2d(x, k, 2, 0)?;
            let cb = g.add_channel_bias(c, b)?;
            x = g.relu(cb);
        }

        let k = g.param(store, self.predictor.kernel);
        let b = g.param(store, self.predictor.bias);
        let c = g.conv2d(x, k, 1, 1, 0)?;
        let cb = g.add_channel_bias(c, b)?;
        Ok(g.relu(cb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn desk_config_preserves_spatial_size() {
        let cfg = EncoderConfig::default();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(1, "enc", 0);
        let enc = SemanticEncoder::new(cfg, &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let mut img_rng = stream(1, "img", 0);
        let images = g.constant(Tensor::uniform(&[2, 1, 64, 64], 1.0, &mut img_rng));
        let maps = enc.encode(&mut g, &store, images).unwrap();
        assert_eq!(g.value(maps).shape(), &[2, 1, 64, 64]);
    }

    #[test]
    fn micro_config_preserves_spatial_size_and_is_nonnegative() {
        let cfg = EncoderConfig::micro();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(2, "enc", 0);
        let enc = SemanticEncoder::new(cfg, &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let mut img_rng = stream(2, "img", 0);
        let images = g.constant(Tensor::uniform(&[3, 1, 8, 8], 1.0, &mut img_rng));
        let maps = enc.encode(&mut g, &store, images).unwrap();
        assert_eq!(g.value(maps).shape(), &[3, 1, 8, 8]);
        assert!(g.value(maps).iter().all(|&v| v >= 0.0), "density must be non-negative");
    }

    /// Hand-computed parameter count for the micro config:
    /// conv1 4*1*9+4, conv2 8*4*9+8, squeeze 4*8+4, atrous 4*4*9+4,
    /// reweight 4*4+4, deconv1 4*8*4+8, deconv2 8*4*4+4, predictor 4+1.
    #[test]
    fn micro_parameter_count_matches_hand_sum() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(3, "enc", 0);
        SemanticEncoder::new(EncoderConfig::micro(), &mut store, &mut rng).unwrap();
        let hand = (36 + 4) + (288 + 8) + (32 + 4) + (144 + 4) + (16 + 4) + (128 + 8) + (128 + 4) + (4 + 1);
        assert_eq!(store.total_elements(), hand);
        assert_eq!(hand, 813);
    }

    #[test]
    fn zero_predictor_weights_give_zero_maps() {
        let cfg = EncoderConfig::micro();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(4, "enc", 0);
        let enc = SemanticEncoder::new(cfg, &mut store, &mut rng).unwrap();
        let ids = enc.param_ids();
        // predictor kernel and bias are the last two registered parameters
        let n = ids.len();
        for &pid in &ids[n - 2..] {
            let numel = store.value(pid).numel();
            store.value_mut(pid).data_mut().copy_from_slice(&vec![0.0; numel]);
        }
        let mut g = Graph::new();
        let mut img_rng = stream(4, "img", 0);
        let images = g.constant(Tensor::uniform(&[1, 1, 8, 8], 1.0, &mut img_rng));
        let maps = enc.encode(&mut g, &store, images).unwrap();
        assert!(g.value(maps).iter().all(|&v| v == 0.0));
        assert_eq!(g.value(maps).sum(), 0.0, "implied count of the zero map is 0");
    }

    #[test]
    fn same_seed_same_output_bits() {
        let run = || {
            let mut store = ParamStore::<f64>::new();
            let mut rng = stream(9, "enc", 0);
            let enc = SemanticEncoder::new(EncoderConfig::micro(), &mut store, &mut rng).unwrap();
            let mut g = Graph::new();
            let mut img_rng = stream(9, "img", 0);
            let images = g.constant(Tensor::uniform(&[2, 1, 8, 8], 1.0, &mut img_rng));
            let maps = enc.encode(&mut g, &store, images).unwrap();
            g.value(maps).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut bad = EncoderConfig::micro();
        bad.deconv_channels = vec![8]; // one deconv cannot undo two pools
        assert!(bad.validate().is_err());

        let mut bad = EncoderConfig::micro();
        bad.input_height = 10; // not divisible by 4
        assert!(bad.validate().is_err());

        let mut bad = EncoderConfig::micro();
        bad.atrous_rate = 0;
        assert!(bad.validate().is_err());

        let mut bad = EncoderConfig::micro();
        bad.block_channels.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_rejects_wrong_spatial_size() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(5, "enc", 0);
        let enc = SemanticEncoder::new(EncoderConfig::micro(), &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let images = g.constant(Tensor::<f64>::zeros(&[1, 1, 16, 16]));
        assert!(enc.encode(&mut g, &store, images).is_err());
    }

    #[test]
    fn density_map_wraps_2d_only() {
        assert!(DensityMap::new(Tensor::<f64>::zeros(&[4, 4])).is_ok());
        assert!(DensityMap::new(Tensor::<f64>::zeros(&[4])).is_err());
        let uniform =
            DensityMap::new(Tensor::<f64>::filled(&[8, 8], 1.0 / 64.0)).unwrap();
        assert!((count_from_map(&uniform) - 1.0).abs() < 1e-12);
        let zero = DensityMap::new(Tensor::<f64>::zeros(&[8, 8])).unwrap();
        assert_eq!(count_from_map(&zero), 0.0);
    }
}
