//! Learned channel codec around a simulated AWGN channel.
//!
//! The transmit side flattens each density map (length M), compresses it to
//! k real symbols with a two-stage affine+tanh network, and power-normalizes
//! the batch to unit average symbol power so the SNR convention is
//! well-defined. The channel applies `Y = H*X + eta` with i.i.d. Gaussian
//! noise of variance `10^(-snr_db/10)`. The receive side mirrors the codec
//! back to length-M maps.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Channel and codec dimensioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Signal-to-noise ratio in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Scalar channel gain H.
    pub gain_h: f64,
    /// Base seed for noise streams.
    pub seed: u64,
    /// Symbols per frame.
    pub k: usize,
}

impl ChannelConfig {
    /// Default codec width: a quarter of the flattened map length.
    pub fn for_map_len(map_len: usize, snr_db: f64) -> Self {
        Self { snr_db, gain_h: 1.0, seed: 0, k: (map_len / 4).max(1) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("channel k (symbols per frame) must be positive".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db must be a number or +inf".into()));
        }
        if !self.gain_h.is_finite() {
            return Err(Error::Config("gain_h must be finite".into()));
        }
        Ok(())
    }

    /// Noise standard deviation under the unit-signal-power convention,
    /// `None` when noise is disabled via the infinite-SNR sentinel.
    pub fn noise_sigma(&self) -> Option<f64> {
        if self.snr_db == f64::INFINITY {
            None
        } else {
            Some(10f64.powf(-self.snr_db / 20.0))
        }
    }
}

/// Draw an i.i.d. Gaussian noise tensor for one transmission, or `None`
/// when the config disables noise.
pub fn sample_noise<F: Scalar>(
    cfg: &ChannelConfig,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Option<Tensor<F>> {
    let sigma = cfg.noise_sigma()?;
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| real::<F>(normal.sample(rng))).collect();
    Some(Tensor::new(shape.to_vec(), data).expect("shape matches data"))
}

/// Apply `Y = gain_h * X + eta`. The noise tensor is treated as a constant,
/// so gradients flow through the gain path only.
pub fn transmit<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    cfg: &ChannelConfig,
    noise: Option<&Tensor<F>>,
) -> Result<NodeId> {
    cfg.validate()?;
    let scaled = g.scale(x, real::<F>(cfg.gain_h));
    match noise {
        None => Ok(scaled),
        Some(eta) => {
            if eta.shape() != g.value(x).shape() {
                return Err(Error::shape(
                    "transmit",
                    format!("noise {:?} vs symbols {:?}", eta.shape(), g.value(x).shape()),
                ));
            }
            let eta = g.constant(eta.clone());
            g.add(scaled, eta)
        }
    }
}

/// Convenience wrapper sampling fresh noise from `rng` and applying it.
pub fn transmit_noisy<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    cfg: &ChannelConfig,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let noise = sample_noise::<F>(cfg, g.value(x).shape(), rng);
    transmit(g, x, cfg, noise.as_ref())
}

/// Two-stage affine+tanh networks compressing maps to symbols and back.
pub struct ChannelCodec<F: Scalar> {
    map_len: usize,
    k: usize,
    enc: [(ParamId, ParamId); 2],
    dec: [(ParamId, ParamId); 2],
    _marker: std::marker::PhantomData<F>,
}

fn fc_init<F: Scalar>(
    store: &mut ParamStore<F>,
    rows: usize,
    cols: usize,
    bias_bound: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (rows as f64).sqrt();
    let w = store.register(Tensor::uniform(&[rows, cols], bound, rng));
    let b = if bias_bound > 0.0 {
        store.register(Tensor::uniform(&[cols], bias_bound, rng))
    } else {
        store.register(Tensor::zeros(&[cols]))
    };
    (w, b)
}

impl<F: Scalar> ChannelCodec<F> {
    pub fn new(
        map_len: usize,
        k: usize,
        store: &mut ParamStore<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("channel k (symbols per frame) must be positive".into()));
        }
        if map_len == 0 {
            return Err(Error::Config("map length must be positive".into()));
        }
        // The hidden bias starts away from zero so the symbols entering the
        // power normalization have O(1) RMS even when the maps are near
        // zero; gradients through the 1/rms factor stay well conditioned.
        let enc = [fc_init(store, map_len, k, 0.5, rng), fc_init(store, k, k, 0.0, rng)];
        let dec = [fc_init(store, k, k, 0.0, rng), fc_init(store, k, map_len, 0.0, rng)];
        Ok(Self { map_len, k, enc, dec, _marker: std::marker::PhantomData })
    }

    pub fn map_len(&self) -> usize {
        self.map_len
    }

    pub fn symbols_per_frame(&self) -> usize {
        self.k
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.enc.iter().chain(&self.dec).flat_map(|&(w, b)| [w, b]).collect()
    }

    /// `[N, M]` flattened maps -> `[N, k]` power-normalized symbols.
    pub fn encode(&self, g: &mut Graph<F>, store: &ParamStore<F>, maps: NodeId) -> Result<NodeId> {
        let shape = g.value(maps).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.map_len {
            return Err(Error::shape(
                "channel_encode",
                format!("expected [N,{}], got {:?}", self.map_len, shape),
            ));
        }
        let (w1, b1) = self.enc[0];
        let (w2, b2) = self.enc[1];
        let (w1, b1) = (g.param(store, w1), g.param(store, b1));
        let (w2, b2) = (g.param(store, w2), g.param(store, b2));
        let h = g.fully_connected(maps, w1, b1)?;
        let a = g.tanh(h);
        let s = g.fully_connected(a, w2, b2)?;
        Ok(g.power_normalize(s))
    }

    /// `[N, k]` received symbols -> `[N, M]` reconstructed maps Z.
    pub fn decode(&self, g: &mut Graph<F>, store: &ParamStore<F>, symbols: NodeId) -> Result<NodeId> {
        let shape = g.value(symbols).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.k {
            return Err(Error::shape(
                "channel_decode",
                format!("expected [N,{}], got {:?}", self.k, shape),
            ));
        }
        let (w1, b1) = self.dec[0];
        let (w2, b2) = self.dec[1];
        let (w1, b1) = (g.param(store, w1), g.param(store, b1));
        let (w2, b2) = (g.param(store, w2), g.param(store, b2));
        let h = g.fully_connected(symbols, w1, b1)?;
        let a = g.tanh(h);
        g.fully_connected(a, w2, b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn codec(map_len: usize, k: usize, seed: u64) -> (ChannelCodec<f64>, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "codec", 0);
        let codec = ChannelCodec::new(map_len, k, &mut store, &mut rng).unwrap();
        (codec, store)
    }

    #[test]
    fn encoded_batch_has_unit_average_power() {
        let (codec, store) = codec(64, 16, 1);
        let mut g = Graph::new();
        let mut rng = stream(1, "maps", 0);
        let maps = g.constant(Tensor::uniform(&[5, 64], 3.0, &mut rng));
        let x = codec.encode(&mut g, &store, maps).unwrap();
        assert_eq!(g.value(x).shape(), &[5, 16]);
        let power: f64 =
            g.value(x).iter().map(|&v| v * v).sum::<f64>() / g.value(x).numel() as f64;
        assert!((power - 1.0).abs() < 1e-6, "batch power {} != 1", power);
    }

    #[test]
    fn all_zero_maps_give_all_zero_symbols() {
        let (codec, mut store) = codec(16, 4, 2);
        // zero the encoder biases so the affine stages cannot introduce offsets
        for pid in codec.param_ids() {
            if store.value(pid).shape().len() == 1 {
                let n = store.value(pid).numel();
                store.value_mut(pid).data_mut().copy_from_slice(&vec![0.0; n]);
            }
        }
        let mut g = Graph::new();
        let maps = g.constant(Tensor::zeros(&[3, 16]));
        let x = codec.encode(&mut g, &store, maps).unwrap();
        assert!(g.value(x).iter().all(|&v| v == 0.0), "degenerate batch must stay zero");
    }

    #[test]
    fn zero_decoder_weights_give_zero_maps() {
        let (codec, mut store) = codec(16, 4, 3);
        for pid in codec.param_ids()[4..].iter().copied() {
            let n = store.value(pid).numel();
            store.value_mut(pid).data_mut().copy_from_slice(&vec![0.0; n]);
        }
        let mut g = Graph::new();
        let mut rng = stream(3, "sym", 0);
        let y = g.constant(Tensor::uniform(&[2, 4], 1.0, &mut rng));
        let z = codec.decode(&mut g, &store, y).unwrap();
        assert!(g.value(z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_zero_k() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(4, "codec", 0);
        assert!(ChannelCodec::new(16, 0, &mut store, &mut rng).is_err());
        assert!(ChannelConfig { snr_db: 10.0, gain_h: 1.0, seed: 0, k: 0 }.validate().is_err());
    }

    #[test]
    fn noiseless_transmit_is_bit_exact_identity() {
        let cfg = ChannelConfig { snr_db: f64::INFINITY, gain_h: 1.0, seed: 0, k: 8 };
        let mut g = Graph::new();
        let mut rng = stream(5, "sym", 0);
        let x = g.constant(Tensor::<f64>::uniform(&[4, 8], 1.0, &mut rng));
        let noise = sample_noise::<f64>(&cfg, &[4, 8], &mut rng);
        assert!(noise.is_none(), "infinite SNR must disable noise");
        let y = transmit(&mut g, x, &cfg, noise.as_ref()).unwrap();
        let same = g
            .value(x)
            .iter()
            .zip(g.value(y).iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "Y must equal X bit-exactly");
    }

    #[test]
    fn zero_gain_gives_pure_noise_with_expected_variance() {
        let cfg = ChannelConfig { snr_db: 10.0, gain_h: 0.0, seed: 0, k: 8 };
        let sigma2 = cfg.noise_sigma().unwrap().powi(2);
        let n = 100_000;
        let mut g = Graph::new();
        let x = g.constant(Tensor::<f64>::ones(&[n, 1]));
        let mut rng = stream(6, "noise", 0);
        let y = transmit_noisy(&mut g, x, &cfg, &mut rng).unwrap();
        let var: f64 = g.value(y).iter().map(|&v| v * v).sum::<f64>() / n as f64;
        assert!(
            (var - sigma2).abs() < 0.02 * sigma2,
            "sample variance {} not within 2% of {}",
            var,
            sigma2
        );
        let mean: f64 = g.value(y).iter().sum::<f64>() / n as f64;
        let sigma = sigma2.sqrt();
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "noise mean {} too large", mean);
    }

    #[test]
    fn measured_snr_matches_configured() {
        for &snr_db in &[0.0, 10.0, 20.0] {
            let cfg = ChannelConfig { snr_db, gain_h: 1.0, seed: 0, k: 8 };
            let n = 100_000;
            // unit-power signal by construction
            let signal = vec![1.0; n];
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![n, 1], signal).unwrap());
            let mut rng = stream(7, "noise", snr_db as u64);
            let y = transmit_noisy(&mut g, x, &cfg, &mut rng).unwrap();
            let noise_power: f64 = g
                .value(y)
                .iter()
                .zip(g.value(x).iter())
                .map(|(&yv, &xv)| (yv - xv) * (yv - xv))
                .sum::<f64>()
                / n as f64;
            let measured = 10.0 * (1.0 / noise_power).log10();
            assert!(
                (measured - snr_db).abs() < 0.5,
                "measured {} dB vs configured {} dB",
                measured,
                snr_db
            );
        }
    }

    /// With noise disabled the channel is exactly the linear map X -> gain*X.
    #[test]
    fn noiseless_channel_is_linear() {
        let cfg = ChannelConfig { snr_db: f64::INFINITY, gain_h: 0.7, seed: 0, k: 4 };
        let mut rng = stream(8, "sym", 0);
        let x1 = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let x2 = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let (a, b) = (2.5, -1.25);

        let mut g = Graph::new();
        let n1 = g.constant(x1.clone());
        let n2 = g.constant(x2.clone());
        let s1 = g.scale(n1, a);
        let s2 = g.scale(n2, b);
        let combo = g.add(s1, s2).unwrap();
        let y_combo = transmit(&mut g, combo, &cfg, None).unwrap();

        let t1 = transmit(&mut g, n1, &cfg, None).unwrap();
        let t2 = transmit(&mut g, n2, &cfg, None).unwrap();
        let expect: Vec<f64> = g
            .value(t1)
            .iter()
            .zip(g.value(t2).iter())
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        for (got, want) in g.value(y_combo).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    /// Gradients flow through encode -> frozen noise -> decode.
    #[test]
    fn codec_gradients_pass_finite_differences() {
        use crate::gradcheck::{finite_difference_gradient, max_relative_error};

        let (codec, mut store) = codec(12, 3, 9);
        let cfg = ChannelConfig { snr_db: 5.0, gain_h: 1.0, seed: 0, k: 3 };
        let mut noise_rng = stream(9, "noise", 0);
        let noise = sample_noise::<f64>(&cfg, &[2, 3], &mut noise_rng).unwrap();
        let mut map_rng = stream(9, "maps", 0);
        let maps = Tensor::<f64>::uniform(&[2, 12], 1.0, &mut map_rng);

        let run = |store: &ParamStore<f64>| -> (f64, Graph<f64>, NodeId) {
            let mut g = Graph::new();
            let m = g.constant(maps.clone());
            let x = codec.encode(&mut g, store, m).unwrap();
            let y = transmit(&mut g, x, &cfg, Some(&noise)).unwrap();
            let z = codec.decode(&mut g, store, y).unwrap();
            let sq = g.mul(z, z).unwrap();
            let loss = g.sum(sq);
            (g.value(loss).item(), g, loss)
        };

        let (_, mut graph, loss_node) = run(&store);
        graph.backward(loss_node).unwrap();
        store.zero_grad();
        graph.accumulate_param_grads(&mut store);

        for pid in codec.param_ids() {
            let analytic = store.value(pid).grad().unwrap().to_vec();
            let point = store.value(pid).data().to_vec();
            let numeric = finite_difference_gradient(
                |p: &[f64]| {
                    let mut probe = store.clone();
                    probe.value_mut(pid).data_mut().copy_from_slice(p);
                    let (value, _, _) = run(&probe);
                    value
                },
                &point,
                1e-5,
            );
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-7, "param {:?}: max relative error {:.3e}", pid, err);
        }
    }
}
