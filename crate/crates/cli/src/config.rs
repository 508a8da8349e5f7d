//! Run configuration: strict TOML with one optional section per module.
//! Omitted keys take the module defaults; unknown keys or wrong types are
//! rejected with the offending key named, so typos fail loudly instead of
//! silently training with defaults.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use semcom::channel::ChannelConfig;
use semcom::data::SyntheticConfig;
use semcom::decoder::DecoderConfig;
use semcom::encoder::EncoderConfig;
use semcom::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainSection,
    pub encoder: EncoderSection,
    pub channel: ChannelSection,
    pub decoder: DecoderSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub p: f64,
    pub loss_threshold: f64,
    pub seed: u64,
    pub per_epoch_update: bool,
    pub gt_sigma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            dropout: d.dropout,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lambda: d.lambda,
            p: d.p,
            loss_threshold: d.loss_threshold,
            seed: d.seed,
            per_epoch_update: d.per_epoch_update,
            gt_sigma: d.gt_sigma,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            dropout: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda: self.lambda,
            p: self.p,
            loss_threshold: self.loss_threshold,
            seed: self.seed,
            per_epoch_update: self.per_epoch_update,
            gt_sigma: self.gt_sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub block_channels: Vec<usize>,
    pub atrous_rate: usize,
    pub reweight_channels: usize,
    pub deconv_channels: Vec<usize>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            input_height: d.input_height,
            input_width: d.input_width,
            input_channels: d.input_channels,
            block_channels: d.block_channels,
            atrous_rate: d.atrous_rate,
            reweight_channels: d.reweight_channels,
            deconv_channels: d.deconv_channels,
        }
    }
}

impl EncoderSection {
    pub fn to_core(&self) -> EncoderConfig {
        EncoderConfig {
            input_height: self.input_height,
            input_width: self.input_width,
            input_channels: self.input_channels,
            block_channels: self.block_channels.clone(),
            atrous_rate: self.atrous_rate,
            reweight_channels: self.reweight_channels,
            deconv_channels: self.deconv_channels.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_db: f64,
    pub gain_h: f64,
    pub seed: u64,
    /// Symbols per frame; `None` resolves to a quarter of the map length.
    pub k: Option<usize>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { snr_db: 10.0, gain_h: 1.0, seed: 0, k: None }
    }
}

impl ChannelSection {
    pub fn to_core(&self, map_len: usize) -> ChannelConfig {
        let mut cfg = ChannelConfig::for_map_len(map_len, self.snr_db);
        cfg.gain_h = self.gain_h;
        cfg.seed = self.seed;
        if let Some(k) = self.k {
            cfg.k = k;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub layers: usize,
    pub hidden: usize,
    pub p: f64,
    pub input_size: usize,
    pub sequence_length: usize,
    pub dropout: f64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecoderConfig::default();
        Self {
            layers: d.layers,
            hidden: d.hidden,
            p: d.p,
            input_size: d.input_size,
            sequence_length: d.sequence_length,
            dropout: d.dropout,
        }
    }
}

impl DecoderSection {
    pub fn to_core(&self) -> DecoderConfig {
        DecoderConfig {
            layers: self.layers,
            hidden: self.hidden,
            p: self.p,
            input_size: self.input_size,
            sequence_length: self.sequence_length,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub frames: usize,
    pub count_min: usize,
    pub count_max: usize,
    pub blob_sigma: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub background_noise: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            frames: d.frames,
            count_min: d.count_range.0,
            count_max: d.count_range.1,
            blob_sigma: d.blob_sigma,
            image_height: d.image_size.0,
            image_width: d.image_size.1,
            background_noise: d.background_noise,
            seed: d.seed,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SyntheticConfig {
        SyntheticConfig {
            frames: self.frames,
            count_range: (self.count_min, self.count_max),
            blob_sigma: self.blob_sigma,
            image_size: (self.image_height, self.image_width),
            background_noise: self.background_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Seed for evaluation-time noise and dropout streams.
    pub seed: u64,
    /// SNR override for eval/sweep; `None` keeps the checkpoint's channel.
    pub snr_db: Option<f64>,
    /// Residual weights scanned by `sweep`.
    pub p_grid: Vec<f64>,
    /// Quantization depth for the overhead payload codec.
    pub quant_bits: u8,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seed: 0,
            snr_db: None,
            p_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            quant_bits: 8,
        }
    }
}

/// Parse the config file, or produce all defaults when no path is given.
pub fn parse_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            // Single-line diagnostic: the key and reason from the parser
            // plus the line number recovered from the error span.
            let cfg: FileConfig = toml::from_str(&text).map_err(|e| {
                let loc = e
                    .span()
                    .map(|s| {
                        let n = text[..s.start].matches('\n').count();
                        let src = text.lines().nth(n).unwrap_or("").trim();
                        format!(" at line {} (`{}`)", n + 1, src)
                    })
                    .unwrap_or_default();
                anyhow::anyhow!("invalid config file {}{}: {}", p.display(), loc, e.message())
            })?;
            Ok(cfg)
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    /// Wall-clock time of the run; the only timestamp in any output.
    created_unix: u64,
    config: &'a FileConfig,
}

/// Write `manifest.toml` (resolved config + code version + timestamp) into
/// `out`. Called before any computation so even failed runs are documented.
pub fn write_manifest(out: &Path, command: &str, cfg: &FileConfig) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    let created_unix =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        created_unix,
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest).context("cannot serialize manifest")?;
    let path = out.join("manifest.toml");
    fs::write(&path, text)
        .with_context(|| format!("cannot write manifest {}", path.display()))?;
    Ok(())
}
