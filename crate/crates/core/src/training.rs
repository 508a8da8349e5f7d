//! Joint end-to-end training: composite loss, the epoch loop, checkpoints,
//! and the loss-history CSV.
//!
//! Each batch runs the full pipeline (encode, channel code, noisy channel,
//! decode), builds `L_count = L_enc + lambda * L_dec` on the graph, and
//! takes one Adam step. Noise, dropout, and batch order are all derived
//! from `(seed, epoch, batch)`, so a run is reproducible and a resumed run
//! continues exactly where the interrupted one left off.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::channel::sample_noise;
use crate::data::{make_gt_density, AnnotatedFrame, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::SemComModel;
use crate::optim::AdamState;
use crate::rng::stream;
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CSV: &str = "loss_history.csv";

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Dropout rate pushed into the decoder for the run.
    pub dropout: f64,
    /// Hard stop after this many epochs.
    pub epochs: usize,
    /// Frames per gradient step (rounded down to whole sequences).
    pub batch_size: usize,
    /// Weight of the count loss inside the total.
    pub lambda: f64,
    /// Partial-residual weight pushed into the decoder for the run.
    pub p: f64,
    /// Early stop once train loss falls below this; `f64::INFINITY`
    /// disables the rule.
    pub loss_threshold: f64,
    pub seed: u64,
    /// Accumulate gradients over the whole epoch and step once, instead of
    /// stepping per batch.
    pub per_epoch_update: bool,
    /// Kernel width for the ground-truth density maps.
    pub gt_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            dropout: 0.1,
            epochs: 100,
            batch_size: 8,
            lambda: 0.001,
            p: 0.8,
            loss_threshold: f64::INFINITY,
            seed: 0,
            per_epoch_update: false,
            gt_sigma: DEFAULT_SIGMA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} not positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} not a finite non-negative", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("residual weight {} outside [0,1]", self.p)));
        }
        if !(self.loss_threshold > 0.0) {
            return Err(Error::Config(format!(
                "loss threshold {} must be positive (infinity disables it)",
                self.loss_threshold
            )));
        }
        if !(self.gt_sigma > 0.0) || !self.gt_sigma.is_finite() {
            return Err(Error::Config(format!("gt sigma {} not positive", self.gt_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// One epoch's averaged losses on one split.
/// `total == enc_loss + lambda * dec_loss` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub split: Split,
    pub enc_loss: f64,
    pub dec_loss: f64,
    pub total: f64,
}

/// Density estimation loss: mean over the batch of per-frame sums of
/// squared pixel errors. Both arguments are `[N, M]`.
pub fn encoder_loss<F: Scalar>(
    g: &mut Graph<F>,
    predicted: NodeId,
    target: NodeId,
) -> Result<NodeId> {
    mean_row_squared_error(g, predicted, target, "encoder_loss")
}

/// Count loss: mean squared count error over the batch. Both arguments are
/// `[N, 1]` count columns.
pub fn decoder_loss<F: Scalar>(
    g: &mut Graph<F>,
    predicted: NodeId,
    target: NodeId,
) -> Result<NodeId> {
    mean_row_squared_error(g, predicted, target, "decoder_loss")
}

fn mean_row_squared_error<F: Scalar>(
    g: &mut Graph<F>,
    predicted: NodeId,
    target: NodeId,
    context: &'static str,
) -> Result<NodeId> {
    let shape = g.value(predicted).shape().to_vec();
    if shape != g.value(target).shape() {
        return Err(Error::shape(
            context,
            format!("predicted {:?} vs target {:?}", shape, g.value(target).shape()),
        ));
    }
    let rows = *shape
        .first()
        .ok_or_else(|| Error::shape(context, "inputs must have a batch dimension"))?;
    if rows == 0 {
        return Err(Error::shape(context, "empty batch"));
    }
    let diff = g.sub(predicted, target)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.scale(total, real::<F>(1.0 / rows as f64)))
}

/// `L_count = enc + lambda * dec`.
pub fn total_loss<F: Scalar>(
    g: &mut Graph<F>,
    enc: NodeId,
    dec: NodeId,
    lambda: f64,
) -> Result<NodeId> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain("total_loss", format!("lambda {} must be non-negative", lambda)));
    }
    let weighted = g.scale(dec, real::<F>(lambda));
    g.add(enc, weighted)
}

/// One frame readied for batching: pixels, flattened ground-truth density,
/// and the scalar dot count.
struct PreparedFrame<F: Scalar> {
    image: Vec<F>,
    gt_flat: Vec<F>,
    count: F,
}

fn prepare_frames<F: Scalar>(
    model: &SemComModel<F>,
    frames: &[AnnotatedFrame<F>],
    sigma: f64,
) -> Result<Vec<PreparedFrame<F>>> {
    let cfg = model.encoder.config();
    let want = [cfg.input_channels, cfg.input_height, cfg.input_width];
    frames
        .iter()
        .map(|frame| {
            if frame.image.shape() != want {
                return Err(Error::shape(
                    "prepare_frames",
                    format!("frame {} is {:?}, model wants {:?}", frame.frame_id, frame.image.shape(), want),
                ));
            }
            let gt =
                make_gt_density::<F>(&frame.dots, cfg.input_height, cfg.input_width, sigma)?;
            Ok(PreparedFrame {
                image: frame.image.data().to_vec(),
                gt_flat: gt.into_data(),
                count: real::<F>(frame.count() as f64),
            })
        })
        .collect()
}

/// Stack the frames of the chosen sequences into `[n, C, H, W]` images,
/// `[n, M]` ground-truth maps, and `[n, 1]` counts, sequence-major.
fn assemble_batch<F: Scalar>(
    prepared: &[PreparedFrame<F>],
    seqs: &[usize],
    t_len: usize,
    image_dims: (usize, usize, usize),
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (c, h, w) = image_dims;
    let n = seqs.len() * t_len;
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut gts = Vec::with_capacity(n * prepared[0].gt_flat.len());
    let mut counts = Vec::with_capacity(n);
    for &s in seqs {
        for t in 0..t_len {
            let frame = &prepared[s * t_len + t];
            images.extend_from_slice(&frame.image);
            gts.extend_from_slice(&frame.gt_flat);
            counts.push(frame.count);
        }
    }
    let m = gts.len() / n;
    Ok((
        Tensor::new(vec![n, c, h, w], images)?,
        Tensor::new(vec![n, m], gts)?,
        Tensor::new(vec![n, 1], counts)?,
    ))
}

/// Result of one [`Trainer::fit`] call.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Reports generated by this call, two per completed epoch.
    pub history: Vec<LossReport>,
    pub epochs_run: usize,
    pub stopped_by_threshold: bool,
    pub best_epoch: usize,
    pub best_val_total: f64,
}

/// A model bundled with its optimizer and progress counters; the unit that
/// checkpoints save and restore.
pub struct Trainer<F: Scalar> {
    pub model: SemComModel<F>,
    opt: AdamState<F>,
    /// 1-based epoch the next fit call starts at.
    next_epoch: usize,
    best_epoch: usize,
    best_val: f64,
    history: Vec<LossReport>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: SemComModel<F>) -> Self {
        let opt = AdamState::new(&model.store);
        Self { model, opt, next_epoch: 1, best_epoch: 0, best_val: f64::INFINITY, history: Vec::new() }
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_val_total(&self) -> f64 {
        self.best_val
    }

    /// Every report produced by this trainer, across fit calls.
    pub fn history(&self) -> &[LossReport] {
        &self.history
    }

    pub fn optimizer(&self) -> &AdamState<F> {
        &self.opt
    }

    /// Run the joint training loop until `cfg.epochs` total epochs have
    /// completed or the train loss drops below `cfg.loss_threshold`.
    ///
    /// When `out_dir` is given, the best-validation and final checkpoints
    /// plus the loss CSV are written there.
    pub fn fit(
        &mut self,
        train: &[AnnotatedFrame<F>],
        val: &[AnnotatedFrame<F>],
        cfg: &TrainConfig,
        out_dir: Option<&Path>,
    ) -> Result<FitOutcome> {
        cfg.validate()?;
        self.model.decoder.set_p(cfg.p)?;
        self.model.decoder.set_dropout(cfg.dropout)?;

        let t_len = self.model.decoder.config().sequence_length;
        let prepared_train = prepare_frames(&self.model, train, cfg.gt_sigma)?;
        let prepared_val = prepare_frames(&self.model, val, cfg.gt_sigma)?;
        let train_seqs = prepared_train.len() / t_len;
        let val_seqs = prepared_val.len() / t_len;
        if train_seqs == 0 {
            return Err(Error::Config(format!(
                "train split has {} frames, below one sequence of {}",
                prepared_train.len(),
                t_len
            )));
        }
        if val_seqs == 0 {
            return Err(Error::Config(format!(
                "validation split has {} frames, below one sequence of {}",
                prepared_val.len(),
                t_len
            )));
        }
        let seqs_per_batch = (cfg.batch_size / t_len).max(1);
        let enc_cfg = self.model.encoder.config();
        let dims = (enc_cfg.input_channels, enc_cfg.input_height, enc_cfg.input_width);
        let k = self.model.channel.k;
        let lr = real::<F>(cfg.learning_rate);

        let mut call_history: Vec<LossReport> = Vec::new();
        let mut epochs_run = 0;
        let mut stopped_by_threshold = false;

        let start = self.next_epoch;
        for epoch in start..=cfg.epochs {
            let mut order: Vec<usize> = (0..train_seqs).collect();
            order.shuffle(&mut stream(cfg.seed, "batch-order", epoch as u64));
            let n_batches = order.chunks(seqs_per_batch).count();

            if cfg.per_epoch_update {
                self.model.store.zero_grad();
            }
            let mut enc_sum = 0.0;
            let mut dec_sum = 0.0;
            let mut frames_seen = 0usize;
            for (b, chunk) in order.chunks(seqs_per_batch).enumerate() {
                let (images, gts, counts) =
                    assemble_batch(&prepared_train, chunk, t_len, dims)?;
                let n = chunk.len() * t_len;
                let noise = sample_noise(
                    &self.model.channel,
                    &[n, k],
                    &mut stream(cfg.seed, "train-noise", stream_index(epoch, b)),
                );
                let mut drop_rng = stream(cfg.seed, "train-dropout", stream_index(epoch, b));

                if !cfg.per_epoch_update {
                    self.model.store.zero_grad();
                }
                let mut g = Graph::new();
                let pass =
                    self.model.forward(&mut g, images, noise.as_ref(), true, &mut drop_rng)?;
                let gt_node = g.constant(gts);
                let count_node = g.constant(counts);
                let enc_l = encoder_loss(&mut g, pass.density_flat, gt_node)?;
                let dec_l = decoder_loss(&mut g, pass.counts, count_node)?;
                let mut total = total_loss(&mut g, enc_l, dec_l, cfg.lambda)?;

                let enc_v = g.value(enc_l).data()[0].to_f64().unwrap_or(f64::NAN);
                let dec_v = g.value(dec_l).data()[0].to_f64().unwrap_or(f64::NAN);
                if !enc_v.is_finite() || !dec_v.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                enc_sum += enc_v * n as f64;
                dec_sum += dec_v * n as f64;
                frames_seen += n;

                if cfg.per_epoch_update {
                    // one step per epoch: average the batch losses
                    total = g.scale(total, real::<F>(1.0 / n_batches as f64));
                }
                g.backward(total)?;
                g.accumulate_param_grads(&mut self.model.store);
                if !cfg.per_epoch_update {
                    self.opt.adam_step(&mut self.model.store, lr)?;
                }
            }
            if cfg.per_epoch_update {
                self.opt.adam_step(&mut self.model.store, lr)?;
            }

            let train_enc = enc_sum / frames_seen as f64;
            let train_dec = dec_sum / frames_seen as f64;
            let train_total = train_enc + cfg.lambda * train_dec;
            let (val_enc, val_dec) = self.evaluate_losses(
                &prepared_val,
                t_len,
                seqs_per_batch,
                dims,
                cfg,
                epoch,
            )?;
            let val_total = val_enc + cfg.lambda * val_dec;
            if !val_total.is_finite() {
                return Err(Error::Diverged { epoch });
            }

            let train_report = LossReport {
                epoch,
                split: Split::Train,
                enc_loss: train_enc,
                dec_loss: train_dec,
                total: train_total,
            };
            let val_report = LossReport {
                epoch,
                split: Split::Validation,
                enc_loss: val_enc,
                dec_loss: val_dec,
                total: val_total,
            };
            call_history.push(train_report.clone());
            call_history.push(val_report.clone());
            self.history.push(train_report);
            self.history.push(val_report);

            epochs_run += 1;
            self.next_epoch = epoch + 1;
            if val_total < self.best_val {
                self.best_val = val_total;
                self.best_epoch = epoch;
                if let Some(dir) = out_dir {
                    checkpoint_save(self, &dir.join(BEST_CHECKPOINT))?;
                }
            }
            if cfg.loss_threshold.is_finite() && train_total < cfg.loss_threshold {
                stopped_by_threshold = true;
                break;
            }
        }

        if let Some(dir) = out_dir {
            checkpoint_save(self, &dir.join(FINAL_CHECKPOINT))?;
            write_loss_csv(&self.history, &dir.join(LOSS_CSV))?;
        }

        Ok(FitOutcome {
            history: call_history,
            epochs_run,
            stopped_by_threshold,
            best_epoch: self.best_epoch,
            best_val_total: self.best_val,
        })
    }

    /// Average losses over a prepared split without touching gradients.
    /// Channel noise stays on at the training SNR; dropout is off.
    fn evaluate_losses(
        &self,
        prepared: &[PreparedFrame<F>],
        t_len: usize,
        seqs_per_batch: usize,
        dims: (usize, usize, usize),
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<(f64, f64)> {
        let seq_count = prepared.len() / t_len;
        let order: Vec<usize> = (0..seq_count).collect();
        let k = self.model.channel.k;
        let mut enc_sum = 0.0;
        let mut dec_sum = 0.0;
        let mut frames_seen = 0usize;
        for (b, chunk) in order.chunks(seqs_per_batch).enumerate() {
            let (images, gts, counts) = assemble_batch(prepared, chunk, t_len, dims)?;
            let n = chunk.len() * t_len;
            let noise = sample_noise(
                &self.model.channel,
                &[n, k],
                &mut stream(cfg.seed, "val-noise", stream_index(epoch, b)),
            );
            let mut drop_rng = stream(cfg.seed, "val-dropout", stream_index(epoch, b));
            let mut g = Graph::new();
            let pass = self.model.forward(&mut g, images, noise.as_ref(), false, &mut drop_rng)?;
            let gt_node = g.constant(gts);
            let count_node = g.constant(counts);
            let enc_l = encoder_loss(&mut g, pass.density_flat, gt_node)?;
            let dec_l = decoder_loss(&mut g, pass.counts, count_node)?;
            enc_sum += g.value(enc_l).data()[0].to_f64().unwrap_or(f64::NAN) * n as f64;
            dec_sum += g.value(dec_l).data()[0].to_f64().unwrap_or(f64::NAN) * n as f64;
            frames_seen += n;
        }
        Ok((enc_sum / frames_seen as f64, dec_sum / frames_seen as f64))
    }
}

/// Unique RNG stream index per (epoch, batch).
fn stream_index(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 24) ^ batch as u64
}

/// Write the `epoch,split,enc_loss,dec_loss,total` history.
pub fn write_loss_csv(history: &[LossReport], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,split,enc_loss,dec_loss,total\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.split, r.enc_loss, r.dec_loss, r.total
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

const MAGIC: &[u8; 4] = b"SEMC";
const VERSION: u32 = 1;

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize_list(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.u64(v as u64);
        }
    }

    fn scalar<F: Scalar>(&mut self, v: F) {
        // f32 -> f64 is exact, so to_f64 preserves bits for both widths
        let as_f64 = v.to_f64().expect("scalar convertible to f64");
        if std::mem::size_of::<F>() == 4 {
            self.buf.extend_from_slice(&(as_f64 as f32).to_le_bytes());
        } else {
            self.buf.extend_from_slice(&as_f64.to_le_bytes());
        }
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.data.len()
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size field {} overflows", v)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize_list(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn scalar<F: Scalar>(&mut self) -> Result<F> {
        let v = if std::mem::size_of::<F>() == 4 {
            f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64
        } else {
            self.f64()?
        };
        real::<F>(v)
            .to_f64()
            .map(|_| real::<F>(v))
            .ok_or_else(|| Error::Checkpoint("unrepresentable scalar".into()))
    }

    fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Serialize the whole training bundle: configs, progress counters,
/// optimizer state, and every parameter, little-endian.
fn encode_trainer<F: Scalar>(trainer: &Trainer<F>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(std::mem::size_of::<F>() as u32);

    let enc = trainer.model.encoder.config();
    w.u64(enc.input_height as u64);
    w.u64(enc.input_width as u64);
    w.u64(enc.input_channels as u64);
    w.usize_list(&enc.block_channels);
    w.u64(enc.atrous_rate as u64);
    w.u64(enc.reweight_channels as u64);
    w.usize_list(&enc.deconv_channels);

    let chan = &trainer.model.channel;
    w.f64(chan.snr_db);
    w.f64(chan.gain_h);
    w.u64(chan.seed);
    w.u64(chan.k as u64);

    let dec = trainer.model.decoder.config();
    w.u64(dec.layers as u64);
    w.u64(dec.hidden as u64);
    w.f64(dec.p);
    w.u64(dec.input_size as u64);
    w.u64(dec.sequence_length as u64);
    w.f64(dec.dropout);

    w.u64(trainer.model.seed);
    w.u64(trainer.next_epoch as u64);
    w.u64(trainer.best_epoch as u64);
    w.f64(trainer.best_val);

    w.f64(trainer.opt.beta1.to_f64().unwrap());
    w.f64(trainer.opt.beta2.to_f64().unwrap());
    w.f64(trainer.opt.epsilon.to_f64().unwrap());
    w.u64(trainer.opt.step);

    let store = &trainer.model.store;
    w.u64(store.len() as u64);
    for (_, param) in store.iter() {
        w.usize_list(param.shape());
    }
    for (_, param) in store.iter() {
        for &v in param.data() {
            w.scalar(v);
        }
    }
    for moments in [trainer.opt.first_moments(), trainer.opt.second_moments()] {
        for m in moments {
            for &v in m {
                w.scalar(v);
            }
        }
    }
    w.buf
}

/// Atomically write the bundle to `path` (temp file + rename).
pub fn checkpoint_save<F: Scalar>(trainer: &Trainer<F>, path: &Path) -> Result<()> {
    let bytes = encode_trainer(trainer);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Restore a bundle saved by [`checkpoint_save`]. The model is rebuilt
/// from the stored configs, then every parameter and optimizer moment is
/// overwritten with the stored values; nothing is applied on error.
pub fn checkpoint_load<F: Scalar>(path: &Path) -> Result<Trainer<F>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);

    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version)));
    }
    let width = r.u32()? as usize;
    if width != std::mem::size_of::<F>() {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {}-byte scalars, model uses {}-byte",
            width,
            std::mem::size_of::<F>()
        )));
    }

    let enc_cfg = crate::encoder::EncoderConfig {
        input_height: r.usize()?,
        input_width: r.usize()?,
        input_channels: r.usize()?,
        block_channels: r.usize_list()?,
        atrous_rate: r.usize()?,
        reweight_channels: r.usize()?,
        deconv_channels: r.usize_list()?,
    };
    let chan_cfg = crate::channel::ChannelConfig {
        snr_db: r.f64()?,
        gain_h: r.f64()?,
        seed: r.u64()?,
        k: r.usize()?,
    };
    let dec_cfg = crate::decoder::DecoderConfig {
        layers: r.usize()?,
        hidden: r.usize()?,
        p: r.f64()?,
        input_size: r.usize()?,
        sequence_length: r.usize()?,
        dropout: r.f64()?,
    };
    let model_seed = r.u64()?;
    let next_epoch = r.usize()?;
    let best_epoch = r.usize()?;
    let best_val = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let epsilon = r.f64()?;
    let step = r.u64()?;

    let mut model = SemComModel::<F>::new(enc_cfg, chan_cfg, dec_cfg, model_seed)?;
    let n_params = r.usize()?;
    if n_params != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, model has {}",
            n_params,
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.param_ids().collect();
    for &pid in &ids {
        let shape = r.usize_list()?;
        if shape != model.store.value(pid).shape() {
            return Err(Error::Checkpoint(format!(
                "parameter shape {:?} in file, model expects {:?}",
                shape,
                model.store.value(pid).shape()
            )));
        }
    }
    // read everything before mutating, so corrupt files leave no side effects
    let mut values: Vec<Vec<F>> = Vec::with_capacity(ids.len());
    for &pid in &ids {
        let n = model.store.value(pid).numel();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.scalar::<F>()?);
        }
        values.push(data);
    }
    let mut opt = AdamState::with_hyperparams(&model.store, beta1, beta2, epsilon);
    opt.step = step;
    {
        let (m, v) = opt.moments_mut();
        for slot in [m, v] {
            for (i, &pid) in ids.iter().enumerate() {
                let n = model.store.value(pid).numel();
                for j in 0..n {
                    slot[i][j] = r.scalar::<F>()?;
                }
            }
        }
    }
    if !r.finished() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the final moment table",
            bytes.len() - r.pos
        )));
    }
    for (pid, data) in ids.iter().zip(values) {
        model.store.value_mut(*pid).data_mut().copy_from_slice(&data);
    }

    Ok(Trainer { model, opt, next_epoch, best_epoch, best_val, history: Vec::new() })
}
