//! Test-time evaluation: count metrics, the residual-weight sweep, and
//! transmission-overhead accounting.

use std::io::Cursor;
use std::path::PathBuf;

use image::codecs::png::PngEncoder;
use image::ImageEncoder;
use rand_distr::{Distribution, Normal};

use crate::data::AnnotatedFrame;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::SemComModel;
use crate::rng::stream;
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Published baseline scores (MAE, MSE) for vehicle counting on the same
/// benchmark; the last row is the architecture this crate implements.
pub const PUBLISHED_BASELINES: [(&str, f64, f64); 4] = [
    ("GRU", 11.88, 77.79),
    ("LSTM", 10.78, 67.74),
    ("FCN-rLSTM", 7.42, 43.28),
    ("CNN-LSTM", 6.23, 38.15),
];

/// Count metrics over one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    /// Number of frames the averages run over.
    pub i_count: usize,
    pub snr_db: f64,
    /// Residual weight the counts were produced with.
    pub p: f64,
}

fn check_pairs(preds: &[f64], gts: &[f64], context: &'static str) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape(
            context,
            format!("{} predictions vs {} ground truths", preds.len(), gts.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::domain(context, "empty input"));
    }
    Ok(())
}

/// Mean absolute count error.
pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pairs(preds, gts, "mae")?;
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += (p - g).abs();
    }
    Ok(sum / preds.len() as f64)
}

/// Mean squared count error.
pub fn mse(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pairs(preds, gts, "mse")?;
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let e = p - g;
        sum += e * e;
    }
    Ok(sum / preds.len() as f64)
}

/// Per-frame predictions from one evaluation pass, in frame order.
pub struct CountPredictions {
    /// Counts at the decoder's own residual weight.
    pub counts: Vec<f64>,
    /// Residual bases: the recovered map sum of each frame.
    pub bases: Vec<f64>,
    /// Ground-truth dot counts.
    pub gts: Vec<f64>,
    /// The residual weight `counts` was produced with.
    pub p: f64,
}

impl CountPredictions {
    /// Counts re-weighted to residual weight `p` without re-running the
    /// model: the residual path is linear in p, so
    /// `counts(p) = counts(p0) + (p - p0) * base`.
    pub fn counts_at(&self, p: f64) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.bases)
            .map(|(c, b)| c + (p - self.p) * b)
            .collect()
    }
}

const EVAL_SEQS_PER_BATCH: usize = 8;

/// Run the model over whole sequences of `frames` at `snr_db` and collect
/// counts; the model is untouched. Noise is `sigma(snr) *` a standard
/// normal stream derived from `eval_seed`, so different SNR levels see the
/// same underlying draws (common random numbers). Trailing frames that do
/// not fill a sequence are skipped.
pub fn predict_counts<F: Scalar>(
    model: &SemComModel<F>,
    frames: &[AnnotatedFrame<F>],
    snr_db: f64,
    eval_seed: u64,
) -> Result<CountPredictions> {
    let enc_cfg = model.encoder.config();
    let t_len = model.decoder.config().sequence_length;
    let n_seqs = frames.len() / t_len;
    if n_seqs == 0 {
        return Err(Error::Config(format!(
            "{} frames cannot fill a sequence of {}",
            frames.len(),
            t_len
        )));
    }
    let mut channel = model.channel.clone();
    channel.snr_db = snr_db;
    channel.validate()?;
    let sigma = channel.noise_sigma();
    let k = channel.k;
    let m = model.map_len();
    let unit = Normal::new(0.0f64, 1.0).expect("unit normal");

    let want = [enc_cfg.input_channels, enc_cfg.input_height, enc_cfg.input_width];
    let (c, h, w) = (want[0], want[1], want[2]);
    let mut counts = Vec::with_capacity(n_seqs * t_len);
    let mut bases = Vec::with_capacity(n_seqs * t_len);
    let mut gts = Vec::with_capacity(n_seqs * t_len);

    let seq_ids: Vec<usize> = (0..n_seqs).collect();
    for (b, chunk) in seq_ids.chunks(EVAL_SEQS_PER_BATCH).enumerate() {
        let n = chunk.len() * t_len;
        let mut images = Vec::with_capacity(n * c * h * w);
        for &s in chunk {
            for t in 0..t_len {
                let frame = &frames[s * t_len + t];
                if frame.image.shape() != want {
                    return Err(Error::shape(
                        "predict_counts",
                        format!(
                            "frame {} is {:?}, model wants {:?}",
                            frame.frame_id,
                            frame.image.shape(),
                            want
                        ),
                    ));
                }
                images.extend_from_slice(frame.image.data());
                gts.push(frame.count() as f64);
            }
        }
        let images = Tensor::new(vec![n, c, h, w], images)?;

        let noise = sigma.map(|sd| {
            let mut rng = stream(eval_seed, "eval-noise", b as u64);
            let data: Vec<F> =
                (0..n * k).map(|_| real::<F>(sd * unit.sample(&mut rng))).collect();
            Tensor::new(vec![n, k], data).expect("noise shape matches data")
        });

        let mut g = Graph::new();
        let mut drop_rng = stream(eval_seed, "eval-dropout", b as u64);
        // forward against the local channel config so the sweep SNR applies
        let density = {
            let image_node = g.constant(images);
            model.encoder.encode(&mut g, &model.store, image_node)?
        };
        let flat = g.reshape(density, vec![n, m])?;
        let symbols = model.codec.encode(&mut g, &model.store, flat)?;
        let received = crate::channel::transmit(&mut g, symbols, &channel, noise.as_ref())?;
        let recovered = model.codec.decode(&mut g, &model.store, received)?;
        let count_node = model.decoder.decode(&mut g, &model.store, recovered, false, &mut drop_rng)?;

        let z = g.value(recovered).data();
        for row in 0..n {
            let mut base = F::zero();
            for &v in &z[row * m..(row + 1) * m] {
                base += v;
            }
            bases.push(base.to_f64().unwrap_or(f64::NAN));
        }
        for &v in g.value(count_node).data() {
            counts.push(v.to_f64().unwrap_or(f64::NAN));
        }
    }

    Ok(CountPredictions { counts, bases, gts, p: model.decoder.config().p })
}

/// Evaluate count metrics at the decoder's own residual weight.
pub fn evaluate_model<F: Scalar>(
    model: &SemComModel<F>,
    frames: &[AnnotatedFrame<F>],
    snr_db: f64,
    eval_seed: u64,
) -> Result<MetricsReport> {
    let pred = predict_counts(model, frames, snr_db, eval_seed)?;
    Ok(MetricsReport {
        mae: mae(&pred.counts, &pred.gts)?,
        mse: mse(&pred.counts, &pred.gts)?,
        i_count: pred.gts.len(),
        snr_db,
        p: pred.p,
    })
}

/// One point of the residual-weight sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub report: MetricsReport,
}

/// The full sweep curve plus the index of the MAE-minimizing point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub argmin: usize,
}

impl SweepCurve {
    pub fn best(&self) -> &SweepPoint {
        &self.points[self.argmin]
    }
}

/// Evaluate the count metrics at every residual weight in `p_grid` from a
/// single model pass; the model is never mutated (the residual path is
/// parameter-free and linear in p).
pub fn p_sweep<F: Scalar>(
    model: &SemComModel<F>,
    frames: &[AnnotatedFrame<F>],
    p_grid: &[f64],
    snr_db: f64,
    eval_seed: u64,
) -> Result<SweepCurve> {
    if p_grid.is_empty() {
        return Err(Error::domain("p_sweep", "empty residual-weight grid"));
    }
    for &p in p_grid {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain("p_sweep", format!("grid value {} outside [0,1]", p)));
        }
    }
    let pred = predict_counts(model, frames, snr_db, eval_seed)?;
    let mut points = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let counts = pred.counts_at(p);
        points.push(SweepPoint {
            p,
            report: MetricsReport {
                mae: mae(&counts, &pred.gts)?,
                mse: mse(&counts, &pred.gts)?,
                i_count: pred.gts.len(),
                snr_db,
                p,
            },
        });
    }
    let argmin = points
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.report.mae.total_cmp(&b.report.mae))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    Ok(SweepCurve { points, argmin })
}

/// The density-map serialization convention used for overhead accounting:
/// quantize the map's dynamic range to `quant_bits` levels, then entropy
/// code the grid losslessly (PNG), plus 8 bytes of range side information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadCodec {
    pub quant_bits: u8,
}

impl Default for OverheadCodec {
    fn default() -> Self {
        Self { quant_bits: 8 }
    }
}

impl OverheadCodec {
    pub fn validate(&self) -> Result<()> {
        if self.quant_bits == 0 || self.quant_bits > 8 {
            return Err(Error::Config(format!(
                "quantization depth {} outside 1..=8 bits",
                self.quant_bits
            )));
        }
        Ok(())
    }
}

/// Byte accounting of raw frames versus transmitted density maps.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub raw_bytes: u64,
    pub encoded_bytes: u64,
    /// `100 * (raw - encoded) / raw`.
    pub reduction_pct: f64,
}

impl OverheadReport {
    pub fn from_sizes(raw_bytes: u64, encoded_bytes: u64) -> Result<Self> {
        if raw_bytes == 0 {
            return Err(Error::domain("overhead", "raw size is zero"));
        }
        let reduction_pct =
            100.0 * (raw_bytes as f64 - encoded_bytes as f64) / raw_bytes as f64;
        Ok(Self { raw_bytes, encoded_bytes, reduction_pct })
    }
}

/// Serialize one 2-d density map under the overhead codec: quantized grid,
/// PNG-coded, plus its dynamic range as two f32 values.
pub fn encode_map_payload<F: Scalar>(map: &Tensor<F>, codec: &OverheadCodec) -> Result<Vec<u8>> {
    codec.validate()?;
    let shape = map.shape();
    if shape.len() != 2 {
        return Err(Error::shape("encode_map_payload", format!("map must be 2-d, got {:?}", shape)));
    }
    let (h, w) = (shape[0], shape[1]);
    let values: Vec<f64> = map.iter().map(|&v| v.to_f64().unwrap_or(0.0)).collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain("encode_map_payload", "map contains non-finite values"));
    }
    let levels = (1u32 << codec.quant_bits) - 1;
    let span = hi - lo;
    let quantized: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span == 0.0 {
                0
            } else {
                ((v - lo) / span * levels as f64).round() as u8
            }
        })
        .collect();

    let mut png = Vec::new();
    PngEncoder::new(Cursor::new(&mut png)).write_image(
        &quantized,
        w as u32,
        h as u32,
        image::ColorType::L8,
    )?;
    let mut payload = png;
    payload.extend_from_slice(&(lo as f32).to_le_bytes());
    payload.extend_from_slice(&(hi as f32).to_le_bytes());
    Ok(payload)
}

/// Compare the on-disk size of the raw frames against the serialized size
/// of their density maps.
pub fn overhead<F: Scalar>(
    image_paths: &[PathBuf],
    maps: &[Tensor<F>],
    codec: &OverheadCodec,
) -> Result<OverheadReport> {
    if image_paths.len() != maps.len() {
        return Err(Error::shape(
            "overhead",
            format!("{} images vs {} density maps", image_paths.len(), maps.len()),
        ));
    }
    let mut raw_bytes = 0u64;
    for path in image_paths {
        let meta = std::fs::metadata(path).map_err(|e| Error::Data {
            path: path.clone(),
            line: None,
            msg: format!("missing raw image: {}", e),
        })?;
        raw_bytes += meta.len();
    }
    let mut encoded_bytes = 0u64;
    for map in maps {
        encoded_bytes += encode_map_payload(map, codec)?.len() as u64;
    }
    OverheadReport::from_sizes(raw_bytes, encoded_bytes)
}

/// Render labeled metric rows (plus the published baselines when asked)
/// as a deterministic CSV table.
pub fn compare_report(
    labels: &[String],
    reports: &[MetricsReport],
    include_baselines: bool,
) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::domain("compare_report", "no reports to tabulate"));
    }
    if labels.len() != reports.len() {
        return Err(Error::shape(
            "compare_report",
            format!("{} labels vs {} reports", labels.len(), reports.len()),
        ));
    }
    let mut out = String::from("model,mae,mse,frames,snr_db,p\n");
    for (label, r) in labels.iter().zip(reports) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            label, r.mae, r.mse, r.i_count, r.snr_db, r.p
        ));
    }
    if include_baselines {
        for (name, mae, mse) in PUBLISHED_BASELINES {
            out.push_str(&format!("{} (published),{},{},,,\n", name, mae, mse));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::data::{make_gt_density, synth_generate, write_corpus, SyntheticConfig};
    use crate::decoder::DecoderConfig;
    use crate::encoder::EncoderConfig;

    #[test]
    fn metrics_trivial_and_hand_cases() {
        assert_eq!(mae(&[2.0, 7.0], &[2.0, 7.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 7.0], &[2.0, 7.0]).unwrap(), 0.0);
        assert_eq!(mae(&[3.0, 5.0], &[1.0, 5.0]).unwrap(), 1.0);
        assert_eq!(mse(&[3.0, 5.0], &[1.0, 5.0]).unwrap(), 2.0);
    }

    #[test]
    fn metrics_match_brute_force_exactly() {
        let mut rng = stream(31, "metrics", 0);
        let preds = Tensor::<f64>::uniform(&[100], 20.0, &mut rng).into_data();
        let gts = Tensor::<f64>::uniform(&[100], 20.0, &mut rng).into_data();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for i in 0..100 {
            abs_sum += (preds[i] - gts[i]).abs();
            let e = preds[i] - gts[i];
            sq_sum += e * e;
        }
        assert_eq!(mae(&preds, &gts).unwrap(), abs_sum / 100.0);
        assert_eq!(mse(&preds, &gts).unwrap(), sq_sum / 100.0);
    }

    #[test]
    fn metrics_reject_bad_inputs() {
        assert!(mae(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mae_never_exceeds_root_mse() {
        let mut rng = stream(32, "metrics", 0);
        for _ in 0..20 {
            let preds = Tensor::<f64>::uniform(&[17], 10.0, &mut rng).into_data();
            let gts = Tensor::<f64>::uniform(&[17], 10.0, &mut rng).into_data();
            let a = mae(&preds, &gts).unwrap();
            let s = mse(&preds, &gts).unwrap();
            assert!(a <= s.sqrt() + 1e-12, "mae {} vs sqrt(mse) {}", a, s.sqrt());
        }
    }

    #[test]
    fn overhead_formula_reproduces_published_arithmetic() {
        // 195 kb raw vs 86 kb of encoded maps
        let kb = |v: f64| (v * 1024.0).round() as u64;
        let r = OverheadReport::from_sizes(kb(195.0), kb(86.0)).unwrap();
        assert!((r.reduction_pct - 55.90).abs() < 0.01, "got {}", r.reduction_pct);
        // 5.31 MB raw vs 2.42 MB encoded
        let mb = |v: f64| (v * 1024.0 * 1024.0).round() as u64;
        let r = OverheadReport::from_sizes(mb(5.31), mb(2.42)).unwrap();
        assert!((r.reduction_pct - 54.42).abs() < 0.01, "got {}", r.reduction_pct);
        // no shrink
        let r = OverheadReport::from_sizes(1000, 1000).unwrap();
        assert_eq!(r.reduction_pct, 0.0);
        assert!(OverheadReport::from_sizes(0, 5).is_err());
    }

    #[test]
    fn map_payloads_shrink_with_smoothness() {
        let mut rng = stream(33, "maps", 0);
        let noisy = Tensor::<f64>::uniform(&[64, 64], 1.0, &mut rng);
        let flat = Tensor::<f64>::filled(&[64, 64], 0.25);
        let codec = OverheadCodec::default();
        let noisy_len = encode_map_payload(&noisy, &codec).unwrap().len();
        let flat_len = encode_map_payload(&flat, &codec).unwrap().len();
        assert!(
            flat_len < noisy_len,
            "constant map must code smaller: {} vs {}",
            flat_len,
            noisy_len
        );
        assert!(encode_map_payload(&Tensor::<f64>::zeros(&[4]), &codec).is_err(), "1-d rejected");
        let bad = OverheadCodec { quant_bits: 9 };
        assert!(encode_map_payload(&flat, &bad).is_err());
    }

    #[test]
    fn overhead_accounts_real_files() {
        let cfg = SyntheticConfig { frames: 6, seed: 5, ..SyntheticConfig::default() };
        let frames = synth_generate::<f64>(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&frames, dir.path()).unwrap();
        let paths: Vec<PathBuf> = frames
            .iter()
            .map(|f| dir.path().join("images").join(format!("{}.png", f.frame_id)))
            .collect();
        let maps: Vec<Tensor<f64>> = frames
            .iter()
            .map(|f| make_gt_density(&f.dots, 64, 64, 4.0).unwrap())
            .collect();
        let report = overhead(&paths, &maps, &OverheadCodec::default()).unwrap();
        assert!(report.raw_bytes > 0 && report.encoded_bytes > 0);
        let recomputed = 100.0 * (report.raw_bytes as f64 - report.encoded_bytes as f64)
            / report.raw_bytes as f64;
        assert!((report.reduction_pct - recomputed).abs() < 0.01);
        assert!(
            report.encoded_bytes < report.raw_bytes,
            "smooth density maps should code below textured frames: {} vs {}",
            report.encoded_bytes,
            report.raw_bytes
        );

        let mut missing = paths.clone();
        missing[0] = dir.path().join("images/nonexistent.png");
        assert!(overhead(&missing, &maps, &OverheadCodec::default()).is_err());
        assert!(overhead(&paths[..3], &maps, &OverheadCodec::default()).is_err());
    }

    fn micro_model(seed: u64) -> SemComModel<f64> {
        let enc = EncoderConfig::micro();
        let chan = ChannelConfig::for_map_len(enc.map_len(), 10.0);
        let dec = DecoderConfig::micro();
        SemComModel::new(enc, chan, dec, seed).unwrap()
    }

    fn micro_frames(n: usize, seed: u64) -> Vec<AnnotatedFrame<f64>> {
        synth_generate(&SyntheticConfig {
            frames: n,
            count_range: (1, 3),
            blob_sigma: 1.5,
            image_size: (8, 8),
            background_noise: 0.02,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn sweep_emits_one_report_per_grid_point_and_never_mutates() {
        let model = micro_model(41);
        let frames = micro_frames(8, 3);
        let before: Vec<f64> =
            model.store.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let curve = p_sweep(&model, &frames, &grid, 10.0, 99).unwrap();
        assert_eq!(curve.points.len(), 6);
        for (point, &p) in curve.points.iter().zip(&grid) {
            assert_eq!(point.p, p);
            assert_eq!(point.report.i_count, 8);
        }
        let after: Vec<f64> =
            model.store.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        assert!(
            before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()),
            "sweep must not touch parameters"
        );
        assert_eq!(model.decoder.config().p, 0.8, "decoder residual weight unchanged");

        let single = p_sweep(&model, &frames, &[0.8], 10.0, 99).unwrap();
        assert_eq!(single.points.len(), 1);
        assert_eq!(single.argmin, 0);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let model = micro_model(42);
        let frames = micro_frames(4, 3);
        assert!(p_sweep(&model, &frames, &[], 10.0, 0).is_err());
        assert!(p_sweep(&model, &frames, &[0.5, 1.5], 10.0, 0).is_err());
    }

    /// With every decoder parameter zeroed the head is silent, so the
    /// sweep counts must equal p * (map sum) exactly as the closed form.
    #[test]
    fn sweep_matches_residual_only_closed_form() {
        let mut model = micro_model(43);
        for pid in model.decoder.param_ids() {
            let n = model.store.value(pid).numel();
            model.store.value_mut(pid).data_mut().copy_from_slice(&vec![0.0; n]);
        }
        let frames = micro_frames(8, 4);
        let pred = predict_counts(&model, &frames, 10.0, 7).unwrap();
        let grid = [0.0, 0.3, 0.7, 1.0];
        let curve = p_sweep(&model, &frames, &grid, 10.0, 7).unwrap();
        for (point, &p) in curve.points.iter().zip(&grid) {
            let direct: Vec<f64> = pred.bases.iter().map(|b| p * b).collect();
            let direct_mae = mae(&direct, &pred.gts).unwrap();
            assert!(
                (point.report.mae - direct_mae).abs() < 1e-9,
                "p={}: sweep {} vs closed form {}",
                p,
                point.report.mae,
                direct_mae
            );
        }
    }

    #[test]
    fn common_random_numbers_hold_across_snr() {
        let model = micro_model(44);
        let frames = micro_frames(4, 5);
        // at infinite SNR the noise vanishes entirely
        let clean = predict_counts(&model, &frames, f64::INFINITY, 11).unwrap();
        let clean2 = predict_counts(&model, &frames, f64::INFINITY, 12).unwrap();
        assert_eq!(clean.counts, clean2.counts, "noiseless run ignores the eval seed");
        // same seed, same SNR: identical
        let a = predict_counts(&model, &frames, 10.0, 11).unwrap();
        let b = predict_counts(&model, &frames, 10.0, 11).unwrap();
        assert_eq!(a.counts, b.counts);
        // same seed, different SNR: different counts (scaled noise)
        let c = predict_counts(&model, &frames, 0.0, 11).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn compare_report_rows_preserve_order() {
        let r = |mae: f64| MetricsReport { mae, mse: mae * mae, i_count: 4, snr_db: 10.0, p: 0.8 };
        let labels = vec!["run-a".to_string(), "run-b".to_string()];
        let table = compare_report(&labels, &[r(2.0), r(1.0)], true).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "model,mae,mse,frames,snr_db,p");
        assert!(lines[1].starts_with("run-a,2"));
        assert!(lines[2].starts_with("run-b,1"));
        assert_eq!(lines.len(), 3 + PUBLISHED_BASELINES.len());
        assert!(lines[3].starts_with("GRU (published),11.88,77.79"));

        let one = compare_report(&labels[..1], &[r(2.0)], false).unwrap();
        assert_eq!(one.lines().count(), 2, "one run, one data row");
        assert!(compare_report(&[], &[], false).is_err());
    }

    #[test]
    fn evaluate_model_reports_the_decoder_p_and_frame_count() {
        let model = micro_model(45);
        let frames = micro_frames(6, 6); // 3 sequences of 2
        let report = evaluate_model(&model, &frames, 10.0, 1).unwrap();
        assert_eq!(report.i_count, 6);
        assert_eq!(report.p, 0.8);
        assert_eq!(report.snr_db, 10.0);
        assert!(report.mae <= report.mse.sqrt() + 1e-12);
    }
}
