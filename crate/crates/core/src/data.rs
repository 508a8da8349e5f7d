//! Dataset ingestion, ground-truth density synthesis, synthetic scene
//! generation, and split management.
//!
//! On disk a corpus is `<root>/images/*.png|jpg` plus
//! `<root>/annotations/<basename>.txt`, one `x y` point per line marking a
//! vehicle. Synthetic corpora are written in the identical layout so both
//! paths exercise the same ingester.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Ground-truth Gaussian kernel width in pixels when none is configured.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// One frame: pixels in `[0,1]` shaped `[C, H, W]`, annotated vehicle
/// positions in pixel coordinates (x right, y down), and an identifier
/// whose sort order defines the frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame<F: Scalar> {
    pub frame_id: String,
    pub image: Tensor<F>,
    pub dots: Vec<(f64, f64)>,
}

impl<F: Scalar> AnnotatedFrame<F> {
    /// Ground-truth vehicle count: the number of annotation dots.
    pub fn count(&self) -> usize {
        self.dots.len()
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

fn dot_in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64
}

/// Parse one annotation file: one `x y` pair per whitespace-separated line.
/// Blank lines are allowed; anything else is an error naming the line.
fn parse_annotations(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        line: None,
        msg: format!("cannot read annotations: {}", e),
    })?;
    let mut dots = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let located = |msg: String| Error::Data {
            path: path.to_path_buf(),
            line: Some(idx + 1),
            msg,
        };
        let mut parts = line.split_whitespace();
        let x = parts
            .next()
            .ok_or_else(|| located("missing x coordinate".into()))?
            .parse::<f64>()
            .map_err(|e| located(format!("bad x coordinate: {}", e)))?;
        let y = parts
            .next()
            .ok_or_else(|| located("missing y coordinate".into()))?
            .parse::<f64>()
            .map_err(|e| located(format!("bad y coordinate: {}", e)))?;
        if let Some(extra) = parts.next() {
            return Err(located(format!("unexpected trailing token {:?}", extra)));
        }
        dots.push((x, y));
    }
    Ok(dots)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png") | Some("jpg") | Some("jpeg")
    )
}

/// Load a corpus from disk, sorted by filename. Every frame either loads
/// fully (image, all dots, in-bounds check) or the load fails with an error
/// locating the offending file and line.
pub fn load_dataset<F: Scalar>(root: &Path, rgb: bool) -> Result<Vec<AnnotatedFrame<F>>> {
    let images_dir = root.join("images");
    let annotations_dir = root.join("annotations");
    let mut image_paths: Vec<PathBuf> = fs::read_dir(&images_dir)
        .map_err(|e| Error::Data {
            path: images_dir.clone(),
            line: None,
            msg: format!("cannot list images: {}", e),
        })?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| is_image_file(p))
        .collect();
    image_paths.sort();
    if image_paths.is_empty() {
        return Err(Error::Data {
            path: images_dir,
            line: None,
            msg: "no .png or .jpg images found".into(),
        });
    }

    let mut frames = Vec::with_capacity(image_paths.len());
    for img_path in image_paths {
        let frame_id = img_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data {
                path: img_path.clone(),
                line: None,
                msg: "image filename is not valid UTF-8".into(),
            })?
            .to_string();
        let ann_path = annotations_dir.join(format!("{}.txt", frame_id));
        if !ann_path.is_file() {
            return Err(Error::Data {
                path: ann_path,
                line: None,
                msg: "missing annotation file for image".into(),
            });
        }
        let dots = parse_annotations(&ann_path)?;

        let dynamic = image::open(&img_path)?;
        let image = if rgb {
            let rgb_img = dynamic.to_rgb8();
            let (w, h) = (rgb_img.width() as usize, rgb_img.height() as usize);
            let mut data = vec![F::zero(); 3 * h * w];
            for (x, y, px) in rgb_img.enumerate_pixels() {
                for c in 0..3 {
                    data[c * h * w + y as usize * w + x as usize] =
                        real::<F>(px.0[c] as f64 / 255.0);
                }
            }
            Tensor::new(vec![3, h, w], data)?
        } else {
            let gray = dynamic.to_luma8();
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let mut data = vec![F::zero(); h * w];
            for (x, y, px) in gray.enumerate_pixels() {
                data[y as usize * w + x as usize] = real::<F>(px.0[0] as f64 / 255.0);
            }
            Tensor::new(vec![1, h, w], data)?
        };

        let (h, w) = (image.shape()[1], image.shape()[2]);
        for (i, &(x, y)) in dots.iter().enumerate() {
            if !dot_in_bounds(x, y, w, h) {
                return Err(Error::Data {
                    path: ann_path,
                    line: Some(i + 1),
                    msg: format!("dot ({}, {}) outside {}x{} image", x, y, w, h),
                });
            }
        }
        frames.push(AnnotatedFrame { frame_id, image, dots });
    }
    Ok(frames)
}

/// Build the ground-truth density map for one frame: a truncated isotropic
/// Gaussian per dot, each renormalized over its in-image support so every
/// dot contributes mass exactly 1 regardless of boundary clipping.
pub fn make_gt_density<F: Scalar>(
    dots: &[(f64, f64)],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<Tensor<F>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::domain("make_gt_density", format!("sigma {} must be positive", sigma)));
    }
    if height == 0 || width == 0 {
        return Err(Error::domain("make_gt_density", "map dimensions must be positive"));
    }
    let mut map = vec![0.0f64; height * width];
    let radius = (4.0 * sigma).ceil() as i64;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    for (i, &(x, y)) in dots.iter().enumerate() {
        if !dot_in_bounds(x, y, width, height) {
            return Err(Error::domain(
                "make_gt_density",
                format!("dot {} at ({}, {}) outside {}x{} map", i, x, y, width, height),
            ));
        }
        let cy = y.round() as i64;
        let cx = x.round() as i64;
        let row_lo = (cy - radius).max(0) as usize;
        let row_hi = (cy + radius).min(height as i64 - 1) as usize;
        let col_lo = (cx - radius).max(0) as usize;
        let col_hi = (cx + radius).min(width as i64 - 1) as usize;

        let mut weights = Vec::with_capacity((row_hi - row_lo + 1) * (col_hi - col_lo + 1));
        let mut total = 0.0f64;
        for r in row_lo..=row_hi {
            for c in col_lo..=col_hi {
                let dy = r as f64 - y;
                let dx = c as f64 - x;
                let w = (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
                weights.push(w);
                total += w;
            }
        }
        let mut k = 0;
        for r in row_lo..=row_hi {
            for c in col_lo..=col_hi {
                map[r * width + c] += weights[k] / total;
                k += 1;
            }
        }
    }
    Tensor::new(vec![height, width], map.into_iter().map(real::<F>).collect())
}

/// Knobs for the synthetic stand-in corpus: dark noisy backgrounds with
/// light rectangles centered on uniformly drawn dots.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Number of frames to generate.
    pub frames: usize,
    /// Inclusive range of vehicles per frame.
    pub count_range: (usize, usize),
    /// Ground-truth kernel width stored alongside the corpus geometry.
    pub blob_sigma: f64,
    /// (height, width) of each frame.
    pub image_size: (usize, usize),
    /// Standard deviation of the additive background noise, in [0,1] units.
    pub background_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frames: 64,
            count_range: (1, 8),
            blob_sigma: DEFAULT_SIGMA,
            image_size: (64, 64),
            background_noise: 0.03,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (min, max) = self.count_range;
        if max < min {
            return Err(Error::Config(format!("count range ({}, {}) inverted", min, max)));
        }
        let (h, w) = self.image_size;
        // rectangles are 7x5 around the dot; keep room to draw at least one
        if h < 8 || w < 8 {
            return Err(Error::Config(format!("image size ({}, {}) below 8x8", h, w)));
        }
        if self.blob_sigma <= 0.0 {
            return Err(Error::Config("blob sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.background_noise) {
            return Err(Error::Config("background noise amplitude outside [0,1]".into()));
        }
        Ok(())
    }
}

const RECT_HALF_W: usize = 3;
const RECT_HALF_H: usize = 2;

/// Generate a deterministic corpus: same config (including seed) yields a
/// bit-identical list of frames. Pixels are quantized to u8 levels so a
/// write/load round trip through PNG is lossless.
pub fn synth_generate<F: Scalar>(cfg: &SyntheticConfig) -> Result<Vec<AnnotatedFrame<F>>> {
    cfg.validate()?;
    let (h, w) = cfg.image_size;
    let noise = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut frames = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let mut rng = stream(cfg.seed, "synth-frame", f as u64);
        let count = rng.gen_range(cfg.count_range.0..=cfg.count_range.1);
        let mut pixels = vec![0u8; h * w];
        for px in pixels.iter_mut() {
            let v = 0.12 + cfg.background_noise * noise.sample(&mut rng);
            *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        let mut dots = Vec::with_capacity(count);
        for _ in 0..count {
            // keep the rectangle fully inside the frame
            let x = rng.gen_range(RECT_HALF_W..w - RECT_HALF_W) as f64;
            let y = rng.gen_range(RECT_HALF_H..h - RECT_HALF_H) as f64;
            let brightness: f64 = rng.gen_range(0.65..0.95);
            let (cx, cy) = (x as usize, y as usize);
            for r in cy - RECT_HALF_H..=cy + RECT_HALF_H {
                for c in cx - RECT_HALF_W..=cx + RECT_HALF_W {
                    pixels[r * w + c] = (brightness * 255.0).round() as u8;
                }
            }
            dots.push((x, y));
        }
        let data: Vec<F> = pixels.iter().map(|&p| real::<F>(p as f64 / 255.0)).collect();
        frames.push(AnnotatedFrame {
            frame_id: format!("frame_{:05}", f),
            image: Tensor::new(vec![1, h, w], data)?,
            dots,
        });
    }
    Ok(frames)
}

/// Write frames to `<root>/images/*.png` + `<root>/annotations/*.txt`, the
/// same layout [`load_dataset`] reads.
pub fn write_corpus<F: Scalar>(frames: &[AnnotatedFrame<F>], root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    let annotations_dir = root.join("annotations");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&annotations_dir)?;
    for frame in frames {
        let shape = frame.image.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let to_u8 = |v: F| -> u8 {
            let f = v.to_f64().unwrap_or(0.0);
            (f.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        let img_path = images_dir.join(format!("{}.png", frame.frame_id));
        match c {
            1 => {
                let raw: Vec<u8> = frame.image.data().iter().map(|&v| to_u8(v)).collect();
                let img = GrayImage::from_raw(w as u32, h as u32, raw)
                    .expect("buffer length matches dimensions");
                img.save(&img_path)?;
            }
            3 => {
                let d = frame.image.data();
                let mut raw = Vec::with_capacity(3 * h * w);
                for i in 0..h * w {
                    for ch in 0..3 {
                        raw.push(to_u8(d[ch * h * w + i]));
                    }
                }
                let img = RgbImage::from_raw(w as u32, h as u32, raw)
                    .expect("buffer length matches dimensions");
                img.save(&img_path)?;
            }
            other => {
                return Err(Error::shape(
                    "write_corpus",
                    format!("cannot encode {}-channel image", other),
                ));
            }
        }
        let lines: String =
            frame.dots.iter().map(|&(x, y)| format!("{} {}\n", x, y)).collect();
        fs::write(annotations_dir.join(format!("{}.txt", frame.frame_id)), lines)?;
    }
    Ok(())
}

/// How many frames go to each contiguous split, in corpus order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Default split rule: the 1244-frame corpus uses the published
/// 658/165/421 counts; any other size reserves a fifth for test and divides
/// the remainder 4:1 into train and validation.
pub fn default_split_counts(len: usize) -> SplitCounts {
    if len == 1244 {
        return SplitCounts { train: 658, val: 165, test: 421 };
    }
    let test = len / 5;
    let rest = len - test;
    let train = 4 * rest / 5;
    SplitCounts { train, val: rest - train, test }
}

/// Cut a corpus into contiguous train/validation/test spans. The counts
/// must fit; any frames beyond their total are dropped from the end.
pub fn split<T>(mut frames: Vec<T>, counts: SplitCounts) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if counts.total() > frames.len() {
        return Err(Error::Config(format!(
            "split counts {}+{}+{} exceed corpus size {}",
            counts.train,
            counts.val,
            counts.test,
            frames.len()
        )));
    }
    frames.truncate(counts.total());
    let test = frames.split_off(counts.train + counts.val);
    let val = frames.split_off(counts.train);
    Ok((frames, val, test))
}
