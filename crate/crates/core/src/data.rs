//! Datasets, the binary `ICDS` container, the synthetic factor dataset and
//! configuration files.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::components::ModelConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::rng::{derived, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

const DATASET_MAGIC: &[u8; 4] = b"ICDS";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Images stored as bytes (`value / 255` in `[0, 1]`) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    /// `[channels, height, width]`
    pub image_shape: [usize; 3],
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<usize>, image_shape: [usize; 3], classes: usize, split: Split) -> Result<Self> {
        let ds = Self {
            pixels,
            labels,
            image_shape,
            classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let per = self.image_len();
        if per == 0 || self.pixels.len() != per * self.labels.len() {
            return Err(Error::Invalid(format!(
                "{} pixel bytes do not hold {} images of shape {:?}",
                self.pixels.len(),
                self.labels.len(),
                self.image_shape
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::InvalidClass {
                index: bad,
                classes: self.classes,
            });
        }
        let counts = self.class_counts();
        if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::Invalid(format!("class {c} has {n} samples; at least 2 are required")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Sample indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            idx[y].push(i);
        }
        idx
    }

    /// `[n, c, h, w]` tensor of the selected images.
    pub fn images<F: Scalar>(&self, idx: &[usize]) -> Tensor<F> {
        let per = self.image_len();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend(self.pixels[i * per..][..per].iter().map(|&p| F::of(p as f64 / 255.0)));
        }
        let [c, h, w] = self.image_shape;
        Tensor::from_vec(data, &[idx.len(), c, h, w]).expect("consistent image size")
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, idx: &[usize], split: Split) -> Result<Dataset> {
        let per = self.image_len();
        let pixels = idx.iter().flat_map(|&i| self.pixels[i * per..][..per].iter().copied()).collect();
        Dataset::new(pixels, self.labels_of(idx), self.image_shape, self.classes, split)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.pixels.len() + 2 * self.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        let [c, h, w] = self.image_shape;
        for v in [self.len(), c, h, w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        for &y in &self.labels {
            out.extend_from_slice(&(y as u16).to_le_bytes());
        }
        out
    }

    /// Parses an `ICDS` buffer; labels must be below `classes`.
    pub fn from_bytes(bytes: &[u8], classes: usize, split: Split) -> Result<Dataset> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Corrupt("bad dataset magic (expected ICDS)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let (n, c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let len = n
            .checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Corrupt("image dimensions overflow".into()))?;
        let pixels = r.take(len)?.to_vec();
        let labels = (0..n).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
        if !r.rest().is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes after labels", r.rest().len())));
        }
        Dataset::new(pixels, labels, [c, h, w], classes, split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// Reads an `ICDS` file whose labels must be below `classes`.
pub fn load_dataset(path: &Path, classes: usize) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes, classes, Split::Train)
}

/// Smallest class count that admits every label in the file.
pub fn load_dataset_infer(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    r.take(8)?;
    let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let body = dims.iter().product::<usize>();
    r.take(body)?;
    let mut k = 0;
    for _ in 0..dims[0] {
        k = k.max(r.u16()? as usize + 1);
    }
    Dataset::from_bytes(&bytes, k.max(2), Split::Train)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports truncation as corruption.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

/// Ring-shaped ellipses. The class fixes the elongation band (round rings
/// for low classes, bar-like ones for high classes); position, size and
/// stroke thickness are drawn independently of the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
    /// Maximum centre offset in pixels along each axis.
    pub max_shift: f64,
    /// Range of the semi-major axis.
    pub scale: [f64; 2],
    /// Range of the stroke width.
    pub thickness: [f64; 2],
    /// Fraction of each class's elongation band left empty on both sides.
    pub band_margin: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 16,
            classes: 2,
            seed: 0,
            max_shift: 2.0,
            scale: [4.5, 6.0],
            thickness: [1.0, 2.0],
            band_margin: 0.15,
        }
    }
}

/// Ground-truth generating factors of each synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FactorTable {
    /// Class-relevant: in `[0, 1]`, banded by class.
    pub elongation: Vec<f64>,
    pub shift_x: Vec<f64>,
    pub shift_y: Vec<f64>,
    pub scale: Vec<f64>,
    pub thickness: Vec<f64>,
}

impl FactorTable {
    /// Label-independent factors by name.
    pub fn nuisances(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("shift_x", &self.shift_x),
            ("shift_y", &self.shift_y),
            ("scale", &self.scale),
            ("thickness", &self.thickness),
        ]
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.size >= 4
            && self.classes >= 2
            && self.max_shift >= 0.0
            && 0.0 < self.scale[0]
            && self.scale[0] <= self.scale[1]
            && 0.0 < self.thickness[0]
            && self.thickness[0] <= self.thickness[1]
            && (0.0..0.5).contains(&self.band_margin);
        if !ok {
            return Err(Error::Invalid(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }

    /// Elongation band `[lo, hi]` of class `c`.
    pub fn band(&self, class: usize) -> (f64, f64) {
        let k = self.classes as f64;
        let c = class as f64;
        ((c + self.band_margin) / k, (c + 1.0 - self.band_margin) / k)
    }

    /// Renders one ring as pixel intensities in `[0, 1]`.
    pub fn render(&self, elongation: f64, shift: (f64, f64), scale: f64, thickness: f64) -> Vec<f64> {
        let s = self.size;
        let a = scale;
        let b = scale * (1.0 - 0.85 * elongation);
        let centre = (s as f64 - 1.0) / 2.0;
        let (cx, cy) = (centre + shift.0, centre + shift.1);
        let mut img = vec![0.0; s * s];
        for row in 0..s {
            for col in 0..s {
                let (x, y) = (col as f64 - cx, row as f64 - cy);
                let f = (x / a).powi(2) + (y / b).powi(2) - 1.0;
                let grad = ((2.0 * x / (a * a)).powi(2) + (2.0 * y / (b * b)).powi(2)).sqrt();
                // first-order distance to the ellipse outline
                let d = if grad > 1e-12 { f.abs() / grad } else { b };
                img[row * s + col] = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            }
        }
        img
    }
}

/// Balanced synthetic dataset of `n` samples and its factor table.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<(Dataset, FactorTable)> {
    spec.validate()?;
    if n < 2 * spec.classes {
        return Err(Error::Invalid(format!("need at least {} samples, got {n}", 2 * spec.classes)));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut derived(spec.seed, 0xda7a));
    let mut rng = seeded(spec.seed);
    let mut factors = FactorTable::default();
    let mut pixels = Vec::with_capacity(n * spec.size * spec.size);
    for &y in &labels {
        let (lo, hi) = spec.band(y);
        let e = rng.random_range(lo..=hi);
        let m = spec.max_shift;
        let dx = rng.random_range(-m..=m);
        let dy = rng.random_range(-m..=m);
        let a = rng.random_range(spec.scale[0]..=spec.scale[1]);
        let t = rng.random_range(spec.thickness[0]..=spec.thickness[1]);
        let img = spec.render(e, (dx, dy), a, t);
        pixels.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
        factors.elongation.push(e);
        factors.shift_x.push(dx);
        factors.shift_y.push(dy);
        factors.scale.push(a);
        factors.thickness.push(t);
    }
    let ds = Dataset::new(pixels, labels, [1, spec.size, spec.size], spec.classes, Split::Train)?;
    Ok((ds, factors))
}

fn idx_header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let mut r = Reader::new(bytes);
    let m = r.take(4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))?;
    if m != magic {
        return Err(Error::Corrupt(format!("{}: IDX magic {m:#010x}, expected {magic:#010x}", path.display())));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|_| r.take(4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok((dims, 4 + 4 * rank))
}

/// Converts big-endian IDX image/label files (unsigned bytes) into a
/// dataset, box-resampling every image to `size × size`.
pub fn convert_idx(images: &Path, labels: &Path, size: usize) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (idims, ioff) = idx_header(&ib, 0x0000_0803, images)?;
    let (ldims, loff) = idx_header(&lb, 0x0000_0801, labels)?;
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    if ldims[0] != n {
        return Err(Error::Invalid(format!("{n} images but {} labels", ldims[0])));
    }
    if ib.len() < ioff + n * h * w || lb.len() < loff + n {
        return Err(Error::Corrupt("IDX payload truncated".into()));
    }
    let raw_labels: Vec<usize> = lb[loff..loff + n].iter().map(|&v| v as usize).collect();
    let classes = raw_labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let mut pixels = Vec::with_capacity(n * size * size);
    for i in 0..n {
        let src = &ib[ioff + i * h * w..][..h * w];
        pixels.extend(box_resize(src, h, w, size));
    }
    Dataset::new(pixels, raw_labels, [1, size, size], classes, Split::Train)
}

/// Area-weighted resampling of a `h × w` byte image to `size × size`.
fn box_resize(src: &[u8], h: usize, w: usize, size: usize) -> Vec<u8> {
    let (sy, sx) = (h as f64 / size as f64, w as f64 / size as f64);
    let mut out = Vec::with_capacity(size * size);
    for oy in 0..size {
        for ox in 0..size {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let (mut acc, mut area) = (0.0, 0.0);
            for y in y0.floor() as usize..(y1.ceil() as usize).min(h) {
                let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                for x in x0.floor() as usize..(x1.ceil() as usize).min(w) {
                    let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                    acc += wy * wx * src[y * w + x] as f64;
                    area += wy * wx;
                }
            }
            out.push((acc / area).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Top-level layout of a configuration file. Every section and key is
/// optional; absent keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
}

impl ConfigFile {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.weights.validate()
    }
}

/// Parses JSON configuration text. Errors carry the offending key path.
pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates and logs the fully resolved configuration.
pub fn parse_config(path: &Path) -> Result<(ModelConfig, TrainConfig, LossWeights)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config_str(&text)?;
    log::info!(
        "resolved configuration: {}",
        serde_json::to_string(&cfg).unwrap_or_else(|_| "<unprintable>".into())
    );
    Ok((cfg.model, cfg.train, cfg.weights))
}
