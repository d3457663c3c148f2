//! Evaluation: classification accuracy, residual probes, mutual information,
//! latent traversals, swaps and per-sample explanations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::components::ModelState;
use crate::data::{write_file, Dataset};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derived, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{build_swap_bundle, PairedBatch};

const CHUNK: usize = 128;

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(CHUNK).map(move |s| (s..(s + CHUNK).min(n)).collect())
}

/// Fraction of samples whose longest class capsule matches the label.
pub fn accuracy_c<F: Scalar>(state: &ModelState<F>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for idx in chunks(data.len()) {
        let pred = state.classifier.forward(&data.images(&idx))?.predicted();
        correct += pred.iter().zip(data.labels_of(&idx)).filter(|(p, y)| **p == *y).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Inference-mode codes of every sample.
#[derive(Debug, Clone, Default)]
pub struct Encodings {
    /// Selected capsule (longest) per sample.
    pub c: Vec<Vec<f64>>,
    /// Posterior mean per sample.
    pub r: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
}

pub fn encode_dataset<F: Scalar>(state: &ModelState<F>, data: &Dataset) -> Result<Encodings> {
    let mut enc = Encodings::default();
    for idx in chunks(data.len()) {
        for p in state.latent_pairs(&data.images(&idx))? {
            enc.c.push(p.c);
            enc.r.push(p.r);
            enc.predicted.push(p.class_index);
        }
    }
    Ok(enc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Rescale each feature to zero mean and unit variance on the training set.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 50,
            batch_size: 64,
            lr: 1e-2,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub chance: f64,
}

/// Per-column mean and standard deviation (floored at 1e-8).
fn column_stats(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    (0..d)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(1e-8))
        })
        .collect()
}

fn standardize(x: &[Vec<f64>], stats: &[(f64, f64)]) -> Tensor<f64> {
    let d = stats.len();
    let data = x
        .iter()
        .flat_map(|r| r.iter().zip(stats).map(|(v, (m, s))| (v - m) / s))
        .collect();
    Tensor::from_vec(data, &[x.len(), d]).expect("rectangular features")
}

/// Row-wise `log softmax(z)[y]`, averaged and negated.
fn cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> Result<Tensor<f64>> {
    let k = logits.shape()[1];
    let max: Vec<f64> = logits.data().chunks(k).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let shift = Tensor::from_vec(max, &[labels.len(), 1])?;
    let z = logits.sub(&shift)?;
    let lse = z.exp().sum_axis(1, false)?.log();
    let picked = z.mul(&crate::capsnet::one_hot(labels, k)?)?.sum_axis(1, false)?;
    Ok(lse.sub(&picked)?.mean_all())
}

/// Trains a fresh one-hidden-layer classifier on `train` features and
/// returns its accuracy on `test`. Features are standardized with the
/// training statistics.
pub fn probe_features(
    train: (&[Vec<f64>], &[usize]),
    test: (&[Vec<f64>], &[usize]),
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let (xtr, ytr) = train;
    let (xte, yte) = test;
    if xtr.is_empty() || xte.is_empty() {
        return Err(Error::Invalid("probe needs non-empty train and test sets".into()));
    }
    let mut stats = column_stats(xtr);
    if !cfg.standardize {
        stats.iter_mut().for_each(|s| *s = (0.0, 1.0));
    }
    let d = stats.len();
    let xtr_t = standardize(xtr, &stats);
    let mut rng = seeded(cfg.seed);
    let mut l1 = Linear::<f64>::new(d, cfg.hidden, &mut rng);
    let mut l2 = Linear::<f64>::new(cfg.hidden, classes, &mut rng);
    for p in l1.params_mut().into_iter().chain(l2.params_mut()) {
        *p = p.leaf(true);
    }
    let adam = AdamConfig::new(cfg.lr, 0.9, 0.999);
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..xtr.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let rows: Vec<f64> = batch.iter().flat_map(|&i| xtr_t.data()[i * d..][..d].iter().copied()).collect();
            let x = Tensor::from_vec(rows, &[batch.len(), d])?;
            let y: Vec<usize> = batch.iter().map(|&i| ytr[i]).collect();
            let logits = l2.forward(&l1.forward(&x)?.relu())?;
            cross_entropy(&logits, &y)?.backward()?;
            let mut params: Vec<&mut Tensor<f64>> = l1.params_mut().into_iter().collect();
            params.extend(l2.params_mut());
            state.step(&adam, params);
        }
    }
    let logits = l2.forward(&l1.forward(&standardize(xte, &stats))?.relu())?;
    let correct = logits
        .data()
        .chunks(classes)
        .zip(yte)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / yte.len() as f64,
        chance: 1.0 / classes as f64,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Probe accuracy of the label from the residual posterior mean.
pub fn residual_probe<F: Scalar>(state: &ModelState<F>, train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let a = encode_dataset(state, train)?;
    let b = encode_dataset(state, test)?;
    probe_features((&a.r, &train.labels), (&b.r, &test.labels), state.config.classes, cfg)
}

/// Probe accuracy of the label from the selected class capsule.
pub fn concept_probe<F: Scalar>(state: &ModelState<F>, train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let a = encode_dataset(state, train)?;
    let b = encode_dataset(state, test)?;
    probe_features((&a.c, &train.labels), (&b.c, &test.labels), state.config.classes, cfg)
}

/// Equal-frequency bin of every value. The cut points are the order
/// statistics at `⌊b·n/bins⌋`; equal values always share a bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    let mut cuts: Vec<f64> = (1..bins).map(|b| sorted[b * n / bins]).collect();
    cuts.dedup();
    values.iter().map(|v| cuts.partition_point(|c| c <= v)).collect()
}

/// Plug-in mutual information (nats) between equal-frequency bins of
/// `values` and `labels`.
pub fn mutual_information(values: &[f64], labels: &[usize], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Invalid(format!("need at least 2 bins, got {bins}")));
    }
    if values.len() != labels.len() || values.is_empty() {
        return Err(Error::Invalid(format!("{} values for {} labels", values.len(), labels.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite value in mutual information input".into()));
    }
    let b = equal_frequency_bins(values, bins);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; nb * k];
    for (&bi, &y) in b.iter().zip(labels) {
        joint[bi * k + y] += 1;
    }
    let n = values.len() as f64;
    let pb: Vec<f64> = (0..nb).map(|i| joint[i * k..][..k].iter().sum::<usize>() as f64 / n).collect();
    let py: Vec<f64> = (0..k).map(|y| (0..nb).map(|i| joint[i * k + y]).sum::<usize>() as f64 / n).collect();
    let mut mi = 0.0;
    for i in 0..nb {
        for y in 0..k {
            let p = joint[i * k + y] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (pb[i] * py[y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Per-dimension mutual information of `c` and `r` with the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub bins: usize,
}

impl MIEstimate {
    pub fn mean_c(&self) -> f64 {
        self.c.iter().sum::<f64>() / self.c.len() as f64
    }

    pub fn mean_r(&self) -> f64 {
        self.r.iter().sum::<f64>() / self.r.len() as f64
    }

    /// CSV with header `component,dimension,mi_nats`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,dimension,mi_nats\n");
        for (name, vals) in [("c", &self.c), ("r", &self.r)] {
            for (i, v) in vals.iter().enumerate() {
                let _ = writeln!(s, "{name},{i},{v}");
            }
        }
        s
    }
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

pub fn mi_estimate<F: Scalar>(state: &ModelState<F>, data: &Dataset, bins: usize) -> Result<MIEstimate> {
    let enc = encode_dataset(state, data)?;
    let per_dim = |rows: &[Vec<f64>], d: usize| -> Result<Vec<f64>> {
        (0..d).map(|j| mutual_information(&column(rows, j), &data.labels, bins)).collect()
    };
    Ok(MIEstimate {
        c: per_dim(&enc.c, state.config.concept_dim)?,
        r: per_dim(&enc.r, state.config.residual_dim)?,
        bins,
    })
}

/// `L × S` generated images; row `l` varies only concept element `l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraversalGrid {
    /// `rows[l][s]` is a flattened image.
    pub rows: Vec<Vec<Vec<f64>>>,
    pub values: Vec<f64>,
    pub image_shape: [usize; 3],
}

/// `steps` evenly spaced values from −1 to 1 inclusive.
pub fn linspace(steps: usize) -> Vec<f64> {
    (0..steps).map(|s| -1.0 + 2.0 * s as f64 / (steps - 1) as f64).collect()
}

/// Traversal of the inference-mode capsule of a single image `[1, c, h, w]`
/// with `r` fixed at the posterior mean.
pub fn traversal_grid<F: Scalar>(state: &ModelState<F>, x: &Tensor<F>, steps: usize) -> Result<TraversalGrid> {
    if x.rank() != 4 || x.shape()[0] != 1 {
        return Err(Error::Invalid(format!("traversal needs one image [1, c, h, w], got {:?}", x.shape())));
    }
    let pair = state.latent_pairs(x)?.remove(0);
    traversal_from_latents(state, &pair.c, &pair.r, steps)
}

/// Traversal around explicit latents.
pub fn traversal_from_latents<F: Scalar>(state: &ModelState<F>, c: &[f64], r: &[f64], steps: usize) -> Result<TraversalGrid> {
    if steps < 2 {
        return Err(Error::Invalid(format!("a traversal needs at least 2 steps, got {steps}")));
    }
    let (l, rd) = (c.len(), r.len());
    let values = linspace(steps);
    let mut cs = Vec::with_capacity(l * steps * l);
    let mut rs = Vec::with_capacity(l * steps * rd);
    for dim in 0..l {
        for &v in &values {
            cs.extend(c.iter().enumerate().map(|(i, &ci)| F::of(if i == dim { v } else { ci })));
            rs.extend(r.iter().map(|&v| F::of(v)));
        }
    }
    let imgs = state
        .generator
        .generate(&Tensor::from_vec(cs, &[l * steps, l])?, &Tensor::from_vec(rs, &[l * steps, rd])?)?;
    let per = imgs.numel() / (l * steps);
    let data: Vec<f64> = imgs.data().iter().map(|v| v.as_f64()).collect();
    let rows = (0..l)
        .map(|dim| (0..steps).map(|s| data[(dim * steps + s) * per..][..per].to_vec()).collect())
        .collect();
    Ok(TraversalGrid {
        rows,
        values,
        image_shape: state.config.image_shape(),
    })
}

/// Largest `|cos|` between the step-to-step pixel change sequences of any
/// two rows. Rows with no change count as fully overlapping.
pub fn distinctness_score(grid: &TraversalGrid) -> Result<f64> {
    let steps = grid.values.len();
    if steps < 2 || grid.rows.len() < 2 {
        return Err(Error::Invalid("distinctness needs at least 2 rows and 2 steps".into()));
    }
    let deltas: Vec<Vec<f64>> = grid
        .rows
        .iter()
        .map(|row| {
            row.windows(2)
                .flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..deltas.len() {
        for b in a + 1..deltas.len() {
            worst = worst.max(abs_cosine(&deltas[a], &deltas[b]));
        }
    }
    Ok(worst)
}

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (dot / (na * nb)).abs().min(1.0)
}

/// Reconstructions and swaps of one pair of differently labelled images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapQuad {
    /// `G(c^i, r^i)`
    pub rec_i: Vec<f64>,
    /// `G(c^j, r^j)`
    pub rec_j: Vec<f64>,
    /// `G(c^j, r^i)`
    pub swap_ji: Vec<f64>,
    /// `G(c^i, r^j)`
    pub swap_ij: Vec<f64>,
}

fn as_batch<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    match x.rank() {
        3 => Ok(x.reshape(&[1, x.shape()[0], x.shape()[1], x.shape()[2]])?),
        4 => Ok(x.clone()),
        _ => Err(Error::Invalid(format!("expected image(s), got shape {:?}", x.shape()))),
    }
}

/// Swaps for batches `x_i`, `x_j` labelled `y_i`, `y_j` (row-wise
/// different). Capsule rows follow the labels and `r` is the posterior mean.
pub fn swap_grid<F: Scalar>(state: &ModelState<F>, x_i: &Tensor<F>, y_i: &[usize], x_j: &Tensor<F>, y_j: &[usize]) -> Result<Vec<SwapQuad>> {
    if y_i.len() != y_j.len() || y_i.iter().zip(y_j).any(|(a, b)| a == b) {
        return Err(Error::Invalid("swap pairs must have different labels".into()));
    }
    let batch = PairedBatch {
        idx_i: vec![],
        idx_j: vec![],
        x_i: as_batch(x_i)?,
        x_j: as_batch(x_j)?,
        y_i: y_i.to_vec(),
        y_j: y_j.to_vec(),
    };
    let b = build_swap_bundle(&batch, state, None)?;
    let per = b.rec_ii.numel() / y_i.len();
    let row = |t: &Tensor<F>, n: usize| t.data()[n * per..][..per].iter().map(|v| v.as_f64()).collect();
    Ok((0..y_i.len())
        .map(|n| SwapQuad {
            rec_i: row(&b.rec_ii, n),
            rec_j: row(&b.rec_jj, n),
            swap_ji: row(&b.swap_ji, n),
            swap_ij: row(&b.swap_ij, n),
        })
        .collect())
}

/// Random test pairs with different labels, as index pairs `(i, j)`.
pub fn swap_pairs(data: &Dataset, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = derived(seed, 0x5a9);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        order.shuffle(&mut rng);
        for w in order.chunks_exact(2) {
            if data.labels[w[0]] != data.labels[w[1]] {
                pairs.push((w[0], w[1]));
                if pairs.len() == count {
                    break;
                }
            }
        }
    }
    pairs
}

/// Fraction of pairs for which C_G assigns `G(c^i, r^j)` to class `y_i`.
pub fn swap_accuracy<F: Scalar>(state: &ModelState<F>, data: &Dataset, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no swap pairs".into()));
    }
    let mut hits = 0;
    for chunk in pairs.chunks(CHUNK) {
        let ii: Vec<usize> = chunk.iter().map(|p| p.0).collect();
        let jj: Vec<usize> = chunk.iter().map(|p| p.1).collect();
        let (yi, yj) = (data.labels_of(&ii), data.labels_of(&jj));
        let quads = swap_grid(state, &data.images(&ii), &yi, &data.images(&jj), &yj)?;
        let per = quads[0].swap_ij.len();
        let imgs: Vec<F> = quads.iter().flat_map(|q| q.swap_ij.iter().map(|&v| F::of(v))).collect();
        let [c, h, w] = state.config.image_shape();
        debug_assert_eq!(per, c * h * w);
        let logits = state.critic.logits(&Tensor::from_vec(imgs, &[chunk.len(), c, h, w])?)?;
        let k = state.config.classes;
        hits += logits
            .data()
            .chunks(k)
            .zip(&yi)
            .filter(|(row, &y)| argmax(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()) == y)
            .count();
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub sample_id: usize,
    pub predicted_class: usize,
    /// Length of the winning capsule.
    pub confidence: f64,
    pub concepts: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub concept_names: Option<Vec<String>>,
}

/// Prediction, confidence and concept values of one image.
pub fn explain_sample<F: Scalar>(state: &ModelState<F>, x: &Tensor<F>, sample_id: usize, names: Option<&[String]>) -> Result<ExplanationRecord> {
    let x = as_batch(x)?;
    if x.shape()[0] != 1 {
        return Err(Error::Invalid("explain_sample takes a single image".into()));
    }
    if let Some(n) = names {
        if n.len() != state.config.concept_dim {
            return Err(Error::Invalid(format!("{} concept names for {} concepts", n.len(), state.config.concept_dim)));
        }
    }
    let (out, c) = state.classifier.encode_class_relevant(&x, None)?;
    let predicted_class = out.predicted()[0];
    let confidence = out.norms()?.data()[predicted_class].as_f64();
    Ok(ExplanationRecord {
        sample_id,
        predicted_class,
        confidence,
        concepts: c.data().iter().map(|v| v.as_f64()).collect(),
        concept_names: names.map(|n| n.to_vec()),
    })
}

/// Binary PPM of a grid of grayscale images in `[0, 1]`, one image per
/// cell, separated by a one-pixel dark border.
pub fn ppm_grid(rows: &[Vec<Vec<f64>>], image_shape: [usize; 3]) -> Vec<u8> {
    let [c, h, w] = image_shape;
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (width, height) = (ncols * (w + 1) + 1, rows.len() * (h + 1) + 1);
    let mut px = vec![0u8; width * height * 3];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let o = ((ri * (h + 1) + 1 + y) * width + ci * (w + 1) + 1 + x) * 3;
                    for ch in 0..3 {
                        let v = img[(ch.min(c - 1) * h + y) * w + x];
                        px[o + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    out
}

/// Everything an evaluation run produced.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub accuracy_c: Option<f64>,
    pub residual_probe: Option<ProbeResult>,
    pub mi: Option<MIEstimate>,
    pub traversals: Vec<(String, TraversalGrid)>,
    pub distinctness: Vec<(String, f64)>,
    pub swaps: Vec<(String, Vec<SwapQuad>)>,
    pub swap_accuracy: Option<f64>,
    pub explanations: Vec<ExplanationRecord>,
}

/// Writes `mi.csv`, one PPM per grid, `explanations.json`, `report.json`
/// and `summary.md` under `dir`; returns the written paths.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    if let Some(mi) = &report.mi {
        put("mi.csv", mi.to_csv().as_bytes())?;
    }
    for (name, grid) in &report.traversals {
        put(&format!("traversal-{name}.ppm"), &ppm_grid(&grid.rows, grid.image_shape))?;
    }
    for (name, quads) in &report.swaps {
        let rows: Vec<Vec<Vec<f64>>> = quads
            .iter()
            .map(|q| vec![q.rec_i.clone(), q.rec_j.clone(), q.swap_ji.clone(), q.swap_ij.clone()])
            .collect();
        let shape = report.traversals.first().map_or_else(|| guess_shape(&rows), |t| t.1.image_shape);
        put(&format!("swap-{name}.ppm"), &ppm_grid(&rows, shape))?;
    }
    if !report.explanations.is_empty() {
        put("explanations.json", to_json(&report.explanations)?.as_bytes())?;
    }
    put("report.json", to_json(report)?.as_bytes())?;
    put("summary.md", summary_markdown(report).as_bytes())?;
    Ok(written)
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Invalid(e.to_string()))
}

/// Square single-channel shape for images without other metadata.
fn guess_shape(rows: &[Vec<Vec<f64>>]) -> [usize; 3] {
    let len = rows.first().and_then(|r| r.first()).map_or(1, Vec::len);
    let side = (len as f64).sqrt().round() as usize;
    [1, side, side]
}

pub fn summary_markdown(report: &EvalReport) -> String {
    let mut s = String::from("# Evaluation summary\n\n");
    if let Some(a) = report.accuracy_c {
        let _ = writeln!(s, "- Capsule classifier accuracy: {a:.4}");
    }
    if let Some(p) = report.residual_probe {
        let _ = writeln!(s, "- Residual probe accuracy: {:.4} (chance {:.4})", p.accuracy, p.chance);
    }
    if let Some(a) = report.swap_accuracy {
        let _ = writeln!(s, "- Swapped images assigned to the class of `c`: {a:.4}");
    }
    for (name, d) in &report.distinctness {
        let _ = writeln!(s, "- Distinctness score ({name}): {d:.4}");
    }
    if let Some(mi) = &report.mi {
        let _ = writeln!(s, "\n## Mutual information with the label ({} bins, nats)\n", mi.bins);
        let _ = writeln!(s, "| code | mean | per dimension |\n|---|---|---|");
        for (name, vals, mean) in [("c", &mi.c, mi.mean_c()), ("r", &mi.r, mi.mean_r())] {
            let dims: Vec<String> = vals.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(s, "| {name} | {mean:.4} | {} |", dims.join(" "));
        }
    }
    if !report.explanations.is_empty() {
        let _ = writeln!(s, "\n## Explanations\n\n| sample | class | confidence | concepts |\n|---|---|---|---|");
        for e in &report.explanations {
            let c: Vec<String> = e.concepts.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(s, "| {} | {} | {:.3} | {} |", e.sample_id, e.predicted_class, e.confidence, c.join(" "));
        }
    }
    s
}
