//! Alternating optimization of the five update groups, batch pairing and
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::capsnet::{margin_loss, reconstruction_loss, MarginLossParams};
use crate::components::{ModelConfig, ModelState, UpdateGroup};
use crate::data::{write_file, Dataset, Reader};
use crate::error::{Error, Result};
use crate::losses::{loss_cg, loss_concept, loss_cr, loss_cs, loss_gan, loss_kl, loss_lgp, loss_rs, LossWeights, SwapBundle};
use crate::optim::AdamConfig;
use crate::rng::{derived, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupRates {
    pub classifier: f64,
    pub encoder: f64,
    pub critic: f64,
    pub generator: f64,
    pub contrast: f64,
}

impl GroupRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            classifier: lr,
            encoder: lr,
            critic: lr,
            generator: lr,
            contrast: lr,
        }
    }

    pub fn get(&self, g: UpdateGroup) -> f64 {
        match g {
            UpdateGroup::Classifier => self.classifier,
            UpdateGroup::Encoder => self.encoder,
            UpdateGroup::Critic => self.critic,
            UpdateGroup::Generator => self.generator,
            UpdateGroup::Contrast => self.contrast,
        }
    }
}

impl Default for GroupRates {
    fn default() -> Self {
        Self::uniform(2e-4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Images per step; half come from each of the two paired classes.
    pub batch_size: usize,
    pub lr: GroupRates,
    /// Adam betas of the critic, generator and contrastive discriminator.
    pub adversarial_betas: [f64; 2],
    /// Adam betas of the capsule classifier and residual encoder.
    pub encoder_betas: [f64; 2],
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Critic updates per step.
    pub critic_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: GroupRates::default(),
            adversarial_betas: [0.5, 0.9],
            encoder_betas: [0.9, 0.999],
            seed: 0,
            checkpoint_every: 0,
            critic_steps: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size must be a positive even number, got {}", self.batch_size));
        }
        if self.critic_steps == 0 {
            return bad("critic_steps must be positive".into());
        }
        for g in UpdateGroup::ALL {
            let lr = self.lr.get(g);
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rate of `{}` must be positive, got {lr}", g.name()));
            }
        }
        for b in self.adversarial_betas.iter().chain(&self.encoder_betas) {
            if !(0.0..1.0).contains(b) {
                return bad(format!("Adam betas must lie in [0, 1), got {b}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self, g: UpdateGroup) -> AdamConfig {
        let [b1, b2] = match g {
            UpdateGroup::Classifier | UpdateGroup::Encoder => self.encoder_betas,
            _ => self.adversarial_betas,
        };
        AdamConfig::new(self.lr.get(g), b1, b2)
    }
}

/// Two equally sized sub-batches whose labels differ row by row.
#[derive(Debug, Clone)]
pub struct PairedBatch<F: Scalar> {
    pub idx_i: Vec<usize>,
    pub idx_j: Vec<usize>,
    pub x_i: Tensor<F>,
    pub x_j: Tensor<F>,
    pub y_i: Vec<usize>,
    pub y_j: Vec<usize>,
}

impl<F: Scalar> PairedBatch<F> {
    pub fn half(&self) -> usize {
        self.y_i.len()
    }

    /// `[x^i; x^j]`
    pub fn stacked(&self) -> Result<Tensor<F>> {
        Ok(Tensor::concat(&[self.x_i.clone(), self.x_j.clone()], 0)?)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.y_i.iter().chain(&self.y_j).copied().collect()
    }
}

/// Draws two distinct classes (the two classes, in random order, for binary
/// data) and `batch_size / 2` samples of each.
pub fn pair_batch<F: Scalar>(data: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<PairedBatch<F>> {
    if data.classes < 2 {
        return Err(Error::Invalid("pairing needs at least two classes".into()));
    }
    let half = batch_size / 2;
    if half == 0 {
        return Err(Error::Invalid("batch size must be at least 2".into()));
    }
    let a = rng.random_range(0..data.classes);
    let b = (a + rng.random_range(1..data.classes)) % data.classes;
    let by_class = data.class_indices();
    let mut pick = |c: usize| -> Result<Vec<usize>> {
        let pool = &by_class[c];
        if pool.len() < half {
            return Err(Error::Invalid(format!(
                "class {c} has {} samples, fewer than the {half} needed per batch",
                pool.len()
            )));
        }
        Ok(sample(rng, pool.len(), half).into_iter().map(|k| pool[k]).collect())
    };
    let idx_i = pick(a)?;
    let idx_j = pick(b)?;
    Ok(PairedBatch {
        x_i: data.images(&idx_i),
        x_j: data.images(&idx_j),
        y_i: data.labels_of(&idx_i),
        y_j: data.labels_of(&idx_j),
        idx_i,
        idx_j,
    })
}

/// `[b; a]` for `[a; b]` with halves of `half` rows.
fn swap_halves<F: Scalar>(t: &Tensor<F>, half: usize) -> Result<Tensor<F>> {
    Ok(Tensor::concat(&[t.slice(0, half, half)?, t.slice(0, 0, half)?], 0)?)
}

/// Latents and generated images of a paired batch. `r` is the posterior
/// sample when `rng` is given and the posterior mean otherwise.
pub fn build_swap_bundle<F: Scalar>(batch: &PairedBatch<F>, state: &ModelState<F>, rng: Option<&mut Rng>) -> Result<SwapBundle<F>> {
    let h = batch.half();
    let x = batch.stacked()?;
    let (_, c) = state.classifier.encode_class_relevant(&x, Some(&batch.labels()))?;
    let (_, r) = state.encoder.encode_residual(&x, rng)?;
    let (recon, swap) = generate_pair(state, &c, &r, h)?;
    Ok(SwapBundle {
        x_i: batch.x_i.clone(),
        x_j: batch.x_j.clone(),
        y_i: batch.y_i.clone(),
        y_j: batch.y_j.clone(),
        c_i: c.slice(0, 0, h)?,
        c_j: c.slice(0, h, h)?,
        r_i: r.slice(0, 0, h)?,
        r_j: r.slice(0, h, h)?,
        rec_ii: recon.slice(0, 0, h)?,
        rec_jj: recon.slice(0, h, h)?,
        swap_ij: swap.slice(0, 0, h)?,
        swap_ji: swap.slice(0, h, h)?,
    })
}

/// `G(c, r)` and `G(c, swap(r))` from a single generator pass.
fn generate_pair<F: Scalar>(state: &ModelState<F>, c: &Tensor<F>, r: &Tensor<F>, half: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    let n = c.shape()[0];
    let cc = Tensor::concat(&[c.clone(), c.clone()], 0)?;
    let rr = Tensor::concat(&[r.clone(), swap_halves(r, half)?], 0)?;
    let img = state.generator.generate(&cc, &rr)?;
    Ok((img.slice(0, 0, n)?, img.slice(0, n, n)?))
}

/// Random draws shared by all sub-updates of one step.
struct StepNoise<F: Scalar> {
    eps: Tensor<F>,
    changed: Vec<usize>,
    value_a: Vec<f64>,
    value_b: Vec<f64>,
}

impl<F: Scalar> StepNoise<F> {
    fn draw(n: usize, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let eps = Tensor::randn(&[n, cfg.residual_dim], rng);
        let changed = (0..n).map(|_| rng.random_range(0..cfg.concept_dim)).collect();
        let value_a = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let value_b = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self {
            eps,
            changed,
            value_a,
            value_b,
        }
    }
}

/// `c` with element `changed[n]` of row `n` replaced by `values[n]`.
fn traverse<F: Scalar>(c: &Tensor<F>, changed: &[usize], values: &[f64]) -> Result<Tensor<F>> {
    let (n, l) = (c.shape()[0], c.shape()[1]);
    let mut keep = vec![F::one(); n * l];
    let mut put = vec![F::zero(); n * l];
    for i in 0..n {
        keep[i * l + changed[i]] = F::zero();
        put[i * l + changed[i]] = F::of(values[i]);
    }
    let keep = Tensor::from_vec(keep, &[n, l])?;
    let put = Tensor::from_vec(put, &[n, l])?;
    Ok(c.mul(&keep)?.add(&put)?)
}

/// Loss terms of one group's objective, evaluated with fresh forward passes
/// at the current parameters.
fn group_terms<F: Scalar>(
    group: UpdateGroup,
    state: &ModelState<F>,
    batch: &PairedBatch<F>,
    noise: &StepNoise<F>,
    w: &LossWeights,
) -> Result<Vec<(&'static str, Tensor<F>)>> {
    use UpdateGroup::*;
    let h = batch.half();
    let x = batch.stacked()?;
    let y = batch.labels();
    let mut terms = Vec::new();
    let on = |v: f64| v != 0.0;

    if group == Contrast {
        if on(w.cr) {
            terms.push(("cr", contrast_term(state, &x, &y, noise, w.cr, false)?));
        }
        return Ok(terms);
    }

    let (caps, c) = state.classifier.encode_class_relevant(&x, Some(&y))?;
    let (post, _) = state.encoder.encode_residual(&x, None)?;
    let r = post.sample_with(&noise.eps)?;
    let (recon, swap) = generate_pair(state, &c, &r, h)?;
    let n = x.shape()[0];
    let fakes = Tensor::concat(&[recon.clone(), swap.clone()], 0)?;

    let needs_critic = on(w.cg) || on(w.cs) || (group == Critic && on(w.dg)) || (group == Generator && on(w.g));
    let (fake_scores, fake_logits) = if needs_critic {
        let (s, l) = state.critic.discriminate_and_classify(&fakes)?;
        (Some(s), Some(l))
    } else {
        (None, None)
    };

    if group == Classifier && on(w.margin) {
        let p = MarginLossParams {
            weight: w.margin,
            ..Default::default()
        };
        terms.push(("margin", margin_loss(&caps, &y, &p)?));
    }
    if group != Critic && on(w.recon) {
        terms.push(("recon", reconstruction_loss(&recon, &x, w.recon)?));
    }
    if group == Classifier && on(w.concept) {
        terms.push(("concept", loss_concept(&c.slice(0, 0, h)?, &c.slice(0, h, h)?, w.concept)?));
    }
    if let Some(fl) = &fake_logits {
        let (l_rec, l_swap) = (fl.slice(0, 0, n)?, fl.slice(0, n, n)?);
        if on(w.cg) {
            // the real-image family depends on the critic parameters only
            let term = if group == Critic {
                let real = state.critic.logits(&x)?;
                loss_cg(&[&real, &l_rec, &l_swap], &y, w.cg)?
            } else {
                loss_cg(&[&l_rec, &l_swap], &y, w.cg)?
            };
            terms.push(("cg", term));
        }
        if on(w.cs) {
            terms.push(("cs", loss_cs(&l_rec, &l_swap, w.cs)?));
        }
    }
    if group != Critic && on(w.rs) {
        let r_of_swap = state.encoder.posterior(&swap)?.mu;
        terms.push(("rs", loss_rs(&swap_halves(&post.mu, h)?, &r_of_swap, w.rs)?));
    }
    if group == Encoder && on(w.kl) {
        terms.push(("kl", loss_kl(&post, w.kl)?));
    }
    if (group == Classifier || group == Generator) && on(w.cr) {
        terms.push(("cr", contrast_term(state, &x, &y, noise, w.cr, group == Classifier)?));
    }
    if let Some(fs) = &fake_scores {
        if group == Critic && on(w.dg) {
            let real = state.critic.scores(&x)?;
            terms.push(("dg", loss_gan(&real, fs, 0.0, w.dg)?.1));
        }
        if group == Generator && on(w.g) {
            terms.push(("g", loss_gan(fs, fs, w.g, 0.0)?.0));
        }
    }
    if group == Critic && on(w.lgp) {
        // both heads, at the generated images
        let points = fakes.detach();
        let labels: Vec<usize> = y.iter().chain(&y).copied().collect();
        let score = loss_lgp(&state.critic.input_gradient(&points)?, w.lgp)?;
        let class = loss_lgp(&state.critic.class_margin_gradient(&points, &labels)?, w.lgp)?;
        terms.push(("lgp", score.add(&class)?));
    }
    Ok(terms)
}

/// L_CR on traversal pairs built from the batch: `c` from C_C (kept in the
/// graph when `through_c`), `r` fixed at the posterior mean.
fn contrast_term<F: Scalar>(
    state: &ModelState<F>,
    x: &Tensor<F>,
    y: &[usize],
    noise: &StepNoise<F>,
    weight: f64,
    through_c: bool,
) -> Result<Tensor<F>> {
    let (_, c) = state.classifier.encode_class_relevant(x, Some(y))?;
    let c = if through_c { c } else { c.detach() };
    let r = state.encoder.posterior(x)?.mu.detach();
    let ca = traverse(&c, &noise.changed, &noise.value_a)?;
    let cb = traverse(&c, &noise.changed, &noise.value_b)?;
    let n = c.shape()[0];
    let img = state
        .generator
        .generate(&Tensor::concat(&[ca, cb], 0)?, &Tensor::concat(&[r.clone(), r], 0)?)?;
    let probs = state.contrast.cr_discriminate(&img.slice(0, 0, n)?, &img.slice(0, n, n)?)?;
    loss_cr(&probs, &noise.changed, weight)
}

/// Loss values of one step, keyed by term name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

/// Sub-update order within a step: critic first, then C_C, E, G, D_CR.
pub const UPDATE_ORDER: [UpdateGroup; 5] = [
    UpdateGroup::Critic,
    UpdateGroup::Classifier,
    UpdateGroup::Encoder,
    UpdateGroup::Generator,
    UpdateGroup::Contrast,
];

/// One pass of the five sub-updates. Each term is logged with the value
/// from the first sub-update that evaluates it.
pub fn train_step<F: Scalar>(
    state: &mut ModelState<F>,
    batch: &PairedBatch<F>,
    cfg: &TrainConfig,
    weights: &LossWeights,
    rng: &mut Rng,
    step: u64,
) -> Result<LossRecord> {
    let noise = StepNoise::draw(2 * batch.half(), &state.config, rng);
    let mut record = LossRecord {
        step,
        values: BTreeMap::new(),
    };
    for group in UPDATE_ORDER {
        let repeats = if group == UpdateGroup::Critic { cfg.critic_steps } else { 1 };
        for _ in 0..repeats {
            update_group(state, group, batch, &noise, cfg, weights, step, &mut record)?;
        }
    }
    state.set_trainable(None);
    Ok(record)
}

/// Evaluates and applies a single group's objective.
#[allow(clippy::too_many_arguments)]
fn update_group<F: Scalar>(
    state: &mut ModelState<F>,
    group: UpdateGroup,
    batch: &PairedBatch<F>,
    noise: &StepNoise<F>,
    cfg: &TrainConfig,
    weights: &LossWeights,
    step: u64,
    record: &mut LossRecord,
) -> Result<()> {
    state.set_trainable(Some(group));
    let terms = group_terms(group, state, batch, noise, weights)?;
    let mut total: Option<Tensor<F>> = None;
    for (name, t) in terms {
        let v = t.item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name, step });
        }
        record.values.entry(name.to_string()).or_insert(v);
        total = Some(match total {
            Some(acc) => acc.add(&t)?,
            None => t,
        });
    }
    if let Some(total) = total {
        if total.requires_grad() {
            total.backward()?;
            state.apply_update(group, &cfg.adam(group));
        }
    }
    Ok(())
}

/// Outcome of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub steps: u64,
    pub last: LossRecord,
    /// Mean of each logged term over each epoch.
    pub epoch_means: Vec<BTreeMap<String, f64>>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where a run writes its artifacts.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<&'a Path>,
}

/// Runs `cfg.epochs` epochs of `len / batch_size` steps each.
pub fn train<F: Scalar>(
    state: &mut ModelState<F>,
    data: &Dataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    mut out: TrainOutputs<'_>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    weights.validate()?;
    if data.classes != state.config.classes || data.image_shape != state.config.image_shape() {
        return Err(Error::ConfigMismatch(format!(
            "dataset has {} classes of shape {:?}; the model expects {} of {:?}",
            data.classes,
            data.image_shape,
            state.config.classes,
            state.config.image_shape()
        )));
    }
    let mut rng = derived(cfg.seed, 0x7a1);
    let steps_per_epoch = (data.len() / cfg.batch_size).max(1);
    let mut summary = TrainSummary::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..steps_per_epoch {
            step += 1;
            let batch = pair_batch(data, cfg.batch_size, &mut rng)?;
            let rec = train_step(state, &batch, cfg, weights, &mut rng, step)?;
            for (k, v) in &rec.values {
                *sums.entry(k.clone()).or_default() += v;
            }
            if let Some(log) = out.log.as_deref_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| Error::Invalid(e.to_string()))?;
                writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
            }
            summary.last = rec;
        }
        let means: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, v / steps_per_epoch as f64)).collect();
        log::info!(
            "epoch {}/{}: {}",
            epoch + 1,
            cfg.epochs,
            means.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ")
        );
        summary.epoch_means.push(means);
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
        if let Some(dir) = out.checkpoint_dir {
            if last || due {
                let path = dir.join(format!("checkpoint-epoch{:04}.icap", epoch + 1));
                save_checkpoint(state, &path)?;
                summary.checkpoints.push(path);
            }
        }
    }
    summary.steps = step;
    Ok(summary)
}

const CKPT_MAGIC: &[u8; 4] = b"ICAP";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    model: ModelConfig,
    optimizer_steps: [u64; 5],
}

fn moment_name(g: UpdateGroup, which: &str, i: usize) -> String {
    format!("optim.{}.{which}.{i}", g.name())
}

/// Serializes parameters and optimizer moments as 32-bit floats.
pub fn checkpoint_bytes<F: Scalar>(state: &ModelState<F>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: state.config.clone(),
        optimizer_steps: std::array::from_fn(|i| state.optim[i].step),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);

    let mut records: Vec<(String, Vec<usize>, Vec<F>)> = state
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
        .collect();
    for g in UpdateGroup::ALL {
        let st = &state.optim[g.index()];
        for (i, (m, v)) in st.m.iter().zip(&st.v).enumerate() {
            records.push((moment_name(g, "m", i), vec![m.len()], m.clone()));
            records.push((moment_name(g, "v", i), vec![v.len()], v.clone()));
        }
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, dims, data) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint<F: Scalar>(state: &ModelState<F>, path: &Path) -> Result<()> {
    write_file(path, &checkpoint_bytes(state)?)
}

/// Rebuilds a model from checkpoint bytes.
pub fn checkpoint_from_bytes<F: Scalar>(bytes: &[u8]) -> Result<ModelState<F>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic (expected ICAP)".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let len = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Corrupt(format!("checkpoint header: {e}")))?;
    let mut state = ModelState::<F>::new(header.model)?;

    let count = r.u32()? as usize;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        let data: Vec<F> = raw
            .chunks_exact(4)
            .map(|b| F::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        records.insert(name, (dims, data));
    }
    if !r.rest().is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.rest().len())));
    }

    for g in UpdateGroup::ALL {
        let names: Vec<String> = state.group_params(g).into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(state.group_params_mut(g)) {
            let (dims, data) = records
                .remove(name)
                .ok_or_else(|| Error::Corrupt(format!("missing tensor `{name}`")))?;
            if dims != p.shape() {
                return Err(Error::ConfigMismatch(format!("tensor `{name}` has shape {dims:?}, expected {:?}", p.shape())));
            }
            *p = Tensor::from_vec(data, &dims)?;
        }
        let st = &mut state.optim[g.index()];
        st.step = header.optimizer_steps[g.index()];
        let n_params = names.len();
        if st.step > 0 {
            for i in 0..n_params {
                let take = |records: &mut BTreeMap<String, (Vec<usize>, Vec<F>)>, which| {
                    records
                        .remove(&moment_name(g, which, i))
                        .map(|(_, d)| d)
                        .ok_or_else(|| Error::Corrupt(format!("missing optimizer moment {which}{i} of `{}`", g.name())))
                };
                st.m.push(take(&mut records, "m")?);
                st.v.push(take(&mut records, "v")?);
            }
        }
    }
    if let Some(name) = records.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor `{name}`")));
    }
    Ok(state)
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<ModelState<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_checkpoint_for<F: Scalar>(path: &Path, expected: &ModelConfig) -> Result<ModelState<F>> {
    let state = load_checkpoint::<F>(path)?;
    if &state.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint was written for {:?}, expected {:?}",
            state.config, expected
        )));
    }
    Ok(state)
}
