//! Finite-difference checks for every differentiable op and loss, in f64.

use icaps::capsnet::{dynamic_routing, margin_loss, reconstruction_loss, squash, CapsuleLayerParams, ClassCapsuleOutput, MarginLossParams};
use icaps::components::{ModelConfig, ModelState, ResidualPosterior};
use icaps::losses::{loss_cg, loss_concept, loss_cr, loss_cs, loss_gan, loss_kl, loss_lgp, loss_rs};
use icaps::rng::seeded;
use icaps::tensor::{grad_check_with, GradCheckConfig, GradCheckReport};
use icaps::{Result, Tensor};

pub type T = Tensor<f64>;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const MIN_COORDS: usize = 20;

pub struct Check {
    pub name: String,
    pub report: GradCheckReport,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.report.passed && self.report.checked >= MIN_COORDS
    }
}

fn randn(shape: &[usize], seed: u64) -> T {
    Tensor::randn(shape, &mut seeded(seed))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> T {
    Tensor::rand_uniform(shape, lo, hi, &mut seeded(seed))
}

/// Random values kept at least 0.1 away from each of `kinks`.
fn away(shape: &[usize], seed: u64, kinks: &[f64]) -> T {
    let base = randn(shape, seed);
    let data = base
        .data()
        .iter()
        .map(|&v| {
            let mut v = v;
            while let Some(&k) = kinks.iter().find(|&&k| (v - k).abs() < 0.1) {
                v = k + if v >= k { 0.15 } else { -0.15 };
            }
            v
        })
        .collect();
    Tensor::from_vec(data, shape).unwrap()
}

/// `Σ w ⊙ t` with fixed random weights, so every output coordinate matters.
fn project(t: &T) -> Result<T> {
    let w = randn(t.shape(), 0xfeed + t.numel() as u64);
    Ok(t.mul(&w)?.sum_all())
}

fn check(out: &mut Vec<Check>, name: &str, x: &T, f: impl Fn(&T) -> Result<T>) {
    let cfg = GradCheckConfig {
        eps: STEP,
        tol: TOLERANCE,
        max_coords: 24,
        seed: 0x5eed ^ out.len() as u64,
        ..Default::default()
    };
    let report = grad_check_with(f, x, &cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    out.push(Check {
        name: name.to_string(),
        report,
    });
}

fn row24() -> T {
    randn(&[24], 6)
}

fn tensor_ops(out: &mut Vec<Check>) {
    let a = randn(&[4, 6], 1);
    let row = randn(&[6], 2);
    let grid = randn(&[4, 6], 3);
    let positive = uniform(&[4, 6], 0.5, 2.0, 4);

    check(out, "add", &a, |x| project(&x.add(&grid)?));
    let wide = randn(&[3, 24], 5);
    check(out, "add (broadcast operand)", &row24(), |x| project(&wide.add(x)?));
    check(out, "sub", &a, |x| project(&grid.sub(x)?));
    check(out, "mul", &a, |x| project(&x.mul(&grid)?));
    check(out, "mul (broadcast operand)", &row24(), |x| project(&x.mul(&wide)?));
    check(out, "add (broadcast result)", &a, |x| project(&x.add(&row)?));
    check(out, "div (numerator)", &a, |x| project(&x.div(&positive)?));
    check(out, "div (denominator)", &positive, |x| project(&grid.div(x)?));
    check(out, "neg", &a, |x| project(&x.neg()));
    check(out, "relu", &away(&[4, 6], 7, &[0.0]), |x| project(&x.relu()));
    check(out, "leaky_relu", &away(&[4, 6], 8, &[0.0]), |x| project(&x.leaky_relu(0.2)));
    check(out, "sigmoid", &a, |x| project(&x.sigmoid()));
    check(out, "tanh", &a, |x| project(&x.tanh()));
    check(out, "exp", &a, |x| project(&x.exp()));
    check(out, "log", &positive, |x| project(&x.log()));
    check(out, "square", &a, |x| project(&x.square()));
    check(out, "sqrt", &positive, |x| project(&x.sqrt()));
    check(out, "abs", &away(&[4, 6], 9, &[0.0]), |x| project(&x.abs()));
    check(out, "mul_scalar", &a, |x| project(&x.mul_scalar(-1.7)));
    check(out, "add_scalar", &a, |x| project(&x.add_scalar(0.3).square()));
    check(out, "clamp", &away(&[4, 6], 10, &[-0.5, 0.5]), |x| project(&x.clamp(-0.5, 0.5)));
    check(out, "shared operand", &a, |x| project(&x.mul(x)?.add(&x.exp())?));

    check(out, "sum_all", &a, |x| Ok(x.sum_all().square()));
    check(out, "mean_all", &a, |x| Ok(x.mean_all().square()));
    check(out, "sum_axis", &randn(&[3, 4, 5], 11), |x| project(&x.sum_axis(1, true)?.square()));
    check(out, "mean_axis", &randn(&[3, 4, 5], 12), |x| project(&x.mean_axis(2, false)?.square()));
    check(out, "norm_axis", &randn(&[6, 4], 13), |x| project(&x.norm_axis(1, false)?));
    check(out, "softmax (last axis)", &randn(&[4, 6], 14), |x| project(&x.softmax(1)?));
    check(out, "softmax (first axis)", &randn(&[4, 6], 15), |x| project(&x.softmax(0)?));

    check(out, "reshape", &a, |x| project(&x.reshape(&[3, 8])?.square()));
    check(out, "flatten_batch", &randn(&[2, 3, 2, 2], 16), |x| project(&x.flatten_batch()?.square()));
    check(out, "permute", &randn(&[2, 3, 4], 17), |x| project(&x.permute(&[2, 0, 1])?.square()));
    check(out, "transpose", &a, |x| project(&x.t()?.matmul(&grid)?));
    check(out, "concat", &a, |x| project(&Tensor::concat(&[grid.clone(), x.clone(), grid.clone()], 1)?.square()));
    check(out, "slice", &a, |x| project(&x.slice(1, 2, 3)?.square()));

    let b = randn(&[6, 5], 18);
    check(out, "matmul (left)", &a, |x| project(&x.matmul(&b)?));
    check(out, "matmul (right)", &b, |x| project(&a.matmul(x)?));
    let p = randn(&[3, 4, 5], 19);
    let q = randn(&[3, 5, 2], 20);
    check(out, "bmm (left)", &p, |x| project(&x.bmm(&q)?));
    check(out, "bmm (right)", &q, |x| project(&p.bmm(x)?));

    let img = randn(&[2, 2, 6, 6], 21);
    let k = randn(&[3, 2, 4, 4], 22);
    check(out, "conv2d (input)", &img, |x| project(&x.conv2d(&k, 2, 1)?));
    check(out, "conv2d (kernel)", &k, |x| project(&img.conv2d(x, 2, 1)?));
    let k3 = randn(&[3, 2, 3, 3], 23);
    check(out, "conv2d (stride 1)", &k3, |x| project(&img.conv2d(x, 1, 0)?));
    let small = randn(&[2, 3, 3, 3], 24);
    let kt = randn(&[3, 2, 4, 4], 25);
    check(out, "conv_transpose2d (input)", &small, |x| project(&x.conv_transpose2d(&kt, 2, 1)?));
    check(out, "conv_transpose2d (kernel)", &kt, |x| project(&small.conv_transpose2d(x, 2, 1)?));
}

fn capsule_ops(out: &mut Vec<Check>) {
    check(out, "squash", &randn(&[5, 4], 30), |x| project(&squash(x, 1)?));

    let primary = randn(&[2, 6, 3], 31).mul_scalar(0.5);
    let weights = randn(&[6, 2, 4, 3], 32).mul_scalar(0.5);
    // A single iteration keeps the couplings uniform and input-independent,
    // so the full derivative equals the one backpropagated.
    check(out, "dynamic_routing (primary)", &primary, |x| {
        let params = CapsuleLayerParams {
            weights: weights.clone(),
            routing_iterations: 1,
        };
        project(&dynamic_routing(x, &params)?.0.capsules)
    });
    check(out, "dynamic_routing (weights)", &weights, |x| {
        let params = CapsuleLayerParams {
            weights: x.clone(),
            routing_iterations: 1,
        };
        project(&dynamic_routing(&primary, &params)?.0.capsules)
    });

    // capsule lengths stay clear of the 0.1 and 0.9 hinges
    let caps = capsules_with_norms(&[0.3, 0.95, 0.5, 0.2, 0.05, 0.7, 0.8, 0.4, 0.6, 0.15], 33);
    let labels = [0, 1, 1, 0, 1];
    let p = MarginLossParams::default();
    check(out, "margin_loss", &caps, |x| {
        margin_loss(&ClassCapsuleOutput { capsules: x.clone() }, &labels, &p)
    });
    let target = uniform(&[2, 1, 4, 4], 0.0, 1.0, 34);
    check(out, "reconstruction_loss", &uniform(&[2, 1, 4, 4], 0.0, 1.0, 35), |x| {
        reconstruction_loss(x, &target, 0.5)
    });
}

/// `[5, 2, 3]` capsules with the given lengths in random directions.
fn capsules_with_norms(norms: &[f64], seed: u64) -> T {
    let dirs = randn(&[10, 3], seed);
    let mut data = Vec::new();
    for (row, &n) in dirs.data().chunks(3).zip(norms) {
        let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / len * n));
    }
    Tensor::from_vec(data, &[5, 2, 3]).unwrap()
}

fn losses(out: &mut Vec<Check>) {
    let labels = [0, 2, 1, 1, 0, 2, 2];
    let fixed = randn(&[7, 3], 40);
    check(out, "loss_cg", &randn(&[7, 3], 41), |x| loss_cg(&[x, &fixed, x], &labels, 0.7));
    check(out, "loss_cs", &randn(&[7, 3], 42), |x| loss_cs(x, &fixed, 0.3));
    let r = randn(&[6, 4], 43);
    check(out, "loss_rs", &randn(&[6, 4], 44), |x| loss_rs(&r, x, 2.0));
    // well-separated per-dimension gaps keep the minimum unique
    let cj = Tensor::from_vec(vec![0.0; 20], &[5, 4]).unwrap();
    let shift = Tensor::from_vec(vec![0.9, -0.4, 1.6, 0.7], &[4]).unwrap();
    let ci = randn(&[5, 4], 45).mul_scalar(0.05).add(&shift).unwrap();
    check(out, "loss_concept", &ci, |x| loss_concept(x, &cj, 0.1));
    check(out, "loss_concept (other class)", &ci, |x| loss_concept(&cj, x, 0.1));
    let changed = [0, 3, 1, 2, 2, 0];
    check(out, "loss_cr", &uniform(&[6, 4], 0.1, 1.0, 46), |x| loss_cr(x, &changed, 0.5));
    let real = randn(&[24], 47);
    check(out, "loss_gan (generator)", &randn(&[24], 48), |x| Ok(loss_gan(&real, x, 1.0, 1.0)?.0));
    check(out, "loss_gan (critic, fake)", &randn(&[24], 49), |x| Ok(loss_gan(&real, x, 1.0, 2.0)?.1));
    check(out, "loss_gan (critic, real)", &randn(&[24], 50), |x| Ok(loss_gan(x, &real, 1.0, 2.0)?.1));
    // per-sample norms well above 1 so the one-sided hinge is active
    check(out, "loss_lgp", &randn(&[4, 1, 3, 3], 51).mul_scalar(1.5), |x| loss_lgp(x, 10.0));
    let logvar = randn(&[5, 4], 52).mul_scalar(0.5);
    let mu = randn(&[5, 4], 53);
    check(out, "loss_kl (mean)", &mu, |x| {
        loss_kl(&ResidualPosterior { mu: x.clone(), logvar: logvar.clone() }, 0.2)
    });
    check(out, "loss_kl (log-variance)", &logvar, |x| {
        loss_kl(&ResidualPosterior { mu: mu.clone(), logvar: x.clone() }, 0.2)
    });
}

fn small_model() -> ModelState<f64> {
    ModelState::new(ModelConfig {
        height: 8,
        width: 8,
        classes: 3,
        conv_channels: [3, 4],
        primary_types: 2,
        primary_dim: 3,
        seed: 9,
        ..Default::default()
    })
    .unwrap()
}

fn through_networks(out: &mut Vec<Check>) {
    let m = small_model();
    let images = uniform(&[3, 1, 8, 8], 0.0, 1.0, 60);
    let labels = [0, 2, 1];

    let fakes = uniform(&[3, 1, 8, 8], 0.0, 1.0, 61);
    let lgp = |critic: &icaps::components::Critic<f64>| -> Result<T> {
        let score = loss_lgp(&critic.input_gradient(&fakes)?.mul_scalar(4.0), 10.0)?;
        let class = loss_lgp(&critic.class_margin_gradient(&fakes, &labels)?.mul_scalar(4.0), 10.0)?;
        Ok(score.add(&class)?)
    };
    check(out, "lgp through critic (conv1 kernel)", &m.critic.trunk.conv1.weight, |x| {
        let mut c = m.critic.clone();
        c.trunk.conv1.weight = x.clone();
        lgp(&c)
    });
    check(out, "lgp through critic (class head)", &m.critic.classify.weight, |x| {
        let mut c = m.critic.clone();
        c.classify.weight = x.clone();
        lgp(&c)
    });

    let a = uniform(&[2, 1, 8, 8], 0.0, 1.0, 62);
    let b = uniform(&[2, 1, 8, 8], 0.0, 1.0, 63);
    check(out, "loss_cr through contrast discriminator", &a, |x| {
        loss_cr(&m.contrast.cr_discriminate(x, &b)?, &[1, 3], 0.5)
    });

    let r = randn(&[5, 8], 64);
    let targets = uniform(&[5, 1, 8, 8], 0.0, 1.0, 66);
    let c = (65..)
        .map(|seed| randn(&[5, 4], seed))
        .find(|c| generator_margin(&m, c, &r) > 0.02)
        .unwrap();
    check(out, "reconstruction through generator (c)", &c, |c| {
        reconstruction_loss(&m.generator.generate(c, &r)?, &targets, 0.5)
    });
    check(out, "critic logits (input)", &images, |x| project(&m.critic.logits(x)?));
    check(out, "kl through encoder (input)", &images, |x| loss_kl(&m.encoder.posterior(x)?, 1.0));
}

/// Distance of the generator's ReLU inputs from zero at `(c, r)`; central
/// differences are only meaningful when no step crosses a kink.
fn generator_margin(m: &ModelState<f64>, c: &T, r: &T) -> f64 {
    let g = &m.generator;
    let n = c.shape()[0];
    let h = g.fc.forward(&Tensor::concat(&[c.clone(), r.clone()], 1).unwrap()).unwrap();
    let base = g.up1.weight.shape()[0];
    let side = ((h.shape()[1] / base) as f64).sqrt() as usize;
    let up = g.up1.forward(&h.relu().reshape(&[n, base, side, side]).unwrap()).unwrap();
    h.data().iter().chain(up.data()).fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Every check, in a fixed order.
pub fn gradient_suite() -> Vec<Check> {
    let mut out = Vec::new();
    tensor_ops(&mut out);
    capsule_ops(&mut out);
    losses(&mut out);
    through_networks(&mut out);
    out
}
