//! Loss terms of the disentanglement objective. Every function returns a
//! scalar tensor already multiplied by its weight.

use serde::{Deserialize, Serialize};

use crate::capsnet::one_hot;
use crate::components::ResidualPosterior;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub margin: f64,
    pub recon: f64,
    pub cg: f64,
    pub cs: f64,
    pub rs: f64,
    pub concept: f64,
    pub cr: f64,
    pub g: f64,
    pub dg: f64,
    pub lgp: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            margin: 1.0,
            recon: 0.5,
            cg: 1.0,
            cs: 0.1,
            rs: 0.1,
            concept: 0.1,
            cr: 0.5,
            g: 1.0,
            dg: 1.0,
            lgp: 10.0,
            kl: 0.01,
        }
    }
}

impl LossWeights {
    pub fn named(&self) -> [(&'static str, f64); 11] {
        [
            ("margin", self.margin),
            ("recon", self.recon),
            ("cg", self.cg),
            ("cs", self.cs),
            ("rs", self.rs),
            ("concept", self.concept),
            ("cr", self.cr),
            ("g", self.g),
            ("dg", self.dg),
            ("lgp", self.lgp),
            ("kl", self.kl),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!("loss weight `{name}` must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Weights with every disentanglement term switched off: only the margin,
    /// reconstruction and KL terms remain.
    pub fn plain(&self) -> Self {
        Self {
            cg: 0.0,
            cs: 0.0,
            rs: 0.0,
            concept: 0.0,
            cr: 0.0,
            g: 0.0,
            ..*self
        }
    }
}

/// Real pair, latents and the four generated images. The `i` and `j` halves
/// hold different classes row by row.
#[derive(Debug, Clone)]
pub struct SwapBundle<F: Scalar> {
    pub x_i: Tensor<F>,
    pub x_j: Tensor<F>,
    pub y_i: Vec<usize>,
    pub y_j: Vec<usize>,
    pub c_i: Tensor<F>,
    pub c_j: Tensor<F>,
    pub r_i: Tensor<F>,
    pub r_j: Tensor<F>,
    /// `G(c^i, r^i)`
    pub rec_ii: Tensor<F>,
    /// `G(c^j, r^j)`
    pub rec_jj: Tensor<F>,
    /// `G(c^i, r^j)`
    pub swap_ij: Tensor<F>,
    /// `G(c^j, r^i)`
    pub swap_ji: Tensor<F>,
}

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

fn batch_of<F: Scalar>(op: &str, t: &Tensor<F>) -> Result<usize> {
    match t.shape().first() {
        Some(&n) if t.rank() >= 2 && n > 0 => Ok(n),
        _ => Err(Error::Invalid(format!("{op}: expected a batch, got shape {:?}", t.shape()))),
    }
}

/// `λ · Σ_families mean_n Σ_k (1 − 2·y_nk) · logit_nk`, i.e. the signed sum
/// `⟨1 − y, logits⟩ − ⟨y, logits⟩` per sample. Each entry of `families`
/// is `[n, k]` logits labelled by `labels`.
pub fn loss_cg<F: Scalar>(families: &[&Tensor<F>], labels: &[usize], weight: f64) -> Result<Tensor<F>> {
    let mut total: Option<Tensor<F>> = None;
    for logits in families {
        let n = batch_of("loss_cg", logits)?;
        if labels.len() != n {
            return Err(Error::Invalid(format!("loss_cg: {} labels for {n} logit rows", labels.len())));
        }
        let sign = one_hot::<F>(labels, logits.shape()[1])?.mul_scalar(-2.0).add_scalar(1.0);
        let term = logits.mul(&sign)?.sum_all().mul_scalar(1.0 / n as f64);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid("loss_cg: no logit families".into()))?;
    Ok(total.mul_scalar(weight))
}

/// `λ · mean_n ‖a_n − b_n‖²`
fn mean_sq_dist<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    same_shape(op, a, b)?;
    let n = batch_of(op, a)?;
    Ok(a.sub(b)?.square().sum_all().mul_scalar(weight / n as f64))
}

/// Class similarity between C_G logits of `G(c^i, r^i)` and `G(c^i, r^j)`.
pub fn loss_cs<F: Scalar>(logits_ii: &Tensor<F>, logits_ij: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    mean_sq_dist("loss_cs", logits_ii, logits_ij, weight)
}

/// Residual similarity between `r^i` and the encoding of `G(c^j, r^i)`.
pub fn loss_rs<F: Scalar>(r: &Tensor<F>, r_of_swap: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    mean_sq_dist("loss_rs", r, r_of_swap, weight)
}

/// `−λ · min_l |mean(c^i)_l − mean(c^j)_l|`, ties to the lowest `l`.
pub fn loss_concept<F: Scalar>(c_i: &Tensor<F>, c_j: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    if c_i.rank() != 2 || c_j.rank() != 2 || c_i.shape()[1] != c_j.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "loss_concept",
            left: c_i.shape().to_vec(),
            right: c_j.shape().to_vec(),
        }
        .into());
    }
    if c_i.shape()[0] == 0 || c_j.shape()[0] == 0 {
        return Err(Error::Invalid("loss_concept: empty batch".into()));
    }
    let gap = c_i.mean_axis(0, false)?.sub(&c_j.mean_axis(0, false)?)?.abs();
    let l = argmin(gap.data());
    let pick = one_hot::<F>(&[l], gap.numel())?.reshape(&[gap.numel()])?;
    Ok(gap.mul(&pick)?.sum_all().mul_scalar(-weight))
}

fn argmin<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// `−λ · mean_n log p_n[l_n]` for D_CR probabilities `[n, L]`.
pub fn loss_cr<F: Scalar>(probs: &Tensor<F>, changed: &[usize], weight: f64) -> Result<Tensor<F>> {
    let n = batch_of("loss_cr", probs)?;
    if changed.len() != n {
        return Err(Error::Invalid(format!("loss_cr: {} indices for {n} rows", changed.len())));
    }
    let picked = probs.mul(&one_hot(changed, probs.shape()[1])?)?.sum_axis(1, false)?;
    Ok(picked.log().mean_all().mul_scalar(-weight))
}

/// `(L_G, L_DG) = (−λ_G·E[D(x̂)], λ_DG·(E[D(x̂)] − E[D(x)]))`
pub fn loss_gan<F: Scalar>(real: &Tensor<F>, fake: &Tensor<F>, w_g: f64, w_dg: f64) -> Result<(Tensor<F>, Tensor<F>)> {
    let fake_mean = fake.mean_all();
    let l_g = fake_mean.mul_scalar(-w_g);
    let l_dg = fake_mean.sub(&real.mean_all())?.mul_scalar(w_dg);
    Ok((l_g, l_dg))
}

/// `λ · mean_n (‖g_n‖ − 1)₊²` for input gradients `g` with a leading batch
/// axis.
pub fn loss_lgp<F: Scalar>(input_grad: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    batch_of("loss_lgp", input_grad)?;
    let norms = input_grad.flatten_batch()?.norm_axis(1, false)?;
    Ok(norms.add_scalar(-1.0).relu().square().mean_all().mul_scalar(weight))
}

/// `λ · mean_n ½ Σ (exp(logvar) + mu² − 1 − logvar)`
pub fn loss_kl<F: Scalar>(post: &ResidualPosterior<F>, weight: f64) -> Result<Tensor<F>> {
    same_shape("loss_kl", &post.mu, &post.logvar)?;
    let n = batch_of("loss_kl", &post.mu)?;
    let lv = &post.logvar;
    let terms = lv.exp().add(&post.mu.square())?.sub(lv)?.add_scalar(-1.0);
    Ok(terms.sum_all().mul_scalar(0.5 * weight / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn cg_sign_structure() {
        let logits = t(&[50.0, 0.0, 0.0, 50.0], &[2, 2]);
        let l = loss_cg(&[&logits], &[0, 1], 1.0).unwrap().item();
        assert_eq!(l, -50.0);
        let flat = t(&[0.7, 0.7, -2.0, -2.0], &[2, 2]);
        assert_eq!(loss_cg(&[&flat], &[0, 1], 1.0).unwrap().item(), 0.0);
        assert!(loss_cg::<f64>(&[], &[], 1.0).is_err());
    }

    #[test]
    fn cs_and_rs_examples() {
        let a = t(&[1.0, 0.0], &[1, 2]);
        let b = t(&[0.0, 1.0], &[1, 2]);
        assert_eq!(loss_cs(&a, &a, 1.0).unwrap().item(), 0.0);
        assert_eq!(loss_cs(&a, &b, 1.0).unwrap().item(), 2.0);
        let r = t(&[0.0, 0.0, 0.0], &[1, 3]);
        let s = t(&[0.0, 1.0, 0.0], &[1, 3]);
        assert_eq!(loss_rs(&r, &r, 1.0).unwrap().item(), 0.0);
        assert_eq!(loss_rs(&r, &s, 1.0).unwrap().item(), 1.0);
        assert!(loss_rs(&r, &a, 1.0).is_err());
    }

    #[test]
    fn concept_min_gap() {
        let ci = t(&[0.5, 0.2, 0.9, 0.4], &[1, 4]);
        let cj = t(&[0.0; 4], &[1, 4]);
        assert!((loss_concept(&ci, &cj, 1.0).unwrap().item() + 0.2).abs() < 1e-15);
        assert_eq!(loss_concept(&ci, &ci, 1.0).unwrap().item(), 0.0);
    }

    #[test]
    fn concept_tie_takes_lowest_index() {
        let ci = t(&[0.3, 0.9, 0.3, 0.5], &[1, 4]).requires_grad_();
        let cj = t(&[0.0; 4], &[1, 4]);
        let l = loss_concept(&ci, &cj, 1.0).unwrap();
        assert!((l.item() + 0.3).abs() < 1e-15);
        l.backward().unwrap();
        assert_eq!(ci.grad().unwrap(), vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn concept_is_permutation_equivariant() {
        let ci = t(&[0.1, 0.7, -0.3, 0.2, 0.4, 0.0, 0.5, 0.9], &[2, 4]);
        let cj = t(&[0.3, 0.1, 0.2, 0.6, -0.2, 0.8, 0.1, 0.3], &[2, 4]);
        let perm = [2, 0, 3, 1];
        let p = |x: &Tensor<f64>| {
            let d: Vec<f64> = (0..2).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| x.data()[r * 4 + c]).collect();
            t(&d, &[2, 4])
        };
        let a = loss_concept(&ci, &cj, 1.0).unwrap().item();
        let b = loss_concept(&p(&ci), &p(&cj), 1.0).unwrap().item();
        assert_eq!(a, b);
    }

    #[test]
    fn cr_examples() {
        let sure = t(&[0.0, 1.0, 0.0, 0.0], &[1, 4]);
        assert_eq!(loss_cr(&sure, &[1], 1.0).unwrap().item(), 0.0);
        let uniform = t(&[0.25; 4], &[1, 4]);
        assert!((loss_cr(&uniform, &[3], 1.0).unwrap().item() - 4f64.ln()).abs() < 1e-15);
        assert!(loss_cr(&uniform, &[4], 1.0).is_err());
    }

    #[test]
    fn gan_examples() {
        let real = t(&[1.0, 3.0], &[2]);
        let fake = t(&[2.0, 2.0], &[2]);
        let (g, dg) = loss_gan(&real, &fake, 1.0, 1.0).unwrap();
        assert_eq!(g.item(), -2.0);
        assert_eq!(dg.item(), 0.0);
    }

    #[test]
    fn lgp_hinge() {
        let unit = t(&[0.6, 0.8], &[1, 2]);
        assert_eq!(loss_lgp(&unit, 10.0).unwrap().item(), 0.0);
        let zero = t(&[0.0, 0.0], &[1, 2]);
        assert_eq!(loss_lgp(&zero, 10.0).unwrap().item(), 0.0);
        let big = t(&[3.0, 4.0], &[1, 2]);
        assert_eq!(loss_lgp(&big, 1.0).unwrap().item(), 16.0);
    }

    #[test]
    fn kl_examples() {
        let post = ResidualPosterior {
            mu: t(&[0.0; 8], &[1, 8]),
            logvar: t(&[0.0; 8], &[1, 8]),
        };
        assert_eq!(loss_kl(&post, 1.0).unwrap().item(), 0.0);
        let post = ResidualPosterior {
            mu: t(&[1.0], &[1, 1]),
            logvar: t(&[0.0], &[1, 1]),
        };
        assert_eq!(loss_kl(&post, 1.0).unwrap().item(), 0.5);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            kl: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let plain = LossWeights::default().plain();
        assert_eq!((plain.cg, plain.cr, plain.margin), (0.0, 0.0, 1.0));
    }
}
