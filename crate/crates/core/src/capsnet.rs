//! Capsule primitives: squash, routing by agreement, margin and
//! reconstruction losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `v · ‖v‖ / (1 + ‖v‖²)` along `axis`: keeps the direction, maps the norm
/// into `[0, 1)`.
pub fn squash<F: Scalar>(v: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    let norm = v.norm_axis(axis, true)?;
    let scale = norm.div(&norm.square().add_scalar(1.0))?;
    Ok(v.mul(&scale)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginLossParams {
    pub m_plus: f64,
    pub m_minus: f64,
    /// Weight of the absent-class hinge.
    pub downweight: f64,
    /// λ_M
    pub weight: f64,
}

impl Default for MarginLossParams {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            downweight: 0.5,
            weight: 1.0,
        }
    }
}

impl MarginLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::Invalid(format!(
                "margin thresholds must satisfy 0 < m- < m+ < 1 (got m-={}, m+={})",
                self.m_minus, self.m_plus
            )));
        }
        Ok(())
    }
}

/// Prediction weights of the routed class-capsule layer.
pub struct CapsuleLayerParams<F: Scalar> {
    /// `[n_primary, classes, concept_dim, primary_dim]`
    pub weights: Tensor<F>,
    pub routing_iterations: usize,
}

/// Routing logits `b` and the couplings `softmax_j(b)` for one iteration,
/// both laid out `[batch, n_primary, classes]`.
#[derive(Debug, Clone)]
pub struct CouplingCoefficients<F> {
    pub logits: Vec<F>,
    pub coupling: Vec<F>,
    pub n_primary: usize,
    pub classes: usize,
}

impl<F: Scalar> CouplingCoefficients<F> {
    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.coupling
            .chunks(self.classes)
            .map(|row| (row.iter().map(|v| v.as_f64()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Class capsules for a batch: `[batch, classes, concept_dim]`.
#[derive(Debug, Clone)]
pub struct ClassCapsuleOutput<F: Scalar> {
    pub capsules: Tensor<F>,
}

impl<F: Scalar> ClassCapsuleOutput<F> {
    pub fn batch(&self) -> usize {
        self.capsules.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.capsules.shape()[1]
    }

    pub fn concept_dim(&self) -> usize {
        self.capsules.shape()[2]
    }

    /// Capsule lengths `[batch, classes]`, read as class probabilities.
    pub fn norms(&self) -> Result<Tensor<F>> {
        Ok(self.capsules.norm_axis(2, false)?)
    }

    /// Index of the longest capsule per sample (lowest index on ties).
    pub fn predicted(&self) -> Vec<usize> {
        let k = self.classes();
        let norms = self.norms().expect("rank-3 capsules");
        norms
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, F::neg_infinity()), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect()
    }

    /// Picks capsule `classes[n]` for every sample: `[batch, concept_dim]`.
    /// Equivalent to masking every other capsule to zero and summing.
    pub fn select(&self, classes: &[usize]) -> Result<Tensor<F>> {
        let (n, k) = (self.batch(), self.classes());
        if classes.len() != n {
            return Err(Error::Invalid(format!("{} class indices for a batch of {n}", classes.len())));
        }
        let mask = one_hot::<F>(classes, k)?.reshape(&[n, k, 1])?;
        Ok(self.capsules.mul(&mask)?.sum_axis(1, false)?)
    }
}

/// `[n, k]` one-hot rows.
pub fn one_hot<F: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<F>> {
    let mut data = vec![F::zero(); labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidClass { index: y, classes });
        }
        data[i * classes + y] = F::one();
    }
    Ok(Tensor::from_vec(data, &[labels.len(), classes])?)
}

/// Routing by agreement from primary capsules `[batch, n_primary, primary_dim]`
/// (a rank-2 input is treated as a batch of one).
///
/// Logits start at zero. Each iteration computes couplings with a softmax
/// over classes, the weighted sum of predictions, its squash, and then raises
/// each logit by the agreement between prediction and output. The couplings
/// are treated as constants: gradients reach the primary capsules and the
/// weights only through the last weighted sum and squash.
pub fn dynamic_routing<F: Scalar>(
    primary: &Tensor<F>,
    params: &CapsuleLayerParams<F>,
) -> Result<(ClassCapsuleOutput<F>, Vec<CouplingCoefficients<F>>)> {
    let primary = match primary.rank() {
        2 => primary.reshape(&[1, primary.shape()[0], primary.shape()[1]])?,
        3 => primary.clone(),
        _ => return Err(Error::Invalid(format!("primary capsules must be rank 2 or 3, got {:?}", primary.shape()))),
    };
    if params.routing_iterations == 0 {
        return Err(Error::Invalid("routing_iterations must be at least 1".into()));
    }
    let (batch, n_pc, d_pc) = (primary.shape()[0], primary.shape()[1], primary.shape()[2]);
    let ws = params.weights.shape();
    if ws.len() != 4 || ws[0] != n_pc || ws[3] != d_pc {
        return Err(Error::Invalid(format!(
            "capsule weights {ws:?} incompatible with primary capsules {:?}",
            primary.shape()
        )));
    }
    let (k, l) = (ws[1], ws[2]);

    // predictions û[b,i,j,:] = W[i,j] · u[b,i]
    let u = primary.permute(&[1, 2, 0])?; // [N, d, B]
    let w = params.weights.reshape(&[n_pc, k * l, d_pc])?;
    let u_hat = w.bmm(&u)?.permute(&[2, 0, 1])?.reshape(&[batch, n_pc, k, l])?;
    let uh = u_hat.data();

    let mut logits = vec![F::zero(); batch * n_pc * k];
    let mut history = Vec::with_capacity(params.routing_iterations);
    for it in 0..params.routing_iterations {
        let coupling = softmax_rows(&logits, k);
        history.push(CouplingCoefficients {
            logits: logits.clone(),
            coupling: coupling.clone(),
            n_primary: n_pc,
            classes: k,
        });
        if it + 1 == params.routing_iterations {
            let c = Tensor::from_vec(coupling, &[batch, n_pc, k, 1])?;
            let s = u_hat.mul(&c)?.sum_axis(1, false)?;
            let v = squash(&s, 2)?;
            return Ok((ClassCapsuleOutput { capsules: v }, history));
        }
        // weighted sum and squash on plain values
        let mut v = vec![F::zero(); batch * k * l];
        for b in 0..batch {
            for i in 0..n_pc {
                for j in 0..k {
                    let cij = coupling[(b * n_pc + i) * k + j];
                    let pred = &uh[((b * n_pc + i) * k + j) * l..][..l];
                    let out = &mut v[(b * k + j) * l..][..l];
                    out.iter_mut().zip(pred).for_each(|(o, &p)| *o += cij * p);
                }
            }
        }
        for cap in v.chunks_mut(l) {
            let n2: F = cap.iter().map(|&x| x * x).sum();
            let scale = n2.sqrt() / (F::one() + n2);
            cap.iter_mut().for_each(|x| *x *= scale);
        }
        for b in 0..batch {
            for i in 0..n_pc {
                for j in 0..k {
                    let pred = &uh[((b * n_pc + i) * k + j) * l..][..l];
                    let out = &v[(b * k + j) * l..][..l];
                    let agreement: F = pred.iter().zip(out).map(|(&p, &o)| p * o).sum();
                    logits[(b * n_pc + i) * k + j] += agreement;
                }
            }
        }
    }
    unreachable!("routing loop returns on its last iteration")
}

fn softmax_rows<F: Scalar>(logits: &[F], k: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let e: Vec<F> = row.iter().map(|&x| (x - m).exp()).collect();
        let z: F = e.iter().copied().sum();
        out.extend(e.into_iter().map(|x| x / z));
    }
    out
}

/// `λ_M · mean_n [ max(0, m⁺ − ‖c_y‖)² + ½ Σ_{j≠y} max(0, ‖c_j‖ − m⁻)² ]`
pub fn margin_loss<F: Scalar>(out: &ClassCapsuleOutput<F>, labels: &[usize], p: &MarginLossParams) -> Result<Tensor<F>> {
    let (n, k) = (out.batch(), out.classes());
    if labels.len() != n {
        return Err(Error::Invalid(format!("{} labels for a batch of {n}", labels.len())));
    }
    let present = one_hot::<F>(labels, k)?;
    let absent = present.neg().add_scalar(1.0);
    let norms = out.norms()?;
    let pos = norms.neg().add_scalar(p.m_plus).relu().square();
    let neg = norms.add_scalar(-p.m_minus).relu().square();
    let per_sample = present.mul(&pos)?.add(&absent.mul(&neg)?.mul_scalar(p.downweight))?;
    Ok(per_sample.sum_all().mul_scalar(p.weight / n as f64))
}

/// `λ · mean over the batch of ‖x̂ − x‖²_F`
pub fn reconstruction_loss<F: Scalar>(x_hat: &Tensor<F>, x: &Tensor<F>, weight: f64) -> Result<Tensor<F>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Tensor(crate::tensor::TensorError::ShapeMismatch {
            op: "reconstruction_loss",
            left: x_hat.shape().to_vec(),
            right: x.shape().to_vec(),
        }));
    }
    let n = x.shape()[0];
    Ok(x_hat.sub(x)?.square().sum_all().mul_scalar(weight / n as f64))
}
