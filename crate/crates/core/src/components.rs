//! The networks of the model: capsule classifier C_C, residual encoder E,
//! generator G, the critic/auxiliary classifier D_G/C_G sharing one trunk, and
//! the contrastive discriminator D_CR.

use serde::{Deserialize, Serialize};

use crate::capsnet::{dynamic_routing, one_hot, squash, CapsuleLayerParams, ClassCapsuleOutput};
use crate::error::{Error, Result};
use crate::nn::{he_uniform, Conv2d, ConvTranspose2d, Linear};
use crate::optim::AdamState;
use crate::rng::{derived, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LEAK: f64 = 0.2;
const LOGVAR_MIN: f64 = -30.0;
const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// L, the length of each class capsule.
    pub concept_dim: usize,
    /// R, the length of the residual code.
    pub residual_dim: usize,
    /// Feature maps of the two stride-2 convolutions in every encoder, and in
    /// reverse order of the generator's upsampling stack.
    pub conv_channels: [usize; 2],
    /// Primary capsule types per spatial position.
    pub primary_types: usize,
    pub primary_dim: usize,
    pub routing_iterations: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            classes: 2,
            concept_dim: 4,
            residual_dim: 8,
            conv_channels: [16, 32],
            primary_types: 8,
            primary_dim: 4,
            routing_iterations: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.concept_dim < 2 {
            return bad(format!("concept_dim must be at least 2, got {}", self.concept_dim));
        }
        if self.residual_dim < 1 {
            return bad("residual_dim must be at least 1".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.height < 4 || self.width < 4 || self.height % 4 != 0 || self.width % 4 != 0 {
            return bad(format!(
                "image size {}x{} must be a positive multiple of 4",
                self.height, self.width
            ));
        }
        if self.channels == 0 || self.conv_channels.contains(&0) || self.primary_types == 0 || self.primary_dim == 0 {
            return bad("channel counts and capsule sizes must be positive".into());
        }
        if self.routing_iterations == 0 {
            return bad("routing_iterations must be at least 1".into());
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn n_primary(&self) -> usize {
        self.primary_types * (self.height / 4) * (self.width / 4)
    }

    fn trunk_features(&self) -> usize {
        self.conv_channels[1] * (self.height / 4) * (self.width / 4)
    }
}

/// An observation's representation split into its class-relevant part `c`
/// (one class capsule) and its residual `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentPair {
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub class_index: usize,
}

/// Diagonal Gaussian `N(mu, exp(logvar))`, both `[batch, R]`.
#[derive(Debug, Clone)]
pub struct ResidualPosterior<F: Scalar> {
    pub mu: Tensor<F>,
    pub logvar: Tensor<F>,
}

impl<F: Scalar> ResidualPosterior<F> {
    /// `mu + exp(logvar / 2) · eps`
    pub fn sample_with(&self, eps: &Tensor<F>) -> Result<Tensor<F>> {
        let std = self.logvar.mul_scalar(0.5).exp();
        Ok(self.mu.add(&std.mul(eps)?)?)
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Tensor<F>> {
        self.sample_with(&Tensor::randn(self.mu.shape(), rng))
    }
}

/// Two stride-2 convolutions with leaky activations; input side is 4× the
/// output side.
#[derive(Debug, Clone)]
pub struct ConvTrunk<F: Scalar> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
}

/// Trunk activations kept for the closed-form input gradient.
pub struct TrunkActivations<F: Scalar> {
    pub pre1: Tensor<F>,
    pub pre2: Tensor<F>,
    /// `[batch, features]`
    pub features: Tensor<F>,
}

impl<F: Scalar> ConvTrunk<F> {
    fn new(input_channels: usize, widths: [usize; 2], rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::new(input_channels, widths[0], 4, 2, 1, rng),
            conv2: Conv2d::new(widths[0], widths[1], 4, 2, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<TrunkActivations<F>> {
        let pre1 = self.conv1.forward(x)?;
        let pre2 = self.conv2.forward(&pre1.leaky_relu(LEAK))?;
        let features = pre2.leaky_relu(LEAK).flatten_batch()?;
        Ok(TrunkActivations { pre1, pre2, features })
    }

    fn params<'a>(&'a self, prefix: &'a str) -> Vec<(String, &'a Tensor<F>)> {
        named(prefix, "conv1", self.conv1.params())
            .chain(named(prefix, "conv2", self.conv2.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let [a, b] = self.conv1.params_mut();
        let [c, d] = self.conv2.params_mut();
        vec![a, b, c, d]
    }
}

fn named<'a, F: Scalar>(
    prefix: &'a str,
    layer: &'a str,
    params: [(&'static str, &'a Tensor<F>); 2],
) -> impl Iterator<Item = (String, &'a Tensor<F>)> + 'a {
    params.into_iter().map(move |(n, t)| (format!("{prefix}.{layer}.{n}"), t))
}

/// Slope of the leaky activation at each pre-activation value.
fn leaky_mask<F: Scalar>(pre: &Tensor<F>) -> Tensor<F> {
    let slope = F::of(LEAK);
    let data = pre.data().iter().map(|&v| if v > F::zero() { F::one() } else { slope }).collect();
    Tensor::from_vec(data, pre.shape()).expect("same shape")
}

/// C_C: convolution, primary capsules, routed class capsules.
#[derive(Debug, Clone)]
pub struct CapsuleClassifier<F: Scalar> {
    pub conv: Conv2d<F>,
    pub primary: Conv2d<F>,
    /// `[n_primary, classes, concept_dim, primary_dim]`
    pub weights: Tensor<F>,
    primary_types: usize,
    primary_dim: usize,
    routing_iterations: usize,
}

impl<F: Scalar> CapsuleClassifier<F> {
    fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let n_pc = cfg.n_primary();
        Self {
            conv: Conv2d::new(cfg.channels, cfg.conv_channels[0], 4, 2, 1, rng),
            primary: Conv2d::new(cfg.conv_channels[0], cfg.primary_types * cfg.primary_dim, 4, 2, 1, rng),
            // every class capsule sums predictions from all primary capsules
            weights: he_uniform(
                &[n_pc, cfg.classes, cfg.concept_dim, cfg.primary_dim],
                (n_pc * cfg.primary_dim) as f64,
                rng,
            ),
            primary_types: cfg.primary_types,
            primary_dim: cfg.primary_dim,
            routing_iterations: cfg.routing_iterations,
        }
    }

    /// Squashed primary capsules `[batch, n_primary, primary_dim]`.
    pub fn primary_capsules(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let h = self.conv.forward(x)?.relu();
        let p = self.primary.forward(&h)?;
        let (n, hh, ww) = (p.shape()[0], p.shape()[2], p.shape()[3]);
        let (t, d) = (self.primary_types, self.primary_dim);
        let caps = p
            .reshape(&[n, t, d, hh, ww])?
            .permute(&[0, 1, 3, 4, 2])?
            .reshape(&[n, t * hh * ww, d])?;
        squash(&caps, 2)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<ClassCapsuleOutput<F>> {
        let u = self.primary_capsules(x)?;
        let (out, _) = dynamic_routing(
            &u,
            &CapsuleLayerParams {
                weights: self.weights.clone(),
                routing_iterations: self.routing_iterations,
            },
        )?;
        Ok(out)
    }

    /// Full capsule output and the selected rows `c` (`[batch, L]`): row `y`
    /// when labels are given, otherwise the longest capsule.
    pub fn encode_class_relevant(&self, x: &Tensor<F>, y: Option<&[usize]>) -> Result<(ClassCapsuleOutput<F>, Tensor<F>)> {
        let out = self.forward(x)?;
        let c = match y {
            Some(labels) => out.select(labels)?,
            None => out.select(&out.predicted())?,
        };
        Ok((out, c))
    }

    fn params(&self) -> Vec<(String, &Tensor<F>)> {
        named("classifier", "conv", self.conv.params())
            .chain(named("classifier", "primary", self.primary.params()))
            .chain(std::iter::once(("classifier.routing.weight".to_string(), &self.weights)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let [a, b] = self.conv.params_mut();
        let [c, d] = self.primary.params_mut();
        vec![a, b, c, d, &mut self.weights]
    }
}

/// E: convolutional encoder to a diagonal Gaussian over `r`.
#[derive(Debug, Clone)]
pub struct ResidualEncoder<F: Scalar> {
    pub trunk: ConvTrunk<F>,
    pub head: Linear<F>,
    residual_dim: usize,
}

impl<F: Scalar> ResidualEncoder<F> {
    fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            trunk: ConvTrunk::new(cfg.channels, cfg.conv_channels, rng),
            head: Linear::new(cfg.trunk_features(), 2 * cfg.residual_dim, rng),
            residual_dim: cfg.residual_dim,
        }
    }

    pub fn posterior(&self, x: &Tensor<F>) -> Result<ResidualPosterior<F>> {
        let h = self.head.forward(&self.trunk.forward(x)?.features)?;
        let r = self.residual_dim;
        Ok(ResidualPosterior {
            mu: h.slice(1, 0, r)?,
            logvar: h.slice(1, r, r)?.clamp(LOGVAR_MIN, LOGVAR_MAX),
        })
    }

    /// Posterior and a code: a reparameterized sample when `rng` is given,
    /// the mean otherwise.
    pub fn encode_residual(&self, x: &Tensor<F>, rng: Option<&mut Rng>) -> Result<(ResidualPosterior<F>, Tensor<F>)> {
        let post = self.posterior(x)?;
        let r = match rng {
            Some(rng) => post.sample(rng)?,
            None => post.mu.clone(),
        };
        Ok((post, r))
    }

    fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut p = self.trunk.params("encoder");
        p.extend(named("encoder", "head", self.head.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// G: `c ⊕ r` to an image in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Generator<F: Scalar> {
    pub fc: Linear<F>,
    pub up1: ConvTranspose2d<F>,
    pub up2: ConvTranspose2d<F>,
    base: [usize; 3],
    latent: [usize; 2],
}

impl<F: Scalar> Generator<F> {
    fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let base = [cfg.conv_channels[1], cfg.height / 4, cfg.width / 4];
        Self {
            fc: Linear::new(cfg.concept_dim + cfg.residual_dim, base.iter().product(), rng),
            up1: ConvTranspose2d::new(cfg.conv_channels[1], cfg.conv_channels[0], 4, 2, 1, rng),
            up2: ConvTranspose2d::new(cfg.conv_channels[0], cfg.channels, 4, 2, 1, rng),
            base,
            latent: [cfg.concept_dim, cfg.residual_dim],
        }
    }

    /// `c: [batch, L]`, `r: [batch, R]` to `[batch, channels, h, w]`.
    pub fn generate(&self, c: &Tensor<F>, r: &Tensor<F>) -> Result<Tensor<F>> {
        let ok = c.rank() == 2 && r.rank() == 2 && c.shape()[0] == r.shape()[0];
        if !ok || c.shape()[1] != self.latent[0] || r.shape()[1] != self.latent[1] {
            return Err(Error::Invalid(format!(
                "generator expects c [n, {}] and r [n, {}], got {:?} and {:?}",
                self.latent[0],
                self.latent[1],
                c.shape(),
                r.shape()
            )));
        }
        let n = c.shape()[0];
        let z = Tensor::concat(&[c.clone(), r.clone()], 1)?;
        let h = self.fc.forward(&z)?.relu();
        let h = h.reshape(&[n, self.base[0], self.base[1], self.base[2]])?;
        let h = self.up1.forward(&h)?.relu();
        let t = self.up2.forward(&h)?.tanh();
        Ok(t.add_scalar(1.0).mul_scalar(0.5))
    }

    fn params(&self) -> Vec<(String, &Tensor<F>)> {
        named("generator", "fc", self.fc.params())
            .chain(named("generator", "up1", self.up1.params()))
            .chain(named("generator", "up2", self.up2.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let [a, b] = self.fc.params_mut();
        let [c, d] = self.up1.params_mut();
        let [e, f] = self.up2.params_mut();
        vec![a, b, c, d, e, f]
    }
}

/// D_G and C_G: one trunk, an unbounded score head and a class-logit head.
#[derive(Debug, Clone)]
pub struct Critic<F: Scalar> {
    pub trunk: ConvTrunk<F>,
    pub score: Linear<F>,
    pub classify: Linear<F>,
}

impl<F: Scalar> Critic<F> {
    fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            trunk: ConvTrunk::new(cfg.channels, cfg.conv_channels, rng),
            score: Linear::new(cfg.trunk_features(), 1, rng),
            classify: Linear::new(cfg.trunk_features(), cfg.classes, rng),
        }
    }

    /// Scores `[batch]` and logits `[batch, k]`.
    pub fn discriminate_and_classify(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let f = self.trunk.forward(x)?.features;
        let n = x.shape()[0];
        Ok((self.score.forward(&f)?.reshape(&[n])?, self.classify.forward(&f)?))
    }

    pub fn logits(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.classify.forward(&self.trunk.forward(x)?.features)
    }

    pub fn scores(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let n = x.shape()[0];
        Ok(self.score.forward(&self.trunk.forward(x)?.features)?.reshape(&[n])?)
    }

    /// Gradient of each sample's score with respect to its input image,
    /// itself differentiable in the critic parameters.
    pub fn input_gradient(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.gradient_along(x, &self.score.weight.t()?)
    }

    /// Gradient of each sample's class margin `Σ_t (1 − 2y_t) · logit_t`
    /// with respect to its input image.
    pub fn class_margin_gradient(&self, x: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
        let k = self.classify.weight.shape()[1];
        let signs = one_hot::<F>(labels, k)?.mul_scalar(-2.0).add_scalar(1.0);
        self.gradient_along(x, &signs.matmul(&self.classify.weight.t()?)?)
    }

    /// Input gradient of `dir · features`, with `dir` of shape `[1 or n, F]`.
    ///
    /// The features are `leaky(conv2(leaky(conv1(x))))`, so the gradient is
    /// the chain of transposed convolutions applied to `dir`, with each leaky
    /// activation replaced by its (locally constant) slope.
    fn gradient_along(&self, x: &Tensor<F>, dir: &Tensor<F>) -> Result<Tensor<F>> {
        let acts = self.trunk.forward(&x.detach())?;
        let s2 = acts.pre2.shape().to_vec();
        let w = dir.reshape(&[dir.shape()[0], s2[1], s2[2], s2[3]])?;
        let g2 = w.mul(&leaky_mask(&acts.pre2))?;
        let t = &self.trunk;
        let g1 = g2.conv_transpose2d(&t.conv2.weight, t.conv2.stride, t.conv2.padding)?;
        let g1 = g1.mul(&leaky_mask(&acts.pre1))?;
        Ok(g1.conv_transpose2d(&t.conv1.weight, t.conv1.stride, t.conv1.padding)?)
    }

    fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut p = self.trunk.params("critic");
        p.extend(named("critic", "score", self.score.params()));
        p.extend(named("critic", "classify", self.classify.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.score.params_mut());
        p.extend(self.classify.params_mut());
        p
    }
}

/// D_CR: which concept index changed between two generated images.
#[derive(Debug, Clone)]
pub struct ContrastDiscriminator<F: Scalar> {
    pub trunk: ConvTrunk<F>,
    pub head: Linear<F>,
}

impl<F: Scalar> ContrastDiscriminator<F> {
    fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            trunk: ConvTrunk::new(2 * cfg.channels, cfg.conv_channels, rng),
            head: Linear::new(cfg.trunk_features(), cfg.concept_dim, rng),
        }
    }

    /// Probabilities `[batch, L]` over the changed index.
    pub fn cr_discriminate(&self, xa: &Tensor<F>, xb: &Tensor<F>) -> Result<Tensor<F>> {
        if xa.shape() != xb.shape() {
            return Err(Error::Tensor(crate::tensor::TensorError::ShapeMismatch {
                op: "cr_discriminate",
                left: xa.shape().to_vec(),
                right: xb.shape().to_vec(),
            }));
        }
        let pair = Tensor::concat(&[xa.clone(), xb.clone()], 1)?;
        let logits = self.head.forward(&self.trunk.forward(&pair)?.features)?;
        Ok(logits.softmax(1)?)
    }

    fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut p = self.trunk.params("contrast");
        p.extend(named("contrast", "head", self.head.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Parameter groups updated by separate optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateGroup {
    Classifier,
    Encoder,
    Critic,
    Generator,
    Contrast,
}

impl UpdateGroup {
    pub const ALL: [UpdateGroup; 5] = [
        UpdateGroup::Classifier,
        UpdateGroup::Encoder,
        UpdateGroup::Critic,
        UpdateGroup::Generator,
        UpdateGroup::Contrast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateGroup::Classifier => "classifier",
            UpdateGroup::Encoder => "encoder",
            UpdateGroup::Critic => "critic",
            UpdateGroup::Generator => "generator",
            UpdateGroup::Contrast => "contrast",
        }
    }
}

/// All networks plus one optimizer state per update group.
#[derive(Debug, Clone)]
pub struct ModelState<F: Scalar> {
    pub config: ModelConfig,
    pub classifier: CapsuleClassifier<F>,
    pub encoder: ResidualEncoder<F>,
    pub generator: Generator<F>,
    pub critic: Critic<F>,
    pub contrast: ContrastDiscriminator<F>,
    pub optim: [AdamState<F>; 5],
}

impl<F: Scalar> ModelState<F> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let s = config.seed;
        Ok(Self {
            classifier: CapsuleClassifier::new(&config, &mut derived(s, 1)),
            encoder: ResidualEncoder::new(&config, &mut derived(s, 2)),
            generator: Generator::new(&config, &mut derived(s, 3)),
            critic: Critic::new(&config, &mut derived(s, 4)),
            contrast: ContrastDiscriminator::new(&config, &mut derived(s, 5)),
            optim: Default::default(),
            config,
        })
    }

    pub fn group_params(&self, group: UpdateGroup) -> Vec<(String, &Tensor<F>)> {
        match group {
            UpdateGroup::Classifier => self.classifier.params(),
            UpdateGroup::Encoder => self.encoder.params(),
            UpdateGroup::Critic => self.critic.params(),
            UpdateGroup::Generator => self.generator.params(),
            UpdateGroup::Contrast => self.contrast.params(),
        }
    }

    pub fn group_params_mut(&mut self, group: UpdateGroup) -> Vec<&mut Tensor<F>> {
        match group {
            UpdateGroup::Classifier => self.classifier.params_mut(),
            UpdateGroup::Encoder => self.encoder.params_mut(),
            UpdateGroup::Critic => self.critic.params_mut(),
            UpdateGroup::Generator => self.generator.params_mut(),
            UpdateGroup::Contrast => self.contrast.params_mut(),
        }
    }

    /// Every parameter of every network, named.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        UpdateGroup::ALL.iter().flat_map(|&g| self.group_params(g)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuilds every parameter as a fresh leaf that records gradients only
    /// when it belongs to `group`.
    pub fn set_trainable(&mut self, group: Option<UpdateGroup>) {
        for g in UpdateGroup::ALL {
            let on = group == Some(g);
            for p in self.group_params_mut(g) {
                *p = p.leaf(on);
            }
        }
    }

    /// One optimizer step on `group` from its accumulated gradients.
    pub fn apply_update(&mut self, group: UpdateGroup, cfg: &crate::optim::AdamConfig) {
        let mut state = std::mem::take(&mut self.optim[group.index()]);
        state.step(cfg, self.group_params_mut(group));
        self.optim[group.index()] = state;
    }

    /// Inference-mode latent pair of each sample: the longest capsule and the
    /// posterior mean.
    pub fn latent_pairs(&self, x: &Tensor<F>) -> Result<Vec<LatentPair>> {
        let (out, c) = self.classifier.encode_class_relevant(x, None)?;
        let (_, r) = self.encoder.encode_residual(x, None)?;
        let (l, rd) = (self.config.concept_dim, self.config.residual_dim);
        Ok(out
            .predicted()
            .into_iter()
            .enumerate()
            .map(|(i, class_index)| LatentPair {
                c: c.data()[i * l..][..l].iter().map(|v| v.as_f64()).collect(),
                r: r.data()[i * rd..][..rd].iter().map(|v| v.as_f64()).collect(),
                class_index,
            })
            .collect())
    }
}
