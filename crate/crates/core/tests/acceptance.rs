//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line; the trained-model criteria share their training runs.

mod support;

use std::collections::BTreeMap;

use icaps::capsnet::{dynamic_routing, margin_loss, reconstruction_loss, squash, CapsuleLayerParams, ClassCapsuleOutput, MarginLossParams};
use icaps::components::{ModelConfig, ModelState, ResidualPosterior};
use icaps::data::{generate_synthetic, Dataset, FactorTable, Split, SyntheticSpec};
use icaps::eval::{
    accuracy_c, distinctness_score, equal_frequency_bins, mi_estimate, mutual_information, residual_probe, swap_accuracy,
    swap_pairs, traversal_grid, MIEstimate, ProbeConfig,
};
use icaps::losses::{loss_cg, loss_concept, loss_cr, loss_cs, loss_gan, loss_kl, loss_lgp, loss_rs, LossWeights};
use icaps::rng::seeded;
use icaps::trainer::{checkpoint_bytes, checkpoint_from_bytes, train, GroupRates, LossRecord, TrainConfig, TrainOutputs};
use icaps::Tensor;
use rand::Rng as _;
use support::gradients::gradient_suite;

type T = Tensor<f64>;

struct Verdict {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            failed: Vec::new(),
        }
    }

    fn record(&mut self, label: &str, pass: bool, detail: String) {
        let line = format!("[{}] {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed.push(label.to_string());
        }
    }

    fn finish(self) {
        assert!(self.failed.is_empty(), "failed: {:?}", self.failed);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_suite() {
    let start = std::time::Instant::now();
    let checks = gradient_suite();
    let bad: Vec<&str> = checks.iter().filter(|c| !c.ok()).map(|c| c.name.as_str()).collect();
    let worst = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    let fewest = checks.iter().map(|c| c.report.checked).min().unwrap_or(0);
    let elapsed = start.elapsed();
    let mut v = Verdict::new();
    v.record(
        "criterion 1 (gradient suite)",
        bad.is_empty() && elapsed.as_secs() < 120,
        format!(
            "{} checks, worst rel err {worst:.2e}, >= {fewest} coords each, {:.1}s, failures {bad:?}",
            checks.len(),
            elapsed.as_secs_f64()
        ),
    );
    v.finish();
}

// ---------------------------------------------------------------- criterion 2

fn squash_vec(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    let scale = n2.sqrt() / (1.0 + n2);
    s.iter().map(|x| x * scale).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax2(b: [f64; 2]) -> [f64; 2] {
    let m = b[0].max(b[1]);
    let e = [(b[0] - m).exp(), (b[1] - m).exp()];
    [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
}

/// One primary capsule routed to two class capsules, three iterations
/// written out step by step.
fn routing_oracle(u: &[f64; 3], w: &[[[f64; 3]; 2]; 2]) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
    let predict = |j: usize| -> Vec<f64> { w[j].iter().map(|row| dot(row, u)).collect() };
    let (p0, p1) = (predict(0), predict(1));
    let weigh = |c: f64, p: &[f64]| -> Vec<f64> { p.iter().map(|x| c * x).collect() };

    // iteration 1
    let c1 = softmax2([0.0, 0.0]);
    let v0 = squash_vec(&weigh(c1[0], &p0));
    let v1 = squash_vec(&weigh(c1[1], &p1));
    let b = [dot(&p0, &v0), dot(&p1, &v1)];
    // iteration 2
    let c2 = softmax2(b);
    let v0 = squash_vec(&weigh(c2[0], &p0));
    let v1 = squash_vec(&weigh(c2[1], &p1));
    let b = [b[0] + dot(&p0, &v0), b[1] + dot(&p1, &v1)];
    // iteration 3
    let c3 = softmax2(b);
    let v0 = squash_vec(&weigh(c3[0], &p0));
    let v1 = squash_vec(&weigh(c3[1], &p1));
    (vec![v0, v1], vec![c1, c2, c3])
}

#[test]
fn criterion_2_routing_invariants() {
    let mut rng = seeded(21);

    // couplings are distributions at every iteration
    let u = squash(&T::randn(&[3, 12, 4], &mut rng), 2).unwrap();
    let params = CapsuleLayerParams {
        weights: T::randn(&[12, 5, 6, 4], &mut rng),
        routing_iterations: 6,
    };
    let (_, history) = dynamic_routing(&u, &params).unwrap();
    let row_err = history.iter().map(|h| h.max_row_error()).fold(0.0, f64::max);
    let rows_ok = history.len() == 6 && row_err <= 1e-6 && history.iter().all(|h| h.coupling.iter().all(|&c| c >= 0.0));

    // one iteration: uniform couplings
    let single = CapsuleLayerParams {
        weights: params.weights.clone(),
        routing_iterations: 1,
    };
    let (_, h1) = dynamic_routing(&u, &single).unwrap();
    let uniform_err = h1[0].coupling.iter().map(|c| (c - 0.2).abs()).fold(0.0, f64::max);

    // hand-unrolled oracle
    let uv: [f64; 3] = [0.7, -0.4, 1.1];
    let mut w = [[[0.0; 3]; 2]; 2];
    for row in w.iter_mut().flatten().flatten() {
        *row = rng.random_range(-1.0..1.0);
    }
    let flat: Vec<f64> = w.iter().flatten().flatten().copied().collect();
    let params = CapsuleLayerParams {
        weights: T::from_vec(flat, &[1, 2, 2, 3]).unwrap(),
        routing_iterations: 3,
    };
    let (out, hist) = dynamic_routing(&T::from_vec(uv.to_vec(), &[1, 3]).unwrap(), &params).unwrap();
    let (v_ref, c_ref) = routing_oracle(&uv, &w);
    let mut diff: f64 = 0.0;
    for (j, v) in v_ref.iter().enumerate() {
        for (l, x) in v.iter().enumerate() {
            diff = diff.max((out.capsules.data()[j * 2 + l] - x).abs());
        }
    }
    for (h, c) in hist.iter().zip(&c_ref) {
        diff = diff.max((h.coupling[0] - c[0]).abs()).max((h.coupling[1] - c[1]).abs());
    }

    let mut v = Verdict::new();
    v.record(
        "criterion 2 (routing invariants)",
        rows_ok && uniform_err <= 1e-6 && diff < 1e-6,
        format!("max row-sum error {row_err:.1e}, one-iteration deviation {uniform_err:.1e}, oracle max abs diff {diff:.1e}"),
    );
    v.finish();
}

// ---------------------------------------------------------------- criterion 3

fn t(v: &[f64], shape: &[usize]) -> T {
    T::from_vec(v.to_vec(), shape).unwrap()
}

/// Capsules `[1, k, 4]` along the first axis with the given lengths.
fn caps(norms: &[f64]) -> ClassCapsuleOutput<f64> {
    let mut data = vec![0.0; norms.len() * 4];
    for (j, &n) in norms.iter().enumerate() {
        data[j * 4] = n;
    }
    ClassCapsuleOutput {
        capsules: t(&data, &[1, norms.len(), 4]),
    }
}

#[test]
fn criterion_3_analytic_loss_values() {
    const EXACT: f64 = 1e-12;
    let unit = MarginLossParams::default();
    let m = |norms: &[f64], y: usize| margin_loss(&caps(norms), &[y], &unit).unwrap().item();
    let a = t(&[0.3, -1.2, 2.0, 0.5], &[2, 2]);
    let cases: Vec<(&str, f64, f64)> = vec![
        ("margin at thresholds", m(&[0.9, 0.1, 0.1], 0), 0.0),
        ("margin with empty capsules", m(&[0.0, 0.0], 0), 0.81),
        ("margin substitution", m(&[0.5, 0.6, 0.0], 0), 0.285),
        ("cr uniform L=4", loss_cr(&t(&[0.25; 4], &[1, 4]), &[2], 1.0).unwrap().item(), 4f64.ln()),
        ("cr certain", loss_cr(&t(&[0.0, 1.0, 0.0, 0.0], &[1, 4]), &[1], 1.0).unwrap().item(), 0.0),
        (
            "kl standard normal",
            loss_kl(&ResidualPosterior { mu: T::zeros(&[3, 8]), logvar: T::zeros(&[3, 8]) }, 1.0).unwrap().item(),
            0.0,
        ),
        (
            "kl unit mean",
            loss_kl(&ResidualPosterior { mu: t(&[1.0], &[1, 1]), logvar: t(&[0.0], &[1, 1]) }, 1.0).unwrap().item(),
            0.5,
        ),
        ("cs identical", loss_cs(&a, &a, 1.0).unwrap().item(), 0.0),
        ("rs identical", loss_rs(&a, &a, 1.0).unwrap().item(), 0.0),
        ("cs opposite one-hot", loss_cs(&t(&[1.0, 0.0], &[1, 2]), &t(&[0.0, 1.0], &[1, 2]), 1.0).unwrap().item(), 2.0),
        ("rs unit difference", loss_rs(&t(&[0.0, 1.0], &[1, 2]), &t(&[0.0, 0.0], &[1, 2]), 1.0).unwrap().item(), 1.0),
        (
            "concept minimum gap",
            loss_concept(&t(&[0.5, 0.2, 0.9, 0.4], &[1, 4]), &T::zeros(&[1, 4]), 1.0).unwrap().item(),
            -0.2,
        ),
        ("cg symmetric logits", loss_cg(&[&t(&[1.3, 1.3], &[1, 2])], &[1], 1.0).unwrap().item(), 0.0),
        ("generator loss", loss_gan(&t(&[0.0, 0.0], &[2]), &t(&[2.0, 2.0], &[2]), 1.0, 1.0).unwrap().0.item(), -2.0),
        ("critic loss equal means", loss_gan(&t(&[1.0, 3.0], &[2]), &t(&[2.0, 2.0], &[2]), 1.0, 1.0).unwrap().1.item(), 0.0),
        ("lgp zero critic", loss_lgp(&T::zeros(&[2, 1, 4, 4]), 10.0).unwrap().item(), 0.0),
        ("lgp unit gradient", loss_lgp(&t(&[0.6, 0.8], &[1, 2]), 10.0).unwrap().item(), 0.0),
        (
            "reconstruction zeros vs ones",
            reconstruction_loss(&T::zeros(&[1, 1, 2, 2]), &T::ones(&[1, 1, 2, 2]), 1.0).unwrap().item(),
            4.0,
        ),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| !close(*got, *want, EXACT))
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    let mut v = Verdict::new();
    v.record(
        "criterion 3 (analytic loss values)",
        bad.is_empty(),
        format!("{} values checked, mismatches {bad:?}", cases.len()),
    );
    v.finish();
}

// ---------------------------------------------------------------- criterion 4

/// Plug-in MI from an explicit joint count table over (bin, label).
fn table_mi(bins: &[usize], labels: &[usize]) -> f64 {
    let n = bins.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&b, &y) in bins.iter().zip(labels) {
        *joint.entry((b, y)).or_default() += 1.0 / n;
        *pb.entry(b).or_default() += 1.0 / n;
        *py.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(b, y), &p)| p * (p / (pb[&b] * py[&y])).ln()).sum()
}

#[test]
fn criterion_4_mutual_information_oracle() {
    let n = 10_000;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let values: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let dependent = mutual_information(&values, &labels, 20).unwrap();

    let mut rng = seeded(44);
    let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let random_labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let independent = mutual_information(&noise, &random_labels, 20).unwrap();

    // 8 samples, 2 equal-frequency bins: counts [[3, 1], [1, 3]]
    let small_values: [f64; 8] = [0.9, 0.1, 0.6, 0.3, 0.8, 0.2, 0.7, 0.4];
    let small_labels = [1, 0, 0, 0, 1, 1, 1, 0];
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| small_values[a].total_cmp(&small_values[b]));
    let mut rank_bins = vec![0; 8];
    for (rank, &i) in order.iter().enumerate() {
        rank_bins[i] = rank * 2 / 8;
    }
    let oracle = table_mi(&rank_bins, &small_labels);
    let closed_form = 0.75 * 1.5f64.ln() - 0.25 * 2f64.ln();
    let estimate = mutual_information(&small_values, &small_labels, 2).unwrap();
    let bins_agree = equal_frequency_bins(&small_values, 2) == rank_bins;

    let mut v = Verdict::new();
    v.record(
        "criterion 4 (mutual information oracle)",
        close(dependent, 2f64.ln(), 0.02)
            && independent < 0.02
            && close(estimate, oracle, 1e-9)
            && close(oracle, closed_form, 1e-12)
            && bins_agree,
        format!(
            "dependent {dependent:.6} (log 2 = {:.6}), independent {independent:.6}, table {estimate:.12} vs oracle {oracle:.12}",
            2f64.ln()
        ),
    );
    v.finish();
}

// ----------------------------------------------------------- criteria 5 to 9

const TRAIN_N: usize = 2000;
const TEST_N: usize = 500;
const EPOCHS: usize = 16;
const SWAP_PAIRS: usize = 200;
const TRAVERSAL_BASES: usize = 100;
const TRAVERSAL_STEPS: usize = 8;

fn datasets() -> (Dataset, Dataset, SyntheticSpec, FactorTable) {
    let spec = SyntheticSpec::default();
    let (train, _) = generate_synthetic(&SyntheticSpec { seed: 1, ..spec.clone() }, TRAIN_N).unwrap();
    let (test, factors) = generate_synthetic(&SyntheticSpec { seed: 2, ..spec.clone() }, TEST_N).unwrap();
    let idx: Vec<usize> = (0..test.len()).collect();
    (train, test.subset(&idx, Split::Test).unwrap(), spec, factors)
}

fn model_config() -> ModelConfig {
    ModelConfig {
        concept_dim: 8,
        residual_dim: 2,
        ..Default::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        batch_size: 32,
        lr: GroupRates::uniform(2e-4),
        ..Default::default()
    }
}

fn full_weights() -> LossWeights {
    LossWeights {
        kl: 50.0,
        rs: 5.0,
        cr: 2.0,
        ..Default::default()
    }
}

struct Run {
    state: ModelState<f32>,
    last: LossRecord,
    epoch_means: Vec<BTreeMap<String, f64>>,
    log: Vec<LossRecord>,
    seconds: f64,
}

fn run(train_set: &Dataset, weights: &LossWeights) -> Run {
    let start = std::time::Instant::now();
    let mut state = ModelState::<f32>::new(model_config()).unwrap();
    let mut log = Vec::new();
    let summary = train(
        &mut state,
        train_set,
        &train_config(),
        weights,
        TrainOutputs {
            log: Some(&mut log),
            checkpoint_dir: None,
        },
    )
    .unwrap();
    let log = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    Run {
        state,
        last: summary.last,
        epoch_means: summary.epoch_means,
        log,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, PartialEq)]
struct Metrics {
    accuracy: f64,
    probe: f64,
    chance: f64,
    mi: MIEstimate,
    swap: f64,
    distinctness: f64,
}

fn mean_distinctness(state: &ModelState<f32>, test: &Dataset) -> f64 {
    let total: f64 = (0..TRAVERSAL_BASES)
        .map(|i| {
            let grid = traversal_grid(state, &test.images::<f32>(&[i]), TRAVERSAL_STEPS).unwrap();
            distinctness_score(&grid).unwrap()
        })
        .sum();
    total / TRAVERSAL_BASES as f64
}

fn evaluate(state: &ModelState<f32>, train_set: &Dataset, test: &Dataset) -> Metrics {
    let probe = residual_probe(state, train_set, test, &ProbeConfig::default()).unwrap();
    Metrics {
        accuracy: accuracy_c(state, test).unwrap(),
        probe: probe.accuracy,
        chance: probe.chance,
        mi: mi_estimate(state, test, 20).unwrap(),
        swap: swap_accuracy(state, test, &swap_pairs(test, SWAP_PAIRS, 7)).unwrap(),
        distinctness: mean_distinctness(state, test),
    }
}

/// Accuracy of D_CR at naming the changed concept of fresh traversal pairs.
fn contrast_accuracy(state: &ModelState<f32>, test: &Dataset) -> f64 {
    let mut rng = seeded(99);
    let l = state.config.concept_dim;
    let idx: Vec<usize> = (0..test.len()).collect();
    let pairs = state.latent_pairs(&test.images::<f32>(&idx)).unwrap();
    let (mut ca, mut cb, mut rs, mut changed) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in &pairs {
        let k = rng.random_range(0..l);
        let mut a = p.c.clone();
        let mut b = p.c.clone();
        a[k] = rng.random_range(-1.0..=1.0);
        b[k] = rng.random_range(-1.0..=1.0);
        ca.extend(a.iter().map(|&v| v as f32));
        cb.extend(b.iter().map(|&v| v as f32));
        rs.extend(p.r.iter().map(|&v| v as f32));
        changed.push(k);
    }
    let n = pairs.len();
    let r = Tensor::from_vec(rs, &[n, state.config.residual_dim]).unwrap();
    let xa = state.generator.generate(&Tensor::from_vec(ca, &[n, l]).unwrap(), &r).unwrap();
    let xb = state.generator.generate(&Tensor::from_vec(cb, &[n, l]).unwrap(), &r).unwrap();
    let probs = state.contrast.cr_discriminate(&xa, &xb).unwrap();
    let hits = probs
        .data()
        .chunks(l)
        .zip(&changed)
        .filter(|(row, &k)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == k
        })
        .count();
    hits as f64 / n as f64
}

/// Concept dimension most informative about elongation on the test set, and
/// whether its class-wise mean response to rendered elongation sweeps is
/// monotone within each class band.
fn concept_monotonicity(state: &ModelState<f32>, test: &Dataset, spec: &SyntheticSpec, factors: &FactorTable) -> (usize, bool, Vec<Vec<f64>>) {
    let idx: Vec<usize> = (0..test.len()).collect();
    let pairs = state.latent_pairs(&test.images::<f32>(&idx)).unwrap();
    let elongation_bins = equal_frequency_bins(&factors.elongation, 10);
    let l = state.config.concept_dim;
    let mi: Vec<f64> = (0..l)
        .map(|d| {
            let vals: Vec<f64> = pairs.iter().map(|p| p.c[d]).collect();
            mutual_information(&vals, &elongation_bins, 20).unwrap()
        })
        .collect();
    let dim = (0..l).fold(0, |b, d| if mi[d] > mi[b] { d } else { b });

    let mut rng = seeded(123);
    let nuisances: Vec<((f64, f64), f64, f64)> = (0..32)
        .map(|_| {
            let m = spec.max_shift;
            (
                (rng.random_range(-m..=m), rng.random_range(-m..=m)),
                rng.random_range(spec.scale[0]..=spec.scale[1]),
                rng.random_range(spec.thickness[0]..=spec.thickness[1]),
            )
        })
        .collect();
    let steps = 7;
    let mut curves = Vec::new();
    let mut monotone = true;
    for class in 0..spec.classes {
        let (lo, hi) = spec.band(class);
        let curve: Vec<f64> = (0..steps)
            .map(|s| {
                let e = lo + (hi - lo) * s as f64 / (steps - 1) as f64;
                let pixels: Vec<f32> = nuisances
                    .iter()
                    .flat_map(|&(shift, scale, thick)| {
                        spec.render(e, shift, scale, thick).into_iter().map(|v| ((v * 255.0).round() / 255.0) as f32)
                    })
                    .collect();
                let x = Tensor::from_vec(pixels, &[nuisances.len(), 1, spec.size, spec.size]).unwrap();
                let (out, _) = state.classifier.encode_class_relevant(&x, None).unwrap();
                // the capsule of the band's own class
                let c = out.select(&vec![class; nuisances.len()]).unwrap();
                c.data().chunks(l).map(|row| row[dim] as f64).sum::<f64>() / nuisances.len() as f64
            })
            .collect();
        let rising = curve.windows(2).all(|w| w[1] > w[0]);
        let falling = curve.windows(2).all(|w| w[1] < w[0]);
        monotone &= rising || falling;
        curves.push(curve);
    }
    (dim, monotone, curves)
}

fn fmt_curve(c: &[f64]) -> String {
    c.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

fn bits_equal(a: &ModelState<f32>, b: &ModelState<f32>) -> bool {
    let (pa, pb) = (a.named_params(), b.named_params());
    pa.len() == pb.len()
        && pa.iter().zip(&pb).all(|((na, ta), (nb, tb))| {
            na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

#[test]
fn criteria_5_to_9_trained_models() {
    let (train_set, test, spec, factors) = datasets();
    let mut v = Verdict::new();

    let full = run(&train_set, &full_weights());
    let m = evaluate(&full.state, &train_set, &test);
    println!("full run: {:.0}s, last losses {:?}", full.seconds, full.last.values);

    // criterion 5
    let gap = m.mi.mean_c() - m.mi.mean_r();
    v.record(
        "criterion 5 (informativeness)",
        m.accuracy >= 0.90 && (m.probe - m.chance).abs() <= 0.05 && gap >= 0.1,
        format!(
            "accuracy_c {:.4} (>= 0.90), residual probe {:.4} vs chance {:.2} (within 0.05), mean MI c {:.4} - r {:.4} = {gap:.4} (>= 0.1)",
            m.accuracy,
            m.probe,
            m.chance,
            m.mi.mean_c(),
            m.mi.mean_r()
        ),
    );

    // diagnostics tied to the same run
    let first_epoch: Vec<f64> = full.log.iter().take(TRAIN_N / 32).map(|r| r.values["margin"]).collect();
    let (m_first, m_last) = (first_epoch[0], *first_epoch.last().unwrap());
    v.record(
        "margin loss decreases over the first epoch",
        m_last < m_first,
        format!("step 1 {m_first:.4}, step {} {m_last:.4}", first_epoch.len()),
    );
    let cr_acc = contrast_accuracy(&full.state, &test);
    let l = full.state.config.concept_dim;
    v.record(
        "D_CR recovers the changed concept",
        cr_acc > 1.0 / l as f64,
        format!("argmax accuracy {cr_acc:.3} (chance {:.3})", 1.0 / l as f64),
    );
    let (dim, monotone, curves) = concept_monotonicity(&full.state, &test, &spec, &factors);
    v.record(
        "most elongation-informative concept is monotone in elongation",
        monotone,
        format!(
            "dimension {dim}; class 0 band [{}], class 1 band [{}]",
            fmt_curve(&curves[0]),
            fmt_curve(&curves[1])
        ),
    );

    // criterion 6
    let without = run(
        &train_set,
        &LossWeights {
            cr: 0.0,
            ..full_weights()
        },
    );
    let d_without = mean_distinctness(&without.state, &test);
    v.record(
        "criterion 6 (distinctness with vs without D_CR)",
        m.distinctness < d_without,
        format!(
            "mean distinctness over {TRAVERSAL_BASES} bases, {TRAVERSAL_STEPS} steps: with {:.4}, without {d_without:.4}",
            m.distinctness
        ),
    );

    // criterion 7
    v.record(
        "criterion 7 (swap contract)",
        m.swap >= 0.85,
        format!("C_G labels G(c^i, r^j) as y^i on {:.1}% of {SWAP_PAIRS} pairs (>= 85%)", 100.0 * m.swap),
    );

    // criterion 8
    let again = run(&train_set, &full_weights());
    let m_again = evaluate(&again.state, &train_set, &test);
    let bytes = checkpoint_bytes(&full.state).unwrap();
    let restored = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    let roundtrip = bits_equal(&full.state, &restored) && checkpoint_bytes(&restored).unwrap() == bytes;
    let same_losses = full.last == again.last && full.epoch_means == again.epoch_means && full.log == again.log;
    let same_params = bits_equal(&full.state, &again.state);
    v.record(
        "criterion 8 (determinism)",
        same_losses && same_params && m == m_again && roundtrip,
        format!(
            "identical loss records {same_losses}, parameters {same_params}, eval numbers {}, checkpoint round-trip {roundtrip}",
            m == m_again
        ),
    );

    // criterion 9
    let plain = run(&train_set, &full_weights().plain());
    let plain_acc = accuracy_c(&plain.state, &test).unwrap();
    v.record(
        "criterion 9 (plain capsule classifier)",
        plain_acc >= 0.90,
        format!("accuracy_c {plain_acc:.4} with the disentanglement weights zeroed (>= 0.90)"),
    );

    v.finish();
}
