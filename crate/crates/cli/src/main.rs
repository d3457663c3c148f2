use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icaps::components::ModelState;
use icaps::data::{convert_idx, generate_synthetic, load_dataset, parse_config_str, ConfigFile, Dataset, Split, SyntheticSpec};
use icaps::eval::{
    accuracy_c, distinctness_score, emit_report, explain_sample, mi_estimate, ppm_grid, residual_probe, summary_markdown,
    swap_accuracy, swap_grid, swap_pairs, traversal_grid, EvalReport, ProbeConfig,
};
use icaps::trainer::{load_checkpoint, train, TrainOutputs};
use icaps::Error;

#[derive(Parser)]
#[command(name = "icaps", version, about = "Interpretable capsule classifier: training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train all networks and write checkpoints and a JSONL loss log.
    Train {
        /// JSON configuration; absent keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the model and training seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Capsule classifier accuracy, optionally with a full report directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training set for the residual probe in the report.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Accuracy of a small classifier trained on the residual code.
    ProbeResidual {
        #[arg(long)]
        ckpt: PathBuf,
        /// Probe training set.
        #[arg(long)]
        data: PathBuf,
        /// Probe test set; without it the last fifth of `--data` is held out.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-dimension mutual information of c and r with the label, as CSV.
    MiReport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent traversal grid of one sample as a PPM image.
    Traverse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample_id: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstructions and swaps of two differently labelled samples.
    Swap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction, confidence and concept values of one sample, as JSON.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample_id: usize,
        /// JSON array with one name per concept.
        #[arg(long)]
        names: Option<PathBuf>,
    },
    /// Generate the synthetic factor dataset.
    MakeSynth {
        /// JSON synthetic spec; absent keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the ground-truth factors as JSON.
        #[arg(long)]
        factors: Option<PathBuf>,
    },
    /// Convert IDX image and label files into a dataset.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
}

const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Tensor(_) | Error::NonFinite { .. } => 1,
        _ => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    let level = std::env::var("ICAPS_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).format_target(false).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read(path: &Path) -> icaps::Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write(path: &Path, bytes: &[u8]) -> icaps::Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn json<T: serde::Serialize>(v: &T) -> icaps::Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Invalid(e.to_string()))
}

fn model(ckpt: &Path) -> icaps::Result<ModelState<f32>> {
    load_checkpoint(ckpt)
}

fn dataset_for(state: &ModelState<f32>, path: &Path) -> icaps::Result<Dataset> {
    let ds = load_dataset(path, state.config.classes)?;
    if ds.image_shape != state.config.image_shape() {
        return Err(Error::ConfigMismatch(format!(
            "{} holds images of shape {:?}; the model expects {:?}",
            path.display(),
            ds.image_shape,
            state.config.image_shape()
        )));
    }
    Ok(ds)
}

fn sample(ds: &Dataset, id: usize) -> icaps::Result<icaps::Tensor32> {
    if id >= ds.len() {
        return Err(Error::Invalid(format!("sample {id} out of range for {} samples", ds.len())));
    }
    Ok(ds.images(&[id]))
}

fn run(cmd: Command) -> icaps::Result<()> {
    match cmd {
        Command::Train { config, data, out, seed } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = String::from_utf8_lossy(&read(&p)?).into_owned();
                    parse_config_str(&text)?
                }
                None => ConfigFile::default(),
            };
            if let Some(s) = seed {
                cfg.model.seed = s;
                cfg.train.seed = s;
            }
            log::info!("resolved configuration: {}", serde_json::to_string(&cfg).unwrap_or_default());
            let ds = load_dataset(&data, cfg.model.classes)?;
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write(&out.join("config.json"), json(&cfg)?.as_bytes())?;
            let log_path = out.join("train.jsonl");
            let mut log = fs::File::create(&log_path).map_err(|e| Error::Io { path: log_path, source: e })?;
            let mut state = ModelState::<f32>::new(cfg.model.clone())?;
            let summary = train(
                &mut state,
                &ds,
                &cfg.train,
                &cfg.weights,
                TrainOutputs {
                    log: Some(&mut log),
                    checkpoint_dir: Some(&out),
                },
            )?;
            println!("trained {} steps on {} samples", summary.steps, ds.len());
            for p in &summary.checkpoints {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Eval {
            ckpt,
            data,
            train,
            report,
            seed,
        } => {
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let acc = accuracy_c(&state, &ds)?;
            println!("accuracy_c {acc}");
            if let Some(dir) = report {
                let mut r = EvalReport {
                    accuracy_c: Some(acc),
                    mi: Some(mi_estimate(&state, &ds, 20)?),
                    ..Default::default()
                };
                if let Some(train_path) = train {
                    let train_ds = dataset_for(&state, &train_path)?;
                    let cfg = ProbeConfig { seed, ..Default::default() };
                    r.residual_probe = Some(residual_probe(&state, &train_ds, &ds, &cfg)?);
                }
                let pairs = swap_pairs(&ds, 200.min(ds.len() / 2).max(1), seed);
                r.swap_accuracy = Some(swap_accuracy(&state, &ds, &pairs)?);
                let shown: Vec<(usize, usize)> = pairs.iter().copied().take(8).collect();
                let ii: Vec<usize> = shown.iter().map(|p| p.0).collect();
                let jj: Vec<usize> = shown.iter().map(|p| p.1).collect();
                let quads = swap_grid(&state, &ds.images(&ii), &ds.labels_of(&ii), &ds.images(&jj), &ds.labels_of(&jj))?;
                r.swaps.push(("pairs".into(), quads));
                for id in 0..ds.len().min(4) {
                    let grid = traversal_grid(&state, &sample(&ds, id)?, 8)?;
                    r.distinctness.push((format!("sample{id}"), distinctness_score(&grid)?));
                    r.traversals.push((format!("sample{id}"), grid));
                }
                for id in 0..ds.len().min(16) {
                    r.explanations.push(explain_sample(&state, &sample(&ds, id)?, id, None)?);
                }
                let written = emit_report(&r, &dir)?;
                print!("{}", summary_markdown(&r));
                for p in written {
                    println!("wrote {}", p.display());
                }
            }
        }
        Command::ProbeResidual { ckpt, data, test, seed } => {
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let (train_ds, test_ds) = match test {
                Some(p) => (ds, dataset_for(&state, &p)?),
                None => {
                    let cut = ds.len() - ds.len() / 5;
                    let head: Vec<usize> = (0..cut).collect();
                    let tail: Vec<usize> = (cut..ds.len()).collect();
                    (ds.subset(&head, Split::Train)?, ds.subset(&tail, Split::Test)?)
                }
            };
            let cfg = ProbeConfig { seed, ..Default::default() };
            let r = residual_probe(&state, &train_ds, &test_ds, &cfg)?;
            println!("{}", serde_json::json!({ "accuracy": r.accuracy, "chance": r.chance }));
        }
        Command::MiReport { ckpt, data, bins, out } => {
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let mi = mi_estimate(&state, &ds, bins)?;
            match out {
                Some(p) => {
                    write(&p, mi.to_csv().as_bytes())?;
                    println!("mean MI c {:.4}, r {:.4} nats; wrote {}", mi.mean_c(), mi.mean_r(), p.display());
                }
                None => print!("{}", mi.to_csv()),
            }
        }
        Command::Traverse {
            ckpt,
            data,
            sample_id,
            steps,
            out,
        } => {
            if steps < 2 {
                return Err(Error::Invalid("--steps must be at least 2".into()));
            }
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let grid = traversal_grid(&state, &sample(&ds, sample_id)?, steps)?;
            write(&out, &ppm_grid(&grid.rows, grid.image_shape))?;
            println!("distinctness {:.4}; wrote {}", distinctness_score(&grid)?, out.display());
        }
        Command::Swap { ckpt, data, i, j, out } => {
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let (xi, xj) = (sample(&ds, i)?, sample(&ds, j)?);
            let q = swap_grid(&state, &xi, &ds.labels_of(&[i]), &xj, &ds.labels_of(&[j]))?.remove(0);
            let rows = vec![vec![q.rec_i, q.rec_j, q.swap_ji, q.swap_ij]];
            write(&out, &ppm_grid(&rows, state.config.image_shape()))?;
            println!("wrote {} (columns: rec i, rec j, c^j with r^i, c^i with r^j)", out.display());
        }
        Command::Explain {
            ckpt,
            data,
            sample_id,
            names,
        } => {
            let state = model(&ckpt)?;
            let ds = dataset_for(&state, &data)?;
            let names: Option<Vec<String>> = match names {
                Some(p) => Some(serde_json::from_slice(&read(&p)?).map_err(|e| Error::Config {
                    path: p.display().to_string(),
                    msg: e.to_string(),
                })?),
                None => None,
            };
            let rec = explain_sample(&state, &sample(&ds, sample_id)?, sample_id, names.as_deref())?;
            println!("{}", json(&rec)?);
        }
        Command::MakeSynth {
            spec,
            n,
            out,
            seed,
            factors,
        } => {
            let mut s: SyntheticSpec = match spec {
                Some(p) => {
                    let bytes = read(&p)?;
                    let de = &mut serde_json::Deserializer::from_slice(&bytes);
                    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                        path: e.path().to_string(),
                        msg: e.inner().to_string(),
                    })?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (ds, table) = generate_synthetic(&s, n)?;
            ds.save(&out)?;
            if let Some(p) = factors {
                write(&p, json(&table)?.as_bytes())?;
            }
            println!("wrote {} samples of {} classes to {}", ds.len(), ds.classes, out.display());
        }
        Command::Convert {
            input,
            labels,
            out,
            size,
        } => {
            let ds = convert_idx(&input, &labels, size)?;
            ds.save(&out)?;
            println!("wrote {} samples of {} classes to {}", ds.len(), ds.classes, out.display());
        }
    }
    Ok(())
}
