use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use msoreid::data::{generate_synthetic, manifest_digest, write_manifest, Modality, Split};
use msoreid::eval::evaluate_model;
use msoreid::model::{load_checkpoint, FeatureMatrix, TwoStreamNet};
use msoreid::train::{eval_inputs, run_ablation, run_experiment, AblationMatrix, ExperimentConfig};
use msoreid::viz;

#[derive(Parser)]
#[command(name = "msoreid", version, about = "Cross-modality person re-identification experiments")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command's random process.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset (PNG images plus manifest.tsv).
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, writing the step log, checkpoints and run.json.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write metrics.json, metrics.csv, cmc.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of gallery draws.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train and evaluate every cell of an ablation matrix.
    Ablate {
        #[arg(long, value_enum)]
        matrix: MatrixArg,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Render PNG figures.
    Visualize {
        #[arg(long, value_enum)]
        kind: VizKind,
        /// Checkpoint directory (feature maps, embedding scatter).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run directory holding steps.jsonl (training curves).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    Loss,
    Fusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum VizKind {
    FeatureMaps,
    EmbeddingScatter,
    TrainingCurves,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg)
}

fn config_label(path: Option<&Path>) -> String {
    path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg_path = cli.config.as_deref();
    let mut cfg = load_config(cfg_path)?;
    match cli.command {
        Command::Generate { out } => {
            if let Some(s) = cli.seed {
                cfg.dataset.synthetic.seed = s;
            }
            let records = generate_synthetic(&cfg.dataset.synthetic)
                .with_context(|| format!("synthetic dataset from config {}", config_label(cfg_path)))?;
            let text = write_manifest(&out, &records)?;
            println!("{} records written to {}", records.len(), out.display());
            println!("manifest sha256 {}", manifest_digest(&text));
        }
        Command::Train { out } => {
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
            let run = run_experiment(&cfg, Some(&out))?;
            if let Some(m) = &run.final_metrics {
                println!("rank-1 {:.4}  rank-10 {:.4}  mAP {:.4}  mINP {:.4}", m.r1, m.r10, m.map, m.minp);
            }
            println!("run manifest: {}", out.join(msoreid::train::RUN_MANIFEST_FILE).display());
        }
        Command::Eval { checkpoint, out, trials } => {
            let (net, manifest) = load_checkpoint(&checkpoint)?;
            if cfg_path.is_none() {
                if let Some(snapshot) = manifest.experiment.clone() {
                    cfg = serde_json_value_to_config(snapshot)?;
                }
            }
            if let Some(s) = cli.seed {
                cfg.eval.seed = s;
            }
            if let Some(t) = trials {
                cfg.eval.num_trials = t;
            }
            let records = cfg.dataset.load()?;
            let (builder, resizer) = eval_inputs(&cfg, &net);
            let report = evaluate_model(&net, &records, &cfg.eval, &builder, &resizer, cfg.train.extract_batch_size)?;
            report.write_all(&out)?;
            println!(
                "{} {}-shot, {} trials: rank-1 {:.4}  rank-10 {:.4}  rank-20 {:.4}  mAP {:.4}  mINP {:.4}",
                report.mode,
                report.shot,
                report.trials.len(),
                report.r1,
                report.r10,
                report.r20,
                report.map,
                report.minp
            );
        }
        Command::Ablate { matrix, out, seeds, trials } => {
            if let Some(t) = trials {
                cfg.eval.num_trials = t;
            }
            let seeds = match cli.seed {
                Some(s) => vec![s],
                None => seeds,
            };
            let matrix = match matrix {
                MatrixArg::Loss => AblationMatrix::Loss,
                MatrixArg::Fusion => AblationMatrix::Fusion,
            };
            fs::create_dir_all(&out)?;
            let table = run_ablation(&cfg, matrix, &seeds, Some(&out))?;
            print!("{}", table.to_text());
        }
        Command::Visualize { kind, checkpoint, run, out } => {
            fs::create_dir_all(&out)?;
            match kind {
                VizKind::TrainingCurves => {
                    let Some(run) = run else { bail!("--run is required for training curves") };
                    training_curves(&run, &out)?;
                }
                VizKind::FeatureMaps | VizKind::EmbeddingScatter => {
                    let Some(ckpt) = checkpoint else { bail!("--checkpoint is required") };
                    let (net, manifest) = load_checkpoint(&ckpt)?;
                    if cfg_path.is_none() {
                        if let Some(snapshot) = manifest.experiment.clone() {
                            cfg = serde_json_value_to_config(snapshot)?;
                        }
                    }
                    if matches!(kind, VizKind::FeatureMaps) {
                        feature_maps(&cfg, &net, &out)?;
                    } else {
                        embedding_scatter(&cfg, &net, &out)?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn serde_json_value_to_config(v: serde_json::Value) -> Result<ExperimentConfig> {
    Ok(serde_json::from_value(v).context("checkpoint carries an unreadable experiment snapshot")?)
}

fn training_curves(run: &Path, out: &Path) -> Result<()> {
    let path = run.join(msoreid::train::STEP_LOG_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let reports = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<msoreid::losses::LossReport>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    viz::training_curves(&reports, 640, 360)?.save(out.join("training_curves.png"))?;
    fs::write(out.join("training_curves.csv"), viz::training_curves_csv(&reports))?;
    println!("{} steps plotted", reports.len());
    Ok(())
}

fn feature_maps(cfg: &ExperimentConfig, net: &TwoStreamNet, out: &Path) -> Result<()> {
    let records = cfg.dataset.load()?;
    let test = |m: Modality| records.iter().find(|r| r.split != Split::Train && r.modality == m);
    let (Some(rgb), Some(ir)) = (test(Modality::Rgb), test(Modality::Ir)) else {
        bail!("dataset has no held-out RGB/IR pair");
    };
    if rgb.identity != ir.identity {
        log::warn!("first RGB and IR test images belong to different identities");
    }
    let (builder, resizer) = eval_inputs(cfg, net);
    let mut maps = Vec::new();
    for r in [rgb, ir] {
        let img = resizer.resize(&r.image);
        let input = builder.build(&[&img], vec![r.modality])?;
        let stem = net.stem_forward(&input.images, r.modality, false)?;
        maps.push(viz::FeatureMapSet::from_tensor(&stem, 0)?);
    }
    let cols = (maps[0].channels as f64).sqrt().ceil() as usize;
    viz::feature_map_pair(&maps[0], &maps[1], cols, 4).save(out.join("feature_maps.png"))?;
    let inactive = |m: &viz::FeatureMapSet| (0..m.channels).filter(|&c| m.channel(c).iter().all(|&v| v == 0.0)).count();
    println!(
        "identity {}: {} of {} RGB channels and {} IR channels are all zero",
        rgb.identity,
        inactive(&maps[0]),
        maps[0].channels,
        inactive(&maps[1])
    );
    Ok(())
}

fn embedding_scatter(cfg: &ExperimentConfig, net: &TwoStreamNet, out: &Path) -> Result<()> {
    let records = cfg.dataset.load()?;
    let test: Vec<_> = records.iter().filter(|r| r.split != Split::Train).collect();
    let (builder, resizer) = eval_inputs(cfg, net);
    let feats: FeatureMatrix =
        msoreid::model::extract_features(net, &test, &builder, &resizer, cfg.train.extract_batch_size)?;
    if feats.dim != net.config().embedding_dim {
        bail!("feature dimension {} does not match the checkpoint's {}", feats.dim, net.config().embedding_dim);
    }
    let rows: Vec<Vec<f64>> = (0..feats.rows).map(|i| feats.row(i).to_vec()).collect();
    let points = viz::pca_2d(&rows)?;
    let labels: Vec<usize> = test.iter().map(|r| r.identity).collect();
    let mods: Vec<Modality> = test.iter().map(|r| r.modality).collect();
    viz::scatter_plot(&points, &labels, &mods, 640)?.save(out.join("embedding_scatter.png"))?;
    println!("silhouette of the 2-D projection: {:.3}", viz::silhouette(&points, &labels)?);
    Ok(())
}
