use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fusebench::config::{averaging_name, parse_averaging, read_config, Config};
use fusebench::experiment::{prediction_inputs, run_experiment, score_predictions};
use fusebench::feat::{read_features, write_features};
use fusebench::labels::{parse_label_rows, write_label_rows, write_labels};
use fusebench::mmcm::read_model;
use fusebench::sweep::{parse_grid, sweep, RunStatus};
use fusebench_core::data::synth_generate;
use fusebench_core::fusion::predict;
use fusebench_core::metrics::Averaging;

#[derive(Parser)]
#[command(
    name = "fusebench",
    version,
    about = "Deterministic multimodal multilabel training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, model, predictions and report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved model to feature files.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features_img: Option<PathBuf>,
        #[arg(long)]
        features_txt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Global decision threshold.
        #[arg(long, conflicts_with = "thresholds")]
        threshold: Option<f64>,
        /// File with one threshold per class.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Score a prediction file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 18)]
        classes: usize,
        /// samples, macro or micro; all three are printed when omitted.
        #[arg(long)]
        averaging: Option<String>,
    },
    /// Run a grid or greedy sweep over a base configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        greedy: bool,
    },
    /// Write a synthetic two-modality dataset (img.feat, txt.feat, labels.csv).
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 18)]
        classes: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn thresholds_arg(threshold: Option<f64>, file: Option<PathBuf>) -> anyhow::Result<Config> {
    let mut cfg = Config::default();
    if let Some(t) = threshold {
        cfg.set("eval.threshold", &t.to_string())
            .map_err(anyhow::Error::msg)?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let joined = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>();
        cfg.set("eval.threshold", &joined.join(","))
            .map_err(|m| anyhow::anyhow!("{}: {m}", path.display()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = read_config(&config)?;
            let r = run_experiment(&cfg, &out)?;
            match (r.diverged, r.final_val_f1) {
                (true, _) => println!("diverged; artifacts written to {}", out.display()),
                (false, Some(f)) => println!("final_val_f1 = {f:.6}"),
                (false, None) => println!("no validation split"),
            }
        }
        Command::Predict {
            model,
            features_img,
            features_txt,
            out,
            threshold,
            thresholds,
        } => {
            let cfg = thresholds_arg(threshold, thresholds)?;
            let model = read_model(&model)?;
            let image = features_img.as_deref().map(read_features).transpose()?;
            let text = features_txt.as_deref().map(read_features).transpose()?;
            let (ids, img, txt) = prediction_inputs(image, text)?;
            let pred = predict(&model, &img, &txt, &cfg.threshold)?;
            write_label_rows(&out, &ids, &pred.sets)?;
        }
        Command::Eval {
            pred,
            truth,
            classes,
            averaging,
        } => {
            let read = |p: &PathBuf| -> anyhow::Result<_> {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Ok(parse_label_rows(&text, classes, &p.display().to_string())?)
            };
            let (p, t) = (read(&pred)?, read(&truth)?);
            let which: Vec<Averaging> = match averaging {
                Some(a) => vec![parse_averaging(&a).map_err(anyhow::Error::msg)?],
                None => vec![Averaging::Samples, Averaging::Macro, Averaging::Micro],
            };
            for a in which {
                println!(
                    "{} {:.6}",
                    averaging_name(a),
                    score_predictions(&p, &t, classes, a)?
                );
            }
        }
        Command::Sweep {
            config,
            grid,
            out,
            greedy,
        } => {
            let base = read_config(&config)?;
            let text = std::fs::read_to_string(&grid)
                .with_context(|| format!("reading {}", grid.display()))?;
            let grid = parse_grid(&text, &base, &grid.display().to_string())?;
            let rows = sweep(&base, &grid, &out, greedy)?;
            let failed = rows
                .iter()
                .filter(|r| matches!(r.status, RunStatus::Failed(_)))
                .count();
            println!(
                "{} runs, {failed} failed; summary in {}",
                rows.len(),
                out.display()
            );
        }
        Command::Synth {
            n,
            dim,
            classes,
            noise,
            seed,
            out,
        } => {
            let (img, txt, labels) = synth_generate(n, dim, classes, noise, seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_features(&img, &out.join("img.feat"))?;
            write_features(&txt, &out.join("txt.feat"))?;
            write_labels(&out.join("labels.csv"), &labels)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("FUSEBENCH_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) => fusebench_core::matrix::set_max_threads(n),
            Err(_) => {
                eprintln!("error: FUSEBENCH_THREADS must be a non-negative integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
