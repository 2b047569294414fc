use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use fso_sim::dataset::{generate_dataset, read_dataset, split_train_test};
use fso_sim::error::{Error, Result};
use fso_sim::estimators::map::MapGridSpec;
use fso_sim::estimators::{load_pipeline, GuardPolicy, MethodTag};
use fso_sim::experiment::{
    evaluate_cell, map_eval, parse_kv, parse_system_config, run_experiment, train_cell,
    ExperimentConfig,
};
use fso_sim::mlp::TrainConfig;
use fso_sim::report::{render_csv, render_text, NmseReport};

#[derive(Parser)]
#[command(name = "fso-sim", about = "Multi-aperture FSO receiver simulator and estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hier,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Txt,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file from a system config.
    Gen {
        /// Flat key=value system config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of samples.
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an estimator on the train half (even records) of a dataset.
    Train {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the trained pipeline.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a trained pipeline on the test half (odd records).
    Eval {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output path for the JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Disable the stage-3 numerical guards.
        #[arg(long)]
        unguarded: bool,
    },
    /// Run the grid-search MAP estimator on the first test records.
    MapSearch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Optional key=value grid spec overrides.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Render stored JSON reports as a text table or CSV.
    Report {
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "txt")]
        format: FormatArg,
    },
    /// Run a full experiment sweep from an experiment config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_grid_file(path: &PathBuf) -> Result<MapGridSpec> {
    let mut grid = MapGridSpec::default();
    for (key, value) in parse_kv(&std::fs::read_to_string(path)?)? {
        let parse = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Parse(format!("grid key {key}: cannot parse {v:?}")))
        };
        match key.as_str() {
            "angle_span_sigmas" => grid.angle_span_sigmas = parse(&value)?,
            "angle_points" => grid.angle_points = parse(&value)? as usize,
            "fade_min" => grid.fade_min = parse(&value)?,
            "fade_max" => grid.fade_max = parse(&value)?,
            "fade_points" => grid.fade_points = parse(&value)? as usize,
            "refine_levels" => grid.refine_levels = parse(&value)? as usize,
            "refine_shrink" => grid.refine_shrink = parse(&value)?,
            "include_angle_prior" => grid.include_angle_prior = value == "true" || value == "1",
            "fade_grid" => grid.fade_grid = value == "true" || value == "1",
            _ => return Err(Error::UnknownKey(key)),
        }
    }
    grid.validate()?;
    Ok(grid)
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            config,
            n,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(path) => parse_system_config(&std::fs::read_to_string(path)?)?,
                None => fso_sim::SystemConfig::default(),
            };
            let header = generate_dataset(&cfg, n, seed, &out)?;
            println!(
                "wrote {} samples (n_lens={}, digest={}) to {}",
                header.sample_count,
                header.config.n_lens,
                header.config_digest,
                out.display()
            );
        }
        Command::Train {
            method,
            data,
            out,
            epochs,
            lr,
            batch,
            seed,
        } => {
            let (header, samples) = read_dataset(&data)?;
            let (train_set, _) = split_train_test(&samples);
            let cfg = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                max_epochs: epochs,
                ..TrainConfig::default()
            };
            let tag = match method {
                MethodArg::Hier => MethodTag::Hierarchical,
                MethodArg::E2e => MethodTag::End2End,
            };
            let (pipeline, manifest) = train_cell(tag, &train_set, &header.config, &cfg, seed)?;
            fso_sim::estimators::save_pipeline(&out, &pipeline, &manifest)?;
            println!(
                "trained {} on {} samples; best val losses {:?}; saved to {}",
                tag,
                train_set.len(),
                manifest.val_losses,
                out.display()
            );
        }
        Command::Eval {
            models,
            data,
            report,
            unguarded,
        } => {
            let (header, samples) = read_dataset(&data)?;
            let (pipeline, manifest) = load_pipeline(&models)?;
            if manifest.config_digest != header.config.digest() {
                return Err(Error::DigestMismatch {
                    expected: manifest.config_digest,
                    got: header.config.digest(),
                });
            }
            let (_, test_set) = split_train_test(&samples);
            let policy = GuardPolicy {
                guarded: !unguarded,
            };
            let rep = evaluate_cell(&pipeline, &test_set, &header.config, policy)?;
            std::fs::write(&report, serde_json::to_string_pretty(&rep)?)?;
            print!("{}", render_text(std::slice::from_ref(&rep)));
        }
        Command::MapSearch { data, n, grid } => {
            let spec = match grid {
                Some(path) => parse_grid_file(&path)?,
                None => MapGridSpec::default(),
            };
            print!("{}", map_eval(&data, &spec, n)?);
        }
        Command::Report { inputs, format } => {
            let mut reports = Vec::new();
            for path in &inputs {
                let rep: NmseReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                reports.push(rep);
            }
            match format {
                FormatArg::Txt => print!("{}", render_text(&reports)),
                FormatArg::Csv => print!("{}", render_csv(&reports)),
            }
        }
        Command::Run { config } => {
            let exp = ExperimentConfig::from_file(&config)?;
            let reports = run_experiment(&exp)?;
            print!("{}", render_text(&reports));
        }
    }
    Ok(())
}
