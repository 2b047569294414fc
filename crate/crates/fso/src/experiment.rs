//! Experiment orchestration: flat key=value configs, the dataset/train/eval
//! loop over (method, array size) cells, and the MAP comparison dump.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::channel::{lens_positions, MeasurementBlock};
use crate::config::SystemConfig;
use crate::dataset::{generate_dataset, read_dataset, split_train_test, SampleRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    end2end::{end2end_estimate, train_end2end},
    hierarchical::{
        stage1_compensate, stage1_normalize, stage3_turbulence, train_hierarchical,
        HierarchicalModels,
    },
    map::{map_estimate, MapGridSpec},
    eps_den, EstimateRecord, GuardCounters, GuardPolicy, MethodTag, PipelineManifest,
    TrainedPipeline,
};
use crate::mlp::{MlpModel, TrainConfig};
use crate::report::{nmse, render_csv, render_text, NmseReport};

/// One experiment: a base system config swept over array sizes and methods.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub n_lens_list: Vec<usize>,
    pub methods: Vec<MethodTag>,
    pub train_samples: u64,
    pub test_samples: u64,
    pub seed: u64,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub guarded: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            n_lens_list: vec![4, 16, 64],
            methods: vec![MethodTag::Hierarchical, MethodTag::End2End],
            train_samples: 10_000,
            test_samples: 10_000,
            seed: 0,
            train: TrainConfig::default(),
            out_dir: PathBuf::from("out"),
            guarded: true,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("key {key}: cannot parse {value:?}")))
}

/// Applies a system-model key; returns false when the key is not a system
/// parameter.
pub fn apply_system_key(cfg: &mut SystemConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "wavelength" => cfg.wavelength = parse_num(key, value)?,
        "link_distance" => cfg.link_distance = parse_num(key, value)?,
        "divergence" => cfg.divergence = parse_num(key, value)?,
        "beam_waist" => cfg.beam_waist = parse_num(key, value)?,
        "lens_radius" => cfg.lens_radius = parse_num(key, value)?,
        "lens_pitch" => cfg.lens_pitch = parse_num(key, value)?,
        "n_lens" => cfg.n_lens = parse_num(key, value)?,
        "focal_length" => cfg.focal_length = parse_num(key, value)?,
        "spot_width" => cfg.spot_width = parse_num(key, value)?,
        "quad_side" => cfg.quad_side = parse_num(key, value)?,
        "tx_power" => cfg.tx_power = parse_num(key, value)?,
        "lumped_loss" => cfg.lumped_loss = parse_num(key, value)?,
        "sigma_theta" => cfg.sigma_theta = parse_num(key, value)?,
        "sigma_r" => cfg.sigma_r = parse_num(key, value)?,
        "gg_alpha" => cfg.gg_alpha = parse_num(key, value)?,
        "gg_beta" => cfg.gg_beta = parse_num(key, value)?,
        "noise_sigma" => cfg.noise_sigma = parse_num(key, value)?,
        "block_len" => cfg.block_len = parse_num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a system config from a flat key=value file; every key must be a
/// system parameter.
pub fn parse_system_config(text: &str) -> Result<SystemConfig> {
    let mut cfg = SystemConfig::default();
    for (key, value) in parse_kv(text)? {
        if !apply_system_key(&mut cfg, &key, &value)? {
            return Err(Error::UnknownKey(key));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_method(name: &str) -> Result<MethodTag> {
    match name.trim() {
        "hier" | "hierarchical" => Ok(MethodTag::Hierarchical),
        "e2e" | "end2end" => Ok(MethodTag::End2End),
        other => Err(Error::Parse(format!("unknown method {other:?}"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut exp = ExperimentConfig::default();
        for (key, value) in parse_kv(text)? {
            if apply_system_key(&mut exp.system, &key, &value)? {
                continue;
            }
            match key.as_str() {
                "n_lens_list" => {
                    exp.n_lens_list = value
                        .split(',')
                        .map(|v| parse_num("n_lens_list", v.trim()))
                        .collect::<Result<_>>()?;
                }
                "methods" => {
                    exp.methods = value.split(',').map(parse_method).collect::<Result<_>>()?;
                }
                "train_samples" => exp.train_samples = parse_num(&key, &value)?,
                "test_samples" => exp.test_samples = parse_num(&key, &value)?,
                "seed" => exp.seed = parse_num(&key, &value)?,
                "learning_rate" => exp.train.learning_rate = parse_num(&key, &value)?,
                "batch_size" => exp.train.batch_size = parse_num(&key, &value)?,
                "max_epochs" => exp.train.max_epochs = parse_num(&key, &value)?,
                "patience" => exp.train.patience = parse_num(&key, &value)?,
                "validation_fraction" => {
                    exp.train.validation_fraction = parse_num(&key, &value)?
                }
                "out_dir" => exp.out_dir = PathBuf::from(&value),
                "guarded" => {
                    exp.guarded = match value.as_str() {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        other => {
                            return Err(Error::Parse(format!("key guarded: got {other:?}")))
                        }
                    }
                }
                _ => return Err(Error::UnknownKey(key)),
            }
        }
        if exp.train_samples == 0 || exp.test_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        exp.system.validate()?;
        Ok(exp)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Loads the cached dataset for an array size, generating it on first use.
/// Train and test halves are interleaved in one file (even/odd indices).
pub fn ensure_dataset(exp: &ExperimentConfig, n_lens: usize) -> Result<(SystemConfig, Vec<SampleRecord>)> {
    let config = exp.system.with_n_lens(n_lens);
    config.validate()?;
    let total = 2 * exp.train_samples.max(exp.test_samples);
    let path = exp.out_dir.join(format!("dataset_n{n_lens}.bin"));
    if path.exists() {
        if let Ok((header, samples)) = read_dataset(&path) {
            if header.seed == exp.seed
                && header.sample_count == total
                && header.config_digest == config.digest()
            {
                return Ok((config, samples));
            }
        }
    }
    std::fs::create_dir_all(&exp.out_dir)?;
    generate_dataset(&config, total, exp.seed, &path)?;
    let (_, samples) = read_dataset(&path)?;
    Ok((config, samples))
}

/// Batch inference for the hierarchical pipeline.
pub fn evaluate_hierarchical(
    models: &HierarchicalModels,
    samples: &[&SampleRecord],
    config: &SystemConfig,
    policy: GuardPolicy,
) -> Result<(Vec<EstimateRecord>, GuardCounters)> {
    let n = samples.len();
    let n_lens = config.n_lens;
    let floor = eps_den(config);
    let positions = lens_positions(config)?;
    let mut counters = GuardCounters::default();

    // Stage 1 over the whole batch at once.
    let mut x1 = Array2::zeros((n, 4 * n_lens));
    for (r, s) in samples.iter().enumerate() {
        let (ratios, faded) = stage1_normalize(&s.y_bar, floor);
        counters.den_floor += faded.iter().filter(|&&f| f).count() as u64;
        for (c, v) in ratios.iter().enumerate() {
            x1[[r, c]] = *v;
        }
    }
    let aoa = models.stage1_aoa_model.predict_batch(&x1)?;
    if aoa.ncols() != 2 {
        return Err(Error::Shape("stage-1 model must emit 2 outputs".into()));
    }

    // Compensate, then stage 2 over the batch.
    let mut x2 = Array2::zeros((n, n_lens));
    let mut z1_all = Vec::with_capacity(n);
    for (r, s) in samples.iter().enumerate() {
        let z1 = stage1_compensate(&s.y_bar, [aoa[[r, 0]], aoa[[r, 1]]], config, &mut counters);
        for (c, v) in z1.iter().enumerate() {
            x2[[r, c]] = *v;
        }
        z1_all.push(z1);
    }
    let pe = models.stage2_pe_model.predict_batch(&x2)?;
    if pe.ncols() != 2 {
        return Err(Error::Shape("stage-2 model must emit 2 outputs".into()));
    }

    let mut records = Vec::with_capacity(n);
    for r in 0..n {
        let theta_e_hat = [pe[[r, 0]], pe[[r, 1]]];
        let h_a_hat = stage3_turbulence(
            &z1_all[r],
            theta_e_hat,
            &positions,
            config,
            policy,
            &mut counters,
        );
        records.push(EstimateRecord::new(
            theta_e_hat,
            [aoa[[r, 0]], aoa[[r, 1]]],
            h_a_hat,
            MethodTag::Hierarchical,
        ));
    }
    Ok((records, counters))
}

/// Batch inference for the end-to-end baseline.
pub fn evaluate_end2end(
    model: &MlpModel,
    samples: &[&SampleRecord],
    config: &SystemConfig,
    policy: GuardPolicy,
) -> Result<(Vec<EstimateRecord>, GuardCounters)> {
    let mut counters = GuardCounters::default();
    let mut records = Vec::with_capacity(samples.len());
    let _ = config;
    for s in samples {
        records.push(end2end_estimate(model, &s.y_bar, policy, &mut counters)?);
    }
    Ok((records, counters))
}

/// Trains one (method, array size) cell.
pub fn train_cell(
    method: MethodTag,
    train_set: &[&SampleRecord],
    config: &SystemConfig,
    base: &TrainConfig,
    seed: u64,
) -> Result<(TrainedPipeline, PipelineManifest)> {
    match method {
        MethodTag::Hierarchical => {
            let mut cfg1 = base.clone();
            cfg1.seed = seed.wrapping_mul(1000).wrapping_add(1);
            let mut cfg2 = base.clone();
            cfg2.seed = seed.wrapping_mul(1000).wrapping_add(2);
            let (models, trace1, trace2) = train_hierarchical(train_set, config, &cfg1, &cfg2)?;
            let best = |t: &[crate::mlp::EpochStats]| {
                t.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min)
            };
            let manifest = PipelineManifest {
                method,
                config_digest: config.digest(),
                n_lens: config.n_lens,
                seeds: vec![cfg1.seed, cfg2.seed],
                val_losses: vec![best(&trace1), best(&trace2)],
            };
            Ok((TrainedPipeline::Hierarchical(models), manifest))
        }
        MethodTag::End2End => {
            let mut cfg = base.clone();
            cfg.seed = seed.wrapping_mul(1000).wrapping_add(3);
            let (model, trace) = train_end2end(train_set, config, &cfg)?;
            let best = trace
                .iter()
                .map(|e| e.val_loss)
                .fold(f64::INFINITY, f64::min);
            let manifest = PipelineManifest {
                method,
                config_digest: config.digest(),
                n_lens: config.n_lens,
                seeds: vec![cfg.seed],
                val_losses: vec![best],
            };
            Ok((TrainedPipeline::End2End(model), manifest))
        }
        MethodTag::Map => Err(Error::Config("MAP needs no training; use map_eval".into())),
    }
}

/// Evaluates a trained pipeline on a test set.
pub fn evaluate_cell(
    pipeline: &TrainedPipeline,
    test_set: &[&SampleRecord],
    config: &SystemConfig,
    policy: GuardPolicy,
) -> Result<NmseReport> {
    let (records, counters) = match pipeline {
        TrainedPipeline::Hierarchical(models) => {
            evaluate_hierarchical(models, test_set, config, policy)?
        }
        TrainedPipeline::End2End(model) => evaluate_end2end(model, test_set, config, policy)?,
    };
    let truths: Vec<_> = test_set.iter().map(|s| &s.state).collect();
    nmse(&records, &truths, pipeline.method(), config.n_lens, counters)
}

/// Runs the full sweep and writes models, per-cell reports, and the rendered
/// tables into the output directory.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<Vec<NmseReport>> {
    std::fs::create_dir_all(&exp.out_dir)?;
    let policy = GuardPolicy {
        guarded: exp.guarded,
    };
    let mut reports = Vec::new();
    for &n_lens in &exp.n_lens_list {
        let (config, samples) = ensure_dataset(exp, n_lens)?;
        let (train_all, test_all) = split_train_test(&samples);
        let train_set = &train_all[..exp.train_samples as usize];
        let test_set = &test_all[..exp.test_samples as usize];
        for &method in &exp.methods {
            let (pipeline, manifest) = train_cell(method, train_set, &config, &exp.train, exp.seed)?;
            let dir = exp
                .out_dir
                .join(format!("{}_n{}", method.to_string().to_lowercase(), n_lens));
            crate::estimators::save_pipeline(&dir, &pipeline, &manifest)?;
            let report = evaluate_cell(&pipeline, test_set, &config, policy)?;
            std::fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            reports.push(report);
        }
    }
    std::fs::write(exp.out_dir.join("nmse.txt"), render_text(&reports))?;
    std::fs::write(exp.out_dir.join("nmse.csv"), render_csv(&reports))?;
    Ok(reports)
}

/// Runs the grid-search MAP estimator on the first `n` test records of a
/// dataset and renders a true-vs-estimated comparison (angles in microrad).
pub fn map_eval(dataset_path: &Path, grid: &MapGridSpec, n: usize) -> Result<String> {
    let (header, samples) = read_dataset(dataset_path)?;
    let config = header.config;
    let (_, test_set) = split_train_test(&samples);
    let take = n.min(test_set.len());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
        "idx", "th_ex true", "th_ex est", "th_ey true", "th_ey est", "h_a1 true", "h_a1 est"
    ));
    for (idx, s) in test_set.iter().take(take).enumerate() {
        let block = MeasurementBlock {
            y_bar: s.y_bar.clone(),
            config_digest: config.digest(),
        };
        let sol = map_estimate(&block, &config, grid)?;
        let r = &sol.record;
        out.push_str(&format!(
            "{:<4} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.4} {:>12.4}\n",
            idx,
            s.state.theta_e[0] * 1e6,
            r.theta_e_hat[0] * 1e6,
            s.state.theta_e[1] * 1e6,
            r.theta_e_hat[1] * 1e6,
            s.state.h_a[0],
            r.h_a_hat[0],
        ));
    }
    Ok(out)
}
