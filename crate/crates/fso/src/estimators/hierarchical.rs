//! The three-stage hierarchical pipeline: AoA from normalized quad ratios,
//! transmitter pointing error from AoA-compensated per-lens sums, and
//! receiver jitter plus per-lens turbulence in closed form.

use ndarray::{Array1, Array2};

use crate::channel::{aoa_cell_gains, pointing_gain, lens_positions};
use crate::config::SystemConfig;
use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::estimators::{
    clamp_fade, eps_den, EstimateRecord, GuardCounters, GuardPolicy, MethodTag, EPS_HP,
};
use crate::mlp::{mlp_init, train, EpochStats, MlpModel, MlpSpec, TrainConfig};

/// Trained stage-1 (ratios -> AoA) and stage-2 (z1 -> pointing error)
/// networks.
#[derive(Debug, Clone)]
pub struct HierarchicalModels {
    pub stage1_aoa_model: MlpModel,
    pub stage2_pe_model: MlpModel,
}

/// Per-lens quad ratios. Lenses whose cell sum falls below the floor are
/// replaced by the uniform vector and flagged as faded.
pub fn stage1_normalize(y_bar: &Array2<f64>, sum_floor: f64) -> (Array2<f64>, Vec<bool>) {
    let n = y_bar.nrows();
    let mut ratios = Array2::zeros((n, 4));
    let mut faded = vec![false; n];
    for i in 0..n {
        let sum: f64 = (0..4).map(|j| y_bar[[i, j]]).sum();
        if sum <= sum_floor {
            for j in 0..4 {
                ratios[[i, j]] = 0.25;
            }
            faded[i] = true;
        } else {
            for j in 0..4 {
                ratios[[i, j]] = y_bar[[i, j]] / sum;
            }
        }
    }
    (ratios, faded)
}

/// Stage-1 inference: the flattened (row-major) ratio matrix through the
/// AoA network.
pub fn stage1_aoa(models: &HierarchicalModels, ratios: &Array2<f64>) -> Result<[f64; 2]> {
    let flat = Array1::from_iter(ratios.iter().cloned());
    let out = models.stage1_aoa_model.predict(&flat)?;
    if out.len() != 2 {
        return Err(Error::Shape("stage-1 model must emit 2 outputs".into()));
    }
    Ok([out[0], out[1]])
}

/// Removes the AoA contribution multiplicatively from the per-lens sums:
/// z1_i ~ h_p,i(theta_e) * h_a,i under a perfect AoA estimate.
pub fn stage1_compensate(
    y_bar: &Array2<f64>,
    theta_aoa_hat: [f64; 2],
    config: &SystemConfig,
    counters: &mut GuardCounters,
) -> Vec<f64> {
    let h_tot = aoa_cell_gains(theta_aoa_hat, config).total();
    let floor = eps_den(config);
    let mut denom = config.tx_power * config.lumped_loss * h_tot;
    if denom < floor {
        denom = floor;
        counters.den_floor += y_bar.nrows() as u64;
    }
    (0..y_bar.nrows())
        .map(|i| (0..4).map(|j| y_bar[[i, j]]).sum::<f64>() / denom)
        .collect()
}

/// Stage-2 inference: per-lens compensated signals through the pointing
/// error network.
pub fn stage2_pe(models: &HierarchicalModels, z1: &[f64]) -> Result<[f64; 2]> {
    let out = models
        .stage2_pe_model
        .predict(&Array1::from(z1.to_vec()))?;
    if out.len() != 2 {
        return Err(Error::Shape("stage-2 model must emit 2 outputs".into()));
    }
    Ok([out[0], out[1]])
}

/// Stage-3 jitter: exact subtraction of the angular estimates.
pub fn stage3_jitter(theta_aoa_hat: [f64; 2], theta_e_hat: [f64; 2]) -> [f64; 2] {
    [
        theta_aoa_hat[0] - theta_e_hat[0],
        theta_aoa_hat[1] - theta_e_hat[1],
    ]
}

/// Stage-3 turbulence: multiplicative pointing removal, optionally guarded
/// by the pointing-gain floor and the fade clamp.
pub fn stage3_turbulence(
    z1: &[f64],
    theta_e_hat: [f64; 2],
    positions: &[[f64; 2]],
    config: &SystemConfig,
    policy: GuardPolicy,
    counters: &mut GuardCounters,
) -> Vec<f64> {
    z1.iter()
        .zip(positions)
        .map(|(&z, &pos)| {
            let mut hp = pointing_gain(theta_e_hat, pos, config);
            if policy.guarded && hp < EPS_HP {
                hp = EPS_HP;
                counters.hp_floor += 1;
            }
            clamp_fade(z / hp, policy, counters)
        })
        .collect()
}

/// Full pipeline inference on one measurement block.
pub fn estimate(
    models: &HierarchicalModels,
    y_bar: &Array2<f64>,
    config: &SystemConfig,
    policy: GuardPolicy,
    counters: &mut GuardCounters,
) -> Result<EstimateRecord> {
    let (ratios, faded) = stage1_normalize(y_bar, eps_den(config));
    counters.den_floor += faded.iter().filter(|&&f| f).count() as u64;
    let theta_aoa_hat = stage1_aoa(models, &ratios)?;
    let z1 = stage1_compensate(y_bar, theta_aoa_hat, config, counters);
    let theta_e_hat = stage2_pe(models, &z1)?;
    let positions = lens_positions(config)?;
    let h_a_hat = stage3_turbulence(&z1, theta_e_hat, &positions, config, policy, counters);
    Ok(EstimateRecord::new(
        theta_e_hat,
        theta_aoa_hat,
        h_a_hat,
        MethodTag::Hierarchical,
    ))
}

/// Builds the stage-1 design matrices (flattened ratios -> AoA).
pub fn stage1_design(
    samples: &[&SampleRecord],
    config: &SystemConfig,
) -> (Array2<f64>, Array2<f64>) {
    let n = samples.len();
    let d = 4 * config.n_lens;
    let floor = eps_den(config);
    let mut x = Array2::zeros((n, d));
    let mut y = Array2::zeros((n, 2));
    for (r, s) in samples.iter().enumerate() {
        let (ratios, _) = stage1_normalize(&s.y_bar, floor);
        for (c, v) in ratios.iter().enumerate() {
            x[[r, c]] = *v;
        }
        y[[r, 0]] = s.state.theta_aoa[0];
        y[[r, 1]] = s.state.theta_aoa[1];
    }
    (x, y)
}

/// Trains both stages. Stage 2 consumes stage-1's own predictions for the
/// compensation step, matching deployment conditions.
pub fn train_hierarchical(
    samples: &[&SampleRecord],
    config: &SystemConfig,
    stage1_cfg: &TrainConfig,
    stage2_cfg: &TrainConfig,
) -> Result<(HierarchicalModels, Vec<EpochStats>, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let n_lens = config.n_lens;
    let (x1, y1) = stage1_design(samples, config);
    let spec1 = MlpSpec::new(vec![4 * n_lens, 128, 64, 2], stage1_cfg.seed);
    let (stage1_model, trace1) = train(mlp_init(&spec1)?, &x1, &y1, stage1_cfg)?;

    // Stage-2 inputs: compensate with stage-1 predictions, not ground truth.
    let aoa_pred = stage1_model.predict_batch(&x1)?;
    let mut counters = GuardCounters::default();
    let mut x2 = Array2::zeros((samples.len(), n_lens));
    let mut y2 = Array2::zeros((samples.len(), 2));
    for (r, s) in samples.iter().enumerate() {
        let aoa = [aoa_pred[[r, 0]], aoa_pred[[r, 1]]];
        let z1 = stage1_compensate(&s.y_bar, aoa, config, &mut counters);
        for (c, v) in z1.iter().enumerate() {
            x2[[r, c]] = *v;
        }
        y2[[r, 0]] = s.state.theta_e[0];
        y2[[r, 1]] = s.state.theta_e[1];
    }
    let spec2 = MlpSpec::new(vec![n_lens, 128, 64, 2], stage2_cfg.seed);
    let (stage2_model, trace2) = train(mlp_init(&spec2)?, &x2, &y2, stage2_cfg)?;

    Ok((
        HierarchicalModels {
            stage1_aoa_model: stage1_model,
            stage2_pe_model: stage2_model,
        },
        trace1,
        trace2,
    ))
}
