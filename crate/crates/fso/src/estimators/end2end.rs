//! End-to-end baseline: a single MLP mapping the raw measurement vector to
//! all channel parameters at once.

use ndarray::{Array1, Array2};

use crate::config::SystemConfig;
use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::estimators::{clamp_fade, EstimateRecord, GuardCounters, GuardPolicy, MethodTag};
use crate::mlp::{mlp_init, train, EpochStats, MlpModel, MlpSpec, TrainConfig};

/// Builds the end-to-end design matrices: flattened raw measurements to the
/// stacked parameter vector [theta_e, theta_aoa, h_a].
pub fn end2end_design(
    samples: &[&SampleRecord],
    config: &SystemConfig,
) -> (Array2<f64>, Array2<f64>) {
    let n = samples.len();
    let d_in = 4 * config.n_lens;
    let d_out = 4 + config.n_lens;
    let mut x = Array2::zeros((n, d_in));
    let mut y = Array2::zeros((n, d_out));
    for (r, s) in samples.iter().enumerate() {
        for (c, v) in s.y_bar.iter().enumerate() {
            x[[r, c]] = *v;
        }
        y[[r, 0]] = s.state.theta_e[0];
        y[[r, 1]] = s.state.theta_e[1];
        y[[r, 2]] = s.state.theta_aoa[0];
        y[[r, 3]] = s.state.theta_aoa[1];
        for (c, h) in s.state.h_a.iter().enumerate() {
            y[[r, 4 + c]] = *h;
        }
    }
    (x, y)
}

/// Trains the joint network with the larger 512-256-128 architecture.
pub fn train_end2end(
    samples: &[&SampleRecord],
    config: &SystemConfig,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let (x, y) = end2end_design(samples, config);
    let spec = MlpSpec::new(
        vec![4 * config.n_lens, 512, 256, 128, 4 + config.n_lens],
        cfg.seed,
    );
    train(mlp_init(&spec)?, &x, &y, cfg)
}

/// One forward pass; jitter follows by subtraction of the angle estimates.
pub fn end2end_estimate(
    model: &MlpModel,
    y_bar: &Array2<f64>,
    policy: GuardPolicy,
    counters: &mut GuardCounters,
) -> Result<EstimateRecord> {
    let n_lens = y_bar.nrows();
    if model.input_dim() != 4 * n_lens || model.output_dim() != 4 + n_lens {
        return Err(Error::Shape(format!(
            "model dims ({} -> {}) do not match a {}-lens block",
            model.input_dim(),
            model.output_dim(),
            n_lens
        )));
    }
    let flat = Array1::from_iter(y_bar.iter().cloned());
    let out = model.predict(&flat)?;
    let theta_e = [out[0], out[1]];
    let theta_aoa = [out[2], out[3]];
    let h_a = out
        .iter()
        .skip(4)
        .map(|&h| clamp_fade(h, policy, counters))
        .collect();
    Ok(EstimateRecord::new(
        theta_e,
        theta_aoa,
        h_a,
        MethodTag::End2End,
    ))
}
