//! The three inference strategies: grid-search MAP, the end-to-end MLP
//! baseline, and the three-stage hierarchical pipeline, plus the guard
//! machinery they share.

pub mod end2end;
pub mod hierarchical;
pub mod map;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mlp::{load_model, save_model, MlpModel};

/// Which estimator produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodTag {
    Map,
    End2End,
    Hierarchical,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodTag::Map => write!(f, "MAP"),
            MethodTag::End2End => write!(f, "End2End"),
            MethodTag::Hierarchical => write!(f, "Hierarchical"),
        }
    }
}

/// An estimated parameter set. `theta_r_hat` is always the exact difference
/// `theta_aoa_hat - theta_e_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub theta_e_hat: [f64; 2],
    pub theta_r_hat: [f64; 2],
    pub theta_aoa_hat: [f64; 2],
    pub h_a_hat: Vec<f64>,
    pub method: MethodTag,
}

impl EstimateRecord {
    pub fn new(
        theta_e_hat: [f64; 2],
        theta_aoa_hat: [f64; 2],
        h_a_hat: Vec<f64>,
        method: MethodTag,
    ) -> Self {
        let theta_r_hat = [
            theta_aoa_hat[0] - theta_e_hat[0],
            theta_aoa_hat[1] - theta_e_hat[1],
        ];
        Self {
            theta_e_hat,
            theta_r_hat,
            theta_aoa_hat,
            h_a_hat,
            method,
        }
    }
}

/// Numerical floors used by the hierarchical pipeline.
pub const EPS_HP: f64 = 1e-9;
pub const FADE_MIN: f64 = 1e-3;
pub const FADE_MAX: f64 = 20.0;

/// Per-lens-sum floor: ten block-noise sigmas.
pub fn eps_den(config: &SystemConfig) -> f64 {
    10.0 * config.block_noise_sigma()
}

/// Whether the stage-3 guards (pointing-gain floor and fade clamp) are
/// active. Unguarded mode reproduces the raw turbulence-NMSE blow-up at
/// small array sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardPolicy {
    pub guarded: bool,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        Self { guarded: true }
    }
}

impl GuardPolicy {
    pub fn unguarded() -> Self {
        Self { guarded: false }
    }
}

/// Counts of engaged guards over a run; exposed in reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardCounters {
    /// Per-lens sum fell below eps_den during ratio normalization or
    /// compensation.
    pub den_floor: u64,
    /// Pointing gain floored at EPS_HP in stage 3.
    pub hp_floor: u64,
    /// A fade estimate hit the [FADE_MIN, FADE_MAX] clamp.
    pub fade_clamp: u64,
}

impl GuardCounters {
    pub fn merge(&mut self, other: &GuardCounters) {
        self.den_floor += other.den_floor;
        self.hp_floor += other.hp_floor;
        self.fade_clamp += other.fade_clamp;
    }

    pub fn total(&self) -> u64 {
        self.den_floor + self.hp_floor + self.fade_clamp
    }
}

/// Clamps a fade estimate under a policy, counting engagements.
pub(crate) fn clamp_fade(h: f64, policy: GuardPolicy, counters: &mut GuardCounters) -> f64 {
    if !policy.guarded {
        return h;
    }
    if h < FADE_MIN {
        counters.fade_clamp += 1;
        FADE_MIN
    } else if h > FADE_MAX {
        counters.fade_clamp += 1;
        FADE_MAX
    } else {
        h
    }
}

/// Metadata stored next to serialized pipelines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub method: MethodTag,
    pub config_digest: String,
    pub n_lens: usize,
    pub seeds: Vec<u64>,
    /// Best validation losses per trained model.
    pub val_losses: Vec<f64>,
}

/// A trained estimator ready for evaluation.
#[derive(Debug, Clone)]
pub enum TrainedPipeline {
    Hierarchical(hierarchical::HierarchicalModels),
    End2End(MlpModel),
}

impl TrainedPipeline {
    pub fn method(&self) -> MethodTag {
        match self {
            TrainedPipeline::Hierarchical(_) => MethodTag::Hierarchical,
            TrainedPipeline::End2End(_) => MethodTag::End2End,
        }
    }
}

/// Writes a pipeline directory: model containers plus a manifest.
pub fn save_pipeline(
    dir: &Path,
    pipeline: &TrainedPipeline,
    manifest: &PipelineManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match pipeline {
        TrainedPipeline::Hierarchical(models) => {
            save_model(&models.stage1_aoa_model, &dir.join("stage1_aoa.mlp"))?;
            save_model(&models.stage2_pe_model, &dir.join("stage2_pe.mlp"))?;
        }
        TrainedPipeline::End2End(model) => {
            save_model(model, &dir.join("end2end.mlp"))?;
        }
    }
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Loads a pipeline directory written by [`save_pipeline`].
pub fn load_pipeline(dir: &Path) -> Result<(TrainedPipeline, PipelineManifest)> {
    let manifest: PipelineManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let pipeline = match manifest.method {
        MethodTag::Hierarchical => TrainedPipeline::Hierarchical(hierarchical::HierarchicalModels {
            stage1_aoa_model: load_model(&dir.join("stage1_aoa.mlp"))?,
            stage2_pe_model: load_model(&dir.join("stage2_pe.mlp"))?,
        }),
        MethodTag::End2End => TrainedPipeline::End2End(load_model(&dir.join("end2end.mlp"))?),
        MethodTag::Map => {
            return Err(Error::Parse("MAP has no trained pipeline representation".into()))
        }
    };
    Ok((pipeline, manifest))
}
