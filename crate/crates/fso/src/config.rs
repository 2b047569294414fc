//! System configuration: the deterministic physical and protocol constants
//! of the multi-aperture receiver and the optical link.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// All deterministic constants of the link and receiver.
///
/// Angles are radians, lengths are meters, powers are watts, currents are
/// amperes. The effective AoA spread `sigma_theta_eff` is derived, never
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Optical wavelength (m).
    pub wavelength: f64,
    /// Link distance Z_L (m).
    pub link_distance: f64,
    /// Transmit divergence angle (rad).
    pub divergence: f64,
    /// Beam waist at the receiver plane (m), nominally divergence * link_distance.
    pub beam_waist: f64,
    /// Lens aperture radius r_a (m).
    pub lens_radius: f64,
    /// Inter-lens pitch (m), nominally 5 * lens_radius.
    pub lens_pitch: f64,
    /// Number of lenses; must be a perfect square.
    pub n_lens: usize,
    /// Focal length f_c of each small lens (m).
    pub focal_length: f64,
    /// Effective Gaussian focal-spot width w_spot (m).
    pub spot_width: f64,
    /// Total side length of the quad photodetector d_pq (m).
    pub quad_side: f64,
    /// Transmit power P_t (W).
    pub tx_power: f64,
    /// Deterministic lumped loss h_0, in (0, 1].
    pub lumped_loss: f64,
    /// Per-axis transmitter pointing-error std sigma_theta (rad).
    pub sigma_theta: f64,
    /// Per-axis receiver jitter std sigma_r (rad).
    pub sigma_r: f64,
    /// Gamma-Gamma shape alpha.
    pub gg_alpha: f64,
    /// Gamma-Gamma shape beta.
    pub gg_beta: f64,
    /// Additive noise std per PD sample sigma_n (A).
    pub noise_sigma: f64,
    /// Block length L_b for block averaging.
    pub block_len: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            wavelength: 1550e-9,
            link_distance: 500.0,
            divergence: 2e-3,
            beam_waist: 1.0,
            lens_radius: 0.02,
            lens_pitch: 0.1,
            n_lens: 4,
            focal_length: 0.04,
            spot_width: 400e-6,
            quad_side: 4e-3,
            tx_power: 0.1,
            lumped_loss: 0.7,
            sigma_theta: 1e-3,
            sigma_r: 1e-3,
            gg_alpha: 8.0,
            gg_beta: 6.0,
            noise_sigma: 1e-7,
            block_len: 1000,
        }
    }
}

impl SystemConfig {
    /// Copy of this configuration with a different lens count.
    pub fn with_n_lens(&self, n_lens: usize) -> Self {
        Self {
            n_lens,
            ..self.clone()
        }
    }

    /// Validates all invariants, returning `self` on success.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("link_distance", self.link_distance),
            ("divergence", self.divergence),
            ("beam_waist", self.beam_waist),
            ("lens_radius", self.lens_radius),
            ("lens_pitch", self.lens_pitch),
            ("focal_length", self.focal_length),
            ("spot_width", self.spot_width),
            ("quad_side", self.quad_side),
            ("tx_power", self.tx_power),
            ("sigma_theta", self.sigma_theta),
            ("sigma_r", self.sigma_r),
            ("gg_alpha", self.gg_alpha),
            ("gg_beta", self.gg_beta),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if !(self.lumped_loss > 0.0 && self.lumped_loss <= 1.0) {
            return Err(Error::Config(format!(
                "lumped_loss must be in (0, 1], got {}",
                self.lumped_loss
            )));
        }
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be positive".into()));
        }
        if self.n_lens == 0 || !is_perfect_square(self.n_lens) {
            return Err(Error::Config(format!(
                "n_lens must be a positive perfect square, got {}",
                self.n_lens
            )));
        }
        // Constant-intensity approximation over each aperture requires w_z >> r_a.
        if self.beam_waist < 10.0 * self.lens_radius {
            return Err(Error::Config(format!(
                "beam_waist ({}) must be at least 10x lens_radius ({})",
                self.beam_waist, self.lens_radius
            )));
        }
        Ok(())
    }

    /// Grid side length sqrt(n_lens).
    pub fn grid_side(&self) -> usize {
        (self.n_lens as f64).sqrt().round() as usize
    }

    /// Effective AoA spread per axis: sqrt(sigma_theta^2 + sigma_r^2).
    pub fn sigma_theta_eff(&self) -> f64 {
        (self.sigma_theta * self.sigma_theta + self.sigma_r * self.sigma_r).sqrt()
    }

    /// Gaussian PSF std on the focal plane: w_spot / sqrt(2).
    pub fn psf_sigma(&self) -> f64 {
        self.spot_width / std::f64::consts::SQRT_2
    }

    /// Std of the block-averaged measurement noise: sigma_n / sqrt(L_b).
    pub fn block_noise_sigma(&self) -> f64 {
        self.noise_sigma / (self.block_len as f64).sqrt()
    }

    /// Hex digest binding datasets and models to this configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(&hasher.finalize()[..16])
    }
}

fn is_perfect_square(n: usize) -> bool {
    let r = (n as f64).sqrt().round() as usize;
    r * r == n
}
