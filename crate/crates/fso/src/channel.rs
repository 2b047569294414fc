//! Channel physics: lens-array geometry, per-lens pointing gain, quad-cell
//! AoA gains, Gamma-Gamma fading, and noisy measurement synthesis.
//!
//! Everything here is pure given an explicit RNG, so parallel callers each
//! own an independent seedable stream.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::special::{gauss_legendre, ln_bessel_k, ln_gamma, std_normal_cdf};

/// One realization of the unknown channel parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    /// Transmitter pointing error (theta_ex, theta_ey), rad.
    pub theta_e: [f64; 2],
    /// Receiver jitter (theta_rx, theta_ry), rad.
    pub theta_r: [f64; 2],
    /// Angle of arrival, always theta_e + theta_r, rad.
    pub theta_aoa: [f64; 2],
    /// Per-lens Gamma-Gamma fades, unit mean.
    pub h_a: Vec<f64>,
}

impl ChannelState {
    pub fn new(theta_e: [f64; 2], theta_r: [f64; 2], h_a: Vec<f64>) -> Self {
        let theta_aoa = [theta_e[0] + theta_r[0], theta_e[1] + theta_r[1]];
        Self {
            theta_e,
            theta_r,
            theta_aoa,
            h_a,
        }
    }
}

/// Block-averaged photocurrents, one row per lens, one column per quad cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBlock {
    /// n_lens x 4 matrix of block-averaged currents (A). Noise can push
    /// entries slightly negative; they are preserved as-is.
    pub y_bar: Array2<f64>,
    /// Digest of the SystemConfig this block was synthesized under.
    pub config_digest: String,
}

/// The four per-cell AoA gains, ordered as quadrants (+x+y, -x+y, -x-y, +x-y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadGains {
    pub g: [f64; 4],
}

impl QuadGains {
    pub fn total(&self) -> f64 {
        self.g.iter().sum()
    }
}

/// Lens centers on a sqrt(N) x sqrt(N) grid centered at the origin,
/// row-major order.
pub fn lens_positions(config: &SystemConfig) -> Result<Vec<[f64; 2]>> {
    let m = config.grid_side();
    if m * m != config.n_lens {
        return Err(Error::Config(format!(
            "n_lens must be a perfect square, got {}",
            config.n_lens
        )));
    }
    let half = (m as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(config.n_lens);
    for l in 0..m {
        for k in 0..m {
            out.push([
                (k as f64 - half) * config.lens_pitch,
                (l as f64 - half) * config.lens_pitch,
            ]);
        }
    }
    Ok(out)
}

/// Peak-normalized pointing gain of a lens at `lens_center` under pointing
/// error `theta_e`: (r_a/w_z)^2 exp(-|c - Z_L theta_e|^2 / w_z^2).
pub fn pointing_gain(theta_e: [f64; 2], lens_center: [f64; 2], config: &SystemConfig) -> f64 {
    let dx = lens_center[0] - config.link_distance * theta_e[0];
    let dy = lens_center[1] - config.link_distance * theta_e[1];
    let w2 = config.beam_waist * config.beam_waist;
    (config.lens_radius * config.lens_radius / w2) * (-(dx * dx + dy * dy) / w2).exp()
}

/// Pointing gain via numerical integration of the Gaussian irradiance over
/// the lens disk, normalized by the total beam power. Oracle for
/// [`pointing_gain`], which assumes constant intensity across the aperture.
pub fn pointing_gain_exact(
    theta_e: [f64; 2],
    lens_center: [f64; 2],
    config: &SystemConfig,
    quadrature_order: usize,
) -> f64 {
    let order = quadrature_order.max(8);
    let (nodes, weights) = gauss_legendre(order);
    let cx = lens_center[0] - config.link_distance * theta_e[0];
    let cy = lens_center[1] - config.link_distance * theta_e[1];
    let w2 = config.beam_waist * config.beam_waist;
    let ra = config.lens_radius;

    // Polar integration over the disk of radius r_a around the lens center.
    let mut acc = 0.0;
    for (rn, rw) in nodes.iter().zip(&weights) {
        let r = 0.5 * ra * (rn + 1.0);
        let jr = 0.5 * ra * r * rw;
        for (pn, pw) in nodes.iter().zip(&weights) {
            let phi = std::f64::consts::PI * (pn + 1.0);
            let jp = std::f64::consts::PI * pw;
            let x = cx + r * phi.cos();
            let y = cy + r * phi.sin();
            acc += jr * jp * (-(x * x + y * y) / w2).exp();
        }
    }
    acc / (std::f64::consts::PI * w2)
}

/// Mass of the shifted Gaussian PSF over the rectangle
/// [x_l, x_u] x [y_l, y_u], separable in the two axes.
pub fn aoa_rect_mass(
    x_l: f64,
    x_u: f64,
    y_l: f64,
    y_u: f64,
    shift: [f64; 2],
    config: &SystemConfig,
) -> Result<f64> {
    if !(x_l < x_u && y_l < y_u) {
        return Err(Error::Domain(format!(
            "degenerate rectangle [{x_l}, {x_u}] x [{y_l}, {y_u}]"
        )));
    }
    let sigma = config.psf_sigma();
    let mx = std_normal_cdf((x_u - shift[0]) / sigma) - std_normal_cdf((x_l - shift[0]) / sigma);
    let my = std_normal_cdf((y_u - shift[1]) / sigma) - std_normal_cdf((y_l - shift[1]) / sigma);
    Ok(mx * my)
}

/// Closed-form per-cell AoA gains: the spot shift is f_c * theta_aoa and the
/// four quad cells are the quadrant squares of side d_pq/2.
pub fn aoa_cell_gains(theta_aoa: [f64; 2], config: &SystemConfig) -> QuadGains {
    let s = [
        config.focal_length * theta_aoa[0],
        config.focal_length * theta_aoa[1],
    ];
    aoa_cell_gains_at_shift(s, config)
}

/// Per-cell gains for an explicit focal-plane shift (m).
pub fn aoa_cell_gains_at_shift(shift: [f64; 2], config: &SystemConfig) -> QuadGains {
    let half = config.quad_side / 2.0;
    let cell = |x_l: f64, x_u: f64, y_l: f64, y_u: f64| {
        aoa_rect_mass(x_l, x_u, y_l, y_u, shift, config).expect("non-degenerate quad cell")
    };
    QuadGains {
        g: [
            cell(0.0, half, 0.0, half),   // cell 1: +x, +y
            cell(-half, 0.0, 0.0, half),  // cell 2: -x, +y
            cell(-half, 0.0, -half, 0.0), // cell 3: -x, -y
            cell(0.0, half, -half, 0.0),  // cell 4: +x, -y
        ],
    }
}

/// One Gamma-Gamma fade: the product of two independent unit-mean Gamma
/// variates with shapes alpha and beta.
pub fn sample_gamma_gamma<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let gx = Gamma::new(alpha, 1.0 / alpha).expect("alpha > 0");
    let gy = Gamma::new(beta, 1.0 / beta).expect("beta > 0");
    gx.sample(rng) * gy.sample(rng)
}

/// Natural-log Gamma-Gamma density, evaluated in log space so that moderate
/// shape parameters never overflow.
pub fn gamma_gamma_log_pdf(h: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("gamma_gamma_log_pdf requires h > 0, got {h}")));
    }
    let ab = alpha * beta;
    let half_sum = 0.5 * (alpha + beta);
    let ln_k = ln_bessel_k(alpha - beta, 2.0 * (ab * h).sqrt())?;
    Ok(std::f64::consts::LN_2 + half_sum * ab.ln() - ln_gamma(alpha) - ln_gamma(beta)
        + (half_sum - 1.0) * h.ln()
        + ln_k)
}

/// Draws a full channel realization: Gaussian pointing error and jitter,
/// their sum as AoA, and i.i.d. Gamma-Gamma fades per lens.
pub fn sample_channel_state<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> ChannelState {
    let ne = Normal::new(0.0, config.sigma_theta).expect("sigma_theta > 0");
    let nr = Normal::new(0.0, config.sigma_r).expect("sigma_r > 0");
    let theta_e = [ne.sample(rng), ne.sample(rng)];
    let theta_r = [nr.sample(rng), nr.sample(rng)];
    let h_a = (0..config.n_lens)
        .map(|_| sample_gamma_gamma(config.gg_alpha, config.gg_beta, rng))
        .collect();
    ChannelState::new(theta_e, theta_r, h_a)
}

/// Noiseless mean measurement matrix mu_{i,j} for a given state.
pub fn mean_measurement(state: &ChannelState, config: &SystemConfig) -> Result<Array2<f64>> {
    if state.h_a.len() != config.n_lens {
        return Err(Error::Shape(format!(
            "state has {} fades but config expects {}",
            state.h_a.len(),
            config.n_lens
        )));
    }
    let positions = lens_positions(config)?;
    let gains = aoa_cell_gains(state.theta_aoa, config);
    let scale = config.tx_power * config.lumped_loss;
    let mut y = Array2::zeros((config.n_lens, 4));
    for (i, pos) in positions.iter().enumerate() {
        let hp = pointing_gain(state.theta_e, *pos, config);
        for j in 0..4 {
            y[[i, j]] = scale * hp * gains.g[j] * state.h_a[i];
        }
    }
    Ok(y)
}

/// Synthesizes a block-averaged measurement. Block averaging is applied
/// analytically: a single Gaussian draw with variance sigma_n^2 / L_b per
/// cell replaces the average of L_b raw samples.
pub fn synthesize_measurement<R: Rng + ?Sized>(
    state: &ChannelState,
    config: &SystemConfig,
    rng: &mut R,
    noiseless: bool,
) -> Result<MeasurementBlock> {
    let mut y_bar = mean_measurement(state, config)?;
    if !noiseless {
        let noise = Normal::new(0.0, config.block_noise_sigma()).expect("noise sigma > 0");
        for v in y_bar.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(MeasurementBlock {
        y_bar,
        config_digest: config.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn lens_grid_2x2() {
        let got = lens_positions(&cfg()).unwrap();
        assert_eq!(
            got,
            vec![[-0.05, -0.05], [0.05, -0.05], [-0.05, 0.05], [0.05, 0.05]]
        );
    }

    #[test]
    fn lens_grid_16_span() {
        let config = SystemConfig::default().with_n_lens(16);
        let got = lens_positions(&config).unwrap();
        assert_eq!(got.len(), 16);
        let xs: Vec<f64> = got.iter().map(|p| p[0]).collect();
        assert_relative_eq!(xs.iter().cloned().fold(f64::MAX, f64::min), -0.15);
        assert_relative_eq!(xs.iter().cloned().fold(f64::MIN, f64::max), 0.15);
    }

    #[test]
    fn lens_grid_odd_contains_origin() {
        let config = SystemConfig::default().with_n_lens(9);
        let got = lens_positions(&config).unwrap();
        assert!(got.iter().any(|p| p[0] == 0.0 && p[1] == 0.0));
    }

    #[test]
    fn lens_grid_rejects_non_square() {
        let config = SystemConfig {
            n_lens: 6,
            ..cfg()
        };
        assert!(lens_positions(&config).is_err());
    }

    #[test]
    fn pointing_gain_on_axis() {
        let g = pointing_gain([0.0, 0.0], [0.0, 0.0], &cfg());
        assert_relative_eq!(g, 4.0e-4, max_relative = 1e-15);
    }

    #[test]
    fn pointing_gain_corner_lens() {
        let g = pointing_gain([0.0, 0.0], [0.05, 0.05], &cfg());
        assert_relative_eq!(g, 4.0e-4 * (-0.005f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn pointing_gain_deviation_cancels_offset() {
        let g = pointing_gain([1e-3, 0.0], [0.5, 0.0], &cfg());
        assert_relative_eq!(g, 4.0e-4, max_relative = 1e-15);
    }

    #[test]
    fn exact_gain_matches_on_axis() {
        let config = cfg();
        let exact = pointing_gain_exact([0.0, 0.0], [0.0, 0.0], &config, 32);
        // Averaging over the aperture shaves O((r_a/w_z)^2) off the peak.
        assert_relative_eq!(exact, 4.0e-4, max_relative = 3e-4);
        assert!(exact < 4.0e-4);
    }

    #[test]
    fn exact_gain_wide_beam_limit() {
        let config = SystemConfig {
            beam_waist: 1e3,
            ..cfg()
        };
        let approx = pointing_gain([0.0, 0.0], [0.3, -0.2], &config);
        let exact = pointing_gain_exact([0.0, 0.0], [0.3, -0.2], &config, 32);
        assert_relative_eq!(exact, approx, max_relative = 1e-8);
    }

    #[test]
    fn rect_mass_total_probability() {
        let m = aoa_rect_mass(-1e6, 1e6, -1e6, 1e6, [3e-4, -1e-4], &cfg()).unwrap();
        assert_relative_eq!(m, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn rect_mass_symmetric_quadrant() {
        let m = aoa_rect_mass(0.0, 1e6, 0.0, 1e6, [0.0, 0.0], &cfg()).unwrap();
        assert_relative_eq!(m, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn rect_mass_rejects_degenerate() {
        assert!(aoa_rect_mass(1.0, 1.0, 0.0, 1.0, [0.0, 0.0], &cfg()).is_err());
    }

    #[test]
    fn cell_gains_centered_symmetry() {
        let gains = aoa_cell_gains([0.0, 0.0], &cfg());
        for j in 1..4 {
            assert_relative_eq!(gains.g[j], gains.g[0], max_relative = 1e-14);
        }
        // d_pq/(2 sigma) ~ 7.07, so each cell holds essentially a quarter.
        assert_relative_eq!(gains.g[0], 0.25, max_relative = 1e-10);
    }

    #[test]
    fn cell_gains_spot_off_quad() {
        let gains = aoa_cell_gains([0.5, 0.5], &cfg());
        assert!(gains.total() < 1e-12);
    }

    #[test]
    fn cell_gains_table_sample_orientation() {
        // AoA of (3340, -1571) urad pushes the spot into the +x,-y cell.
        let gains = aoa_cell_gains([3.340e-3, -1.571e-3], &cfg());
        let max = gains.g.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(gains.g[3], max);
        assert!(gains.total() <= 1.0 + 1e-12);
    }

    #[test]
    fn gg_log_pdf_reference_values() {
        // 30-digit oracle values for (alpha, beta) = (8, 6).
        let cases = [
            (0.1, -3.8476849781732366),
            (0.5, -0.21123677150250535),
            (1.0, -0.33551487295432946),
            (2.0, -2.1267125464130466),
            (5.0, -8.2797291543885118),
        ];
        for (h, expect) in cases {
            let got = gamma_gamma_log_pdf(h, 8.0, 6.0).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-12);
        }
        assert!(gamma_gamma_log_pdf(0.0, 8.0, 6.0).is_err());
        assert!(gamma_gamma_log_pdf(1e3, 8.0, 6.0).unwrap().is_finite());
    }

    #[test]
    fn state_sampler_determinism_and_consistency() {
        let config = cfg();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = sample_channel_state(&config, &mut r1);
        let b = sample_channel_state(&config, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.theta_aoa[0], a.theta_e[0] + a.theta_r[0]);
        assert_eq!(a.theta_aoa[1], a.theta_e[1] + a.theta_r[1]);
        assert!(a.h_a.iter().all(|&h| h > 0.0));
    }

    #[test]
    fn zero_jitter_degenerate() {
        let config = SystemConfig {
            sigma_r: 1e-30,
            ..cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_channel_state(&config, &mut rng);
        assert!((s.theta_aoa[0] - s.theta_e[0]).abs() < 1e-20);
    }

    #[test]
    fn noiseless_measurement_reference_value() {
        let config = cfg();
        let state = ChannelState::new([0.0, 0.0], [0.0, 0.0], vec![1.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = synthesize_measurement(&state, &config, &mut rng, true).unwrap();
        // 0.1 * 0.7 * 4e-4 exp(-0.005) * 0.25 ~ 6.96e-6 A, identical per row.
        let expect = 0.1 * 0.7 * 4.0e-4 * (-0.005f64).exp() * aoa_cell_gains([0.0, 0.0], &config).g[0];
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(block.y_bar[[i, j]], expect, max_relative = 1e-12);
            }
        }
        assert!((expect - 6.96e-6).abs() / 6.96e-6 < 5e-3);
    }

    #[test]
    fn measurement_row_scales_with_fade() {
        let config = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = ChannelState::new([2e-4, -1e-4], [1e-4, 3e-4], vec![1.0, 1.0, 1.0, 1.0]);
        let scaled = ChannelState::new([2e-4, -1e-4], [1e-4, 3e-4], vec![2.0, 1.0, 1.0, 1.0]);
        let a = synthesize_measurement(&base, &config, &mut rng, true).unwrap();
        let b = synthesize_measurement(&scaled, &config, &mut rng, true).unwrap();
        for j in 0..4 {
            assert_relative_eq!(b.y_bar[[0, j]], 2.0 * a.y_bar[[0, j]], max_relative = 1e-14);
            assert_eq!(b.y_bar[[1, j]], a.y_bar[[1, j]]);
        }
    }

    #[test]
    fn measurement_rejects_dimension_mismatch() {
        let config = cfg();
        let state = ChannelState::new([0.0, 0.0], [0.0, 0.0], vec![1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synthesize_measurement(&state, &config, &mut rng, true).is_err());
    }
}
