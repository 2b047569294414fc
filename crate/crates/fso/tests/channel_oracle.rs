//! Channel-model checks against independent quadrature oracles.

mod common;

use common::{gg_pdf_convolution, rect_mass_gl, rect_mass_midpoint};
use fso_sim::channel::{
    aoa_cell_gains, aoa_cell_gains_at_shift, gamma_gamma_log_pdf, pointing_gain,
    pointing_gain_exact,
};
use fso_sim::special::gauss_legendre;
use fso_sim::SystemConfig;

fn quad_rects(config: &SystemConfig) -> [[f64; 4]; 4] {
    let half = config.quad_side / 2.0;
    [
        [0.0, half, 0.0, half],
        [-half, 0.0, 0.0, half],
        [-half, 0.0, -half, 0.0],
        [0.0, half, -half, 0.0],
    ]
}

#[test]
fn cell_gains_match_midpoint_integration_at_reference_shift() {
    let config = SystemConfig::default();
    // Focal-plane shift produced by a ~(3.34, -1.57) mrad arrival angle.
    let shift = [133.6e-6, -62.8e-6];
    let gains = aoa_cell_gains_at_shift(shift, &config);
    for (g, rect) in gains.g.iter().zip(quad_rects(&config)) {
        let oracle = rect_mass_midpoint(rect, shift, config.psf_sigma(), 2000);
        assert!(
            (g - oracle).abs() < 1e-6,
            "gain {g} vs midpoint oracle {oracle}"
        );
    }
    // The shifted spot concentrates in the +x/-y cell.
    assert!(gains.g[3] > gains.g[0]);
    assert!(gains.g[3] > gains.g[1]);
    assert!(gains.g[3] > gains.g[2]);
}

#[test]
fn cell_gains_match_gl_oracle_over_angle_sweep() {
    let config = SystemConfig::default();
    // Arrival angles across the +-3 sigma_eff range on both axes.
    for kx in -3..=3 {
        for ky in -3..=3 {
            let theta = [
                kx as f64 * config.sigma_theta_eff(),
                ky as f64 * config.sigma_theta_eff(),
            ];
            let shift = [config.focal_length * theta[0], config.focal_length * theta[1]];
            let gains = aoa_cell_gains(theta, &config);
            for (g, rect) in gains.g.iter().zip(quad_rects(&config)) {
                let oracle = rect_mass_gl(rect, shift, config.psf_sigma(), 48);
                assert!(
                    (g - oracle).abs() < 1e-9,
                    "theta {theta:?}: gain {g} vs GL oracle {oracle}"
                );
            }
        }
    }
}

#[test]
fn gamma_gamma_pdf_matches_product_convolution() {
    for (alpha, beta) in [(8.0, 6.0), (4.0, 2.0), (11.6, 10.1)] {
        for h in [0.05, 0.2, 0.5, 1.0, 1.5, 2.0, 3.5, 5.0] {
            let ours = gamma_gamma_log_pdf(h, alpha, beta).unwrap().exp();
            let oracle = gg_pdf_convolution(h, alpha, beta);
            assert!(
                (ours - oracle).abs() / oracle.abs() < 1e-8,
                "(alpha, beta, h) = ({alpha}, {beta}, {h}): {ours} vs {oracle}"
            );
        }
    }
}

#[test]
fn gamma_gamma_pdf_normalizes_and_has_unit_mean() {
    let (alpha, beta) = (8.0, 6.0);
    // Integrate in log coordinates over a generous range.
    let (nodes, weights) = gauss_legendre(3000);
    let (lo, hi) = (-14.0f64, 4.0f64);
    let mut mass = 0.0;
    let mut mean = 0.0;
    for (t, w) in nodes.iter().zip(&weights) {
        let tt = 0.5 * (hi - lo) * t + 0.5 * (hi + lo);
        let h = tt.exp();
        // Substitution dh = h dt.
        let pdf = gamma_gamma_log_pdf(h, alpha, beta).unwrap().exp() * h;
        mass += w * pdf;
        mean += w * pdf * h;
    }
    mass *= 0.5 * (hi - lo);
    mean *= 0.5 * (hi - lo);
    assert!((mass - 1.0).abs() < 1e-6, "pdf mass {mass}");
    assert!((mean - 1.0).abs() < 1e-6, "pdf mean {mean}");
}

#[test]
fn pointing_gain_approximation_error_is_second_order_in_aperture() {
    let config = SystemConfig::default();
    let bound = 2.0 * (config.lens_radius / config.beam_waist).powi(2);
    for theta in [[0.0, 0.0], [5e-4, -5e-4], [1.5e-3, 1e-3], [-2e-3, 0.0]] {
        for pos in [[0.05, 0.05], [-0.05, 0.05], [0.35, -0.35]] {
            let approx = pointing_gain(theta, pos, &config);
            let exact = pointing_gain_exact(theta, pos, &config, 48);
            assert!(
                (approx - exact).abs() / exact <= bound,
                "theta {theta:?} pos {pos:?}: approx {approx} exact {exact}"
            );
        }
    }
}

#[test]
fn cell_gains_sum_below_one_and_centered_split_is_even() {
    let config = SystemConfig::default();
    let centered = aoa_cell_gains([0.0, 0.0], &config);
    for g in centered.g {
        assert!((g - centered.g[0]).abs() < 1e-15);
    }
    assert!(centered.total() < 1.0);
    // Nearly all mass lands on the quad for a centered spot.
    assert!(centered.total() > 0.999);
}
