//! Independent numerical oracles shared by the integration and acceptance
//! suites. These deliberately avoid the library's closed forms: brute-force
//! quadrature for PSF masses, a product-distribution convolution for the
//! Gamma-Gamma density, and a flat exhaustive scan for the MAP argmin.

#![allow(dead_code)]

use fso_sim::config::SystemConfig;
use fso_sim::estimators::map::{map_objective, MapGridSpec};
use fso_sim::special::{gauss_legendre, ln_gamma};
use ndarray::Array2;

/// Midpoint-rule mass of an isotropic Gaussian (std `sigma`, centered at
/// `shift`) over [x_l, x_u] x [y_l, y_u], with n x n panels.
pub fn rect_mass_midpoint(
    rect: [f64; 4],
    shift: [f64; 2],
    sigma: f64,
    n: usize,
) -> f64 {
    let [x_l, x_u, y_l, y_u] = rect;
    let hx = (x_u - x_l) / n as f64;
    let hy = (y_u - y_l) / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut acc = 0.0;
    for i in 0..n {
        let x = x_l + (i as f64 + 0.5) * hx - shift[0];
        let ex = (-x * x / (2.0 * sigma * sigma)).exp();
        for j in 0..n {
            let y = y_l + (j as f64 + 0.5) * hy - shift[1];
            acc += ex * (-y * y / (2.0 * sigma * sigma)).exp();
        }
    }
    acc * hx * hy * norm
}

/// Gauss-Legendre tensor-product mass of the same Gaussian; spectrally
/// accurate, cheap enough for long sweeps.
pub fn rect_mass_gl(rect: [f64; 4], shift: [f64; 2], sigma: f64, order: usize) -> f64 {
    let [x_l, x_u, y_l, y_u] = rect;
    let (nodes, weights) = gauss_legendre(order);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let map_axis = |lo: f64, hi: f64, t: f64| 0.5 * (hi - lo) * t + 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (tx, wx) in nodes.iter().zip(&weights) {
        let x = map_axis(x_l, x_u, *tx) - shift[0];
        let fx = (-x * x / (2.0 * sigma * sigma)).exp();
        for (ty, wy) in nodes.iter().zip(&weights) {
            let y = map_axis(y_l, y_u, *ty) - shift[1];
            acc += wx * wy * fx * (-y * y / (2.0 * sigma * sigma)).exp();
        }
    }
    acc * 0.25 * (x_u - x_l) * (y_u - y_l) * norm
}

fn ln_gamma_pdf_unit_mean(x: f64, shape: f64) -> f64 {
    // Gamma with shape k and scale 1/k (unit mean).
    shape * shape.ln() + (shape - 1.0) * x.ln() - shape * x - ln_gamma(shape)
}

/// Gamma-Gamma density as the product-distribution convolution
/// integral(f_X(x) f_Y(h/x) / x dx) over (0, inf), evaluated in log
/// coordinates with Gauss-Legendre quadrature.
pub fn gg_pdf_convolution(h: f64, alpha: f64, beta: f64) -> f64 {
    assert!(h > 0.0);
    // Saddle point of the exponent alpha e^t + beta h e^-t.
    let t0 = 0.5 * (beta * h / alpha).ln();
    let half = 20.0;
    let (nodes, weights) = gauss_legendre(4000);
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(&weights) {
        let tt = t0 + half * t;
        let x = tt.exp();
        let ln_f = ln_gamma_pdf_unit_mean(x, alpha) + ln_gamma_pdf_unit_mean(h / x, beta);
        acc += w * ln_f.exp();
    }
    acc * half
}

/// Mirror of the library's internal grid-axis construction.
pub fn linspace(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![center];
    }
    let step = 2.0 * half_width / (points - 1) as f64;
    (0..points)
        .map(|k| center - half_width + k as f64 * step)
        .collect()
}

/// The level-0 axes that the library's MAP search uses: angle axes centered
/// at zero, identical per-lens fade axes.
pub fn level0_axes(
    config: &SystemConfig,
    grid: &MapGridSpec,
    n_lens: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let p = grid.angle_points;
    let half_e = grid.angle_span_sigmas * config.sigma_theta;
    let half_aoa = grid.angle_span_sigmas * config.sigma_theta_eff();
    let ex = linspace(0.0, half_e, p);
    let ey = linspace(0.0, half_e, p);
    let ax = linspace(0.0, half_aoa, p);
    let ay = linspace(0.0, half_aoa, p);
    let fc = 0.5 * (grid.fade_min + grid.fade_max);
    let fade_half = 0.5 * (grid.fade_max - grid.fade_min);
    let lo = (fc - fade_half).max(1e-6);
    let hw = 0.5 * ((fc + fade_half) - lo);
    let axis = linspace(lo + hw, hw, grid.fade_points);
    (ex, ey, ax, ay, vec![axis; n_lens])
}

/// Flat exhaustive MAP argmin over the full joint grid, including every
/// joint fade combination. Tie-break: first minimum in (ey, ex, ay, ax,
/// lexicographic fades) scan order, matching the library's linear-index
/// tie-break.
pub fn flat_map_argmin(
    y_bar: &Array2<f64>,
    positions: &[[f64; 2]],
    config: &SystemConfig,
    grid: &MapGridSpec,
) -> ([f64; 2], [f64; 2], Vec<f64>, f64) {
    let n_lens = positions.len();
    let (ex_axis, ey_axis, ax_axis, ay_axis, fade_axes) = level0_axes(config, grid, n_lens);
    let p = grid.angle_points;
    let f = grid.fade_points;
    let n_combo: usize = f.pow(n_lens as u32);

    let mut best = f64::INFINITY;
    let mut best_params: Option<([f64; 2], [f64; 2], Vec<f64>)> = None;
    let mut h_a = vec![0.0; n_lens];
    for iey in 0..p {
        for iex in 0..p {
            let theta_e = [ex_axis[iex], ey_axis[iey]];
            for iay in 0..p {
                for iax in 0..p {
                    let theta_aoa = [ax_axis[iax], ay_axis[iay]];
                    for combo in 0..n_combo {
                        let mut rem = combo;
                        // Lens 0 owns the slowest digit.
                        for i in (0..n_lens).rev() {
                            h_a[i] = fade_axes[i][rem % f];
                            rem /= f;
                        }
                        let obj = map_objective(
                            y_bar,
                            positions,
                            config,
                            theta_e,
                            theta_aoa,
                            &h_a,
                            grid.include_angle_prior,
                        )
                        .expect("valid candidate");
                        if obj < best {
                            best = obj;
                            best_params = Some((theta_e, theta_aoa, h_a.clone()));
                        }
                    }
                }
            }
        }
    }
    let (e, a, h) = best_params.expect("non-empty grid");
    (e, a, h, best)
}
