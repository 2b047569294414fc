//! NMSE aggregation and report rendering (plain text and CSV).

use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::estimators::{EstimateRecord, GuardCounters, MethodTag};

/// Per-parameter normalized MSE for one (method, n_lens) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmseReport {
    pub method: MethodTag,
    pub n_lens: usize,
    pub n_samples: usize,
    /// (parameter name, NMSE); `None` marks an all-zero truth denominator.
    pub entries: Vec<(String, Option<f64>)>,
    pub guards: GuardCounters,
}

impl NmseReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
    }
}

/// Parameter column names for an n-lens report.
pub fn parameter_names(n_lens: usize) -> Vec<String> {
    let mut names = vec![
        "theta_ex".to_string(),
        "theta_ey".to_string(),
        "theta_rx".to_string(),
        "theta_ry".to_string(),
        "theta_aoa_x".to_string(),
        "theta_aoa_y".to_string(),
    ];
    for i in 0..n_lens {
        names.push(format!("h_a_{}", i + 1));
    }
    names
}

/// Sum of squared errors over sum of squared truths, per parameter.
pub fn nmse(
    estimates: &[EstimateRecord],
    truths: &[&ChannelState],
    method: MethodTag,
    n_lens: usize,
    guards: GuardCounters,
) -> Result<NmseReport> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::Shape(format!(
            "nmse needs equal non-empty lists, got {} estimates and {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let n_params = 6 + n_lens;
    let mut err2 = vec![0.0; n_params];
    let mut truth2 = vec![0.0; n_params];
    for (est, truth) in estimates.iter().zip(truths) {
        if est.h_a_hat.len() != n_lens || truth.h_a.len() != n_lens {
            return Err(Error::Shape("fade vector length mismatch in nmse".into()));
        }
        let pairs = [
            (est.theta_e_hat[0], truth.theta_e[0]),
            (est.theta_e_hat[1], truth.theta_e[1]),
            (est.theta_r_hat[0], truth.theta_r[0]),
            (est.theta_r_hat[1], truth.theta_r[1]),
            (est.theta_aoa_hat[0], truth.theta_aoa[0]),
            (est.theta_aoa_hat[1], truth.theta_aoa[1]),
        ];
        for (k, (e, t)) in pairs.iter().enumerate() {
            err2[k] += (e - t) * (e - t);
            truth2[k] += t * t;
        }
        for i in 0..n_lens {
            let (e, t) = (est.h_a_hat[i], truth.h_a[i]);
            err2[6 + i] += (e - t) * (e - t);
            truth2[6 + i] += t * t;
        }
    }
    let entries = parameter_names(n_lens)
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let v = if truth2[k] > 0.0 {
                Some(err2[k] / truth2[k])
            } else {
                None
            };
            (name, v)
        })
        .collect();
    Ok(NmseReport {
        method,
        n_lens,
        n_samples: estimates.len(),
        entries,
        guards,
    })
}

/// Columns of the rendered summary table: the six angles plus the first two
/// fade coefficients.
const TABLE_COLUMNS: [&str; 8] = [
    "theta_ex",
    "theta_ey",
    "theta_rx",
    "theta_ry",
    "theta_aoa_x",
    "theta_aoa_y",
    "h_a_1",
    "h_a_2",
];

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        None => "undef".to_string(),
        Some(v) if v == 0.0 => "0".to_string(),
        Some(v) if (1e-4..1e4).contains(&v) => format!("{v:.4}"),
        Some(v) => format!("{v:.2e}"),
    }
}

/// Plain-text NMSE table, methods x n_lens rows.
pub fn render_text(reports: &[NmseReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<7} {:<13}", "n_lens", "method"));
    for c in TABLE_COLUMNS {
        out.push_str(&format!(" {c:>12}"));
    }
    out.push_str(&format!(" {:>8}\n", "guards"));
    for r in reports {
        out.push_str(&format!("{:<7} {:<13}", r.n_lens, r.method.to_string()));
        for c in TABLE_COLUMNS {
            let v = r
                .entries
                .iter()
                .find(|(n, _)| n == c)
                .and_then(|(_, v)| *v);
            out.push_str(&format!(" {:>12}", fmt_cell(v)));
        }
        out.push_str(&format!(" {:>8}\n", r.guards.total()));
    }
    out
}

/// CSV rendering with every parameter column, one row per report.
pub fn render_csv(reports: &[NmseReport]) -> String {
    let mut out = String::new();
    let max_lens = reports.iter().map(|r| r.n_lens).max().unwrap_or(0);
    out.push_str("n_lens,method,n_samples,guards");
    for name in parameter_names(max_lens) {
        out.push(',');
        out.push_str(&name);
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{}",
            r.n_lens,
            r.method,
            r.n_samples,
            r.guards.total()
        ));
        for name in parameter_names(max_lens) {
            out.push(',');
            match r.entries.iter().find(|(n, _)| *n == name) {
                Some((_, Some(v))) => out.push_str(&format!("{v:.6e}")),
                Some((_, None)) => out.push_str("undef"),
                None => {}
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(n: usize) -> ChannelState {
        ChannelState::new([1e-3, -2e-3], [5e-4, 5e-4], vec![1.5; n])
    }

    fn record_from(truth: &ChannelState, method: MethodTag) -> EstimateRecord {
        EstimateRecord::new(
            truth.theta_e,
            truth.theta_aoa,
            truth.h_a.clone(),
            method,
        )
    }

    #[test]
    fn perfect_estimates_give_zero() {
        let t = truth(4);
        let est = vec![record_from(&t, MethodTag::Map); 3];
        let truths = vec![&t; 3];
        let rep = nmse(&est, &truths, MethodTag::Map, 4, GuardCounters::default()).unwrap();
        for (_, v) in &rep.entries {
            assert_eq!(v.unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_estimates_give_one() {
        let t = truth(4);
        let est = vec![EstimateRecord::new([0.0; 2], [0.0; 2], vec![0.0; 4], MethodTag::Map)];
        let truths = vec![&t];
        let rep = nmse(&est, &truths, MethodTag::Map, 4, GuardCounters::default()).unwrap();
        for (_, v) in &rep.entries {
            assert_eq!(v.unwrap(), 1.0);
        }
    }

    #[test]
    fn doubled_estimates_give_one() {
        let t = truth(4);
        let est = vec![EstimateRecord::new(
            [2.0 * t.theta_e[0], 2.0 * t.theta_e[1]],
            [2.0 * t.theta_aoa[0], 2.0 * t.theta_aoa[1]],
            t.h_a.iter().map(|h| 2.0 * h).collect(),
            MethodTag::End2End,
        )];
        let truths = vec![&t];
        let rep = nmse(&est, &truths, MethodTag::End2End, 4, GuardCounters::default()).unwrap();
        for (_, v) in &rep.entries {
            assert!((v.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_truth_marks_undefined() {
        let t = ChannelState::new([0.0, 0.0], [0.0, 0.0], vec![1.0; 4]);
        let est = vec![record_from(&t, MethodTag::Map)];
        let truths = vec![&t];
        let rep = nmse(&est, &truths, MethodTag::Map, 4, GuardCounters::default()).unwrap();
        assert!(rep.get("theta_ex").is_none());
        assert_eq!(rep.get("h_a_1"), Some(0.0));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let t = truth(4);
        let est = vec![record_from(&t, MethodTag::Map)];
        let truths: Vec<&ChannelState> = vec![];
        assert!(nmse(&est, &truths, MethodTag::Map, 4, GuardCounters::default()).is_err());
    }

    #[test]
    fn table_has_expected_columns() {
        let t = truth(4);
        let est = vec![record_from(&t, MethodTag::Hierarchical)];
        let truths = vec![&t];
        let rep = nmse(
            &est,
            &truths,
            MethodTag::Hierarchical,
            4,
            GuardCounters::default(),
        )
        .unwrap();
        let txt = render_text(std::slice::from_ref(&rep));
        for c in TABLE_COLUMNS {
            assert!(txt.contains(c), "missing column {c}");
        }
        let csv = render_csv(std::slice::from_ref(&rep));
        assert!(csv.lines().count() == 2);
    }
}
