//! Effective resonance extraction: per-column fits of the asymmetric
//! single-resonance line shape, and exponential fits of ring-down traces.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::leastsq::{self, Options, Problem};

/// Effective single-resonance parameters of one fixed-field column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnResonance {
    /// Effective resonance frequency, GHz.
    pub f_r: f64,
    /// Effective total half-width kappa_i + kappa_e, GHz.
    pub kappa: f64,
    pub kappa_i: f64,
    pub kappa_e: f64,
    pub phi: f64,
    /// Background transmission magnitude.
    pub alpha: f64,
    /// RMS residual of the fit.
    pub residual: f64,
}

/// Single-resonance magnitude model
/// `alpha * |1 - kappa_e e^{i phi} / (i (f_r - f) + kappa)|`.
fn line_shape(params: &[f64], f: f64) -> f64 {
    let [f_r, kappa_i, kappa_e, phi, alpha] = [params[0], params[1], params[2], params[3], params[4]];
    let kappa = kappa_i + kappa_e;
    let num = Complex64::new(0.0, phi).exp() * kappa_e;
    let den = Complex64::new(kappa, f_r - f);
    alpha * (Complex64::new(1.0, 0.0) - num / den).norm()
}

/// Fit the asymmetric single-resonance shape to a |S21| column.
///
/// A column without a resolvable dip (depth below 3x the median absolute
/// deviation) is rejected with [`Error::NoDip`] so map-level callers can skip
/// it.
pub fn extract_from_column(f_axis: &[f64], column: &[f64]) -> Result<ColumnResonance> {
    if f_axis.len() != column.len() || f_axis.len() < 8 {
        return Err(Error::InvalidConfig(
            "column extraction needs matching axes with at least 8 samples".into(),
        ));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut deviations: Vec<f64> = column.iter().map(|v| (v - median).abs()).collect();
    deviations.sort_by(f64::total_cmp);
    let mad = deviations[deviations.len() / 2];

    let (min_idx, min_val) = column
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k, *v))
        .unwrap();
    let depth = median - min_val;
    let threshold = 3.0 * mad;
    if !(depth > threshold) || !(depth > 0.0) {
        return Err(Error::NoDip { depth, threshold });
    }

    let span = (f_axis[f_axis.len() - 1] - f_axis[0]).abs();
    let f_r0 = f_axis[min_idx];
    let alpha0 = median.max(1e-12);

    // Half-width at half depth around the minimum.
    let half_level = min_val + 0.5 * depth;
    let mut left = f_axis[0];
    for k in (0..min_idx).rev() {
        if column[k] >= half_level {
            left = f_axis[k];
            break;
        }
    }
    let mut right = f_axis[f_axis.len() - 1];
    for k in min_idx..column.len() {
        if column[k] >= half_level {
            right = f_axis[k];
            break;
        }
    }
    let kappa0 = ((right - left).abs() / 2.0).max(span / (f_axis.len() as f64) / 2.0);
    let kappa_e0 = (kappa0 * (depth / alpha0).min(0.999)).max(kappa0 * 1e-3);
    let kappa_i0 = (kappa0 - kappa_e0).max(0.0);

    let x0 = [f_r0, kappa_i0, kappa_e0, 0.0, alpha0];
    let f_lo = f_axis[0].min(f_axis[f_axis.len() - 1]);
    let f_hi = f_axis[0].max(f_axis[f_axis.len() - 1]);
    let lower = [f_lo, 0.0, kappa0 * 1e-9, -std::f64::consts::PI, alpha0 * 1e-6];
    let upper = [f_hi, span, span, std::f64::consts::PI, alpha0 * 100.0];
    let scales = [
        kappa0.max(span * 1e-6),
        kappa0,
        kappa0,
        1.0,
        alpha0,
    ];

    let problem = Problem {
        residuals: |p: &[f64]| {
            Ok(f_axis
                .iter()
                .zip(column)
                .map(|(&f, &d)| line_shape(p, f) - d)
                .collect())
        },
        x0: &x0,
        lower: &lower,
        upper: &upper,
        frozen: &[false; 5],
        scales: &scales,
    };
    let sol = leastsq::solve(problem, &Options::default())?;
    let p = sol.params;
    Ok(ColumnResonance {
        f_r: p[0],
        kappa: p[1] + p[2],
        kappa_i: p[1],
        kappa_e: p[2],
        phi: p[3],
        alpha: p[4],
        residual: (sol.cost / column.len() as f64).sqrt(),
    })
}

/// Exponential ring-down fit result.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RingdownFit {
    /// Decay constant in GHz (ordinary frequency): |S21| ~ exp(-2 pi k t).
    pub kappa_tilde: f64,
    /// RMS residual of the log-linear regression.
    pub residual: f64,
}

/// Fit `|S21|(t) = A exp(-2 pi kappa_tilde t)` to a ring-down trace
/// (times in µs, kappa in GHz) by linear regression on the logarithm.
pub fn extract_from_ringdown(t_us: &[f64], trace: &[f64]) -> Result<RingdownFit> {
    if t_us.len() != trace.len() {
        return Err(Error::InvalidConfig(
            "ring-down fit needs matching time and value arrays".into(),
        ));
    }
    let peak = trace.iter().copied().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::InvalidConfig("ring-down trace is empty".into()));
    }
    // Keep the usable dynamic range; drop the numerical floor.
    let floor = peak * 1e-9;
    let pts: Vec<(f64, f64)> = t_us
        .iter()
        .zip(trace)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InvalidConfig(
            "ring-down fit needs at least 5 usable samples".into(),
        ));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom <= 0.0 {
        return Err(Error::InvalidConfig(
            "ring-down fit needs spread time samples".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let rms = (pts
        .iter()
        .map(|(t, y)| (y - (intercept + slope * t)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    // slope is per µs; GHz * 2 pi * 1e3 = per µs.
    Ok(RingdownFit {
        kappa_tilde: -slope / (2.0 * std::f64::consts::PI * 1e3),
        residual: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iomodel::{CoupledModeModel, ResonatorParams, SpinModeParams};
    use approx::assert_relative_eq;

    fn column_of(model: &CoupledModeModel, f_axis: &[f64]) -> Vec<f64> {
        f_axis
            .iter()
            .map(|&f| model.s21_magnitude(f).unwrap())
            .collect()
    }

    #[test]
    fn recovers_bare_cavity_parameters() {
        let r = ResonatorParams {
            f_r: 2.93,
            kappa_i: 7.0e-6,
            kappa_e: 9.5e-6,
            phi: 0.4,
            alpha: num_complex::Complex64::new(0.85, 0.0),
        };
        let model = CoupledModeModel::new(r, vec![]).unwrap();
        let f_axis: Vec<f64> = (0..401)
            .map(|k| 2.93 - 2.0e-4 + 1.0e-6 * k as f64)
            .collect();
        let col = column_of(&model, &f_axis);
        let fit = extract_from_column(&f_axis, &col).unwrap();
        assert_relative_eq!(fit.f_r, r.f_r, max_relative = 1e-9);
        assert_relative_eq!(fit.kappa, r.kappa(), max_relative = 1e-6);
        assert_relative_eq!(fit.kappa_e, r.kappa_e, max_relative = 1e-5);
        assert_relative_eq!(fit.phi, r.phi, max_relative = 1e-4);
        assert_relative_eq!(fit.alpha, 0.85, max_relative = 1e-7);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn flat_column_reports_no_dip() {
        let f_axis: Vec<f64> = (0..64).map(|k| 1.0 + 1e-4 * k as f64).collect();
        let col = vec![0.9; 64];
        assert!(matches!(
            extract_from_column(&f_axis, &col),
            Err(Error::NoDip { .. })
        ));
    }

    #[test]
    fn dispersive_pull_matches_two_mode_algebra() {
        let r = ResonatorParams::symmetric(0.4143, 1.9e-6, 1.9e-6);
        let g = 0.10e-3;
        let gamma = 1.6e-3;
        let detuning = 8.0e-3; // Omega - f_r >> G
        let model = CoupledModeModel::new(
            r,
            vec![SpinModeParams::new(r.f_r + detuning, gamma, g)],
        )
        .unwrap();
        let f_axis: Vec<f64> = (0..801)
            .map(|k| r.f_r - 8.0e-5 + 2.0e-7 * k as f64)
            .collect();
        let col = column_of(&model, &f_axis);
        let fit = extract_from_column(&f_axis, &col).unwrap();
        let pull = g * g * detuning / (detuning * detuning + gamma * gamma);
        assert_relative_eq!(fit.f_r - r.f_r, -pull, max_relative = 0.02);
    }

    #[test]
    fn ringdown_fit_recovers_planted_rate() {
        let kappa = 3.78e-6; // GHz
        let rate = 2.0 * std::f64::consts::PI * kappa * 1e3; // per us
        let t: Vec<f64> = (0..200).map(|k| 0.5 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|&tt| 0.7 * (-rate * tt).exp()).collect();
        let fit = extract_from_ringdown(&t, &v).unwrap();
        assert_relative_eq!(fit.kappa_tilde, kappa, max_relative = 1e-12);
        assert!(fit.residual < 1e-12);
    }
}
