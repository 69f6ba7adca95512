//! Time-domain response of the coupled resonator–spin system to a drive
//! pulse, in the frame rotating at the drive frequency.
//!
//! The equations of motion are linear with piecewise-constant coefficients
//! (square envelopes), so each segment advances with precomputed RK4
//! polynomial propagators: one matrix–vector product per step. A second
//! trajectory at half the step supplies the returned samples and the
//! step-halving error estimate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;

use super::{extract::extract_from_ringdown, CoupledModeModel};

/// Angular rate per GHz when time is measured in microseconds.
const OMEGA_UNIT: f64 = 2.0 * std::f64::consts::PI * 1e3;

/// Relative tolerance on the step-halving error estimate.
const ACCURACY_TOL: f64 = 1e-6;

/// Drive amplitude as a function of time (unit height).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DriveEnvelope {
    /// Unit drive on `[t_on_us, t_off_us)`, zero elsewhere.
    Square { t_on_us: f64, t_off_us: f64 },
    /// Constant unit drive for the whole run.
    Constant,
}

impl DriveEnvelope {
    fn segments(&self, duration: f64) -> Vec<(f64, f64, f64)> {
        match *self {
            DriveEnvelope::Constant => vec![(0.0, duration, 1.0)],
            DriveEnvelope::Square { t_on_us, t_off_us } => {
                let mut out = Vec::new();
                let on = t_on_us.clamp(0.0, duration);
                let off = t_off_us.clamp(on, duration);
                if on > 0.0 {
                    out.push((0.0, on, 0.0));
                }
                if off > on {
                    out.push((on, off, 1.0));
                }
                if duration > off {
                    out.push((off, duration, 0.0));
                }
                out
            }
        }
    }

    /// End of the drive, if it switches off before `duration`.
    fn drive_off_time(&self, duration: f64) -> Option<f64> {
        match *self {
            DriveEnvelope::Constant => None,
            DriveEnvelope::Square { t_off_us, .. } => {
                (t_off_us < duration).then_some(t_off_us.max(0.0))
            }
        }
    }
}

/// Pulse simulation request.
#[derive(Debug, Clone)]
pub struct PulseSpec {
    pub model: CoupledModeModel,
    /// Drive frequencies; each is integrated in its own rotating frame.
    pub f_axis: Vec<f64>,
    pub duration_us: f64,
    pub step_us: f64,
    pub envelope: DriveEnvelope,
    /// Number of output samples along the time axis.
    pub n_samples: usize,
}

/// Time-resolved |S21| traces plus ring-down characterization.
#[derive(Debug, Clone)]
pub struct PulseResult {
    pub time_us: Vec<f64>,
    pub f_axis: Vec<f64>,
    /// t-major: index ti * f_axis.len() + fi; |r_out| normalized by the
    /// drive amplitude.
    pub magnitude: Vec<f64>,
    /// Ring-down decay constant from |S21| ~ exp(-2 pi kappa t), in GHz
    /// (ordinary frequency), fitted at the drive frequency closest to the
    /// bare resonator. Present when the envelope switches off.
    pub kappa_tilde: Option<f64>,
    /// RMS residual of the log-linear ring-down fit.
    pub ringdown_residual: Option<f64>,
    /// Spin-like mode lifetime 1/(2 pi gamma_eff) in µs, from the eigenmodes
    /// of a single-transition model.
    pub t2_star_us: Option<f64>,
    /// Largest step-halving error estimate across the run.
    pub error_estimate: f64,
}

impl PulseResult {
    /// Trace over time at one frequency index.
    pub fn trace(&self, fi: usize) -> Vec<f64> {
        let nf = self.f_axis.len();
        self.magnitude.iter().skip(fi).step_by(nf).copied().collect()
    }

    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t_us,f_GHz,S21_mag\n");
        for (ti, t) in self.time_us.iter().enumerate() {
            for (fi, f) in self.f_axis.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", t, f, self.magnitude[ti * self.f_axis.len() + fi]);
            }
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// System matrix in the frame rotating at `f_drive`, angular rates per µs.
fn system_matrix(model: &CoupledModeModel, f_drive: f64) -> DMatrix<Complex64> {
    let r = &model.resonator;
    let m = model.spins.len() + 1;
    let mut a = DMatrix::<Complex64>::zeros(m, m);
    a[(0, 0)] = Complex64::new(-r.kappa(), -(r.f_r - f_drive)) * OMEGA_UNIT;
    for (k, s) in model.spins.iter().enumerate() {
        a[(k + 1, k + 1)] =
            Complex64::new(-(s.gamma + s.gamma_line), -(s.omega - f_drive)) * OMEGA_UNIT;
        let g = Complex64::new(0.0, -s.coupling * OMEGA_UNIT);
        a[(0, k + 1)] = g;
        a[(k + 1, 0)] = g;
    }
    a
}

/// Input coupling vector (-i sqrt(rates)), angular rates per µs.
fn drive_vector(model: &CoupledModeModel) -> DVector<Complex64> {
    let r = &model.resonator;
    let m = model.spins.len() + 1;
    let mut d = DVector::<Complex64>::zeros(m);
    let i = Complex64::new(0.0, 1.0);
    d[0] = -i * (Complex64::new(0.0, r.phi).exp() * (r.kappa_e * OMEGA_UNIT)).sqrt();
    for (k, s) in model.spins.iter().enumerate() {
        if s.gamma_line > 0.0 {
            d[k + 1] = -i * Complex64::new(s.gamma_line * OMEGA_UNIT, 0.0).sqrt();
        }
    }
    d
}

/// Output amplitude r_out = r_in - i sqrt(kappa_e e^{i phi}) x_1 - ...
fn output(model: &CoupledModeModel, x: &DVector<Complex64>, r_in: f64) -> Complex64 {
    let r = &model.resonator;
    let i = Complex64::new(0.0, 1.0);
    let mut out = Complex64::new(r_in, 0.0);
    out -= i * (Complex64::new(0.0, r.phi).exp() * (r.kappa_e * OMEGA_UNIT)).sqrt() * x[0];
    for (k, s) in model.spins.iter().enumerate() {
        if s.gamma_line > 0.0 {
            out -= i * Complex64::new(s.gamma_line * OMEGA_UNIT, 0.0).sqrt() * x[k + 1];
        }
    }
    out
}

/// RK4 propagators for one constant-coefficient segment of step h:
/// `x' = P x + S d r_in` with P = sum A^k/k! (k<=4), S = h sum A^k/(k+1)!
/// (k<=3).
fn rk4_propagators(
    a: &DMatrix<Complex64>,
    h: f64,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let m = a.nrows();
    let ah = a * Complex64::new(h, 0.0);
    let id = DMatrix::<Complex64>::identity(m, m);
    let ah2 = &ah * &ah;
    let ah3 = &ah2 * &ah;
    let ah4 = &ah3 * &ah;
    let p = &id + &ah + &ah2.scale(0.5) + &ah3.scale(1.0 / 6.0) + &ah4.scale(1.0 / 24.0);
    let s = (&id + &ah.scale(0.5) + &ah2.scale(1.0 / 6.0) + &ah3.scale(1.0 / 24.0))
        .scale(h);
    (p, s)
}

struct TraceOut {
    samples: Vec<f64>,
    error_estimate: f64,
}

fn integrate_one_frequency(
    model: &CoupledModeModel,
    f_drive: f64,
    duration: f64,
    step: f64,
    envelope: &DriveEnvelope,
    sample_times: &[f64],
) -> TraceOut {
    let a = system_matrix(model, f_drive);
    let d = drive_vector(model);
    let m = a.nrows();

    // Steps are split at segment boundaries and at sample times, so both
    // resolutions evaluate the state at identical instants and snapshots
    // need no interpolation.
    let eps = 1e-12 * duration.max(1.0);
    let run = |h: f64| -> Vec<DVector<Complex64>> {
        let (p, s) = rk4_propagators(&a, h);
        let mut x = DVector::<Complex64>::zeros(m);
        let mut snapshots = Vec::with_capacity(sample_times.len());
        let mut si = 0;
        for (t0, t1, amp) in envelope.segments(duration) {
            let forcing = &s * &d * Complex64::new(amp, 0.0);
            let mut t = t0;
            while si < sample_times.len() && sample_times[si] <= t + eps {
                snapshots.push(x.clone());
                si += 1;
            }
            while t < t1 - eps {
                let mut target = t1;
                if si < sample_times.len() && sample_times[si] < target {
                    target = sample_times[si].max(t);
                }
                let this_h = (target - t).min(h);
                if (this_h - h).abs() <= 1e-12 * h {
                    x = &p * &x + &forcing;
                    t += h;
                } else {
                    let (pb, sb) = rk4_propagators(&a, this_h);
                    x = &pb * &x + &(&sb * &d * Complex64::new(amp, 0.0));
                    t += this_h;
                }
                while si < sample_times.len() && sample_times[si] <= t + eps {
                    snapshots.push(x.clone());
                    si += 1;
                }
            }
        }
        while si < sample_times.len() {
            snapshots.push(x.clone());
            si += 1;
        }
        snapshots
    };

    let coarse = run(step);
    let fine = run(0.5 * step);

    let mut err = 0.0f64;
    let mut scale = 1e-300f64;
    for (c, f) in coarse.iter().zip(&fine) {
        for k in 0..m {
            err = err.max((c[k] - f[k]).norm());
            scale = scale.max(f[k].norm());
        }
    }
    // Richardson: the fine trajectory's error is ~diff/15 for a 4th-order
    // scheme.
    let error_estimate = err / 15.0 / scale;

    let samples = fine
        .iter()
        .zip(sample_times)
        .map(|(x, &t)| {
            let amp = match envelope {
                DriveEnvelope::Constant => 1.0,
                DriveEnvelope::Square { t_on_us, t_off_us } => {
                    if t >= *t_on_us && t < *t_off_us {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            output(model, x, amp).norm()
        })
        .collect();

    TraceOut {
        samples,
        error_estimate,
    }
}

/// Fastest rate of the model relative to drive `f` (GHz).
fn fastest_rate(model: &CoupledModeModel, f_axis: &[f64]) -> f64 {
    let r = &model.resonator;
    let mut rate = r.kappa();
    for s in &model.spins {
        rate = rate.max(s.gamma + s.gamma_line).max(s.coupling);
    }
    for &f in f_axis {
        rate = rate.max((r.f_r - f).abs());
        for s in &model.spins {
            rate = rate.max((s.omega - f).abs());
        }
    }
    rate
}

/// Integrate the drive pulse and return |S21|(t, f) traces with ring-down
/// characterization.
pub fn time_evolve(spec: &PulseSpec) -> Result<PulseResult> {
    spec.model.resonator.validate()?;
    for s in &spec.model.spins {
        s.validate()?;
    }
    if spec.f_axis.is_empty() || !(spec.duration_us > 0.0) || !(spec.step_us > 0.0) {
        return Err(Error::InvalidConfig(
            "pulse needs a drive axis, positive duration and positive step".into(),
        ));
    }
    // The step must resolve the fastest rate: step <= 0.1 / max(rates),
    // with rates in GHz and the step in ns-equivalent units (1/GHz = 1 ns).
    let rate = fastest_rate(&spec.model, &spec.f_axis);
    let limit_us = 0.1 / rate * 1e-3;
    if spec.step_us > limit_us {
        return Err(Error::StepTooLarge {
            step: spec.step_us,
            limit: limit_us,
        });
    }

    let n_samples = spec.n_samples.max(2);
    let sample_times: Vec<f64> = (0..n_samples)
        .map(|k| spec.duration_us * k as f64 / (n_samples - 1) as f64)
        .collect();

    let traces: Vec<TraceOut> = exec::map_indices(spec.f_axis.len(), |fi| {
        integrate_one_frequency(
            &spec.model,
            spec.f_axis[fi],
            spec.duration_us,
            spec.step_us,
            &spec.envelope,
            &sample_times,
        )
    });

    let mut error_estimate = 0.0f64;
    for t in &traces {
        error_estimate = error_estimate.max(t.error_estimate);
    }
    if error_estimate > ACCURACY_TOL {
        return Err(Error::AccuracyFailure {
            estimate: error_estimate,
            tol: ACCURACY_TOL,
        });
    }

    let nf = spec.f_axis.len();
    let mut magnitude = vec![0.0; sample_times.len() * nf];
    for (fi, t) in traces.iter().enumerate() {
        for (ti, v) in t.samples.iter().enumerate() {
            magnitude[ti * nf + fi] = *v;
        }
    }

    // Ring-down fit at the frequency nearest the bare resonance.
    let (mut kappa_tilde, mut ringdown_residual) = (None, None);
    if let Some(t_off) = spec.envelope.drive_off_time(spec.duration_us) {
        let fr = spec.model.resonator.f_r;
        let fi = (0..nf)
            .min_by(|&a, &b| {
                (spec.f_axis[a] - fr)
                    .abs()
                    .total_cmp(&(spec.f_axis[b] - fr).abs())
            })
            .unwrap();
        let trace: Vec<(f64, f64)> = sample_times
            .iter()
            .zip(magnitude.iter().skip(fi).step_by(nf))
            .filter(|(t, _)| **t > t_off + 1e-12)
            .map(|(t, v)| (*t, *v))
            .collect();
        let ts: Vec<f64> = trace.iter().map(|p| p.0 - t_off).collect();
        let vs: Vec<f64> = trace.iter().map(|p| p.1).collect();
        if let Ok(fit) = extract_from_ringdown(&ts, &vs) {
            kappa_tilde = Some(fit.kappa_tilde);
            ringdown_residual = Some(fit.residual);
        }
    }

    // Spin-like lifetime for a single-transition model, from the 2x2
    // eigenmodes (f-independent decay rates).
    let t2_star_us = (spec.model.spins.len() == 1).then(|| {
        let r = &spec.model.resonator;
        let s = &spec.model.spins[0];
        // Eigenvalues of [[-kappa - i fr, -iG], [-iG, -gamma - i Omega]]
        // (GHz): lambda = (tr +- sqrt(tr^2 - 4 det)) / 2.
        let a = Complex64::new(-r.kappa(), -r.f_r);
        let dcoup = Complex64::new(0.0, -s.coupling);
        let b = Complex64::new(-(s.gamma + s.gamma_line), -s.omega);
        let tr = a + b;
        let disc = (tr * tr - (a * b - dcoup * dcoup) * 4.0).sqrt();
        let l1 = (tr + disc) * 0.5;
        let l2 = (tr - disc) * 0.5;
        // Spin weight of each eigenvector picks the spin-like branch.
        let w1 = (l1 - a).norm();
        let w2 = (l2 - a).norm();
        let spin_rate = if w1 >= w2 { -l1.re } else { -l2.re };
        1.0 / (2.0 * std::f64::consts::PI * spin_rate * 1e3)
    });

    Ok(PulseResult {
        time_us: sample_times,
        f_axis: spec.f_axis.clone(),
        magnitude,
        kappa_tilde,
        ringdown_residual,
        t2_star_us,
        error_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iomodel::{ResonatorParams, SpinModeParams};
    use approx::assert_relative_eq;

    fn bare_model() -> CoupledModeModel {
        CoupledModeModel::new(
            ResonatorParams::symmetric(0.4143, 1.89e-6, 1.89e-6),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn steady_state_matches_frequency_domain() {
        let model = bare_model();
        let f = model.resonator.f_r + 2e-6;
        let spec = PulseSpec {
            model: model.clone(),
            f_axis: vec![f],
            duration_us: 2000.0,
            step_us: 0.5,
            envelope: DriveEnvelope::Constant,
            n_samples: 200,
        };
        let res = time_evolve(&spec).unwrap();
        let late = *res.magnitude.last().unwrap();
        let expect = model.s21_magnitude(f).unwrap();
        assert_relative_eq!(late, expect, max_relative = 1e-6);
    }

    #[test]
    fn free_decay_is_exponential_at_kappa() {
        let model = bare_model();
        let kappa = model.resonator.kappa();
        let spec = PulseSpec {
            model: model.clone(),
            f_axis: vec![model.resonator.f_r],
            duration_us: 400.0,
            step_us: 0.5,
            envelope: DriveEnvelope::Square {
                t_on_us: 0.0,
                t_off_us: 150.0,
            },
            n_samples: 400,
        };
        let res = time_evolve(&spec).unwrap();
        let kt = res.kappa_tilde.unwrap();
        assert_relative_eq!(kt, kappa, max_relative = 1e-4);
        assert!(res.ringdown_residual.unwrap() < 1e-6);
        assert!(res.t2_star_us.is_none());
    }

    #[test]
    fn too_large_step_is_rejected() {
        let model = bare_model();
        let spec = PulseSpec {
            model,
            f_axis: vec![0.5143], // 100 MHz detuned: limit ~ 1e-3 us
            duration_us: 10.0,
            step_us: 0.5,
            envelope: DriveEnvelope::Constant,
            n_samples: 10,
        };
        assert!(matches!(
            time_evolve(&spec),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn on_resonance_ringdown_is_faster_than_bare() {
        let r = ResonatorParams::symmetric(0.4143, 1.89e-6, 1.89e-6);
        let spin = SpinModeParams::new(0.4143, 1.6e-3, 0.24e-3);
        let coupled = CoupledModeModel::new(r, vec![spin]).unwrap();
        let spec = PulseSpec {
            model: coupled,
            f_axis: vec![r.f_r],
            duration_us: 400.0,
            step_us: 0.005,
            envelope: DriveEnvelope::Square {
                t_on_us: 0.0,
                t_off_us: 350.0,
            },
            n_samples: 800,
        };
        let res = time_evolve(&spec).unwrap();
        let kt = res.kappa_tilde.unwrap();
        assert!(kt > r.kappa(), "coupled ring-down {kt} vs bare {}", r.kappa());
        // T2* close to the spin lifetime 1/(2 pi gamma).
        let t2 = res.t2_star_us.unwrap();
        let expect = 1.0 / (2.0 * std::f64::consts::PI * 1.6e-3 * 1e3);
        assert_relative_eq!(t2, expect, max_relative = 0.1);
    }
}
