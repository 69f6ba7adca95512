use lersim::constants::MU_B_OVER_H;
use lersim::fit::*;
use lersim::iomodel::*;

fn main() {
    let r = ResonatorParams::symmetric(0.4143, 1.9e-6, 1.9e-6);
    let g_true = 0.24e-3;
    let gamma_true = 1.6e-3;
    let g_eff_true = 0.35;
    let b_res = 0.0203;
    let omega0_true = r.f_r - g_eff_true * MU_B_OVER_H * b_res;
    let spec = CavityMapSpec {
        resonator: r,
        transitions: vec![MapTransition {
            law: TransitionLaw::Linear { g_eff: g_eff_true, omega0: omega0_true },
            coupling: g_true,
            gamma: gamma_true,
            gamma_line: 0.0,
        }],
        b_axis: (0..40).map(|k| 0.017 + 1.6e-4 * k as f64).collect(),
        f_axis: (0..120).map(|k| r.f_r - 1.2e-4 + 2.0e-6 * k as f64).collect(),
    };
    let map = simulate_map(&spec).unwrap();

    let mut config = FitConfig::bare(r.f_r + 1e-6, 4.4e-6);
    config.transitions = vec![TransitionFitConfig {
        coupling: ParamSpec::bounded(g_true * 1.3, 0.0, 0.1),
        gamma: ParamSpec::bounded(gamma_true * 0.7, 1e-6, 0.1),
        law: OmegaLaw::Linear {
            omega0: ParamSpec::free(omega0_true * 1.0002),
            g_eff: ParamSpec::free(g_eff_true * 0.8),
        },
    }];
    config.column_diagnostics = false;
    let fit = fit_resonator_map(&map, &config).unwrap();
    println!("status {:?} conv {} iters {} res {:.3e} (init {:.3e})",
        fit.status, fit.converged, fit.iterations, fit.residual_norm, fit.initial_residual_norm);
    println!("f_r {:.9}  kappa_i {:.3e} kappa_e {:.3e} phi {:.3e} alpha {:.6}",
        fit.f_r.value, fit.kappa_i.value, fit.kappa_e.value, fit.phi.value, fit.alpha.value);
    let t = &fit.transitions[0];
    println!("G {:.6e} (true {:.6e})  gamma {:.6e} (true {:.6e})", t.coupling.value, g_true, t.gamma.value, gamma_true);
    println!("omega0 {:.9} (true {:.9})  g_eff {:.6} (true {:.6})",
        t.omega0.unwrap().value, omega0_true, t.g_eff.unwrap().value, g_eff_true);
    println!("auto_frozen {:?}", fit.auto_frozen);
}
