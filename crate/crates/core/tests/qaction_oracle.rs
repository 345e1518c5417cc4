use qchaos_core::dynamics::ActionParams;
use qchaos_core::propagator::{amplitude_table, default_pairs, AmplitudeEntry, PropagatorConfig};
use qchaos_core::qaction::{
    fit_entries, model_amplitude, model_amplitude_with, solve_bvp, BvpOptions, FitOptions, PrefactorMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: f64 = 4.5;

/// Harmonic Euclidean path and action along one axis, `m = ω = 1`.
fn harmonic_path(a: f64, b: f64, t_total: f64, t: f64) -> f64 {
    (a * (t_total - t).sinh() + b * t.sinh()) / t_total.sinh()
}

fn harmonic_action(a: f64, b: f64, t: f64) -> f64 {
    ((a * a + b * b) * t.cosh() - 2.0 * a * b) / (2.0 * t.sinh())
}

fn mehler(a: f64, b: f64, t: f64) -> f64 {
    (1.0 / (std::f64::consts::TAU * t.sinh())).sqrt() * (-harmonic_action(a, b, t)).exp()
}

#[test]
fn harmonic_boundary_value_problem_matches_closed_form() {
    let h = ActionParams::harmonic();
    let traj = solve_bvp(&h, [0.0, 0.0], [1.0, 0.0], T, &BvpOptions::default()).unwrap();
    let expected = 0.5 / T.tanh();
    assert!((traj.action_value - expected).abs() < 1e-8);
    assert!((traj.action_value - 0.5001).abs() < 1e-4);

    let (a, b) = ([0.5, -1.0], [-1.25, 0.75]);
    let traj = solve_bvp(&h, a, b, T, &BvpOptions::default()).unwrap();
    for s in traj.samples.iter().step_by(97) {
        assert!((s.x - harmonic_path(a[0], b[0], T, s.t)).abs() < 1e-8);
        assert!((s.y - harmonic_path(a[1], b[1], T, s.t)).abs() < 1e-8);
    }
    let expected = harmonic_action(a[0], b[0], T) + harmonic_action(a[1], b[1], T);
    assert!((traj.action_value - expected).abs() < 1e-8);
}

#[test]
fn van_vleck_amplitude_is_exact_for_the_oscillator() {
    let h = ActionParams::harmonic();
    for (a, b) in [([0.0, 0.0], [1.0, 0.0]), ([0.5, -1.0], [-1.25, 0.75]), ([1.0, 1.0], [1.5, -1.5])] {
        let g = model_amplitude(&h, a, b, T).unwrap();
        let exact = mehler(a[0], b[0], T) * mehler(a[1], b[1], T);
        assert!((g / exact - 1.0).abs() < 1e-4, "{g} {exact}");
    }
}

#[test]
fn action_gradient_is_final_momentum() {
    let p = ActionParams::quantum();
    let opts = BvpOptions::default();
    let (a, b) = ([0.5, -0.5], [1.0, 1.5]);
    let traj = solve_bvp(&p, a, b, T, &opts).unwrap();
    let momentum = traj.final_momentum(&p);
    let d = 1e-4;
    for k in 0..2 {
        let (mut hi, mut lo) = (b, b);
        hi[k] += d;
        lo[k] -= d;
        let s_hi = solve_bvp(&p, a, hi, T, &opts).unwrap().action_value;
        let s_lo = solve_bvp(&p, a, lo, T, &opts).unwrap().action_value;
        let grad = (s_hi - s_lo) / (2.0 * d);
        assert!((grad - momentum[k]).abs() < 1e-5, "{grad} {}", momentum[k]);
    }
}

#[test]
fn monodromy_determinant_matches_finite_differences() {
    let p = ActionParams::classical(0.25);
    let opts = BvpOptions::default();
    let (a, b) = ([0.5, 0.0], [-1.0, 1.0]);
    let action = |xi: [f64; 2], xf: [f64; 2]| solve_bvp(&p, xi, xf, T, &opts).unwrap().action_value;
    let d = 1e-4;
    let mut mixed = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let shift = |x: [f64; 2], k: usize, s: f64| {
                let mut y = x;
                y[k] += s;
                y
            };
            let v = action(shift(a, i, d), shift(b, j, d)) - action(shift(a, i, d), shift(b, j, -d))
                - action(shift(a, i, -d), shift(b, j, d))
                + action(shift(a, i, -d), shift(b, j, -d));
            mixed[i][j] = -v / (4.0 * d * d);
        }
    }
    let fd = mixed[0][0] * mixed[1][1] - mixed[0][1] * mixed[1][0];
    let m = model_amplitude_with(&p, a, b, T, &opts, PrefactorMode::VanVleck).unwrap();
    assert!((m.determinant / fd - 1.0).abs() < 1e-4, "{} {fd}", m.determinant);
}

fn synthesize(truth: &ActionParams, mode: PrefactorMode) -> Vec<AmplitudeEntry> {
    default_pairs()
        .iter()
        .map(|p| AmplitudeEntry {
            x_in: p.x_in,
            x_fi: p.x_fi,
            t: T,
            g: model_amplitude_with(truth, p.x_in, p.x_fi, T, &BvpOptions::default(), mode)
                .unwrap()
                .amplitude(),
        })
        .collect()
}

#[test]
fn synthetic_amplitudes_are_refit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mode in [PrefactorMode::GroundState, PrefactorMode::VanVleck] {
        for _ in 0..2 {
            let truth = ActionParams::new(
                rng.random_range(0.85..1.15),
                rng.random_range(0.5..1.5),
                rng.random_range(0.4..0.7),
                rng.random_range(0.0..0.4),
                rng.random_range(-0.005..0.005),
            )
            .unwrap();
            let entries = synthesize(&truth, mode);
            let start = ActionParams::new(1.0, 1.0, 0.5, 0.25, 0.0).unwrap();
            let opts = FitOptions {
                mode,
                ..Default::default()
            };
            let fit = fit_entries(&entries, &start, &opts).unwrap();
            let (got, want) = (fit.params.to_array(), truth.to_array());
            for i in 0..5 {
                assert!((got[i] - want[i]).abs() < 1e-6, "{mode}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn harmonic_table_refit_recovers_the_oscillator() {
    let h = ActionParams::harmonic();
    let table = amplitude_table(&h, &PropagatorConfig::default(), T, &default_pairs()).unwrap();
    let start = ActionParams { v0: 1.0, ..ActionParams::classical(0.25) };
    let fit = fit_entries(&table.entries, &start, &FitOptions::default()).unwrap();
    let got = fit.params.to_array();
    for (g, w) in got.iter().zip([1.0, 1.0, 0.5, 0.0, 0.0]) {
        assert!((g - w).abs() < 1e-3, "{got:?}");
    }
    assert_eq!(fit.mode, PrefactorMode::GroundState);
}

#[test]
fn objective_never_increases() {
    let p = ActionParams::classical(0.25);
    let cfg = PropagatorConfig::default();
    let table = amplitude_table(&p, &cfg, T, &default_pairs()).unwrap();
    let fit = fit_entries(&table.entries, &ActionParams { v0: 1.05, ..p }, &FitOptions::default()).unwrap();
    assert!(fit.objective_history.len() >= 2);
    assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(fit.used_entries, 36);
}

#[test]
fn van_vleck_model_matches_the_harmonic_table() {
    let h = ActionParams::harmonic();
    let table = amplitude_table(&h, &PropagatorConfig::default(), T, &default_pairs()).unwrap();
    let mut sum = 0.0;
    for e in &table.entries {
        let m = model_amplitude_with(&h, e.x_in, e.x_fi, T, &BvpOptions::default(), PrefactorMode::VanVleck).unwrap();
        sum += (e.g.ln() - m.ln_amplitude).powi(2);
    }
    let rms = (sum / table.entries.len() as f64).sqrt();
    assert!(rms < 1e-3, "{rms}");
}
