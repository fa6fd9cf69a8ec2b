use uqdyn::dynmodels::{rk4_integrate, simulate_bouc_wen, BoucWenParams, TimeGrid};

/// Free vibration of a damped SDOF from `y(0) = 1, y'(0) = 0`.
fn free_sdof(zeta: f64, omega: f64, t: f64) -> f64 {
    let wd = omega * (1.0 - zeta * zeta).sqrt();
    (-zeta * omega * t).exp() * ((wd * t).cos() + zeta * omega / wd * (wd * t).sin())
}

/// Response of `y'' + 2 zeta omega y' + omega^2 y = -a sin(wx t)` from rest.
fn forced_sdof(zeta: f64, omega: f64, a: f64, wx: f64, t: f64) -> f64 {
    let f = -a;
    let d = (omega * omega - wx * wx).powi(2) + (2.0 * zeta * omega * wx).powi(2);
    let p = f * (omega * omega - wx * wx) / d;
    let q = -f * 2.0 * zeta * omega * wx / d;
    let wd = omega * (1.0 - zeta * zeta).sqrt();
    let c1 = -q;
    let c2 = (zeta * omega * c1 - p * wx) / wd;
    p * (wx * t).sin() + q * (wx * t).cos() + (-zeta * omega * t).exp() * (c1 * (wd * t).cos() + c2 * (wd * t).sin())
}

fn sup_error(dt: f64) -> f64 {
    let (zeta, omega) = (0.05, 2.0 * std::f64::consts::PI);
    let grid = TimeGrid::with_horizon(10.0, dt).unwrap();
    let states =
        rk4_integrate(|_, s: &[f64; 2]| [s[1], -2.0 * zeta * omega * s[1] - omega * omega * s[0]], [1.0, 0.0], grid, 1)
            .unwrap();
    states.iter().enumerate().map(|(i, s)| (s[0] - free_sdof(zeta, omega, grid.t(i))).abs()).fold(0.0, f64::max)
}

#[test]
fn rk4_converges_at_fourth_order() {
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| sup_error(dt)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 4.0).abs() < 0.3, "observed order {order} from errors {errs:?}");
    }
}

#[test]
fn bouc_wen_without_hysteresis_is_linear() {
    let x = [0.02, 2.0 * std::f64::consts::PI, 0.0, 1.0, std::f64::consts::PI];
    let p = BoucWenParams::from_inputs(&x, 0.0).unwrap();
    let grid = TimeGrid::with_horizon(30.0, 0.01).unwrap();
    let y = simulate_bouc_wen(&p, grid, [0.0; 3], 1).unwrap();
    let err = y
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - forced_sdof(x[0], x[1], x[3], x[4], grid.t(i))).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "sup error {err:e}");
}
