//! Independent oracles for unit tests: a fixed-step classical RK4 stepper
//! written without reference to the production integrator, so the two can
//! disagree honestly.

/// Fixed-step classical RK4 from t0 to t1 in `steps` equal steps.
pub fn rk4_fixed<const N: usize>(
    field: impl Fn(f64, &[f64; N]) -> [f64; N],
    mut y: [f64; N],
    t0: f64,
    t1: f64,
    steps: usize,
) -> [f64; N] {
    assert!(steps > 0);
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    for _ in 0..steps {
        let k1 = field(t, &y);
        let mut y2 = y;
        for i in 0..N {
            y2[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = field(t + 0.5 * h, &y2);
        let mut y3 = y;
        for i in 0..N {
            y3[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = field(t + 0.5 * h, &y3);
        let mut y4 = y;
        for i in 0..N {
            y4[i] = y[i] + h * k3[i];
        }
        let k4 = field(t + h, &y4);
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    y
}
