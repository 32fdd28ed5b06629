//! Adaptive Dormand-Prince 5(4) integration with cubic-Hermite dense output
//! and event detection.
//!
//! Events are located in two stages: bisection on the dense output brackets
//! the crossing inside one accepted step, then the bracket is polished by
//! re-integrating from the step's start point, so the reported event state
//! carries integrator accuracy rather than interpolation accuracy.

use thiserror::Error;

/// Tolerance on |event_function| at a reported event.
const EVENT_G_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// State norm beyond which the solution counts as blown up.
    pub blowup_norm: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
            blowup_norm: 1e12,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) {
        assert!(
            self.rel_tol > 0.0 && self.rel_tol <= 1e-2,
            "rel_tol must lie in (0, 1e-2]"
        );
        assert!(
            self.abs_tol > 0.0 && self.abs_tol <= 1e-2,
            "abs_tol must lie in (0, 1e-2]"
        );
        assert!(self.max_step > 0.0);
        assert!(self.max_steps >= 1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

pub struct EventSpec<'a, const N: usize> {
    pub event_fn: Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(
        f: impl Fn(f64, &[f64; N]) -> f64 + 'a,
        direction: Direction,
        terminal: bool,
    ) -> Self {
        Self {
            event_fn: Box::new(f),
            direction,
            terminal,
        }
    }

    pub fn terminal(f: impl Fn(f64, &[f64; N]) -> f64 + 'a, direction: Direction) -> Self {
        Self::new(f, direction, true)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EventRecord<const N: usize> {
    pub t: f64,
    pub state: [f64; N],
    /// Index into the `events` slice passed to `integrate`.
    pub event: usize,
}

/// Accepted integration nodes plus located events. Node derivatives are
/// stored so the trajectory interpolates itself with cubic Hermite data.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub derivs: Vec<[f64; N]>,
    pub events: Vec<EventRecord<N>>,
    /// Index of the terminal event that stopped the run, if any.
    pub terminated_by: Option<usize>,
}

impl<const N: usize> Trajectory<N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn last_state(&self) -> [f64; N] {
        *self.states.last().unwrap()
    }

    fn forward(&self) -> bool {
        self.times.len() < 2 || self.times[1] >= self.times[0]
    }

    /// Dense output at `t`, which must lie within the recorded time range.
    pub fn sample(&self, t: f64) -> [f64; N] {
        assert!(self.len() >= 1, "empty trajectory");
        if self.len() == 1 {
            return self.states[0];
        }
        let fwd = self.forward();
        let (lo, hi) = if fwd {
            (self.first_time(), self.last_time())
        } else {
            (self.last_time(), self.first_time())
        };
        assert!(
            t >= lo - 1e-12 * (1.0 + lo.abs()) && t <= hi + 1e-12 * (1.0 + hi.abs()),
            "sample time {t} outside trajectory range [{lo}, {hi}]"
        );
        let t = t.clamp(lo, hi);
        // binary search for the segment containing t
        let idx = if fwd {
            self.times.partition_point(|&ti| ti <= t)
        } else {
            self.times.partition_point(|&ti| ti >= t)
        };
        let i1 = idx.clamp(1, self.len() - 1);
        let i0 = i1 - 1;
        hermite(
            self.times[i0],
            &self.states[i0],
            &self.derivs[i0],
            self.times[i1],
            &self.states[i1],
            &self.derivs[i1],
            t,
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IntegrateError {
    #[error("step limit exceeded at t = {t_reached} (accepted {steps} steps)")]
    StepLimitExceeded { t_reached: f64, steps: usize },
    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const BS1: f64 = 5179.0 / 57600.0;
const BS3: f64 = 7571.0 / 16695.0;
const BS4: f64 = 393.0 / 640.0;
const BS5: f64 = -92097.0 / 339200.0;
const BS6: f64 = 187.0 / 2100.0;
const BS7: f64 = 1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, coeffs: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in coeffs {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One Dormand-Prince step from (t, y) with slope k1 = f(t, y).
/// Returns (y_new, error_estimate, k7) where k7 = f(t+h, y_new) (FSAL).
fn dopri5_step<const N: usize>(
    field: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
    k1: &[f64; N],
) -> ([f64; N], [f64; N], [f64; N]) {
    let k2 = field(t + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = field(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = field(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = field(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = field(
        t + h,
        &axpy(
            y,
            h,
            &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
    );
    let y5 = axpy(
        y,
        h,
        &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    let k7 = field(t + h, &y5);
    let y4 = axpy(
        y,
        h,
        &[
            (BS1, k1),
            (BS3, &k3),
            (BS4, &k4),
            (BS5, &k5),
            (BS6, &k6),
            (BS7, &k7),
        ],
    );
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = y5[i] - y4[i];
    }
    (y5, err, k7)
}

fn error_norm<const N: usize>(
    err: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    cfg: &IntegratorConfig,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let scale = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / scale;
        acc += e * e;
    }
    (acc / N as f64).sqrt()
}

fn hermite<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    let th = (t - t0) / h;
    let th2 = th * th;
    let th3 = th2 * th;
    let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
    let h10 = th3 - 2.0 * th2 + th;
    let h01 = -2.0 * th3 + 3.0 * th2;
    let h11 = th3 - th2;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

fn finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

fn max_abs<const N: usize>(y: &[f64; N]) -> f64 {
    y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Initial step size heuristic (Hairer-Norsett-Wanner style).
fn initial_step<const N: usize>(
    field: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    span: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    let sc = |y: &[f64; N], i: usize| cfg.abs_tol + cfg.rel_tol * y[i].abs();
    let d0 = (0..N).map(|i| (y0[i] / sc(y0, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..N).map(|i| (f0[i] / sc(y0, i)).powi(2)).sum::<f64>().sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1 = axpy(y0, dir * h0, &[(1.0, f0)]);
    let f1 = field(t0 + dir * h0, &y1);
    let d2 = (0..N)
        .map(|i| ((f1[i] - f0[i]) / sc(y0, i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(cfg.max_step)
}

/// Re-integrate from (t0, y0) to t_target without recording. Used to polish
/// event locations; error reporting mirrors the main loop.
fn advance<const N: usize>(
    field: &impl Fn(f64, &[f64; N]) -> [f64; N],
    cfg: &IntegratorConfig,
    t0: f64,
    y0: &[f64; N],
    t_target: f64,
) -> Result<[f64; N], IntegrateError> {
    if t_target == t0 {
        return Ok(*y0);
    }
    let dir = (t_target - t0).signum();
    let mut t = t0;
    let mut y = *y0;
    let mut k1 = field(t, &y);
    let mut h = initial_step(field, t, &y, &k1, dir, (t_target - t0).abs(), cfg);
    for _ in 0..cfg.max_steps {
        let remaining = (t_target - t) * dir;
        if remaining <= 0.0 {
            return Ok(y);
        }
        let h_try = h.min(remaining);
        let (y_new, err, k7) = dopri5_step(field, t, &y, dir * h_try, &k1);
        let norm = error_norm(&err, &y, &y_new, cfg);
        if norm.is_finite() && norm <= 1.0 {
            t += dir * h_try;
            y = y_new;
            k1 = k7;
            if (t_target - t) * dir <= 1e-14 * t_target.abs().max(1.0) {
                return Ok(y);
            }
            let factor = (0.9 * norm.powf(-0.2)).clamp(0.2, 10.0);
            h = (h_try * factor).min(cfg.max_step);
        } else {
            let factor = if norm.is_finite() {
                (0.9 * norm.powf(-0.2)).clamp(0.2, 0.9)
            } else {
                0.2
            };
            h = h_try * factor;
            if h < 1e3 * f64::EPSILON * t.abs().max(1.0) {
                return Err(IntegrateError::StepLimitExceeded {
                    t_reached: t,
                    steps: 0,
                });
            }
        }
    }
    Err(IntegrateError::StepLimitExceeded {
        t_reached: t,
        steps: cfg.max_steps,
    })
}

/// Integrate `field` from `y0` over `t_span` (forward or backward). The local
/// error per step is controlled by the embedded 4th-order estimate; events
/// are located to |event_function| < 1e-10.
pub fn integrate<const N: usize>(
    field: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    events: &[EventSpec<N>],
) -> Result<Trajectory<N>, IntegrateError> {
    cfg.validate();
    let (t0, t_end) = t_span;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0],
        derivs: vec![field(t0, &y0)],
        events: Vec::new(),
        terminated_by: None,
    };
    if t0 == t_end {
        return Ok(traj);
    }
    let dir = (t_end - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = traj.derivs[0];
    if !finite(&k1) {
        return Err(IntegrateError::BlowUp { t: t0 });
    }
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.event_fn)(t0, &y0)).collect();
    let mut h = initial_step(&field, t0, &y0, &k1, dir, (t_end - t0).abs(), cfg);
    let mut steps = 0usize;

    while steps < cfg.max_steps {
        let remaining = (t_end - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let h_try = h.min(remaining).min(cfg.max_step);
        let (y_new, err, k7) = dopri5_step(&field, t, &y, dir * h_try, &k1);
        let norm = error_norm(&err, &y, &y_new, cfg);

        if !(norm.is_finite() && norm <= 1.0) {
            // rejected step
            let factor = if norm.is_finite() {
                (0.9 * norm.powf(-0.2)).clamp(0.2, 0.9)
            } else {
                0.2
            };
            h = h_try * factor;
            if h < 1e3 * f64::EPSILON * t.abs().max(1.0) {
                return Err(IntegrateError::StepLimitExceeded {
                    t_reached: t,
                    steps,
                });
            }
            continue;
        }

        steps += 1;
        let t_new = t + dir * h_try;
        if !finite(&y_new) || max_abs(&y_new) > cfg.blowup_norm {
            return Err(IntegrateError::BlowUp { t: t_new });
        }

        // event scan over [t, t_new]
        let mut crossings: Vec<(f64, [f64; N], usize)> = Vec::new();
        for (idx, ev) in events.iter().enumerate() {
            let g0 = g_prev[idx];
            let g1 = (ev.event_fn)(t_new, &y_new);
            let crossed = match ev.direction {
                Direction::Rising => g0 < 0.0 && g1 >= 0.0,
                Direction::Falling => g0 > 0.0 && g1 <= 0.0,
                Direction::Any => (g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0),
            };
            g_prev[idx] = g1;
            if crossed {
                let (te, ye) = locate_event(
                    &field, cfg, ev, t, &y, &k1, t_new, &y_new, &k7, g0, g1,
                )?;
                crossings.push((te, ye, idx));
            }
        }
        if !crossings.is_empty() {
            crossings
                .sort_by(|a, b| ((a.0 - t) * dir).partial_cmp(&((b.0 - t) * dir)).unwrap());
            let first_terminal = crossings
                .iter()
                .position(|&(_, _, idx)| events[idx].terminal);
            if let Some(pos) = first_terminal {
                let (te, ye, idx) = crossings[pos];
                for &(tc, yc, ic) in &crossings[..pos] {
                    traj.events.push(EventRecord {
                        t: tc,
                        state: yc,
                        event: ic,
                    });
                }
                traj.events.push(EventRecord {
                    t: te,
                    state: ye,
                    event: idx,
                });
                traj.times.push(te);
                traj.states.push(ye);
                traj.derivs.push(field(te, &ye));
                traj.terminated_by = Some(idx);
                return Ok(traj);
            }
            for (tc, yc, ic) in crossings {
                traj.events.push(EventRecord {
                    t: tc,
                    state: yc,
                    event: ic,
                });
            }
        }

        t = t_new;
        y = y_new;
        k1 = k7;
        traj.times.push(t);
        traj.states.push(y);
        traj.derivs.push(k1);
        let factor = (0.9 * norm.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        h = h_try * factor;
    }

    if (t_end - t) * dir > 0.0 {
        return Err(IntegrateError::StepLimitExceeded {
            t_reached: t,
            steps,
        });
    }
    Ok(traj)
}

/// Bracket the crossing on the dense output, then polish it by
/// re-integration so the event state has integrator accuracy.
#[allow(clippy::too_many_arguments)]
fn locate_event<const N: usize>(
    field: &impl Fn(f64, &[f64; N]) -> [f64; N],
    cfg: &IntegratorConfig,
    ev: &EventSpec<N>,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    g0: f64,
    g1: f64,
) -> Result<(f64, [f64; N]), IntegrateError> {
    let g_dense = |t: f64| (ev.event_fn)(t, &hermite(t0, y0, f0, t1, y1, f1, t));
    // stage 1: bisection on the interpolant
    let (mut ta, mut tb, mut ga) = (t0, t1, g0);
    for _ in 0..80 {
        let tm = 0.5 * (ta + tb);
        if tm == ta || tm == tb {
            break;
        }
        let gm = g_dense(tm);
        if gm.abs() < EVENT_G_TOL {
            ta = tm;
            tb = tm;
            break;
        }
        if (gm > 0.0) == (ga > 0.0) {
            ta = tm;
            ga = gm;
        } else {
            tb = tm;
        }
    }
    let t_dense = 0.5 * (ta + tb);

    // stage 2: polish on the true flow, starting from a small bracket
    // around the dense estimate (fall back to the whole step if the
    // interpolant misled us about the sign structure).
    let width = (t1 - t0).abs();
    let pad = (1e-4 * width).max(4.0 * f64::EPSILON * t_dense.abs());
    let clampi = |t: f64| {
        if t1 > t0 {
            t.clamp(t0, t1)
        } else {
            t.clamp(t1, t0)
        }
    };
    let mut ra = clampi(t_dense - pad.copysign(t1 - t0));
    let mut rb = clampi(t_dense + pad.copysign(t1 - t0));
    let g_true = |t: f64| -> Result<(f64, [f64; N]), IntegrateError> {
        let yt = advance(field, cfg, t0, y0, t)?;
        Ok(((ev.event_fn)(t, &yt), yt))
    };
    let (mut gra, ya) = g_true(ra)?;
    let (mut grb, yb) = g_true(rb)?;
    if gra.abs() < EVENT_G_TOL {
        return Ok((ra, ya));
    }
    if grb.abs() < EVENT_G_TOL {
        return Ok((rb, yb));
    }
    let mut best = if gra.abs() < grb.abs() {
        (ra, ya, gra)
    } else {
        (rb, yb, grb)
    };
    if (gra > 0.0) == (grb > 0.0) {
        ra = t0;
        gra = g0;
        rb = t1;
        grb = g1;
    }
    for _ in 0..80 {
        if (rb - ra).abs() <= 4.0 * f64::EPSILON * ra.abs().max(rb.abs()).max(1e-30) {
            break;
        }
        // regula falsi candidate with bisection fallback
        let mut tm = if (grb - gra).abs() > 0.0 {
            ra - gra * (rb - ra) / (grb - gra)
        } else {
            0.5 * (ra + rb)
        };
        let lo = ra.min(rb);
        let hi = ra.max(rb);
        if !(tm > lo && tm < hi) {
            tm = 0.5 * (ra + rb);
        }
        let (gm, ym) = g_true(tm)?;
        if gm.abs() < best.2.abs() {
            best = (tm, ym, gm);
        }
        if gm.abs() < EVENT_G_TOL {
            return Ok((tm, ym));
        }
        if (gm > 0.0) == (gra > 0.0) {
            ra = tm;
            gra = gm;
        } else {
            rb = tm;
            grb = gm;
        }
    }
    Ok((best.0, best.1))
}
