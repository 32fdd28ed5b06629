//! Outer dynamics: compactification of the blow-up region, the
//! desingularized vector field, the saddle points that anchor the layer, and
//! the two outer heteroclinics connecting the end states to those saddles.
//!
//! Coordinates: beta = u1/sqrt(u2), r = 1/sqrt(u2) map u2 -> inf to r -> 0;
//! kappa = eps/r removes the parameter singularity, making {r=0}, {kappa=0}
//! and every surface {r kappa = eps} invariant for the 6D field in
//! (beta, r, kappa, w1, w2, xi). Data whose u2 is not positive is handled by
//! the exact symmetry u2 -> u2 + M of the conservation law (the first flux
//! component changes by a constant, which no derivative sees).

use std::io::Write as IoWrite;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::flux::{analyze, RiemannAnalysis, RiemannData, State2};
use crate::inner::{quartic, rho_roots, InnerConstants, IotaTable};
use crate::numerics::{
    integrate, Direction, EventSpec, IntegrateError, IntegratorConfig, Trajectory,
};

#[derive(Debug, Error)]
pub enum OuterError {
    /// Compactification needs u2 + shift > 0.
    #[error("cannot compactify: u2 + shift = {0} is not positive")]
    NonpositiveU2(f64),
    /// The launched orbit failed to approach its target end state.
    #[error("heteroclinic missed its target: {0}")]
    MissedTarget(String),
    /// Mechanical failure in an underlying solver.
    #[error("outer-layer solver failure: {0}")]
    Solver(String),
}

/// A point of the compactified, desingularized state space.
#[derive(Debug, Clone, Copy)]
pub struct CompactPoint {
    pub beta: f64,
    pub r: f64,
    pub kappa: f64,
    pub w1: f64,
    pub w2: f64,
    pub xi: f64,
}

impl CompactPoint {
    /// Map back to physical variables (requires r > 0); `shift` undoes the
    /// u2 translation used to keep u2 positive.
    pub fn to_state(&self, shift: f64) -> State2 {
        assert!(self.r > 0.0, "physical image needs r > 0");
        State2::new(self.beta / self.r, 1.0 / (self.r * self.r) - shift)
    }
}

/// The u2-translation making both end states compactifiable:
/// max(0, 1 - min(u2L, u2R)).
pub fn auto_shift(data: &RiemannData) -> f64 {
    (1.0 - data.ul.u2.min(data.ur.u2)).max(0.0)
}

/// (beta, r) image of a physical state under the blow-up chart.
pub fn compactify(u: State2, shift: f64) -> Result<(f64, f64), OuterError> {
    let u2 = u.u2 + shift;
    if u2 <= 0.0 {
        return Err(OuterError::NonpositiveU2(u2));
    }
    let root = u2.sqrt();
    Ok((u.u1 / root, 1.0 / root))
}

/// Inverse chart (r > 0).
pub fn decompactify(beta: f64, r: f64, shift: f64) -> State2 {
    CompactPoint { beta, r, kappa: 0.0, w1: 0.0, w2: 0.0, xi: 0.0 }.to_state(shift)
}

/// The full desingularized field in (beta, r, kappa, w1, w2, xi).
///
/// The surfaces {r = 0}, {kappa = 0} and {r kappa = const} are exactly
/// invariant: dr/dsigma and dkappa/dsigma carry factors r and kappa, and the
/// r- and kappa-equations' cross terms cancel in d(r kappa)/dsigma.
pub fn desingularized_field(y: &[f64; 6]) -> [f64; 6] {
    let [beta, r, kappa, w1, w2, xi] = *y;
    let beta3 = beta * beta * beta;
    // Shared slow combination xi + r beta + r^2 w2.
    let slow = xi + r * beta + r * r * w2;
    let dbeta = -quartic(beta) / 6.0
        + r * (-beta * xi / 2.0 + r * (beta * beta / 2.0 - w1) + r * r * beta * w2 / 2.0);
    let dr = -beta3 * r / 6.0 + r * r / 2.0 * slow;
    let dkappa = beta3 * kappa / 6.0 - r * kappa / 2.0 * slow;
    let dw1 = -kappa * beta * r;
    let dw2 = -kappa;
    let dxi = kappa * r * r;
    [dbeta, dr, dkappa, dw1, dw2, dxi]
}

/// The (beta, r) subsystem at frozen slow variables (w1, w2, xi); identical
/// to the first two components of the full field, which do not involve kappa.
pub fn fast_field_2d(p: (f64, f64), frozen: (f64, f64, f64)) -> (f64, f64) {
    let y = [p.0, p.1, 0.0, frozen.0, frozen.1, frozen.2];
    let d = desingularized_field(&y);
    (d[0], d[1])
}

/// Which saddle on {r = kappa = 0} anchors the layer: the entry side
/// (beta = rho3) or the exit side (beta = rho2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaddleSide {
    Left,
    Right,
}

/// Finite-difference linearization of the (beta, r, kappa) subsystem at the
/// saddle, with eigen-decomposition. Eigenvalues are sorted by the coordinate
/// they act on: [beta-direction, r-direction, kappa-direction].
#[derive(Debug, Clone)]
pub struct SaddleLinearization {
    pub matrix: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors, rows matching `eigenvalues`.
    pub eigenvectors: [[f64; 3]; 3],
}

/// Numerically linearize the (beta, r, kappa) dynamics at the saddle.
///
/// The result is independent of w1, w2 up to the O(h^2) difference error
/// (their couplings enter the first three equations only at order r^2), so
/// only xi is a parameter.
pub fn jacobian_at_p(side: SaddleSide, xi: f64) -> SaddleLinearization {
    let rho = rho_roots();
    let beta_p = match side {
        SaddleSide::Left => rho[2],
        SaddleSide::Right => rho[1],
    };
    let base = [beta_p, 0.0, 0.0];
    let f3 = |p: &[f64; 3]| -> [f64; 3] {
        let y = [p[0], p[1], p[2], 0.0, 0.0, xi];
        let d = desingularized_field(&y);
        [d[0], d[1], d[2]]
    };
    let h = f64::EPSILON.cbrt();
    let mut m = [[0.0; 3]; 3];
    for j in 0..3 {
        let hj = h * base[j].abs().max(1.0);
        let mut p = base;
        let mut q = base;
        p[j] += hj;
        q[j] -= hj;
        let fp = f3(&p);
        let fq = f3(&q);
        for i in 0..3 {
            m[i][j] = (fp[i] - fq[i]) / (p[j] - q[j]);
        }
    }

    let dm = DMatrix::from_fn(3, 3, |i, j| m[i][j]);
    let eig = dm.clone().complex_eigenvalues();
    let mut vals: Vec<f64> = eig
        .iter()
        .map(|c| {
            assert!(c.im.abs() < 1e-9, "saddle eigenvalues must be real");
            c.re
        })
        .collect();
    // Identify eigenvalues with coordinate directions via the dominant
    // component of their eigenvectors.
    let mut out_vals = [f64::NAN; 3];
    let mut out_vecs = [[f64::NAN; 3]; 3];
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &lambda in &vals {
        let shifted = DMatrix::from_fn(3, 3, |i, j| m[i][j] - if i == j { lambda } else { 0.0 });
        let svd = shifted.svd(true, true);
        let vt = svd.v_t.unwrap();
        let null = vt.row(2);
        let mut v = [null[0], null[1], null[2]];
        // Deterministic orientation: dominant component positive.
        let dom = (0..3).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
        if v[dom] < 0.0 {
            for c in v.iter_mut() {
                *c = -*c;
            }
        }
        assert!(out_vals[dom].is_nan(), "two eigenvectors dominate the same axis");
        out_vals[dom] = lambda;
        out_vecs[dom] = v;
    }
    SaddleLinearization { matrix: m, eigenvalues: out_vals, eigenvectors: out_vecs }
}

/// One outer heteroclinic: the (beta, r) orbit at frozen slow variables,
/// from an eigen-launch at the saddle to the compactified end state.
#[derive(Debug, Clone)]
pub struct HeteroclinicResult {
    pub trajectory: Trajectory<2>,
    pub launch_point: CompactPoint,
    /// Crossing of the section r = r_section.
    pub section_point: CompactPoint,
    pub endpoint_error: f64,
    /// Section radius used.
    pub r_section: f64,
    /// u2 translation applied before compactifying.
    pub shift: f64,
    /// Compactified end state targeted.
    pub target: (f64, f64),
}

/// Default section radius: half the smaller r of the two compactified end
/// states.
pub fn default_section_radius(analysis: &RiemannAnalysis) -> Result<f64, OuterError> {
    let shift = auto_shift(&analysis.data);
    let (_, rl) = compactify(analysis.data.ul, shift)?;
    let (_, rr) = compactify(analysis.data.ur, shift)?;
    Ok(0.5 * rl.min(rr))
}

/// Entry heteroclinic: from the end state's side, the orbit that flows into
/// the saddle at beta = rho3 as r -> 0. Computed backward from an offset
/// along the saddle's stable (beta, r) eigenvector.
pub fn compute_gamma1(
    analysis: &RiemannAnalysis,
    r0: f64,
    delta_launch: f64,
) -> Result<HeteroclinicResult, OuterError> {
    compute_heteroclinic(analysis, r0, delta_launch, SaddleSide::Left)
}

/// Exit heteroclinic: from the saddle at beta = rho2 to the right end state,
/// computed forward along the saddle's unstable (beta, r) eigenvector.
pub fn compute_gamma2(
    analysis: &RiemannAnalysis,
    r0: f64,
    delta_launch: f64,
) -> Result<HeteroclinicResult, OuterError> {
    compute_heteroclinic(analysis, r0, delta_launch, SaddleSide::Right)
}

/// Distance below which the orbit counts as having reached the end state.
const TARGET_RADIUS: f64 = 1e-8;
/// Escape radius (relative to the target) that triggers MissedTarget.
const ESCAPE_RADIUS: f64 = 8.0;
/// Horizon in desingularized time.
const HORIZON: f64 = 400.0;

fn compute_heteroclinic(
    analysis: &RiemannAnalysis,
    r0: f64,
    delta_launch: f64,
    side: SaddleSide,
) -> Result<HeteroclinicResult, OuterError> {
    assert!(r0 > 0.0 && delta_launch > 0.0);
    let shift = auto_shift(&analysis.data);
    // Work in shifted variables throughout; the conservation law is invariant
    // under u2 -> u2 + M, so only w1 (by -M) and w2 (by -s M) change.
    let shifted = if shift > 0.0 {
        let d = analysis.data;
        analyze(RiemannData::new(
            State2::new(d.ul.u1, d.ul.u2 + shift),
            State2::new(d.ur.u1, d.ur.u2 + shift),
        ))
        .map_err(|e| OuterError::Solver(e.to_string()))?
    } else {
        *analysis
    };

    let (u_end, w_end) = match side {
        SaddleSide::Left => (shifted.data.ul, shifted.wl),
        SaddleSide::Right => (shifted.data.ur, shifted.wr),
    };
    let frozen = (w_end.0, w_end.1, shifted.s);
    let target = compactify(u_end, 0.0)?;
    if r0 >= target.1 {
        return Err(OuterError::Solver(format!(
            "section radius {r0} does not separate the saddle from the end state (r_end = {})",
            target.1
        )));
    }

    // Launch offset along the (beta, r) eigenvector transverse to {r = 0}:
    // stable for the entry saddle (we integrate backward), unstable for the
    // exit saddle (forward). Either way its eigenvalue is -+ beta_P^3/6 and
    // the orbit leaves the saddle into r > 0.
    let lin = jacobian_at_p(side, shifted.s);
    let beta_p = match side {
        SaddleSide::Left => rho_roots()[2],
        SaddleSide::Right => rho_roots()[1],
    };
    let (r_eigenvalue, v) = (lin.eigenvalues[1], lin.eigenvectors[1]);
    match side {
        SaddleSide::Left => assert!(r_eigenvalue < 0.0, "entry saddle must be stable in r"),
        SaddleSide::Right => assert!(r_eigenvalue > 0.0, "exit saddle must be unstable in r"),
    }
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let (mut vb, mut vr) = (v[0] / norm, v[1] / norm);
    if vr < 0.0 {
        vb = -vb;
        vr = -vr;
    }
    let launch = (beta_p + delta_launch * vb, delta_launch * vr);

    let field = move |_s: f64, y: &[f64; 2]| {
        let d = fast_field_2d((y[0], y[1]), frozen);
        [d.0, d.1]
    };
    let dist = move |y: &[f64; 2]| ((y[0] - target.0).powi(2) + (y[1] - target.1).powi(2)).sqrt();
    let reach = EventSpec::terminal(move |_s, y: &[f64; 2]| dist(y) - TARGET_RADIUS, Direction::Falling);
    let escape = EventSpec::terminal(move |_s, y: &[f64; 2]| dist(y) - ESCAPE_RADIUS, Direction::Rising);
    let section = EventSpec::new(move |_s, y: &[f64; 2]| y[1] - r0, Direction::Any, false);

    let span = match side {
        SaddleSide::Left => (0.0, -HORIZON),
        SaddleSide::Right => (0.0, HORIZON),
    };
    let cfg = IntegratorConfig { rel_tol: 1e-12, abs_tol: 1e-14, ..IntegratorConfig::default() };
    let traj = integrate(field, [launch.0, launch.1], span, &cfg, &[reach, escape, section])
        .map_err(|e| match e {
            IntegrateError::StepLimitExceeded { .. } | IntegrateError::BlowUp { .. } => {
                OuterError::Solver(e.to_string())
            }
        })?;

    match traj.terminated_by {
        Some(0) => {}
        Some(1) => {
            return Err(OuterError::MissedTarget(format!(
                "orbit escaped to distance {ESCAPE_RADIUS} from the end state"
            )))
        }
        _ => {
            return Err(OuterError::MissedTarget(format!(
                "no approach to the end state within horizon {HORIZON}"
            )))
        }
    }

    let crossings: Vec<_> = traj.events.iter().filter(|e| e.event == 2).collect();
    if crossings.len() != 1 {
        return Err(OuterError::Solver(format!(
            "section r = {r0} crossed {} times, expected exactly once",
            crossings.len()
        )));
    }
    let sec = crossings[0].state;

    let end = traj.last_state();
    let endpoint_error = dist(&end);
    for st in &traj.states {
        if st[1] < -1e-12 {
            return Err(OuterError::Solver("orbit left the half-plane r >= 0".to_string()));
        }
    }

    let point = |(b, r): (f64, f64)| CompactPoint {
        beta: b,
        r,
        kappa: 0.0,
        w1: frozen.0,
        w2: frozen.1,
        xi: frozen.2,
    };
    Ok(HeteroclinicResult {
        trajectory: traj,
        launch_point: point(launch),
        section_point: point((sec[0], sec[1])),
        endpoint_error,
        r_section: r0,
        shift,
        target,
    })
}

impl HeteroclinicResult {
    /// CSV dump: sigma, beta, r, u1, u2 (physical u only where r > 0).
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        out.write_all(b"sigma,beta,r,u1,u2\n")?;
        for (i, t) in self.trajectory.times.iter().enumerate() {
            let [beta, r] = self.trajectory.states[i];
            let (u1, u2) = if r > 0.0 {
                let u = decompactify(beta, r, self.shift);
                (u.u1, u.u2)
            } else {
                (f64::NAN, f64::NAN)
            };
            writeln!(out, "{t:.16e},{beta:.16e},{r:.16e},{u1:.16e},{u2:.16e}")?;
        }
        Ok(())
    }
}

/// Tangent frames of the two matched families at the central point
/// q0 = (0, 0, kappa0, w1L, w2L - kappa0 iota3(0), s), and their joint rank
/// on the slice {r = 0}.
#[derive(Debug, Clone)]
pub struct TransversalityReport {
    /// Rows: flow direction, amplitude derivative, data-parameter direction.
    pub frame_left: [[f64; 6]; 3],
    pub frame_right: [[f64; 6]; 3],
    /// Rank of the six stacked vectors restricted to (beta, kappa, w1, w2, xi).
    pub rank_on_slice: usize,
    /// dim(left) + dim(right) - rank.
    pub intersection_dim: usize,
    pub singular_values: Vec<f64>,
}

/// Build the frames numerically: the flow vector is the field at q0; the
/// amplitude vectors are finite differences of layer orbits with amplitude
/// kappa0(1 +/- h) flowed to sigma = 0 from either side (the flow is linear
/// in (kappa, w2) on {r = 0}, so the difference quotient is exact); the
/// parameter vectors are the exact derivatives of (w, xi) along the end-state
/// lines, (0, 0, 0, -u1, -u2, 1).
pub fn transversality_frames(
    analysis: &RiemannAnalysis,
    constants: &InnerConstants,
    table: &IotaTable,
) -> Result<TransversalityReport, OuterError> {
    let k0 = constants.kappa0;
    let iota30 = table.iota3_at_0;
    let s = analysis.s;
    let (w1l, w2l) = analysis.wl;
    let (w1r, w2r) = analysis.wr;
    let q0 = [0.0, 0.0, k0, w1l, w2l - k0 * iota30, s];
    let flow = desingularized_field(&q0);

    let cfg = IntegratorConfig { rel_tol: 1e-12, abs_tol: 1e-14, ..IntegratorConfig::default() };
    // Start from an exact table node near sigma = -15 so the initial data
    // sit on a consistent numerical layer orbit; interpolating between nodes
    // costs ~5e-8 of slope accuracy through the saddle's slow passage.
    let k = (0..table.grid.len())
        .min_by(|&a, &b| {
            let da = (table.grid[a] + 15.0).abs();
            let db = (table.grid[b] + 15.0).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let t_start = -table.grid[k];
    let (i1, i2, i3) = (table.iota1[k], table.iota2[k], table.iota3[k]);
    let h = 0.05;
    // The two perturbed orbits are integrated as one stacked system so they
    // share a step sequence; their beta-paths (identical dynamics, identical
    // start) then agree bitwise and the difference quotient isolates the
    // amplitude sensitivity instead of step-control noise. Without this, the
    // backward instability of the saddle amplifies independent step choices
    // into O(1e-5) phantom beta-entries.
    let amplitude_vector = |side: SaddleSide| -> Result<[f64; 6], OuterError> {
        let start = |amp: f64| -> [f64; 6] {
            match side {
                SaddleSide::Left => [i1, 0.0, amp * i2, w1l, w2l - amp * i3, s],
                // Right-family orbits run from +t_start back to 0; their
                // beta starts at iota1(+t_start) = -iota1(-t_start) by parity.
                SaddleSide::Right => [-i1, 0.0, amp * i2, w1r, w2r + amp * i3, s],
            }
        };
        let plus = start(k0 * (1.0 + h));
        let minus = start(k0 * (1.0 - h));
        let mut y0 = [0.0; 12];
        y0[..6].copy_from_slice(&plus);
        y0[6..].copy_from_slice(&minus);
        let span = match side {
            SaddleSide::Left => (-t_start, 0.0),
            SaddleSide::Right => (t_start, 0.0),
        };
        let field = |_t: f64, y: &[f64; 12]| {
            let a: [f64; 6] = y[..6].try_into().unwrap();
            let b: [f64; 6] = y[6..].try_into().unwrap();
            let da = desingularized_field(&a);
            let db = desingularized_field(&b);
            let mut d = [0.0; 12];
            d[..6].copy_from_slice(&da);
            d[6..].copy_from_slice(&db);
            d
        };
        let traj = integrate(field, y0, span, &cfg, &[])
            .map_err(|e| OuterError::Solver(e.to_string()))?;
        let end = traj.last_state();
        let mut v = [0.0; 6];
        for i in 0..6 {
            v[i] = (end[i] - end[i + 6]) / (2.0 * h * k0);
        }
        Ok(v)
    };

    let amp_left = amplitude_vector(SaddleSide::Left)?;
    let amp_right = amplitude_vector(SaddleSide::Right)?;
    let param_left = [0.0, 0.0, 0.0, -analysis.data.ul.u1, -analysis.data.ul.u2, 1.0];
    let param_right = [0.0, 0.0, 0.0, -analysis.data.ur.u1, -analysis.data.ur.u2, 1.0];

    let frame_left = [flow, amp_left, param_left];
    let frame_right = [flow, amp_right, param_right];

    // Restrict to {r = 0}: drop the r column and measure rank by SVD.
    let rows: Vec<[f64; 6]> = frame_left.iter().chain(frame_right.iter()).copied().collect();
    let m = DMatrix::from_fn(6, 5, |i, j| {
        let col = if j == 0 { 0 } else { j + 1 };
        rows[i][col]
    });
    let svd = m.svd(false, false);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&v| v > 1e-6 * smax).count();

    Ok(TransversalityReport {
        frame_left,
        frame_right,
        rank_on_slice: rank,
        intersection_dim: 3 + 3 - rank,
        singular_values: sv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::analyze;
    use crate::inner::{build_iota_table, matching_constants};
    use crate::testutil::rk4_fixed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn sample_analysis() -> RiemannAnalysis {
        analyze(RiemannData::sample()).unwrap()
    }

    fn table() -> &'static IotaTable {
        static TABLE: OnceLock<IotaTable> = OnceLock::new();
        TABLE.get_or_init(|| build_iota_table(25.0, 1e-10).unwrap())
    }

    #[test]
    fn compactify_examples() {
        assert_eq!(compactify(State2::new(0.0, 1.0), 0.0).unwrap(), (0.0, 1.0));
        let (b, r) = compactify(State2::new(2.0, 6.0), 0.0).unwrap();
        assert_abs_diff_eq!(b, 2.0 / 6.0f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r, 1.0 / 6.0f64.sqrt(), epsilon = 1e-15);
        assert_eq!(compactify(State2::new(0.0, -1.0), 2.0).unwrap(), (0.0, 1.0));
        match compactify(State2::new(1.0, -3.0), 2.0) {
            Err(OuterError::NonpositiveU2(v)) => assert_eq!(v, -1.0),
            other => panic!("expected NonpositiveU2, got {other:?}"),
        }
    }

    #[test]
    fn shift_defaults() {
        assert_eq!(auto_shift(&RiemannData::sample()), 0.0);
        let d = RiemannData::new(State2::new(2.0, 0.2), State2::new(-1.6, -1.24));
        assert_abs_diff_eq!(auto_shift(&d), 2.24, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn chart_roundtrip(u1 in -10.0f64..10.0, u2 in -5.0f64..20.0, shift in 0.0f64..10.0) {
            prop_assume!(u2 + shift > 1e-3);
            let u = State2::new(u1, u2);
            let (b, r) = compactify(u, shift).unwrap();
            let back = decompactify(b, r, shift);
            prop_assert!((back.u1 - u1).abs() < 1e-10 * u1.abs().max(1.0));
            prop_assert!((back.u2 - u2).abs() < 1e-9 * u2.abs().max(1.0));
        }
    }

    #[test]
    fn fast_field_fixed_points_and_samples() {
        let frozen = (-2.0, 2.0 / 3.0, 0.0);
        let at_saddle = fast_field_2d((rho_roots()[2], 0.0), frozen);
        assert_abs_diff_eq!(at_saddle.0, 0.0, epsilon = 1e-15);
        assert_eq!(at_saddle.1, 0.0);
        assert_eq!(fast_field_2d((0.0, 0.0), frozen), (-1.0, 0.0));
        // At (1, 0): dbeta = -(1 - 6 + 6)/6 = -1/6 and dr vanishes with r.
        let at_one = fast_field_2d((1.0, 0.0), frozen);
        assert_abs_diff_eq!(at_one.0, -1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(at_one.1, 0.0);
    }

    #[test]
    fn saddle_eigenvalues_match_closed_forms() {
        let rho3 = rho_roots()[2];
        let a = 2.0 * 3.0f64.sqrt() / 3.0 * rho3;
        let c = rho3 * rho3 * rho3 / 6.0;
        let lin = jacobian_at_p(SaddleSide::Left, 0.0);
        assert_abs_diff_eq!(lin.eigenvalues[0], a, epsilon = 1e-8);
        assert_abs_diff_eq!(lin.eigenvalues[1], -c, epsilon = 1e-8);
        assert_abs_diff_eq!(lin.eigenvalues[2], c, epsilon = 1e-8);
        assert_abs_diff_eq!(a, 1.30022, epsilon = 2e-5);
        assert_abs_diff_eq!(c, 0.23796, epsilon = 2e-5);
        // kappa decouples: its eigenvector is the kappa axis exactly.
        let v = lin.eigenvectors[2];
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(v[2], 1.0, epsilon = 1e-8);
        // Mirror saddle: eigenvalues flip sign by the beta -> -beta symmetry.
        let rin = jacobian_at_p(SaddleSide::Right, 0.0);
        assert_abs_diff_eq!(rin.eigenvalues[0], -a, epsilon = 1e-8);
        assert_abs_diff_eq!(rin.eigenvalues[1], c, epsilon = 1e-8);
        assert_abs_diff_eq!(rin.eigenvalues[2], -c, epsilon = 1e-8);
    }

    #[test]
    fn saddle_linearization_is_xi_sensitive_only_in_offdiagonal() {
        let l0 = jacobian_at_p(SaddleSide::Left, 0.0);
        let l1 = jacobian_at_p(SaddleSide::Left, 2.0);
        for i in 0..3 {
            assert_abs_diff_eq!(l0.eigenvalues[i], l1.eigenvalues[i], epsilon = 1e-8);
        }
        // The beta-r coupling entry is -beta_P xi / 2.
        let rho3 = rho_roots()[2];
        assert_abs_diff_eq!(l1.matrix[0][1], -rho3, epsilon = 1e-7);
        assert_abs_diff_eq!(l0.matrix[0][1], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn invariant_planes_stay_exact() {
        let a = sample_analysis();
        // Start on {r = 0} with kappa > 0: r must remain exactly zero.
        let y0 = [0.5, 0.0, 0.3, a.wl.0, a.wl.1, a.s];
        let cfg = IntegratorConfig::default();
        let traj = integrate(|_t, y: &[f64; 6]| desingularized_field(y), y0, (0.0, 5.0), &cfg, &[])
            .unwrap();
        for st in &traj.states {
            assert_eq!(st[1], 0.0);
        }
        // Start on {kappa = 0} with r > 0: kappa must remain exactly zero,
        // and the slow variables must not drift (their rates carry kappa).
        let y0 = [0.5, 0.2, 0.0, a.wl.0, a.wl.1, a.s];
        let traj = integrate(|_t, y: &[f64; 6]| desingularized_field(y), y0, (0.0, 5.0), &cfg, &[])
            .unwrap();
        for st in &traj.states {
            assert_eq!(st[2], 0.0);
            assert_eq!(st[3], a.wl.0);
            assert_eq!(st[4], a.wl.1);
            assert_eq!(st[5], a.s);
        }
    }

    #[test]
    fn rkappa_product_is_invariant() {
        let a = sample_analysis();
        let eps = 1e-3;
        let r0 = 0.05;
        let y0 = [0.4, r0, eps / r0, a.wl.0, a.wl.1, a.s];
        let cfg = IntegratorConfig::default();
        let traj = integrate(|_t, y: &[f64; 6]| desingularized_field(y), y0, (0.0, 8.0), &cfg, &[])
            .unwrap();
        for st in &traj.states {
            assert!((st[1] * st[2] / eps - 1.0).abs() < 1e-9);
        }
    }

    fn gamma1_sample(delta: f64) -> HeteroclinicResult {
        let a = sample_analysis();
        let r0 = default_section_radius(&a).unwrap();
        compute_gamma1(&a, r0, delta).unwrap()
    }

    fn gamma2_sample(delta: f64) -> HeteroclinicResult {
        let a = sample_analysis();
        let r0 = default_section_radius(&a).unwrap();
        compute_gamma2(&a, r0, delta).unwrap()
    }

    #[test]
    fn gamma1_lands_on_left_state() {
        let g = gamma1_sample(1e-7);
        let target = compactify(State2::new(2.0, 6.0), 0.0).unwrap();
        let end = g.trajectory.last_state();
        assert!(g.endpoint_error < 1e-6);
        assert!((end[0] - target.0).abs() < 1e-6);
        assert!((end[1] - target.1).abs() < 1e-6);
        // Launch end: beta saturates at rho3 as r -> 0.
        assert!((g.launch_point.beta - rho_roots()[2]).abs() < 1e-6);
        assert!(g.launch_point.r > 0.0 && g.launch_point.r < 1e-6);
        // Frozen slow variables never drift in the 2D subsystem.
        assert_eq!(g.section_point.w1, g.launch_point.w1);
        assert_eq!(g.section_point.w2, g.launch_point.w2);
        assert_eq!(g.section_point.xi, g.launch_point.xi);
        assert_abs_diff_eq!(g.section_point.r, g.r_section, epsilon = 1e-9);
    }

    #[test]
    fn gamma2_lands_on_right_state() {
        let g = gamma2_sample(1e-7);
        let target = compactify(State2::new(-1.6, 4.56), 0.0).unwrap();
        let end = g.trajectory.last_state();
        assert!(g.endpoint_error < 1e-6);
        assert!((end[0] - target.0).abs() < 1e-6);
        assert!((end[1] - target.1).abs() < 1e-6);
        assert!((g.launch_point.beta - rho_roots()[1]).abs() < 1e-6);
        assert_abs_diff_eq!(g.section_point.r, g.r_section, epsilon = 1e-9);
    }

    #[test]
    fn launch_offset_halving_is_invisible() {
        let g1 = gamma1_sample(1e-7);
        let g2 = gamma1_sample(5e-8);
        let e1 = g1.trajectory.last_state();
        let e2 = g2.trajectory.last_state();
        assert!((e1[0] - e2[0]).abs() < 1e-7);
        assert!((e1[1] - e2[1]).abs() < 1e-7);
        // The section crossing is the well-conditioned mid-orbit comparison.
        assert!((g1.section_point.beta - g2.section_point.beta).abs() < 1e-6);
    }

    #[test]
    fn gamma1_section_crossing_matches_fixed_step_oracle() {
        // Re-locate the r = r0 crossing with an independent fixed-step RK4
        // march and bisection on the step that brackets it.
        let g = gamma1_sample(1e-7);
        let a = sample_analysis();
        let frozen = (a.wl.0, a.wl.1, a.s);
        let field = |_t: f64, y: &[f64; 2]| {
            let d = fast_field_2d((y[0], y[1]), frozen);
            [d.0, d.1]
        };
        let r0 = g.r_section;
        let h = 1e-4;
        let mut y = [g.launch_point.beta, g.launch_point.r];
        let mut t = 0.0;
        let mut prev = y;
        let mut hit = None;
        for _ in 0..4_000_000 {
            let next = rk4_fixed(field, y, t, t - h, 1);
            if (prev[1] - r0) * (next[1] - r0) < 0.0 && y[1] < next[1] {
                // Bisect inside [t, t-h].
                let (mut lo, mut hi) = (t, t - h);
                let mut ylo = y;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let ymid = rk4_fixed(field, ylo, lo, mid, 1);
                    if (ymid[1] - r0) * (ylo[1] - r0) > 0.0 {
                        lo = mid;
                        ylo = ymid;
                    } else {
                        hi = mid;
                    }
                }
                hit = Some(rk4_fixed(field, ylo, lo, 0.5 * (lo + hi), 1));
                break;
            }
            prev = y;
            y = next;
            t -= h;
            if ((y[0] - g.target.0).powi(2) + (y[1] - g.target.1).powi(2)).sqrt() < 1e-8 {
                break;
            }
        }
        let oracle = hit.expect("oracle never crossed the section");
        assert!((oracle[0] - g.section_point.beta).abs() < 1e-8);
        assert!((oracle[1] - g.section_point.r).abs() < 1e-8);
    }

    #[test]
    fn decompactified_orbit_satisfies_physical_fast_system() {
        // Chain rule: du1/dsigma = r*(f1(u) - xi u1 - w1) and
        // du2/dsigma = r*(f2(u) - xi u2 - w2) after the time rescale
        // dtau = r dsigma.
        let g = gamma1_sample(1e-7);
        let a = sample_analysis();
        for (i, st) in g.trajectory.states.iter().enumerate() {
            let [beta, r] = *st;
            if r < 1e-3 {
                continue;
            }
            let d = g.trajectory.derivs[i];
            let u1 = beta / r;
            let u2 = 1.0 / (r * r);
            let du1_dsigma = d[0] / r - beta * d[1] / (r * r);
            let residual =
                du1_dsigma / r - (u1 * u1 - u2 - a.s * u1 - a.wl.0);
            assert!(
                residual.abs() < 1e-6 * (u1 * u1 + u2).max(1.0),
                "fast-system residual {residual} at r = {r}"
            );
        }
    }

    #[test]
    fn shifted_data_reaches_shifted_targets() {
        // Same jump as the sample but translated down in u2, forcing the
        // automatic shift path (M = 2.24).
        let d = RiemannData::new(State2::new(2.0, 0.2), State2::new(-1.6, -1.24));
        let a = analyze(d).unwrap();
        assert!(a.s.abs() < 1e-14);
        assert_abs_diff_eq!(a.e0, 0.432, epsilon = 1e-12);
        let r0 = default_section_radius(&a).unwrap();
        let g1 = compute_gamma1(&a, r0, 1e-7).unwrap();
        assert!(g1.endpoint_error < 1e-6);
        assert_eq!(g1.shift, 2.24);
        // The physical image of the endpoint is the original left state.
        let end = g1.trajectory.last_state();
        let u = decompactify(end[0], end[1], g1.shift);
        assert!((u.u1 - 2.0).abs() < 1e-5);
        assert!((u.u2 - 0.2).abs() < 1e-5);
        let g2 = compute_gamma2(&a, r0, 1e-7).unwrap();
        assert!(g2.endpoint_error < 1e-6);
    }

    #[test]
    fn bad_section_radius_is_rejected() {
        let a = sample_analysis();
        match compute_gamma1(&a, 10.0, 1e-7) {
            Err(OuterError::Solver(msg)) => assert!(msg.contains("section radius")),
            other => panic!("expected Solver error, got {other:?}"),
        }
    }

    #[test]
    fn transversality_frames_have_expected_structure() {
        let a = sample_analysis();
        let c = matching_constants(&a, table()).unwrap();
        let rep = transversality_frames(&a, &c, table()).unwrap();
        assert_eq!(rep.rank_on_slice, 5);
        assert_eq!(rep.intersection_dim, 1);
        // Flow direction at the matching point.
        let flow = rep.frame_left[0];
        assert_eq!(flow, [-1.0, 0.0, 0.0, 0.0, -c.kappa0, 0.0]);
        // Amplitude vectors: exact in kappa, slope -+iota3(0) in w2.
        let i30 = table().iota3_at_0;
        for (frame, sign) in [(rep.frame_left, -1.0), (rep.frame_right, 1.0)] {
            let amp = frame[1];
            println!(
                "amplitude vector deviations: beta {:.2e}, kappa {:.2e}, w2 {:.2e}",
                amp[0],
                amp[2] - 1.0,
                amp[4] - sign * i30
            );
            assert_abs_diff_eq!(amp[0], 0.0, epsilon = 1e-8);
            assert_eq!(amp[1], 0.0);
            assert_abs_diff_eq!(amp[2], 1.0, epsilon = 1e-7);
            assert_abs_diff_eq!(amp[3], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(amp[4], sign * i30, epsilon = 1e-6);
            assert_abs_diff_eq!(amp[5], 0.0, epsilon = 1e-9);
        }
        // Parameter directions are exact images of the stored end states.
        assert_eq!(rep.frame_left[2], [0.0, 0.0, 0.0, -2.0, -6.0, 1.0]);
        let ur = a.data.ur;
        assert_eq!(rep.frame_right[2], [0.0, 0.0, 0.0, -ur.u1, -ur.u2, 1.0]);
        assert_abs_diff_eq!(rep.frame_right[2][4], -4.56, epsilon = 1e-14);
    }

    #[test]
    fn heteroclinic_csv_shape() {
        let g = gamma1_sample(1e-7);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "sigma,beta,r,u1,u2");
        assert_eq!(text.lines().count(), g.trajectory.times.len() + 1);
    }
}
