//! Viscous profiles at positive epsilon: two-sided shooting on the
//! desingularized field, matched on the section Gamma = {beta = 0}.
//!
//! Each side launches from the unstable (left) / stable (right) eigenplane
//! of an end state, offset by the two shooting unknowns of that side: alpha
//! slides the base point along the data line (w, xi) = (w_side - alpha
//! u_side, s + alpha), and the angle picks the direction inside the
//! eigenplane. Newton drives the four-component mismatch (kappa, w1, w2,
//! xi) at Gamma to zero; beta matches by the section itself and r =
//! eps/kappa is implied by the invariant surface {r kappa = eps}.
//!
//! The two trajectories are represented by stabilized chains rather than
//! raw end-to-end shoots. An orbit spends tens of sigma-units creeping
//! along the data line and then along the saddle corridor, so the
//! end-to-end flow map amplifies launch perturbations beyond 1/ulp: the
//! matched launch angle exists mathematically but falls between adjacent
//! floating-point values, and no single shot can land on the section.
//! Splitting each side into legs of bounded sigma-length, with the leg
//! start states as extra Newton unknowns and continuity enforced at the
//! breakpoints, caps the amplification entering any Jacobian entry while
//! preserving the shooting structure: the outermost legs still start on
//! the launch eigenplanes, the innermost legs still end at the Gamma
//! event, and the reported unknowns are still (alpha1, theta, alpha2,
//! phi). Every leg starts exactly on {r kappa = eps}, which the field
//! preserves, so the surface deviation stays at integrator noise across
//! the whole profile.

use std::io::Write as IoWrite;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::flux::{analyze, RiemannAnalysis, RiemannData, State2};
use crate::inner::{build_iota_table, InnerConstants, IotaTable};
use crate::numerics::{
    integrate, Direction, EventSpec, IntegratorConfig, Trajectory,
};
use crate::outer::{
    auto_shift, compactify, compute_gamma1, compute_gamma2, decompactify,
    default_section_radius, desingularized_field, CompactPoint, HeteroclinicResult, OuterError,
};

#[derive(Debug, Error)]
pub enum ProfileError {
    /// The data violates the overcompressive/positive-strength hypotheses,
    /// or a launch fiber has eigenvalues of the wrong sign.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    /// The orbit never crossed beta = 0 inside the inner regime.
    #[error("section miss: {0}")]
    SectionMiss(String),
    /// Newton failed to drive the mismatch below tolerance.
    #[error("shooting did not converge: {0}")]
    NoConvergence(String),
    /// The zero-epsilon skeleton cannot seed a chain at this epsilon.
    #[error("seeding failed: {0}")]
    Seed(String),
    /// The integrator gave up before reaching the section.
    #[error("step limit exceeded: {0}")]
    StepLimitExceeded(String),
    #[error(transparent)]
    Outer(#[from] OuterError),
}

/// Which end state a launch hangs off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// The four shooting unknowns. Each |alpha| must stay below 0.5: the launch
/// point sits at xi = s + alpha on the data line, and beyond that box the
/// eigenplane construction loses meaning for the sample-scale data.
#[derive(Debug, Clone, Copy)]
pub struct ShootingUnknowns {
    pub alpha1: f64,
    pub theta: f64,
    pub alpha2: f64,
    pub phi: f64,
}

pub const ALPHA_BOX: f64 = 0.5;
pub const DELTA_LAUNCH: f64 = 1e-7;

/// Target sigma-length of the interior legs far from Gamma.
const OUTER_LEG_SPAN: f64 = 5.0;
/// Target sigma-length of the interior legs near Gamma, where the seed
/// skeleton is least accurate and the flow is most nonlinear.
const INNER_LEG_SPAN: f64 = 2.0;
/// |sigma| below which the near-Gamma spacing applies.
const INNER_ZONE: f64 = 10.0;
/// The last breakpoint sits this many sigma-units before Gamma; the final
/// leg runs from there to a terminal section event.
const LAST_BREAK_OFFSET: f64 = 1.0;
/// Horizon of the event-terminated final leg. The seed places the last
/// breakpoint LAST_BREAK_OFFSET before the section; a trial displacing the
/// crossing beyond this horizon has left the basin and is rejected.
const SECTION_HORIZON: f64 = 12.0;
const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITERS: usize = 60;
/// Step of the trapezoid quadrature for the slow-drift integrals along the
/// seed skeleton.
const DRIFT_QUAD_STEP: f64 = 0.05;
/// Gamma-crossing guard in units of eps/kappa0: the matched crossing sits
/// at r ~ eps/kappa0, the spurious outer-branch crossing near the end
/// states sits a decade above the layer scale at moderate epsilon.
const GUARD_LAYER_FACTOR: f64 = 1.5;

/// Unit eigenvectors of Df(u) - nu I for the eigenvalues u1 - 1 - nu and
/// u1 + 1 - nu, in that order.
fn eigenplane(u: State2, _nu: f64) -> [[f64; 2]; 2] {
    // Df(u) = [[2 u1, -1], [u1^2 - 1, 0]]; the eigenvector for eigenvalue
    // u1 -+ 1 is (1, u1 +- 1), independent of the shift nu.
    let slow = [1.0, u.u1 + 1.0];
    let fast = [1.0, u.u1 - 1.0];
    let norm = |v: [f64; 2]| {
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        [v[0] / n, v[1] / n]
    };
    [norm(slow), norm(fast)]
}

/// Construct the compactified launch point on the invariant surface
/// {r kappa = eps}: physical point u_side + delta (cos(angle) v1 +
/// sin(angle) v2), slow variables (w_side - alpha u_side, s + alpha), and
/// kappa = eps / r exactly.
///
/// The analysis must carry compactifiable data (u2 > 0 on the launch side);
/// `shoot_match` pre-shifts the data before calling.
pub fn launch_state(
    analysis: &RiemannAnalysis,
    side: Side,
    alpha: f64,
    angle: f64,
    delta_launch: f64,
    epsilon: f64,
) -> Result<CompactPoint, ProfileError> {
    let (u, w) = match side {
        Side::Left => (analysis.data.ul, analysis.wl),
        Side::Right => (analysis.data.ur, analysis.wr),
    };
    let nu = analysis.s + alpha;
    let lambda = [u.u1 - 1.0 - nu, u.u1 + 1.0 - nu];
    match side {
        Side::Left => {
            if !(lambda[0] > 0.0 && lambda[1] > 0.0) {
                return Err(ProfileError::HypothesisViolated(format!(
                    "left launch needs both eigenvalues positive at xi = {nu}, got {lambda:?}"
                )));
            }
        }
        Side::Right => {
            if !(lambda[0] < 0.0 && lambda[1] < 0.0) {
                return Err(ProfileError::HypothesisViolated(format!(
                    "right launch needs both eigenvalues negative at xi = {nu}, got {lambda:?}"
                )));
            }
        }
    }
    let [v1, v2] = eigenplane(u, nu);
    let (c, s) = (angle.cos(), angle.sin());
    let pert = State2::new(
        u.u1 + delta_launch * (c * v1[0] + s * v2[0]),
        u.u2 + delta_launch * (c * v1[1] + s * v2[1]),
    );
    let (beta, r) = compactify(pert, 0.0)?;
    Ok(CompactPoint {
        beta,
        r,
        kappa: epsilon / r,
        w1: w.0 - alpha * u.u1,
        w2: w.1 - alpha * u.u2,
        xi: analysis.s + alpha,
    })
}

/// Maxima of the converted profile with their xi locations.
#[derive(Debug, Clone, Copy)]
pub struct Maxima {
    pub max_u2: f64,
    /// xi at the u2 maximum.
    pub argmax: f64,
    pub max_u1_plus: f64,
    pub xi_u1_plus: f64,
    /// Maximum of -u1 (reported positive).
    pub max_u1_minus: f64,
    pub xi_u1_minus: f64,
}

/// A converged epsilon-profile in similarity variables.
#[derive(Debug, Clone)]
pub struct ProfileSolution {
    pub epsilon: f64,
    /// Strictly increasing; carried xi component of the orbit, never
    /// resampled (the layer is O(eps^2) wide).
    pub xi_grid: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Desingularized time of each sample; 0 at the matching section.
    pub sigma_grid: Vec<f64>,
    /// Raw orbit states (beta, r, kappa, w1, w2, xi) in shifted variables.
    pub states: Vec<[f64; 6]>,
    /// Section crossings at r = r0 (entry, exit), when the layer radius
    /// eps/kappa0 is small enough for the orbit to dip below r0 at all.
    pub layer: Option<(f64, f64)>,
    /// Sigma-duration spent below r = r0, when `layer` exists.
    pub t_layer: Option<f64>,
    /// xi of the matched Gamma crossing.
    pub xi_gamma: f64,
    pub maxima: Maxima,
    /// Infinity norm of the (kappa, w1, w2, xi) mismatch at Gamma.
    pub match_residual: f64,
    /// max |r kappa / eps - 1| over every accepted step of both shoots.
    pub surface_deviation: f64,
    /// Converged unknowns (continuation seed for the next epsilon).
    pub unknowns: ShootingUnknowns,
    /// u2 translation that was applied to the data.
    pub shift: f64,
}

impl ProfileSolution {
    /// CSV dump: xi, u1, u2, w1, w2.
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        out.write_all(b"xi,u1,u2,w1,w2\n")?;
        for i in 0..self.xi_grid.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.xi_grid[i], self.u1[i], self.u2[i], self.w1[i], self.w2[i]
            )?;
        }
        Ok(())
    }

    /// Total w1 drift across the layer window (or the whole profile when no
    /// layer markers exist).
    pub fn w1_layer_drift(&self) -> f64 {
        match self.layer {
            Some((xin, xout)) => {
                let at = |x: f64| {
                    let i = self
                        .xi_grid
                        .iter()
                        .position(|&v| v >= x)
                        .unwrap_or(self.xi_grid.len() - 1);
                    self.w1[i]
                };
                (at(xout) - at(xin)).abs()
            }
            None => (self.w1[self.w1.len() - 1] - self.w1[0]).abs(),
        }
    }
}

fn shift_analysis(analysis: &RiemannAnalysis, shift: f64) -> Result<RiemannAnalysis, ProfileError> {
    if shift > 0.0 {
        let d = analysis.data;
        analyze(RiemannData::new(
            State2::new(d.ul.u1, d.ul.u2 + shift),
            State2::new(d.ur.u1, d.ur.u2 + shift),
        ))
        .map_err(|e| ProfileError::HypothesisViolated(e.to_string()))
    } else {
        Ok(*analysis)
    }
}

/// Zero-epsilon reference objects shared across a sweep: the layer table,
/// both outer heteroclinics (in shifted variables) and the section radius.
struct SeedFrame {
    table: IotaTable,
    g1: HeteroclinicResult,
    g2: HeteroclinicResult,
    r0: f64,
}

fn build_frame(shifted: &RiemannAnalysis) -> Result<SeedFrame, ProfileError> {
    let table = build_iota_table(25.0, 1e-10).map_err(|e| ProfileError::Seed(e.to_string()))?;
    let r0 = default_section_radius(shifted)?;
    let g1 = compute_gamma1(shifted, r0, DELTA_LAUNCH)?;
    let g2 = compute_gamma2(shifted, r0, DELTA_LAUNCH)?;
    Ok(SeedFrame { table, g1, g2, r0 })
}

/// Geometry of one side's chain at a given epsilon, derived from the
/// zero-epsilon skeleton (heteroclinic + layer table): breakpoints on the
/// sigma axis (Gamma at 0), the clock offset into the heteroclinic, and
/// cumulative slow-drift integrals along the skeleton.
struct ChainPlan {
    side: Side,
    /// Chain sigma of the delta-ball launch point (negative on the left
    /// side, positive on the right).
    sigma_launch: f64,
    /// Skeleton switch point: corridor (layer table) nearer Gamma,
    /// heteroclinic beyond.
    sigma_junction: f64,
    /// Heteroclinic trajectory time at the junction.
    t_junction: f64,
    /// Breakpoints ordered from the launch toward Gamma.
    node_sigma: Vec<f64>,
    /// Ascending sigma grid with cumulative integrals of the slow drift
    /// rates on the surface (w1' = -eps beta, w2' = -eps / r, xi' = eps r),
    /// measured from the grid start.
    grid: Vec<f64>,
    cum_w1: Vec<f64>,
    cum_w2: Vec<f64>,
    cum_xi: Vec<f64>,
}

fn lin_interp(grid: &[f64], vals: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return vals[0];
    }
    let last = grid.len() - 1;
    if x >= grid[last] {
        return vals[last];
    }
    let i = grid.partition_point(|&g| g <= x).clamp(1, last);
    let f = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    vals[i - 1] + f * (vals[i] - vals[i - 1])
}

impl ChainPlan {
    /// Drift accumulated between two chain positions: (dw1, dw2, dxi).
    fn drift_between(&self, from: f64, to: f64) -> (f64, f64, f64) {
        (
            lin_interp(&self.grid, &self.cum_w1, to) - lin_interp(&self.grid, &self.cum_w1, from),
            lin_interp(&self.grid, &self.cum_w2, to) - lin_interp(&self.grid, &self.cum_w2, from),
            lin_interp(&self.grid, &self.cum_xi, to) - lin_interp(&self.grid, &self.cum_xi, from),
        )
    }
}

/// (beta, r) of the seed skeleton at chain position sigma.
fn skeleton_beta_r(
    frame: &SeedFrame,
    side: Side,
    sigma: f64,
    sigma_junction: f64,
    t_junction: f64,
    epsilon: f64,
    kappa0: f64,
) -> (f64, f64) {
    let corridor = match side {
        Side::Left => sigma >= sigma_junction,
        Side::Right => sigma <= sigma_junction,
    };
    if corridor {
        let (i1, i2, _) = frame.table.eval(sigma);
        (i1, epsilon / (kappa0 * i2))
    } else {
        let g = match side {
            Side::Left => &frame.g1,
            Side::Right => &frame.g2,
        };
        let (a, b) = (g.trajectory.first_time(), g.trajectory.last_time());
        let (lo, hi) = (a.min(b), a.max(b));
        let t = (t_junction + (sigma - sigma_junction)).clamp(lo, hi);
        let s = g.trajectory.sample(t);
        (s[0], s[1])
    }
}

/// Monotone inversion of iota2 on one half-line (iota2 rises toward its
/// maximum 1 at sigma = 0 from either side).
fn invert_iota2(table: &IotaTable, side: Side, target: f64) -> f64 {
    let (mut far, mut near) = match side {
        Side::Left => (-25.0f64, 0.0f64),
        Side::Right => (25.0, 0.0),
    };
    for _ in 0..80 {
        let mid = 0.5 * (far + near);
        if table.iota2_at(mid) < target {
            far = mid;
        } else {
            near = mid;
        }
    }
    0.5 * (far + near)
}

fn plan_side(
    frame: &SeedFrame,
    shifted: &RiemannAnalysis,
    constants: &InnerConstants,
    side: Side,
    epsilon: f64,
) -> Result<ChainPlan, ProfileError> {
    let g = match side {
        Side::Left => &frame.g1,
        Side::Right => &frame.g2,
    };
    let u_end = match side {
        Side::Left => shifted.data.ul,
        Side::Right => shifted.data.ur,
    };
    let kappa0 = constants.kappa0;

    // Junction target: deep enough into the corridor tail that the layer
    // table and the heteroclinic describe the same curve, capped so the
    // junction radius stays on the heteroclinic's r range.
    let iota_target = (2.0 * epsilon / (kappa0 * frame.r0)).clamp(0.3, 0.79);
    let mut r_junction = epsilon / (kappa0 * iota_target);
    let (mut r_min, mut r_max) = (f64::INFINITY, 0.0f64);
    for st in &g.trajectory.states {
        r_min = r_min.min(st[1]);
        r_max = r_max.max(st[1]);
    }
    if r_junction > 0.85 * r_max {
        r_junction = 0.85 * r_max;
    }
    if r_junction <= 1.2 * r_min {
        return Err(ProfileError::Seed(format!(
            "corridor junction r = {r_junction:.3e} lies below the heteroclinic reach \
             (r_min = {r_min:.3e}); epsilon = {epsilon:.3e} is too small for this skeleton"
        )));
    }
    let iota_required = epsilon / (kappa0 * r_junction);
    let sigma_junction = if iota_required >= 0.995 {
        0.0
    } else {
        invert_iota2(&frame.table, side, iota_required)
    };

    // Heteroclinic clock at the junction: first r-crossing out of the
    // saddle (states[0] is the saddle launch; r grows along the index).
    let times = &g.trajectory.times;
    let states = &g.trajectory.states;
    let mut t_junction = None;
    for k in 0..states.len() - 1 {
        let (ra, rb) = (states[k][1], states[k + 1][1]);
        if (ra - r_junction) * (rb - r_junction) <= 0.0 {
            let denom = rb - ra;
            let f = if denom == 0.0 { 0.0 } else { (r_junction - ra) / denom };
            t_junction = Some(times[k] + f * (times[k + 1] - times[k]));
            break;
        }
    }
    let t_junction = t_junction.ok_or_else(|| {
        ProfileError::Seed(format!(
            "heteroclinic never crosses the junction radius r = {r_junction:.3e}"
        ))
    })?;

    // Launch anchor: where the skeleton passes the physical launch
    // distance from the end state.
    let mut t_launch = *times.last().unwrap();
    for m in (0..states.len()).rev() {
        let p = decompactify(states[m][0], states[m][1], 0.0);
        let dist = ((p.u1 - u_end.u1).powi(2) + (p.u2 - u_end.u2).powi(2)).sqrt();
        if dist >= DELTA_LAUNCH {
            if m + 1 < states.len() {
                let q = decompactify(states[m + 1][0], states[m + 1][1], 0.0);
                let dnext = ((q.u1 - u_end.u1).powi(2) + (q.u2 - u_end.u2).powi(2)).sqrt();
                let denom = dist - dnext;
                let f = if denom <= 0.0 { 0.0 } else { (dist - DELTA_LAUNCH) / denom };
                t_launch = times[m] + f * (times[m + 1] - times[m]);
            } else {
                t_launch = times[m];
            }
            break;
        }
    }
    let sigma_launch = sigma_junction + (t_launch - t_junction);

    // Cumulative drift integrals along the skeleton (trapezoid).
    let (lo, hi) = match side {
        Side::Left => (sigma_launch, 0.0),
        Side::Right => (0.0, sigma_launch),
    };
    let n = (((hi - lo) / DRIFT_QUAD_STEP).ceil() as usize).max(1) + 1;
    let h = (hi - lo) / (n - 1) as f64;
    let mut grid = Vec::with_capacity(n);
    let mut cum_w1 = Vec::with_capacity(n);
    let mut cum_w2 = Vec::with_capacity(n);
    let mut cum_xi = Vec::with_capacity(n);
    let mut prev_rates = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        let sg = lo + i as f64 * h;
        let (beta, r) = skeleton_beta_r(frame, side, sg, sigma_junction, t_junction, epsilon, kappa0);
        let rates = (-epsilon * beta, -epsilon / r, epsilon * r);
        if i == 0 {
            grid.push(sg);
            cum_w1.push(0.0);
            cum_w2.push(0.0);
            cum_xi.push(0.0);
        } else {
            grid.push(sg);
            cum_w1.push(cum_w1[i - 1] + 0.5 * h * (prev_rates.0 + rates.0));
            cum_w2.push(cum_w2[i - 1] + 0.5 * h * (prev_rates.1 + rates.1));
            cum_xi.push(cum_xi[i - 1] + 0.5 * h * (prev_rates.2 + rates.2));
        }
        prev_rates = rates;
    }

    // Breakpoint ladder from the launch toward Gamma: dense legs within
    // INNER_ZONE of the section, sparse beyond, final breakpoint
    // LAST_BREAK_OFFSET before Gamma (the last leg's duration is a free
    // unknown of the match).
    let reach = sigma_launch.abs();
    let mut offsets = vec![LAST_BREAK_OFFSET];
    loop {
        let prev = *offsets.last().unwrap();
        let next = prev + if prev < INNER_ZONE { INNER_LEG_SPAN } else { OUTER_LEG_SPAN };
        if next > reach - OUTER_LEG_SPAN {
            break;
        }
        offsets.push(next);
    }
    let sgn = match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
    };
    let node_sigma: Vec<f64> = offsets.iter().rev().map(|off| sgn * off).collect();

    Ok(ChainPlan {
        side,
        sigma_launch,
        sigma_junction,
        t_junction,
        node_sigma,
        grid,
        cum_w1,
        cum_w2,
        cum_xi,
    })
}

/// Seed breakpoint states on the skeleton: (beta, r) from the corridor /
/// heteroclinic composite, slow variables from their launch values plus
/// the accumulated drift.
fn seed_nodes(
    plan: &ChainPlan,
    frame: &SeedFrame,
    shifted: &RiemannAnalysis,
    kappa0: f64,
    alpha: f64,
    epsilon: f64,
) -> Vec<[f64; 5]> {
    let (u_side, w_side) = match plan.side {
        Side::Left => (shifted.data.ul, shifted.wl),
        Side::Right => (shifted.data.ur, shifted.wr),
    };
    let w1_launch = w_side.0 - alpha * u_side.u1;
    let w2_launch = w_side.1 - alpha * u_side.u2;
    let xi_launch = shifted.s + alpha;
    plan.node_sigma
        .iter()
        .map(|&sg| {
            let (beta, r) = skeleton_beta_r(
                frame,
                plan.side,
                sg,
                plan.sigma_junction,
                plan.t_junction,
                epsilon,
                kappa0,
            );
            let (dw1, dw2, dxi) = plan.drift_between(plan.sigma_launch, sg);
            [beta, r, w1_launch + dw1, w2_launch + dw2, xi_launch + dxi]
        })
        .collect()
}

/// Cold-start alphas: choose (alpha1, alpha2) so that the drift-integrated
/// slow variables of the two skeletons agree at Gamma in w2 and xi. The
/// two alphas cannot balance all three slow components — sliding along
/// the data line is the only move they make — and the leftover w1 defect
/// is the solver's job through the leg durations.
fn alpha_cold_start(
    left: &ChainPlan,
    right: &ChainPlan,
    shifted: &RiemannAnalysis,
) -> (f64, f64) {
    let (_, dw2_l, dxi_l) = left.drift_between(left.sigma_launch, 0.0);
    let (_, dw2_r, dxi_r) = right.drift_between(right.sigma_launch, 0.0);
    let (ul2, ur2) = (shifted.data.ul.u2, shifted.data.ur.u2);
    // Gamma values: w2 = w_side2 - alpha u_side2 + dw2, xi = s + alpha + dxi.
    //   -ul2 a1 + ur2 a2 = (wr2 - wl2) + dw2_r - dw2_l
    //      a1 -     a2 = dxi_r - dxi_l
    let rhs1 = (shifted.wr.1 - shifted.wl.1) + dw2_r - dw2_l;
    let rhs2 = dxi_r - dxi_l;
    let det = ul2 - ur2;
    if det.abs() < 1e-9 {
        return (0.0, 0.0);
    }
    let a1 = (-rhs1 - ur2 * rhs2) / det;
    let a2 = a1 - rhs2;
    let lim = ALPHA_BOX - 0.1;
    (a1.clamp(-lim, lim), a2.clamp(-lim, lim))
}

/// Index bookkeeping of the stabilized unknown vector:
/// [alpha1, theta, z_0..z_{kl-1}, s_0..s_{kl-1}, alpha2, phi, z'.., s'..],
/// five scalars (beta, r, w1, w2, xi) per breakpoint plus one duration per
/// event-free leg (the launch leg and each interior leg; the final leg of
/// each side ends on Gamma through a terminal beta = 0 event instead).
/// The residual rows are the junction mismatches followed by the four-row
/// (kappa, w1, w2, xi) mismatch at the section; beta matches by the event,
/// and r by the conserved product kappa r = eps carried on both arcs.
///
/// The free durations matter beyond the usual time-reparametrization
/// slack: the slow drift at a launch ball points along the data line, the
/// very direction the alphas already span, so the mismatch component
/// orthogonal to it can only be adjusted by dwell changes deep in the
/// ride (strongest near the section, where the drift rate is dominated by
/// -kappa0 in w2). Frozen interior durations tie that dwell rigidly to
/// the seed skeleton and leave the damped iteration chasing the defect
/// through exponentially sensitive launch parameters; freeing them turns
/// it into a well-conditioned linear move.
#[derive(Debug, Clone, Copy)]
struct Layout {
    kl: usize,
    kr: usize,
}

impl Layout {
    /// Unknown count: k more than the residual rows per side, making the
    /// zero set a fat solution manifold (any near-identity repartition of
    /// time over the legs represents the same orbit); the damped
    /// least-squares step picks the minimum-norm point on it.
    fn n(&self) -> usize {
        4 + 6 * (self.kl + self.kr)
    }
    fn right_base(&self) -> usize {
        2 + 6 * self.kl
    }
    fn left_node(&self, j: usize) -> usize {
        2 + 5 * j
    }
    fn right_node(&self, j: usize) -> usize {
        self.right_base() + 2 + 5 * j
    }
    /// Duration of leg j (j = 0 is the launch leg off the delta ball).
    fn span(&self, side: Side, j: usize) -> usize {
        match side {
            Side::Left => 2 + 5 * self.kl + j,
            Side::Right => self.right_base() + 2 + 5 * self.kr + j,
        }
    }
    fn left_row(&self, j: usize) -> usize {
        5 * j
    }
    fn right_row(&self, j: usize) -> usize {
        5 * (self.kl + j)
    }
    fn gamma_row(&self) -> usize {
        5 * (self.kl + self.kr)
    }
}

fn node_at(x: &DVector<f64>, base: usize) -> [f64; 5] {
    [x[base], x[base + 1], x[base + 2], x[base + 3], x[base + 4]]
}

/// Continuity components of a 6-state: everything except kappa, which is
/// slaved to r on the invariant surface.
fn state_sel(y: &[f64; 6]) -> [f64; 5] {
    [y[0], y[1], y[3], y[4], y[5]]
}

#[derive(Clone, Copy)]
enum Purpose {
    Residual,
    Jacobian,
}

fn debug_on() -> bool {
    std::env::var_os("SHOCK_DEBUG").is_some()
}

struct ChainEval {
    f: DVector<f64>,
    left: Vec<Trajectory<6>>,
    right: Vec<Trajectory<6>>,
    gamma_left: [f64; 6],
    gamma_right: [f64; 6],
}

struct ChainProblem<'a> {
    shifted: &'a RiemannAnalysis,
    epsilon: f64,
    r0: f64,
    layout: Layout,
    /// Durations of the event-free left legs (launch leg first).
    left_spans: Vec<f64>,
    right_spans: Vec<f64>,
}

impl ChainProblem<'_> {
    fn cfg(&self, purpose: Purpose) -> IntegratorConfig {
        let (rel_tol, abs_tol) = match purpose {
            Purpose::Residual => (1e-13, 1e-15),
            Purpose::Jacobian => (1e-11, 1e-13),
        };
        IntegratorConfig { rel_tol, abs_tol, ..IntegratorConfig::default() }
    }

    fn lift(&self, z: &[f64; 5]) -> Result<[f64; 6], String> {
        let [beta, r, w1, w2, xi] = *z;
        if !(r > 1e-9 && r < 5.0)
            || !beta.is_finite()
            || beta.abs() > 4.0
            || w1.abs() > 60.0
            || w2.abs() > 60.0
            || xi.abs() > 30.0
        {
            return Err(format!(
                "breakpoint left the admissible region: beta = {beta}, r = {r}"
            ));
        }
        Ok([beta, r, self.epsilon / r, w1, w2, xi])
    }

    fn launch6(&self, side: Side, alpha: f64, angle: f64) -> Result<[f64; 6], String> {
        if alpha.abs() >= ALPHA_BOX {
            return Err(format!("alpha outside the |alpha| < {ALPHA_BOX} box"));
        }
        let p = launch_state(self.shifted, side, alpha, angle, DELTA_LAUNCH, self.epsilon)
            .map_err(|e| e.to_string())?;
        Ok([p.beta, p.r, p.kappa, p.w1, p.w2, p.xi])
    }

    fn run_fixed(
        &self,
        y0: [f64; 6],
        span: f64,
        backward: bool,
        purpose: Purpose,
    ) -> Result<Trajectory<6>, String> {
        let r0 = self.r0;
        let marker =
            EventSpec::new(move |_t, y: &[f64; 6]| y[1] - r0, Direction::Falling, false);
        let to = if backward { -span } else { span };
        integrate(
            |_t, y: &[f64; 6]| desingularized_field(y),
            y0,
            (0.0, to),
            &self.cfg(purpose),
            &[marker],
        )
        .map_err(|e| e.to_string())
    }

    /// Run the final leg from the last breakpoint until the orbit crosses
    /// the section {beta = 0}.
    fn run_to_section(
        &self,
        y0: [f64; 6],
        backward: bool,
        purpose: Purpose,
    ) -> Result<Trajectory<6>, String> {
        let r0 = self.r0;
        let marker =
            EventSpec::new(move |_t, y: &[f64; 6]| y[1] - r0, Direction::Falling, false);
        // beta falls through 0 approaching Gamma on the left side; the right
        // side is integrated backward, along which beta rises to 0.
        let dir = if backward { Direction::Rising } else { Direction::Falling };
        let section = EventSpec::terminal(|_t, y: &[f64; 6]| y[0], dir);
        let to = if backward { -SECTION_HORIZON } else { SECTION_HORIZON };
        let traj = integrate(
            |_t, y: &[f64; 6]| desingularized_field(y),
            y0,
            (0.0, to),
            &self.cfg(purpose),
            &[marker, section],
        )
        .map_err(|e| e.to_string())?;
        if traj.terminated_by != Some(1) {
            let g = traj.last_state();
            return Err(format!(
                "final leg missed the section within {SECTION_HORIZON} sigma-units \
                 (beta {:.3e}, r {:.3e})",
                g[0], g[1]
            ));
        }
        Ok(traj)
    }

    fn span_of(&self, x: &DVector<f64>, side: Side, j: usize) -> Result<f64, String> {
        let t = x[self.layout.span(side, j)];
        if !(0.25..=120.0).contains(&t) {
            return Err(format!("leg duration {t} left the admissible range"));
        }
        Ok(t)
    }

    fn eval_side(
        &self,
        x: &DVector<f64>,
        side: Side,
        f: &mut DVector<f64>,
    ) -> Result<(Vec<Trajectory<6>>, [f64; 6]), String> {
        let lay = self.layout;
        let (base, k, backward) = match side {
            Side::Left => (0, lay.kl, false),
            Side::Right => (lay.right_base(), lay.kr, true),
        };
        let node_base = |j: usize| match side {
            Side::Left => lay.left_node(j),
            Side::Right => lay.right_node(j),
        };
        let row = |j: usize| match side {
            Side::Left => lay.left_row(j),
            Side::Right => lay.right_row(j),
        };
        let y0 = self.launch6(side, x[base], x[base + 1])?;
        let mut runs = Vec::with_capacity(k + 1);
        runs.push(self.run_fixed(y0, self.span_of(x, side, 0)?, backward, Purpose::Residual)?);
        for j in 0..k {
            let z = node_at(x, node_base(j));
            let end = state_sel(&runs[j].last_state());
            for c in 0..5 {
                f[row(j) + c] = end[c] - z[c];
            }
            let y = self.lift(&z)?;
            runs.push(if j + 1 == k {
                self.run_to_section(y, backward, Purpose::Residual)?
            } else {
                self.run_fixed(y, self.span_of(x, side, j + 1)?, backward, Purpose::Residual)?
            });
        }
        let gamma = runs[k].last_state();
        Ok((runs, gamma))
    }

    fn eval(&self, x: &DVector<f64>) -> Result<ChainEval, String> {
        let lay = self.layout;
        let mut f = DVector::zeros(lay.n());
        let (left, gamma_left) = self.eval_side(x, Side::Left, &mut f)?;
        let (right, gamma_right) = self.eval_side(x, Side::Right, &mut f)?;
        let gr = lay.gamma_row();
        for c in 0..4 {
            f[gr + c] = gamma_left[2 + c] - gamma_right[2 + c];
        }
        Ok(ChainEval { f, left, right, gamma_left, gamma_right })
    }

    fn jacobian(&self, x: &DVector<f64>, ev: &ChainEval) -> Result<DMatrix<f64>, String> {
        let lay = self.layout;
        let n = lay.n();
        let gr = lay.gamma_row();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..lay.kl {
            for c in 0..5 {
                jac[(lay.left_row(j) + c, lay.left_node(j) + c)] = -1.0;
            }
        }
        for j in 0..lay.kr {
            for c in 0..5 {
                jac[(lay.right_row(j) + c, lay.right_node(j) + c)] = -1.0;
            }
        }

        for side in [Side::Left, Side::Right] {
            let (base, k, backward, sign) = match side {
                Side::Left => (0, lay.kl, false, 1.0),
                Side::Right => (lay.right_base(), lay.kr, true, -1.0),
            };
            let node_base = |j: usize| match side {
                Side::Left => lay.left_node(j),
                Side::Right => lay.right_node(j),
            };
            let row = |j: usize| match side {
                Side::Left => lay.left_row(j),
                Side::Right => lay.right_row(j),
            };
            let runs = match side {
                Side::Left => &ev.left,
                Side::Right => &ev.right,
            };
            let flow_sign = if backward { -1.0 } else { 1.0 };

            // Launch block: alpha and the angle feed the first junction.
            let launch_span = self.span_of(x, side, 0)?;
            for (col, h) in [(base, 1e-3), (base + 1, 1e-2)] {
                let run = |v: f64| -> Result<[f64; 5], String> {
                    let (a, th) = if col == base { (v, x[base + 1]) } else { (x[base], v) };
                    let y0 = self.launch6(side, a, th)?;
                    Ok(state_sel(
                        &self
                            .run_fixed(y0, launch_span, backward, Purpose::Jacobian)?
                            .last_state(),
                    ))
                };
                let (vp, vm) = (x[col] + h, x[col] - h);
                let (ep, em) = (run(vp)?, run(vm)?);
                for rr in 0..5 {
                    jac[(row(0) + rr, col)] = (ep[rr] - em[rr]) / (vp - vm);
                }
            }

            // Duration columns: leg j's endpoint moves along the flow
            // (negated on the backward side), feeding junction j only.
            for j in 0..k {
                let fj = desingularized_field(&runs[j].last_state());
                let fj = state_sel(&fj);
                let sc = lay.span(side, j);
                for rr in 0..5 {
                    jac[(row(j) + rr, sc)] = flow_sign * fj[rr];
                }
            }

            // Breakpoint blocks: z_j feeds junction j+1; the last one feeds
            // the Gamma mismatch through the section event.
            for j in 0..k {
                let nb = node_base(j);
                for c in 0..5 {
                    let h = 1e-6 * x[nb + c].abs().max(1.0);
                    let mut zp = node_at(x, nb);
                    let mut zm = node_at(x, nb);
                    zp[c] += h;
                    zm[c] -= h;
                    let denom = zp[c] - zm[c];
                    if j + 1 < k {
                        let span = self.span_of(x, side, j + 1)?;
                        let ep = state_sel(
                            &self
                                .run_fixed(self.lift(&zp)?, span, backward, Purpose::Jacobian)?
                                .last_state(),
                        );
                        let em = state_sel(
                            &self
                                .run_fixed(self.lift(&zm)?, span, backward, Purpose::Jacobian)?
                                .last_state(),
                        );
                        for rr in 0..5 {
                            jac[(row(j + 1) + rr, nb + c)] = (ep[rr] - em[rr]) / denom;
                        }
                    } else {
                        let ep = self
                            .run_to_section(self.lift(&zp)?, backward, Purpose::Jacobian)?
                            .last_state();
                        let em = self
                            .run_to_section(self.lift(&zm)?, backward, Purpose::Jacobian)?
                            .last_state();
                        for rr in 0..4 {
                            jac[(gr + rr, nb + c)] =
                                sign * (ep[2 + rr] - em[2 + rr]) / denom;
                        }
                    }
                }
            }
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entries in the stabilized Jacobian".to_string());
        }
        Ok(jac)
    }

    /// Compare J e_k against a fresh central difference of the full
    /// residual for a few representative columns.
    fn debug_check_jacobian(&self, x: &DVector<f64>, f0: &DVector<f64>, jac: &DMatrix<f64>) {
        let lay = self.layout;
        let cols = [
            0usize,
            1,
            lay.left_node(lay.kl - 1),
            lay.left_node(lay.kl - 1) + 1,
            lay.right_base(),
            lay.right_node(lay.kr - 1),
            lay.right_node(lay.kr - 1) + 3,
        ];
        for &k in &cols {
            let h = 1e-7 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += h;
            let Ok(ep) = self.eval(&xp) else {
                eprintln!("    jac check col {k}: eval failed");
                continue;
            };
            let mut worst = (0usize, 0.0f64, 0.0f64);
            for i in 0..lay.n() {
                let fd = (ep.f[i] - f0[i]) / h;
                let d = (fd - jac[(i, k)]).abs();
                if d > worst.1 {
                    worst = (i, d, fd);
                }
            }
            eprintln!(
                "    jac check col {k}: worst row {} |fd - J| = {:.3e} (fd {:.3e}, J {:.3e})",
                worst.0,
                worst.1,
                worst.2,
                jac[(worst.0, k)]
            );
        }
    }

    fn debug_residual(&self, f: &DVector<f64>) {
        let lay = self.layout;
        let names = ["beta", "r", "w1", "w2", "xi"];
        for (label, k, row) in [
            ("left ", lay.kl, &(|j: usize| lay.left_row(j)) as &dyn Fn(usize) -> usize),
            ("right", lay.kr, &(|j: usize| lay.right_row(j))),
        ] {
            let per_comp: Vec<String> = (0..5)
                .map(|c| {
                    let m = (0..k).map(|j| f[row(j) + c].abs()).fold(0.0, f64::max);
                    format!("{}={:.2e}", names[c], m)
                })
                .collect();
            eprintln!("    residual {label} max-per-comp [{}]", per_comp.join(", "));
        }
        let gamma: Vec<String> = (0..4)
            .map(|c| format!("{:.2e}", f[lay.gamma_row() + c]))
            .collect();
        eprintln!("    residual gamma [{}]", gamma.join(", "));
    }

    /// Levenberg-Marquardt on the stabilized system: the mismatch is wildly
    /// nonlinear in the near-Gamma breakpoints and near-degenerate along a
    /// mode trading the alphas against them, so a raw Newton step
    /// overcommits; the ridge term interpolates toward gradient descent on
    /// the ill-conditioned modes while leaving the benign ones full-length.
    fn newton(&self, x0: DVector<f64>) -> Result<(DVector<f64>, ChainEval, f64), ProfileError> {
        let mut x = x0;
        let mut eval = self
            .eval(&x)
            .map_err(|e| ProfileError::NoConvergence(format!("seed chain is not integrable: {e}")))?;
        let mut norm = eval.f.amax();
        let mut merit = eval.f.norm_squared();
        let mut best = norm;
        let mut lambda = 1e-4f64;
        for iter in 0..NEWTON_MAX_ITERS {
            if debug_on() {
                eprintln!(
                    "  lm iter {iter}: norm {norm:.3e} lambda {lambda:.1e} T ({:.3}, {:.3}) (eps {:.3e})",
                    x[self.layout.span(Side::Left, 0)],
                    x[self.layout.span(Side::Right, 0)],
                    self.epsilon
                );
                self.debug_residual(&eval.f);
            }
            if norm < NEWTON_TOL {
                return Ok((x, eval, norm));
            }
            let jac = self.jacobian(&x, &eval).map_err(ProfileError::NoConvergence)?;
            if debug_on() && iter == 0 {
                self.debug_check_jacobian(&x, &eval.f, &jac);
            }
            let n = self.layout.n();
            // Marquardt diagonal: per-column curvature of the raw residual,
            // floored to keep degenerate columns steerable.
            let mut diag = vec![0.0f64; n];
            for j in 0..n {
                let s: f64 = (0..n).map(|i| jac[(i, j)] * jac[(i, j)]).sum();
                diag[j] = s.sqrt().max(1e-8);
            }
            let mut accepted: Option<(DVector<f64>, ChainEval, f64)> = None;
            for _ in 0..24 {
                // Damped least squares via QR on the stacked system
                // [J; sqrt(lambda) D] d = [-f; 0]; avoids squaring the
                // condition number of the amplified near-section rows.
                let mut stacked = DMatrix::zeros(2 * n, n);
                stacked.view_mut((0, 0), (n, n)).copy_from(&jac);
                let sl = lambda.sqrt();
                for j in 0..n {
                    stacked[(n + j, j)] = sl * diag[j];
                }
                let mut rhs = DVector::zeros(2 * n);
                for i in 0..n {
                    rhs[i] = -eval.f[i];
                }
                let qr = stacked.qr();
                let qtr = qr.q().transpose() * &rhs;
                let Some(d) = qr
                    .r()
                    .solve_upper_triangular(&qtr)
                    .filter(|d: &DVector<f64>| d.iter().all(|v| v.is_finite()))
                else {
                    lambda *= 8.0;
                    continue;
                };
                let trial = &x + &d;
                match self.eval(&trial) {
                    Ok(te) => {
                        let tm = te.f.norm_squared();
                        if debug_on() {
                            let jd = &jac * &d;
                            let pred = 2.0 * jd.dot(&eval.f) + jd.norm_squared();
                            eprintln!(
                                "    lambda {lambda:.1e}: norm {:.3e} dmerit {:.3e} vs predicted {pred:.3e} (|d| {:.2e})",
                                te.f.amax(),
                                tm - merit,
                                d.norm()
                            );
                        }
                        if tm < merit {
                            let tn = te.f.amax();
                            accepted = Some((trial, te, tn));
                            break;
                        }
                        lambda *= 8.0;
                    }
                    Err(e) => {
                        if debug_on() {
                            eprintln!("    lambda {lambda:.1e}: ERR {e}");
                        }
                        lambda *= 8.0;
                    }
                }
                if lambda > 1e12 {
                    break;
                }
            }
            let Some((nx, ne, nn)) = accepted else {
                return Err(ProfileError::NoConvergence(
                    "residual failed to evaluate along the entire damped step".to_string(),
                ));
            };
            x = nx;
            eval = ne;
            norm = nn;
            merit = eval.f.norm_squared();
            best = best.min(norm);
            lambda = (lambda / 4.0).max(1e-12);
        }
        if norm < NEWTON_TOL {
            Ok((x, eval, norm))
        } else {
            Err(ProfileError::NoConvergence(format!(
                "{NEWTON_MAX_ITERS} iterations, best mismatch {best:.3e}"
            )))
        }
    }
}

/// Solve the matching problem at one epsilon.
///
/// Refuses data violating the hypotheses (e0 <= 0 or overcompressivity
/// failure). Works in auto-shifted variables internally and converts back.
pub fn shoot_match(
    analysis: &RiemannAnalysis,
    constants: &InnerConstants,
    epsilon: f64,
    guess: ShootingUnknowns,
) -> Result<ProfileSolution, ProfileError> {
    assert!(epsilon > 0.0 && epsilon <= 0.05, "epsilon out of the supported range");
    if !analysis.h2_holds {
        return Err(ProfileError::HypothesisViolated(format!(
            "singular strength e0 = {} is not positive",
            analysis.e0
        )));
    }
    if !analysis.h1_holds {
        return Err(ProfileError::HypothesisViolated(
            "data is not overcompressive".to_string(),
        ));
    }
    let shift = auto_shift(&analysis.data);
    let shifted = shift_analysis(analysis, shift)?;
    let frame = build_frame(&shifted)?;
    shoot_match_framed(analysis, &shifted, shift, constants, &frame, epsilon, guess)
}

#[allow(clippy::too_many_arguments)]
fn shoot_match_framed(
    analysis: &RiemannAnalysis,
    shifted: &RiemannAnalysis,
    shift: f64,
    constants: &InnerConstants,
    frame: &SeedFrame,
    epsilon: f64,
    guess: ShootingUnknowns,
) -> Result<ProfileSolution, ProfileError> {
    let left_plan = plan_side(frame, shifted, constants, Side::Left, epsilon)?;
    let right_plan = plan_side(frame, shifted, constants, Side::Right, epsilon)?;

    // A caller without better knowledge (the zero-epsilon guess) passes
    // alpha = 0; replace that with the drift-balanced estimate.
    let (a1, a2) = if guess.alpha1 == 0.0 && guess.alpha2 == 0.0 {
        alpha_cold_start(&left_plan, &right_plan, shifted)
    } else {
        (guess.alpha1, guess.alpha2)
    };

    // Gamma must be crossed inside the inner regime: the matched crossing
    // sits at r ~ eps/kappa0 (plus o(1) corrections), the spurious outer
    // crossing near r ~ r_end is excluded by the guard.
    let r_guard = (frame.r0 / 10.0).max(GUARD_LAYER_FACTOR * epsilon / constants.kappa0);
    let mut problem = ChainProblem {
        shifted,
        epsilon,
        r0: frame.r0,
        layout: Layout { kl: 0, kr: 0 },
        left_spans: Vec::new(),
        right_spans: Vec::new(),
    };
    // Seed each side on its skeleton: breakpoints on the corridor /
    // heteroclinic composite, slow variables drift-integrated. The
    // skeleton's clock misjudges the true traversal time (the drift
    // deforms the orbit away from the zero-epsilon curve), so every leg
    // duration stays a solver unknown seeded from the plan.
    let left_nodes = seed_nodes(&left_plan, frame, shifted, constants.kappa0, a1, epsilon);
    let right_nodes = seed_nodes(&right_plan, frame, shifted, constants.kappa0, a2, epsilon);
    let spans_of = |plan: &ChainPlan| -> Vec<f64> {
        plan.node_sigma
            .iter()
            .enumerate()
            .map(|(j, &sg)| {
                let prev = if j == 0 { plan.sigma_launch } else { plan.node_sigma[j - 1] };
                (prev - sg).abs()
            })
            .collect()
    };
    let left_spans = spans_of(&left_plan);
    let right_spans = spans_of(&right_plan);
    let layout = Layout { kl: left_nodes.len(), kr: right_nodes.len() };
    problem.layout = layout;
    problem.left_spans = left_spans;
    problem.right_spans = right_spans;

    let mut x0 = DVector::zeros(layout.n());
    x0[0] = a1;
    x0[1] = guess.theta;
    for (j, z) in left_nodes.iter().enumerate() {
        for c in 0..5 {
            x0[layout.left_node(j) + c] = z[c];
        }
    }
    x0[layout.right_base()] = a2;
    x0[layout.right_base() + 1] = guess.phi;
    for (j, z) in right_nodes.iter().enumerate() {
        for c in 0..5 {
            x0[layout.right_node(j) + c] = z[c];
        }
    }
    for (j, &s) in problem.left_spans.iter().enumerate() {
        x0[layout.span(Side::Left, j)] = s;
    }
    for (j, &s) in problem.right_spans.iter().enumerate() {
        x0[layout.span(Side::Right, j)] = s;
    }

    let (x, eval, _norm) = problem.newton(x0)?;
    // The section rows only pin beta = 0; reject a converged chain whose
    // crossing sits on the spurious outer branch instead of the inner regime.
    let r_gamma = eval.gamma_left[1].max(eval.gamma_right[1]);
    if r_gamma >= r_guard {
        return Err(ProfileError::SectionMiss(format!(
            "matched section crossing at r = {r_gamma:.3e} lies outside the inner regime \
             (guard {r_guard:.3e})"
        )));
    }
    let unknowns = ShootingUnknowns {
        alpha1: x[0],
        theta: x[1],
        alpha2: x[layout.right_base()],
        phi: x[layout.right_base() + 1],
    };
    let match_residual = (0..4)
        .map(|c| (eval.gamma_left[2 + c] - eval.gamma_right[2 + c]).abs())
        .fold(0.0, f64::max);
    assemble_chain(analysis, epsilon, shift, &eval, unknowns, match_residual)
}

fn assemble_chain(
    analysis: &RiemannAnalysis,
    epsilon: f64,
    shift: f64,
    eval: &ChainEval,
    unknowns: ShootingUnknowns,
    match_residual: f64,
) -> Result<ProfileSolution, ProfileError> {
    let mut sigma: Vec<f64> = Vec::new();
    let mut states: Vec<[f64; 6]> = Vec::new();
    let mut left_hits: Vec<(f64, [f64; 6])> = Vec::new();
    let mut right_hits: Vec<(f64, [f64; 6])> = Vec::new();

    // Left side: legs run forward; accumulate offsets, then shift so the
    // Gamma event lands at sigma = 0. Junction duplicates (each leg starts
    // where the previous ended, up to the converged mismatch) are dropped.
    let mut off = 0.0;
    let mut first_sample = true;
    for traj in &eval.left {
        for i in 0..traj.len() {
            if !first_sample && i == 0 {
                continue;
            }
            sigma.push(off + traj.times[i]);
            states.push(traj.states[i]);
        }
        for e in &traj.events {
            if e.event == 0 {
                left_hits.push((off + e.t, e.state));
            }
        }
        off += traj.last_time();
        first_sample = false;
    }
    let t_left = off;
    for s in &mut sigma {
        *s -= t_left;
    }
    for h in &mut left_hits {
        h.0 -= t_left;
    }

    // Right side: legs were integrated backward from the launch; traverse
    // them in reverse so sigma ascends away from Gamma, skipping each
    // leg's deepest sample (the Gamma event itself is kept from the left).
    let right_trajs: Vec<&Trajectory<6>> = eval.right.iter().collect();
    let durations: Vec<f64> = right_trajs.iter().map(|t| t.last_time().abs()).collect();
    let t_right: f64 = durations.iter().sum();
    let mut start_off = Vec::with_capacity(right_trajs.len());
    let mut acc = 0.0;
    for d in &durations {
        start_off.push(acc);
        acc += d;
    }
    for (k, traj) in right_trajs.iter().enumerate().rev() {
        let base = t_right - start_off[k];
        for i in (0..traj.len()).rev() {
            if i == traj.len() - 1 {
                continue;
            }
            sigma.push(base + traj.times[i]);
            states.push(traj.states[i]);
        }
        for e in &traj.events {
            if e.event == 0 {
                right_hits.push((base + e.t, e.state));
            }
        }
    }

    let mut surface_deviation = 0.0f64;
    for st in &states {
        surface_deviation = surface_deviation.max((st[1] * st[2] / epsilon - 1.0).abs());
    }

    // Convert through kappa (the desingularized route): u1 = beta kappa /
    // eps, u2 = (kappa/eps)^2 - shift; w returns to unshifted variables.
    let to_physical = |st: &[f64; 6]| -> (f64, f64, f64, f64, f64) {
        let scale = st[2] / epsilon;
        (
            st[0] * scale,
            scale * scale - shift,
            st[3] + shift,
            st[4] + analysis.s * shift,
            st[5],
        )
    };

    // Boundary truncation: drop the exponential dwell near each end state,
    // keeping one sample inside the boundary tolerance ball on each side so
    // the reported endpoints stay within tol of u_L, u_R.
    const BOUNDARY_TOL: f64 = 1e-3;
    let (ul, ur) = (analysis.data.ul, analysis.data.ur);
    let dist_to = |st: &[f64; 6], u: State2| -> f64 {
        let (u1, u2, ..) = to_physical(st);
        ((u1 - u.u1).powi(2) + (u2 - u.u2).powi(2)).sqrt()
    };
    let first_out = states
        .iter()
        .position(|st| dist_to(st, ul) >= BOUNDARY_TOL)
        .unwrap_or(states.len());
    let lo = first_out.saturating_sub(1);
    let last_out = states
        .iter()
        .rposition(|st| dist_to(st, ur) >= BOUNDARY_TOL)
        .unwrap_or(0);
    let hi = (last_out + 1).min(states.len() - 1);
    if lo >= hi {
        return Err(ProfileError::SectionMiss(
            "profile collapsed under boundary truncation".to_string(),
        ));
    }
    let sigma_grid: Vec<f64> = sigma[lo..=hi].to_vec();
    let states: Vec<[f64; 6]> = states[lo..=hi].to_vec();

    let mut xi_grid = Vec::with_capacity(states.len());
    let (mut u1, mut u2, mut w1, mut w2) = (
        Vec::with_capacity(states.len()),
        Vec::with_capacity(states.len()),
        Vec::with_capacity(states.len()),
        Vec::with_capacity(states.len()),
    );
    for st in &states {
        let (a, b, c, d, xi) = to_physical(st);
        u1.push(a);
        u2.push(b);
        w1.push(c);
        w2.push(d);
        xi_grid.push(xi);
    }

    // Layer markers: last r0-crossing before Gamma, first after.
    let marker_left = left_hits
        .iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .copied();
    let marker_right = right_hits
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .copied();
    let (layer, t_layer) = match (marker_left, marker_right) {
        (Some((tin, sin)), Some((tout, sout))) => {
            (Some((sin[5], sout[5])), Some(tout - tin))
        }
        _ => (None, None),
    };
    let xi_gamma = eval.gamma_left[5];

    let argmax2 = (0..u2.len()).max_by(|&a, &b| u2[a].partial_cmp(&u2[b]).unwrap()).unwrap();
    let argmax1p = (0..u1.len()).max_by(|&a, &b| u1[a].partial_cmp(&u1[b]).unwrap()).unwrap();
    let argmax1m = (0..u1.len()).min_by(|&a, &b| u1[a].partial_cmp(&u1[b]).unwrap()).unwrap();
    let maxima = Maxima {
        max_u2: u2[argmax2],
        argmax: xi_grid[argmax2],
        max_u1_plus: u1[argmax1p],
        xi_u1_plus: xi_grid[argmax1p],
        max_u1_minus: -u1[argmax1m],
        xi_u1_minus: xi_grid[argmax1m],
    };

    Ok(ProfileSolution {
        epsilon,
        xi_grid,
        u1,
        u2,
        w1,
        w2,
        sigma_grid,
        states,
        layer,
        t_layer,
        xi_gamma,
        maxima,
        match_residual,
        surface_deviation,
        unknowns,
        shift,
    })
}

/// Report card of the epsilon-sweep.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub eps2_max_u2: Vec<f64>,
    /// eps * max u1.
    pub eps_max_u1: Vec<f64>,
    /// eps * max(-u1).
    pub eps_max_u1_neg: Vec<f64>,
    pub kappa0_sq_ref: f64,
    pub omega0_ref: f64,
    /// Sigma-duration below r0, when measurable at that epsilon.
    pub t_layer: Vec<Option<f64>>,
    pub xi_widths: Vec<Option<f64>>,
    pub match_residuals: Vec<f64>,
    pub surface_deviations: Vec<f64>,
    pub w1_drifts: Vec<f64>,
}

impl ScalingReport {
    /// CSV dump: epsilon, eps2_max_u2, eps_max_u1, T_layer, xi_width.
    /// Unmeasurable layer quantities print as nan.
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        out.write_all(b"epsilon,eps2_max_u2,eps_max_u1,T_layer,xi_width\n")?;
        for i in 0..self.epsilons.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.epsilons[i],
                self.eps2_max_u2[i],
                self.eps_max_u1[i],
                self.t_layer[i].unwrap_or(f64::NAN),
                self.xi_widths[i].unwrap_or(f64::NAN),
            )?;
        }
        Ok(())
    }
}

/// Sweep result: the report, every converged profile, and the first failure
/// (if any) after which the sweep stopped.
pub struct SweepOutcome {
    pub report: ScalingReport,
    pub profiles: Vec<ProfileSolution>,
    pub failure: Option<(f64, ProfileError)>,
}

/// Initial angles from the zero-epsilon heteroclinics: the direction in
/// which each outer orbit leaves its end state, expressed in the launch
/// eigenplane basis.
pub fn initial_guess(analysis: &RiemannAnalysis) -> Result<ShootingUnknowns, ProfileError> {
    let r0 = default_section_radius(analysis)?;
    let g1 = compute_gamma1(analysis, r0, DELTA_LAUNCH)?;
    let g2 = compute_gamma2(analysis, r0, DELTA_LAUNCH)?;
    let shift = auto_shift(&analysis.data);
    let angle_of = |g: &HeteroclinicResult, u: State2| -> f64 {
        // Walk back from the landing end until the orbit is far enough from
        // the end state to resolve a direction.
        let n = g.trajectory.len();
        let mut dir = [0.0f64; 2];
        for i in (0..n).rev() {
            let [b, r] = g.trajectory.states[i];
            let p = decompactify(b, r, shift);
            let d = [p.u1 - u.u1, p.u2 - u.u2];
            let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if dist > 1e-4 {
                dir = [d[0] / dist, d[1] / dist];
                break;
            }
        }
        let [v1, v2] = eigenplane(u, 0.0);
        // Solve [v1 v2] c = dir for the coordinates in the eigenplane.
        let det = v1[0] * v2[1] - v2[0] * v1[1];
        let c1 = (dir[0] * v2[1] - v2[0] * dir[1]) / det;
        let c2 = (v1[0] * dir[1] - dir[0] * v1[1]) / det;
        c2.atan2(c1)
    };
    Ok(ShootingUnknowns {
        alpha1: 0.0,
        theta: angle_of(&g1, analysis.data.ul),
        alpha2: 0.0,
        phi: angle_of(&g2, analysis.data.ur),
    })
}

/// Continuation sweep over a strictly decreasing epsilon list; each solve
/// seeds the next. Stops at the first failure and reports partial results.
pub fn measure_scaling(
    analysis: &RiemannAnalysis,
    constants: &InnerConstants,
    eps_list: &[f64],
) -> Result<SweepOutcome, ProfileError> {
    assert!(
        eps_list.windows(2).all(|w| w[1] < w[0]),
        "epsilon list must be strictly decreasing"
    );
    if !analysis.h2_holds || !analysis.h1_holds {
        return Err(ProfileError::HypothesisViolated(
            "sweep requires overcompressive data with positive singular strength".to_string(),
        ));
    }
    let shift = auto_shift(&analysis.data);
    let shifted = shift_analysis(analysis, shift)?;
    let frame = build_frame(&shifted)?;
    let mut guess = initial_guess(analysis)?;
    let mut profiles: Vec<ProfileSolution> = Vec::new();
    let mut failure = None;
    for &eps in eps_list {
        match shoot_match_framed(analysis, &shifted, shift, constants, &frame, eps, guess) {
            Ok(p) => {
                guess = p.unknowns;
                profiles.push(p);
            }
            Err(e) => {
                failure = Some((eps, e));
                break;
            }
        }
    }
    let report = ScalingReport {
        epsilons: profiles.iter().map(|p| p.epsilon).collect(),
        eps2_max_u2: profiles.iter().map(|p| p.epsilon * p.epsilon * p.maxima.max_u2).collect(),
        eps_max_u1: profiles.iter().map(|p| p.epsilon * p.maxima.max_u1_plus).collect(),
        eps_max_u1_neg: profiles.iter().map(|p| p.epsilon * p.maxima.max_u1_minus).collect(),
        kappa0_sq_ref: constants.kappa0 * constants.kappa0,
        omega0_ref: constants.omega0,
        t_layer: profiles.iter().map(|p| p.t_layer).collect(),
        xi_widths: profiles.iter().map(|p| p.layer.map(|(a, b)| b - a)).collect(),
        match_residuals: profiles.iter().map(|p| p.match_residual).collect(),
        surface_deviations: profiles.iter().map(|p| p.surface_deviation).collect(),
        w1_drifts: profiles.iter().map(|p| p.w1_layer_drift()).collect(),
    };
    Ok(SweepOutcome { report, profiles, failure })
}

/// Geometric epsilon ladder from `from` down to (at most) `to`.
pub fn geometric_epsilons(from: f64, to: f64, ratio: f64) -> Vec<f64> {
    assert!(from > to && to > 0.0 && ratio > 0.0 && ratio < 1.0);
    let mut eps = from;
    let mut out = Vec::new();
    while eps >= to * 0.999 {
        out.push(eps);
        eps *= ratio;
    }
    out
}

/// Locate the extrema of a converged profile (grid arg-maxima; the grid is
/// the orbit's own step sequence, densest through the layer).
pub fn max_argmax(profile: &ProfileSolution) -> Maxima {
    profile.maxima
}
