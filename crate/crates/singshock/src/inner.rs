//! The inner (blown-up) layer dynamics on the invariant plane r = 0.
//!
//! Every singular layer of this system, regardless of the Riemann data, is a
//! rescaling of one universal profile: the solution iota1 of the scalar
//! equation
//!
//! ```text
//!   d(iota1)/d(sigma) = -(iota1^4 - 6 iota1^2 + 6) / 6,   iota1(0) = 0,
//! ```
//!
//! which decreases from rho3 = sqrt(3 - sqrt(3)) at sigma = -inf to -rho3 at
//! +inf. Two companions ride along: the even envelope
//! iota2 = exp(integral of iota1^3/6), normalized to iota2(0) = 1, and its
//! cumulative mass iota3(sigma) = integral of iota2 from -inf to sigma. The
//! data enters only through two scalars: kappa0 = e0 / (2 iota3(0)) sets the
//! layer's kappa-amplitude, and omega0 = kappa0 * iota2(sigma0) (where
//! iota1(sigma0) = 1) is the peak of beta*kappa, which later controls the
//! blow-up rate of max |u1|.

use std::io::Write as IoWrite;

use thiserror::Error;

use crate::flux::RiemannAnalysis;
use crate::numerics::{integrate, solve_root, IntegratorConfig, RootConfig};

#[derive(Debug, Error)]
pub enum InnerError {
    /// The profile had not saturated to its limit values at the requested
    /// half-width.
    #[error("layer tails not converged at half-width {sigma_max}: |iota1 - rho3| = {gap:.3e} >= {tol:.3e}")]
    TailNotConverged { sigma_max: f64, gap: f64, tol: f64 },
    /// The data does not admit a singular layer (negative strength e0).
    #[error("hypothesis violated: singular strength e0 = {e0:.6} is negative")]
    HypothesisViolated { e0: f64 },
    /// The two half-trajectory formulas disagreed at sigma = 0.
    #[error("half-trajectories mismatch at sigma = 0 by {mismatch:.3e} (tol {tol:.3e})")]
    MatchFailure { mismatch: f64, tol: f64 },
    /// Table construction or root solving failed mechanically.
    #[error("inner-layer solver failure: {0}")]
    Solver(String),
}

/// Roots of beta^4 - 6 beta^2 + 6 and the matching constants.
#[derive(Debug, Clone, Copy)]
pub struct InnerConstants {
    /// The four real roots, ascending: [-sqrt(3+sqrt3), -sqrt(3-sqrt3),
    /// sqrt(3-sqrt3), sqrt(3+sqrt3)].
    pub rho: [f64; 4],
    /// Layer amplitude kappa0 = e0 / (2 iota3(0)); positive iff e0 > 0.
    pub kappa0: f64,
    /// Peak of beta*kappa along the layer: omega0 = kappa0 * iota2(sigma0).
    pub omega0: f64,
}

/// The quartic whose inner roots bound the layer profile.
pub fn quartic(beta: f64) -> f64 {
    beta * beta * beta * beta - 6.0 * beta * beta + 6.0
}

/// Roots of the quartic, ascending. rho[2] is the beta-limit of the layer
/// profile at sigma = -inf.
pub fn rho_roots() -> [f64; 4] {
    let s3 = 3.0f64.sqrt();
    let rho3 = (3.0 - s3).sqrt();
    let rho4 = (3.0 + s3).sqrt();
    [-rho4, -rho3, rho3, rho4]
}

/// Tabulated universal layer profile on [-sigma_max, sigma_max], with
/// analytic exponential tails beyond.
#[derive(Debug, Clone)]
pub struct IotaTable {
    /// Strictly increasing sigma nodes spanning [-sigma_max, sigma_max].
    pub grid: Vec<f64>,
    pub iota1: Vec<f64>,
    pub iota2: Vec<f64>,
    pub iota3: Vec<f64>,
    /// The unique sigma < 0 with iota1(sigma0) = 1.
    pub sigma0: f64,
    /// iota3(0) = integral of iota2 over (-inf, 0].
    pub iota3_at_0: f64,
    pub sigma_max: f64,
    /// Analytic tail mass: integral of iota2 over (-inf, -sigma_max].
    pub tail_mass: f64,
}

fn iota_field(_sigma: f64, y: &[f64; 3]) -> [f64; 3] {
    let [i1, i2, _] = *y;
    [-quartic(i1) / 6.0, i1 * i1 * i1 * i2 / 6.0, i2]
}

/// Build the layer-profile table by integrating (iota1, iota2,
/// running integral of iota2) from sigma = 0 both ways, then shifting the
/// running integral so it measures mass from -inf (analytic tail added).
///
/// `tol` gates the a-posteriori saturation test |iota1(-sigma_max) - rho3|;
/// the tails beyond the table decay like exp(rho3^3 sigma / 6).
pub fn build_iota_table(sigma_max: f64, tol: f64) -> Result<IotaTable, InnerError> {
    assert!(sigma_max > 0.0 && tol > 0.0);
    let cfg = IntegratorConfig {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        // Dense nodes keep the cubic interpolant accurate to ~1e-11, which
        // downstream consumers (quadrature cross-checks, the sigma0 solve,
        // mirrored evaluation) rely on.
        max_step: 1.0 / 64.0,
        ..IntegratorConfig::default()
    };
    let y0 = [0.0, 1.0, 0.0];
    let fwd = integrate(iota_field, y0, (0.0, sigma_max), &cfg, &[])
        .map_err(|e| InnerError::Solver(e.to_string()))?;
    let bwd = integrate(iota_field, y0, (0.0, -sigma_max), &cfg, &[])
        .map_err(|e| InnerError::Solver(e.to_string()))?;

    let rho3 = rho_roots()[2];
    let left_gap = (bwd.last_state()[0] - rho3).abs();
    let right_gap = (fwd.last_state()[0] + rho3).abs();
    let gap = left_gap.max(right_gap);
    if gap >= tol {
        return Err(InnerError::TailNotConverged { sigma_max, gap, tol });
    }

    // Merge backward (reversed) and forward node sets; sigma = 0 appears once.
    let nb = bwd.times.len();
    let mut grid = Vec::with_capacity(nb + fwd.times.len() - 1);
    let mut iota1 = Vec::with_capacity(grid.capacity());
    let mut iota2 = Vec::with_capacity(grid.capacity());
    let mut running = Vec::with_capacity(grid.capacity());
    for i in (0..nb).rev() {
        grid.push(bwd.times[i]);
        iota1.push(bwd.states[i][0]);
        iota2.push(bwd.states[i][1]);
        running.push(bwd.states[i][2]);
    }
    for i in 1..fwd.times.len() {
        grid.push(fwd.times[i]);
        iota1.push(fwd.states[i][0]);
        iota2.push(fwd.states[i][1]);
        running.push(fwd.states[i][2]);
    }

    // Mass below -sigma_max from the pure exponential regime:
    // iota2(sigma) = iota2(-sigma_max) exp(rho3^3 (sigma + sigma_max)/6).
    let rho3_cubed = rho3 * rho3 * rho3;
    let tail_mass = 6.0 * bwd.last_state()[1] / rho3_cubed;
    // running[i] = integral of iota2 from 0 to sigma_i, so
    // iota3(0) = -running(-sigma_max) + tail and iota3 = running + iota3(0).
    let iota3_at_0 = tail_mass - bwd.last_state()[2];
    let iota3: Vec<f64> = running.iter().map(|v| v + iota3_at_0).collect();

    let mut table = IotaTable {
        grid,
        iota1,
        iota2,
        iota3,
        sigma0: f64::NAN,
        iota3_at_0,
        sigma_max,
        tail_mass,
    };

    // sigma0 solves iota1(sigma0) = 1; iota1 is strictly decreasing, so a
    // grid scan brackets it and Newton on the interpolant polishes it.
    let k = table
        .iota1
        .windows(2)
        .position(|w| w[0] >= 1.0 && w[1] < 1.0)
        .ok_or_else(|| InnerError::Solver("iota1 never crosses 1 on the grid".to_string()))?;
    let x0 = 0.5 * (table.grid[k] + table.grid[k + 1]);
    let root_cfg = RootConfig { tol: 1e-12, max_iters: 50 };
    let sol = solve_root(
        |x: &[f64; 1]| Ok([table.iota1_at(x[0]) - 1.0]),
        [x0],
        &root_cfg,
    )
    .map_err(|e| InnerError::Solver(format!("sigma0 solve: {e}")))?;
    table.sigma0 = sol[0];
    Ok(table)
}

impl IotaTable {
    /// Index of the interval containing sigma (requires |sigma| <= sigma_max).
    fn bracket(&self, sigma: f64) -> usize {
        let n = self.grid.len();
        match self.grid.binary_search_by(|g| g.partial_cmp(&sigma).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        }
    }

    /// Cubic Hermite evaluation of (iota1, iota2, iota3) at sigma, using
    /// derivatives reconstructed from the ODE right-hand side; beyond the
    /// table the analytic exponential tails take over.
    pub fn eval(&self, sigma: f64) -> (f64, f64, f64) {
        let rho3 = rho_roots()[2];
        let rho3_cubed = rho3 * rho3 * rho3;
        // Saturation rate of iota1 toward +/- rho3.
        let sat = 2.0 * 3.0f64.sqrt() / 3.0 * rho3;
        if sigma < -self.sigma_max {
            let z = (rho3_cubed * (sigma + self.sigma_max) / 6.0).exp();
            let i2 = self.iota2[0] * z;
            let i1 = rho3 - (rho3 - self.iota1[0]) * (sat * (sigma + self.sigma_max)).exp();
            return (i1, i2, 6.0 * i2 / rho3_cubed);
        }
        if sigma > self.sigma_max {
            let n = self.grid.len() - 1;
            let z = (-rho3_cubed * (sigma - self.sigma_max) / 6.0).exp();
            let i2 = self.iota2[n] * z;
            let i1 = -rho3 + (self.iota1[n] + rho3) * (-sat * (sigma - self.sigma_max)).exp();
            let iota3_inf = self.iota3[n] + 6.0 * self.iota2[n] / rho3_cubed;
            return (i1, i2, iota3_inf - 6.0 * i2 / rho3_cubed);
        }
        let k = self.bracket(sigma);
        if sigma == self.grid[k] {
            return (self.iota1[k], self.iota2[k], self.iota3[k]);
        }
        if sigma == self.grid[k + 1] {
            return (self.iota1[k + 1], self.iota2[k + 1], self.iota3[k + 1]);
        }
        let h = self.grid[k + 1] - self.grid[k];
        let t = (sigma - self.grid[k]) / h;
        let node = |i: usize| [self.iota1[i], self.iota2[i], self.iota3[i]];
        let y0 = node(k);
        let y1 = node(k + 1);
        let d0 = iota_field(self.grid[k], &y0);
        let d1 = iota_field(self.grid[k + 1], &y1);
        let mut out = [0.0; 3];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        for i in 0..3 {
            out[i] = h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i];
        }
        (out[0], out[1], out[2])
    }

    pub fn iota1_at(&self, sigma: f64) -> f64 {
        self.eval(sigma).0
    }

    pub fn iota2_at(&self, sigma: f64) -> f64 {
        self.eval(sigma).1
    }

    pub fn iota3_at(&self, sigma: f64) -> f64 {
        self.eval(sigma).2
    }

    /// Limit of iota3 at +inf (total mass of iota2); equals 2 iota3(0) up to
    /// integration error because iota2 is even.
    pub fn iota3_at_infinity(&self) -> f64 {
        let rho3 = rho_roots()[2];
        let n = self.grid.len() - 1;
        self.iota3[n] + 6.0 * self.iota2[n] / (rho3 * rho3 * rho3)
    }

    /// CSV dump: sigma, iota1, iota2, iota3.
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        out.write_all(b"sigma,iota1,iota2,iota3\n")?;
        for i in 0..self.grid.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.grid[i], self.iota1[i], self.iota2[i], self.iota3[i]
            )?;
        }
        Ok(())
    }
}

/// Derive the matching constants from analyzed Riemann data.
///
/// e0 = 0 degenerates gracefully to a zero-amplitude layer; e0 < 0 has no
/// layer at all and errors.
pub fn matching_constants(
    analysis: &RiemannAnalysis,
    table: &IotaTable,
) -> Result<InnerConstants, InnerError> {
    if analysis.e0 < 0.0 {
        return Err(InnerError::HypothesisViolated { e0: analysis.e0 });
    }
    let kappa0 = analysis.e0 / (2.0 * table.iota3_at_0);
    let omega0 = kappa0 * table.iota2_at(table.sigma0);
    Ok(InnerConstants { rho: rho_roots(), kappa0, omega0 })
}

/// The connecting trajectory on r = 0: (beta, kappa, w2) against sigma, with
/// w1 and xi frozen at their shared values.
#[derive(Debug, Clone)]
pub struct Gamma0Trajectory {
    pub sigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub w2: Vec<f64>,
    /// Common first shifted-flux component (w1L = w1R).
    pub w1: f64,
    /// Self-similar coordinate, frozen at the shock speed.
    pub xi: f64,
    pub kappa0: f64,
    /// Envelope mass below -sigma_max, for tail corrections to integrals.
    pub tail_mass: f64,
}

const GAMMA0_STEP: f64 = 5e-4;

/// Assemble the connecting trajectory from the two half-formulas
///
/// ```text
///   sigma <= 0:  beta = iota1, kappa = kappa0 iota2(sigma),  w2 = w2L - kappa0 iota3(sigma)
///   sigma >= 0:  beta = iota1, kappa = kappa0 iota2(-sigma), w2 = w2R + kappa0 iota3(-sigma)
/// ```
///
/// and verify they agree at sigma = 0. The w2 match there is exactly the
/// statement e0 = 2 kappa0 iota3(0), i.e. the definition of kappa0.
pub fn build_gamma0(
    analysis: &RiemannAnalysis,
    constants: &InnerConstants,
    table: &IotaTable,
) -> Result<Gamma0Trajectory, InnerError> {
    let k0 = constants.kappa0;
    let (w2l, w2r) = (analysis.wl.1, analysis.wr.1);
    let tol = 1e-9;

    let left = |sigma: f64| {
        let (i1, i2, i3) = table.eval(sigma);
        (i1, k0 * i2, w2l - k0 * i3)
    };
    let right = |sigma: f64| {
        let i1 = table.iota1_at(sigma);
        let (_, i2m, i3m) = table.eval(-sigma);
        (i1, k0 * i2m, w2r + k0 * i3m)
    };

    let (bl, kl, wl0) = left(0.0);
    let (br, kr, wr0) = right(0.0);
    let mismatch = (bl - br).abs().max((kl - kr).abs()).max((wl0 - wr0).abs());
    if mismatch > tol {
        return Err(InnerError::MatchFailure { mismatch, tol });
    }

    let half = (table.sigma_max / GAMMA0_STEP).round() as i64;
    let n = (2 * half + 1) as usize;
    let mut sigma = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut kappa = Vec::with_capacity(n);
    let mut w2 = Vec::with_capacity(n);
    for j in -half..=half {
        let s = j as f64 * GAMMA0_STEP;
        let (b, k, w) = if j <= 0 { left(s) } else { right(s) };
        sigma.push(s);
        beta.push(b);
        kappa.push(k);
        w2.push(w);
    }
    Ok(Gamma0Trajectory {
        sigma,
        beta,
        kappa,
        w2,
        w1: analysis.wl.0,
        xi: analysis.s,
        kappa0: k0,
        tail_mass: k0 * table.tail_mass,
    })
}

impl Gamma0Trajectory {
    /// Total drop of w2 across the layer, measured by integrating kappa
    /// (since dw2/dsigma = -kappa) over the samples plus the analytic tail
    /// mass on both sides. This re-derives e0 by composite Simpson,
    /// independent of the ODE-carried cumulative integral.
    pub fn total_w2_drop(&self) -> f64 {
        simpson_uniform(&self.kappa, GAMMA0_STEP) + 2.0 * self.tail_mass
    }

    /// Maximum of beta*kappa over the samples and the sigma attaining it.
    pub fn max_beta_kappa(&self) -> (f64, f64) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0.0;
        for i in 0..self.sigma.len() {
            let v = self.beta[i] * self.kappa[i];
            if v > best {
                best = v;
                arg = self.sigma[i];
            }
        }
        (best, arg)
    }

    /// CSV dump: sigma, beta, kappa, w2.
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        out.write_all(b"sigma,beta,kappa,w2\n")?;
        for i in 0..self.sigma.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.sigma[i], self.beta[i], self.kappa[i], self.w2[i]
            )?;
        }
        Ok(())
    }
}

/// Composite Simpson on uniformly spaced samples (even interval count).
fn simpson_uniform(values: &[f64], dx: f64) -> f64 {
    let n = values.len() - 1;
    assert!(n >= 2 && n % 2 == 0, "need an even number of intervals");
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * dx / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{analyze, RiemannData, State2};
    use crate::numerics::quad;
    use crate::testutil::rk4_fixed;
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    fn table() -> &'static IotaTable {
        static TABLE: OnceLock<IotaTable> = OnceLock::new();
        TABLE.get_or_init(|| build_iota_table(25.0, 1e-10).unwrap())
    }

    #[test]
    fn quartic_roots_are_exact() {
        let rho = rho_roots();
        assert_abs_diff_eq!(rho[2], 1.126_032_500_610_494_3, epsilon = 1e-15);
        assert_eq!(rho[1], -rho[2]);
        assert_eq!(rho[0], -rho[3]);
        assert!(rho[0] < rho[1] && rho[1] < rho[2] && rho[2] < rho[3]);
        for r in rho {
            assert_abs_diff_eq!(quartic(r), 0.0, epsilon = 1e-12);
        }
        // Between the inner roots the quartic is positive, so iota1 decreases.
        assert!(quartic(0.0) > 0.0 && quartic(1.0) > 0.0);
    }

    #[test]
    fn center_values_are_exact() {
        let t = table();
        assert_eq!(t.iota1_at(0.0), 0.0);
        assert_eq!(t.iota2_at(0.0), 1.0);
        assert_eq!(t.iota3_at(0.0), t.iota3_at_0);
    }

    #[test]
    fn frozen_profile_values() {
        // Fixed-step RK4 oracle values (h = 1e-4, half-width 25), frozen.
        let t = table();
        assert_abs_diff_eq!(t.iota3_at_0, 5.624_797_405_398_372, epsilon = 1e-10);
        assert_abs_diff_eq!(t.sigma0, -1.777_386_055_166_311_9, epsilon = 1e-8);
        assert_abs_diff_eq!(t.iota2_at(t.sigma0), 0.884_865_493_811_604_2, epsilon = 1e-9);
        assert_abs_diff_eq!(t.iota1_at(-5.0), 1.124_163_301_001_036, epsilon = 1e-9);
        assert_abs_diff_eq!(t.iota2_at(-5.0), 0.434_940_948_624_705_45, epsilon = 1e-9);
        assert_abs_diff_eq!(t.iota1_at(-10.0), 1.126_029_694_693_543, epsilon = 1e-9);
        assert_abs_diff_eq!(t.iota2[0], 3.732_011_648_852_729_3e-3, epsilon = 1e-10);
        assert_abs_diff_eq!(t.tail_mass, 1.568_344_495_139_826e-2, epsilon = 1e-10);
    }

    #[test]
    fn tails_saturate() {
        let t = table();
        let rho3 = rho_roots()[2];
        assert!((t.iota1_at(-25.0) - rho3).abs() < 1e-12);
        assert!((t.iota1_at(25.0) + rho3).abs() < 1e-12);
    }

    #[test]
    fn insufficient_half_width_is_reported() {
        match build_iota_table(5.0, 1e-10) {
            Err(InnerError::TailNotConverged { gap, .. }) => {
                // |iota1(-5) - rho3| is about 1.87e-3.
                assert!(gap > 1e-4 && gap < 1e-2);
            }
            other => panic!("expected TailNotConverged, got {other:?}"),
        }
    }

    #[test]
    fn symmetry_on_grid() {
        // The field is odd in iota1, so iota1 is odd and iota2 even; the
        // forward and backward sweeps discretize independently, so agreement
        // is a real two-route check.
        let t = table();
        for &s in t.grid.iter().filter(|s| s.abs() <= 25.0 && **s > 0.0) {
            assert!((t.iota1_at(s) + t.iota1_at(-s)).abs() < 1e-10);
            assert!((t.iota2_at(s) - t.iota2_at(-s)).abs() < 1e-10);
        }
    }

    #[test]
    fn monotonicity_and_bounds() {
        let t = table();
        for w in t.iota1.windows(2) {
            assert!(w[1] < w[0], "iota1 must strictly decrease");
        }
        for w in t.iota3.windows(2) {
            assert!(w[1] > w[0], "iota3 must strictly increase");
        }
        for (i, &v) in t.iota2.iter().enumerate() {
            assert!(v > 0.0);
            if t.grid[i] != 0.0 {
                assert!(v < 1.0, "iota2 < 1 away from sigma = 0");
            }
        }
    }

    #[test]
    fn total_mass_is_twice_center_mass() {
        let t = table();
        assert_abs_diff_eq!(t.iota3_at_infinity(), 2.0 * t.iota3_at_0, epsilon = 1e-9);
    }

    #[test]
    fn carried_mass_matches_adaptive_quadrature() {
        // Independent route: a fixed-step RK4 table of iota2 on [-25, 0]
        // (h = 2^-9), evaluated by cubic Hermite, integrated by adaptive
        // Simpson, plus the same-form analytic tail. No shared code with the
        // production integrator beyond the ODE right-hand side.
        let t = table();
        let h = 1.0 / 512.0;
        let steps = (25.0 / h) as usize;
        let mut nodes = Vec::with_capacity(steps + 1);
        let mut y = [0.0f64, 1.0, 0.0];
        nodes.push(y);
        for k in 0..steps {
            let s = -(k as f64) * h;
            y = rk4_fixed(iota_field, y, s, s - h, 1);
            nodes.push(y);
        }
        // nodes[k] holds values at sigma = -k h.
        let eval_iota2 = |sigma: f64| -> f64 {
            assert!((-25.0..=0.0).contains(&sigma));
            let pos = -sigma / h;
            let k = (pos.floor() as usize).min(steps - 1);
            let tt = pos - k as f64;
            // Local coordinate runs toward negative sigma, so the Hermite
            // slopes pick up a sign.
            let y0 = nodes[k];
            let y1 = nodes[k + 1];
            let d0 = -iota_field(0.0, &y0)[1] * h;
            let d1 = -iota_field(0.0, &y1)[1] * h;
            let t2 = tt * tt;
            let t3 = t2 * tt;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0[1]
                + (t3 - 2.0 * t2 + tt) * d0
                + (-2.0 * t3 + 3.0 * t2) * y1[1]
                + (t3 - t2) * d1
        };
        let body = quad(eval_iota2, -25.0, 0.0, 1e-11).unwrap();
        let rho3 = rho_roots()[2];
        let tail = 6.0 * nodes[steps][1] / (rho3 * rho3 * rho3);
        assert_abs_diff_eq!(body + tail, t.iota3_at_0, epsilon = 1e-9);
    }

    #[test]
    fn sigma0_newton_from_minus_one() {
        let t = table();
        let cfg = RootConfig { tol: 1e-12, max_iters: 50 };
        let sol = solve_root(|x: &[f64; 1]| Ok([t.iota1_at(x[0]) - 1.0]), [-1.0], &cfg).unwrap();
        assert!((t.iota1_at(sol[0]) - 1.0).abs() < 1e-10);
        assert_abs_diff_eq!(sol[0], t.sigma0, epsilon = 1e-9);
    }

    #[test]
    fn matching_constants_sample_data() {
        let a = analyze(RiemannData::sample()).unwrap();
        let c = matching_constants(&a, table()).unwrap();
        assert_abs_diff_eq!(c.kappa0, 3.840_138_309_562_848e-2, epsilon = 1e-10);
        assert_abs_diff_eq!(c.omega0, 3.398_005_881_596_189e-2, epsilon = 1e-10);
        assert!(c.kappa0 > 0.0 && c.omega0 > 0.0);
        // Linearity in e0 is exact in floating point (scaling by 2).
        let mut doubled = a;
        doubled.e0 = 2.0 * a.e0;
        let c2 = matching_constants(&doubled, table()).unwrap();
        assert_eq!(c2.kappa0, 2.0 * c.kappa0);
        assert_eq!(c2.omega0, 2.0 * c.omega0);
    }

    #[test]
    fn zero_strength_degenerates_gracefully() {
        let mut a = analyze(RiemannData::sample()).unwrap();
        a.e0 = 0.0;
        let c = matching_constants(&a, table()).unwrap();
        assert_eq!(c.kappa0, 0.0);
        assert_eq!(c.omega0, 0.0);
    }

    #[test]
    fn negative_strength_is_rejected() {
        // Swapping the states flips the sign of e0.
        let sample = RiemannData::sample();
        let swapped = analyze(RiemannData::new(sample.ur, sample.ul)).unwrap();
        assert!(swapped.e0 < 0.0);
        match matching_constants(&swapped, table()) {
            Err(InnerError::HypothesisViolated { e0 }) => {
                assert_abs_diff_eq!(e0, -0.432, epsilon = 1e-12)
            }
            other => panic!("expected HypothesisViolated, got {other:?}"),
        }
    }

    fn sample_gamma0() -> (RiemannAnalysis, InnerConstants, Gamma0Trajectory) {
        let a = analyze(RiemannData::sample()).unwrap();
        let c = matching_constants(&a, table()).unwrap();
        let g = build_gamma0(&a, &c, table()).unwrap();
        (a, c, g)
    }

    #[test]
    fn gamma0_center_and_endpoints() {
        let (a, c, g) = sample_gamma0();
        let mid = g.sigma.len() / 2;
        assert_eq!(g.sigma[mid], 0.0);
        assert_eq!(g.beta[mid], 0.0);
        assert_eq!(g.kappa[mid], c.kappa0);
        let rho3 = rho_roots()[2];
        assert!((g.beta[0] - rho3).abs() < 1e-10);
        assert!((g.beta[g.beta.len() - 1] + rho3).abs() < 1e-10);
        // Ends sit within the analytic tail deficit of the asymptotic values.
        assert!((g.w2[0] - a.wl.1).abs() <= g.tail_mass * 1.000_001);
        assert!((g.w2[g.w2.len() - 1] - a.wr.1).abs() <= g.tail_mass * 1.000_001);
        assert!(g.kappa[0] < c.kappa0 * 4e-3 && g.kappa[g.kappa.len() - 1] < c.kappa0 * 4e-3);
    }

    #[test]
    fn gamma0_w2_drop_is_e0() {
        let (a, _, g) = sample_gamma0();
        assert_abs_diff_eq!(g.total_w2_drop(), a.e0, epsilon = 1e-10);
    }

    #[test]
    fn gamma0_peak_matches_omega0() {
        let (_, c, g) = sample_gamma0();
        let (peak, arg) = g.max_beta_kappa();
        assert_abs_diff_eq!(peak, c.omega0, epsilon = 1e-8);
        // The peak sits where iota1 = 1 (the derivative of beta*kappa is
        // kappa0 iota2 (iota1^2 - 1)).
        assert!((table().iota1_at(arg) - 1.0).abs() < 1e-4);
        // Grid-search oracle on a 50x finer mesh near the peak.
        let t = table();
        let mut oracle = f64::NEG_INFINITY;
        let mut s = arg - 0.1;
        while s <= arg + 0.1 {
            oracle = oracle.max(c.kappa0 * t.iota1_at(s) * t.iota2_at(s));
            s += 1e-5;
        }
        assert_abs_diff_eq!(peak, oracle, epsilon = 1e-8);
        // By beta-oddness the minimum mirrors the maximum.
        let min = g
            .beta
            .iter()
            .zip(&g.kappa)
            .map(|(b, k)| b * k)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(min, -c.omega0, epsilon = 1e-8);
    }

    #[test]
    fn gamma0_symmetry_and_monotonicity() {
        let (_, _, g) = sample_gamma0();
        let n = g.sigma.len();
        for i in 0..n {
            let j = n - 1 - i;
            assert!((g.beta[i] + g.beta[j]).abs() < 1e-8, "beta must be odd");
            assert!((g.kappa[i] - g.kappa[j]).abs() < 1e-8, "kappa must be even");
        }
        for w in g.w2.windows(2) {
            assert!(w[1] < w[0], "w2 must strictly decrease");
        }
        for (i, &k) in g.kappa.iter().enumerate() {
            if i != 0 && i != n - 1 {
                assert!(k > 0.0);
            }
        }
    }

    #[test]
    fn csv_dumps_have_expected_shape() {
        let t = table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sigma,iota1,iota2,iota3");
        assert_eq!(text.lines().count(), t.grid.len() + 1);
        assert!(!text.contains('\r'));

        let (_, _, g) = sample_gamma0();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "sigma,beta,kappa,w2");
        assert_eq!(text.lines().count(), g.sigma.len() + 1);
    }
}
