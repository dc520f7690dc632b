//! Principal periodic eigenvalues by power iteration on the period map.
//!
//! The generalized principal eigenvalue λ₁,z of the shifted operator is the
//! Floquet exponent of the linear evolution `∂_t v = G(t) v` built in
//! [`crate::grid`]: solutions scale by `ρ = e^{−λT}` per period, so the
//! dominant growth factor of the one-period (monodromy) map gives
//! `λ = −ln ρ / T`. The dominant eigenpair is found by power iteration with
//! max-entry normalization, which converges by Krein–Rutman positivity of
//! the period map on the cone of nonnegative fields.

use std::sync::Arc;

use crate::error::{KppError, Result};
use crate::grid::{
    apply_with_tables, cfl_dt, BoundaryKind, DiscreteOperator, Grid, OperatorTables, StateField,
};
use crate::model::ModelSpec;

/// Result of one principal-eigenvalue solve.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// The eigenvalue λ₁,z (or λ₁,Dir for box domains).
    pub lambda: f64,
    /// Dominant growth factor of the period map, ρ = e^{−λT}.
    pub growth_factor: f64,
    /// Eigenfunction sample at t = 0, max entry normalized to exactly 1.
    pub eigenfunction: StateField,
    /// |Δ ln ρ| between the last two iterations.
    pub residual: f64,
    /// Number of period maps applied.
    pub iterations: usize,
}

/// Default power-iteration tolerance on |Δ ln ρ|.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;
/// Default power-iteration cap for periodic cells.
pub const DEFAULT_EIG_MAX_ITER: usize = 500;
/// Iteration cap for Dirichlet boxes: the spectral gap closes like
/// (π/R)² as the box grows, so large R needs far more periods.
pub const DIRICHLET_MAX_ITER: usize = 5000;
/// CFL safety factor used when sizing the internal period sub-steps.
pub const MONODROMY_CFL_SAFETY: f64 = 0.4;

/// Budget for precomputing the per-step coefficient tables of one period
/// (time-dependent coefficients only).
const TABLE_BUDGET_BYTES: usize = 64 << 20;

/// One-period integrator: fixes the sub-step count from the CFL bound so
/// that `steps · dt = T` exactly, and (for time-dependent coefficients
/// within budget) precomputes the stage tables once so repeated
/// applications during power iteration pay no resampling cost.
pub struct Monodromy<'a> {
    pub op: DiscreteOperator<'a>,
    pub steps: usize,
    pub dt: f64,
    tables: Option<Vec<Arc<OperatorTables>>>,
}

impl<'a> Monodromy<'a> {
    pub fn new(spec: &'a ModelSpec, grid: &'a Grid, z: &[f64], bc: BoundaryKind) -> Result<Self> {
        let op = DiscreteOperator::new(spec, grid, z, bc)?;
        let bound = cfl_dt(spec, grid, z, MONODROMY_CFL_SAFETY)?;
        let steps = (spec.period_t / bound).ceil().max(1.0) as usize;
        let dt = spec.period_t / steps as f64;
        let mut mono = Monodromy {
            op,
            steps,
            dt,
            tables: None,
        };
        if !spec.time_independent() {
            let cells = grid.cell_count();
            let nc = spec.n_comp;
            let n = spec.dim;
            let per_table = cells * nc * (2 * n * n + 3 * n + 2 * nc + 2) * 8;
            if per_table.saturating_mul(steps + 1) <= TABLE_BUDGET_BYTES {
                let mut tabs = Vec::with_capacity(steps + 1);
                for k in 0..=steps {
                    tabs.push(mono.op.tables_at(k as f64 * dt)?);
                }
                mono.tables = Some(tabs);
            }
        }
        Ok(mono)
    }

    fn table(&self, k: usize) -> Result<Arc<OperatorTables>> {
        match &self.tables {
            Some(tabs) => Ok(tabs[k].clone()),
            None => self.op.tables_at(k as f64 * self.dt),
        }
    }

    /// Integrates u over one period in place. Returns the natural log of
    /// the rescaling applied on the way (power-of-two rescaling guards
    /// against overflow at strongly growing or decaying shifts); the true
    /// solution is `e^{scale} · u`.
    pub fn apply_scaled(&self, u: &mut StateField) -> Result<f64> {
        let spec = self.op.spec;
        let grid = self.op.grid;
        let nc = u.n_comp;
        let mut k1 = StateField::zeros(nc, grid);
        let mut k2 = StateField::zeros(nc, grid);
        let mut mid = StateField::zeros(nc, grid);
        let mut scale = 0.0f64;
        let half = 0.5 * self.dt;
        for k in 0..self.steps {
            let ta = self.table(k)?;
            let tb = self.table(k + 1)?;
            apply_with_tables(spec, grid, &ta, u, &mut k1);
            for ((m, v), a) in mid.data.iter_mut().zip(&u.data).zip(&k1.data) {
                *m = v + self.dt * a;
            }
            apply_with_tables(spec, grid, &tb, &mid, &mut k2);
            for ((v, a), b) in u.data.iter_mut().zip(&k1.data).zip(&k2.data) {
                *v += half * (a + b);
            }
            let sup = u.sup_abs();
            if !sup.is_finite() {
                return Err(KppError::BlowUp {
                    step: k,
                    msg: "monodromy integration produced a non-finite value".into(),
                });
            }
            if sup > 1e240 {
                let f = 2.0f64.powi(-800);
                for v in &mut u.data {
                    *v *= f;
                }
                scale += 800.0 * std::f64::consts::LN_2;
            } else if sup > 0.0 && sup < 1e-240 {
                let f = 2.0f64.powi(800);
                for v in &mut u.data {
                    *v *= f;
                }
                scale -= 800.0 * std::f64::consts::LN_2;
            }
        }
        Ok(scale)
    }
}

/// Solution at time T of `∂_t v = G(t) v` from `v(0) = u`.
pub fn monodromy_apply(
    spec: &ModelSpec,
    grid: &Grid,
    z: &[f64],
    u: &StateField,
    bc: BoundaryKind,
) -> Result<StateField> {
    let mono = Monodromy::new(spec, grid, z, bc)?;
    let mut v = u.clone();
    let scale = mono.apply_scaled(&mut v)?;
    if scale != 0.0 {
        let f = scale.exp();
        for x in &mut v.data {
            *x *= f;
        }
    }
    Ok(v)
}

/// Aitken Δ² extrapolation of the last three iterates when they are
/// strictly monotone (classic acceleration of a geometric tail).
fn aitken(x0: f64, x1: f64, x2: f64) -> Option<f64> {
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    if d1 == 0.0 || d2 == 0.0 || (d1 > 0.0) != (d2 > 0.0) {
        return None;
    }
    let denom = d2 - d1;
    if denom.abs() <= 1e-14 * (1.0 + x2.abs()) {
        return None;
    }
    Some(x2 - d2 * d2 / denom)
}

fn power_iteration(
    mono: &Monodromy,
    start: StateField,
    period_t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EigResult> {
    let mut u = start;
    let mut history: Vec<f64> = Vec::with_capacity(3);
    let mut prev: Option<f64> = None;
    for k in 1..=max_iter {
        let scale = mono.apply_scaled(&mut u)?;
        let m = u.max();
        if !(m > 0.0) || !m.is_finite() {
            return Err(KppError::Precondition(format!(
                "power iterate lost positivity at iteration {k} (max = {m}); \
                 the period map does not preserve the positive cone here"
            )));
        }
        let ln_rho = m.ln() + scale;
        for v in &mut u.data {
            *v /= m;
        }
        if history.len() == 3 {
            history.remove(0);
        }
        history.push(ln_rho);
        if let Some(p) = prev {
            let res = (ln_rho - p).abs();
            if res <= tol {
                let reported = if history.len() == 3 {
                    aitken(history[0], history[1], history[2]).unwrap_or(ln_rho)
                } else {
                    ln_rho
                };
                return Ok(EigResult {
                    lambda: -reported / period_t,
                    growth_factor: reported.exp(),
                    eigenfunction: u,
                    residual: res,
                    iterations: k,
                });
            }
        }
        prev = Some(ln_rho);
    }
    let rho_last = history.last().copied().unwrap_or(f64::NAN).exp();
    let rho_prev = if history.len() >= 2 {
        history[history.len() - 2].exp()
    } else {
        f64::NAN
    };
    Err(KppError::NonConvergence {
        max_iter,
        rho_prev,
        rho_last,
    })
}

/// λ₁,z on a periodic cell by power iteration from u ≡ 1 with max-entry
/// normalization; converged when |Δ ln ρ| ≤ tol, with Aitken extrapolation
/// of the reported value.
pub fn principal_eigenvalue(
    spec: &ModelSpec,
    grid: &Grid,
    z: &[f64],
    tol: f64,
    max_iter: usize,
    bc: BoundaryKind,
) -> Result<EigResult> {
    let mono = Monodromy::new(spec, grid, z, bc)?;
    let start = StateField::constant(spec.n_comp, grid, 1.0);
    power_iteration(&mono, start, spec.period_t, tol, max_iter)
}

/// λ₁,Dir of the box [−R, R]ⁿ (Dirichlet-zero boundary, z = 0) with
/// `resolution` interior points per axis.
///
/// The iteration starts from the taper ∏_α cos(π x_α / (2R)) rather than
/// u ≡ 1: a constant start on a wide box only feels the boundary after the
/// deficit has diffused inward, so the interior growth rate stalls on a
/// false plateau at the whole-space value and the |Δ ln ρ| stop fires long
/// before the true Dirichlet mode emerges. The taper is positive inside,
/// vanishes at the boundary, and for constant coefficients is already the
/// discrete principal mode, so no plateau forms.
pub fn dirichlet_principal_eigenvalue(
    spec: &ModelSpec,
    r: f64,
    resolution: usize,
    tol: f64,
) -> Result<EigResult> {
    let grid = Grid::truncated_box(spec.dim, r, resolution)?;
    let z = vec![0.0; spec.dim];
    let mono = Monodromy::new(spec, &grid, &z, BoundaryKind::Dirichlet)?;
    let half_k = std::f64::consts::PI / (2.0 * r);
    let start = StateField::from_fn(spec.n_comp, &grid, |_, x| {
        x.iter().map(|&xa| (half_k * xa).cos()).product()
    });
    power_iteration(&mono, start, spec.period_t, tol, DIRICHLET_MAX_ITER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(d: f64, q: f64, r: f64) -> ModelSpec {
        let text = format!(
            r#"{{"N":1,"n":1,"T":1,"L":[1],"A":["{d}"],"q":["{q}"],"Lmat":[["{r}"]],"Cmat":[["1"]]}}"#
        );
        ModelSpec::from_json_str(&text).unwrap()
    }

    fn eig(spec: &ModelSpec, cells: usize, z: f64) -> EigResult {
        let grid = Grid::periodic_cell(spec, &[cells]).unwrap();
        principal_eigenvalue(spec, &grid, &[z], 1e-10, 500, BoundaryKind::Periodic).unwrap()
    }

    #[test]
    fn scalar_advection_dispersion_values() {
        // d = q = 1, r = 1/8: λ₁,z = z(1−z) − 1/8.
        let spec = scalar_model(1.0, 1.0, 0.125);
        for (z, want) in [(0.5, 0.125), (0.0, -0.125), (1.5, -0.875)] {
            let got = eig(&spec, 16, z).lambda;
            assert!((got - want).abs() < 1e-6, "z = {z}: {got} vs {want}");
        }
    }

    #[test]
    fn pure_diffusion_gives_minus_z_squared() {
        let spec = scalar_model(1.0, 0.0, 0.0);
        let got = eig(&spec, 16, 0.7).lambda;
        assert!((got + 0.49).abs() < 1e-6, "{got}");
    }

    #[test]
    fn two_component_perron_zero() {
        let text = r#"{"N":2,"n":1,"T":1,"L":[1],"A":["1","2"],"q":["0","0"],
            "Lmat":[["-1","1"],["1","-1"]],"Cmat":[["1","1"],["1","1"]]}"#;
        let spec = ModelSpec::from_json_str(text).unwrap();
        let grid = Grid::periodic_cell(&spec, &[16]).unwrap();
        let r =
            principal_eigenvalue(&spec, &grid, &[0.0], 1e-10, 500, BoundaryKind::Periodic).unwrap();
        assert!(r.lambda.abs() < 1e-6, "{}", r.lambda);
        // Perron eigenvector of [[−1,1],[1,−1]] is (1,1).
        for v in &r.eigenfunction.data {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn monodromy_examples() {
        // 𝐋 = 0: constants are invariant.
        let spec0 = scalar_model(1.0, 0.0, 0.0);
        let grid = Grid::periodic_cell(&spec0, &[16]).unwrap();
        let u = StateField::constant(1, &grid, 1.0);
        let v = monodromy_apply(&spec0, &grid, &[0.0], &u, BoundaryKind::Periodic).unwrap();
        for x in &v.data {
            assert_eq!(*x, 1.0);
        }
        // Constant r: growth e^{rT} to second order.
        let spec_r = scalar_model(1.0, 0.0, 0.5);
        let v = monodromy_apply(&spec_r, &grid, &[0.0], &u, BoundaryKind::Periodic).unwrap();
        for x in &v.data {
            assert!((x - 0.5f64.exp()).abs() < 1e-6, "{x}");
        }
        // Strict positivity from a half-supported start.
        let w = StateField::from_fn(1, &grid, |_, x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let v = monodromy_apply(&spec0, &grid, &[0.0], &w, BoundaryKind::Periodic).unwrap();
        assert!(v.min() > 0.0);
    }

    #[test]
    fn defining_identity_residual() {
        let spec = scalar_model(1.0, 1.0, 0.125);
        let grid = Grid::periodic_cell(&spec, &[32]).unwrap();
        let r = principal_eigenvalue(&spec, &grid, &[0.25], 1e-10, 500, BoundaryKind::Periodic)
            .unwrap();
        let v = monodromy_apply(
            &spec,
            &grid,
            &[0.25],
            &r.eigenfunction,
            BoundaryKind::Periodic,
        )
        .unwrap();
        let factor = (-r.lambda * spec.period_t).exp();
        let mut worst = 0.0f64;
        for (a, b) in v.data.iter().zip(&r.eigenfunction.data) {
            worst = worst.max((a - factor * b).abs());
        }
        assert!(worst <= 10.0 * 1e-10f64.sqrt(), "identity residual {worst}");
    }

    #[test]
    fn time_periodic_rate_averages() {
        // ∂_t u = (1 + 0.5 sin(2πt)) u on constants: ρ = e^{∫r} = e^1.
        let text = r#"{"N":1,"n":1,"T":1,"L":[1],"A":["1"],"q":["0"],
            "Lmat":[["1+0.5*sin(2*pi*t/T)"]],"Cmat":[["1"]]}"#;
        let spec = ModelSpec::from_json_str(text).unwrap();
        let grid = Grid::periodic_cell(&spec, &[16]).unwrap();
        let r =
            principal_eigenvalue(&spec, &grid, &[0.0], 1e-10, 500, BoundaryKind::Periodic).unwrap();
        assert!((r.lambda + 1.0).abs() < 1e-5, "{}", r.lambda);
    }

    #[test]
    fn dirichlet_matches_discrete_sine_mode() {
        // Scalar homogeneous on (−R, R): the discrete principal eigenvalue
        // is d(2 − 2cos(kh))/h² − r with k = π/(2R).
        let spec = scalar_model(1.0, 0.0, 1.0);
        let (r_box, m) = (2.0, 31);
        let res = dirichlet_principal_eigenvalue(&spec, r_box, m, 1e-10).unwrap();
        let h = 2.0 * r_box / (m + 1) as f64;
        let k = std::f64::consts::PI / (2.0 * r_box);
        let want = (2.0 - 2.0 * (k * h).cos()) / (h * h) - 1.0;
        assert!((res.lambda - want).abs() < 5e-7, "{} vs {want}", res.lambda);
        assert!(res.eigenfunction.min() > 0.0);
        assert_eq!(res.eigenfunction.max(), 1.0);
    }

    #[test]
    fn dirichlet_decreasing_in_radius() {
        let spec = scalar_model(1.0, 0.0, 1.0);
        let l2 = dirichlet_principal_eigenvalue(&spec, 2.0, 31, 1e-9)
            .unwrap()
            .lambda;
        let l4 = dirichlet_principal_eigenvalue(&spec, 4.0, 63, 1e-9)
            .unwrap()
            .lambda;
        let l8 = dirichlet_principal_eigenvalue(&spec, 8.0, 63, 1e-9)
            .unwrap()
            .lambda;
        assert!(l2 > l4 && l4 > l8, "{l2} {l4} {l8}");
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let spec = scalar_model(1.0, 1.0, 0.125);
        let grid = Grid::periodic_cell(&spec, &[32]).unwrap();
        let a =
            principal_eigenvalue(&spec, &grid, &[0.3], 1e-10, 500, BoundaryKind::Periodic).unwrap();
        let b =
            principal_eigenvalue(&spec, &grid, &[0.3], 1e-10, 500, BoundaryKind::Periodic).unwrap();
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
        assert_eq!(a.eigenfunction.data, b.eigenfunction.data);
    }

    #[test]
    fn iteration_cap_reports_last_growth_factors() {
        let text = r#"{"N":1,"n":1,"T":1,"L":[1],"A":["1"],"q":["0"],
            "Lmat":[["1+0.5*cos(2*pi*x1/L1)"]],"Cmat":[["1"]]}"#;
        let spec = ModelSpec::from_json_str(text).unwrap();
        let grid = Grid::periodic_cell(&spec, &[32]).unwrap();
        match principal_eigenvalue(&spec, &grid, &[0.0], 1e-12, 2, BoundaryKind::Periodic) {
            Err(KppError::NonConvergence {
                max_iter,
                rho_prev,
                rho_last,
            }) => {
                assert_eq!(max_iter, 2);
                assert!(rho_prev.is_finite() && rho_last.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn strong_decay_is_rescaled_not_underflowed() {
        // λ = z² at 𝐋 = 0, q = 0 grows like e^{z²} per period; z large
        // exercises the power-of-two rescaling.
        let spec = scalar_model(1.0, 0.0, 0.0);
        let grid = Grid::periodic_cell(&spec, &[8]).unwrap();
        let r =
            principal_eigenvalue(&spec, &grid, &[30.0], 1e-9, 500, BoundaryKind::Periodic).unwrap();
        // Step sizing is reaction-limited here (x = |G|·dt ≈ 0.24), so the
        // second-order time error is ≈ x²/6 ≈ 1% relative; the point of this
        // test is that the answer survives e^{±900t} without overflowing.
        assert!((r.lambda + 900.0).abs() < 900.0 * 2e-2, "{}", r.lambda);
    }
}
