//! Direct simulation of the nonlinear Cauchy problem and its diagnostics.
//!
//! Everything here runs the full semilinear dynamics `∂_t u = G(t)u + R(u)`
//! on truncated boxes (Dirichlet-zero emulation of ℝⁿ) or periodic cells:
//! long-time regime classification and its empirical confirmation, front
//! tracking and speed fits, the positive periodic orbit reached from the
//! carrying-capacity start, ordered-pair comparison checks for the
//! cooperative surrogate reactions, and window-ratio / component-ratio
//! diagnostics.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KppError, Result};
use crate::floquet::principal_eigenvalue;
use crate::grid::{
    cfl_dt, step_semilinear_with, BoundaryKind, DiscreteOperator, Grid, GridKind, Reaction,
    StateField,
};
use crate::model::{validate_assumptions, ModelSpec};
use crate::speeds::{lambda_max, lambda_prime, DEFAULT_LAMBDA_MAX_TOL};

/// Sampling density handed to [`validate_assumptions`] when a simulation
/// needs coefficient extrema (carrying capacity, reaction slopes).
const REPORT_SAMPLES: usize = 24;
/// Eigenvalue classifications treat |λ| below this as "at zero".
pub const TOL_ZERO: f64 = 1e-6;
/// Cells kept clear between a tracked level set and the domain boundary.
const FRONT_MARGIN_CELLS: usize = 5;

// ---------------------------------------------------------------------------
// Initial conditions
// ---------------------------------------------------------------------------

/// Initial data families for the Cauchy problem. All realize nonnegative,
/// bounded fields; every component gets the same profile except `custom`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Quadratic bump `height·max(0, 1 − |x−center|²/radius²)`, vanishing
    /// outside the stated ball.
    Compact {
        center: Vec<f64>,
        radius: f64,
        height: f64,
    },
    /// `min(C⁻¹ e^{z·x}, max(1, C⁻¹ e^B))`: exponentially decaying where
    /// z·x → −∞, capped beyond z·x = B.
    Exponential {
        z: Vec<f64>,
        #[serde(rename = "C")]
        c_big: f64,
        #[serde(rename = "B", default)]
        b: f64,
    },
    Uniform {
        height: f64,
    },
    /// One expression per component, evaluated at t = 0.
    Custom {
        exprs: Vec<String>,
    },
}

impl InitialCondition {
    pub fn realize(&self, spec: &ModelSpec, grid: &Grid) -> Result<StateField> {
        let n = spec.dim;
        let mut field = match self {
            InitialCondition::Compact {
                center,
                radius,
                height,
            } => {
                if center.len() != n {
                    return Err(KppError::Model(format!(
                        "compact center has {} components, model dimension is {n}",
                        center.len()
                    )));
                }
                if !(*radius > 0.0) || !(*height >= 0.0) {
                    return Err(KppError::Model(
                        "compact initial data needs radius > 0 and height >= 0".into(),
                    ));
                }
                StateField::from_fn(spec.n_comp, grid, |_, x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                    height * (1.0 - r2 / (radius * radius)).max(0.0)
                })
            }
            InitialCondition::Exponential { z, c_big, b } => {
                if z.len() != n {
                    return Err(KppError::Model(format!(
                        "exponential decay vector has {} components, model dimension is {n}",
                        z.len()
                    )));
                }
                if !(*c_big > 0.0) {
                    return Err(KppError::Model(
                        "exponential initial data needs C > 0".into(),
                    ));
                }
                let cap = (b.exp() / c_big).max(1.0);
                StateField::from_fn(spec.n_comp, grid, |_, x| {
                    let zx: f64 = x.iter().zip(z).map(|(a, zc)| a * zc).sum();
                    (zx.exp() / c_big).min(cap)
                })
            }
            InitialCondition::Uniform { height } => {
                if !(*height >= 0.0) {
                    return Err(KppError::Model("uniform height must be >= 0".into()));
                }
                StateField::constant(spec.n_comp, grid, *height)
            }
            InitialCondition::Custom { exprs } => {
                if exprs.len() != spec.n_comp {
                    return Err(KppError::Model(format!(
                        "custom initial data has {} expressions for {} components",
                        exprs.len(),
                        spec.n_comp
                    )));
                }
                let mut compiled = Vec::with_capacity(exprs.len());
                for src in exprs {
                    compiled.push(crate::model::ExprField::parse(src, n, &spec.params)?);
                }
                let mut scratch = Vec::new();
                let mut out = StateField::zeros(spec.n_comp, grid);
                let cells = grid.cell_count();
                let mut x = vec![0.0; n];
                for cell in 0..cells {
                    grid.cell_coords(cell, &mut x);
                    for (i, f) in compiled.iter().enumerate() {
                        let v = f.compiled.eval_with(
                            0.0,
                            &x,
                            spec.period_t,
                            &spec.periods_l,
                            &mut scratch,
                        )?;
                        if !v.is_finite() || v < 0.0 {
                            return Err(KppError::Model(format!(
                                "custom initial data component {} is {v} at x = {x:?}; \
                                 initial data must be finite and nonnegative",
                                i + 1
                            )));
                        }
                        out.data[i * cells + cell] = v;
                    }
                }
                out
            }
        };
        field.nonneg = true;
        Ok(field)
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// A simulated orbit: snapshot times, fields, and solver accounting.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Snapshot times, strictly increasing; `times[0] = 0` holds the
    /// initial condition exactly.
    pub times: Vec<f64>,
    pub snapshots: Vec<StateField>,
    pub grid: Grid,
    /// Step size used throughout.
    pub dt: f64,
    /// Total magnitude clipped at zero over the whole run.
    pub clipped: f64,
    /// (t, sup) after every step.
    pub sup_history: Vec<(f64, f64)>,
    /// Largest sup over the run (including t = 0).
    pub max_sup: f64,
    /// Absorbing bound `initial sup + K_est + 1e-3` the run is expected
    /// to respect (infinite when the model has no finite K_est).
    pub absorbing_bound: f64,
}

impl Trajectory {
    /// True when the sup-norm history stayed within the absorbing bound.
    pub fn absorbing_ok(&self) -> bool {
        self.max_sup <= self.absorbing_bound
    }

    /// Max over components of the snapshot's interior cells (5-cell
    /// margin from Dirichlet boundaries; every cell on periodic grids).
    pub fn interior_sup(&self, k: usize) -> f64 {
        interior_max(&self.snapshots[k], &self.grid)
    }

    /// Writes the `KPPT` binary container: header, grid geometry, times
    /// (the snapshot index), per-step sup history, then raw field data.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"KPPT")?;
        w.write_all(&1u32.to_le_bytes())?;
        let (kind, r) = match self.grid.kind {
            GridKind::PeriodicCell => (0u32, 0.0),
            GridKind::TruncatedBox { r } => (1u32, r),
        };
        w.write_all(&kind.to_le_bytes())?;
        w.write_all(&(self.grid.m.len() as u32).to_le_bytes())?;
        for m in &self.grid.m {
            w.write_all(&(*m as u32).to_le_bytes())?;
        }
        for h in &self.grid.h {
            w.write_all(&h.to_le_bytes())?;
        }
        for l in &self.grid.lens {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&r.to_le_bytes())?;
        let nc = self.snapshots.first().map_or(0, |s| s.n_comp);
        w.write_all(&(nc as u32).to_le_bytes())?;
        w.write_all(&(self.snapshots.len() as u32).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.clipped.to_le_bytes())?;
        w.write_all(&self.max_sup.to_le_bytes())?;
        w.write_all(&self.absorbing_bound.to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        w.write_all(&(self.sup_history.len() as u32).to_le_bytes())?;
        for (t, s) in &self.sup_history {
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&s.to_le_bytes())?;
        }
        for snap in &self.snapshots {
            for v in &snap.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Trajectory> {
        fn ru32(r: &mut impl Read) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn rf64(r: &mut impl Read) -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"KPPT" {
            return Err(KppError::Model(
                "not a trajectory container (bad magic)".into(),
            ));
        }
        let version = ru32(r)?;
        if version != 1 {
            return Err(KppError::Model(format!(
                "unsupported trajectory container version {version}"
            )));
        }
        let kind = ru32(r)?;
        let dim = ru32(r)? as usize;
        let mut m = Vec::with_capacity(dim);
        for _ in 0..dim {
            m.push(ru32(r)? as usize);
        }
        let mut h = Vec::with_capacity(dim);
        for _ in 0..dim {
            h.push(rf64(r)?);
        }
        let mut lens = Vec::with_capacity(dim);
        for _ in 0..dim {
            lens.push(rf64(r)?);
        }
        let r_box = rf64(r)?;
        let grid = Grid {
            kind: if kind == 0 {
                GridKind::PeriodicCell
            } else {
                GridKind::TruncatedBox { r: r_box }
            },
            m,
            h,
            lens,
        };
        let nc = ru32(r)? as usize;
        let count = ru32(r)? as usize;
        let dt = rf64(r)?;
        let clipped = rf64(r)?;
        let max_sup = rf64(r)?;
        let absorbing_bound = rf64(r)?;
        let mut times = Vec::with_capacity(count);
        for _ in 0..count {
            times.push(rf64(r)?);
        }
        let hist_len = ru32(r)? as usize;
        let mut sup_history = Vec::with_capacity(hist_len);
        for _ in 0..hist_len {
            let t = rf64(r)?;
            let s = rf64(r)?;
            sup_history.push((t, s));
        }
        let cells = grid.cell_count();
        let mut snapshots = Vec::with_capacity(count);
        for _ in 0..count {
            let mut f = StateField::zeros(nc, &grid);
            for v in f.data.iter_mut() {
                *v = rf64(r)?;
            }
            f.nonneg = true;
            snapshots.push(f);
        }
        if snapshots.iter().any(|s| s.cell_count() != cells) {
            return Err(KppError::Model("trajectory container truncated".into()));
        }
        Ok(Trajectory {
            times,
            snapshots,
            grid,
            dt,
            clipped,
            sup_history,
            max_sup,
            absorbing_bound,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trajectory> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Trajectory::read_from(&mut r)
    }

    /// Per-snapshot summary CSV: time, sup, min over the observation ball
    /// B(0, ball_radius), and (when a direction is given and a front is
    /// trackable) the level-set position along it.
    pub fn summary_csv(&self, ball_radius: f64, front: Option<(&[f64], f64)>) -> String {
        let positions = front.and_then(|(e, level)| front_positions(self, e, level).ok());
        let mut out = String::from("t,sup,min_ball,front_position\n");
        for (k, t) in self.times.iter().enumerate() {
            let (lo, _) = ball_extrema(&self.snapshots[k], &self.grid, ball_radius);
            let pos = positions
                .as_ref()
                .map(|p| format!("{:?}", p[k]))
                .unwrap_or_default();
            out.push_str(&format!(
                "{t:?},{:?},{lo:?},{pos}\n",
                self.snapshots[k].max()
            ));
        }
        out
    }
}

/// Max over components/cells at least [`FRONT_MARGIN_CELLS`] away from
/// every Dirichlet boundary (all cells on periodic grids or tiny boxes).
fn interior_max(field: &StateField, grid: &Grid) -> f64 {
    if grid.is_periodic() || grid.m.iter().any(|m| *m <= 2 * FRONT_MARGIN_CELLS) {
        return field.max();
    }
    let cells = grid.cell_count();
    let mut best = f64::NEG_INFINITY;
    for cell in 0..cells {
        let idx = grid.cell_multi(cell);
        let inside = idx
            .iter()
            .zip(&grid.m)
            .all(|(j, m)| *j >= FRONT_MARGIN_CELLS && *j < m - FRONT_MARGIN_CELLS);
        if inside {
            for i in 0..field.n_comp {
                best = best.max(field.data[i * cells + cell]);
            }
        }
    }
    best
}

/// Min/max over all components of the cells whose center lies in the
/// Euclidean ball B(0, radius) (distances wrap on periodic grids).
pub fn ball_extrema(field: &StateField, grid: &Grid, radius: f64) -> (f64, f64) {
    let cells = grid.cell_count();
    let mut x = vec![0.0; grid.dim()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for cell in 0..cells {
        grid.cell_coords(cell, &mut x);
        let d2: f64 = x
            .iter()
            .zip(&grid.lens)
            .map(|(xa, l)| {
                let c = if grid.is_periodic() {
                    xa.min(l - xa)
                } else {
                    xa.abs()
                };
                c * c
            })
            .sum();
        if d2 <= radius * radius {
            for i in 0..field.n_comp {
                let v = field.data[i * cells + cell];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Runs the semilinear dynamics from an already-realized field. Step size
/// combines the linear CFL bound with the reaction slope at the expected
/// amplitude; snapshots land on exact multiples of `snapshot_every`.
pub fn simulate_field(
    spec: &ModelSpec,
    grid: &Grid,
    u0: StateField,
    t_end: f64,
    snapshot_every: f64,
    reaction: Reaction,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !(snapshot_every > 0.0) {
        return Err(KppError::Precondition(
            "simulate needs t_end > 0 and snapshot_every > 0".into(),
        ));
    }
    let report = validate_assumptions(spec, REPORT_SAMPLES)?;
    let c_max = report
        .cmat_upper
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(*v));
    let k_est = report.k_absorbing;
    let m0 = u0.max();
    let absorbing_bound = m0 + k_est + 1e-3;
    let blow_cap = if k_est.is_finite() {
        10.0 * (m0 + k_est)
    } else {
        f64::INFINITY
    };
    let amp = if k_est.is_finite() {
        1.1 * (m0 + k_est)
    } else {
        2.0 * m0 + 1.0
    };
    let slope = reaction.slope_bound(spec, c_max, amp);
    let z = vec![0.0; spec.dim];
    let mut dt_raw = cfl_dt(spec, grid, &z, 0.4)?;
    if slope > 0.0 {
        dt_raw = dt_raw.min(0.4 / slope);
    }
    let steps_per_snap = (snapshot_every / dt_raw).ceil().max(1.0) as usize;
    let dt = snapshot_every / steps_per_snap as f64;
    let n_snaps = (t_end / snapshot_every - 1e-9).ceil().max(1.0) as usize;

    let op = DiscreteOperator::new(spec, grid, &z, grid.boundary())?;
    let mut u = u0;
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![u.clone()],
        grid: grid.clone(),
        dt,
        clipped: 0.0,
        sup_history: vec![(0.0, m0)],
        max_sup: m0,
        absorbing_bound,
    };
    let mut step_no = 0usize;
    for _s in 0..n_snaps {
        for _k in 0..steps_per_snap {
            let t = step_no as f64 * dt;
            let step = step_semilinear_with(&op, &u, t, dt, reaction)?;
            u = step.field;
            traj.clipped += step.clipped;
            step_no += 1;
            let sup = u.max();
            traj.sup_history.push((step_no as f64 * dt, sup));
            traj.max_sup = traj.max_sup.max(sup);
            if sup > blow_cap {
                return Err(KppError::BlowUp {
                    step: step_no,
                    msg: format!(
                        "sup = {sup:.3e} exceeded 10·(initial sup + K_est) = {blow_cap:.3e} \
                         at t = {:.4}; scheme or model bug",
                        step_no as f64 * dt
                    ),
                });
            }
        }
        traj.times.push(step_no as f64 * dt);
        traj.snapshots.push(u.clone());
    }
    Ok(traj)
}

/// Realizes the initial condition on the grid and runs [`simulate_field`].
pub fn simulate(
    spec: &ModelSpec,
    grid: &Grid,
    ini: &InitialCondition,
    t_end: f64,
    snapshot_every: f64,
    reaction: Reaction,
) -> Result<Trajectory> {
    let u0 = ini.realize(spec, grid)?;
    simulate_field(spec, grid, u0, t_end, snapshot_every, reaction)
}

// ---------------------------------------------------------------------------
// Regime classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Extinction,
    Persistence,
    Conditional,
}

/// One empirical observation backing a spectral verdict.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalCheck {
    pub what: String,
    pub observed: f64,
    pub threshold: f64,
    /// True when `observed` is on the expected side of `threshold`.
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRecord {
    pub checks: Vec<EmpiricalCheck>,
    pub confirmed: bool,
}

/// Spectral long-time verdict with the eigenvalues that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    pub lambda1: f64,
    pub lambda1_prime: f64,
    pub z_max: Vec<f64>,
    /// Set when either eigenvalue lies within `TOL_ZERO` of zero, where
    /// the discrete sign is not trustworthy.
    pub near_zero: bool,
    pub empirical: Option<EmpiricalRecord>,
}

/// Classifies the long-time regime from the signs of λ₁′ and λ₁:
/// λ₁′ ≥ 0 → extinction; λ₁ < 0 → persistence from any nonzero data;
/// λ₁′ < 0 ≤ λ₁ → persistence conditional on the decay of the data.
pub fn classify_regime(spec: &ModelSpec, cells: usize) -> Result<RegimeVerdict> {
    let lp = lambda_prime(spec, cells)?;
    let (l1, z_max) = lambda_max(spec, DEFAULT_LAMBDA_MAX_TOL, cells)?;
    let regime = if lp >= TOL_ZERO {
        Regime::Extinction
    } else if l1 <= -TOL_ZERO {
        Regime::Persistence
    } else if lp < 0.0 {
        Regime::Conditional
    } else {
        Regime::Extinction
    };
    Ok(RegimeVerdict {
        regime,
        lambda1: l1,
        lambda1_prime: lp,
        z_max,
        near_zero: lp.abs() < TOL_ZERO || l1.abs() < TOL_ZERO,
        empirical: None,
    })
}

/// Runs the desk-scale simulation matching the verdict and attaches the
/// outcome. Costs seconds to minutes, hence separate from the spectral
/// classification.
pub fn confirm_empirically(
    spec: &ModelSpec,
    verdict: &mut RegimeVerdict,
    cells: usize,
) -> Result<()> {
    let mut checks = Vec::new();
    match verdict.regime {
        Regime::Extinction => {
            let grid = Grid::truncated_box(spec.dim, 20.0, box_resolution(spec.dim, 20.0))?;
            let ini = InitialCondition::Compact {
                center: vec![0.0; spec.dim],
                radius: 5.0,
                height: 1.0,
            };
            let traj = simulate(spec, &grid, &ini, 20.0, 2.0, Reaction::Kpp)?;
            let observed = traj.interior_sup(traj.snapshots.len() - 1);
            checks.push(EmpiricalCheck {
                what: "interior sup at t = 20 (expect < 1e-6)".into(),
                observed,
                threshold: 1e-6,
                ok: observed < 1e-6,
            });
        }
        Regime::Persistence => {
            // Hair trigger: tiny compact data must fill the observation
            // ball up to a fraction of the periodic orbit's minimum.
            let cell_grid = Grid::periodic_cell(spec, &vec![cells.max(8); spec.dim])?;
            let orbit = periodic_entire_solution(spec, &cell_grid, 1e-8, 2000)?;
            let u_star_min = orbit
                .fields
                .iter()
                .map(|f| f.min())
                .fold(f64::INFINITY, f64::min);
            let grid = Grid::truncated_box(spec.dim, 20.0, box_resolution(spec.dim, 20.0))?;
            let ini = InitialCondition::Compact {
                center: vec![0.0; spec.dim],
                radius: 2.0,
                height: 1e-4,
            };
            let traj = simulate(spec, &grid, &ini, 80.0, 8.0, Reaction::Kpp)?;
            let (lo, _) = ball_extrema(&traj.snapshots[traj.snapshots.len() - 1], &grid, 10.0);
            let threshold = 0.1 * u_star_min;
            checks.push(EmpiricalCheck {
                what: "min over B(0,10) at t = 80 from compact data of height 1e-4 \
                       (expect >= 0.1·min u*)"
                    .into(),
                observed: lo,
                threshold,
                ok: lo >= threshold,
            });
        }
        Regime::Conditional => {
            // Bisect the sign change of ζ ↦ λ₁,ζe along the maximizing
            // direction, then probe both sides of it.
            let norm: f64 = verdict.z_max.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(KppError::Precondition(
                    "conditional confirmation needs a nonzero maximizing shift".into(),
                ));
            }
            let e: Vec<f64> = verdict.z_max.iter().map(|v| v / norm).collect();
            let lam = |zeta: f64| -> Result<f64> {
                let z: Vec<f64> = e.iter().map(|c| zeta * c).collect();
                let grid = Grid::periodic_cell(spec, &vec![cells; spec.dim])?;
                Ok(
                    principal_eigenvalue(spec, &grid, &z, 1e-10, 500, BoundaryKind::Periodic)?
                        .lambda,
                )
            };
            let (mut a, mut b) = (0.0, norm);
            for _ in 0..40 {
                let mid = 0.5 * (a + b);
                if lam(mid)? < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let zeta_star = 0.5 * (a + b);
            let z_persist: Vec<f64> = e.iter().map(|c| 0.6 * zeta_star * c).collect();
            let persist =
                conditional_experiment(spec, &z_persist, ConditionalSide::Persist, 80.0, cells)?;
            checks.push(EmpiricalCheck {
                what: format!(
                    "min over B(0,10) at t = 80 from exponential data, z = {z_persist:?} \
                     (expect > 0.01)"
                ),
                observed: persist.observed,
                threshold: 0.01,
                ok: persist.observed > 0.01,
            });
            let extinct = conditional_experiment(
                spec,
                &verdict.z_max,
                ConditionalSide::Extinct,
                80.0,
                cells,
            )?;
            checks.push(EmpiricalCheck {
                what: format!(
                    "max over B(0,10) at t = 80 from exponential data, z = {:?} \
                     (expect < 1e-3)",
                    verdict.z_max
                ),
                observed: extinct.observed,
                threshold: 1e-3,
                ok: extinct.observed < 1e-3,
            });
        }
    }
    let confirmed = checks.iter().all(|c| c.ok);
    verdict.empirical = Some(EmpiricalRecord { checks, confirmed });
    Ok(())
}

/// Resolution giving cell width ≈ 0.25 in one dimension, coarser in two.
fn box_resolution(dim: usize, r: f64) -> usize {
    let h = if dim == 1 { 0.25 } else { 0.5 };
    ((2.0 * r / h).round() as usize).saturating_sub(1).max(3)
}

// ---------------------------------------------------------------------------
// Front tracking
// ---------------------------------------------------------------------------

/// Level-set fit produced by [`measure_front_speed`].
#[derive(Debug, Clone, Serialize)]
pub struct FrontFit {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub level: f64,
    /// Fit window (first and last time used).
    pub window: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

/// Positions of the level set along the ray x = s·e, one per snapshot.
/// The threshold is `level` times the running interior max.
fn front_positions(traj: &Trajectory, e: &[f64], level: f64) -> Result<Vec<f64>> {
    let grid = &traj.grid;
    let r = match grid.kind {
        GridKind::TruncatedBox { r } => r,
        GridKind::PeriodicCell => {
            return Err(KppError::Precondition(
                "front tracking needs a truncated-box trajectory".into(),
            ))
        }
    };
    let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || e.len() != grid.dim() {
        return Err(KppError::Precondition(format!(
            "direction {e:?} is not a usable unit vector for this grid"
        )));
    }
    let e: Vec<f64> = e.iter().map(|v| v / norm).collect();
    let emax = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s_max = r / emax;
    let h_min = grid.h.iter().fold(f64::INFINITY, |m, h| m.min(*h));
    let n_samples = (s_max / h_min).floor() as usize;
    let margin = FRONT_MARGIN_CELLS as f64 * h_min;

    let mut running = 0.0f64;
    let mut positions = Vec::with_capacity(traj.snapshots.len());
    let cells = grid.cell_count();
    for (snap, t) in traj.snapshots.iter().zip(&traj.times) {
        running = running.max(interior_max(snap, grid));
        let thr = level * running;
        let value_at = |s: f64| -> f64 {
            let mut best = f64::NEG_INFINITY;
            let mut cell = 0usize;
            let mut stride = 1usize;
            for (a, (h, m)) in grid.h.iter().zip(&grid.m).enumerate() {
                let x = s * e[a];
                let j = (((x + r) / h - 1.0).round().max(0.0) as usize).min(m - 1);
                cell += j * stride;
                stride *= m;
            }
            for i in 0..snap.n_comp {
                best = best.max(snap.data[i * cells + cell]);
            }
            best
        };
        let mut pos = 0.0;
        let mut found = false;
        for j in (0..=n_samples).rev() {
            let s = j as f64 * h_min;
            let v = value_at(s);
            if v >= thr {
                if j == n_samples {
                    return Err(KppError::Precondition(format!(
                        "domain too small: the level set reaches the boundary \
                         margin at t = {t}"
                    )));
                }
                let s_next = (j + 1) as f64 * h_min;
                let v_next = value_at(s_next);
                pos = if v > v_next {
                    s + h_min * (v - thr) / (v - v_next)
                } else {
                    s
                };
                found = true;
                break;
            }
        }
        if found && pos > s_max - margin {
            return Err(KppError::Precondition(format!(
                "domain too small: the level set is within {FRONT_MARGIN_CELLS} cells \
                 of the boundary at t = {t}"
            )));
        }
        positions.push(if found { pos } else { 0.0 });
    }
    Ok(positions)
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let d = y - (intercept + slope * x);
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Front speed along `e`: tracks the outermost crossing of
/// `level · (running interior max)` per snapshot, then fits a line to the
/// positions over the last half of the snapshots.
pub fn measure_front_speed(traj: &Trajectory, e: &[f64], level: f64) -> Result<(f64, FrontFit)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(KppError::Precondition(format!(
            "tracking level must lie in (0, 1), got {level}"
        )));
    }
    let positions = front_positions(traj, e, level)?;
    let count = positions.len();
    if count < 4 {
        return Err(KppError::Precondition(
            "trajectory too short for a front-speed fit (need at least 4 snapshots)".into(),
        ));
    }
    let k0 = count / 2;
    let xs = &traj.times[k0..];
    let ys = &positions[k0..];
    let (slope, intercept, rms) = linear_fit(xs, ys);
    let fit = FrontFit {
        times: traj.times.clone(),
        positions: positions.clone(),
        level,
        window: (xs[0], *xs.last().unwrap()),
        slope,
        intercept,
        rms_residual: rms,
    };
    Ok((slope, fit))
}

// ---------------------------------------------------------------------------
// Conditional-regime experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalSide {
    Persist,
    Extinct,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalOutcome {
    pub side: ConditionalSide,
    pub z: Vec<f64>,
    pub lambda_z: f64,
    pub lambda1: f64,
    pub lambda1_prime: f64,
    pub t_end: f64,
    pub ball_radius: f64,
    /// Persist side: min over the ball at t_end; extinct side: max.
    pub observed: f64,
}

/// Simulates exponential initial data `min(C⁻¹e^{z·x}, cap)` in the
/// conditional regime and reports the observation-ball extremum at t_end.
/// Persist side requires λ₁,z < 0 and ζ ↦ λ₁,ζz increasing at ζ = 1;
/// extinct side requires λ₁,z ≥ 0.
pub fn conditional_experiment(
    spec: &ModelSpec,
    z: &[f64],
    side: ConditionalSide,
    t_end: f64,
    cells: usize,
) -> Result<ConditionalOutcome> {
    let verdict = classify_regime(spec, cells)?;
    if verdict.regime != Regime::Conditional {
        return Err(KppError::Precondition(format!(
            "conditional experiment needs the conditional regime \
             (lambda1' < 0 <= lambda1); classification here is {:?} \
             with lambda1' = {}, lambda1 = {}",
            verdict.regime, verdict.lambda1_prime, verdict.lambda1
        )));
    }
    let eig = |zv: &[f64]| -> Result<f64> {
        let grid = Grid::periodic_cell(spec, &vec![cells; spec.dim])?;
        Ok(principal_eigenvalue(spec, &grid, zv, 1e-10, 500, BoundaryKind::Periodic)?.lambda)
    };
    let lambda_z = eig(z)?;
    let c_big = match side {
        ConditionalSide::Persist => {
            if lambda_z >= 0.0 {
                return Err(KppError::Precondition(format!(
                    "persist side needs lambda_(1,z) < 0; got {lambda_z} at z = {z:?}"
                )));
            }
            let zp: Vec<f64> = z.iter().map(|v| 1.01 * v).collect();
            let zm: Vec<f64> = z.iter().map(|v| 0.99 * v).collect();
            if eig(&zp)? - eig(&zm)? <= 0.0 {
                return Err(KppError::Precondition(format!(
                    "persist side needs zeta -> lambda_(1,zeta z) increasing at \
                     zeta = 1 (centered difference <= 0 at z = {z:?})"
                )));
            }
            10.0
        }
        ConditionalSide::Extinct => {
            if lambda_z < 0.0 {
                return Err(KppError::Precondition(format!(
                    "extinct side needs lambda_(1,z) >= 0; got {lambda_z} at z = {z:?}"
                )));
            }
            100.0
        }
    };
    let r = if spec.dim == 1 { 100.0 } else { 40.0 };
    let grid = Grid::truncated_box(spec.dim, r, box_resolution(spec.dim, r))?;
    let ini = InitialCondition::Exponential {
        z: z.to_vec(),
        c_big,
        b: 0.0,
    };
    let traj = simulate(spec, &grid, &ini, t_end, t_end / 8.0, Reaction::Kpp)?;
    let (lo, hi) = ball_extrema(&traj.snapshots[traj.snapshots.len() - 1], &grid, 10.0);
    Ok(ConditionalOutcome {
        side,
        z: z.to_vec(),
        lambda_z,
        lambda1: verdict.lambda1,
        lambda1_prime: verdict.lambda1_prime,
        t_end,
        ball_radius: 10.0,
        observed: match side {
            ConditionalSide::Persist => lo,
            ConditionalSide::Extinct => hi,
        },
    })
}

// ---------------------------------------------------------------------------
// Periodic entire solution
// ---------------------------------------------------------------------------

/// A converged space-time periodic orbit sampled over one period.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub times: Vec<f64>,
    pub fields: Vec<StateField>,
    /// Final sup distance between consecutive period maps.
    pub residual: f64,
    /// Periods iterated before convergence.
    pub periods: usize,
}

/// Iterates the nonlinear period map from the carrying-capacity constant
/// `K_est·𝟙` until it fixes (sup distance ≤ tol), then samples the orbit
/// over one period. Requires λ₁′ < 0, the regime with a uniformly
/// positive periodic solution; a converged orbit touching zero is an
/// error, not a result.
pub fn periodic_entire_solution(
    spec: &ModelSpec,
    grid: &Grid,
    tol: f64,
    max_periods: usize,
) -> Result<PeriodicOrbit> {
    if !grid.is_periodic() {
        return Err(KppError::Grid(
            "the periodic entire solution lives on a periodic cell".into(),
        ));
    }
    let z = vec![0.0; spec.dim];
    let lp = principal_eigenvalue(spec, grid, &z, 1e-10, 500, BoundaryKind::Periodic)?.lambda;
    if lp >= 0.0 {
        return Err(KppError::Precondition(format!(
            "a positive periodic entire solution requires lambda1' < 0; got {lp}"
        )));
    }
    let report = validate_assumptions(spec, REPORT_SAMPLES)?;
    if !report.k_absorbing.is_finite() {
        return Err(KppError::Precondition(
            "no finite absorbing bound (competition matrix is not positive); \
             cannot anchor the period-map iteration"
                .into(),
        ));
    }
    let c_max = report
        .cmat_upper
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(*v));
    let height = report.k_absorbing.max(1e-3);
    let slope = Reaction::Kpp.slope_bound(spec, c_max, 1.1 * height);
    let mut dt_raw = cfl_dt(spec, grid, &z, 0.4)?;
    if slope > 0.0 {
        dt_raw = dt_raw.min(0.4 / slope);
    }
    let steps = (spec.period_t / dt_raw).ceil().max(1.0) as usize;
    let dt = spec.period_t / steps as f64;
    let op = DiscreteOperator::new(spec, grid, &z, BoundaryKind::Periodic)?;

    let mut u = StateField::constant(spec.n_comp, grid, height);
    let mut residual = f64::INFINITY;
    let mut periods = 0usize;
    while periods < max_periods {
        let mut v = u.clone();
        for k in 0..steps {
            v = step_semilinear_with(&op, &v, k as f64 * dt, dt, Reaction::Kpp)?.field;
        }
        residual = u
            .data
            .iter()
            .zip(&v.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        u = v;
        periods += 1;
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(KppError::Precondition(format!(
            "period map did not settle within {max_periods} periods \
             (last residual {residual:.3e}, tol {tol:.1e})"
        )));
    }
    // Sample the converged orbit over one period.
    let samples = 16usize.min(steps);
    let mut times = Vec::with_capacity(samples + 1);
    let mut fields = Vec::with_capacity(samples + 1);
    times.push(0.0);
    fields.push(u.clone());
    let mut v = u;
    let mut next_mark = 1usize;
    for k in 0..steps {
        v = step_semilinear_with(&op, &v, k as f64 * dt, dt, Reaction::Kpp)?.field;
        if next_mark <= samples && k + 1 == (next_mark * steps) / samples {
            times.push((k + 1) as f64 * dt);
            fields.push(v.clone());
            next_mark += 1;
        }
    }
    let min_entry = fields.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    if !(min_entry > 0.0) {
        return Err(KppError::Precondition(format!(
            "converged orbit touches zero (min entry {min_entry}); contradicts \
             uniform positivity — check the sign of lambda1' or refine the grid"
        )));
    }
    Ok(PeriodicOrbit {
        times,
        fields,
        residual,
        periods,
    })
}

// ---------------------------------------------------------------------------
// Comparison harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub trials: usize,
    pub seed: u64,
    pub t_end: f64,
    pub steps_per_trial: usize,
    /// Largest positive part of (lower − upper) over all trials, steps,
    /// cells, and components; expected at rounding level.
    pub max_violation: f64,
}

/// Co-evolves seeded random ordered pairs u₀ ≤ v₀ under a cooperative
/// surrogate reaction and reports the worst ordering violation. The full
/// competitive reaction is refused: pairwise ordering is exactly what it
/// does not preserve.
pub fn comparison_harness(
    spec: &ModelSpec,
    reaction: Reaction,
    trials: usize,
    seed: u64,
    t_end: f64,
) -> Result<ComparisonReport> {
    if matches!(reaction, Reaction::Kpp) {
        return Err(KppError::Precondition(
            "the competitive kpp reaction admits no comparison principle; \
             use coop_power, coop_quadratic, or a linear reaction"
                .into(),
        ));
    }
    let grid = Grid::periodic_cell(spec, &vec![16; spec.dim])?;
    let z = vec![0.0; spec.dim];
    let slope = reaction.slope_bound(spec, 0.0, 2.2);
    let mut dt_raw = cfl_dt(spec, &grid, &z, 0.4)?;
    if slope > 0.0 {
        dt_raw = dt_raw.min(0.4 / slope);
    }
    let steps = (t_end / dt_raw).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let op = DiscreteOperator::new(spec, &grid, &z, BoundaryKind::Periodic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut lo = StateField::zeros(spec.n_comp, &grid);
        let mut hi = StateField::zeros(spec.n_comp, &grid);
        for (a, b) in lo.data.iter_mut().zip(hi.data.iter_mut()) {
            let base: f64 = rng.random_range(0.0..1.0);
            let gap: f64 = rng.random_range(0.0..1.0);
            *a = base;
            *b = base + gap;
        }
        for k in 0..steps {
            let t = k as f64 * dt;
            lo = step_semilinear_with(&op, &lo, t, dt, reaction)?.field;
            hi = step_semilinear_with(&op, &hi, t, dt, reaction)?.field;
            for (a, b) in lo.data.iter().zip(&hi.data) {
                worst = worst.max(a - b);
            }
        }
    }
    Ok(ComparisonReport {
        trials,
        seed,
        t_end,
        steps_per_trial: steps,
        max_violation: worst.max(0.0),
    })
}

// ---------------------------------------------------------------------------
// Window-ratio and component-ratio diagnostics
// ---------------------------------------------------------------------------

/// Empirical interior-lower-bound constant: min of the trajectory on the
/// late window [5θ, 6θ] × [−θ/2, θ/2]ⁿ divided by its max on the early
/// window [0, 2θ] × [−θ/2, θ/2]ⁿ. Meaningful for linear cooperative
/// evolutions, where the ratio is scale-invariant.
pub fn harnack_diagnostic(spec: &ModelSpec, traj: &Trajectory, theta: f64) -> Result<f64> {
    let l_max = spec.periods_l.iter().fold(spec.period_t, |m, v| m.max(*v));
    if theta < l_max {
        return Err(KppError::Precondition(format!(
            "theta = {theta} must be at least max(period_t, periods_l) = {l_max}"
        )));
    }
    let t_last = *traj.times.last().unwrap_or(&0.0);
    if t_last < 6.0 * theta {
        return Err(KppError::Precondition(format!(
            "trajectory covers [0, {t_last}], the ratio needs 6·theta = {}",
            6.0 * theta
        )));
    }
    let grid = &traj.grid;
    let cells = grid.cell_count();
    let mut x = vec![0.0; grid.dim()];
    let in_window = |grid: &Grid, x: &[f64]| -> bool {
        x.iter().zip(&grid.lens).all(|(xa, l)| {
            let c = if grid.is_periodic() {
                xa.min(l - xa)
            } else {
                xa.abs()
            };
            c <= theta / 2.0
        })
    };
    let mut early_max = f64::NEG_INFINITY;
    let mut late_min = f64::INFINITY;
    for (snap, t) in traj.snapshots.iter().zip(&traj.times) {
        let early = *t <= 2.0 * theta;
        let late = *t >= 5.0 * theta && *t <= 6.0 * theta;
        if !early && !late {
            continue;
        }
        for cell in 0..cells {
            grid.cell_coords(cell, &mut x);
            if !in_window(grid, &x) {
                continue;
            }
            for i in 0..snap.n_comp {
                let v = snap.data[i * cells + cell];
                if early {
                    early_max = early_max.max(v);
                }
                if late {
                    late_min = late_min.min(v);
                }
            }
        }
    }
    if !(early_max > 0.0) {
        return Err(KppError::Precondition(
            "early window max is not positive; the ratio is meaningless".into(),
        ));
    }
    Ok(late_min / early_max)
}

/// Envelope fit of one component against a power of another.
#[derive(Debug, Clone, Serialize)]
pub struct RatioFit {
    /// Ordered pair: the fit is ln u_j ≈ ln κ + p ln u_i.
    pub comp_i: usize,
    pub comp_j: usize,
    pub p_hat: f64,
    pub kappa_hat: f64,
    /// Fraction of points with u_j > κ̂ u_i^{p̂} (zero by construction of
    /// the envelope, reported for honesty).
    pub violation_fraction: f64,
    pub points: usize,
}

/// Fits the inter-component bound u_j ≤ κ u_i^p over interior points at
/// times ≥ t_min: the exponent comes from least squares in ln–ln space,
/// the constant is the envelope max, and the reported pair is the worst
/// one (largest κ̂). Single-component trajectories are refused.
pub fn component_ratio_diagnostic(traj: &Trajectory, t_min: f64) -> Result<RatioFit> {
    let nc = traj.snapshots.first().map(|s| s.n_comp).unwrap_or(0);
    if nc < 2 {
        return Err(KppError::Precondition(
            "component-ratio diagnostic needs at least two components".into(),
        ));
    }
    let grid = &traj.grid;
    let cells = grid.cell_count();
    let mut logs: Vec<Vec<f64>> = vec![Vec::new(); nc];
    for (snap, t) in traj.snapshots.iter().zip(&traj.times) {
        if *t < t_min {
            continue;
        }
        for cell in 0..cells {
            let idx = grid.cell_multi(cell);
            let interior = grid.is_periodic()
                || idx
                    .iter()
                    .zip(&grid.m)
                    .all(|(j, m)| *j >= FRONT_MARGIN_CELLS && *j < m - FRONT_MARGIN_CELLS);
            if !interior {
                continue;
            }
            for i in 0..nc {
                let v = snap.data[i * cells + cell];
                if !(v > 0.0) {
                    return Err(KppError::Precondition(format!(
                        "nonpositive value {v} in the fit window at t = {t} \
                         (degenerate log); raise t_min or shrink the window"
                    )));
                }
                logs[i].push(v.ln());
            }
        }
    }
    let points = logs[0].len();
    if points < 2 {
        return Err(KppError::Precondition(
            "no interior points at or after t_min".into(),
        ));
    }
    let mut best: Option<RatioFit> = None;
    for i in 0..nc {
        for j in 0..nc {
            if i == j {
                continue;
            }
            let (slope, _, _) = linear_fit(&logs[i], &logs[j]);
            // Degenerate abscissa (exactly constant component): fall back
            // to a pure ratio bound, exponent 1.
            let var: f64 = {
                let m = logs[i].iter().sum::<f64>() / points as f64;
                logs[i].iter().map(|v| (v - m) * (v - m)).sum()
            };
            let p = if var > 1e-30 { slope } else { 1.0 };
            let ln_kappa = logs[i]
                .iter()
                .zip(&logs[j])
                .map(|(a, b)| b - p * a)
                .fold(f64::NEG_INFINITY, f64::max);
            let viol = logs[i]
                .iter()
                .zip(&logs[j])
                .filter(|(a, b)| **b > ln_kappa + p * **a + 1e-12)
                .count() as f64
                / points as f64;
            let cand = RatioFit {
                comp_i: i,
                comp_j: j,
                p_hat: p,
                kappa_hat: ln_kappa.exp(),
                violation_fraction: viol,
                points,
            };
            if best
                .as_ref()
                .map(|b| cand.kappa_hat > b.kappa_hat)
                .unwrap_or(true)
            {
                best = Some(cand);
            }
        }
    }
    Ok(best.unwrap())
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioGrid {
    Box { r: f64, cells: usize },
    Periodic { cells: Vec<usize> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReactionSpec {
    Kpp,
    Linear,
    CoopPower { d: f64, p: f64 },
    CoopQuadratic { dprime: f64 },
}

impl ReactionSpec {
    pub fn to_reaction(self) -> Reaction {
        match self {
            ReactionSpec::Kpp => Reaction::Kpp,
            ReactionSpec::Linear => Reaction::CoopPower { d: 0.0, p: 1.0 },
            ReactionSpec::CoopPower { d, p } => Reaction::CoopPower { d, p },
            ReactionSpec::CoopQuadratic { dprime } => Reaction::CoopQuadratic { dprime },
        }
    }
}

/// A complete simulation request: model path (relative paths resolve
/// against the scenario file), domain, initial data, horizon, snapshot
/// count, and reaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub model: String,
    pub grid: ScenarioGrid,
    pub initial: InitialCondition,
    pub t_end: f64,
    /// Number of snapshots after t = 0 (so snapshot_every = t_end/snapshots).
    pub snapshots: usize,
    pub reaction: ReactionSpec,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<(Scenario, ModelSpec)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let scn: Scenario = serde_json::from_str(&text)?;
    let model_path = {
        let p = Path::new(&scn.model);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let spec = ModelSpec::load(&model_path)?;
    Ok((scn, spec))
}

pub fn run_scenario(scn: &Scenario, spec: &ModelSpec) -> Result<Trajectory> {
    if scn.snapshots == 0 {
        return Err(KppError::Precondition(
            "scenario needs at least one snapshot".into(),
        ));
    }
    let grid = match &scn.grid {
        ScenarioGrid::Box { r, cells } => Grid::truncated_box(spec.dim, *r, *cells)?,
        ScenarioGrid::Periodic { cells } => Grid::periodic_cell(spec, cells)?,
    };
    simulate(
        spec,
        &grid,
        &scn.initial,
        scn.t_end,
        scn.t_end / scn.snapshots as f64,
        scn.reaction.to_reaction(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(d: f64, q: f64, r: f64) -> ModelSpec {
        let text = format!(
            r#"{{"N":1,"n":1,"T":1,"L":[1],"A":["{d}"],"q":["{q}"],"Lmat":[["{r}"]],"Cmat":[["1"]]}}"#
        );
        ModelSpec::from_json_str(&text).unwrap()
    }

    fn exchange_pair() -> ModelSpec {
        let text = r#"{"N":2,"n":1,"T":1,"L":[1],"A":["1","1"],"q":["0","0"],
            "Lmat":[["0","1"],["1","0"]],"Cmat":[["1","1"],["1","1"]]}"#;
        ModelSpec::from_json_str(text).unwrap()
    }

    #[test]
    fn equilibrium_is_stationary_inside() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 30.0, 119).unwrap();
        let ini = InitialCondition::Uniform { height: 1.0 };
        let traj = simulate(&spec, &grid, &ini, 2.0, 1.0, Reaction::Kpp).unwrap();
        let last = traj.snapshots.last().unwrap();
        let cells = grid.cell_count();
        let mut x = [0.0];
        for cell in 0..cells {
            grid.cell_coords(cell, &mut x);
            if x[0].abs() <= 15.0 {
                assert!(
                    (last.data[cell] - 1.0).abs() < 1e-3,
                    "u({}) = {}",
                    x[0],
                    last.data[cell]
                );
            }
        }
        assert!(traj.absorbing_ok());
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(
            traj.snapshots[0].data,
            StateField::constant(1, &grid, 1.0).data
        );
    }

    #[test]
    fn overshoot_decays_like_logistic() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 30.0, 119).unwrap();
        let ini = InitialCondition::Uniform { height: 10.0 };
        let traj = simulate(&spec, &grid, &ini, 3.0, 1.0, Reaction::Kpp).unwrap();
        // Interior follows the logistic ODE u' = u − u². The stiff start
        // (slope ≈ 19 against dt ≈ 0.012) leaves a second-order transient
        // error of a few 1e-3 that the stable fixed point then contracts.
        let want = 10.0 / (10.0 - 9.0 * (-3.0f64).exp());
        let (_, mid) = ball_extrema(traj.snapshots.last().unwrap(), &grid, 5.0);
        assert!((mid - want).abs() < 5e-3, "{mid} vs {want}");
        // Sup history decreasing from the overshoot.
        assert!(traj
            .sup_history
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert_eq!(traj.max_sup, 10.0);
        assert!(traj.absorbing_ok());
    }

    #[test]
    fn trajectory_container_roundtrip() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 5.0, 19).unwrap();
        let ini = InitialCondition::Compact {
            center: vec![0.0],
            radius: 2.0,
            height: 0.5,
        };
        let traj = simulate(&spec, &grid, &ini, 0.5, 0.25, Reaction::Kpp).unwrap();
        let path = std::env::temp_dir().join("kpp_traj_roundtrip.kppt");
        traj.save(&path).unwrap();
        let back = Trajectory::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.grid, traj.grid);
        assert_eq!(back.dt, traj.dt);
        assert_eq!(back.sup_history.len(), traj.sup_history.len());
        for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn classify_covers_all_three_regimes() {
        let ext = classify_regime(&scalar(1.0, 0.0, -1.0), 16).unwrap();
        assert_eq!(ext.regime, Regime::Extinction);
        assert!((ext.lambda1_prime - 1.0).abs() < 1e-5);

        let per = classify_regime(&scalar(1.0, 0.0, 1.0), 16).unwrap();
        assert_eq!(per.regime, Regime::Persistence);
        assert!((per.lambda1 + 1.0).abs() < 1e-5);

        let cond = classify_regime(&scalar(1.0, 1.0, 0.125), 16).unwrap();
        assert_eq!(cond.regime, Regime::Conditional);
        assert!((cond.lambda1_prime + 0.125).abs() < 1e-5);
        assert!((cond.lambda1 - 0.125).abs() < 1e-5);
        assert!(!cond.near_zero);
    }

    #[test]
    fn front_speed_of_homogeneous_kpp() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 60.0, 479).unwrap();
        let ini = InitialCondition::Compact {
            center: vec![0.0],
            radius: 5.0,
            height: 1.0,
        };
        let traj = simulate(&spec, &grid, &ini, 25.0, 1.0, Reaction::Kpp).unwrap();
        let (c, fit) = measure_front_speed(&traj, &[1.0], 0.1).unwrap();
        assert!(c > 1.85 && c < 2.0, "measured {c}");
        assert!(fit.rms_residual < 0.5);
        // Same trajectory leftward by symmetry.
        let (cl, _) = measure_front_speed(&traj, &[-1.0], 0.1).unwrap();
        assert!((c - cl).abs() < 1e-6, "{c} vs {cl}");
    }

    #[test]
    fn stationary_profile_has_zero_slope() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 40.0, 159).unwrap();
        let profile = StateField::from_fn(1, &grid, |_, x| 1.0 / (1.0 + (x[0] - 10.0).exp()));
        let traj = Trajectory {
            times: (0..8).map(|k| k as f64).collect(),
            snapshots: vec![profile; 8],
            grid: grid.clone(),
            dt: 0.1,
            clipped: 0.0,
            sup_history: Vec::new(),
            max_sup: 1.0,
            absorbing_bound: f64::INFINITY,
        };
        let _ = spec;
        let (c, _) = measure_front_speed(&traj, &[1.0], 0.1).unwrap();
        assert!(c.abs() < 1e-12, "{c}");
    }

    #[test]
    fn front_hitting_boundary_is_an_error() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 12.0, 95).unwrap();
        let ini = InitialCondition::Uniform { height: 1.0 };
        let traj = simulate(&spec, &grid, &ini, 1.0, 0.5, Reaction::Kpp).unwrap();
        match measure_front_speed(&traj, &[1.0], 0.1) {
            Err(KppError::Precondition(msg)) => {
                assert!(msg.contains("domain too small"), "{msg}")
            }
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn conditional_experiment_enforces_hypotheses() {
        let spec = scalar(1.0, 1.0, 0.125);
        // z beyond the sign change: persist side must refuse (λ₁,z ≥ 0),
        // extinct side is admissible.
        let err =
            conditional_experiment(&spec, &[0.5], ConditionalSide::Persist, 4.0, 16).unwrap_err();
        assert!(err.to_string().contains("lambda_(1,z) < 0"), "{err}");
        let err =
            conditional_experiment(&spec, &[0.1], ConditionalSide::Extinct, 4.0, 16).unwrap_err();
        assert!(err.to_string().contains("lambda_(1,z) >= 0"), "{err}");
        // Wrong regime refused outright.
        let err = conditional_experiment(
            &scalar(1.0, 0.0, 1.0),
            &[0.1],
            ConditionalSide::Persist,
            4.0,
            16,
        )
        .unwrap_err();
        assert!(err.to_string().contains("conditional regime"), "{err}");
        // Valid persist side runs and stays positive at short horizon.
        let out = conditional_experiment(&spec, &[0.1], ConditionalSide::Persist, 4.0, 16).unwrap();
        assert!(out.lambda_z < 0.0);
        assert!(out.observed > 0.0);
    }

    #[test]
    fn entire_solution_of_logistic_is_one() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::periodic_cell(&spec, &[16]).unwrap();
        let orbit = periodic_entire_solution(&spec, &grid, 1e-8, 2000).unwrap();
        assert!(orbit.residual < 1e-12, "{}", orbit.residual);
        for f in &orbit.fields {
            for v in &f.data {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn entire_solution_of_exchange_pair_is_half() {
        let spec = exchange_pair();
        let grid = Grid::periodic_cell(&spec, &[16]).unwrap();
        let orbit = periodic_entire_solution(&spec, &grid, 1e-8, 2000).unwrap();
        for f in &orbit.fields {
            for v in &f.data {
                assert!((v - 0.5).abs() < 1e-6, "{v}");
            }
        }
        assert!(orbit.periods < 100);
    }

    #[test]
    fn entire_solution_needs_negative_lambda_prime() {
        let spec = scalar(1.0, 0.0, -1.0);
        let grid = Grid::periodic_cell(&spec, &[16]).unwrap();
        let err = periodic_entire_solution(&spec, &grid, 1e-8, 100).unwrap_err();
        assert!(err.to_string().contains("lambda1' < 0"), "{err}");
    }

    #[test]
    fn ordered_pairs_stay_ordered_under_surrogates() {
        let spec = exchange_pair();
        for reaction in [
            Reaction::CoopPower { d: 1.0, p: 0.5 },
            Reaction::CoopQuadratic { dprime: 1.0 },
        ] {
            let rep = comparison_harness(&spec, reaction, 10, 11, 0.5).unwrap();
            assert!(rep.max_violation <= 1e-10, "{:?}", rep.max_violation);
        }
        let err = comparison_harness(&spec, Reaction::Kpp, 1, 0, 0.1).unwrap_err();
        assert!(err.to_string().contains("comparison"), "{err}");
    }

    #[test]
    fn coevolution_is_deterministic() {
        let spec = exchange_pair();
        let a =
            comparison_harness(&spec, Reaction::CoopQuadratic { dprime: 1.0 }, 3, 7, 0.3).unwrap();
        let b =
            comparison_harness(&spec, Reaction::CoopQuadratic { dprime: 1.0 }, 3, 7, 0.3).unwrap();
        assert_eq!(a.max_violation.to_bits(), b.max_violation.to_bits());
    }

    #[test]
    fn window_ratio_positive_and_scale_invariant() {
        let spec = scalar(1.0, 0.0, 0.0);
        let grid = Grid::truncated_box(1, 10.0, 79).unwrap();
        let run = |height: f64| -> Trajectory {
            let ini = InitialCondition::Compact {
                center: vec![0.0],
                radius: 3.0,
                height,
            };
            simulate(
                &spec,
                &grid,
                &ini,
                6.0,
                0.5,
                Reaction::CoopPower { d: 0.0, p: 1.0 },
            )
            .unwrap()
        };
        let r1 = harnack_diagnostic(&spec, &run(1.0), 1.0).unwrap();
        assert!(r1 > 0.0, "{r1}");
        // Powers of two scale every float op exactly: the ratio is bitwise
        // invariant under doubling the data.
        let r2 = harnack_diagnostic(&spec, &run(2.0), 1.0).unwrap();
        assert_eq!(r1.to_bits(), r2.to_bits());
        // Window precondition enforced.
        let err = harnack_diagnostic(&spec, &run(1.0), 2.0).unwrap_err();
        assert!(err.to_string().contains("6·theta"), "{err}");
    }

    #[test]
    fn component_ratio_of_symmetric_pair() {
        let spec = exchange_pair();
        let grid = Grid::truncated_box(1, 20.0, 159).unwrap();
        let ini = InitialCondition::Compact {
            center: vec![0.0],
            radius: 5.0,
            height: 1.0,
        };
        let traj = simulate(&spec, &grid, &ini, 3.0, 0.5, Reaction::Kpp).unwrap();
        let fit = component_ratio_diagnostic(&traj, 1.0).unwrap();
        assert!((fit.p_hat - 1.0).abs() < 1e-6, "{}", fit.p_hat);
        assert!((fit.kappa_hat - 1.0).abs() < 1e-9, "{}", fit.kappa_hat);
        assert_eq!(fit.violation_fraction, 0.0);
        // Single component refused.
        let s1 = scalar(1.0, 0.0, 1.0);
        let g1 = Grid::truncated_box(1, 10.0, 39).unwrap();
        let t1 = simulate(
            &s1,
            &g1,
            &InitialCondition::Uniform { height: 1.0 },
            2.0,
            1.0,
            Reaction::Kpp,
        )
        .unwrap();
        assert!(component_ratio_diagnostic(&t1, 1.0).is_err());
    }

    #[test]
    fn scenario_files_run_end_to_end() {
        let dir = std::env::temp_dir().join("kpp_scenario_test");
        std::fs::create_dir_all(&dir).unwrap();
        let model_path = dir.join("model.json");
        std::fs::write(
            &model_path,
            r#"{"N":1,"n":1,"T":1,"L":[1],"A":["1"],"q":["0"],"Lmat":[["1"]],"Cmat":[["1"]]}"#,
        )
        .unwrap();
        let scn_path = dir.join("scenario.json");
        std::fs::write(
            &scn_path,
            r#"{
                "model": "model.json",
                "grid": {"kind": "box", "r": 10.0, "cells": 79},
                "initial": {"kind": "compact", "center": [0.0], "radius": 3.0, "height": 1.0},
                "t_end": 1.0,
                "snapshots": 4,
                "reaction": {"kind": "kpp"}
            }"#,
        )
        .unwrap();
        let (scn, spec) = load_scenario(&scn_path).unwrap();
        let traj = run_scenario(&scn, &spec).unwrap();
        assert_eq!(traj.snapshots.len(), 5);
        let csv = traj.summary_csv(5.0, Some((&[1.0], 0.1)));
        assert!(csv.starts_with("t,sup,min_ball,front_position\n"));
        assert_eq!(csv.lines().count(), 6);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn exponential_data_matches_contract() {
        let spec = scalar(1.0, 0.0, 1.0);
        let grid = Grid::truncated_box(1, 20.0, 159).unwrap();
        let ini = InitialCondition::Exponential {
            z: vec![0.3],
            c_big: 10.0,
            b: 0.0,
        };
        let u = ini.realize(&spec, &grid).unwrap();
        let cells = grid.cell_count();
        let mut x = [0.0];
        for cell in 0..cells {
            grid.cell_coords(cell, &mut x);
            let zx = 0.3 * x[0];
            if zx <= 0.0 {
                assert!((u.data[cell] - zx.exp() / 10.0).abs() < 1e-14);
            }
            assert!(u.data[cell] <= 1.0 + 1e-14);
        }
    }
}
