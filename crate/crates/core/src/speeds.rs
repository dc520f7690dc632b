//! Dispersion curves z ↦ λ₁,z and the spreading-speed hierarchy.
//!
//! The decay-rate speeds `c^μ_e = λ₁,−μe / (−μ)` (μ > 0) inherit strict
//! convexity from the dispersion relation, so the critical speed
//! `c*_e = min_μ c^μ_e` has a unique interior minimizer μ* whenever
//! λ₁ < 0. The directional (Freidlin–Gärtner) speed is the envelope
//! `c^FG_e = min_{e·e′>0} c*_{e′} / (e·e′)`. Optimizers exploit
//! unimodality but verify it after the fact: every golden-section run
//! re-checks its own samples and aborts loudly on violation, so silent
//! garbage from a mis-specified model or a noisy eigensolve cannot leak
//! into reported speeds.

use std::collections::BTreeMap;
use std::sync::Once;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KppError, Result};
use crate::floquet::{principal_eigenvalue, DEFAULT_EIG_MAX_ITER, DEFAULT_EIG_TOL};
use crate::grid::{BoundaryKind, Grid};
use crate::model::ModelSpec;

/// Default cells per axis (per period) for eigen-solves inside speed
/// computations. Speed error is dominated by dispersion-curve bias, so
/// this is exposed as a knob everywhere rather than hard-wired. Explicit
/// stepping costs ~cells³ per solve (CFL ties dt to h²) while the spatial
/// error at 64 cells already sits well below the 1e-3 reporting scale for
/// trigonometric coefficients; pass more cells for rough coefficients.
pub const DEFAULT_SPEED_CELLS: usize = 64;
/// Default displacement tolerance for the λ₁ coordinate sweeps.
pub const DEFAULT_LAMBDA_MAX_TOL: f64 = 1e-4;
/// Default relative tolerance for the critical-speed minimization.
pub const DEFAULT_SPEED_TOL: f64 = 1e-6;
/// Default number of directional samples for the FG envelope (n = 2).
pub const DEFAULT_ANGULAR_STEPS: usize = 64;

/// Shifts are never chased past this radius: the dispersion relation of a
/// well-posed model is coercive, so a maximum must appear long before.
const COERCIVITY_RADIUS: f64 = 64.0;

const INVPHI: f64 = 0.618_033_988_749_894_8;

static POOL_INIT: Once = Once::new();

/// Honors `KPP_SPECTRA_THREADS` once per process; silently keeps the
/// default pool when unset, malformed, or already configured.
fn ensure_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(s) = std::env::var("KPP_SPECTRA_THREADS") {
            if let Ok(k) = s.trim().parse::<usize>() {
                if k >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(k)
                        .build_global();
                }
            }
        }
    });
}

fn eig_lambda(spec: &ModelSpec, cells: usize, z: &[f64]) -> Result<f64> {
    let grid = Grid::periodic_cell(spec, &vec![cells; spec.dim])?;
    let r = principal_eigenvalue(
        spec,
        &grid,
        z,
        DEFAULT_EIG_TOL,
        DEFAULT_EIG_MAX_ITER,
        BoundaryKind::Periodic,
    )?;
    Ok(r.lambda)
}

// ---------------------------------------------------------------------------
// Dispersion curves
// ---------------------------------------------------------------------------

/// One sampled point of a dispersion curve.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionPoint {
    pub z: Vec<f64>,
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// A sampled dispersion curve z ↦ λ₁,z with provenance metadata.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionCurve {
    pub points: Vec<DispersionPoint>,
    /// Per-z solver failures (shift, error message); not fatal.
    pub failures: Vec<(Vec<f64>, String)>,
    /// SHA-256 of the model definition these samples belong to.
    pub model_hash: String,
    /// Cells per axis used for every solve.
    pub cells: usize,
    /// Power-iteration tolerance used for every solve.
    pub tol: f64,
}

impl DispersionCurve {
    /// CSV with one row per sample: `z1,...,zn,lambda`.
    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(1, |p| p.z.len());
        let mut out = String::new();
        for axis in 1..=n {
            out.push_str(&format!("z{axis},"));
        }
        out.push_str("lambda\n");
        for p in &self.points {
            for zc in &p.z {
                out.push_str(&format!("{zc:?},"));
            }
            out.push_str(&format!("{:?}\n", p.lambda));
        }
        out
    }
}

/// Samples λ₁,z at each requested shift (order preserved; solves run in
/// parallel). Individual failures are recorded on the curve, not raised.
pub fn dispersion_curve(
    spec: &ModelSpec,
    z_list: &[Vec<f64>],
    cells: usize,
) -> Result<DispersionCurve> {
    ensure_pool();
    let mut seen = std::collections::BTreeSet::new();
    for z in z_list {
        if z.len() != spec.dim {
            return Err(KppError::Precondition(format!(
                "shift {z:?} has {} components, model dimension is {}",
                z.len(),
                spec.dim
            )));
        }
        let bits: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        if !seen.insert(bits) {
            return Err(KppError::Precondition(format!(
                "duplicate shift {z:?} in dispersion sample list"
            )));
        }
    }
    let solved: Vec<_> = z_list
        .par_iter()
        .map(|z| {
            let grid = Grid::periodic_cell(spec, &vec![cells; spec.dim])?;
            principal_eigenvalue(
                spec,
                &grid,
                z,
                DEFAULT_EIG_TOL,
                DEFAULT_EIG_MAX_ITER,
                BoundaryKind::Periodic,
            )
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (z, r) in z_list.iter().zip(solved) {
        match r {
            Ok(e) => points.push(DispersionPoint {
                z: z.clone(),
                lambda: e.lambda,
                residual: e.residual,
                iterations: e.iterations,
            }),
            Err(err) => failures.push((z.clone(), err.to_string())),
        }
    }
    Ok(DispersionCurve {
        points,
        failures,
        model_hash: spec.content_hash(),
        cells,
        tol: DEFAULT_EIG_TOL,
    })
}

/// λ₁′ = λ₁,0 — the periodic principal eigenvalue with no shift.
pub fn lambda_prime(spec: &ModelSpec, cells: usize) -> Result<f64> {
    eig_lambda(spec, cells, &vec![0.0; spec.dim])
}

// ---------------------------------------------------------------------------
// Golden-section with unimodality audit
// ---------------------------------------------------------------------------

/// Verifies that sampled values descend to their minimum and rise after
/// it, up to noise `1e-7·(1 + |min|)`. Samples arrive unsorted.
fn check_unimodal_min(samples: &[(f64, f64)], what: &str) -> Result<()> {
    let mut s: Vec<(f64, f64)> = samples.to_vec();
    s.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    s.dedup_by_key(|p| p.0.to_bits());
    if s.len() < 3 {
        return Ok(());
    }
    let (kmin, fmin) = s
        .iter()
        .enumerate()
        .map(|(k, p)| (k, p.1))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let eps = 1e-7 * (1.0 + fmin.abs());
    for i in 0..s.len() - 1 {
        let ok = if i < kmin {
            s[i].1 >= s[i + 1].1 - eps
        } else {
            s[i + 1].1 >= s[i].1 - eps
        };
        if !ok {
            return Err(KppError::Unimodal(format!(
                "{what}: samples rise then fall around x = {} (f = {} vs {}); \
                 minimum believed at x = {}",
                s[i].0,
                s[i].1,
                s[i + 1].1,
                s[kmin].0
            )));
        }
    }
    Ok(())
}

/// Golden-section minimization on [a, b]; every evaluation is appended to
/// `samples` so the caller can audit unimodality across the whole search.
fn golden_min<F>(
    f: &mut F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    samples: &mut Vec<(f64, f64)>,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut eval = |x: f64, samples: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        samples.push((x, v));
        Ok(v)
    };
    let mut c = b - (b - a) * INVPHI;
    let mut d = a + (b - a) * INVPHI;
    let mut fc = eval(c, samples)?;
    let mut fd = eval(d, samples)?;
    while b - a > xtol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INVPHI;
            fc = eval(c, samples)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INVPHI;
            fd = eval(d, samples)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Walks a three-point window outward (doubling spans) until the middle
/// value is no larger than both ends, i.e. a minimum is bracketed.
fn bracket_min<F>(
    f: &mut F,
    center: f64,
    step0: f64,
    max_radius: f64,
    what: &str,
    samples: &mut Vec<(f64, f64)>,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut eval = |x: f64, samples: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        samples.push((x, v));
        Ok(v)
    };
    let mut s = step0;
    let (mut a, mut m, mut b) = (center - s, center, center + s);
    let mut fa = eval(a, samples)?;
    let mut fm = eval(m, samples)?;
    let mut fb = eval(b, samples)?;
    while fa < fm || fb < fm {
        if a.abs() > max_radius || b.abs() > max_radius {
            return Err(KppError::Precondition(format!(
                "coercivity not observed: {what} still improving at |x| > {max_radius} \
                 (bracket [{a}, {b}]); the model is likely mis-specified"
            )));
        }
        s *= 2.0;
        if fa < fb {
            b = m;
            fb = fm;
            m = a;
            fm = fa;
            a = m - s;
            fa = eval(a, samples)?;
        } else {
            a = m;
            fa = fm;
            m = b;
            fm = fb;
            b = m + s;
            fb = eval(b, samples)?;
        }
    }
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// λ₁ = max_z λ₁,z
// ---------------------------------------------------------------------------

/// Maximizes the (strictly concave, coercive) dispersion relation by
/// coordinate-wise golden-section sweeps with outward bracket doubling.
/// Returns the best (λ, z) over every sample taken — the very first
/// sample is z = 0, so `lambda_max ≥ lambda_prime` holds by construction.
pub fn lambda_max(spec: &ModelSpec, tol: f64, cells: usize) -> Result<(f64, Vec<f64>)> {
    let mut z = vec![0.0; spec.dim];
    // Track the best sample globally (we minimize −λ internally).
    let mut best_neg = f64::INFINITY;
    let mut best_z = z.clone();
    let xtol = tol / 4.0;
    for _sweep in 0..64 {
        let z_before = z.clone();
        for axis in 0..spec.dim {
            let mut samples: Vec<(f64, f64)> = Vec::new();
            let mut probe = |x: f64| -> Result<f64> {
                let mut zz = z.clone();
                zz[axis] = x;
                let neg = -eig_lambda(spec, cells, &zz)?;
                if neg < best_neg {
                    best_neg = neg;
                    best_z = zz;
                }
                Ok(neg)
            };
            let (a, b) = bracket_min(
                &mut probe,
                z[axis],
                0.5,
                COERCIVITY_RADIUS,
                "the dispersion relation",
                &mut samples,
            )?;
            let (x, _) = golden_min(&mut probe, a, b, xtol, &mut samples)?;
            check_unimodal_min(&samples, "dispersion-relation line search")?;
            z[axis] = x;
        }
        let moved = z
            .iter()
            .zip(&z_before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if moved < tol {
            return Ok((-best_neg, best_z));
        }
    }
    Err(KppError::Precondition(
        "coordinate sweeps for lambda_max did not settle in 64 rounds".into(),
    ))
}

// ---------------------------------------------------------------------------
// Speeds
// ---------------------------------------------------------------------------

fn unit(e: &[f64]) -> Result<Vec<f64>> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(KppError::Precondition(format!(
            "direction {e:?} cannot be normalized"
        )));
    }
    Ok(e.iter().map(|v| v / norm).collect())
}

/// c^μ_e = λ₁,−μe / (−μ): the spreading speed of solutions decaying like
/// e^{−μ x·e} in direction e.
pub fn speed_at_decay(spec: &ModelSpec, e: &[f64], mu: f64, cells: usize) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(KppError::Precondition(format!(
            "decay rate mu must be positive (got {mu})"
        )));
    }
    let e = unit(e)?;
    let z: Vec<f64> = e.iter().map(|c| -mu * c).collect();
    Ok(eig_lambda(spec, cells, &z)? / (-mu))
}

fn check_lambda1_negative(spec: &ModelSpec, cells: usize) -> Result<(f64, Vec<f64>)> {
    let (l1, zmax) = lambda_max(spec, DEFAULT_LAMBDA_MAX_TOL, cells)?;
    if l1 >= 0.0 {
        return Err(KppError::Precondition(format!(
            "lambda1 nonnegative: no critical speed (lambda1 = {l1})"
        )));
    }
    Ok((l1, zmax))
}

/// Critical-speed minimization along a fixed direction, with the λ₁ < 0
/// precondition already verified by the caller. Returns (c*, μ*) plus the
/// sampled speed curve.
fn critical_speed_inner(
    spec: &ModelSpec,
    e: &[f64],
    tol: f64,
    cells: usize,
) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    let e = unit(e)?;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    // Walk powers of two until an interior minimum is bracketed, caching
    // the integer-exponent evaluations.
    let mut cache: BTreeMap<i32, f64> = BTreeMap::new();
    let mut at = |j: i32, samples: &mut Vec<(f64, f64)>| -> Result<f64> {
        if let Some(v) = cache.get(&j) {
            return Ok(*v);
        }
        let mu = 2.0f64.powi(j);
        let c = speed_at_decay(spec, &e, mu, cells)?;
        cache.insert(j, c);
        samples.push((mu, c));
        Ok(c)
    };
    let (mut lo, mut mid, mut hi) = (-1i32, 0i32, 1i32);
    loop {
        let (fl, fm, fh) = (
            at(lo, &mut samples)?,
            at(mid, &mut samples)?,
            at(hi, &mut samples)?,
        );
        if fm <= fl && fm <= fh {
            break;
        }
        if fl < fh {
            hi = mid;
            mid = lo;
            lo -= 1;
        } else {
            lo = mid;
            mid = hi;
            hi += 1;
        }
        if lo < -40 || hi > 40 {
            return Err(KppError::Precondition(format!(
                "no interior minimum of the speed curve bracketed for mu in \
                 [2^-40, 2^40] (direction {e:?})"
            )));
        }
    }
    let (a, b) = (2.0f64.powi(lo), 2.0f64.powi(hi));
    let mut f = |mu: f64| speed_at_decay(spec, &e, mu, cells);
    let xtol = tol * b.max(1.0);
    let (mu_star, c_star) = golden_min(&mut f, a, b, xtol, &mut samples)?;
    check_unimodal_min(&samples, "speed-curve minimization")?;
    samples.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    Ok((c_star, mu_star, samples))
}

/// c*_e = min_{μ>0} c^μ_e and its minimizer. Defined only under λ₁ < 0.
pub fn critical_speed(spec: &ModelSpec, e: &[f64], tol: f64, cells: usize) -> Result<(f64, f64)> {
    check_lambda1_negative(spec, cells)?;
    let (c, mu, _) = critical_speed_inner(spec, e, tol, cells)?;
    Ok((c, mu))
}

/// Bracketing/convergence context attached to a [`SpeedReport`].
#[derive(Debug, Clone, Serialize)]
pub struct SpeedDiagnostics {
    /// λ₁ found by the precondition check (must be negative).
    pub lambda1: f64,
    /// Maximizing shift for λ₁.
    pub z_max: Vec<f64>,
    /// Final bracket of the μ minimization.
    pub mu_bracket: (f64, f64),
    /// Directional samples (angle relative to e, quotient value); empty
    /// in one dimension.
    pub angular_samples: Vec<(f64, f64)>,
}

/// Speeds in one direction: the decay-rate family, its minimum, and the
/// directional envelope.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedReport {
    /// Unit direction the speeds refer to.
    pub e: Vec<f64>,
    /// Sampled (μ, c^μ_e) pairs, ascending in μ.
    pub mu_samples: Vec<(f64, f64)>,
    /// Minimizer of μ ↦ c^μ_e.
    pub mu_star: f64,
    /// Critical speed c*_e.
    pub c_star: f64,
    /// Freidlin–Gärtner speed c^FG_e.
    pub fg_speed: f64,
    /// Direction attaining the FG envelope.
    pub e_prime: Vec<f64>,
    pub diagnostics: SpeedDiagnostics,
}

impl SpeedReport {
    /// Compact JSON `{e, c_star, mu_star, fg_speed, e_prime}` plus
    /// diagnostics and the sampled speed curve.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV of the sampled speed curve: `mu,c_mu`.
    pub fn speed_curve_csv(&self) -> String {
        let mut out = String::from("mu,c_mu\n");
        for (mu, c) in &self.mu_samples {
            out.push_str(&format!("{mu:?},{c:?}\n"));
        }
        out
    }
}

/// The directional spreading speed c^FG_e. In one dimension the envelope
/// collapses to c*_e; in two, directions e′ with e·e′ > 0 are sampled on
/// the open half-circle (cut 0.05 rad short of ±π/2, where the quotient
/// blows up) and the discrete argmin is refined by golden section.
pub fn fg_speed(
    spec: &ModelSpec,
    e: &[f64],
    angular_steps: usize,
    cells: usize,
) -> Result<SpeedReport> {
    ensure_pool();
    let e = unit(e)?;
    let (lambda1, z_max) = check_lambda1_negative(spec, cells)?;
    let (c_star, mu_star, mu_samples) = critical_speed_inner(spec, &e, DEFAULT_SPEED_TOL, cells)?;
    let mu_bracket = (
        mu_samples.first().map_or(mu_star, |p| p.0),
        mu_samples.last().map_or(mu_star, |p| p.0),
    );
    if spec.dim == 1 {
        return Ok(SpeedReport {
            e: e.clone(),
            mu_samples,
            mu_star,
            c_star,
            fg_speed: c_star,
            e_prime: e,
            diagnostics: SpeedDiagnostics {
                lambda1,
                z_max,
                mu_bracket,
                angular_samples: Vec::new(),
            },
        });
    }
    if angular_steps < 3 {
        return Err(KppError::Precondition(
            "fg_speed needs at least 3 angular samples".into(),
        ));
    }
    let theta0 = e[1].atan2(e[0]);
    let cut = std::f64::consts::FRAC_PI_2 - 0.05;
    let dir = |theta: f64| -> Vec<f64> { vec![theta.cos(), theta.sin()] };
    let quotient = |theta: f64| -> Result<f64> {
        let ep = dir(theta);
        let dot = ep[0] * e[0] + ep[1] * e[1];
        let (c, _, _) = critical_speed_inner(spec, &ep, DEFAULT_SPEED_TOL, cells)?;
        Ok(c / dot)
    };
    let thetas: Vec<f64> = (0..angular_steps)
        .map(|j| theta0 - cut + 2.0 * cut * j as f64 / (angular_steps - 1) as f64)
        .collect();
    let values: Vec<Result<f64>> = thetas.par_iter().map(|&th| quotient(th)).collect();
    let mut angular_samples = Vec::with_capacity(angular_steps);
    for (th, v) in thetas.iter().zip(values) {
        angular_samples.push((th - theta0, v?));
    }
    let kmin = angular_samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(k, _)| k)
        .unwrap();
    let lo = thetas[kmin.saturating_sub(1)];
    let hi = thetas[(kmin + 1).min(angular_steps - 1)];
    let (theta_star, fg) = if hi > lo {
        let mut refine_samples: Vec<(f64, f64)> = Vec::new();
        let mut f = |th: f64| quotient(th);
        let (th, v) = golden_min(&mut f, lo, hi, 1e-3, &mut refine_samples)?;
        check_unimodal_min(&refine_samples, "directional-envelope refinement")?;
        if v <= angular_samples[kmin].1 {
            (th, v)
        } else {
            (thetas[kmin], angular_samples[kmin].1)
        }
    } else {
        (thetas[kmin], angular_samples[kmin].1)
    };
    Ok(SpeedReport {
        e: e.clone(),
        mu_samples,
        mu_star,
        c_star,
        fg_speed: fg,
        e_prime: dir(theta_star),
        diagnostics: SpeedDiagnostics {
            lambda1,
            z_max,
            mu_bracket,
            angular_samples,
        },
    })
}
