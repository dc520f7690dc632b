//! Problem description: dimensions, periods, coefficient fields, and the
//! standing-assumption checks.
//!
//! A model is the tuple (N, n, T, L, A, q, 𝐋, 𝐂) describing the system
//!
//! ```text
//!   ∂_t u_i − ∇·(A_i ∇u_i) + q_i·∇u_i = (𝐋 u)_i − (𝐂 u)_i u_i ,   i = 1..N,
//! ```
//!
//! with all coefficients (T, L)-periodic in (t, x). [`validate_assumptions`]
//! certifies, on a sampling lattice: uniform ellipticity of each A_i,
//! nonnegative off-diagonal entries of 𝐋 (so the linearization is
//! cooperative), irreducibility of the entrywise max of 𝐋 (no decoupled
//! group of components), and positivity of 𝐂.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KppError, Result};
use crate::exprlang::{self, CompiledExpr, Expr};
use crate::grid::Grid;

/// One coefficient field: source text plus parsed and compiled forms.
#[derive(Debug, Clone)]
pub struct ExprField {
    pub src: String,
    pub ast: Expr,
    pub compiled: CompiledExpr,
}

impl ExprField {
    pub fn parse(src: &str, n: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        let ast = exprlang::parse(src, n, params)
            .map_err(|e| KppError::Model(format!("in expression '{src}': {e}")))?;
        let compiled = CompiledExpr::new(&ast, params)?;
        Ok(ExprField {
            src: src.to_string(),
            ast,
            compiled,
        })
    }

    pub fn constant(v: f64) -> Self {
        let src = format!("{v}");
        Self::parse(&src, 1, &BTreeMap::new()).expect("numeric literal")
    }
}

impl fmt::Display for ExprField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.src)
    }
}

/// Full problem description.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: Option<String>,
    /// Number of components N.
    pub n_comp: usize,
    /// Space dimension n (1 or 2).
    pub dim: usize,
    /// Time period T.
    pub period_t: f64,
    /// Space periods L_1..L_n.
    pub periods_l: Vec<f64>,
    /// Diffusion matrices A_i: [component][alpha][beta], symmetric in (alpha, beta).
    pub diffusion: Vec<Vec<Vec<ExprField>>>,
    /// Advection vectors q_i: [component][alpha].
    pub advection: Vec<Vec<ExprField>>,
    /// Linear coupling 𝐋: [i][j].
    pub lmat: Vec<Vec<ExprField>>,
    /// Competition matrix 𝐂: [i][j].
    pub cmat: Vec<Vec<ExprField>>,
    pub params: BTreeMap<String, f64>,
}

// ---------------------------------------------------------------------------
// JSON loading
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Num(f64),
    Text(String),
}

impl RawEntry {
    fn src(&self) -> String {
        match self {
            RawEntry::Num(v) => format!("{v}"),
            RawEntry::Text(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawField {
    Entry(RawEntry),
    Vector(Vec<RawEntry>),
    Matrix(Vec<Vec<RawEntry>>),
}

#[derive(Deserialize)]
struct RawModel {
    #[serde(default)]
    name: Option<String>,
    #[serde(rename = "N")]
    n_comp: usize,
    n: usize,
    #[serde(rename = "T")]
    period_t: f64,
    #[serde(rename = "L")]
    periods_l: Vec<f64>,
    #[serde(rename = "A")]
    diffusion: Vec<RawField>,
    #[serde(default, rename = "q")]
    advection: Option<Vec<RawField>>,
    #[serde(rename = "Lmat")]
    lmat: Vec<Vec<RawEntry>>,
    #[serde(rename = "Cmat")]
    cmat: Vec<Vec<RawEntry>>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

const RESERVED_NAMES: &[&str] = &["t", "pi", "T", "sin", "cos", "exp", "abs", "min", "max"];

fn check_param_name(name: &str) -> Result<()> {
    let bad = |why: &str| Err(KppError::Model(format!("parameter '{name}': {why}")));
    if RESERVED_NAMES.contains(&name) {
        return bad("name is reserved");
    }
    let bytes = name.as_bytes();
    if bytes.is_empty() || !(bytes[0].is_ascii_alphabetic() || bytes[0] == b'_') {
        return bad("must start with a letter or underscore");
    }
    if !bytes
        .iter()
        .all(|b| b.is_ascii_alphanumeric() || *b == b'_')
    {
        return bad("may contain only letters, digits, and underscores");
    }
    // x1, L2, ... would shadow the built-in variables.
    let (head, tail) = name.split_at(1);
    if (head == "x" || head == "L") && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())
    {
        return bad("would shadow a coordinate or period name");
    }
    Ok(())
}

impl ModelSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            KppError::Model(format!("cannot read model file '{}': {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let raw: RawModel = serde_json::from_value(value)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawModel) -> Result<Self> {
        let nc = raw.n_comp;
        let n = raw.n;
        if nc < 1 {
            return Err(KppError::Model("N must be at least 1".into()));
        }
        if n < 1 || n > 2 {
            return Err(KppError::Model(format!(
                "space dimension n = {n} unsupported (must be 1 or 2)"
            )));
        }
        if !(raw.period_t > 0.0) || !raw.period_t.is_finite() {
            return Err(KppError::Model(format!(
                "time period T = {} must be positive",
                raw.period_t
            )));
        }
        if raw.periods_l.len() != n {
            return Err(KppError::Model(format!(
                "L has {} entries, expected n = {n}",
                raw.periods_l.len()
            )));
        }
        for (a, l) in raw.periods_l.iter().enumerate() {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(KppError::Model(format!(
                    "L{} = {l} must be positive",
                    a + 1
                )));
            }
        }
        for key in raw.params.keys() {
            check_param_name(key)?;
        }
        let params = raw.params;
        let pf = |src: &str| ExprField::parse(src, n, &params);

        // Diffusion: per component, accept a scalar (isotropic), a length-n
        // diagonal, or a full n x n matrix whose upper triangle is mirrored.
        if raw.diffusion.len() != nc {
            return Err(KppError::Model(format!(
                "A lists {} components, expected N = {nc}",
                raw.diffusion.len()
            )));
        }
        let mut diffusion = Vec::with_capacity(nc);
        for (i, f) in raw.diffusion.iter().enumerate() {
            let mut mat: Vec<Vec<ExprField>> = Vec::with_capacity(n);
            match f {
                RawField::Entry(e) => {
                    for a in 0..n {
                        let mut row = Vec::with_capacity(n);
                        for b in 0..n {
                            row.push(if a == b {
                                pf(&e.src())?
                            } else {
                                ExprField::constant(0.0)
                            });
                        }
                        mat.push(row);
                    }
                }
                RawField::Vector(v) => {
                    if v.len() != n {
                        return Err(KppError::Model(format!(
                            "A[{i}] diagonal has {} entries, expected n = {n}",
                            v.len()
                        )));
                    }
                    for a in 0..n {
                        let mut row = Vec::with_capacity(n);
                        for b in 0..n {
                            row.push(if a == b {
                                pf(&v[a].src())?
                            } else {
                                ExprField::constant(0.0)
                            });
                        }
                        mat.push(row);
                    }
                }
                RawField::Matrix(m) => {
                    if m.len() != n || m.iter().any(|r| r.len() != n) {
                        return Err(KppError::Model(format!(
                            "A[{i}] must be an {n} x {n} matrix"
                        )));
                    }
                    // Only the upper triangle is read; symmetry by mirroring.
                    for a in 0..n {
                        let mut row = Vec::with_capacity(n);
                        for b in 0..n {
                            let (r, c) = if a <= b { (a, b) } else { (b, a) };
                            row.push(pf(&m[r][c].src())?);
                        }
                        mat.push(row);
                    }
                }
            }
            diffusion.push(mat);
        }

        let mut advection = Vec::with_capacity(nc);
        match raw.advection {
            None => {
                for _ in 0..nc {
                    advection.push((0..n).map(|_| ExprField::constant(0.0)).collect());
                }
            }
            Some(qs) => {
                if qs.len() != nc {
                    return Err(KppError::Model(format!(
                        "q lists {} components, expected N = {nc}",
                        qs.len()
                    )));
                }
                for (i, f) in qs.iter().enumerate() {
                    let vec: Vec<ExprField> = match f {
                        RawField::Entry(e) if n == 1 => vec![pf(&e.src())?],
                        RawField::Vector(v) if v.len() == n => {
                            v.iter().map(|e| pf(&e.src())).collect::<Result<_>>()?
                        }
                        _ => {
                            return Err(KppError::Model(format!(
                                "q[{i}] must be a vector of {n} entries"
                            )));
                        }
                    };
                    advection.push(vec);
                }
            }
        }

        let square = |name: &str, m: &Vec<Vec<RawEntry>>| -> Result<Vec<Vec<ExprField>>> {
            if m.len() != nc || m.iter().any(|r| r.len() != nc) {
                return Err(KppError::Model(format!(
                    "{name} must be an {nc} x {nc} matrix"
                )));
            }
            m.iter()
                .map(|r| r.iter().map(|e| pf(&e.src())).collect())
                .collect()
        };
        let lmat = square("Lmat", &raw.lmat)?;
        let cmat = square("Cmat", &raw.cmat)?;

        Ok(ModelSpec {
            name: raw.name,
            n_comp: nc,
            dim: n,
            period_t: raw.period_t,
            periods_l: raw.periods_l,
            diffusion,
            advection,
            lmat,
            cmat,
            params,
        })
    }

    /// Iterates over every coefficient field with a descriptive label.
    pub fn fields(&self) -> impl Iterator<Item = (String, &ExprField)> {
        let nc = self.n_comp;
        let n = self.dim;
        let a = (0..nc).flat_map(move |i| {
            (0..n).flat_map(move |al| {
                (al..n).map(move |be| {
                    (
                        format!("A[{}][{}][{}]", i + 1, al + 1, be + 1),
                        &self.diffusion[i][al][be],
                    )
                })
            })
        });
        let q = (0..nc).flat_map(move |i| {
            (0..n).map(move |al| (format!("q[{}][{}]", i + 1, al + 1), &self.advection[i][al]))
        });
        let l = (0..nc).flat_map(move |i| {
            (0..nc).map(move |j| (format!("Lmat[{}][{}]", i + 1, j + 1), &self.lmat[i][j]))
        });
        let c = (0..nc).flat_map(move |i| {
            (0..nc).map(move |j| (format!("Cmat[{}][{}]", i + 1, j + 1), &self.cmat[i][j]))
        });
        a.chain(q).chain(l).chain(c)
    }

    /// True when no coefficient references `t` (samples can be reused
    /// across time steps).
    pub fn time_independent(&self) -> bool {
        self.fields().all(|(_, f)| !f.compiled.uses_t())
    }

    /// True when no coefficient references a space variable.
    pub fn space_independent(&self) -> bool {
        self.fields().all(|(_, f)| !f.compiled.uses_x())
    }

    /// SHA-256 hex digest of everything that defines the model: shape,
    /// periods, coefficient sources, and parameter values. Stable across
    /// runs, so derived artifacts (dispersion curves, reports) can be
    /// traced back to the exact model they came from.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut push = |s: &str| {
            h.update(s.as_bytes());
            h.update([0u8]);
        };
        push(self.name.as_deref().unwrap_or(""));
        push(&format!("N={}", self.n_comp));
        push(&format!("n={}", self.dim));
        push(&format!("T={:?}", self.period_t));
        for l in &self.periods_l {
            push(&format!("L={l:?}"));
        }
        for (label, f) in self.fields() {
            push(&label);
            push(&f.src);
        }
        for (k, v) in &self.params {
            push(&format!("{k}={v:?}"));
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

/// Sample point and value realizing an extremum in the report.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub what: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let xs: Vec<String> = self.x.iter().map(|v| format!("{v:.4}")).collect();
        write!(
            f,
            "{} = {:.6} at t = {:.4}, x = ({})",
            self.what,
            self.value,
            self.t,
            xs.join(", ")
        )
    }
}

/// Outcome of [`validate_assumptions`] on a finite sampling lattice.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub samples_per_period: usize,
    /// Every coefficient field is (T, L)-periodic at the sampled points.
    pub periodic: bool,
    pub periodicity_worst: f64,
    /// Uniform ellipticity: min eigenvalue of every A_i over the lattice.
    pub ellipticity: bool,
    pub min_ellipticity: Witness,
    /// Cooperative linear part: off-diagonal entries of 𝐋 nonnegative.
    pub essentially_nonnegative: bool,
    pub min_offdiag: Option<Witness>,
    /// Irreducibility of the entrywise lattice max of 𝐋.
    pub irreducible: bool,
    /// Positive competition: min entry of 𝐂 over the lattice.
    pub positive_competition: bool,
    pub min_competition: Witness,
    /// Entrywise lattice min/max of 𝐋 and of 𝐂.
    pub lmat_lower: Vec<Vec<f64>>,
    pub lmat_upper: Vec<Vec<f64>>,
    pub cmat_lower: Vec<Vec<f64>>,
    pub cmat_upper: Vec<Vec<f64>>,
    /// Smallest positive entry of the lattice max of 𝐋 (None if 𝐋 ≤ 0).
    pub sigma: Option<f64>,
    /// Single bound K ≥ 1 dominating 1/ellipticity, diffusion magnitude,
    /// |q|, and |𝐋| over the lattice.
    pub k_bound: f64,
    /// Carrying-capacity estimate: with c_min = min 𝐂 entry and
    /// l_max = max 𝐋 entry, row-wise 𝐋u − (𝐂u)∘u ≤ c_min (𝟙ᵀu)(K_est − u_i)
    /// for all u ≥ 0, where K_est = max(0, l_max)/c_min. Solutions are
    /// eventually bounded by K_est (infinite if positivity of 𝐂 fails).
    pub k_absorbing: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.periodic
            && self.ellipticity
            && self.essentially_nonnegative
            && self.irreducible
            && self.positive_competition
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.periodic {
            out.push("periodicity");
        }
        if !self.ellipticity {
            out.push("ellipticity");
        }
        if !self.essentially_nonnegative {
            out.push("essential nonnegativity of Lmat");
        }
        if !self.irreducible {
            out.push("irreducibility of Lmat");
        }
        if !self.positive_competition {
            out.push("positivity of Cmat");
        }
        out
    }
}

/// Min eigenvalue of a symmetric 1x1 or 2x2 matrix.
fn sym_min_eig(a: &[Vec<f64>]) -> f64 {
    match a.len() {
        1 => a[0][0],
        2 => {
            let mean = 0.5 * (a[0][0] + a[1][1]);
            let det = 0.5 * (a[0][0] - a[1][1]);
            mean - (det * det + a[0][1] * a[0][1]).sqrt()
        }
        _ => unreachable!("n is 1 or 2"),
    }
}

fn sym_max_eig(a: &[Vec<f64>]) -> f64 {
    match a.len() {
        1 => a[0][0],
        2 => {
            let mean = 0.5 * (a[0][0] + a[1][1]);
            let det = 0.5 * (a[0][0] - a[1][1]);
            mean + (det * det + a[0][1] * a[0][1]).sqrt()
        }
        _ => unreachable!("n is 1 or 2"),
    }
}

/// Strong connectivity of the directed graph with an edge i -> j whenever
/// `upper[i][j] > 0`, i != j. A 1x1 matrix is irreducible by convention.
pub fn is_irreducible(upper: &[Vec<f64>]) -> bool {
    let nc = upper.len();
    if nc == 1 {
        return true;
    }
    let reach = |transpose: bool| -> bool {
        let mut seen = vec![false; nc];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..nc {
                let w = if transpose { upper[j][i] } else { upper[i][j] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|s| *s)
    };
    reach(false) && reach(true)
}

/// Certifies the standing assumptions on a regular lattice with
/// `samples_per_period` points per period per axis (default 32 in the CLI).
pub fn validate_assumptions(
    spec: &ModelSpec,
    samples_per_period: usize,
) -> Result<AssumptionReport> {
    let s = samples_per_period.max(2);
    let nc = spec.n_comp;
    let n = spec.dim;

    // Periodicity of every field, sampled at s^2 random points each.
    let mut periodic = true;
    let mut periodicity_worst = 0.0f64;
    for (label, f) in spec.fields() {
        let check = exprlang::check_periodicity(&f.compiled, spec.period_t, &spec.periods_l, s * s)
            .map_err(|e| KppError::Model(format!("evaluating {label}: {e}")))?;
        periodicity_worst = periodicity_worst.max(check.worst_deviation);
        if !check.ok {
            periodic = false;
        }
    }

    // Lattice scan.
    let mut min_eig = Witness {
        what: "min eigenvalue of A".into(),
        t: 0.0,
        x: vec![0.0; n],
        value: f64::INFINITY,
    };
    let mut max_eig = f64::NEG_INFINITY;
    let mut max_q = 0.0f64;
    let mut min_off: Option<Witness> = None;
    let mut min_c = Witness {
        what: "min entry of Cmat".into(),
        t: 0.0,
        x: vec![0.0; n],
        value: f64::INFINITY,
    };
    let mut l_lo = vec![vec![f64::INFINITY; nc]; nc];
    let mut l_hi = vec![vec![f64::NEG_INFINITY; nc]; nc];
    let mut c_lo = vec![vec![f64::INFINITY; nc]; nc];
    let mut c_hi = vec![vec![f64::NEG_INFINITY; nc]; nc];

    let mut scratch = Vec::new();
    let mut x = vec![0.0; n];
    let mut a_val = vec![vec![0.0; n]; n];
    let space_count = s.pow(n as u32);
    for kt in 0..s {
        let t = spec.period_t * kt as f64 / s as f64;
        for lin in 0..space_count {
            let mut rem = lin;
            for (a, xa) in x.iter_mut().enumerate() {
                *xa = spec.periods_l[a] * (rem % s) as f64 / s as f64;
                rem /= s;
            }
            let mut ev = |f: &ExprField, label: &str| -> Result<f64> {
                f.compiled
                    .eval_with(t, &x, spec.period_t, &spec.periods_l, &mut scratch)
                    .map_err(|e| {
                        KppError::Model(format!(
                            "evaluating {label} ('{}') at t = {t}, x = {x:?}: {e}",
                            f.src
                        ))
                    })
            };
            for i in 0..nc {
                for al in 0..n {
                    for be in al..n {
                        let v = ev(&spec.diffusion[i][al][be], "A")?;
                        a_val[al][be] = v;
                        a_val[be][al] = v;
                    }
                }
                let lo = sym_min_eig(&a_val);
                if lo < min_eig.value {
                    min_eig = Witness {
                        what: format!("min eigenvalue of A[{}]", i + 1),
                        t,
                        x: x.clone(),
                        value: lo,
                    };
                }
                max_eig = max_eig.max(sym_max_eig(&a_val));
                for al in 0..n {
                    max_q = max_q.max(ev(&spec.advection[i][al], "q")?.abs());
                }
                for j in 0..nc {
                    let v = ev(&spec.lmat[i][j], "Lmat")?;
                    l_lo[i][j] = l_lo[i][j].min(v);
                    l_hi[i][j] = l_hi[i][j].max(v);
                    if i != j && min_off.as_ref().map(|w| v < w.value).unwrap_or(true) {
                        min_off = Some(Witness {
                            what: format!("Lmat[{}][{}]", i + 1, j + 1),
                            t,
                            x: x.clone(),
                            value: v,
                        });
                    }
                    let v = ev(&spec.cmat[i][j], "Cmat")?;
                    c_lo[i][j] = c_lo[i][j].min(v);
                    c_hi[i][j] = c_hi[i][j].max(v);
                    if v < min_c.value {
                        min_c = Witness {
                            what: format!("Cmat[{}][{}]", i + 1, j + 1),
                            t,
                            x: x.clone(),
                            value: v,
                        };
                    }
                }
            }
        }
    }

    let irreducible = is_irreducible(&l_hi);
    let sigma = l_hi
        .iter()
        .flatten()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        });
    let l_abs_max = l_lo
        .iter()
        .chain(l_hi.iter())
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let k_bound = [
        1.0,
        1.0 / min_eig.value.max(1e-300),
        max_eig,
        max_q,
        l_abs_max,
    ]
    .into_iter()
    .fold(1.0f64, f64::max);
    let l_max = l_hi
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let k_absorbing = if min_c.value > 0.0 {
        l_max.max(0.0) / min_c.value
    } else {
        f64::INFINITY
    };

    Ok(AssumptionReport {
        samples_per_period: s,
        periodic,
        periodicity_worst,
        ellipticity: min_eig.value > 0.0,
        min_ellipticity: min_eig,
        essentially_nonnegative: min_off.as_ref().map(|w| w.value >= 0.0).unwrap_or(true),
        min_offdiag: min_off,
        irreducible,
        positive_competition: min_c.value > 0.0,
        min_competition: min_c,
        lmat_lower: l_lo,
        lmat_upper: l_hi,
        cmat_lower: c_lo,
        cmat_upper: c_hi,
        sigma,
        k_bound,
        k_absorbing,
    })
}

// ---------------------------------------------------------------------------
// Coefficient sampling onto grids
// ---------------------------------------------------------------------------

/// Coefficients of one time slice sampled on a grid.
///
/// Centers are indexed by the grid's linear cell index. Face arrays exist for
/// each axis `al`: `a_face[i][al][be][f]` is A_i[al][be] at the face lattice
/// of axis `al` (between consecutive cells along `al`), where diagonal
/// interior values are arithmetic means of the adjacent centers and boundary
/// faces of a truncated box are sampled directly at the face point.
#[derive(Debug, Clone)]
pub struct SampledCoeffs {
    pub t: f64,
    /// [i][alpha][beta][cell]
    pub a_center: Vec<Vec<Vec<Vec<f64>>>>,
    /// [i][axis][beta][face]
    pub a_face: Vec<Vec<Vec<Vec<f64>>>>,
    /// [i][alpha][cell]
    pub q_center: Vec<Vec<Vec<f64>>>,
    /// [i][j][cell]
    pub l_center: Vec<Vec<Vec<f64>>>,
    /// [i][j][cell]
    pub c_center: Vec<Vec<Vec<f64>>>,
}

/// Samples every coefficient field at time `t` onto `grid`.
pub fn sample_coefficients(spec: &ModelSpec, grid: &Grid, t: f64) -> Result<SampledCoeffs> {
    let nc = spec.n_comp;
    let n = spec.dim;
    debug_assert_eq!(n, grid.dim());
    let cells = grid.cell_count();
    let mut scratch = Vec::new();
    let mut x = vec![0.0; n];

    let mut eval_at = |f: &ExprField, t: f64, x: &[f64]| -> Result<f64> {
        f.compiled
            .eval_with(t, x, spec.period_t, &spec.periods_l, &mut scratch)
            .map_err(|e| {
                KppError::Model(format!("evaluating '{}' at t = {t}, x = {x:?}: {e}", f.src))
            })
    };

    let mut a_center = vec![vec![vec![vec![0.0; cells]; n]; n]; nc];
    let mut q_center = vec![vec![vec![0.0; cells]; n]; nc];
    let mut l_center = vec![vec![vec![0.0; cells]; nc]; nc];
    let mut c_center = vec![vec![vec![0.0; cells]; nc]; nc];

    for cell in 0..cells {
        grid.cell_coords(cell, &mut x);
        for i in 0..nc {
            for al in 0..n {
                for be in al..n {
                    let v = eval_at(&spec.diffusion[i][al][be], t, &x)?;
                    a_center[i][al][be][cell] = v;
                    a_center[i][be][al][cell] = v;
                }
                q_center[i][al][cell] = eval_at(&spec.advection[i][al], t, &x)?;
            }
            for j in 0..nc {
                l_center[i][j][cell] = eval_at(&spec.lmat[i][j], t, &x)?;
                c_center[i][j][cell] = eval_at(&spec.cmat[i][j], t, &x)?;
            }
        }
    }

    // Faces: interior = mean of adjacent centers; Dirichlet boundary faces
    // sample the expression at the face point itself.
    let mut a_face = vec![vec![Vec::new(); n]; nc];
    for i in 0..nc {
        for axis in 0..n {
            let fcount = grid.face_lattice_count(axis);
            let mut slabs = vec![vec![0.0; fcount]; n];
            for f in 0..fcount {
                let (lo, hi) = grid.face_neighbors(axis, f);
                match (lo, hi) {
                    (Some(c0), Some(c1)) => {
                        for be in 0..n {
                            slabs[be][f] =
                                0.5 * (a_center[i][axis][be][c0] + a_center[i][axis][be][c1]);
                        }
                    }
                    _ => {
                        grid.face_coords(axis, f, &mut x);
                        for be in axis..n {
                            slabs[be][f] = eval_at(&spec.diffusion[i][axis][be], t, &x)?;
                        }
                        for be in 0..axis {
                            slabs[be][f] = eval_at(&spec.diffusion[i][be][axis], t, &x)?;
                        }
                    }
                }
            }
            a_face[i][axis] = slabs;
        }
    }

    Ok(SampledCoeffs {
        t,
        a_center,
        a_face,
        q_center,
        l_center,
        c_center,
    })
}
