//! Spatial discretization and single-step time integration.
//!
//! Two grid kinds: one periodicity cell `[0,L_1) x ... x [0,L_n)` with
//! periodic wrap-around, and a truncated box `[-R, R]^n` with
//! Dirichlet-zero boundary realized through ghost values. Cell points sit at
//! `x_j = j h` (periodic) or `x_j = -R + (j+1) h` with `h = 2R/(m+1)` (box),
//! so the box lattice including ghosts is uniform with ghosts exactly at
//! the boundary.
//!
//! The discrete generator realizes the spatial part of `∂_t u = G(t) u` with
//!
//! ```text
//!   G = ∇·(A_i ∇) − q_i·∇ + 𝐋 + diag( 2 A_i z·∇ + z·A_i z + ∇·(A_i z) − q_i·z )
//! ```
//!
//! (on constant fields with constant coefficients this reduces to the
//! algebraic action `(𝐋 + diag(z·A_i z − q_i·z)) u`). Diffusion is in flux
//! (divergence) form with face coefficients; advection and the `2 A_i z·∇`
//! drift use second-order central differences; the cross terms of an
//! anisotropic A (n = 2) use centered mixed differences. Time integration is
//! explicit two-stage Heun under a CFL bound.

use std::cell::RefCell;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{KppError, Result};
use crate::model::{sample_coefficients, ModelSpec, SampledCoeffs};

/// Boundary condition of an operator or evolution run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Periodic,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridKind {
    /// One periodicity cell, wrap-around indexing.
    PeriodicCell,
    /// `[-R, R]^n` with zero ghost values on the boundary.
    TruncatedBox { r: f64 },
}

/// Uniform lattice over one periodicity cell or a truncated box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub kind: GridKind,
    /// Cells per axis.
    pub m: Vec<usize>,
    /// Spacing per axis.
    pub h: Vec<f64>,
    /// Axis lengths (L_alpha for periodic, 2R for box).
    pub lens: Vec<f64>,
}

impl Grid {
    /// One periodicity cell of `spec` with `cells[alpha]` points per axis;
    /// the spacing divides each period exactly by construction.
    pub fn periodic_cell(spec: &ModelSpec, cells: &[usize]) -> Result<Grid> {
        if cells.len() != spec.dim {
            return Err(KppError::Grid(format!(
                "cells has {} entries, expected n = {}",
                cells.len(),
                spec.dim
            )));
        }
        if cells.iter().any(|m| *m < 2) {
            return Err(KppError::Grid("need at least 2 cells per axis".into()));
        }
        let h = cells
            .iter()
            .zip(&spec.periods_l)
            .map(|(m, l)| l / *m as f64)
            .collect();
        Ok(Grid {
            kind: GridKind::PeriodicCell,
            m: cells.to_vec(),
            h,
            lens: spec.periods_l.clone(),
        })
    }

    /// Truncated box `[-R, R]^dim` with `m` interior points per axis and
    /// ghost values pinned to zero at the boundary.
    pub fn truncated_box(dim: usize, r: f64, m: usize) -> Result<Grid> {
        if !(r > 0.0) {
            return Err(KppError::Grid(format!(
                "box half-width R = {r} must be positive"
            )));
        }
        if m < 2 {
            return Err(KppError::Grid(
                "need at least 2 interior points per axis".into(),
            ));
        }
        let h = 2.0 * r / (m + 1) as f64;
        Ok(Grid {
            kind: GridKind::TruncatedBox { r },
            m: vec![m; dim],
            h: vec![h; dim],
            lens: vec![2.0 * r; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn cell_count(&self) -> usize {
        self.m.iter().product()
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == GridKind::PeriodicCell
    }

    /// Natural boundary condition of this grid kind.
    pub fn boundary(&self) -> BoundaryKind {
        match self.kind {
            GridKind::PeriodicCell => BoundaryKind::Periodic,
            GridKind::TruncatedBox { .. } => BoundaryKind::Dirichlet,
        }
    }

    fn origin(&self, axis: usize) -> f64 {
        match self.kind {
            GridKind::PeriodicCell => 0.0,
            GridKind::TruncatedBox { r } => -r + self.h[axis],
        }
    }

    /// Coordinate of cell index j along one axis.
    pub fn x_center(&self, axis: usize, j: usize) -> f64 {
        self.origin(axis) + j as f64 * self.h[axis]
    }

    /// Writes the coordinates of linear cell `lin` into `x`.
    pub fn cell_coords(&self, lin: usize, x: &mut [f64]) {
        let mut rem = lin;
        for a in 0..self.dim() {
            x[a] = self.x_center(a, rem % self.m[a]);
            rem /= self.m[a];
        }
    }

    /// Per-axis indices of linear cell `lin`.
    pub fn cell_multi(&self, lin: usize) -> Vec<usize> {
        let mut rem = lin;
        let mut out = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            out.push(rem % self.m[a]);
            rem /= self.m[a];
        }
        out
    }

    /// Linear index from per-axis indices.
    pub fn cell_lin(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in (0..self.dim()).rev() {
            lin = lin * self.m[a] + idx[a];
        }
        lin
    }

    /// Number of face points along `axis` (other axes at cell extents).
    pub fn face_count_along(&self, axis: usize) -> usize {
        match self.kind {
            GridKind::PeriodicCell => self.m[axis],
            GridKind::TruncatedBox { .. } => self.m[axis] + 1,
        }
    }

    /// Total size of the face lattice of `axis`.
    pub fn face_lattice_count(&self, axis: usize) -> usize {
        self.face_count_along(axis) * self.cell_count() / self.m[axis]
    }

    fn face_multi(&self, axis: usize, flin: usize) -> Vec<usize> {
        let mut rem = flin;
        let mut out = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let e = if a == axis {
                self.face_count_along(axis)
            } else {
                self.m[a]
            };
            out.push(rem % e);
            rem /= e;
        }
        out
    }

    /// Linear face index on the face lattice of `axis`.
    pub fn face_lin(&self, axis: usize, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in (0..self.dim()).rev() {
            let e = if a == axis {
                self.face_count_along(axis)
            } else {
                self.m[a]
            };
            lin = lin * e + idx[a];
        }
        lin
    }

    /// Cells on the two sides of a face (`None` = Dirichlet ghost).
    /// Face k of a periodic axis separates cells k and (k+1) mod m; face k
    /// of a box axis separates cells k-1 and k, with faces 0 and m at the
    /// domain boundary.
    pub fn face_neighbors(&self, axis: usize, flin: usize) -> (Option<usize>, Option<usize>) {
        let mut idx = self.face_multi(axis, flin);
        let k = idx[axis];
        match self.kind {
            GridKind::PeriodicCell => {
                idx[axis] = k;
                let lo = self.cell_lin(&idx);
                idx[axis] = (k + 1) % self.m[axis];
                let hi = self.cell_lin(&idx);
                (Some(lo), Some(hi))
            }
            GridKind::TruncatedBox { .. } => {
                let lo = if k > 0 {
                    idx[axis] = k - 1;
                    Some(self.cell_lin(&idx))
                } else {
                    None
                };
                let hi = if k < self.m[axis] {
                    idx[axis] = k;
                    Some(self.cell_lin(&idx))
                } else {
                    None
                };
                (lo, hi)
            }
        }
    }

    /// Coordinates of a face point.
    pub fn face_coords(&self, axis: usize, flin: usize, x: &mut [f64]) {
        let idx = self.face_multi(axis, flin);
        for a in 0..self.dim() {
            if a == axis {
                let base = match self.kind {
                    GridKind::PeriodicCell => 0.5 * self.h[a],
                    GridKind::TruncatedBox { r } => -r + 0.5 * self.h[a],
                };
                x[a] = base + idx[a] as f64 * self.h[a];
            } else {
                x[a] = self.x_center(a, idx[a]);
            }
        }
    }

    /// Neighbor of cell `lin` one step along `axis` (`None` = ghost).
    pub fn shift(&self, lin: usize, axis: usize, dir: isize) -> Option<usize> {
        let mut idx = self.cell_multi(lin);
        let m = self.m[axis];
        let j = idx[axis] as isize + dir;
        match self.kind {
            GridKind::PeriodicCell => {
                idx[axis] = j.rem_euclid(m as isize) as usize;
                Some(self.cell_lin(&idx))
            }
            GridKind::TruncatedBox { .. } => {
                if j < 0 || j >= m as isize {
                    None
                } else {
                    idx[axis] = j as usize;
                    Some(self.cell_lin(&idx))
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// StateField
// ---------------------------------------------------------------------------

/// N real components sampled on a grid; component-major storage
/// (`data[i * cells + cell]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub n_comp: usize,
    /// Cells per axis (copied from the grid for serialization).
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
    /// Set when the field is known to be entrywise nonnegative.
    pub nonneg: bool,
}

impl StateField {
    pub fn zeros(n_comp: usize, grid: &Grid) -> StateField {
        StateField {
            n_comp,
            extents: grid.m.clone(),
            data: vec![0.0; n_comp * grid.cell_count()],
            nonneg: true,
        }
    }

    pub fn constant(n_comp: usize, grid: &Grid, v: f64) -> StateField {
        StateField {
            n_comp,
            extents: grid.m.clone(),
            data: vec![v; n_comp * grid.cell_count()],
            nonneg: v >= 0.0,
        }
    }

    /// Builds a field from a function of (component, x).
    pub fn from_fn(
        n_comp: usize,
        grid: &Grid,
        mut f: impl FnMut(usize, &[f64]) -> f64,
    ) -> StateField {
        let cells = grid.cell_count();
        let mut data = vec![0.0; n_comp * cells];
        let mut x = vec![0.0; grid.dim()];
        for c in 0..cells {
            grid.cell_coords(c, &mut x);
            for i in 0..n_comp {
                data[i * cells + c] = f(i, &x);
            }
        }
        let nonneg = data.iter().all(|v| *v >= 0.0);
        StateField {
            n_comp,
            extents: grid.m.clone(),
            data,
            nonneg,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn comp(&self, i: usize) -> &[f64] {
        let c = self.cell_count();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn comp_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cell_count();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Largest entry over all components.
    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rescales so the maximum entry equals exactly 1 (requires max > 0).
    pub fn normalize_max(&mut self) -> f64 {
        let m = self.max();
        if m > 0.0 && m.is_finite() {
            for v in &mut self.data {
                *v /= m;
            }
        }
        m
    }

    /// Writes the binary form: magic "KPPF", version, N, n, cells per axis
    /// (u32 little-endian), then the doubles.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"KPPF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n_comp as u32).to_le_bytes())?;
        w.write_all(&(self.extents.len() as u32).to_le_bytes())?;
        for m in &self.extents {
            w.write_all(&(*m as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_from(r: &mut impl Read) -> Result<StateField> {
        let bad = |msg: &str| KppError::Grid(format!("state field: {msg}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"KPPF" {
            return Err(bad("bad magic (not a KPPF file)"));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(r)?;
        if version != 1 {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n_comp = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        if n_comp == 0 || dim == 0 || dim > 2 {
            return Err(bad("invalid shape"));
        }
        let mut extents = Vec::with_capacity(dim);
        for _ in 0..dim {
            extents.push(read_u32(r)? as usize);
        }
        let cells: usize = extents.iter().product();
        let mut data = vec![0.0f64; n_comp * cells];
        let mut f64buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        let nonneg = data.iter().all(|v| *v >= 0.0);
        Ok(StateField {
            n_comp,
            extents,
            data,
            nonneg,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<StateField> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Plot-ready CSV: coordinates then one column per component.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let n = grid.dim();
        let cells = grid.cell_count();
        let mut out = String::new();
        for a in 0..n {
            out.push_str(&format!("x{},", a + 1));
        }
        for i in 0..self.n_comp {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("u{}", i + 1));
        }
        out.push('\n');
        let mut x = vec![0.0; n];
        for c in 0..cells {
            grid.cell_coords(c, &mut x);
            for xa in &x {
                out.push_str(&format!("{xa},"));
            }
            for i in 0..self.n_comp {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", self.data[i * cells + c]));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Discrete generator
// ---------------------------------------------------------------------------

/// Arrays derived from one coefficient sample and a shift z.
#[derive(Debug, Clone)]
pub struct OperatorTables {
    pub coeffs: SampledCoeffs,
    /// (A_i z)_alpha at centers: [i][alpha][cell].
    pub az_center: Vec<Vec<Vec<f64>>>,
    /// z·A_i z + ∇·(A_i z) − q_i·z at centers: [i][cell].
    pub zero_order: Vec<Vec<f64>>,
}

fn build_tables(spec: &ModelSpec, grid: &Grid, z: &[f64], coeffs: SampledCoeffs) -> OperatorTables {
    let nc = spec.n_comp;
    let n = spec.dim;
    let cells = grid.cell_count();
    let zero = z.iter().all(|v| *v == 0.0);
    let mut az_center = vec![vec![vec![0.0; cells]; n]; nc];
    let mut zero_order = vec![vec![0.0; cells]; nc];
    if zero {
        return OperatorTables {
            coeffs,
            az_center,
            zero_order,
        };
    }
    for i in 0..nc {
        for c in 0..cells {
            let mut zaz = 0.0;
            let mut qz = 0.0;
            for al in 0..n {
                let mut az = 0.0;
                for be in 0..n {
                    az += coeffs.a_center[i][al][be][c] * z[be];
                }
                az_center[i][al][c] = az;
                zaz += z[al] * az;
                qz += coeffs.q_center[i][al][c] * z[al];
            }
            zero_order[i][c] = zaz - qz;
        }
        // Divergence of A_i z by central differences of the face samples.
        for c in 0..cells {
            let idx = grid.cell_multi(c);
            let mut div = 0.0;
            for al in 0..n {
                let mut fidx = idx.clone();
                // Face "below" and "above" cell j along al.
                let (f_lo, f_hi) = match grid.kind {
                    GridKind::PeriodicCell => {
                        let m = grid.m[al];
                        fidx[al] = (idx[al] + m - 1) % m;
                        let lo = grid.face_lin(al, &fidx);
                        fidx[al] = idx[al];
                        (lo, grid.face_lin(al, &fidx))
                    }
                    GridKind::TruncatedBox { .. } => {
                        fidx[al] = idx[al];
                        let lo = grid.face_lin(al, &fidx);
                        fidx[al] = idx[al] + 1;
                        (lo, grid.face_lin(al, &fidx))
                    }
                };
                let mut s_lo = 0.0;
                let mut s_hi = 0.0;
                for be in 0..n {
                    s_lo += coeffs.a_face[i][al][be][f_lo] * z[be];
                    s_hi += coeffs.a_face[i][al][be][f_hi] * z[be];
                }
                div += (s_hi - s_lo) / grid.h[al];
            }
            zero_order[i][c] += div;
        }
    }
    OperatorTables {
        coeffs,
        az_center,
        zero_order,
    }
}

/// Small keyed cache of operator tables; capacity 4 covers the two Heun
/// stage times of the current and next step.
struct TableCache {
    slots: Vec<(u64, Arc<OperatorTables>)>,
    /// For time-independent specs a single entry is reused for every t.
    frozen: Option<Arc<OperatorTables>>,
}

/// The discrete shifted generator bound to a model, grid, shift, and
/// boundary kind. Construction validates compatibility; tables for each
/// evaluation time are built on demand and cached.
pub struct DiscreteOperator<'a> {
    pub spec: &'a ModelSpec,
    pub grid: &'a Grid,
    pub z: Vec<f64>,
    pub bc: BoundaryKind,
    cache: RefCell<TableCache>,
}

impl<'a> DiscreteOperator<'a> {
    pub fn new(spec: &'a ModelSpec, grid: &'a Grid, z: &[f64], bc: BoundaryKind) -> Result<Self> {
        if grid.dim() != spec.dim {
            return Err(KppError::Grid(format!(
                "grid dimension {} does not match model dimension {}",
                grid.dim(),
                spec.dim
            )));
        }
        if z.len() != spec.dim {
            return Err(KppError::Grid(format!(
                "shift z has {} entries, expected {}",
                z.len(),
                spec.dim
            )));
        }
        if bc != grid.boundary() {
            return Err(KppError::Grid(
                "boundary kind does not match the grid (periodic cell ⇔ periodic, truncated box ⇔ dirichlet)"
                    .into(),
            ));
        }
        if !grid.is_periodic() && z.iter().any(|v| *v != 0.0) {
            return Err(KppError::Grid(
                "the exponential shift z is only meaningful on a periodic cell".into(),
            ));
        }
        Ok(DiscreteOperator {
            spec,
            grid,
            z: z.to_vec(),
            bc,
            cache: RefCell::new(TableCache {
                slots: Vec::new(),
                frozen: None,
            }),
        })
    }

    /// Coefficient tables at time `t` (cached).
    pub fn tables_at(&self, t: f64) -> Result<Arc<OperatorTables>> {
        if self.spec.time_independent() {
            let mut cache = self.cache.borrow_mut();
            if let Some(tb) = &cache.frozen {
                return Ok(tb.clone());
            }
            let coeffs = sample_coefficients(self.spec, self.grid, 0.0)?;
            let tb = Arc::new(build_tables(self.spec, self.grid, &self.z, coeffs));
            cache.frozen = Some(tb.clone());
            return Ok(tb);
        }
        let key = t.to_bits();
        {
            let cache = self.cache.borrow();
            if let Some((_, tb)) = cache.slots.iter().find(|(k, _)| *k == key) {
                return Ok(tb.clone());
            }
        }
        let coeffs = sample_coefficients(self.spec, self.grid, t)?;
        let tb = Arc::new(build_tables(self.spec, self.grid, &self.z, coeffs));
        let mut cache = self.cache.borrow_mut();
        if cache.slots.len() >= 4 {
            cache.slots.remove(0);
        }
        cache.slots.push((key, tb.clone()));
        Ok(tb)
    }
}

/// Applies the generator with explicit tables (the inner kernel). `out` is
/// overwritten.
pub fn apply_with_tables(
    spec: &ModelSpec,
    grid: &Grid,
    tables: &OperatorTables,
    u: &StateField,
    out: &mut StateField,
) {
    let nc = spec.n_comp;
    let n = grid.dim();
    let cells = grid.cell_count();
    debug_assert_eq!(u.n_comp, nc);
    debug_assert_eq!(u.cell_count(), cells);
    let co = &tables.coeffs;

    // Cross-derivative scratch (n = 2 with anisotropic A only).
    let needs_cross = n == 2 && (0..nc).any(|i| co.a_center[i][0][1].iter().any(|v| *v != 0.0));
    let mut w = if needs_cross {
        vec![0.0; cells]
    } else {
        Vec::new()
    };

    for i in 0..nc {
        let ui = u.comp(i);

        // Zero-order shift terms and the coupling 𝐋u.
        {
            let zo = &tables.zero_order[i];
            let oi = out.comp_mut(i);
            for c in 0..cells {
                oi[c] = zo[c] * ui[c];
            }
            for j in 0..nc {
                let lij = &co.l_center[i][j];
                let uj = u.comp(j);
                let oi = out.comp_mut(i);
                for c in 0..cells {
                    oi[c] += lij[c] * uj[c];
                }
            }
        }

        // Per-axis diffusion flux and first-order terms.
        for al in 0..n {
            let h = grid.h[al];
            let inv_h2 = 1.0 / (h * h);
            let inv_2h = 0.5 / h;
            let aface = &co.a_face[i][al][al];
            let qc = &co.q_center[i][al];
            let azc = &tables.az_center[i][al];
            let m = grid.m[al];
            // Iterate cells in multi-index order to know the axis position.
            let stride_count = cells / m;
            for s in 0..stride_count {
                for j in 0..m {
                    // Rebuild the linear index: axis `al` set to j, other
                    // axes enumerated by s in their row-major order.
                    let lin = lin_with_axis(grid, al, j, s);
                    let (u_lo, f_lo, u_hi, f_hi) = match grid.kind {
                        GridKind::PeriodicCell => {
                            let jm = (j + m - 1) % m;
                            let jp = (j + 1) % m;
                            let lo_cell = lin_with_axis(grid, al, jm, s);
                            let hi_cell = lin_with_axis(grid, al, jp, s);
                            let f_lo = face_lin_with_axis(grid, al, jm, s);
                            let f_hi = face_lin_with_axis(grid, al, j, s);
                            (ui[lo_cell], f_lo, ui[hi_cell], f_hi)
                        }
                        GridKind::TruncatedBox { .. } => {
                            let lo = if j > 0 {
                                ui[lin_with_axis(grid, al, j - 1, s)]
                            } else {
                                0.0
                            };
                            let hi = if j + 1 < m {
                                ui[lin_with_axis(grid, al, j + 1, s)]
                            } else {
                                0.0
                            };
                            let f_lo = face_lin_with_axis(grid, al, j, s);
                            let f_hi = face_lin_with_axis(grid, al, j + 1, s);
                            (lo, f_lo, hi, f_hi)
                        }
                    };
                    let uc = ui[lin];
                    let diff = (aface[f_hi] * (u_hi - uc) - aface[f_lo] * (uc - u_lo)) * inv_h2;
                    let drift = (2.0 * azc[lin] - qc[lin]) * (u_hi - u_lo) * inv_2h;
                    out.comp_mut(i)[lin] += diff + drift;
                }
            }
        }

        // Mixed second derivatives: D_al( A_albe D_be u ) for al != be,
        // centered both times, ghost contributions zero.
        if needs_cross {
            for (al, be) in [(0usize, 1usize), (1usize, 0usize)] {
                let a_off = &co.a_center[i][0][1];
                let inv_2hb = 0.5 / grid.h[be];
                let inv_2ha = 0.5 / grid.h[al];
                for c in 0..cells {
                    let up = grid.shift(c, be, 1).map_or(0.0, |k| ui[k]);
                    let dn = grid.shift(c, be, -1).map_or(0.0, |k| ui[k]);
                    w[c] = a_off[c] * (up - dn) * inv_2hb;
                }
                let oi = out.comp_mut(i);
                for c in 0..cells {
                    let up = grid.shift(c, al, 1).map_or(0.0, |k| w[k]);
                    let dn = grid.shift(c, al, -1).map_or(0.0, |k| w[k]);
                    oi[c] += (up - dn) * inv_2ha;
                }
            }
        }
    }
    out.nonneg = false;
}

/// Linear cell index with axis `al` at position `j` and the remaining axes
/// enumerated by `s` (row-major over the other axes).
#[inline]
fn lin_with_axis(grid: &Grid, al: usize, j: usize, s: usize) -> usize {
    match grid.dim() {
        1 => j,
        2 => {
            if al == 0 {
                j + grid.m[0] * s
            } else {
                s + grid.m[0] * j
            }
        }
        _ => unreachable!(),
    }
}

/// Same, on the face lattice of axis `al`.
#[inline]
fn face_lin_with_axis(grid: &Grid, al: usize, k: usize, s: usize) -> usize {
    let fc = grid.face_count_along(al);
    match grid.dim() {
        1 => k,
        2 => {
            if al == 0 {
                k + fc * s
            } else {
                s + grid.m[0] * k
            }
        }
        _ => unreachable!(),
    }
}

/// Applies the discrete generator at time `t`: returns `G(t) u`.
pub fn apply_generator(op: &DiscreteOperator, u: &StateField, t: f64) -> Result<StateField> {
    if u.n_comp != op.spec.n_comp || u.cell_count() != op.grid.cell_count() {
        return Err(KppError::Grid(format!(
            "field shape ({} comps, {} cells) does not match operator ({} comps, {} cells)",
            u.n_comp,
            u.cell_count(),
            op.spec.n_comp,
            op.grid.cell_count()
        )));
    }
    let tables = op.tables_at(t)?;
    let mut out = StateField::zeros(u.n_comp, op.grid);
    apply_with_tables(op.spec, op.grid, &tables, u, &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// CFL bound
// ---------------------------------------------------------------------------

/// Largest stable explicit step times `safety`:
/// `safety · min over lattice [ Σ_α 2 max_i A^i_αα/h_α² + Σ_α max_i (|q_iα| + 2|(A_i z)_α|)/h_α + max_i reaction bound ]⁻¹`
/// where the reaction bound collects `Σ_j |l_ij| + |z·A_i z| + |∇·(A_i z)| + |q_i·z|`.
/// Time-dependent coefficients are scanned at 24 sample times per period.
pub fn cfl_dt(spec: &ModelSpec, grid: &Grid, z: &[f64], safety: f64) -> Result<f64> {
    let nc = spec.n_comp;
    let n = grid.dim();
    let cells = grid.cell_count();
    let nt = if spec.time_independent() { 1 } else { 24 };
    let mut worst = 0.0f64;
    for kt in 0..nt {
        let t = spec.period_t * kt as f64 / nt as f64;
        let coeffs = sample_coefficients(spec, grid, t)?;
        let tables = build_tables(spec, grid, z, coeffs);
        let co = &tables.coeffs;
        for c in 0..cells {
            let mut denom = 0.0f64;
            for al in 0..n {
                let mut a_max = 0.0f64;
                let mut adv_max = 0.0f64;
                for i in 0..nc {
                    a_max = a_max.max(co.a_center[i][al][al][c]);
                    adv_max = adv_max
                        .max(co.q_center[i][al][c].abs() + 2.0 * tables.az_center[i][al][c].abs());
                }
                denom += 2.0 * a_max / (grid.h[al] * grid.h[al]) + adv_max / grid.h[al];
            }
            let mut react = 0.0f64;
            for i in 0..nc {
                let mut r = 0.0;
                for j in 0..nc {
                    r += co.l_center[i][j][c].abs();
                }
                // |z·A_i z| + |q_i·z| and the divergence term: bound the
                // combined zero-order coefficient by its parts.
                let mut zaz = 0.0;
                let mut qz = 0.0;
                for al in 0..n {
                    zaz += z[al] * tables.az_center[i][al][c];
                    qz += co.q_center[i][al][c] * z[al];
                }
                let div = tables.zero_order[i][c] - (zaz - qz);
                r += zaz.abs() + qz.abs() + div.abs();
                react = react.max(r);
            }
            worst = worst.max(denom + react);
        }
    }
    if worst <= 0.0 {
        return Err(KppError::Grid(
            "degenerate operator: zero CFL denominator".into(),
        ));
    }
    Ok(safety / worst)
}

/// Largest cell Péclet number |q_iα| h_α / (2 A_iαα) over the lattice; the
/// CLI warns when it exceeds 1 (central advection may oscillate).
pub fn peclet_number(spec: &ModelSpec, grid: &Grid) -> Result<f64> {
    let nc = spec.n_comp;
    let n = grid.dim();
    let cells = grid.cell_count();
    let nt = if spec.time_independent() { 1 } else { 8 };
    let mut worst = 0.0f64;
    for kt in 0..nt {
        let t = spec.period_t * kt as f64 / nt as f64;
        let co = sample_coefficients(spec, grid, t)?;
        for i in 0..nc {
            for al in 0..n {
                for c in 0..cells {
                    let a = co.a_center[i][al][al][c];
                    if a > 0.0 {
                        worst = worst.max(co.q_center[i][al][c].abs() * grid.h[al] / (2.0 * a));
                    }
                }
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Time stepping
// ---------------------------------------------------------------------------

fn check_cfl(op: &DiscreteOperator, dt: f64) -> Result<()> {
    let bound = cfl_dt(op.spec, op.grid, &op.z, 1.0)?;
    if dt > bound * (1.0 + 1e-12) {
        return Err(KppError::Cfl {
            dt,
            required: bound,
        });
    }
    Ok(())
}

/// One explicit Heun step of `∂_t u = G(t) u`; second order in dt.
pub fn step_linear(op: &DiscreteOperator, u: &StateField, t: f64, dt: f64) -> Result<StateField> {
    check_cfl(op, dt)?;
    step_linear_unchecked(op, u, t, dt)
}

/// Heun step without re-deriving the CFL bound (callers that already sized
/// dt from [`cfl_dt`]).
pub fn step_linear_unchecked(
    op: &DiscreteOperator,
    u: &StateField,
    t: f64,
    dt: f64,
) -> Result<StateField> {
    let t1 = op.tables_at(t)?;
    let mut k1 = StateField::zeros(u.n_comp, op.grid);
    apply_with_tables(op.spec, op.grid, &t1, u, &mut k1);
    let mut mid = u.clone();
    for (m, k) in mid.data.iter_mut().zip(&k1.data) {
        *m += dt * k;
    }
    let t2 = op.tables_at(t + dt)?;
    let mut k2 = StateField::zeros(u.n_comp, op.grid);
    apply_with_tables(op.spec, op.grid, &t2, &mid, &mut k2);
    let mut out = u.clone();
    for ((o, a), b) in out.data.iter_mut().zip(&k1.data).zip(&k2.data) {
        *o += 0.5 * dt * (a + b);
    }
    out.nonneg = false;
    Ok(out)
}

/// Reaction term of the semilinear step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reaction {
    /// R = −(𝐂u) ∘ u (the 𝐋u part lives in the linear generator).
    Kpp,
    /// R = −D u^∘(1+p), cooperative surrogate; odd-extended as −D u|u|^p.
    CoopPower { d: f64, p: f64 },
    /// R = −D′ u ∘ |u|, cooperative surrogate.
    CoopQuadratic { dprime: f64 },
}

impl Reaction {
    /// Adds R(u) to `out` given the coefficient tables of the stage time.
    fn add_to(
        &self,
        co: &SampledCoeffs,
        nc: usize,
        cells: usize,
        u: &StateField,
        out: &mut StateField,
    ) {
        match *self {
            Reaction::Kpp => {
                for i in 0..nc {
                    for j in 0..nc {
                        let cij = &co.c_center[i][j];
                        let uj = u.comp(j);
                        let ui_off = i * cells;
                        for c in 0..cells {
                            out.data[ui_off + c] -= cij[c] * uj[c] * u.data[ui_off + c];
                        }
                    }
                }
            }
            Reaction::CoopPower { d, p } => {
                for (o, v) in out.data.iter_mut().zip(&u.data) {
                    *o -= d * v * v.abs().powf(p);
                }
            }
            Reaction::CoopQuadratic { dprime } => {
                for (o, v) in out.data.iter_mut().zip(&u.data) {
                    *o -= dprime * v * v.abs();
                }
            }
        }
    }

    /// Magnitude bound of the reaction Jacobian at amplitude `amp`, used to
    /// include the nonlinearity in step-size selection.
    pub fn slope_bound(&self, spec: &ModelSpec, report_cmax: f64, amp: f64) -> f64 {
        match *self {
            Reaction::Kpp => 2.0 * spec.n_comp as f64 * report_cmax * amp.max(0.0),
            Reaction::CoopPower { d, p } => (1.0 + p) * d.abs() * amp.abs().powf(p),
            Reaction::CoopQuadratic { dprime } => 2.0 * dprime.abs() * amp.abs(),
        }
    }
}

/// Result of one semilinear step: the new field plus the total magnitude
/// clipped at zero (a solver-quality diagnostic, expected ≪ solver error).
pub struct SemiStep {
    pub field: StateField,
    pub clipped: f64,
}

/// One Heun step of `∂_t u = G(t) u + R(u)` with clipping at zero.
/// The generator uses z = 0 and the grid's natural boundary kind.
pub fn step_semilinear(
    spec: &ModelSpec,
    grid: &Grid,
    u: &StateField,
    t: f64,
    dt: f64,
    reaction: Reaction,
) -> Result<StateField> {
    let z = vec![0.0; spec.dim];
    let op = DiscreteOperator::new(spec, grid, &z, grid.boundary())?;
    Ok(step_semilinear_with(&op, u, t, dt, reaction)?.field)
}

/// Semilinear Heun step reusing a caller-held operator (and its table
/// cache); reports the clipped magnitude.
pub fn step_semilinear_with(
    op: &DiscreteOperator,
    u: &StateField,
    t: f64,
    dt: f64,
    reaction: Reaction,
) -> Result<SemiStep> {
    debug_assert!(op.z.iter().all(|v| *v == 0.0));
    let nc = u.n_comp;
    let cells = u.cell_count();
    let t1 = op.tables_at(t)?;
    let mut k1 = StateField::zeros(nc, op.grid);
    apply_with_tables(op.spec, op.grid, &t1, u, &mut k1);
    reaction.add_to(&t1.coeffs, nc, cells, u, &mut k1);

    let mut clipped = 0.0;
    let mut mid = u.clone();
    for (m, k) in mid.data.iter_mut().zip(&k1.data) {
        *m += dt * k;
        if *m < 0.0 {
            clipped += -*m;
            *m = 0.0;
        }
    }

    let t2 = op.tables_at(t + dt)?;
    let mut k2 = StateField::zeros(nc, op.grid);
    apply_with_tables(op.spec, op.grid, &t2, &mid, &mut k2);
    reaction.add_to(&t2.coeffs, nc, cells, &mid, &mut k2);

    let mut out = u.clone();
    for ((o, a), b) in out.data.iter_mut().zip(&k1.data).zip(&k2.data) {
        *o += 0.5 * dt * (a + b);
        if *o < 0.0 {
            clipped += -*o;
            *o = 0.0;
        }
    }
    if !out.is_finite() {
        return Err(KppError::BlowUp {
            step: 0,
            msg: format!("non-finite value after step at t = {t}"),
        });
    }
    out.nonneg = true;
    Ok(SemiStep {
        field: out,
        clipped,
    })
}
