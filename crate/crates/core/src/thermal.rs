//! Steady-state thermal model of a register file.
//!
//! The die area is divided into square cells. Adjacent cells exchange heat
//! through a lateral conductance and cells on the grid edge leak to ambient,
//! giving a sparse symmetric M-matrix `A` with `A * dT = P`, where `dT` is the
//! temperature rise over ambient and `P` the power injected into each cell.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ThermalError {
    #[error("topology {rows}x{cols} does not hold {registers} registers")]
    Topology {
        rows: usize,
        cols: usize,
        registers: usize,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("floating thermal network: no path to ambient")]
    Floating,
    #[error("solver did not converge (relative residual {0:e})")]
    NotConverged(f64),
    #[error("unknown topology preset `{0}`")]
    UnknownPreset(String),
}

/// Register rectangle in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| (x, y)))
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Center in cell units.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floorplan {
    pub grid_width: usize,
    pub grid_height: usize,
    pub cell_size_um: f64,
    pub rows: usize,
    pub cols: usize,
    /// Physical register slots, row-major over the block grid.
    pub registers: Vec<Rect>,
}

impl Floorplan {
    pub fn num_cells(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn num_registers(&self) -> usize {
        self.registers.len()
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.grid_width + x
    }

    /// Slot owning each cell, if any.
    pub fn cell_owners(&self) -> Vec<Option<usize>> {
        let mut owners = vec![None; self.num_cells()];
        for (r, rect) in self.registers.iter().enumerate() {
            for (x, y) in rect.cells() {
                owners[self.cell_index(x, y)] = Some(r);
            }
        }
        owners
    }

    /// Spreads per-slot power uniformly over each slot's cells.
    pub fn cell_power(&self, slot_power: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_cells()];
        for (rect, &w) in self.registers.iter().zip(slot_power) {
            let share = w / rect.area() as f64;
            for (x, y) in rect.cells() {
                p[y * self.grid_width + x] = share;
            }
        }
        p
    }
}

/// Lays `num_registers` registers out row-major on a `rows x cols` block grid.
pub fn build_floorplan(
    num_registers: usize,
    rows: usize,
    cols: usize,
    register_w_cells: usize,
    register_h_cells: usize,
    cell_size_um: f64,
) -> Result<Floorplan, ThermalError> {
    if rows * cols != num_registers {
        return Err(ThermalError::Topology {
            rows,
            cols,
            registers: num_registers,
        });
    }
    if register_w_cells == 0 || register_h_cells == 0 || !(cell_size_um > 0.0) {
        return Err(ThermalError::Param(
            "register dimensions and cell size must be positive".into(),
        ));
    }
    let registers = (0..num_registers)
        .map(|i| Rect {
            x: (i % cols) * register_w_cells,
            y: (i / cols) * register_h_cells,
            w: register_w_cells,
            h: register_h_cells,
        })
        .collect();
    Ok(Floorplan {
        grid_width: cols * register_w_cells,
        grid_height: rows * register_h_cells,
        cell_size_um,
        rows,
        cols,
        registers,
    })
}

/// Register-file topologies of the VLIW (32 registers) and ARM (16 registers)
/// study cases, as rows x columns of register blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    VliwC1,
    VliwC2,
    VliwC3,
    ArmC1,
    ArmC2,
    ArmC3,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::VliwC1,
        Preset::VliwC2,
        Preset::VliwC3,
        Preset::ArmC1,
        Preset::ArmC2,
        Preset::ArmC3,
    ];

    /// `(registers, rows, cols)`.
    pub fn shape(self) -> (usize, usize, usize) {
        match self {
            Preset::VliwC1 => (32, 32, 1),
            Preset::VliwC2 => (32, 16, 2),
            Preset::VliwC3 => (32, 4, 8),
            Preset::ArmC1 => (16, 16, 1),
            Preset::ArmC2 => (16, 8, 2),
            Preset::ArmC3 => (16, 2, 8),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::VliwC1 => "vliw-c1",
            Preset::VliwC2 => "vliw-c2",
            Preset::VliwC3 => "vliw-c3",
            Preset::ArmC1 => "arm-c1",
            Preset::ArmC2 => "arm-c2",
            Preset::ArmC3 => "arm-c3",
        }
    }

    /// Floorplan with 3x3-cell registers of 3 um cells.
    pub fn floorplan(self) -> Floorplan {
        let (n, r, c) = self.shape();
        build_floorplan(n, r, c, 3, 3, 3.0).expect("preset shapes are consistent")
    }
}

impl FromStr for Preset {
    type Err = ThermalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ThermalError::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// W/(m K).
    pub conductivity: f64,
    pub thickness_um: f64,
    /// W/K per exposed cell edge.
    pub boundary_conductance: f64,
    /// Degrees Celsius.
    pub ambient: f64,
}

impl Default for MaterialParams {
    /// Silicon, 10 um thick; the edge conductance makes a lone 3x3-cell
    /// register dissipating 1 mW rise by about 1 degree.
    fn default() -> Self {
        Self {
            conductivity: 150.0,
            thickness_um: 10.0,
            boundary_conductance: 1e-3 / 12.0,
            ambient: 45.0,
        }
    }
}

impl MaterialParams {
    fn validate(&self) -> Result<(), ThermalError> {
        let positive = [self.conductivity, self.thickness_um, self.boundary_conductance]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !self.ambient.is_finite() {
            return Err(ThermalError::Param(
                "material parameters must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    /// Lateral conductance between two adjacent cells, W/K. The shared face is
    /// `cell * thickness` and the path length is `cell`, so the cell size cancels.
    pub fn lateral_conductance(&self) -> f64 {
        self.conductivity * self.thickness_um * 1e-6
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// The assembled conductance system of one floorplan and power map.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSystem {
    pub width: usize,
    pub height: usize,
    pub a: CsrMatrix,
    pub power: Vec<f64>,
    /// Conductance from each cell to ambient (the diagonal excess of `a`).
    pub ambient_coupling: Vec<f64>,
    pub registers: Vec<Rect>,
    pub ambient: f64,
}

/// Assembles the 5-point conductance stencil for per-register power.
pub fn assemble_system(
    floorplan: &Floorplan,
    register_power: &[f64],
    material: &MaterialParams,
) -> Result<ThermalSystem, ThermalError> {
    if register_power.len() != floorplan.num_registers() {
        return Err(ThermalError::Param(format!(
            "expected {} register powers, got {}",
            floorplan.num_registers(),
            register_power.len()
        )));
    }
    if register_power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(ThermalError::Param(
            "register powers must be finite and nonnegative".into(),
        ));
    }
    assemble_from_cell_power(floorplan, &floorplan.cell_power(register_power), material)
}

/// Assembles the stencil for an explicit per-cell power map.
pub fn assemble_from_cell_power(
    floorplan: &Floorplan,
    cell_power: &[f64],
    material: &MaterialParams,
) -> Result<ThermalSystem, ThermalError> {
    material.validate()?;
    let (w, h) = (floorplan.grid_width, floorplan.grid_height);
    if cell_power.len() != w * h || cell_power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(ThermalError::Param(
            "cell power map must match the grid and be finite, nonnegative".into(),
        ));
    }
    let g = material.lateral_conductance();
    let b = material.boundary_conductance;
    let mut rows = Vec::with_capacity(w * h);
    let mut ambient_coupling = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut row = Vec::with_capacity(5);
            let mut diag = 0.0;
            let mut exposed = 0usize;
            let neighbors = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for nb in neighbors {
                match nb {
                    Some(j) => {
                        row.push((j, -g));
                        diag += g;
                    }
                    None => exposed += 1,
                }
            }
            let amb = exposed as f64 * b;
            ambient_coupling.push(amb);
            row.push((i, diag + amb));
            rows.push(row);
        }
    }
    Ok(ThermalSystem {
        width: w,
        height: h,
        a: CsrMatrix::from_rows(rows),
        power: cell_power.to_vec(),
        ambient_coupling,
        registers: floorplan.registers.clone(),
        ambient: material.ambient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterRise {
    pub avg: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureField {
    pub width: usize,
    pub height: usize,
    pub ambient: f64,
    /// Row-major rise over ambient, degrees.
    pub delta_t: Vec<f64>,
    pub per_register: Vec<RegisterRise>,
}

impl TemperatureField {
    pub fn max_rise(&self) -> f64 {
        self.delta_t.iter().copied().fold(0.0, f64::max)
    }

    pub fn avg_rise(&self) -> f64 {
        if self.delta_t.is_empty() {
            return 0.0;
        }
        self.delta_t.iter().sum::<f64>() / self.delta_t.len() as f64
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.delta_t[y * self.width + x]
    }

    /// One CSV line per grid row, degrees of rise.
    pub fn to_csv_heatmap(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width).map(|x| self.at(x, y).to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Direct for up to [`DIRECT_LIMIT`] cells, iterative above.
    Auto,
    /// Banded Cholesky factorization.
    Direct,
    /// Jacobi-preconditioned conjugate gradient.
    Iterative,
}

pub const DIRECT_LIMIT: usize = 4096;
const CG_TOLERANCE: f64 = 1e-10;

pub fn solve_steady_state(system: &ThermalSystem) -> Result<TemperatureField, ThermalError> {
    solve_with(system, SolverKind::Auto)
}

pub fn solve_with(system: &ThermalSystem, kind: SolverKind) -> Result<TemperatureField, ThermalError> {
    let n = system.a.dim();
    if system.ambient_coupling.iter().all(|&c| c <= 0.0) {
        return Err(ThermalError::Floating);
    }
    let delta_t = if system.power.iter().all(|&p| p == 0.0) {
        vec![0.0; n]
    } else {
        let kind = match kind {
            SolverKind::Auto if n <= DIRECT_LIMIT => SolverKind::Direct,
            SolverKind::Auto => SolverKind::Iterative,
            k => k,
        };
        match kind {
            SolverKind::Direct => banded_cholesky_solve(&system.a, &system.power)?,
            _ => pcg_solve(&system.a, &system.power, 10 * n)?,
        }
    };
    let per_register = system
        .registers
        .iter()
        .map(|r| {
            let vals: Vec<f64> = r.cells().map(|(x, y)| delta_t[y * system.width + x]).collect();
            RegisterRise {
                avg: vals.iter().sum::<f64>() / vals.len() as f64,
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(TemperatureField {
        width: system.width,
        height: system.height,
        ambient: system.ambient,
        delta_t,
        per_register,
    })
}

fn banded_cholesky_solve(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, ThermalError> {
    let n = a.dim();
    let bw = a.bandwidth();
    let width = bw + 1;
    // l[i * width + (j + bw - i)] holds L[i][j] for i - bw <= j <= i.
    let mut l = vec![0.0; n * width];
    let at = |i: usize, j: usize| i * width + (j + bw - i);
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j <= i {
                l[at(i, j)] = v;
            }
        }
    }
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let klo = lo.max(j.saturating_sub(bw));
            let mut sum = l[at(i, j)];
            for k in klo..j {
                sum -= l[at(i, k)] * l[at(j, k)];
            }
            if i == j {
                let scale = a.get(i, i).abs().max(f64::MIN_POSITIVE);
                if !(sum > 1e-12 * scale) {
                    return Err(ThermalError::Floating);
                }
                l[at(i, i)] = sum.sqrt();
            } else {
                l[at(i, j)] = sum / l[at(j, j)];
            }
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut s = y[i];
        for k in lo..i {
            s -= l[at(i, k)] * y[k];
        }
        y[i] = s / l[at(i, i)];
    }
    for i in (0..n).rev() {
        let hi = (i + bw).min(n - 1);
        let mut s = y[i];
        for k in (i + 1)..=hi {
            s -= l[at(k, i)] * y[k];
        }
        y[i] = s / l[at(i, i)];
    }
    Ok(y)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg_solve(a: &CsrMatrix, rhs: &[f64], max_iter: usize) -> Result<Vec<f64>, ThermalError> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let bnorm = norm(rhs);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        if norm(&r) <= CG_TOLERANCE * bnorm {
            return Ok(x);
        }
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(ThermalError::Floating);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bnorm;
    if rel <= CG_TOLERANCE {
        Ok(x)
    } else {
        Err(ThermalError::NotConverged(rel))
    }
}

/// Relative residual `|A x - P| / |P|` (zero when `P = 0` and `x = 0`).
pub fn relative_residual(system: &ThermalSystem, field: &TemperatureField) -> f64 {
    let ax = system.a.mul_vec(&field.delta_t);
    let r: Vec<f64> = ax.iter().zip(&system.power).map(|(a, p)| a - p).collect();
    let bn = norm(&system.power);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Checks that mirroring the power map about the vertical and the horizontal
/// grid axes mirrors the solved field, to 1e-9 relative to the peak rise.
pub fn mirror_symmetry_check(
    floorplan: &Floorplan,
    register_power: &[f64],
    material: &MaterialParams,
) -> Result<bool, ThermalError> {
    let (w, h) = (floorplan.grid_width, floorplan.grid_height);
    let base = floorplan.cell_power(register_power);
    let field = solve_steady_state(&assemble_from_cell_power(floorplan, &base, material)?)?;
    let tol = 1e-9 * field.max_rise().max(f64::MIN_POSITIVE);
    let flips: [&dyn Fn(usize, usize) -> (usize, usize); 2] =
        [&|x, y| (w - 1 - x, y), &|x, y| (x, h - 1 - y)];
    for flip in flips {
        let mut mirrored = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mx, my) = flip(x, y);
                mirrored[my * w + mx] = base[y * w + x];
            }
        }
        let mf = solve_steady_state(&assemble_from_cell_power(floorplan, &mirrored, material)?)?;
        for y in 0..h {
            for x in 0..w {
                let (mx, my) = flip(x, y);
                if (field.at(x, y) - mf.at(mx, my)).abs() > tol {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
