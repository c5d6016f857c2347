//! Periodic torus discretisation and Fourier pseudo-spectral calculus.
//!
//! Nodes sit at `x_j = j L / M` along each axis; fields are stored as real
//! row-major arrays with axis 0 slowest. Transforms are complex FFTs along
//! each axis in turn. First-derivative symbols drop the Nyquist mode, and
//! the Laplacian is defined as the sum of those first derivatives applied
//! twice, so `laplacian == sum(ddx(ddx))` holds to rounding.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{QnsError, Result};

pub const MIN_POINTS: usize = 8;

pub struct Grid {
    dim: usize,
    points: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Signed mode index for each 1D position, `{-M/2+1, .., M/2}`.
    modes: Vec<i64>,
    /// First-derivative symbol `2 pi s / L`, zero at the Nyquist index.
    deriv: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("points", &self.points)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.length == other.length
    }
}

/// Build a shared grid for `dim` in 1..=3 with `points` (even, >= 8) nodes per axis.
pub fn make_grid(dim: usize, points: usize, length: f64) -> Result<Arc<Grid>> {
    Grid::new(dim, points, length).map(Arc::new)
}

impl Grid {
    pub fn new(dim: usize, points: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(QnsError::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if !points.is_multiple_of(2) {
            return Err(QnsError::InvalidGrid(format!("points per dimension must be even, got {points}")));
        }
        if points < MIN_POINTS {
            return Err(QnsError::InvalidGrid(format!(
                "points per dimension must be >= {MIN_POINTS}, got {points}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(QnsError::InvalidGrid(format!("length must be positive, got {length}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        let half = (points / 2) as i64;
        let modes: Vec<i64> = (0..points as i64)
            .map(|j| if j <= half { j } else { j - points as i64 })
            .collect();
        let deriv = modes
            .iter()
            .map(|&s| if s == half { 0.0 } else { 2.0 * PI * s as f64 / length })
            .collect();
        Ok(Grid {
            dim,
            points,
            length,
            forward,
            inverse,
            modes,
            deriv,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn node_count(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    /// Volume `|Omega| = L^d`.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Quadrature weight per node, `(L/M)^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Signed mode indices along one axis, in FFT storage order.
    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    /// Angular wavenumbers along one axis (Nyquist kept), in FFT storage order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        self.modes
            .iter()
            .map(|&s| 2.0 * PI * s as f64 / self.length)
            .collect()
    }

    /// Per-axis position indices of a flat node (or mode) index.
    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let m = self.points;
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rem % m;
            rem /= m;
        }
        idx
    }

    pub fn coordinates(&self, flat: usize) -> Vec<f64> {
        let idx = self.unflatten(flat);
        (0..self.dim)
            .map(|a| idx[a] as f64 * self.spacing())
            .collect()
    }

    /// Signed mode index of a flat spectral index along `axis`.
    pub fn mode_along(&self, flat: usize, axis: usize) -> i64 {
        self.modes[self.unflatten(flat)[axis]]
    }

    /// Derivative symbol vector (Nyquist zeroed) of a flat spectral index.
    pub fn derivative_symbol(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut k = [0.0; 3];
        for a in 0..self.dim {
            k[a] = self.deriv[idx[a]];
        }
        k
    }

    /// Largest absolute mode index of a flat spectral index over all axes.
    pub fn max_mode(&self, flat: usize) -> usize {
        let idx = self.unflatten(flat);
        (0..self.dim)
            .map(|a| self.modes[idx[a]].unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Highest mode index retained by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.points / 3
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.node_count());
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse transform; returns the real part, normalised by `M^d`.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, &self.inverse);
        let scale = 1.0 / self.node_count() as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.points;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Last axis is contiguous: one batched call.
        plan.process_with_scratch(buf, &mut scratch);
        if self.dim == 1 {
            return;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        for axis in 0..self.dim - 1 {
            let stride = m.pow((self.dim - 1 - axis) as u32);
            let outer = m.pow(axis as u32);
            for o in 0..outer {
                let base = o * m * stride;
                for inner in 0..stride {
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + j * stride + inner];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride + inner] = *v;
                    }
                }
            }
        }
    }

    /// Multiply each spectral coefficient by `symbol(flat)` and transform back.
    pub fn apply_symbol<F>(&self, data: &[f64], symbol: F) -> Vec<f64>
    where
        F: Fn(usize) -> Complex64,
    {
        let mut spec = self.forward(data);
        for (flat, c) in spec.iter_mut().enumerate() {
            *c *= symbol(flat);
        }
        self.inverse(spec)
    }
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn from_vec(grid: &Arc<Grid>, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() {
            return Err(QnsError::InvalidGrid(format!(
                "field has {} values, grid has {} nodes",
                data.len(),
                grid.node_count()
            )));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            data,
        })
    }

    pub fn constant(grid: &Arc<Grid>, value: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            data: vec![value; grid.node_count()],
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Sample `f(x)` at every node; `x` has `dim` coordinates.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &Arc<Grid>, f: F) -> Self {
        let data = (0..grid.node_count())
            .map(|i| f(&grid.coordinates(i)))
            .collect();
        ScalarField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &ScalarField, f: F) -> Self {
        assert!(same_grid(&self.grid, &other.grid), "fields live on different grids");
        ScalarField {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(QnsError::GridMismatch)
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `(L/M)^d * sum`, which is exact for band-limited integrands on the torus.
    pub fn integrate(&self) -> f64 {
        self.sum() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index and value of the smallest entry.
    pub fn argmin(&self) -> (usize, f64) {
        self.data
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `(integral |f|^p)^(1/p)`; `p = inf` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.max_abs();
        }
        let s: f64 = self.data.iter().map(|x| x.abs().powf(p)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / p)
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0)
    }

    pub fn ddx(&self, axis: usize) -> Result<ScalarField> {
        let dim = self.grid.dim();
        if axis >= dim {
            return Err(QnsError::AxisOutOfRange { axis, dim });
        }
        Ok(self.derivative(axis))
    }

    fn derivative(&self, axis: usize) -> ScalarField {
        let g = &self.grid;
        let data = g.apply_symbol(&self.data, |flat| {
            Complex64::new(0.0, g.derivative_symbol(flat)[axis])
        });
        ScalarField {
            grid: g.clone(),
            data,
        }
    }

    pub fn gradient(&self) -> VectorField {
        let g = &self.grid;
        let spec = g.forward(&self.data);
        let comps = (0..g.dim())
            .map(|axis| {
                let s: Vec<Complex64> = spec
                    .iter()
                    .enumerate()
                    .map(|(flat, c)| c * Complex64::new(0.0, g.derivative_symbol(flat)[axis]))
                    .collect();
                g.inverse(s)
            })
            .collect();
        VectorField {
            grid: g.clone(),
            comps,
        }
    }

    pub fn laplacian(&self) -> ScalarField {
        let g = &self.grid;
        let data = g.apply_symbol(&self.data, |flat| {
            let k = g.derivative_symbol(flat);
            Complex64::new(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]), 0.0)
        });
        ScalarField {
            grid: g.clone(),
            data,
        }
    }

    /// Spectral Hessian, `h[i][j] = d_i d_j f`.
    pub fn hessian(&self) -> TensorField {
        let g = &self.grid;
        let d = g.dim();
        let spec = g.forward(&self.data);
        let mut rows: Vec<Vec<ScalarField>> = vec![Vec::with_capacity(d); d];
        for i in 0..d {
            for j in 0..d {
                if j < i {
                    let sym = rows[j][i].clone();
                    rows[i].push(sym);
                    continue;
                }
                let s: Vec<Complex64> = spec
                    .iter()
                    .enumerate()
                    .map(|(flat, c)| {
                        let k = g.derivative_symbol(flat);
                        c * (-k[i] * k[j])
                    })
                    .collect();
                rows[i].push(ScalarField {
                    grid: g.clone(),
                    data: g.inverse(s),
                });
            }
        }
        TensorField { rows }
    }

    /// Zero every mode above the 2/3-rule cutoff.
    pub fn dealias(&self) -> ScalarField {
        let cutoff = self.grid.dealias_cutoff();
        self.truncate_modes(cutoff)
    }

    /// Zero every mode whose largest index exceeds `cap`.
    pub fn truncate_modes(&self, cap: usize) -> ScalarField {
        let g = &self.grid;
        let data = g.apply_symbol(&self.data, |flat| {
            if g.max_mode(flat) > cap {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
        ScalarField {
            grid: g.clone(),
            data,
        }
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<&ScalarField> for f64 {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        rhs.scale(self)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.scale(-1.0)
    }
}

/// `dim` components per node, each stored like a [`ScalarField`].
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<Grid>,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn from_components(components: Vec<ScalarField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| QnsError::InvalidGrid("vector field needs components".into()))?;
        let grid = first.grid.clone();
        if components.len() != grid.dim() {
            return Err(QnsError::InvalidGrid(format!(
                "vector field needs {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            if !same_grid(&c.grid, &grid) {
                return Err(QnsError::GridMismatch);
            }
        }
        Ok(VectorField {
            grid,
            comps: components.into_iter().map(|c| c.data).collect(),
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: vec![vec![0.0; grid.node_count()]; grid.dim()],
        }
    }

    pub fn constant(grid: &Arc<Grid>, value: &[f64]) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: (0..grid.dim())
                .map(|a| vec![value.get(a).copied().unwrap_or(0.0); grid.node_count()])
                .collect(),
        }
    }

    /// Sample component functions `f(axis, x)`.
    pub fn from_fn<F: Fn(usize, &[f64]) -> f64>(grid: &Arc<Grid>, f: F) -> Self {
        let comps = (0..grid.dim())
            .map(|a| {
                (0..grid.node_count())
                    .map(|i| f(a, &grid.coordinates(i)))
                    .collect()
            })
            .collect();
        VectorField {
            grid: grid.clone(),
            comps,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            data: self.comps[axis].clone(),
        }
    }

    pub fn components(&self) -> Vec<ScalarField> {
        (0..self.dim()).map(|a| self.component(a)).collect()
    }

    pub fn raw(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn raw_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|x| x.is_finite())
    }

    pub fn check_grid(&self, f: &ScalarField) -> Result<()> {
        if same_grid(&self.grid, &f.grid) {
            Ok(())
        } else {
            Err(QnsError::GridMismatch)
        }
    }

    pub fn map_components<F: Fn(&ScalarField) -> ScalarField>(&self, f: F) -> VectorField {
        let comps = (0..self.dim()).map(|a| f(&self.component(a)).data).collect();
        VectorField {
            grid: self.grid.clone(),
            comps,
        }
    }

    pub fn zip_components<F>(&self, other: &VectorField, f: F) -> VectorField
    where
        F: Fn(f64, f64) -> f64,
    {
        assert!(same_grid(&self.grid, &other.grid), "fields live on different grids");
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        VectorField {
            grid: self.grid.clone(),
            comps,
        }
    }

    pub fn scale(&self, a: f64) -> VectorField {
        self.map_components(|c| c.scale(a))
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> VectorField {
        self.map_components(|c| c * s)
    }

    /// Pointwise quotient by a scalar field.
    pub fn div_scalar(&self, s: &ScalarField) -> VectorField {
        self.map_components(|c| c.zip_map(s, |a, b| a / b))
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut out = vec![0.0; self.grid.node_count()];
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
                *o += x * y;
            }
        }
        ScalarField {
            grid: self.grid.clone(),
            data: out,
        }
    }

    /// Pointwise Euclidean norm squared.
    pub fn norm_squared(&self) -> ScalarField {
        self.dot(self)
    }

    pub fn magnitude(&self) -> ScalarField {
        self.norm_squared().map(f64::sqrt)
    }

    pub fn max_abs(&self) -> f64 {
        self.magnitude().max()
    }

    /// `L^p` norm of the pointwise Euclidean magnitude.
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.magnitude().lp_norm(p)
    }

    pub fn divergence(&self) -> ScalarField {
        let g = &self.grid;
        let mut acc = vec![Complex64::new(0.0, 0.0); g.node_count()];
        for (axis, comp) in self.comps.iter().enumerate() {
            let spec = g.forward(comp);
            for (flat, (a, c)) in acc.iter_mut().zip(spec).enumerate() {
                *a += c * Complex64::new(0.0, g.derivative_symbol(flat)[axis]);
            }
        }
        ScalarField {
            grid: g.clone(),
            data: g.inverse(acc),
        }
    }

    /// Velocity gradient `g[i][j] = d_j v_i`.
    pub fn gradient(&self) -> TensorField {
        let rows = (0..self.dim())
            .map(|i| self.component(i).gradient().components())
            .collect();
        TensorField { rows }
    }

    /// Componentwise Laplacian.
    pub fn laplacian(&self) -> VectorField {
        self.map_components(|c| c.laplacian())
    }

    pub fn dealias(&self) -> VectorField {
        self.map_components(|c| c.dealias())
    }

    pub fn truncate_modes(&self, cap: usize) -> VectorField {
        self.map_components(|c| c.truncate_modes(cap))
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a + b)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a - b)
    }
}

/// Square `dim x dim` field of scalars, `rows[i][j]`.
#[derive(Clone, Debug)]
pub struct TensorField {
    rows: Vec<Vec<ScalarField>>,
}

impl TensorField {
    pub fn from_rows(rows: Vec<Vec<ScalarField>>) -> Self {
        TensorField { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.rows[i][j]
    }

    pub fn transpose(&self) -> TensorField {
        let d = self.dim();
        let rows = (0..d)
            .map(|i| (0..d).map(|j| self.rows[j][i].clone()).collect())
            .collect();
        TensorField { rows }
    }

    /// Symmetric part `(A + A^T) / 2`.
    pub fn symmetric_part(&self) -> TensorField {
        let d = self.dim();
        let rows = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| self.rows[i][j].zip_map(&self.rows[j][i], |a, b| 0.5 * (a + b)))
                    .collect()
            })
            .collect();
        TensorField { rows }
    }

    /// Pointwise Frobenius product `A : B`.
    pub fn contract(&self, other: &TensorField) -> ScalarField {
        let mut acc = self.rows[0][0].zip_map(&other.rows[0][0], |a, b| a * b);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i == 0 && j == 0 {
                    continue;
                }
                let p = &self.rows[i][j] * &other.rows[i][j];
                acc = &acc + &p;
            }
        }
        acc
    }

    pub fn frobenius_squared(&self) -> ScalarField {
        self.contract(self)
    }

    /// Row divergence, `out_i = sum_j d_j A_ij`.
    pub fn divergence(&self) -> VectorField {
        let comps: Vec<ScalarField> = self
            .rows
            .iter()
            .map(|row| VectorField::from_components(row.clone()).map(|v| v.divergence()))
            .collect::<Result<_>>()
            .expect("tensor rows share a grid");
        VectorField::from_components(comps).expect("tensor rows share a grid")
    }

    pub fn scale_by(&self, s: &ScalarField) -> TensorField {
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|c| c * s).collect())
            .collect();
        TensorField { rows }
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        TensorField { rows }
    }

    pub fn scale(&self, a: f64) -> TensorField {
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|c| c.scale(a)).collect())
            .collect();
        TensorField { rows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(m: usize) -> Arc<Grid> {
        make_grid(1, m, 1.0).unwrap()
    }

    #[test]
    fn construction_and_rejections() {
        let g = grid1(64);
        assert_eq!(g.node_count(), 64);
        assert_eq!(g.spacing(), 1.0 / 64.0);
        let g2 = make_grid(2, 16, 2.0).unwrap();
        assert_eq!(g2.node_count(), 256);
        assert!(make_grid(1, 7, 1.0).is_err());
        assert!(make_grid(1, 6, 1.0).is_err());
        assert!(make_grid(1, 8, 0.0).is_err());
        assert!(make_grid(1, 8, -1.0).is_err());
        assert!(make_grid(4, 8, 1.0).is_err());
    }

    #[test]
    fn wavenumber_set_is_symmetric() {
        let g = grid1(8);
        let mut modes = g.modes().to_vec();
        modes.sort();
        assert_eq!(modes, vec![-3, -2, -1, 0, 1, 2, 3, 4]);
        let k = g.wavenumbers();
        assert!((k[1] - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_sine_is_exact() {
        let g = grid1(64);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let df = f.ddx(0).unwrap();
        let exact = ScalarField::from_fn(&g, |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
        assert!((&df - &exact).max_abs() < 1e-12);
        assert!(df.mean().abs() < 1e-14);
        assert!(ScalarField::constant(&g, 3.3).ddx(0).unwrap().max_abs() < 1e-14);
        assert!(matches!(f.ddx(1), Err(QnsError::AxisOutOfRange { .. })));
    }

    #[test]
    fn derivative_of_exp_sine_matches_closed_form() {
        let g = grid1(64);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin().exp());
        let exact = ScalarField::from_fn(&g, |x| {
            let s = 2.0 * PI * x[0];
            2.0 * PI * s.cos() * s.sin().exp()
        });
        let err = (&f.ddx(0).unwrap() - &exact).max_abs() / exact.max_abs();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn laplacian_cases() {
        let g = grid1(64);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let lap = f.laplacian();
        let exact = f.scale(-(2.0 * PI).powi(2));
        assert!((&lap - &exact).max_abs() < 1e-10);
        assert!(ScalarField::constant(&g, 2.0).laplacian().max_abs() < 1e-14);

        let h = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos().exp());
        let exact = ScalarField::from_fn(&g, |x| {
            let s = 2.0 * PI * x[0];
            let w = 2.0 * PI;
            w * w * (s.sin().powi(2) - s.cos()) * s.cos().exp()
        });
        let err = (&h.laplacian() - &exact).max_abs() / exact.max_abs();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn integration_cases() {
        let g = grid1(64);
        assert!((ScalarField::constant(&g, 3.0).integrate() - 3.0).abs() < 1e-15);
        let s = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        assert!(s.integrate().abs() < 1e-15);
        let s2 = s.map(|v| v * v);
        assert!((s2.integrate() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn multi_dimensional_derivatives() {
        let g = make_grid(2, 16, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let fy = f.ddx(1).unwrap();
        let exact = ScalarField::from_fn(&g, |x| -2.0 * PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        assert!((&fy - &exact).max_abs() < 1e-12);
        let lap = f.laplacian();
        let exact = f.scale(-(PI * PI + 4.0 * PI * PI));
        assert!((&lap - &exact).max_abs() < 1e-11);
        let g3 = make_grid(3, 8, 1.0).unwrap();
        let h = ScalarField::from_fn(&g3, |x| (2.0 * PI * x[2]).sin() + (2.0 * PI * x[0]).cos());
        let hz = h.ddx(2).unwrap();
        let exact = ScalarField::from_fn(&g3, |x| 2.0 * PI * (2.0 * PI * x[2]).cos());
        assert!((&hz - &exact).max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_sum_of_second_derivatives_including_nyquist() {
        let g = make_grid(2, 8, 1.0).unwrap();
        // Includes energy at the Nyquist index on axis 0.
        let f = ScalarField::from_fn(&g, |x| (8.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).sin() * x[0].sin());
        let mut sum = ScalarField::zeros(&g);
        for a in 0..2 {
            sum = &sum + &f.ddx(a).unwrap().ddx(a).unwrap();
        }
        assert!((&sum - &f.laplacian()).max_abs() < 1e-12);
    }

    fn bandlimited(g: &Arc<Grid>, coeffs: &[(f64, f64)]) -> ScalarField {
        ScalarField::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(j, (a, b))| {
                    let s = 2.0 * PI * (j + 1) as f64 * x[0];
                    a * s.cos() + b * s.sin()
                })
                .sum()
        })
    }

    proptest! {
        #[test]
        fn derivative_integrates_to_zero(c in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..20)) {
            let g = grid1(64);
            let f = bandlimited(&g, &c);
            prop_assert!(f.ddx(0).unwrap().integrate().abs() < 1e-12);
        }

        #[test]
        fn integration_by_parts(
            a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12),
            b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12),
        ) {
            let g = grid1(64);
            let f = bandlimited(&g, &a);
            let h = bandlimited(&g, &b);
            let lhs = (&f * &h.ddx(0).unwrap()).integrate() + (&h * &f.ddx(0).unwrap()).integrate();
            prop_assert!(lhs.abs() <= 1e-12 * (1.0 + f.l2_norm() * h.l2_norm()) * 100.0);
        }
    }

    #[test]
    fn truncation_keeps_low_modes() {
        let g = grid1(32);
        let f = bandlimited(&g, &[(1.0, 0.5), (0.2, 0.0), (0.0, 0.1)]);
        assert!((&f.truncate_modes(3) - &f).max_abs() < 1e-14);
        let low = f.truncate_modes(1);
        let exact = bandlimited(&g, &[(1.0, 0.5)]);
        assert!((&low - &exact).max_abs() < 1e-14);
        assert_eq!(g.dealias_cutoff(), 10);
    }
}
