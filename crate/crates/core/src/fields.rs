//! Periodic lattice, nodal fields and second-order central operators.
//!
//! Every operator here is built from the periodic central stencil, so the
//! discrete summation-by-parts identity
//! `pair(gradient(f), v) == -pair(f, divergence(v))` holds up to round-off.
//! The balance residuals in [`crate::diagnostics`] rely on it.
//!
//! Fourier transforms are used only to evaluate Sobolev norms.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic lattice with `n` cells per axis in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "cells per axis must be a power of two >= 2, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {length}")));
        }
        Ok(Self { dim, n, length })
    }

    /// Box of side `2π`.
    pub fn periodic(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 2.0 * PI)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total node count `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one node, `dx^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Measure of the box, `length^dim`.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Same box with twice as many cells per axis.
    pub fn refined(&self) -> Self {
        Self { n: self.n * 2, ..*self }
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.length)
    }

    #[inline]
    pub(crate) fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Index of the neighbour one cell forward (`+e_axis`) with periodic wrap.
    #[inline]
    pub fn forward(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (idx / s) % self.n;
        if i + 1 == self.n {
            idx - i * s
        } else {
            idx + s
        }
    }

    /// Index of the neighbour one cell backward (`-e_axis`) with periodic wrap.
    #[inline]
    pub fn backward(&self, idx: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (idx / s) % self.n;
        if i == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Physical coordinates of node `idx`; unused axes are zero.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let dx = self.dx();
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = ((idx / self.stride(axis)) % self.n) as f64 * dx;
        }
        x
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "({}D, n = {}, L = {}) vs ({}D, n = {}, L = {})",
                self.dim, self.n, self.length, other.dim, other.n, other.length
            )));
        }
        Ok(())
    }
}

/// Real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|j| f(&grid.coords(j))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scalar field at node {j}")));
        }
        Ok(Self { grid, values })
    }

    /// Constructor for operator outputs that are finite whenever their inputs are.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::from_raw(self.grid, values)
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rectangle-rule integral over the box.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `dim` real components per node, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, comps: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    /// Same vector at every node; missing trailing entries are zero.
    pub fn constant(grid: Grid, v: &[f64]) -> Self {
        let comps = (0..grid.dim())
            .map(|a| vec![v.get(a).copied().unwrap_or(0.0); grid.len()])
            .collect();
        Self { grid, comps }
    }

    /// `f(x, component)` evaluated at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 3], usize) -> f64) -> Self {
        let comps = (0..grid.dim())
            .map(|a| (0..grid.len()).map(|j| f(&grid.coords(j), a)).collect())
            .collect();
        Self { grid, comps }
    }

    pub fn from_components(grid: Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "vector field needs {} components of {} values",
                grid.dim(),
                grid.len()
            )));
        }
        for (a, c) in comps.iter().enumerate() {
            if let Some(j) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("vector component {a} at node {j}")));
            }
        }
        Ok(Self { grid, comps })
    }

    pub(crate) fn from_raw(grid: Grid, comps: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(comps.len(), grid.dim());
        Self { grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.comps[a]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }

    /// Squared Euclidean magnitude at node `j`.
    #[inline]
    pub fn norm_sq_at(&self, j: usize) -> f64 {
        self.comps.iter().map(|c| c[j] * c[j]).sum()
    }

    pub fn magnitude(&self) -> ScalarField {
        ScalarField::from_raw(
            self.grid,
            (0..self.grid.len()).map(|j| self.norm_sq_at(j).sqrt()).collect(),
        )
    }

    /// Pointwise product with a scalar field.
    pub fn scaled_by(&self, s: &ScalarField) -> Self {
        debug_assert_eq!(self.grid, *s.grid());
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().zip(s.values()).map(|(v, w)| v * w).collect())
            .collect();
        Self::from_raw(self.grid, comps)
    }

    pub fn lin_comb(&self, a: f64, other: &VectorField, b: f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
            .collect();
        Self::from_raw(self.grid, comps)
    }

    /// Rectangle-rule integral of each component.
    pub fn integral(&self) -> Vec<f64> {
        let w = self.grid.cell_volume();
        self.comps.iter().map(|c| c.iter().sum::<f64>() * w).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }
}

/// Per-node `dim × dim` matrix; entry `(i, k)` is `∂_k v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    entries: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, i: usize, k: usize) -> &[f64] {
        &self.entries[i * self.grid.dim() + k]
    }
}

/// Anything that can be integrated component-wise on a grid.
pub trait Field {
    fn grid(&self) -> &Grid;
    fn comps(&self) -> Vec<&[f64]>;
}

impl Field for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn comps(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
}

impl Field for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn comps(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = *f.grid();
    let inv = 0.5 / g.dx();
    let v = f.values();
    let comps = (0..g.dim())
        .map(|a| (0..g.len()).map(|j| (v[g.forward(j, a)] - v[g.backward(j, a)]) * inv).collect())
        .collect();
    VectorField::from_raw(g, comps)
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let inv = 0.5 / g.dx();
    let mut out = vec![0.0; g.len()];
    for (a, c) in v.components().iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += (c[g.forward(j, a)] - c[g.backward(j, a)]) * inv;
        }
    }
    ScalarField::from_raw(g, out)
}

/// `(2d+1)`-point Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let inv = 1.0 / (g.dx() * g.dx());
    let v = f.values();
    let out = (0..g.len())
        .map(|j| {
            (0..g.dim())
                .map(|a| v[g.forward(j, a)] - 2.0 * v[j] + v[g.backward(j, a)])
                .sum::<f64>()
                * inv
        })
        .collect();
    ScalarField::from_raw(g, out)
}

/// Component-wise Laplacian of a vector field.
pub fn vector_laplacian(v: &VectorField) -> VectorField {
    let g = *v.grid();
    let comps = v
        .components()
        .iter()
        .map(|c| laplacian(&ScalarField::from_raw(g, c.clone())).into_values())
        .collect();
    VectorField::from_raw(g, comps)
}

/// Rows of the result are the central gradients of the components of `v`.
pub fn grad_tensor(v: &VectorField) -> TensorField {
    let g = *v.grid();
    let d = g.dim();
    let mut entries = Vec::with_capacity(d * d);
    for c in v.components() {
        let grad = gradient(&ScalarField::from_raw(g, c.clone()));
        entries.extend(grad.into_components());
    }
    TensorField { grid: g, entries }
}

/// Rectangle-rule inner product `Σ_j f_j·g_j dx^d`, summed over components.
pub fn pair<F: Field, G: Field>(f: &F, g: &G) -> Result<f64> {
    f.grid().check_same(g.grid())?;
    let (fc, gc) = (f.comps(), g.comps());
    if fc.len() != gc.len() {
        return Err(Error::GridMismatch(format!(
            "pairing a {}-component field with a {}-component field",
            fc.len(),
            gc.len()
        )));
    }
    let s: f64 = fc
        .iter()
        .zip(&gc)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(s * f.grid().cell_volume())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NormKind {
    Lebesgue { p: f64 },
    Sobolev { s: i32 },
}

/// Which norm to evaluate: `L^p` (`p ∈ [1, ∞]`) or the Hilbert-Sobolev `W^{s,2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec(NormKind);

impl NormSpec {
    pub fn lebesgue(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidNorm(format!("Lebesgue exponent must be >= 1, got {p}")));
        }
        Ok(Self(NormKind::Lebesgue { p }))
    }

    pub fn l2() -> Self {
        Self(NormKind::Lebesgue { p: 2.0 })
    }

    pub fn linf() -> Self {
        Self(NormKind::Lebesgue { p: f64::INFINITY })
    }

    /// `W^{s,p}`; only `p = 2` is supported.
    pub fn sobolev(s: i32, p: f64) -> Result<Self> {
        if p != 2.0 {
            return Err(Error::InvalidNorm(format!(
                "Sobolev norms are only available for exponent 2, got {p}"
            )));
        }
        if !(-3..=3).contains(&s) {
            return Err(Error::InvalidNorm(format!("Sobolev order must lie in [-3, 3], got {s}")));
        }
        Ok(Self(NormKind::Sobolev { s }))
    }

    /// `W^{-3,2}`, the default space for time-increment diagnostics.
    pub fn w_minus_3() -> Self {
        Self(NormKind::Sobolev { s: -3 })
    }

    /// Parses `l<p>`, `linf`, or `h<s>` / `w<s>,2` (e.g. `l2`, `h-3`, `w-3,2`).
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        let bad = || Error::InvalidNorm(format!("cannot parse norm `{text}`"));
        if t == "linf" {
            return Ok(Self::linf());
        }
        if let Some(rest) = t.strip_prefix('l') {
            return Self::lebesgue(rest.parse().map_err(|_| bad())?);
        }
        if let Some(rest) = t.strip_prefix('h') {
            return Self::sobolev(rest.parse().map_err(|_| bad())?, 2.0);
        }
        if let Some(rest) = t.strip_prefix('w') {
            let (s, p) = rest.split_once(',').ok_or_else(bad)?;
            return Self::sobolev(s.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?);
        }
        Err(bad())
    }

    pub fn label(&self) -> String {
        match self.0 {
            NormKind::Lebesgue { p } if p.is_infinite() => "Linf".into(),
            NormKind::Lebesgue { p } => format!("L{p}"),
            NormKind::Sobolev { s } => format!("W^{{{s},2}}"),
        }
    }
}

/// Norm of a scalar or vector field. Vector fields use the pointwise
/// Euclidean magnitude for `L^p` and the component sum for Sobolev norms.
pub fn norm<F: Field>(f: &F, spec: NormSpec) -> f64 {
    let g = f.grid();
    let comps = f.comps();
    match spec.0 {
        NormKind::Lebesgue { p } => {
            let mag = |j: usize| comps.iter().map(|c| c[j] * c[j]).sum::<f64>().sqrt();
            if p.is_infinite() {
                (0..g.len()).map(mag).fold(0.0, f64::max)
            } else {
                let s: f64 = (0..g.len()).map(|j| mag(j).powf(p)).sum();
                (s * g.cell_volume()).powf(1.0 / p)
            }
        }
        NormKind::Sobolev { s } => {
            let weights = sobolev_weights(g, s);
            let total: f64 = comps
                .iter()
                .map(|c| {
                    fourier_coefficients(g, c)
                        .iter()
                        .zip(&weights)
                        .map(|(z, w)| w * z.norm_sqr())
                        .sum::<f64>()
                })
                .sum();
            (total * g.volume()).sqrt()
        }
    }
}

/// Signed integer index of Fourier mode `i` on an `n`-point axis.
#[inline]
pub(crate) fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn sobolev_weights(g: &Grid, s: i32) -> Vec<f64> {
    let scale = 2.0 * PI / g.length();
    (0..g.len())
        .map(|j| {
            let k2: f64 = (0..g.dim())
                .map(|a| {
                    let i = (j / g.stride(a)) % g.n();
                    let k = signed_mode(i, g.n()) as f64 * scale;
                    k * k
                })
                .sum();
            (1.0 + k2).powi(s)
        })
        .collect()
}

/// Normalised discrete Fourier coefficients `f̂_k = N^{-1} Σ_j f_j e^{-i k·x_j}`,
/// in the same row-major layout as the nodes.
pub fn fourier_coefficients(g: &Grid, values: &[f64]) -> Vec<Complex<f64>> {
    let n = g.n();
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..g.dim() {
        let s = g.stride(axis);
        for start in 0..g.len() {
            if (start / s) % n != 0 {
                continue;
            }
            for (i, z) in line.iter_mut().enumerate() {
                *z = data[start + i * s];
            }
            fft.process(&mut line);
            for (i, z) in line.iter().enumerate() {
                data[start + i * s] = *z;
            }
        }
    }
    let inv = 1.0 / g.len() as f64;
    data.iter_mut().for_each(|z| *z *= inv);
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid1(n: usize) -> Grid {
        Grid::periodic(1, n).unwrap()
    }

    fn sin_field(g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x| x[0].sin())
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::periodic(0, 8).is_err());
        assert!(Grid::periodic(4, 8).is_err());
        assert!(Grid::periodic(1, 12).is_err());
        assert!(Grid::new(1, 8, -1.0).is_err());
    }

    #[test]
    fn periodic_wrap_is_exact() {
        let g = Grid::periodic(3, 4).unwrap();
        for j in 0..g.len() {
            for a in 0..3 {
                assert_eq!(g.backward(g.forward(j, a), a), j);
                let mut k = j;
                for _ in 0..g.n() {
                    k = g.forward(k, a);
                }
                assert_eq!(k, j);
            }
        }
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = Grid::periodic(2, 16).unwrap();
        let grad = gradient(&ScalarField::constant(g, 3.7));
        assert!(grad.components().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_sine_converges_at_second_order() {
        // Oracle: analytic derivative cos x.
        let err = |n: usize| {
            let g = grid1(n);
            let d = gradient(&sin_field(g));
            (0..g.len())
                .map(|j| (d.component(0)[j] - g.coords(j)[0].cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        let dx = 2.0 * PI / 128.0;
        assert!(e1 <= 0.2 * dx * dx, "error {e1} not O(dx^2)");
        assert!(e1 / e2 >= 3.9, "ratio {}", e1 / e2);
    }

    #[test]
    fn gradient_along_y_only() {
        let g = Grid::periodic(2, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| x[1].cos());
        let d = gradient(&f);
        assert!(d.component(0).iter().all(|&v| v == 0.0));
        assert!(d.component(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn divergence_of_constant_vector_vanishes() {
        let g = Grid::periodic(3, 8).unwrap();
        let div = divergence(&VectorField::constant(g, &[1.0, -2.0, 0.5]));
        assert!(div.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_of_sine_converges() {
        let err = |n: usize| {
            let g = grid1(n);
            let l = laplacian(&sin_field(g));
            (0..g.len())
                .map(|j| (l.values()[j] + g.coords(j)[0].sin()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 / e2 >= 3.9);
        assert!(e2 < 1e-3);
    }

    #[test]
    fn grad_tensor_is_exact_on_linear_data() {
        // Linear data is not periodic; check on nodes away from the wrap seam.
        let g = Grid::periodic(2, 16).unwrap();
        let a = [[1.5, -0.25], [0.75, 2.0]];
        let v = VectorField::from_fn(g, |x, i| a[i][0] * x[0] + a[i][1] * x[1]);
        let t = grad_tensor(&v);
        for j in 0..g.len() {
            let ix = (j / g.stride(0)) % g.n();
            let iy = (j / g.stride(1)) % g.n();
            if ix == 0 || iy == 0 || ix == g.n() - 1 || iy == g.n() - 1 {
                continue;
            }
            for i in 0..2 {
                for k in 0..2 {
                    assert_abs_diff_eq!(t.entry(i, k)[j], a[i][k], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = grid1(64);
        let one = ScalarField::constant(g, 1.0);
        for s in -3..=3 {
            let v = norm(&one, NormSpec::sobolev(s, 2.0).unwrap());
            assert_abs_diff_eq!(v, (2.0 * PI).sqrt(), epsilon = 1e-12);
        }
        let s = sin_field(g);
        assert_abs_diff_eq!(norm(&s, NormSpec::l2()), PI.sqrt(), epsilon = 1e-12);
        // Single mode |k| = 1: multiplier (1 + 1)^{-3}.
        let expected = PI.sqrt() * 2f64.powf(-1.5);
        assert_abs_diff_eq!(norm(&s, NormSpec::w_minus_3()), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.6267, epsilon = 1e-4);
        assert_abs_diff_eq!(norm(&s, NormSpec::linf()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sobolev_rejects_non_hilbert_exponent() {
        assert!(NormSpec::sobolev(-3, 3.0).is_err());
        assert!(NormSpec::sobolev(4, 2.0).is_err());
        assert!(NormSpec::lebesgue(0.5).is_err());
        assert_eq!(NormSpec::parse("h-3").unwrap(), NormSpec::w_minus_3());
        assert_eq!(NormSpec::parse("w-3,2").unwrap(), NormSpec::w_minus_3());
        assert!(NormSpec::parse("w-3,4").is_err());
        assert_eq!(NormSpec::parse("linf").unwrap(), NormSpec::linf());
    }

    #[test]
    fn sobolev_multiplier_in_two_dimensions() {
        // sin(x) cos(2y): four modes with |k|^2 = 5, L2 norm^2 = (2π)^2 / 4.
        let g = Grid::periodic(2, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0].sin() * (2.0 * x[1]).cos());
        let l2 = norm(&f, NormSpec::l2());
        assert_abs_diff_eq!(l2, PI, epsilon = 1e-12);
        let h1 = norm(&f, NormSpec::sobolev(1, 2.0).unwrap());
        assert_abs_diff_eq!(h1, PI * 6f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn pairings() {
        let g = grid1(128);
        let one = ScalarField::constant(g, 1.0);
        let s = sin_field(g);
        let c = ScalarField::from_fn(g, |x| x[0].cos());
        assert_abs_diff_eq!(pair(&one, &one).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(pair(&s, &s).unwrap(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(pair(&s, &c).unwrap(), 0.0, epsilon = 1e-12);
        let other = ScalarField::constant(grid1(64), 1.0);
        assert!(matches!(pair(&one, &other), Err(Error::GridMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field(g: Grid) -> impl Strategy<Value = ScalarField> {
            prop::collection::vec(-10.0f64..10.0, g.len())
                .prop_map(move |v| ScalarField::from_values(g, v).unwrap())
        }

        fn vfield(g: Grid) -> impl Strategy<Value = VectorField> {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, g.len()), g.dim())
                .prop_map(move |c| VectorField::from_components(g, c).unwrap())
        }

        fn grid() -> impl Strategy<Value = Grid> {
            (1usize..=3).prop_map(|d| Grid::periodic(d, if d == 3 { 4 } else { 8 }).unwrap())
        }

        proptest! {
            #[test]
            fn summation_by_parts(
                (f, v) in grid().prop_flat_map(|g| (field(g), vfield(g)))
            ) {
                let lhs = pair(&gradient(&f), &v).unwrap();
                let rhs = -pair(&f, &divergence(&v)).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
            }

            #[test]
            fn operators_are_linear(
                (f, h) in grid().prop_flat_map(|g| (field(g), field(g))),
                a in -3.0f64..3.0, b in -3.0f64..3.0,
            ) {
                let comb = f.lin_comb(a, &h, b);
                let lhs = laplacian(&comb);
                let rhs = laplacian(&f).lin_comb(a, &laplacian(&h), b);
                for (x, y) in lhs.values().iter().zip(rhs.values()) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                }
                let gl = gradient(&comb);
                let gr = gradient(&f).lin_comb(a, &gradient(&h), b);
                for (x, y) in gl.components().iter().flatten().zip(gr.components().iter().flatten()) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                }
            }

            #[test]
            fn l2_norm_matches_pairing_and_h0(f in grid().prop_flat_map(field)) {
                let l2 = norm(&f, NormSpec::l2());
                let pf = pair(&f, &f).unwrap();
                prop_assert!((l2 * l2 - pf).abs() <= 1e-10 * (1.0 + pf));
                let h0 = norm(&f, NormSpec::sobolev(0, 2.0).unwrap());
                prop_assert!((h0 - l2).abs() <= 1e-12 * (1.0 + l2));
            }
        }
    }
}
