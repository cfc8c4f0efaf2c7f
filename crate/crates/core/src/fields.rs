//! Field containers over a periodic chart: scalars, 1-forms, and symmetric
//! 2-tensors (upper-triangle component storage).

use crate::grid::Grid;
use crate::smat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { grid: grid.clone(), data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField { grid: grid.clone(), data: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = grid.dim();
        let mut x = vec![0.0f64; n];
        let data = (0..grid.len())
            .map(|p| {
                for a in 0..n {
                    x[a] = grid.coord(p, a);
                }
                f(&x)
            })
            .collect();
        ScalarField { grid: grid.clone(), data }
    }

    pub fn random(grid: &Grid, seed: u64, amplitude: f64) -> Self {
        ScalarField { grid: grid.clone(), data: grid.random_field(seed, amplitude) }
    }

    pub fn derivative(&self, axis: usize) -> ScalarField {
        ScalarField { grid: self.grid.clone(), data: self.grid.derivative(&self.data, axis) }
    }

    pub fn gradient_forms(&self) -> OneFormField {
        let comps = (0..self.grid.dim()).map(|a| self.grid.derivative(&self.data, a)).collect();
        OneFormField { grid: self.grid.clone(), comps }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        assert_eq!(self.grid, other.grid);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.data.iter_mut() {
            *s *= alpha;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneFormField {
    pub grid: Grid,
    /// comps[a][point], covariant index a.
    pub comps: Vec<Vec<f64>>,
}

impl OneFormField {
    pub fn zeros(grid: &Grid) -> Self {
        OneFormField { grid: grid.clone(), comps: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn at(&self, p: usize, out: &mut [f64]) {
        for a in 0..self.dim() {
            out[a] = self.comps[a][p];
        }
    }

    pub fn set(&mut self, p: usize, v: &[f64]) {
        for a in 0..self.dim() {
            self.comps[a][p] = v[a];
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &OneFormField) {
        assert_eq!(self.grid, other.grid);
        for (c, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in self.comps.iter_mut() {
            for x in c.iter_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Symmetric 2-tensor field; whether components are covariant or contravariant
/// is a per-use convention documented at call sites (curvature and expansion
/// coefficients are covariant unless stated otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub grid: Grid,
    pub dim: usize,
    /// comps[sym_idx(i,j)][point]
    pub comps: Vec<Vec<f64>>,
}

impl SymTensorField {
    pub fn zeros(grid: &Grid) -> Self {
        let dim = grid.dim();
        SymTensorField {
            grid: grid.clone(),
            dim,
            comps: vec![vec![0.0; grid.len()]; smat::sym_len(dim)],
        }
    }

    pub fn identity(grid: &Grid) -> Self {
        let mut t = SymTensorField::zeros(grid);
        for i in 0..t.dim {
            let k = smat::sym_idx(t.dim, i, i);
            t.comps[k].fill(1.0);
        }
        t
    }

    pub fn n_comps(&self) -> usize {
        smat::sym_len(self.dim)
    }

    /// Gather the full matrix at point `p` into `full` (row-major dim x dim).
    #[inline]
    pub fn at(&self, p: usize, full: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            for j in i..n {
                let v = self.comps[smat::sym_idx(n, i, j)][p];
                full[i * n + j] = v;
                full[j * n + i] = v;
            }
        }
    }

    /// Scatter the symmetric part of `full` into point `p`.
    #[inline]
    pub fn set(&mut self, p: usize, full: &[f64]) {
        let n = self.dim;
        for i in 0..n {
            for j in i..n {
                self.comps[smat::sym_idx(n, i, j)][p] = 0.5 * (full[i * n + j] + full[j * n + i]);
            }
        }
    }

    pub fn comp(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[smat::sym_idx(self.dim, i, j)]
    }

    pub fn axpy(&mut self, alpha: f64, other: &SymTensorField) {
        assert_eq!(self.grid, other.grid);
        for (c, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in self.comps.iter_mut() {
            for x in c.iter_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// Componentwise spectral derivative field d(comp)/dx_axis.
    pub fn derivative(&self, axis: usize) -> SymTensorField {
        SymTensorField {
            grid: self.grid.clone(),
            dim: self.dim,
            comps: self.comps.iter().map(|c| self.grid.derivative(c, axis)).collect(),
        }
    }

    /// Positive-definiteness check at every point; returns the most negative
    /// eigenvalue found (>= 0 means positive semidefinite failure threshold).
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim;
        let mut full = [0.0f64; smat::MAX_FULL];
        let mut min = f64::INFINITY;
        for p in 0..self.grid.len() {
            self.at(p, &mut full);
            let ev = smat::sym_eigenvalues(n, &full);
            min = min.min(ev[0]);
        }
        min
    }

    pub fn check_positive_definite(&self, what: &str) -> Result<()> {
        let min = self.min_eigenvalue();
        if min <= 0.0 {
            return Err(Error::Domain(format!(
                "{what}: metric not positive definite (min eigenvalue {min:.3e})"
            )));
        }
        Ok(())
    }

    /// Raise the first index with `inv` (contravariant components of the
    /// inverse metric): H^i_j = inv^{ik} self_{kj}.
    pub fn endo_with(&self, inv: &SymTensorField) -> EndoField {
        assert_eq!(self.grid, inv.grid);
        let n = self.dim;
        let mut out = EndoField::zeros(&self.grid);
        let mut a = [0.0f64; smat::MAX_FULL];
        let mut b = [0.0f64; smat::MAX_FULL];
        let mut c = [0.0f64; smat::MAX_FULL];
        for p in 0..self.grid.len() {
            inv.at(p, &mut a);
            self.at(p, &mut b);
            smat::mat_mul(n, &a, &b, &mut c);
            out.set(p, &c);
        }
        out
    }
}

/// Endomorphism (mixed 1-1 tensor) field; row-major matrix per point. The
/// coefficient ring for index-raised expansion quantities like h0^{-1} h_m.
#[derive(Debug, Clone, PartialEq)]
pub struct EndoField {
    pub grid: Grid,
    pub dim: usize,
    /// comps[i * dim + j][point]
    pub comps: Vec<Vec<f64>>,
}

impl EndoField {
    pub fn zeros(grid: &Grid) -> Self {
        let dim = grid.dim();
        EndoField { grid: grid.clone(), dim, comps: vec![vec![0.0; grid.len()]; dim * dim] }
    }

    pub fn identity(grid: &Grid) -> Self {
        let mut t = EndoField::zeros(grid);
        for i in 0..t.dim {
            t.comps[i * t.dim + i].fill(1.0);
        }
        t
    }

    #[inline]
    pub fn at(&self, p: usize, full: &mut [f64]) {
        for (c, slot) in self.comps.iter().zip(full.iter_mut()) {
            *slot = c[p];
        }
    }

    #[inline]
    pub fn set(&mut self, p: usize, full: &[f64]) {
        for (c, v) in self.comps.iter_mut().zip(full) {
            c[p] = *v;
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &EndoField) {
        assert_eq!(self.grid, other.grid);
        for (c, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in self.comps.iter_mut() {
            for x in c.iter_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// Pointwise matrix product self * other.
    pub fn mat_mul(&self, other: &EndoField) -> EndoField {
        assert_eq!(self.grid, other.grid);
        let n = self.dim;
        let mut out = EndoField::zeros(&self.grid);
        for i in 0..n {
            for j in 0..n {
                let o = &mut out.comps[i * n + j];
                for k in 0..n {
                    let a = &self.comps[i * n + k];
                    let b = &other.comps[k * n + j];
                    for (p, slot) in o.iter_mut().enumerate() {
                        *slot += a[p] * b[p];
                    }
                }
            }
        }
        out
    }

    pub fn trace(&self) -> ScalarField {
        let n = self.dim;
        let mut out = ScalarField::zeros(&self.grid);
        for i in 0..n {
            let c = &self.comps[i * n + i];
            for (o, v) in out.data.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }

    /// Lower the upper index with `g`: (g H)_{ij}, symmetrizing the result
    /// (callers use this only where g H is symmetric up to rounding).
    pub fn lower_with(&self, g: &SymTensorField) -> SymTensorField {
        assert_eq!(self.grid, g.grid);
        let n = self.dim;
        let mut out = SymTensorField::zeros(&self.grid);
        let mut ga = [0.0f64; smat::MAX_FULL];
        let mut ha = [0.0f64; smat::MAX_FULL];
        let mut c = [0.0f64; smat::MAX_FULL];
        for p in 0..self.grid.len() {
            g.at(p, &mut ga);
            self.at(p, &mut ha);
            smat::mat_mul(n, &ga, &ha, &mut c);
            out.set(p, &c);
        }
        out
    }
}
