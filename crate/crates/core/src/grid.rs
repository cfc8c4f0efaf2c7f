//! Periodic chart [0, 2pi)^n with per-axis resolutions and spectral calculus.
//!
//! Differentiation is exact on band-limited data. Random fields and admissible
//! metrics keep every axis wavenumber within res/6 (a third of Nyquist), so
//! that quadratic and cubic pointwise products stay below Nyquist and the
//! curvature pipeline is alias-free.

use crate::parallel::{init_runtime, ksum};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(dims: Vec<usize>) -> Result<Grid> {
        if dims.is_empty() || dims.len() > crate::smat::MAX_DIM {
            return Err(Error::Dimension {
                dim: dims.len(),
                why: "grid rank must be between 1 and 6".into(),
            });
        }
        for (axis, &d) in dims.iter().enumerate() {
            if d < 4 || d % 2 != 0 {
                return Err(Error::Aliasing { axis, res: d, band: 1 });
            }
        }
        let mut strides = vec![1usize; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let len = dims.iter().product();
        init_runtime();
        Ok(Grid { dims, strides, len })
    }

    pub fn square(dim: usize, res: usize) -> Result<Grid> {
        Grid::new(vec![res; dim])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Largest admissible wavenumber on `axis`.
    pub fn band_limit(&self, axis: usize) -> usize {
        self.dims[axis] / 6
    }

    pub fn coord(&self, flat: usize, axis: usize) -> f64 {
        let i = (flat / self.strides[axis]) % self.dims[axis];
        TAU * i as f64 / self.dims[axis] as f64
    }

    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        for a in 0..self.dims.len() {
            out[a] = (flat / self.strides[a]) % self.dims[a];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinate volume of one cell, (2pi)^n / len.
    pub fn cell_volume(&self) -> f64 {
        TAU.powi(self.dim() as i32) / self.len as f64
    }

    /// d/dx_axis by FFT along each lane of `axis`; Nyquist mode is zeroed.
    pub fn derivative(&self, data: &[f64], axis: usize) -> Vec<f64> {
        assert_eq!(data.len(), self.len);
        let n = self.dims[axis];
        let fwd = plan(n, true);
        let inv = plan(n, false);
        let stride = self.strides[axis];
        let bases = self.lane_bases(axis);
        let mut out = vec![0.0f64; self.len];
        // Each lane owns a disjoint set of output slots; write via raw chunks.
        let out_ptr = SendPtr(out.as_mut_ptr());
        bases.par_iter().for_each_init(
            || (vec![Complex64::default(); n], fwd.make_scratch(), inv.make_scratch()),
            |(buf, s_f, s_i), &base| {
                for t in 0..n {
                    buf[t] = Complex64::new(data[base + t * stride], 0.0);
                }
                fwd.process_with_scratch(buf, s_f);
                let scale = 1.0 / n as f64;
                for (t, b) in buf.iter_mut().enumerate() {
                    let k = wavenumber(t, n);
                    *b *= Complex64::new(0.0, k * scale);
                }
                inv.process_with_scratch(buf, s_i);
                let p = out_ptr;
                for t in 0..n {
                    // Safety: lanes partition the index set.
                    unsafe { *p.0.add(base + t * stride) = buf[t].re };
                }
            },
        );
        out
    }

    /// Zeroes every Fourier mode with |k_axis| beyond the per-axis band limit.
    pub fn band_filter(&self, data: &mut [f64]) {
        let mut spec = self.forward_nd(data);
        let ndim = self.dim();
        let mut multi = vec![0usize; ndim];
        for flat in 0..self.len {
            self.multi_index(flat, &mut multi);
            for a in 0..ndim {
                let k = wavenumber_int(multi[a], self.dims[a]).unsigned_abs() as usize;
                if k > self.band_limit(a) {
                    spec[flat] = Complex64::new(0.0, 0.0);
                    break;
                }
            }
        }
        self.inverse_nd(&mut spec);
        for (d, s) in data.iter_mut().zip(&spec) {
            *d = s.re;
        }
    }

    /// Band-limited pseudorandom field: unit-scale Gaussian Fourier modes with
    /// a smooth decay profile, deterministic in the seed.
    pub fn random_field(&self, seed: u64, amplitude: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..self.len)
            .map(|_| {
                // Box-Muller from uniform draws keeps the stream simple.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
            })
            .collect();
        let mut spec = self.forward_nd(&data);
        let ndim = self.dim();
        let mut multi = vec![0usize; ndim];
        for flat in 0..self.len {
            self.multi_index(flat, &mut multi);
            let mut k2 = 0.0;
            let mut keep = true;
            for a in 0..ndim {
                let k = wavenumber_int(multi[a], self.dims[a]);
                if k.unsigned_abs() as usize > self.band_limit(a) {
                    keep = false;
                    break;
                }
                k2 += (k * k) as f64;
            }
            if keep {
                spec[flat] *= 1.0 / (1.0 + k2).powf(1.5);
            } else {
                spec[flat] = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse_nd(&mut spec);
        for (d, s) in data.iter_mut().zip(&spec) {
            *d = s.re;
        }
        // Normalize sup to the requested amplitude (skip all-zero edge case).
        let sup = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if sup > 0.0 {
            let f = amplitude / sup;
            for d in data.iter_mut() {
                *d *= f;
            }
        }
        data
    }

    /// Mean-zero solve of the flat Laplacian: sum_a d^2 u / dx_a^2 = rhs.
    /// The k = 0 mode of rhs is dropped.
    pub fn poisson_flat(&self, rhs: &[f64]) -> Vec<f64> {
        let mut spec = self.forward_nd(rhs);
        let ndim = self.dim();
        let mut multi = vec![0usize; ndim];
        for flat in 0..self.len {
            self.multi_index(flat, &mut multi);
            let mut k2 = 0.0;
            for a in 0..ndim {
                let k = wavenumber_int(multi[a], self.dims[a]);
                k2 += (k * k) as f64;
            }
            if k2 == 0.0 {
                spec[flat] = Complex64::new(0.0, 0.0);
            } else {
                spec[flat] /= -k2;
            }
        }
        self.inverse_nd(&mut spec);
        spec.iter().map(|c| c.re).collect()
    }

    /// Coordinate integral sum(data) * cell_volume with compensated summation.
    pub fn integrate_flat(&self, data: &[f64]) -> f64 {
        ksum(data.iter().copied()) * self.cell_volume()
    }

    fn lane_bases(&self, axis: usize) -> Vec<usize> {
        let mut bases = Vec::with_capacity(self.len / self.dims[axis]);
        let mut multi = vec![0usize; self.dim()];
        for flat in 0..self.len {
            self.multi_index(flat, &mut multi);
            if multi[axis] == 0 {
                bases.push(flat);
            }
        }
        bases
    }

    pub(crate) fn forward_nd(&self, data: &[f64]) -> Vec<Complex64> {
        let mut spec: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        for a in 0..self.dim() {
            self.fft_axis(&mut spec, a, true);
        }
        spec
    }

    pub(crate) fn inverse_nd(&self, spec: &mut [Complex64]) {
        for a in 0..self.dim() {
            self.fft_axis(spec, a, false);
        }
        let scale = 1.0 / self.len as f64;
        for s in spec.iter_mut() {
            *s *= scale;
        }
    }

    fn fft_axis(&self, spec: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.dims[axis];
        let f = plan(n, forward);
        let stride = self.strides[axis];
        let bases = self.lane_bases(axis);
        let ptr = SendPtr(spec.as_mut_ptr());
        bases.par_iter().for_each_init(
            || (vec![Complex64::default(); n], f.make_scratch()),
            |(buf, scratch), &base| {
                let p = ptr;
                for t in 0..n {
                    buf[t] = unsafe { *p.0.add(base + t * stride) };
                }
                f.process_with_scratch(buf, scratch);
                for t in 0..n {
                    unsafe { *p.0.add(base + t * stride) = buf[t] };
                }
            },
        );
    }
}

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

trait FftExt {
    fn make_scratch(&self) -> Vec<Complex64>;
}

impl FftExt for Arc<dyn Fft<f64>> {
    fn make_scratch(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.get_inplace_scratch_len()]
    }
}

/// Signed integer wavenumber of FFT bin `idx`; Nyquist maps to -n/2.
pub(crate) fn wavenumber_int(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 - 1 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Multiplier wavenumber for d/dx; the Nyquist bin is zeroed because its
/// derivative is ill-defined for real data.
fn wavenumber(idx: usize, n: usize) -> f64 {
    if idx == n / 2 {
        0.0
    } else {
        wavenumber_int(idx, n) as f64
    }
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((n, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if forward {
                planner.plan_fft_forward(n)
            } else {
                planner.plan_fft_inverse(n)
            }
        })
        .clone()
}
