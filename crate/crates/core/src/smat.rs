//! Pointwise kernels on small (n <= 6) matrices, stored as row-major slices of
//! length n*n, plus the packed upper-triangle layout used by symmetric tensor
//! fields.

pub const MAX_DIM: usize = 6;
pub const MAX_FULL: usize = MAX_DIM * MAX_DIM;
pub const MAX_SYM: usize = MAX_DIM * (MAX_DIM + 1) / 2;

#[inline]
pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed index of (i, j) with i <= j.
#[inline]
pub fn sym_idx(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - (i * i - i) / 2 + (j - i)
}

#[inline]
pub fn unpack(n: usize, sym: &[f64], full: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            let v = sym[sym_idx(n, i, j)];
            full[i * n + j] = v;
            full[j * n + i] = v;
        }
    }
}

#[inline]
pub fn pack(n: usize, full: &[f64], sym: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            sym[sym_idx(n, i, j)] = 0.5 * (full[i * n + j] + full[j * n + i]);
        }
    }
}

#[inline]
pub fn mat_mul(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

#[inline]
pub fn trace(n: usize, a: &[f64]) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

#[inline]
pub fn identity(n: usize, out: &mut [f64]) {
    out[..n * n].fill(0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

/// Gaussian elimination with partial pivoting. Returns the determinant; when
/// `inv` is `Some`, writes the inverse into it.
pub fn det_inv(n: usize, a: &[f64], mut inv: Option<&mut [f64]>) -> f64 {
    let mut m = [0.0f64; MAX_FULL];
    m[..n * n].copy_from_slice(&a[..n * n]);
    if let Some(v) = inv.as_deref_mut() {
        identity(n, v);
    }
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            det = -det;
            for c in 0..n {
                m.swap(piv * n + c, col * n + c);
                if let Some(v) = inv.as_deref_mut() {
                    v.swap(piv * n + c, col * n + c);
                }
            }
        }
        let d = m[col * n + col];
        det *= d;
        let dinv = 1.0 / d;
        for c in 0..n {
            m[col * n + c] *= dinv;
            if let Some(v) = inv.as_deref_mut() {
                v[col * n + c] *= dinv;
            }
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                m[r * n + c] -= f * m[col * n + c];
                if let Some(v) = inv.as_deref_mut() {
                    v[r * n + c] -= f * v[col * n + c];
                }
            }
        }
    }
    det
}

/// Elementary symmetric function sigma_j of the eigenvalues of `a`
/// (coefficients of the characteristic polynomial via trace powers).
/// Only j <= 3 are needed; computed from Newton's identities.
pub fn sigma_elem(n: usize, a: &[f64], j: usize) -> f64 {
    let p1 = trace(n, a);
    if j == 0 {
        return 1.0;
    }
    if j == 1 {
        return p1;
    }
    let mut a2 = [0.0f64; MAX_FULL];
    mat_mul(n, a, a, &mut a2);
    let p2 = trace(n, &a2);
    if j == 2 {
        return 0.5 * (p1 * p1 - p2);
    }
    let mut a3 = [0.0f64; MAX_FULL];
    mat_mul(n, &a2, a, &mut a3);
    let p3 = trace(n, &a3);
    if j == 3 {
        return (p1 * p1 * p1 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0;
    }
    panic!("sigma_elem: j = {j} not supported");
}

/// Symmetric eigenvalues via cyclic Jacobi; n <= 6, used for definiteness
/// reports and determinant-free diagnostics.
pub fn sym_eigenvalues(n: usize, a: &[f64]) -> [f64; MAX_DIM] {
    sym_eigen(n, a).0
}

/// Symmetric eigen-decomposition via cyclic Jacobi. Returns eigenvalues in
/// ascending order and the matching eigenvectors as columns of a row-major
/// n x n matrix: vector for `ev[i]` is `vecs[k * n + i]` over rows k.
pub fn sym_eigen(n: usize, a: &[f64]) -> ([f64; MAX_DIM], [f64; MAX_FULL]) {
    let mut m = [0.0f64; MAX_FULL];
    m[..n * n].copy_from_slice(&a[..n * n]);
    let mut v = [0.0f64; MAX_FULL];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0usize; MAX_DIM];
    for (i, slot) in order.iter_mut().enumerate().take(n) {
        *slot = i;
    }
    order[..n].sort_by(|&a, &b| m[a * n + a].partial_cmp(&m[b * n + b]).unwrap());
    let mut ev = [0.0f64; MAX_DIM];
    let mut vecs = [0.0f64; MAX_FULL];
    for i in 0..n {
        let src = order[i];
        ev[i] = m[src * n + src];
        for k in 0..n {
            vecs[k * n + i] = v[k * n + src];
        }
    }
    (ev, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sym_idx_roundtrip() {
        for n in 1..=6 {
            let mut seen = vec![false; sym_len(n)];
            for i in 0..n {
                for j in i..n {
                    let k = sym_idx(n, i, j);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(k, sym_idx(n, j, i));
                }
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn det_inv_recovers_identity() {
        let n = 4;
        let a = [
            2.0, 0.3, 0.1, 0.0, //
            0.3, 1.5, 0.2, 0.1, //
            0.1, 0.2, 1.8, 0.4, //
            0.0, 0.1, 0.4, 2.2,
        ];
        let mut inv = [0.0; MAX_FULL];
        let det = det_inv(n, &a, Some(&mut inv));
        assert!(det > 0.0);
        let mut prod = [0.0; MAX_FULL];
        mat_mul(n, &a, &inv, &mut prod);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[i * n + j], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sigma_matches_char_poly_on_diagonal() {
        let n = 4;
        let mut a = [0.0; MAX_FULL];
        let ev = [0.5, -1.0, 2.0, 3.0];
        for i in 0..n {
            a[i * n + i] = ev[i];
        }
        assert_relative_eq!(sigma_elem(n, &a, 1), ev.iter().sum::<f64>(), epsilon = 1e-14);
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s2 += ev[i] * ev[j];
                for k in j + 1..n {
                    s3 += ev[i] * ev[j] * ev[k];
                }
            }
        }
        assert_relative_eq!(sigma_elem(n, &a, 2), s2, epsilon = 1e-14);
        assert_relative_eq!(sigma_elem(n, &a, 3), s3, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_eigenvalues_sorted() {
        let n = 3;
        // A = Q diag(1,2,4) Q with the Householder reflection Q = I - (2/3)J:
        // A_ij = d_j delta_ij - (2/3)(d_i + d_j) + 28/9.
        let d = [1.0, 2.0, 4.0];
        let mut a = [0.0; MAX_FULL];
        for i in 0..n {
            for j in 0..n {
                let mut v = -(2.0 / 3.0) * (d[i] + d[j]) + 28.0 / 9.0;
                if i == j {
                    v += d[i];
                }
                a[i * n + j] = v;
            }
        }
        let ev = sym_eigenvalues(n, &a);
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(ev[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(ev[2], 4.0, epsilon = 1e-10);

        let (ev2, vecs) = sym_eigen(n, &a);
        for col in 0..n {
            // A v = lambda v per column.
            for row in 0..n {
                let mut av = 0.0;
                for k in 0..n {
                    av += a[row * n + k] * vecs[k * n + col];
                }
                assert_relative_eq!(av, ev2[col] * vecs[row * n + col], epsilon = 1e-9);
            }
        }
        // Columns orthonormal.
        for c1 in 0..n {
            for c2 in 0..n {
                let mut dot = 0.0;
                for k in 0..n {
                    dot += vecs[k * n + c1] * vecs[k * n + c2];
                }
                let want = if c1 == c2 { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, want, epsilon = 1e-10);
            }
        }
    }
}
