//! Dense product kernels.
//!
//! `matmul` and its transposed variants use a fixed `i-k-j` accumulation
//! order and skip zero left-hand entries, so a dense product of a densified
//! sparse matrix performs exactly the same floating-point operations as the
//! CSR kernel in [`crate::graph::SparseMatrix::spmm`]. The `N×N` products of
//! the structure decoder go through `matrixmultiply` instead.

use super::tensor::Tensor;

/// `a · b` for `a: m×k`, `b: k×n`. Caller checks shapes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(m, n, out).expect("shape computed above")
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        for j in 0..n {
            let brow = b.row_slice(j);
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(m, n, out).expect("shape computed above")
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = a.row_slice(p);
        let brow = b.row_slice(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(m, n, out).expect("shape computed above")
}

/// Blocked GEMM `a · b` (or `a · bᵀ` when `transpose_b`).
fn gemm(a: &Tensor, b: &Tensor, transpose_b: bool) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = if transpose_b { b.rows() } else { b.cols() };
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return Tensor::from_vec(m, n, out).expect("shape computed above");
    }
    let (rsb, csb) = if transpose_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: all pointers cover the full extents implied by the dimensions
    // and strides passed alongside them, and `out` does not alias inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::from_vec(m, n, out).expect("shape computed above")
}

/// `z · zᵀ`, exactly symmetric.
pub(crate) fn gram(z: &Tensor) -> Tensor {
    let mut g = gemm(z, z, true);
    let n = g.rows();
    let d = g.data_mut();
    for i in 0..n {
        for j in (i + 1)..n {
            d[j * n + i] = d[i * n + j];
        }
    }
    g
}

/// Backward of [`gram`]: `(g + gᵀ) · z`.
pub(crate) fn gram_backward(g: &Tensor, z: &Tensor) -> Tensor {
    let n = g.rows();
    let mut sym = g.clone();
    let s = sym.data_mut();
    for i in 0..n {
        s[i * n + i] *= 2.0;
        for j in (i + 1)..n {
            let v = s[i * n + j] + s[j * n + i];
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    gemm(&sym, z, false)
}
