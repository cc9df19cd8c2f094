use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Precondition(format!(
                "row_ptr must have {} entries starting at 0",
                rows + 1
            )));
        }
        if row_ptr[rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Precondition(
                "row_ptr[rows], col_idx and values lengths disagree".into(),
            ));
        }
        for r in 0..rows {
            let (lo, hi) = (row_ptr[r], row_ptr[r + 1]);
            if lo > hi {
                return Err(Error::Precondition(format!("row_ptr decreases at row {r}")));
            }
            let cols_r = &col_idx[lo..hi];
            if cols_r.iter().any(|&c| c >= cols) {
                return Err(Error::Precondition(format!(
                    "column index out of range in row {r}"
                )));
            }
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Precondition(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::IndexOutOfRange {
                index: r.max(c),
                n: rows.max(cols),
            });
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    pub fn densify(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, triplets).expect("transpose of a valid matrix")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).all(|(&c, &v)| {
                    let (cc, cv) = self.row(c);
                    matches!(cc.binary_search(&r), Ok(p) if cv[p] == v)
                })
            })
    }

    /// `self · d`. Row `i` of the output accumulates `v · d[k]` over the
    /// stored entries of row `i` in ascending column order.
    pub fn spmm(&self, d: &Tensor) -> Result<Tensor> {
        if self.cols != d.rows() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: self.shape(),
                rhs: d.shape(),
            });
        }
        let n = d.cols();
        let mut out = vec![0.0; self.rows * n];
        let dd = d.data();
        for r in 0..self.rows {
            let orow = &mut out[r * n..(r + 1) * n];
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if v == 0.0 {
                    continue;
                }
                let drow = &dd[c * n..(c + 1) * n];
                for (o, &x) in orow.iter_mut().zip(drow) {
                    *o += v * x;
                }
            }
        }
        Tensor::from_vec(self.rows, n, out)
    }

    /// `selfᵀ · g` without materialising the transpose.
    pub fn spmm_transpose(&self, g: &Tensor) -> Result<Tensor> {
        if self.rows != g.rows() {
            return Err(Error::Shape {
                op: "spmm_transpose",
                lhs: self.shape(),
                rhs: g.shape(),
            });
        }
        let n = g.cols();
        let mut out = vec![0.0; self.cols * n];
        let gd = g.data();
        for r in 0..self.rows {
            let grow = &gd[r * n..(r + 1) * n];
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let orow = &mut out[c * n..(c + 1) * n];
                for (o, &x) in orow.iter_mut().zip(grow) {
                    *o += v * x;
                }
            }
        }
        Tensor::from_vec(self.cols, n, out)
    }

    /// Population standard deviation over all `rows·cols` entries, implicit
    /// zeros included.
    pub fn entry_std(&self) -> Result<f64> {
        let total = self.rows * self.cols;
        if total == 0 {
            return Err(Error::Precondition(
                "standard deviation of an empty matrix".into(),
            ));
        }
        let n = total as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let stored: f64 = self.values.iter().map(|v| (v - mean).powi(2)).sum();
        let implicit = (total - self.nnz()) as f64 * mean * mean;
        Ok(((stored + implicit) / n).sqrt())
    }
}
