use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::SparseMatrix;

/// Node-attributed graph with one binary sensitive attribute and optional
/// anomaly labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    adjacency: SparseMatrix,
    attributes: Tensor,
    sensitive: Vec<u8>,
    labels: Option<Vec<u8>>,
}

impl AttributedGraph {
    pub fn new(
        adjacency: SparseMatrix,
        attributes: Tensor,
        sensitive: Vec<u8>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::Precondition("adjacency must be square".into()));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::Precondition("adjacency must be symmetric".into()));
        }
        if (0..n).any(|i| adjacency.contains(i, i)) {
            return Err(Error::Precondition(
                "adjacency must have a zero diagonal".into(),
            ));
        }
        if attributes.rows() != n {
            return Err(Error::Precondition(format!(
                "attribute matrix has {} rows for {n} nodes",
                attributes.rows()
            )));
        }
        if sensitive.len() != n {
            return Err(Error::Precondition(format!(
                "sensitive vector has {} entries for {n} nodes",
                sensitive.len()
            )));
        }
        if sensitive.iter().any(|&s| s > 1) {
            return Err(Error::Precondition(
                "sensitive values must be 0 or 1".into(),
            ));
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::Precondition(format!(
                    "label vector has {} entries for {n} nodes",
                    y.len()
                )));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(Error::Precondition("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            adjacency,
            attributes,
            sensitive,
            labels,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.cols()
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn attributes(&self) -> &Tensor {
        &self.attributes
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        self.labels = None;
        Self::new(self.adjacency, self.attributes, self.sensitive, labels)
    }

    /// Sensitive attribute as an `n×1` float column.
    pub fn sensitive_column(&self) -> Tensor {
        Tensor::column(self.sensitive.iter().map(|&s| f64::from(s)).collect())
    }

    /// Undirected edges `(i, j)` with `i < j`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for i in 0..self.n_nodes() {
            for &j in self.adjacency.row(i).0 {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row(i).0.len()
    }
}

/// Binary symmetric CSR from an edge list. Input pairs may be unsorted,
/// duplicated or one-directional; self-loops are dropped.
pub fn build_csr(edges: &[(usize, usize)], n: usize) -> Result<SparseMatrix> {
    let mut pairs = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in edges {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        if i != j {
            pairs.push((i, j));
            pairs.push((j, i));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut row_ptr = vec![0usize; n + 1];
    for &(i, _) in &pairs {
        row_ptr[i + 1] += 1;
    }
    for r in 0..n {
        row_ptr[r + 1] += row_ptr[r];
    }
    let col_idx = pairs.iter().map(|&(_, j)| j).collect();
    let values = vec![1.0; pairs.len()];
    SparseMatrix::new(n, n, row_ptr, col_idx, values)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = 1 + deg(i)`.
pub fn symmetric_normalize(a: &SparseMatrix) -> SparseMatrix {
    let n = a.rows();
    let dtilde: Vec<f64> = (0..n)
        .map(|i| 1.0 + a.row(i).1.iter().sum::<f64>())
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut diag_done = false;
        for (&j, &v) in cols.iter().zip(vals) {
            if !diag_done && j > i {
                col_idx.push(i);
                values.push(1.0 / dtilde[i]);
                diag_done = true;
            }
            col_idx.push(j);
            values.push(v / (dtilde[i] * dtilde[j]).sqrt());
        }
        if !diag_done {
            col_idx.push(i);
            values.push(1.0 / dtilde[i]);
        }
        row_ptr.push(col_idx.len());
    }
    SparseMatrix::new(n, n, row_ptr, col_idx, values).expect("normalised pattern stays sorted")
}

/// Population standard deviation over all entries.
pub fn matrix_std(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition(
            "standard deviation of an empty matrix".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// `σ_X / (σ_X + σ_A)`: weight of the structure term in the reconstruction
/// loss. Zero when both deviations vanish.
pub fn structure_mix(g: &AttributedGraph) -> Result<f64> {
    let sx = matrix_std(g.attributes().data())?;
    let sa = g.adjacency().entry_std()?;
    Ok(if sx + sa > 0.0 { sx / (sx + sa) } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entries(m: &SparseMatrix) -> Vec<(usize, usize, f64)> {
        (0..m.rows())
            .flat_map(|i| {
                let (c, v) = m.row(i);
                c.iter()
                    .zip(v)
                    .map(move |(&j, &x)| (i, j, x))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn build_csr_symmetrises_and_dedups() {
        let a = build_csr(&[(0, 1)], 2).unwrap();
        assert_eq!(entries(&a), vec![(0, 1, 1.0), (1, 0, 1.0)]);
        let b = build_csr(&[(0, 1), (1, 0), (0, 1)], 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(build_csr(&[(0, 0)], 1).unwrap().nnz(), 0);
        assert!(matches!(
            build_csr(&[(0, 2)], 2),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn normalize_small_cases() {
        let iso = symmetric_normalize(&build_csr(&[], 1).unwrap());
        assert_eq!(iso.densify(), Tensor::from_rows(&[[1.0]]));

        let pair = symmetric_normalize(&build_csr(&[(0, 1)], 2).unwrap());
        assert_eq!(pair.densify(), Tensor::from_rows(&[[0.5, 0.5], [0.5, 0.5]]));

        let path = symmetric_normalize(&build_csr(&[(0, 1), (1, 2)], 3).unwrap());
        assert!((path.get(0, 1) - 0.408_248_290_463_863).abs() < 1e-12);
        assert!(path.is_symmetric());
    }

    #[test]
    fn regular_graph_entries() {
        // 6-cycle: every degree 2, so every stored entry is 1/3
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        let norm = symmetric_normalize(&build_csr(&edges, 6).unwrap());
        assert!(norm.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn matrix_std_cases() {
        assert_eq!(matrix_std(&[3.0; 5]).unwrap(), 0.0);
        assert_eq!(matrix_std(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert!(matrix_std(&[]).is_err());
    }

    #[test]
    fn graph_rejects_inconsistent_parts() {
        let adj = build_csr(&[(0, 1)], 2).unwrap();
        let x = Tensor::zeros(2, 3);
        assert!(AttributedGraph::new(adj.clone(), x.clone(), vec![0, 1], None).is_ok());
        assert!(AttributedGraph::new(adj.clone(), x.clone(), vec![0, 2], None).is_err());
        assert!(AttributedGraph::new(adj.clone(), x.clone(), vec![0], None).is_err());
        assert!(AttributedGraph::new(adj.clone(), Tensor::zeros(3, 3), vec![0, 1], None).is_err());
        assert!(AttributedGraph::new(adj, x, vec![0, 1], Some(vec![1])).is_err());
        let asym = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert!(AttributedGraph::new(asym, Tensor::zeros(2, 1), vec![0, 0], None).is_err());
    }

    proptest! {
        #[test]
        fn prop_normalized_rows_satisfy_degree_identity(
            n in 1usize..25,
            raw in proptest::collection::vec((0usize..25, 0usize..25), 0..60),
        ) {
            let edges: Vec<_> = raw.into_iter().filter(|&(i, j)| i < n && j < n).collect();
            let a = build_csr(&edges, n).unwrap();
            let norm = symmetric_normalize(&a);
            let d: Vec<f64> = (0..n).map(|i| 1.0 + a.row(i).0.len() as f64).collect();
            for i in 0..n {
                let (cols, vals) = norm.row(i);
                let s: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * (d[j] / d[i]).sqrt()).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
