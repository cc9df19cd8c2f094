//! Attributed-graph data model, adjacency normalisation and dataset files.

mod attributed;
pub mod io;
mod sparse;

pub use attributed::{build_csr, matrix_std, structure_mix, symmetric_normalize, AttributedGraph};
pub use io::{load_dataset, save_dataset, DatasetMeta};
pub use sparse::SparseMatrix;
