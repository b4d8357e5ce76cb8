//! BM25 neighborhood density over snippets.

pub mod index;
pub mod neighbors;

pub use index::{build_index, Bm25Params, Posting, SnippetIndex, SnippetRef};
pub use neighbors::{
    count_neighbors, density_run, overlap_matrix, sample_queries, DensityRun, DocumentDensity, NeighborhoodMatrix,
    QueryCounts, QuerySpec,
};
