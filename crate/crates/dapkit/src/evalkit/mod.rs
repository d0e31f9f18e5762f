//! Frozen-model evaluation: bitext retrieval, margin-based mining with
//! threshold search, token-alignment accuracy, PCA visualization, and the
//! analytic FLOPs estimator.

mod align;
mod embed;
mod flops;
mod io;
mod pca;
mod retrieval;

pub use align::token_alignment_accuracy;
pub use embed::{embed_sentences, token_hiddens};
pub use flops::{estimate_flops, FlopsComponents, FlopsReport};
pub use io::{
    read_embeddings, write_embeddings, write_points_csv, write_scatter_svg, EMB_HEADER_PREFIX,
};
pub use pca::pca_project;
pub use retrieval::{
    margin_score, mine_pairs, optimal_threshold, retrieval_accuracy, MiningMode, MiningResult,
};
