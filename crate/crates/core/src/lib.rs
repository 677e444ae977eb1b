//! Transductive few-shot classification by graph feature interpolation.
//!
//! Features of an episode's labeled and unlabeled samples are stacked into
//! one graph, diffused along cosine k-NN edges, and a softmax classifier
//! trained on the labeled vertices labels the rest. The crate also carries
//! the episodic evaluation harness (sampling protocols, confidence
//! intervals, sweeps, imbalance studies) and the `fsgraph` CLI.

pub mod classifier;
pub mod cli;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod feature_io;
pub mod graph;
pub mod report;

pub use classifier::{predict, train_logistic, ClassifierWeights, Predictions, TrainConfig};
pub use episodes::{sample_episode, sample_imbalanced_two_way, Episode, EpisodeSpec, PoolSize, Sampling};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate, evaluate_imbalance, run_episode, summarize, sweep, EpisodeResult, EvalOptions,
    EvalReport, HyperParams, SweepGrid, SweepReport,
};
pub use feature_io::{
    generate_synthetic, load_feature_set, save_feature_set, FeatureFormat, FeatureSet,
    SyntheticConfig,
};
pub use graph::{
    build_episode_graph, cosine_similarity_matrix, knn_sparsify, laplacian_embedding, propagate,
    symmetric_normalize, NormalizedAdjacency, PropagationParams, SimilarityMatrix,
};
