//! Evaluation battery: class-IL accuracy bookkeeping, likelihood and
//! reconstruction diagnostics, embedding separability and 2-D projections.

mod accuracy;
mod distribution;
mod embedding;
mod io;
mod likelihood;
mod pca;

pub use accuracy::{
    evaluate_accuracy, forgetting_score, predict_classes, retention_ratio, AccuracyMatrix,
    TaskMetrics,
};
pub use distribution::{DistributionSummary, Histogram, SummaryStats, MAX_BINS};
pub use embedding::{extract_embeddings, silhouette_samples, silhouette_score, EmbeddingDump, EmbeddingRow, LabelKey};
pub use io::{
    read_accuracy_csv, read_distribution_json, read_embeddings_csv, write_accuracy_csv,
    write_distribution_json, write_embeddings_csv, write_metrics_csv, write_projection_csv,
    DistributionRecord,
};
pub use likelihood::{
    estimate_log_likelihood, log_mean_exp, reconstruction_error_distribution, reconstruction_errors,
    LevelView, DIAGNOSTIC_IMPORTANCE_SAMPLES,
};
pub use pca::{pca_project_2d, Projection, ProjectionRow};
