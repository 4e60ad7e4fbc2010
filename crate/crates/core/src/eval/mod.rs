//! Metrics, the end-to-end pipeline and the experiment grid.

pub mod metrics;
pub mod pipeline;
pub mod sweep;

pub use metrics::{macro_f1, ConfusionMatrix};
pub use pipeline::{
    evaluate, load_checkpoint, prepare_examples, save_checkpoint, train_pipeline, Augmentation,
    CheckpointMeta, CodebookCache, Evaluation, LayerSelection, OpensmileBooks, PipelineConfig,
    PreparedData, PreparedSplit, StreamSource, TrainedModel, CHECKPOINT_FILE,
};
pub use sweep::{
    augmentation_report, average_rows, category_gain, csv_header, gain_percent, render_csv,
    render_gains, render_text, result_row, run_cell, run_sweep, Cell, CellFailure, GainRow,
    ResultRow, SweepGrid, SweepReport,
};
