//! Trace ingestion, per-machine aggregation, gap repair, MinMax scaling and
//! supervised windowing.

mod scaler;
mod series;
mod trace;
mod window;

pub use scaler::{
    apply_scaler, apply_scaler_series, fit_scaler, fit_scaler_matrix, invert_scaler, ScalerParams,
};
pub use series::{
    interpolate_missing, read_series_csv, write_series_csv, MachineSeries, FEATURE_NAMES,
};
pub use trace::{aggregate_machine_usage, parse_trace, ParsedTrace, TraceRecord, TraceSchema};
pub use window::{
    make_windows, split_dataset, split_point, windows_from_matrix, Sample, WindowedDataset,
};
