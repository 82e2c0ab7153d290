//! Recurrent cells, stacked networks, recursive multistep forecasting and
//! cost accounting.

mod cell;
mod io;
mod network;

pub use cell::{
    activation, gru_cell_forward, lstm_cell_forward, sigmoid, Activation, CellKind, GruCache,
    GruLayer, LstmCache, LstmLayer,
};
pub(crate) use cell::{gru_cell_backward, lstm_cell_backward};
pub use io::{ForecastModel, FORMAT_VERSION, MAGIC};
pub use network::{FlopBreakdown, ForwardTrace, Layer, Network, StepCache};

/// Multiply-accumulate count of one k-step forward pass plus head.
pub fn flop_count_per_forecast(net: &Network) -> u64 {
    net.flop_count_per_forecast()
}

pub fn param_count(net: &Network) -> usize {
    net.param_count()
}
