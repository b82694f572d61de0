//! Filtering, re-referencing and multitaper ERD/ERS analysis.

pub mod butterworth;
pub mod dpss;
pub mod erd;
pub mod multitaper;
mod reference;
pub mod stats;

pub use butterworth::{design_butterworth_bandpass, filter_causal, IirFilter, Sos};
pub use dpss::{dpss, TaperSet};
pub use erd::{
    average_tfr, bandpower_change, epoch_tfr, erd_ers, TfrMap, ALPHA_HZ, BASELINE_S, BETA_HZ,
    POST_CUE_INTERVAL_S,
};
pub use multitaper::{multitaper_spectrogram, Multitaper, PowerGrid, SpectrogramParams};
pub use reference::{common_average_reference, common_average_reference_epoch};
pub use stats::{boxstats, BoxStats};

use crate::data::Recording;
use crate::error::Result;

/// Applies `filter` causally to every channel.
pub fn filter_recording(filter: &IirFilter, rec: &Recording) -> Result<Recording> {
    let samples = rec.samples().iter().map(|x| filter_causal(filter, x)).collect();
    Recording::new(
        rec.sample_rate_hz(),
        rec.channels().to_vec(),
        samples,
        rec.subject_id.clone(),
    )
}
