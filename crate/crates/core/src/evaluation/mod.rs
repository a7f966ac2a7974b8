//! Objective evaluation: phone error rate, F0 contour comparison and
//! listening-test preference aggregation.

mod f0;
mod per;
mod preference;

pub use f0::{f0_series_csv, f0_similarity, overlay_csv_path, parse_f0_series_csv, plot_f0_overlay, F0Similarity, F0_CSV_HEADER};
pub use per::{compute_per, corpus_per, per_rows_csv, PerResult, PER_CSV_HEADER};
pub use preference::{aggregate_preferences, OptionShare, PreferenceSummary, PreferenceVote, NO_PREFERENCE};
