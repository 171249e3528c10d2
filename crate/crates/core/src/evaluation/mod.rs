mod cv;
mod folds;
mod metrics;

pub use cv::*;
pub use folds::*;
pub use metrics::*;
