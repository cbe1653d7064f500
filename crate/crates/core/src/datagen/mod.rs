//! Spherical segmentation data: canvases of pasted items, stereographic
//! projection onto the sphere, random rotations, dataset files and metrics.

pub mod canvas;
pub mod dataset;
pub mod metrics;
pub mod projection;
pub mod sources;

pub use canvas::{paste_at, paste_items, Canvas, Placement, SourceImage, APPAREL_THRESHOLD, CANVAS_SIZE, DIGIT_THRESHOLD, ITEM_SIZE};
pub use dataset::{generate_dataset, generate_record, DataGenConfig, Dataset, DatasetHeader, DatasetRecord};
pub use metrics::{accuracy, miou, IouAccumulator};
pub use projection::{project_canvas_to_sphere, ProjectionPoint, DEFAULT_CAP_RADIUS};
pub use sources::{decode_gray, encode_gray, read_gray, render_digit, synthetic_digits, write_gray};
