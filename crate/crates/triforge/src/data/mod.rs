//! Dataset engine: descriptors, quality filtering, elevation labeling, and
//! on-disk dataset assembly.
//!
//! The pipeline mirrors how the multi-view sequences flow in practice:
//! render (or corrupt) sequences, summarize each as a fixed 168-dim
//! [`descriptor`](crate::data::describe), train a linear SVM to keep only
//! consistent sequences, train a small MLP to recover the one orbit
//! parameter the renders do not carry for free (elevation), then write the
//! kept sequences as MVB1 payloads plus a JSON manifest that training jobs
//! consume.

mod container;
mod descriptor;
mod elev;
mod manifest;
mod protocol;
mod svm;

pub use container::{
    MvbTensor, from_bytes, load_mvb, read_mvb, save_mvb, to_bytes, write_mvb,
};
pub use descriptor::{DESCRIPTOR_DIM, ELEVATION_VIEWS, FILTER_VIEWS, describe, describe_views};
pub use elev::{ElevationEstimator, ElevationTrainConfig, train_elevation};
pub use manifest::{
    BuildConfig, DatasetManifest, ManifestEntry, SourceKind, build_dataset, decode_payload,
    encode_payload, load_manifest, load_sequence,
};
pub use protocol::{DataProtocolConfig, DataProtocolReport, run_data_protocols};
pub use svm::{LinearSvm, filter_dataset, train_filter};
