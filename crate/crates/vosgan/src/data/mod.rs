//! Dataset synthesis, clip/checkpoint persistence and ingestion.

pub mod dataset;
pub mod io;
pub mod sprites;

pub use dataset::{
    assign_splits, ingest_clips, labeled_subset, synth_dataset, ClipEntry, ClipStore,
    DatasetManifest, IngestSpec, Split,
};
pub use io::{
    crc32, read_flow_vosf, read_mask_vost, read_video_vost, write_flow_vosf, write_mask_vost,
    write_video_vost, BlobInfo, Checkpoint, CheckpointManifest, DataError,
};
pub use sprites::{synth_clip, synth_directed_clip, SpriteSceneSpec};
