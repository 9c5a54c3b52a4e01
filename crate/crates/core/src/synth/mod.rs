//! Deterministic synthetic KITTI-style scenes and brute-force oracles.

mod config;
mod oracle;
mod scene;

pub use config::{AttentionConfig, CameraConfig, ClassDistribution, SceneConfig, SizeDistribution};
pub use oracle::{brute_force_ap, mc_iou, McMode};
pub use scene::{
    billboard_box, camera_of, corpus_offsets, generate_corpus, generate_scene, write_atomic,
    write_attention_file, write_corpus, write_roi_file, Scene, BILLBOARD_LENGTH,
};
