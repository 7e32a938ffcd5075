//! A self-contained, CPU-only pipeline for feed-forward 3D reconstruction
//! from synthetic multi-view images.
//!
//! The crate covers the full loop from data synthesis to mesh export:
//!
//! * [`scene`] — procedural SDF scenes (spheres, boxes, tori, capsules under
//!   union and smooth union), sphere-traced Lambertian rendering, orbit
//!   sequence generation, and a severity-controlled corruption engine that
//!   produces realistically flawed sequences for curation experiments.
//! * [`data`] — compact multi-view descriptors, a linear SVM quality filter,
//!   an MLP elevation estimator, and the dataset builder that ties them
//!   together into a reproducible on-disk training set.
//! * [`tensor`] — a small reverse-mode autodiff engine on dynamically shaped
//!   arrays, generic over `f32`/`f64`, with gradient checking and a binary
//!   checkpoint format.
//! * [`reconstructor`] — the feed-forward model: a patch encoder over the
//!   input view, camera-pose conditioning, and a cross-attention decoder that
//!   emits a triplane.
//! * [`triplane`] / [`renderer`] — the radiance-field representation and the
//!   differentiable volume renderer that turns triplanes into images.
//! * [`losses`], [`optim`], [`trainer`] — multi-scale perceptual and opacity
//!   losses, AdamW with warmup/cosine scheduling, and the staged training
//!   driver with ablation and scaling harnesses.
//! * [`mesh`] — marching-cubes extraction of the density field and OBJ/PLY
//!   export with vertex colors.
//! * [`metrics`] / [`eval`] — PSNR/SSIM and the novel-view evaluation
//!   protocol used by the training harnesses.
//!
//! Everything is deterministic given a seed: no threads, no global RNG state,
//! and all randomness flows through explicitly seeded [`rand_chacha`]
//! generators. The heaviest numeric paths (attention, the NeRF head, bilinear
//! triplane sampling) run through [`ndarray`] matmuls.
//!
//! # A minimal round trip
//!
//! ```
//! use triforge::camera::CameraPose;
//! use triforge::scene::{generate_scene, render_view};
//!
//! // Deterministic procedural scene, one orbit view, exact mask.
//! let scene = generate_scene(7, 4);
//! let pose = CameraPose::orbit_view(0.9, 0.4, 2.7, 64, 64);
//! let view = render_view(&scene, &pose);
//! assert_eq!(view.rgb.width, 64);
//! // Background is white; the mask marks ray hits.
//! let hits: u32 = view.mask.iter().map(|&m| m as u32).sum();
//! assert!(hits > 0);
//! ```
//!
//! The `triforge` binary in the companion CLI crate exposes each stage
//! (`gen-data`, `build`, `pretrain`, `finetune`, `infer`, `export-mesh`, …)
//! as a subcommand; the library keeps all behavior testable in-process.

pub mod camera;
pub mod data;
pub mod error;
pub mod eval;
pub mod img;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod reconstructor;
pub mod renderer;
pub mod scene;
pub mod tensor;
pub mod trainer;
pub mod triplane;
pub mod vec3;

mod book;

pub use error::{Error, Result};
