//! Procedural scenes and everything rendered from them: exact single views,
//! 16-view orbit sequences, and the corruption engine that degrades them.
//!
//! The module is the pipeline's data source. [`generate_scene`] builds a
//! deterministic SDF scene from a seed, [`render_view`] sphere-traces one
//! exact view, [`render_sequence`] produces the canonical 16-view orbit (with
//! optional recorded acquisition noise), and [`corrupt_sequence`] degrades a
//! clean sequence under a severity knob. Clean sequences play the role of
//! artist-made 3D assets; corrupted ones emulate imperfect generated
//! multi-view data — the contrast the data engine's quality filter learns.

mod corrupt;
mod render;
mod sdf;

pub use corrupt::{CorruptionSpec, corrupt_sequence};
pub use render::{MAX_TRACE_STEPS, ViewRender, render_view, shade, trace_ray};
pub use sdf::{Blend, Primitive, SdfScene, Shape, generate_scene};

use rand::Rng;

use crate::camera::{NoisedOrbit, OrbitSpec, RENDER_NOISE, inject_render_noise};

/// A full 16-view acquisition of one scene, with the exact orbit (including
/// any recorded noise offsets) that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSequence {
    /// The rendered views, in orbit order.
    pub views: Vec<ViewRender>,
    /// The orbit and its per-view noise offsets.
    pub orbit: NoisedOrbit,
    /// Ground-truth base elevation of the orbit, radians.
    pub elevation: f64,
    /// Seed of the scene that was rendered (diagnostic).
    pub scene_seed: u64,
}

impl MultiViewSequence {
    /// Number of views (16 for every sequence this crate builds).
    pub fn len(&self) -> usize {
        self.views.len()
    }

    /// Whether the sequence has no views.
    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Render every view of an orbit around a scene.
///
/// With `with_render_noise` the orbit parameters of each view receive the
/// standard ±0.05 acquisition jitter (recorded in the returned sequence);
/// without it the offsets are all zero and the views sit exactly on the
/// orbit. `res` is the square image resolution.
pub fn render_sequence(
    scene: &SdfScene,
    spec: &OrbitSpec,
    res: u32,
    with_render_noise: bool,
    rng: &mut impl Rng,
) -> MultiViewSequence {
    let magnitude = if with_render_noise { RENDER_NOISE } else { 0.0 };
    let orbit = inject_render_noise(spec, magnitude, rng);
    let views = orbit
        .cameras(res, res)
        .iter()
        .map(|pose| render_view(scene, pose))
        .collect();
    MultiViewSequence {
        views,
        orbit,
        elevation: spec.elevation,
        scene_seed: scene.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CAMERA_DISTANCE;
    use approx::assert_abs_diff_eq;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn clean_sequence_views_step_azimuth_exactly() {
        let scene = generate_scene(1, 3);
        let orbit = OrbitSpec::new(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = render_sequence(&scene, &orbit, 16, false, &mut rng);
        assert_eq!(seq.len(), 16);
        for i in 0..16 {
            let (az, el, d) = seq.orbit.view_params(i);
            assert_abs_diff_eq!(az, i as f64 * std::f64::consts::TAU / 16.0, epsilon = 1e-12);
            assert_abs_diff_eq!(el, 0.2, epsilon = 1e-12);
            assert_abs_diff_eq!(d, CAMERA_DISTANCE, epsilon = 1e-12);
        }
    }

    #[test]
    fn opposite_views_of_a_centered_sphere_share_their_silhouette() {
        let scene = SdfScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.6 },
                center: [0.0, 0.0, 0.0],
                albedo: [0.5, 0.5, 0.5],
                blend: Blend::Union,
            }],
            seed: 0,
        };
        let orbit = OrbitSpec::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = render_sequence(&scene, &orbit, 32, false, &mut rng);
        let iou = seq.views[0].mask.iou(&seq.views[8].mask);
        assert!(iou > 0.99, "view 0 vs view 8 silhouette IoU {iou}");
    }

    #[test]
    fn random_scenes_are_visible_in_every_view() {
        for seed in 0..100 {
            let scene = generate_scene(seed, 6);
            let orbit = OrbitSpec::new((seed as f64 * 0.007) % 0.78).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = render_sequence(&scene, &orbit, 24, true, &mut rng);
            for (i, view) in seq.views.iter().enumerate() {
                assert!(
                    view.mask.coverage() > 0.0,
                    "scene {seed} view {i} rendered empty"
                );
            }
        }
    }

    #[test]
    fn render_noise_offsets_are_recorded_and_bounded() {
        let scene = generate_scene(2, 2);
        let orbit = OrbitSpec::new(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = render_sequence(&scene, &orbit, 16, true, &mut rng);
        let mut any_nonzero = false;
        for j in &seq.orbit.offsets {
            assert!(j.azimuth.abs() <= RENDER_NOISE);
            assert!(j.elevation.abs() <= RENDER_NOISE);
            assert!(j.distance.abs() <= RENDER_NOISE);
            any_nonzero |= j.azimuth != 0.0;
        }
        assert!(any_nonzero);
    }
}

