//! Signed-distance primitives and the procedural scene sampler.
//!
//! Scenes are small unions (hard or smooth) of axis-aligned primitives,
//! normalized to fit inside the unit sphere so the camera module's bounding
//! assumptions hold by construction. Every per-primitive SDF is exact
//! (Lipschitz 1); the polynomial smooth union can under-estimate distance in
//! blend regions, which the sphere tracer compensates for with a fixed step
//! relaxation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::vec3::{self, Vec3};

/// Radius budget scenes are normalized into (inside the unit scene sphere,
/// with headroom for smooth-union bulge).
const FIT_RADIUS: f64 = 0.9;

/// An axis-aligned distance primitive. Sizes are world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Ball of the given radius.
    Sphere {
        /// Radius.
        radius: f64,
    },
    /// Axis-aligned box with the given half-extents.
    Box {
        /// Half-extent along each axis.
        half: Vec3,
    },
    /// Torus lying in the XZ plane.
    Torus {
        /// Ring radius (center of the tube).
        major: f64,
        /// Tube radius.
        minor: f64,
    },
    /// Capsule along the Y axis.
    Capsule {
        /// Half the segment length (excluding the caps).
        half_length: f64,
        /// Cap/tube radius.
        radius: f64,
    },
}

impl Shape {
    /// Exact signed distance from `p` (in the primitive's local frame).
    pub fn distance(&self, p: Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => vec3::norm(p) - radius,
            Shape::Box { half } => {
                let q = [
                    p[0].abs() - half[0],
                    p[1].abs() - half[1],
                    p[2].abs() - half[2],
                ];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                vec3::norm(outside) + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Shape::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[2] * p[2]).sqrt() - major;
                (ring * ring + p[1] * p[1]).sqrt() - minor
            }
            Shape::Capsule {
                half_length,
                radius,
            } => {
                let y = p[1].clamp(-half_length, half_length);
                vec3::norm([p[0], p[1] - y, p[2]]) - radius
            }
        }
    }

    /// Radius of the smallest origin-centered ball containing the shape.
    pub fn outer_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => vec3::norm(half),
            Shape::Torus { major, minor } => major + minor,
            Shape::Capsule {
                half_length,
                radius,
            } => half_length + radius,
        }
    }

    /// Uniformly scale all size parameters.
    fn scaled(&self, s: f64) -> Shape {
        match *self {
            Shape::Sphere { radius } => Shape::Sphere { radius: radius * s },
            Shape::Box { half } => Shape::Box {
                half: vec3::scale(half, s),
            },
            Shape::Torus { major, minor } => Shape::Torus {
                major: major * s,
                minor: minor * s,
            },
            Shape::Capsule {
                half_length,
                radius,
            } => Shape::Capsule {
                half_length: half_length * s,
                radius: radius * s,
            },
        }
    }
}

/// How a primitive joins the scene accumulated before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Blend {
    /// Hard minimum.
    Union,
    /// Polynomial smooth minimum with blend width `k`.
    SmoothUnion(f64),
}

/// One placed, colored primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    /// The distance shape.
    pub shape: Shape,
    /// World-space center.
    pub center: Vec3,
    /// Lambertian albedo, RGB in `[0, 1]`.
    pub albedo: [f32; 3],
    /// Join rule against the scene built so far (ignored for the first).
    pub blend: Blend,
}

impl Primitive {
    /// Signed distance from a world point to this primitive alone.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.shape.distance(vec3::sub(p, self.center))
    }
}

/// A procedural scene: an ordered list of blended primitives.
///
/// The fold order matters for smooth unions, so primitives are a list, not a
/// set. The generator guarantees the whole scene fits inside the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfScene {
    /// Primitives, folded in order.
    pub primitives: Vec<Primitive>,
    /// The seed that generated this scene (0 for hand-built ones).
    pub seed: u64,
}

/// Polynomial smooth minimum (blend width `k`): equals `min` outside the
/// blend band, dips below it inside (surface bulges outward by ≤ `k/4`).
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b * (1.0 - h) + a * h - k * h * (1.0 - h)
}

impl SdfScene {
    /// Scene distance: primitives folded with their blend rules. An empty
    /// scene is everywhere infinitely far.
    pub fn distance(&self, p: Vec3) -> f64 {
        let mut iter = self.primitives.iter();
        let Some(first) = iter.next() else {
            return f64::INFINITY;
        };
        let mut d = first.distance(p);
        for prim in iter {
            let di = prim.distance(p);
            d = match prim.blend {
                Blend::Union => d.min(di),
                Blend::SmoothUnion(k) => smooth_min(d, di, k),
            };
        }
        d
    }

    /// Albedo of the nearest primitive — the color a surface point takes.
    pub fn albedo(&self, p: Vec3) -> [f32; 3] {
        let mut best = [0.0f32; 3];
        let mut best_d = f64::INFINITY;
        for prim in &self.primitives {
            let d = prim.distance(p);
            if d < best_d {
                best_d = d;
                best = prim.albedo;
            }
        }
        best
    }

    /// Outward surface normal by central differences (step 1e-4).
    pub fn normal(&self, p: Vec3) -> Vec3 {
        const EPS: f64 = 1e-4;
        let mut n = [0.0f64; 3];
        for axis in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[axis] += EPS;
            lo[axis] -= EPS;
            n[axis] = self.distance(hi) - self.distance(lo);
        }
        vec3::normalize(n)
    }

    /// Convenience sampler with a seed-derived complexity in 2..=6.
    pub fn sample(seed: u64) -> SdfScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let complexity = rng.gen_range(2..=6);
        generate_scene(seed, complexity)
    }
}

/// Deterministically generate a scene with 1..=`complexity` primitives,
/// normalized to fit well inside the unit sphere.
///
/// The first primitive is a large "body" near the origin; the rest attach at
/// random offsets, half of them smooth-blended. Panics if `complexity` is
/// outside 1..=8.
pub fn generate_scene(seed: u64, complexity: u32) -> SdfScene {
    assert!(
        (1..=8).contains(&complexity),
        "scene complexity {complexity} outside 1..=8"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=complexity);
    let mut primitives = Vec::with_capacity(n as usize);
    for i in 0..n {
        let body = i == 0;
        let scale = if body {
            rng.gen_range(0.35..0.55)
        } else {
            rng.gen_range(0.15..0.35)
        };
        let shape = match rng.gen_range(0..4) {
            0 => Shape::Sphere { radius: scale },
            1 => Shape::Box {
                half: [
                    scale * rng.gen_range(0.6..1.0),
                    scale * rng.gen_range(0.6..1.0),
                    scale * rng.gen_range(0.6..1.0),
                ],
            },
            2 => Shape::Torus {
                major: scale * 0.75,
                minor: scale * rng.gen_range(0.2..0.35),
            },
            _ => Shape::Capsule {
                half_length: scale * 0.7,
                radius: scale * rng.gen_range(0.35..0.55),
            },
        };
        let spread = if body { 0.12 } else { 0.45 };
        let center = [
            rng.gen_range(-spread..=spread),
            rng.gen_range(-spread..=spread),
            rng.gen_range(-spread..=spread),
        ];
        let albedo = [
            rng.gen_range(0.1..0.9) as f32,
            rng.gen_range(0.1..0.9) as f32,
            rng.gen_range(0.1..0.9) as f32,
        ];
        let blend = if body || rng.gen_bool(0.5) {
            Blend::Union
        } else {
            Blend::SmoothUnion(rng.gen_range(0.05..0.2))
        };
        primitives.push(Primitive {
            shape,
            center,
            albedo,
            blend,
        });
    }

    // Normalize: the loosest bound is per-primitive reach plus the largest
    // smooth-union bulge (k/4).
    let mut bulge = 0.0f64;
    for p in &primitives {
        if let Blend::SmoothUnion(k) = p.blend {
            bulge = bulge.max(k / 4.0);
        }
    }
    let bound = primitives
        .iter()
        .map(|p| vec3::norm(p.center) + p.shape.outer_radius())
        .fold(0.0f64, f64::max)
        + bulge;
    if bound > FIT_RADIUS {
        let s = FIT_RADIUS / bound;
        for p in &mut primitives {
            p.center = vec3::scale(p.center, s);
            p.shape = p.shape.scaled(s);
        }
    }
    SdfScene { primitives, seed }
}
