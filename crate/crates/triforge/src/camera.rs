//! Camera models, the 16-view orbit, ray generation, and both noise schemes.
//!
//! # Conventions (fixed once, used everywhere)
//!
//! * World frame: right-handed, **Y up**. Azimuth is measured in the XZ
//!   plane from +X, so a camera on an orbit of radius `d` at azimuth `a` and
//!   elevation `e` sits at `d·(cos e·cos a, sin e, cos e·sin a)`.
//! * Camera frame: x right, y **down**, z forward — the classic pinhole
//!   layout where image v grows downward. [`CameraPose::rotation`] maps world
//!   to camera (rows are the camera axes), and
//!   `translation = −rotation·position`.
//! * Objects live in the unit sphere ([`SCENE_RADIUS`]); cameras orbit at
//!   [`CAMERA_DISTANCE`] with a [`DEFAULT_FOV`] vertical field of view, wide
//!   enough to keep the sphere fully in frame at every elevation.
//!
//! Two distinct noise schemes ride on top:
//!
//! * **Render noise** ([`inject_render_noise`]): per-view uniform offsets on
//!   the *spherical* parameters (azimuth, elevation, distance), used when
//!   rendering multi-view training data so views don't sit on a perfect
//!   orbit. Offsets are recorded so datasets stay reproducible.
//! * **Train noise** ([`CameraPose::inject_train_noise`]): entrywise uniform
//!   offsets on the normalized intrinsics and the 3×4 extrinsic matrix of the
//!   *conditioning* pose, deliberately **not** re-orthonormalized — the model
//!   must tolerate slightly invalid matrices. Ray math therefore uses the
//!   true matrix inverse, never the transpose shortcut.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Mat3, Vec3};

/// Orbit radius, world units.
pub const CAMERA_DISTANCE: f64 = 2.7;
/// Bounding-sphere radius enclosing every scene.
pub const SCENE_RADIUS: f64 = 1.0;
/// Vertical field of view, radians (50°).
pub const DEFAULT_FOV: f64 = 50.0 * std::f64::consts::PI / 180.0;
/// Conditioning vector width consumed by the camera embedding network.
pub const CONDITIONING_DIM: usize = 20;

/// A pinhole camera: intrinsics in pixels plus a world-to-camera transform.
///
/// `rotation` is orthonormal (det +1 within 1e-6) for every camera this
/// module constructs; after [`CameraPose::inject_train_noise`] it may deviate
/// by design, and all ray math here stays correct for such near-rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct CameraPose {
    /// Focal length, pixels, horizontal.
    pub fx: f64,
    /// Focal length, pixels, vertical.
    pub fy: f64,
    /// Principal point x, pixels.
    pub cx: f64,
    /// Principal point y, pixels.
    pub cy: f64,
    /// Image width, pixels.
    pub width: u32,
    /// Image height, pixels.
    pub height: u32,
    /// World-to-camera rotation, rows = camera axes (right, down, forward).
    pub rotation: Mat3,
    /// World-to-camera translation: `x_cam = R·x_world + t`.
    pub translation: Vec3,
}

/// JSON layout used in dataset manifests: `R` flattened row-major.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl From<PoseRepr> for CameraPose {
    fn from(p: PoseRepr) -> Self {
        CameraPose {
            fx: p.fx,
            fy: p.fy,
            cx: p.cx,
            cy: p.cy,
            width: p.width,
            height: p.height,
            rotation: [
                [p.r[0], p.r[1], p.r[2]],
                [p.r[3], p.r[4], p.r[5]],
                [p.r[6], p.r[7], p.r[8]],
            ],
            translation: p.t,
        }
    }
}

impl From<CameraPose> for PoseRepr {
    fn from(p: CameraPose) -> Self {
        let r = p.rotation;
        PoseRepr {
            fx: p.fx,
            fy: p.fy,
            cx: p.cx,
            cy: p.cy,
            width: p.width,
            height: p.height,
            r: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            t: p.translation,
        }
    }
}

/// One camera ray with its bounding-sphere intersection interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// Camera position.
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    /// Entry of the interval to sample, ≥ 0.
    pub t_near: f64,
    /// Exit of the interval to sample; `t_near == t_far` flags a miss.
    pub t_far: f64,
}

impl Ray {
    /// Whether the ray intersects the scene sphere with positive extent.
    pub fn hits(&self) -> bool {
        self.t_far > self.t_near
    }
}

impl CameraPose {
    /// Camera at `position` looking at the world origin with the fixed
    /// axis convention (`up` = +Y) and a square pinhole of the given
    /// vertical field of view.
    ///
    /// Panics if `position` is on the Y axis (the convention's only
    /// degenerate direction); orbit elevations never exceed π/4 + noise, far
    /// from that pole.
    pub fn look_at_origin(position: Vec3, width: u32, height: u32, fov: f64) -> CameraPose {
        let forward = vec3::normalize(vec3::scale(position, -1.0));
        let up_world = [0.0, 1.0, 0.0];
        let side = vec3::cross(forward, up_world);
        assert!(
            vec3::norm(side) > 1e-9,
            "camera directly above/below the origin is degenerate"
        );
        let right = vec3::normalize(side);
        let down = vec3::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = vec3::scale(vec3::mat_vec(&rotation, position), -1.0);
        let f = (height as f64 / 2.0) / (fov / 2.0).tan();
        CameraPose {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    /// Orbit camera at the given spherical parameters (see module docs for
    /// the azimuth/elevation convention), default field of view.
    pub fn orbit_view(
        azimuth: f64,
        elevation: f64,
        distance: f64,
        width: u32,
        height: u32,
    ) -> CameraPose {
        let position = [
            distance * elevation.cos() * azimuth.cos(),
            distance * elevation.sin(),
            distance * elevation.cos() * azimuth.sin(),
        ];
        CameraPose::look_at_origin(position, width, height, DEFAULT_FOV)
    }

    /// Camera position in world coordinates.
    ///
    /// Computed as `−R⁻¹·t` with a true inverse so it stays meaningful for
    /// train-noised (non-orthonormal) poses.
    pub fn position(&self) -> Vec3 {
        let inv = vec3::inverse(&self.rotation);
        vec3::scale(vec3::mat_vec(&inv, self.translation), -1.0)
    }

    /// Rays through the given continuous image coordinates.
    ///
    /// `(u, v)` are in pixels with the origin at the top-left corner; a pixel
    /// index `(i, j)` has its center at `(i + 0.5, j + 0.5)`. Each ray's
    /// `[t_near, t_far]` is its intersection with the origin-centered sphere
    /// of `scene_radius`, clipped to non-negative `t`; rays that miss get
    /// `t_near == t_far` and render as background.
    pub fn pixel_rays(&self, pixels: &[(f64, f64)], scene_radius: f64) -> Vec<Ray> {
        let inv_r = vec3::inverse(&self.rotation);
        let origin = vec3::scale(vec3::mat_vec(&inv_r, self.translation), -1.0);
        let oo = vec3::dot(origin, origin) - scene_radius * scene_radius;
        pixels
            .iter()
            .map(|&(u, v)| {
                let dir_cam = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
                let direction = vec3::normalize(vec3::mat_vec(&inv_r, dir_cam));
                let b = vec3::dot(origin, direction);
                let disc = b * b - oo;
                let (t_near, t_far) = if disc > 0.0 {
                    let sq = disc.sqrt();
                    let t0 = (-b - sq).max(0.0);
                    let t1 = (-b + sq).max(0.0);
                    if t1 > t0 {
                        (t0, t1)
                    } else {
                        (0.0, 0.0)
                    }
                } else {
                    (0.0, 0.0)
                };
                Ray {
                    origin,
                    direction,
                    t_near,
                    t_far,
                }
            })
            .collect()
    }

    /// Project a world point to continuous pixel coordinates.
    /// Returns `None` for points at or behind the camera plane.
    pub fn project(&self, world: Vec3) -> Option<(f64, f64)> {
        let cam = vec3::add(vec3::mat_vec(&self.rotation, world), self.translation);
        if cam[2] <= 1e-12 {
            return None;
        }
        Some((
            self.cx + self.fx * cam[0] / cam[2],
            self.cy + self.fy * cam[1] / cam[2],
        ))
    }

    /// World point at camera-frame depth `z = depth` along the ray through
    /// image coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let cam = [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ];
        let inv = vec3::inverse(&self.rotation);
        vec3::mat_vec(&inv, vec3::sub(cam, self.translation))
    }

    /// The 20-value conditioning vector the camera embedding consumes:
    /// row-major 3×4 extrinsic `[R|t]` (12) + normalized intrinsics
    /// `fx/width, fy/height, cx/width, cy/height` (4) + 4 zeros of padding.
    pub fn conditioning_vector(&self) -> [f64; CONDITIONING_DIM] {
        let mut out = [0.0; CONDITIONING_DIM];
        for row in 0..3 {
            for col in 0..3 {
                out[row * 4 + col] = self.rotation[row][col];
            }
            out[row * 4 + 3] = self.translation[row];
        }
        out[12] = self.fx / self.width as f64;
        out[13] = self.fy / self.height as f64;
        out[14] = self.cx / self.width as f64;
        out[15] = self.cy / self.height as f64;
        out
    }

    /// Training-time conditioning noise: every entry of the normalized
    /// intrinsics and of the 3×4 extrinsic gets an independent uniform offset
    /// in `[−magnitude, magnitude]`. The rotation is left non-orthonormal on
    /// purpose. Zero magnitude returns the pose unchanged.
    pub fn inject_train_noise(&self, magnitude: f64, rng: &mut impl Rng) -> CameraPose {
        let mut pose = self.clone();
        if magnitude == 0.0 {
            return pose;
        }
        let mut jitter = || rng.gen_range(-magnitude..=magnitude);
        for row in 0..3 {
            for col in 0..3 {
                pose.rotation[row][col] += jitter();
            }
            pose.translation[row] += jitter();
        }
        let (w, h) = (self.width as f64, self.height as f64);
        pose.fx = (self.fx / w + jitter()) * w;
        pose.fy = (self.fy / h + jitter()) * h;
        pose.cx = (self.cx / w + jitter()) * w;
        pose.cy = (self.cy / h + jitter()) * h;
        pose
    }
}

/// The canonical acquisition trajectory: evenly spaced azimuths on a circle
/// at one shared elevation and distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    /// Number of views (16 everywhere in this crate).
    pub n_views: usize,
    /// Shared elevation, radians, in `[0, π/4]`.
    pub elevation: f64,
    /// Shared orbit radius, world units.
    pub distance: f64,
    /// Azimuth of view 0, radians.
    pub start_azimuth: f64,
    /// Azimuth increment per view, radians.
    pub azimuth_step: f64,
}

/// Maximum orbit elevation, radians (π/4).
pub const MAX_ELEVATION: f64 = std::f64::consts::FRAC_PI_4;

impl OrbitSpec {
    /// Standard 16-view orbit at the given elevation.
    pub fn new(elevation: f64) -> Result<OrbitSpec> {
        if !(0.0..=MAX_ELEVATION).contains(&elevation) {
            return Err(Error::InvalidArg(format!(
                "orbit elevation {elevation} outside [0, {MAX_ELEVATION}]"
            )));
        }
        Ok(OrbitSpec {
            n_views: 16,
            elevation,
            distance: CAMERA_DISTANCE,
            start_azimuth: 0.0,
            azimuth_step: std::f64::consts::TAU / 16.0,
        })
    }

    /// Azimuth of view `i`.
    pub fn azimuth(&self, i: usize) -> f64 {
        self.start_azimuth + i as f64 * self.azimuth_step
    }
}

/// Cameras for every view of an orbit, at the given image size.
pub fn orbit_cameras(spec: &OrbitSpec, width: u32, height: u32) -> Result<Vec<CameraPose>> {
    if !(0.0..=MAX_ELEVATION).contains(&spec.elevation) {
        return Err(Error::InvalidArg(format!(
            "orbit elevation {} outside [0, {MAX_ELEVATION}]",
            spec.elevation
        )));
    }
    Ok((0..spec.n_views)
        .map(|i| {
            CameraPose::orbit_view(spec.azimuth(i), spec.elevation, spec.distance, width, height)
        })
        .collect())
}

/// Per-view spherical offsets applied on top of an [`OrbitSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewJitter {
    /// Azimuth offset, radians.
    pub azimuth: f64,
    /// Elevation offset, radians (the effective elevation is re-clamped).
    pub elevation: f64,
    /// Distance offset, world units.
    pub distance: f64,
}

/// An orbit plus recorded render-noise offsets — everything needed to
/// reproduce the exact cameras a dataset was rendered with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisedOrbit {
    /// The underlying noise-free orbit.
    pub spec: OrbitSpec,
    /// One offset triple per view.
    pub offsets: Vec<ViewJitter>,
}

impl NoisedOrbit {
    /// Effective (azimuth, elevation, distance) of view `i`, with elevation
    /// clamped back into `[0, π/4]` after the offset.
    pub fn view_params(&self, i: usize) -> (f64, f64, f64) {
        let j = self.offsets[i];
        (
            self.spec.azimuth(i) + j.azimuth,
            (self.spec.elevation + j.elevation).clamp(0.0, MAX_ELEVATION),
            self.spec.distance + j.distance,
        )
    }

    /// Cameras for every (noised) view.
    pub fn cameras(&self, width: u32, height: u32) -> Vec<CameraPose> {
        (0..self.spec.n_views)
            .map(|i| {
                let (az, el, d) = self.view_params(i);
                CameraPose::orbit_view(az, el, d, width, height)
            })
            .collect()
    }
}

/// Render-time acquisition noise: each view's azimuth, elevation, and
/// distance receive independent uniform offsets in `[−magnitude, magnitude]`
/// (radians / world units). Zero magnitude yields all-zero offsets, making
/// the result equivalent to the clean orbit.
pub fn inject_render_noise(spec: &OrbitSpec, magnitude: f64, rng: &mut impl Rng) -> NoisedOrbit {
    let offsets = (0..spec.n_views)
        .map(|_| {
            if magnitude == 0.0 {
                ViewJitter {
                    azimuth: 0.0,
                    elevation: 0.0,
                    distance: 0.0,
                }
            } else {
                ViewJitter {
                    azimuth: rng.gen_range(-magnitude..=magnitude),
                    elevation: rng.gen_range(-magnitude..=magnitude),
                    distance: rng.gen_range(-magnitude..=magnitude),
                }
            }
        })
        .collect();
    NoisedOrbit {
        spec: *spec,
        offsets,
    }
}

/// Default render-noise magnitude (spherical offsets).
pub const RENDER_NOISE: f64 = 0.05;
/// Default train-noise magnitude (matrix entry offsets).
pub const TRAIN_NOISE: f64 = 0.02;
