//! Dataset assembly: render (and optionally corrupt) scenes, apply the
//! quality filter, label elevations, and write everything to disk as MVB1
//! payloads plus a JSON manifest.
//!
//! A dataset directory looks like:
//!
//! ```text
//! out/
//!   manifest.json
//!   payload/scene-000000.mvb   # u8 tensor [16, res, res, 4] (RGB + mask)
//!   payload/scene-000002.mvb
//!   ...
//! ```
//!
//! The manifest is the pose authority: payloads carry pixels only, and the
//! per-view camera poses, elevation label, and quality metadata live in the
//! JSON. Gaps in the payload numbering are scenes the filter rejected.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, MAX_ELEVATION, OrbitSpec, ViewJitter, NoisedOrbit};
use crate::error::{Error, Result};
use crate::img::{ImageF, Mask};
use crate::scene::{
    CorruptionSpec, MultiViewSequence, SdfScene, ViewRender, corrupt_sequence, render_sequence,
};

use super::container::{MvbTensor, load_mvb, save_mvb};
use super::elev::ElevationEstimator;
use super::svm::LinearSvm;
use super::describe;

/// Manifest schema version written by this crate.
pub const MANIFEST_VERSION: u32 = 1;

/// Whether a sequence is an exact procedural render or a corrupted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Exact render: perfectly 3D-consistent, ground-truth elevation.
    Clean,
    /// Corruption-augmented render standing in for generated video frames.
    Synthetic,
}

/// One dataset scene: pixels on disk, everything else inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Stable identifier, also the payload file stem.
    pub id: String,
    /// Payload path relative to the dataset directory.
    pub path: String,
    /// Per-view camera poses, in orbit order (16 of them).
    pub poses: Vec<CameraPose>,
    /// Elevation label, radians: ground truth for clean entries, the
    /// estimator's prediction for synthetic ones (when an estimator ran).
    pub elevation: f64,
    /// Descriptor-based proxy quality score (mask coverage times color
    /// entropy); used by selection ablations, independent of the SVM.
    pub quality_score: f64,
    /// Render provenance.
    pub source: SourceKind,
    /// Corruption severity in `[0,1]` for synthetic entries, absent for
    /// clean ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
}

/// Entry bookkeeping; all counts are scene counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCounts {
    /// Scenes generated before filtering.
    pub requested: usize,
    /// Scenes that survived the filter (== number of entries).
    pub kept: usize,
    /// Scenes the filter rejected.
    pub rejected: usize,
    /// Kept entries with `source == clean`.
    pub clean: usize,
    /// Kept entries with `source == synthetic`.
    pub synthetic: usize,
}

/// The dataset index written as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Schema version ([`MANIFEST_VERSION`]).
    pub version: u32,
    /// Master seed the dataset was built from.
    pub seed: u64,
    /// Square image resolution of every payload.
    pub resolution: u32,
    /// Scene counts.
    pub counts: ManifestCounts,
    /// Kept scenes, in generation order.
    pub entries: Vec<ManifestEntry>,
}

/// Knobs for [`build_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct BuildConfig {
    /// Scenes to generate (entry count may be lower after filtering).
    pub scenes: usize,
    /// Square render resolution.
    pub resolution: u32,
    /// Probability that a scene is kept clean instead of corrupted;
    /// 1.0 builds a pure clean dataset, 0.0 a pure synthetic one.
    pub clean_fraction: f64,
    /// Severity is drawn as `u^severity_exponent` with `u` uniform on
    /// `[0,1)`; the default 2.5 concentrates mass at mild corruption so a
    /// filtered dataset is not starved.
    pub severity_exponent: f64,
    /// Master seed; every scene derives its own streams from it.
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            scenes: 64,
            resolution: 96,
            clean_fraction: 0.0,
            severity_exponent: 2.5,
            seed: 0,
        }
    }
}

/// Pack a sequence's pixels as one u8 MVB1 tensor `[views, res, res, 4]`
/// (RGB quantized to 8 bits, mask in the alpha slot as 0/255).
pub fn encode_payload(seq: &MultiViewSequence) -> MvbTensor {
    let n = seq.views.len();
    let (w, h) = (seq.views[0].rgb.width, seq.views[0].rgb.height);
    assert_eq!(w, h, "payloads are square");
    let mut data = Vec::with_capacity(n * h * w * 4);
    for view in &seq.views {
        for y in 0..h {
            for x in 0..w {
                let [r, g, b] = view.rgb.get(x, y);
                for v in [r, g, b] {
                    data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
                data.push(if view.mask.get(x, y) == 1 { 255 } else { 0 });
            }
        }
    }
    MvbTensor::u8(vec![n as u32, h as u32, w as u32, 4], data)
}

/// Unpack a payload tensor back into views, attaching the manifest's poses
/// and elevation label.
///
/// The returned sequence's `orbit` is a nominal zero-offset orbit at the
/// labeled elevation and its `scene_seed` is 0: payloads are data, not
/// re-derivable scenes, and the per-view poses are the authority.
pub fn decode_payload(
    t: &MvbTensor,
    poses: &[CameraPose],
    elevation: f64,
) -> Result<MultiViewSequence> {
    let (extents, data) = match t {
        MvbTensor::U8 { extents, data } => (extents, data),
        MvbTensor::F32 { .. } => {
            return Err(Error::format("MVB1", "payload must be u8, found f32"));
        }
    };
    if extents.len() != 4 || extents[3] != 4 || extents[1] != extents[2] {
        return Err(Error::format(
            "MVB1",
            format!("payload extents {extents:?}, expected [views, res, res, 4]"),
        ));
    }
    let n = extents[0] as usize;
    let res = extents[1] as usize;
    if poses.len() != n {
        return Err(Error::format(
            "manifest",
            format!("{} poses for {n} views", poses.len()),
        ));
    }
    let stride = res * res * 4;
    let mut views = Vec::with_capacity(n);
    for (i, pose) in poses.iter().enumerate() {
        let px = &data[i * stride..(i + 1) * stride];
        let mut rgb = ImageF::filled(res, res, [0.0; 3]);
        let mut mask = Mask::filled(res, res, 0);
        for y in 0..res {
            for x in 0..res {
                let at = (y * res + x) * 4;
                rgb.set(
                    x,
                    y,
                    [
                        px[at] as f32 / 255.0,
                        px[at + 1] as f32 / 255.0,
                        px[at + 2] as f32 / 255.0,
                    ],
                );
                mask.set(x, y, u8::from(px[at + 3] >= 128));
            }
        }
        views.push(ViewRender {
            rgb,
            mask,
            pose: pose.clone(),
            elevation,
        });
    }
    let spec = OrbitSpec::new(elevation.clamp(0.0, MAX_ELEVATION))?;
    let offsets = vec![
        ViewJitter {
            azimuth: 0.0,
            elevation: 0.0,
            distance: 0.0,
        };
        n
    ];
    Ok(MultiViewSequence {
        views,
        orbit: NoisedOrbit { spec, offsets },
        elevation,
        scene_seed: 0,
    })
}

/// Filter-independent quality proxy: mean mask coverage times the mean
/// Shannon entropy (bits) of the per-channel 16-bin color histograms.
/// Degenerate sequences (empty masks, flat color) score near zero.
pub fn proxy_quality(seq: &MultiViewSequence) -> f64 {
    let coverage: f64 = seq
        .views
        .iter()
        .map(|v| v.mask.coverage())
        .sum::<f64>()
        / seq.views.len() as f64;
    let mut entropy = 0.0;
    for view in &seq.views {
        let mut hist = [[0.0f64; 16]; 3];
        for (j, &v) in view.rgb.data.iter().enumerate() {
            let bin = ((v as f64 * 16.0) as usize).min(15);
            hist[j % 3][bin] += 1.0;
        }
        let n_px = (view.rgb.width * view.rgb.height) as f64;
        for ch in &hist {
            for &c in ch {
                if c > 0.0 {
                    let p = c / n_px;
                    entropy -= p * p.log2();
                }
            }
        }
    }
    entropy /= (seq.views.len() * 3) as f64;
    coverage * entropy
}

/// Generate, filter, label, and write a dataset; returns the manifest that
/// was also written to `out_dir/manifest.json`.
///
/// The filter (when supplied) judges synthetic sequences only — clean
/// renders are consistent by construction. The estimator (when supplied)
/// labels synthetic entries; clean entries always carry ground truth.
pub fn build_dataset(
    cfg: &BuildConfig,
    filter: Option<&LinearSvm>,
    estimator: Option<&ElevationEstimator>,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir.join("payload"))?;
    let mut entries = Vec::new();
    let mut rejected = 0usize;
    let (mut n_clean, mut n_synth) = (0usize, 0usize);
    for i in 0..cfg.scenes {
        let id = format!("scene-{i:06}");
        // Independent per-scene streams so scene i is identical no matter
        // how many scenes surround it (prefix subsets stay comparable).
        let scene_seed = cfg.seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let scene = SdfScene::sample(rng.gen());
        let elevation = rng.gen_range(0.0..MAX_ELEVATION);
        let spec = OrbitSpec::new(elevation)?;
        let clean = render_sequence(&scene, &spec, cfg.resolution, true, &mut rng);

        let is_clean = rng.gen_bool(cfg.clean_fraction.clamp(0.0, 1.0));
        let (seq, severity) = if is_clean {
            (clean, None)
        } else {
            let u: f64 = rng.gen_range(0.0..1.0);
            let s = u.powf(cfg.severity_exponent);
            let spec = CorruptionSpec::all(s, rng.gen());
            (corrupt_sequence(&clean, &spec), Some(s))
        };

        if let (Some(svm), Some(_)) = (filter, severity) {
            if !svm.keeps(&describe(&seq)) {
                rejected += 1;
                continue;
            }
        }

        let label = match (severity, estimator) {
            (Some(_), Some(est)) => est.predict(&seq),
            _ => elevation,
        };
        let path = format!("payload/{id}.mvb");
        save_mvb(out_dir.join(&path), &[encode_payload(&seq)])?;
        if severity.is_none() {
            n_clean += 1;
        } else {
            n_synth += 1;
        }
        entries.push(ManifestEntry {
            id,
            path,
            poses: seq.views.iter().map(|v| v.pose.clone()).collect(),
            elevation: label,
            quality_score: proxy_quality(&seq),
            source: if severity.is_none() {
                SourceKind::Clean
            } else {
                SourceKind::Synthetic
            },
            severity,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        resolution: cfg.resolution,
        counts: ManifestCounts {
            requested: cfg.scenes,
            kept: entries.len(),
            rejected,
            clean: n_clean,
            synthetic: n_synth,
        },
        entries,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Read and validate `dir/manifest.json`: counts must be consistent and
/// every payload must exist and decode to the declared shape.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            "manifest",
            format!("version {} unsupported", manifest.version),
        ));
    }
    let c = &manifest.counts;
    if c.kept != manifest.entries.len()
        || c.kept + c.rejected != c.requested
        || c.clean + c.synthetic != c.kept
    {
        return Err(Error::format(
            "manifest",
            format!("inconsistent counts {c:?} for {} entries", manifest.entries.len()),
        ));
    }
    for e in &manifest.entries {
        if e.poses.len() != 16 {
            return Err(Error::format(
                "manifest",
                format!("{}: {} poses, expected 16", e.id, e.poses.len()),
            ));
        }
        if !(0.0..=MAX_ELEVATION).contains(&e.elevation) {
            return Err(Error::format(
                "manifest",
                format!("{}: elevation {} out of range", e.id, e.elevation),
            ));
        }
        if (e.source == SourceKind::Clean) != e.severity.is_none() {
            return Err(Error::format(
                "manifest",
                format!("{}: severity must be recorded iff synthetic", e.id),
            ));
        }
        let tensors = load_mvb(dir.join(&e.path))
            .map_err(|err| Error::format("manifest", format!("{}: {err}", e.id)))?;
        let want = [16, manifest.resolution, manifest.resolution, 4];
        match tensors.as_slice() {
            [t] if t.extents() == want => {}
            [t] => {
                return Err(Error::format(
                    "manifest",
                    format!("{}: payload extents {:?}, want {want:?}", e.id, t.extents()),
                ));
            }
            other => {
                return Err(Error::format(
                    "manifest",
                    format!("{}: {} tensors in payload, want 1", e.id, other.len()),
                ));
            }
        }
    }
    Ok(manifest)
}

/// Load one entry's pixels from a validated dataset directory.
pub fn load_sequence(dir: &Path, entry: &ManifestEntry) -> Result<MultiViewSequence> {
    let tensors = load_mvb(dir.join(&entry.path))?;
    decode_payload(&tensors[0], &entry.poses, entry.elevation)
}
