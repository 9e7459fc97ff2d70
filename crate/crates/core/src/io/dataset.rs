use super::{atomic_write, read_image, ImageBuffer};
use crate::render::{Aabb, CameraView, Intrinsics, Pose, SceneFrame};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const META_FILE: &str = "meta.json";
/// Major version of the `meta.json` schema this build reads and writes.
pub const META_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaCrf {
    pub gamma: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaView {
    /// Path relative to the dataset directory.
    pub file: String,
    pub split: Split,
    /// Camera-to-world matrix, 16 row-major values.
    pub c2w: Vec<f64>,
    pub exposure_time_s: f64,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaJson {
    pub version: u32,
    pub bbox: Aabb,
    pub near: f64,
    pub far: f64,
    pub intrinsics: Intrinsics,
    pub crf: Option<MetaCrf>,
    pub c0_gt: Option<f64>,
    pub views: Vec<MetaView>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetView {
    pub file: String,
    pub split: Split,
    pub view: CameraView,
    pub image: ImageBuffer,
}

/// A validated dataset with all LDR images loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub root: PathBuf,
    pub frame: SceneFrame,
    pub crf: Option<MetaCrf>,
    pub c0_gt: Option<f64>,
    pub views: Vec<DatasetView>,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetView> {
        self.views.iter().filter(move |v| v.split == split)
    }

    /// Distinct exposure times over all views, ascending.
    pub fn exposure_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.views.iter().map(|v| v.view.exposure_time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn to_meta(&self) -> MetaJson {
        MetaJson {
            version: META_VERSION,
            bbox: self.frame.bbox,
            near: self.frame.near,
            far: self.frame.far,
            intrinsics: self.frame.intrinsics,
            crf: self.crf,
            c0_gt: self.c0_gt,
            views: self
                .views
                .iter()
                .map(|v| MetaView {
                    file: v.file.clone(),
                    split: v.split,
                    c2w: v.view.pose.to_c2w().to_vec(),
                    exposure_time_s: v.view.exposure_time,
                })
                .collect(),
        }
    }
}

/// Ground-truth HDR image for an LDR test file: `test_ldr/<pose>_t<k>.png`
/// maps to `test_hdr/<pose>.pfm`.
pub fn test_hdr_path(root: &Path, file: &str) -> PathBuf {
    let stem = Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let pose = match stem.rfind("_t") {
        Some(i) => &stem[..i],
        None => &stem,
    };
    root.join("test_hdr").join(format!("{pose}.pfm"))
}

pub fn write_meta(dir: &Path, meta: &MetaJson) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    atomic_write(&dir.join(META_FILE), text.as_bytes())
}

/// Reads `meta.json` and every image it references, failing on the first
/// inconsistency.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaJson = serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("{}: {e}", meta_path.display())))?;
    if meta.version != META_VERSION {
        return Err(Error::Input(format!(
            "{}: unsupported schema version {} (expected {META_VERSION})",
            meta_path.display(),
            meta.version
        )));
    }
    let frame = SceneFrame {
        bbox: meta.bbox,
        near: meta.near,
        far: meta.far,
        intrinsics: meta.intrinsics,
    };
    frame.validate()?;
    if let Some(c) = meta.crf {
        if !(c.gamma > 0.0 && c.gain > 0.0) {
            return Err(Error::Input("crf gamma and gain must be positive".into()));
        }
    }
    let mut views = Vec::with_capacity(meta.views.len());
    for (i, v) in meta.views.iter().enumerate() {
        let name = format!("view {i} ({})", v.file);
        if !(v.exposure_time_s > 0.0 && v.exposure_time_s.is_finite()) {
            return Err(Error::Input(format!(
                "{name}: exposure_time_s must be positive, got {}",
                v.exposure_time_s
            )));
        }
        let pose = Pose::from_c2w(&v.c2w).map_err(|e| Error::Input(format!("{name}: {e}")))?;
        let path = dir.join(&v.file);
        if !path.is_file() {
            return Err(Error::Input(format!("{name}: missing image {}", path.display())));
        }
        let image = read_image(&path)?;
        if image.width != frame.intrinsics.width || image.height != frame.intrinsics.height {
            return Err(Error::Input(format!(
                "{name}: image is {}x{}, intrinsics declare {}x{}",
                image.width, image.height, frame.intrinsics.width, frame.intrinsics.height
            )));
        }
        views.push(DatasetView {
            file: v.file.clone(),
            split: v.split,
            view: CameraView {
                pose,
                intrinsics: frame.intrinsics,
                exposure_time: v.exposure_time_s,
            },
            image,
        });
    }
    if !views.iter().any(|v| v.split == Split::Train) {
        return Err(Error::Input(format!("{}: no training views", meta_path.display())));
    }
    Ok(DatasetBundle {
        root: dir.to_path_buf(),
        frame,
        crf: meta.crf,
        c0_gt: meta.c0_gt,
        views,
    })
}
