//! Analytic HDR scenes, a parametric camera response and dataset emission.

use crate::io::{
    quantize, write_image, write_meta, ImageBuffer, MetaCrf, MetaJson, MetaView, Split,
    META_VERSION,
};
use crate::render::{
    composite_deltas, generate_rays, Aabb, CameraView, Intrinsics, Pose, SceneFrame,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Radiance reported outside every primitive.
pub const FLOOR_RADIANCE: [f64; 3] = [1e-3; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

impl Shape {
    /// Signed distance, negative inside.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
                d.sqrt() - radius
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                let q: [f64; 3] = std::array::from_fn(|i| (p[i] - center[i]).abs() - half_extents[i]);
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
        }
    }

    fn extent(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Sphere { center, radius } => (
                std::array::from_fn(|i| center[i] - radius),
                std::array::from_fn(|i| center[i] + radius),
            ),
            Shape::Box {
                center,
                half_extents,
            } => (
                std::array::from_fn(|i| center[i] - half_extents[i]),
                std::array::from_fn(|i| center[i] + half_extents[i]),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Falloff {
    /// Full density inside and on the boundary, none outside.
    Hard,
    /// Density ramps smoothly (smoothstep) across a shell of this width centered on the boundary.
    Smooth { width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub density: f64,
    pub radiance: [f64; 3],
    pub falloff: Falloff,
}

impl Primitive {
    /// Fraction of the peak density at `p`.
    pub fn occupancy(&self, p: [f64; 3]) -> f64 {
        let d = self.shape.signed_distance(p);
        match self.falloff {
            Falloff::Hard => {
                if d <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Falloff::Smooth { width } => {
                // smoothstep keeps density C1 across the shell
                let t = (0.5 - d / width).clamp(0.0, 1.0);
                t * t * (3.0 - 2.0 * t)
            }
        }
    }
}

/// Look-at cameras on a spherical patch around the scene center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub radius: f64,
    pub azimuth_count: usize,
    pub elevation_count: usize,
    /// Half-range in degrees.
    pub azimuth_range_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub fov_x_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            radius: 4.5,
            azimuth_count: 7,
            elevation_count: 5,
            azimuth_range_deg: 15.0,
            elevation_min_deg: -5.0,
            elevation_max_deg: 15.0,
            fov_x_deg: 30.0,
            width: 64,
            height: 64,
            near: 2.0,
            far: 7.0,
        }
    }
}

/// Gamma-plus-gain response: `Z = round(255 clamp(k H dt, 0, 1)^(1/gamma))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthCrf {
    pub gamma: f64,
    pub gain: f64,
}

impl Default for GroundTruthCrf {
    /// Gain chosen so that unit exposure maps to mid-gray.
    fn default() -> Self {
        GroundTruthCrf {
            gamma: 2.2,
            gain: 0.5f64.powf(2.2),
        }
    }
}

impl GroundTruthCrf {
    pub const BITS: u32 = 8;

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gain > 0.0 && self.gamma.is_finite() && self.gain.is_finite()) {
            return Err(Error::Input("crf gamma and gain must be positive".into()));
        }
        Ok(())
    }

    /// Unquantized normalized response to exposure `H dt`.
    pub fn response(&self, exposure: f64) -> f64 {
        (self.gain * exposure).clamp(0.0, 1.0).powf(1.0 / self.gamma)
    }

    /// Normalized response to log exposure `x = ln(H dt)`.
    pub fn response_log(&self, x: f64) -> f64 {
        self.response(x.exp())
    }

    /// Color at unit exposure, unquantized.
    pub fn c0(&self) -> f64 {
        self.response(1.0)
    }

    pub fn to_meta(&self) -> MetaCrf {
        MetaCrf {
            gamma: self.gamma,
            gain: self.gain,
        }
    }
}

impl From<MetaCrf> for GroundTruthCrf {
    fn from(m: MetaCrf) -> Self {
        GroundTruthCrf {
            gamma: m.gamma,
            gain: m.gain,
        }
    }
}

/// 8-bit pixel for HDR value `h` at exposure time `dt`.
pub fn apply_crf(h: [f64; 3], dt: f64, crf: &GroundTruthCrf) -> Result<[u8; 3]> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("exposure time must be positive, got {dt}")));
    }
    Ok(std::array::from_fn(|c| quantize(crf.response(h[c].max(0.0) * dt))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub bbox: Aabb,
    pub primitives: Vec<Primitive>,
    pub ambient_density: f64,
    pub rig: RigSpec,
    pub crf: GroundTruthCrf,
    /// Ascending exposure times t1..tn in seconds.
    pub exposure_times: Vec<f64>,
    /// Indices into `exposure_times` that training views draw from.
    pub train_exposures: Vec<usize>,
    /// Indices rendered as LDR for every test pose.
    pub test_exposures: Vec<usize>,
    /// Samples per ray for ground-truth rendering.
    pub gt_samples: usize,
}

impl Default for SceneSpec {
    /// A lit desk-scale scene: a dim backdrop, mid-range objects, a bright
    /// emitter and a chart of flat patches, spanning over three decades of
    /// radiance.
    fn default() -> Self {
        let smooth = Falloff::Smooth { width: 0.15 };
        let mut spec = SceneSpec {
            bbox: Aabb {
                min: [-2.8, -2.8, -2.0],
                max: [2.8, 2.8, 2.0],
            },
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        center: [0.0, 0.0, -1.2],
                        half_extents: [2.6, 2.6, 0.15],
                    },
                    density: 40.0,
                    radiance: [0.06, 0.045, 0.03],
                    falloff: smooth,
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.0, -1.15, -0.3],
                        half_extents: [1.3, 0.15, 1.0],
                    },
                    density: 40.0,
                    radiance: [0.35, 0.5, 0.7],
                    falloff: smooth,
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [-0.55, -0.35, 0.1],
                        radius: 0.5,
                    },
                    density: 40.0,
                    radiance: [2.5, 0.9, 0.4],
                    falloff: smooth,
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.65, -0.45, -0.4],
                        half_extents: [0.3, 0.4, 0.3],
                    },
                    density: 40.0,
                    radiance: [0.15, 1.2, 0.3],
                    falloff: smooth,
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.45, 0.6, -0.6],
                        radius: 0.3,
                    },
                    density: 40.0,
                    radiance: [40.0, 32.0, 20.0],
                    falloff: smooth,
                },
            ],
            ambient_density: 0.0,
            rig: RigSpec::default(),
            crf: GroundTruthCrf::default(),
            exposure_times: vec![1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0, 4.0],
            train_exposures: vec![0, 2, 4],
            test_exposures: vec![0, 1, 2, 3, 4],
            gt_samples: 2048,
        };
        // each channel meets every chart level exactly once, so all three
        // responses are exercised across their whole range at every
        // training exposure
        const LEVELS: [f64; 8] = [0.12, 0.5, 0.8, 3.0, 6.0, 12.0, 30.0, 90.0];
        const CHART: [([f64; 2], [usize; 3]); 8] = [
            ([-0.9, 1.0], [0, 2, 4]),
            ([-0.45, 1.0], [1, 3, 0]),
            ([0.0, 1.0], [2, 5, 1]),
            ([0.45, 1.05], [3, 1, 6]),
            ([0.9, 1.0], [4, 7, 2]),
            ([-0.9, 0.45], [5, 0, 3]),
            ([-0.45, 0.45], [6, 4, 7]),
            ([0.95, 0.45], [7, 6, 5]),
        ];
        for ([x, y], level) in CHART {
            spec.primitives.push(Primitive {
                shape: Shape::Box {
                    center: [x, y, -0.95],
                    half_extents: [0.15, 0.15, 0.1],
                },
                density: 40.0,
                radiance: level.map(|i| LEVELS[i]),
                falloff: smooth,
            });
        }
        spec
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        self.crf.validate()?;
        if !(self.ambient_density >= 0.0) {
            return Err(Error::Input("ambient density must be non-negative".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0) || p.radiance.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Input(format!(
                    "primitive {i}: density must be >= 0 and radiance > 0"
                )));
            }
            if let Falloff::Smooth { width } = p.falloff {
                if !(width > 0.0) {
                    return Err(Error::Input(format!("primitive {i}: falloff width must be positive")));
                }
            }
            let (lo, hi) = p.shape.extent();
            if !(self.bbox.contains(lo) && self.bbox.contains(hi)) {
                return Err(Error::Input(format!("primitive {i} extends outside the bounding box")));
            }
        }
        if !self.primitives.is_empty() && self.dynamic_range() < 1e3 {
            return Err(Error::Input(format!(
                "radiance spans {:.1}x across primitives, at least 1000x is required",
                self.dynamic_range()
            )));
        }
        let t = &self.exposure_times;
        if t.is_empty() || t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("exposure times must be positive and strictly increasing".into()));
        }
        for &i in self.train_exposures.iter().chain(&self.test_exposures) {
            if i >= t.len() {
                return Err(Error::Input(format!("exposure index {i} out of range")));
            }
        }
        if self.train_exposures.is_empty() || self.test_exposures.is_empty() {
            return Err(Error::Input("train and test exposure sets must be non-empty".into()));
        }
        if self.gt_samples == 0 {
            return Err(Error::Input("gt_samples must be positive".into()));
        }
        let r = &self.rig;
        if r.azimuth_count * r.elevation_count < 2 || r.width == 0 || r.height == 0 {
            return Err(Error::Input(
                "the rig needs at least 2 poses (one train, one test) and a non-empty image".into(),
            ));
        }
        Ok(())
    }

    /// Ratio of the largest to the smallest primitive radiance component.
    pub fn dynamic_range(&self) -> f64 {
        let all = self.primitives.iter().flat_map(|p| p.radiance);
        let (lo, hi) = all.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi / lo
    }

    pub fn frame(&self) -> SceneFrame {
        SceneFrame {
            bbox: self.bbox,
            near: self.rig.near,
            far: self.rig.far,
            intrinsics: Intrinsics::from_fov(self.rig.width, self.rig.height, self.rig.fov_x_deg),
        }
    }

    /// Camera poses in row-major (elevation, azimuth) order.
    pub fn poses(&self) -> Vec<Pose> {
        let r = &self.rig;
        let center = self.bbox.center();
        let lerp = |lo: f64, hi: f64, i: usize, n: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(r.azimuth_count * r.elevation_count);
        for e in 0..r.elevation_count {
            let el = lerp(r.elevation_min_deg, r.elevation_max_deg, e, r.elevation_count).to_radians();
            for a in 0..r.azimuth_count {
                let az = lerp(-r.azimuth_range_deg, r.azimuth_range_deg, a, r.azimuth_count).to_radians();
                let eye = [
                    center[0] + r.radius * el.cos() * az.sin(),
                    center[1] + r.radius * el.sin(),
                    center[2] + r.radius * el.cos() * az.cos(),
                ];
                out.push(Pose::look_at(eye, center, [0.0, 1.0, 0.0]));
            }
        }
        out
    }

    /// Checkerboard over the pose grid: even `(elevation + azimuth)` trains.
    pub fn pose_split(&self, index: usize) -> Split {
        let a = index % self.rig.azimuth_count;
        let e = index / self.rig.azimuth_count;
        if (a + e) % 2 == 0 {
            Split::Train
        } else {
            Split::Test
        }
    }
}

/// Ground-truth radiance and density at `p`. Density is the largest
/// primitive density there; radiance is the density-weighted mean of the
/// primitives covering `p`, so it varies continuously where shells overlap
/// and equals a primitive's own radiance wherever it is alone. Outside
/// every primitive the radiance is [`FLOOR_RADIANCE`] and the density is
/// ambient.
pub fn scene_field(spec: &SceneSpec, p: [f64; 3]) -> ([f64; 3], f64) {
    let mut sigma_max = 0.0f64;
    let mut total = 0.0;
    let mut mix = [0.0; 3];
    for prim in &spec.primitives {
        let s = prim.density * prim.occupancy(p);
        if s > 0.0 {
            sigma_max = sigma_max.max(s);
            total += s;
            for c in 0..3 {
                mix[c] += s * prim.radiance[c];
            }
        }
    }
    if total == 0.0 {
        return (FLOOR_RADIANCE, spec.ambient_density);
    }
    (mix.map(|m| m / total), sigma_max.max(spec.ambient_density))
}

fn render_pixels(spec: &SceneSpec, view: &CameraView, n: usize) -> Result<(Vec<f64>, f64)> {
    let frame = spec.frame();
    let k = &view.intrinsics;
    let pixels: Vec<(usize, usize)> = (0..k.height)
        .flat_map(|r| (0..k.width).map(move |c| (r, c)))
        .collect();
    let rays = generate_rays(view, &pixels, frame.near, frame.far)?;
    // midpoint rule: the field is sampled at bin centers and each sample
    // covers its whole bin, which is second-order accurate for smooth media
    let h = (frame.far - frame.near) / n as f64;
    let deltas = vec![h; n];
    let mut data = Vec::with_capacity(rays.len() * 3);
    let mut min_opacity = 1.0f64;
    let mut sig = Vec::with_capacity(n);
    let mut val = Vec::with_capacity(n);
    for ray in &rays {
        sig.clear();
        val.clear();
        for i in 0..n {
            let (e, sigma) = scene_field(spec, ray.at(frame.near + (i as f64 + 0.5) * h));
            sig.push(sigma);
            val.push(e);
        }
        let out = composite_deltas(&sig, &val, &deltas)?;
        data.extend(out.value);
        min_opacity = min_opacity.min(out.opacity);
    }
    Ok((data, min_opacity))
}

/// Ground-truth HDR rendering with `n_samples` equal bins per ray between
/// the rig's near and far bounds; radiance beyond `far` is black.
///
/// Also renders with twice the samples and reports whether every pixel
/// changed by less than 0.5 % (relative to the pixel, floored at 1e-3).
pub fn render_gt_hdr(spec: &SceneSpec, view: &CameraView, n_samples: usize) -> Result<(ImageBuffer, bool)> {
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be positive".into()));
    }
    let (a, _) = render_pixels(spec, view, n_samples)?;
    let (b, _) = render_pixels(spec, view, 2 * n_samples)?;
    let converged = a
        .iter()
        .zip(&b)
        .all(|(x, y)| (x - y).abs() <= 5e-3 * y.abs().max(1e-3));
    let k = &view.intrinsics;
    Ok((ImageBuffer::new(k.width, k.height, b)?, converged))
}

/// Lowest ray opacity over an image; rays below 1 see the black background.
pub fn min_opacity(spec: &SceneSpec, view: &CameraView, n_samples: usize) -> Result<f64> {
    Ok(render_pixels(spec, view, n_samples)?.1)
}

pub fn ldr_from_hdr(hdr: &ImageBuffer, dt: f64, crf: &GroundTruthCrf) -> Result<ImageBuffer> {
    let mut data = Vec::with_capacity(hdr.data.len());
    for p in hdr.pixels() {
        data.extend(apply_crf(p, dt, crf)?.iter().map(|&z| z as f64 / 255.0));
    }
    ImageBuffer::new(hdr.width, hdr.height, data)
}

/// Summary of a generated dataset.
#[derive(Clone, Debug)]
pub struct DatasetReport {
    pub meta: MetaJson,
    /// Poses whose ground truth did not pass the convergence check.
    pub unconverged: Vec<usize>,
}

/// Renders ground truth for every pose and writes `meta.json`, `train/`,
/// `test_ldr/` and `test_hdr/` under `out`. Byte-identical for a fixed seed.
pub fn make_dataset(spec: &SceneSpec, out: &Path, seed: u64) -> Result<DatasetReport> {
    spec.validate()?;
    let frame = spec.frame();
    let poses = spec.poses();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // train exposures are drawn up front so the draw order is fixed
    let draws: Vec<usize> = poses
        .iter()
        .map(|_| spec.train_exposures[rng.gen_range(0..spec.train_exposures.len())])
        .collect();
    if !(0..poses.len()).any(|i| spec.pose_split(i) == Split::Test) {
        return Err(Error::Input("split leaves no test poses".into()));
    }

    let rendered = poses
        .par_iter()
        .enumerate()
        .map(|(i, &pose)| {
            let view = CameraView {
                pose,
                intrinsics: frame.intrinsics,
                exposure_time: 1.0,
            };
            let (hdr, converged) = render_gt_hdr(spec, &view, spec.gt_samples)?;
            let mut views = Vec::new();
            let exposures: Vec<usize> = match spec.pose_split(i) {
                Split::Train => vec![draws[i]],
                Split::Test => spec.test_exposures.clone(),
            };
            for k in exposures {
                let dt = spec.exposure_times[k];
                let dir = match spec.pose_split(i) {
                    Split::Train => "train",
                    Split::Test => "test_ldr",
                };
                let file = format!("{dir}/{i:03}_t{}.png", k + 1);
                write_image(&out.join(&file), &ldr_from_hdr(&hdr, dt, &spec.crf)?)?;
                views.push(MetaView {
                    file,
                    split: spec.pose_split(i),
                    c2w: pose.to_c2w().to_vec(),
                    exposure_time_s: dt,
                });
            }
            if spec.pose_split(i) == Split::Test {
                write_image(&out.join(format!("test_hdr/{i:03}.pfm")), &hdr)?;
            }
            if !converged {
                log::warn!("pose {i}: ground truth changed by more than 0.5% when doubling samples");
            }
            Ok((views, converged))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut views = Vec::new();
    let mut unconverged = Vec::new();
    for (i, (v, ok)) in rendered.into_iter().enumerate() {
        views.extend(v);
        if !ok {
            unconverged.push(i);
        }
    }
    let meta = MetaJson {
        version: META_VERSION,
        bbox: frame.bbox,
        near: frame.near,
        far: frame.far,
        intrinsics: frame.intrinsics,
        crf: Some(spec.crf.to_meta()),
        c0_gt: Some(spec.crf.c0()),
        views,
    };
    write_meta(out, &meta)?;
    Ok(DatasetReport { meta, unconverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere_spec() -> SceneSpec {
        SceneSpec {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.0; 3],
                        radius: 0.5,
                    },
                    density: 20.0,
                    radiance: [5.0, 1.0, 0.1],
                    falloff: Falloff::Hard,
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [1.0, 1.0, 1.0],
                        radius: 0.2,
                    },
                    density: 20.0,
                    radiance: [0.004, 0.004, 0.004],
                    falloff: Falloff::Hard,
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn field_values_by_construction() {
        let s = sphere_spec();
        assert_eq!(scene_field(&s, [0.0; 3]), ([5.0, 1.0, 0.1], 20.0));
        assert_eq!(scene_field(&s, [1.9, -1.9, 1.9]).1, 0.0);
        // closed primitive: the boundary counts as inside
        assert_eq!(scene_field(&s, [0.5, 0.0, 0.0]).1, 20.0);
    }

    #[test]
    fn crf_examples() {
        let one = GroundTruthCrf {
            gamma: 2.2,
            gain: 1.0,
        };
        assert_eq!(apply_crf([0.0; 3], 1.0, &one).unwrap(), [0; 3]);
        assert_eq!(apply_crf([2.0; 3], 1.0, &one).unwrap(), [255; 3]);
        assert_eq!(apply_crf([0.5; 3], 1.0, &one).unwrap(), [186; 3]);
        assert!((GroundTruthCrf::default().c0() - 0.5).abs() < 1e-15);
        assert!((0.5f64.powf(2.2) - 0.2176).abs() < 1e-4);
        assert!(apply_crf([1.0; 3], 0.0, &one).is_err());
    }

    proptest! {
        #[test]
        fn crf_is_monotone(h in 0.0f64..50.0, dh in 0.0f64..10.0, dt in 1e-3f64..4.0, f in 1.0f64..4.0) {
            let crf = GroundTruthCrf::default();
            let a = apply_crf([h; 3], dt, &crf).unwrap()[0];
            prop_assert!(apply_crf([h + dh; 3], dt, &crf).unwrap()[0] >= a);
            prop_assert!(apply_crf([h; 3], dt * f, &crf).unwrap()[0] >= a);
        }

        #[test]
        fn crf_inverts_within_quantization(x in 0.001f64..1.0) {
            let crf = GroundTruthCrf::default();
            let h = x / crf.gain;
            let z = apply_crf([h; 3], 1.0, &crf).unwrap()[0] as f64 / 255.0;
            // the inverse response z^gamma is 2.2-Lipschitz on [0, 1]
            let back = z.powf(crf.gamma);
            prop_assert!((back - x).abs() <= crf.gamma * 0.5 / 255.0 + 1e-12);
        }
    }

    fn small_view(spec: &SceneSpec) -> CameraView {
        let mut s = spec.clone();
        s.rig.width = 8;
        s.rig.height = 8;
        CameraView {
            pose: s.poses()[17],
            intrinsics: s.frame().intrinsics,
            exposure_time: 1.0,
        }
    }

    #[test]
    fn empty_scene_renders_black() {
        let s = SceneSpec {
            primitives: vec![],
            ..Default::default()
        };
        let (img, ok) = render_gt_hdr(&s, &small_view(&s), 16).unwrap();
        assert!(ok);
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ray_inside_opaque_primitive_sees_its_radiance() {
        let mut s = SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Box {
                    center: [0.0; 3],
                    half_extents: [1.9; 3],
                },
                density: 30.0,
                radiance: [3.0, 0.2, 0.7],
                falloff: Falloff::Hard,
            }],
            ..Default::default()
        };
        s.rig.near = 0.1;
        s.rig.far = 1.5;
        let view = CameraView {
            pose: Pose::identity(),
            intrinsics: Intrinsics::from_fov(2, 2, 30.0),
            exposure_time: 1.0,
        };
        let (img, _) = render_gt_hdr(&s, &view, 64).unwrap();
        for p in img.pixels() {
            for c in 0..3 {
                assert!((p[c] - [3.0, 0.2, 0.7][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_scene_is_valid_and_converged() {
        let s = SceneSpec::default();
        s.validate().unwrap();
        assert!(s.dynamic_range() >= 1e3);
        let view = small_view(&s);
        let (_, ok) = render_gt_hdr(&s, &view, s.gt_samples).unwrap();
        assert!(ok);
        assert!(min_opacity(&s, &view, s.gt_samples).unwrap() > 0.99);
    }

    #[test]
    fn pose_grid_split_counts() {
        let s = SceneSpec::default();
        let n = s.poses().len();
        assert_eq!(n, 35);
        let train = (0..n).filter(|&i| s.pose_split(i) == Split::Train).count();
        assert_eq!((train, n - train), (18, 17));
    }

    #[test]
    fn shipped_scene_file_matches_default() {
        let text = include_str!("../../scenes/desk.json");
        let parsed: SceneSpec = serde_json::from_str(text).unwrap();
        assert_eq!(parsed, SceneSpec::default());
    }

    #[test]
    fn validation_rejects_narrow_range_and_escaping_primitives() {
        let mut s = sphere_spec();
        s.primitives[1].radiance = [1.0; 3];
        assert!(s.validate().is_err());
        let mut s = sphere_spec();
        s.primitives[0].shape = Shape::Sphere {
            center: [0.0, 0.0, 1.8],
            radius: 0.5,
        };
        assert!(s.validate().is_err());
    }
}
