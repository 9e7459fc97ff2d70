use super::composite::{composite_on_tape, deltas};
use super::sampling::{bin_edges, hierarchical_sample, merge_sorted, stratified_sample};
use super::{generate_rays, Aabb, CameraView, Ray, SceneFrame};
use crate::autodiff::{Tape, Tensor, Var};
use crate::io::ImageBuffer;
use crate::model::{encode_samples, BundleVars, FieldVars, ModelBundle, ModelConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rays rendered per tape when evaluating images.
const RENDER_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub coarse_samples: usize,
    /// Importance samples added for the fine model.
    pub fine_samples: usize,
    /// Added to every coarse weight before importance sampling.
    pub importance_floor: f64,
    /// Jitter stratified and importance samples. Off gives bin midpoints
    /// and stratum-centered inverse-CDF variates.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            coarse_samples: 32,
            fine_samples: 32,
            importance_floor: 1e-5,
            jitter: false,
            seed: 0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_samples == 0 || self.fine_samples == 0 {
            return Err(Error::Input("sample counts must be positive".into()));
        }
        if !(self.importance_floor >= 0.0) {
            return Err(Error::Input("importance floor must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenderMode {
    /// Tone-mapped color at this exposure time in seconds.
    Ldr { exposure_time: f64 },
    /// Radiance without tone mapping.
    Hdr,
}

/// Per-ray sample values before compositing.
#[derive(Clone, Copy, Debug)]
pub enum Shading<'a> {
    /// Tone map each sample at the ray's log exposure time.
    Ldr(&'a [f64]),
    Hdr,
}

/// Result of [`render_on_tape`].
pub struct TapeRender {
    /// `[R, 3]` coarse estimate, absent when only the fine output was requested.
    pub coarse: Option<Var>,
    /// `[R, 3]` fine estimate, absent for [`Stage::Coarse`].
    pub fine: Option<Var>,
    /// Coarse quadrature weights, `R * coarse_samples` values.
    pub coarse_weights: Vec<f64>,
    /// Sorted depths evaluated by the fine model, one list per ray.
    pub fine_depths: Vec<Vec<f64>>,
}

/// Options of [`render_on_tape`] beyond the rays themselves.
pub struct TapeRenderOptions<'a> {
    pub stage: Stage,
    /// Record the coarse estimate even when the fine one is requested.
    pub keep_coarse: bool,
    /// Use these fine depths instead of importance sampling.
    pub fixed_fine_depths: Option<&'a [Vec<f64>]>,
}

struct Batch {
    pos: Tensor,
    dir: Tensor,
    deltas: Vec<f64>,
}

fn build_batch(
    config: &ModelConfig,
    bbox: &Aabb,
    rays: &[Ray],
    depths: &[Vec<f64>],
) -> Result<Batch> {
    let total: usize = depths.iter().map(Vec::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(total);
    let mut dl = Vec::with_capacity(total);
    for (ray, ds) in rays.iter().zip(depths) {
        for &s in ds {
            positions.push(bbox.normalize(ray.at(s)));
            directions.push(ray.direction);
        }
        dl.extend(deltas(ds)?);
    }
    let (pos, dir) = encode_samples(&config.encoding, &positions, &directions)?;
    Ok(Batch {
        pos,
        dir,
        deltas: dl,
    })
}

/// Shades and composites one stage; returns the `[R, 3]` estimate and weights.
fn shade_stage(
    tape: &mut Tape,
    field: &FieldVars,
    vars: &BundleVars,
    batch: Batch,
    samples: usize,
    shading: Shading,
    output: bool,
) -> Result<(Option<Var>, Vec<f64>)> {
    let pe = tape.constant(batch.pos)?;
    let de = tape.constant(batch.dir)?;
    let out = field.forward(tape, pe, de)?;
    if !output {
        let w = super::composite::batch_weights(tape.value(out.sigma).data(), &batch.deltas, samples);
        return Ok((None, w));
    }
    let values = match shading {
        Shading::Hdr => tape.exp(out.ln_e)?,
        Shading::Ldr(ln_dt) => {
            let n = tape.value(out.ln_e).shape()[0];
            let mut shift = Vec::with_capacity(n * 3);
            for &l in ln_dt {
                for _ in 0..samples * 3 {
                    shift.push(l);
                }
            }
            let shift = tape.constant(Tensor::matrix(n, 3, shift)?)?;
            let x = tape.add(out.ln_e, shift)?;
            vars.tone.forward(tape, x)?
        }
    };
    let (c, w) = composite_on_tape(tape, out.sigma, values, &batch.deltas, samples)?;
    Ok((Some(c), w))
}

/// Records the hierarchical render of a batch of rays on `tape`.
///
/// Coarse depths are stratified; fine depths are importance samples drawn
/// from the coarse weights, merged with the coarse depths. Sampling does not
/// carry gradients.
#[allow(clippy::too_many_arguments)]
pub fn render_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &BundleVars,
    config: &ModelConfig,
    bbox: &Aabb,
    rays: &[Ray],
    shading: Shading,
    settings: &RenderSettings,
    options: &TapeRenderOptions,
    mut rng: Option<&mut R>,
) -> Result<TapeRender> {
    settings.validate()?;
    if rays.is_empty() {
        return Err(Error::Input("no rays to render".into()));
    }
    if let Shading::Ldr(l) = shading {
        if l.len() != rays.len() {
            return Err(Error::Shape(format!("{} exposure times for {} rays", l.len(), rays.len())));
        }
    }
    let sc = settings.coarse_samples;
    let coarse_depths = rays
        .iter()
        .map(|r| stratified_sample(r, sc, rng.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    let want_coarse = options.stage == Stage::Coarse || options.keep_coarse;
    let batch = build_batch(config, bbox, rays, &coarse_depths)?;
    let (coarse, coarse_weights) =
        shade_stage(tape, &vars.coarse, vars, batch, sc, shading, want_coarse)?;
    if options.stage == Stage::Coarse {
        return Ok(TapeRender {
            coarse,
            fine: None,
            coarse_weights,
            fine_depths: Vec::new(),
        });
    }

    let fine_depths = match options.fixed_fine_depths {
        Some(d) => {
            if d.len() != rays.len() || d.iter().any(|v| v.len() != d[0].len()) || d[0].is_empty() {
                return Err(Error::Shape("fixed fine depths must be one equal-length list per ray".into()));
            }
            d.to_vec()
        }
        None => rays
            .iter()
            .zip(&coarse_depths)
            .zip(coarse_weights.chunks_exact(sc))
            .map(|((ray, cd), w)| {
                let edges = bin_edges(cd, ray.near, ray.far);
                let extra = hierarchical_sample(
                    &edges,
                    w,
                    settings.fine_samples,
                    settings.importance_floor,
                    rng.as_deref_mut(),
                )?;
                Ok(merge_sorted(cd, &extra))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let sf = fine_depths[0].len();
    let batch = build_batch(config, bbox, rays, &fine_depths)?;
    let (fine, _) = shade_stage(tape, &vars.fine, vars, batch, sf, shading, true)?;
    Ok(TapeRender {
        coarse,
        fine,
        coarse_weights,
        fine_depths,
    })
}

fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Renders a chunk of rays without gradients.
fn render_chunk(
    bundle: &ModelBundle,
    bbox: &Aabb,
    rays: &[Ray],
    mode: RenderMode,
    stage: Stage,
    settings: &RenderSettings,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<[f64; 3]>> {
    let mut tape = Tape::new();
    let vars = bundle.register(&mut tape, false)?;
    let ln_dt;
    let shading = match mode {
        RenderMode::Hdr => Shading::Hdr,
        RenderMode::Ldr { exposure_time } => {
            if !(exposure_time > 0.0 && exposure_time.is_finite()) {
                return Err(Error::Input(format!("exposure time must be positive, got {exposure_time}")));
            }
            ln_dt = vec![exposure_time.ln(); rays.len()];
            Shading::Ldr(&ln_dt)
        }
    };
    let options = TapeRenderOptions {
        stage,
        keep_coarse: false,
        fixed_fine_depths: None,
    };
    let out = render_on_tape(&mut tape, &vars, &bundle.config, bbox, rays, shading, settings, &options, rng)?;
    let v = match stage {
        Stage::Coarse => out.coarse,
        Stage::Fine => out.fine,
    }
    .expect("requested stage is always rendered");
    Ok(tape.value(v).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Renders rays in parallel. Each chunk of rays gets its own rng stream
/// derived from `settings.seed` and the chunk's first ray index, so the
/// output does not depend on thread scheduling.
pub fn render_rays(
    bundle: &ModelBundle,
    bbox: &Aabb,
    rays: &[Ray],
    mode: RenderMode,
    stage: Stage,
    settings: &RenderSettings,
) -> Result<Vec<[f64; 3]>> {
    let chunks: Vec<Vec<[f64; 3]>> = rays
        .par_chunks(RENDER_CHUNK)
        .enumerate()
        .map(|(i, chunk)| {
            let mut rng = ray_rng(settings.seed, (i * RENDER_CHUNK) as u64);
            let rng = settings.jitter.then_some(&mut rng);
            render_chunk(bundle, bbox, chunk, mode, stage, settings, rng)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// LDR color of a single ray at exposure time `dt`.
pub fn render_ldr(
    ray: &Ray,
    dt: f64,
    bundle: &ModelBundle,
    bbox: &Aabb,
    stage: Stage,
    settings: &RenderSettings,
) -> Result<[f64; 3]> {
    let mut rng = ray_rng(settings.seed, 0);
    let rng = settings.jitter.then_some(&mut rng);
    Ok(render_chunk(bundle, bbox, &[*ray], RenderMode::Ldr { exposure_time: dt }, stage, settings, rng)?[0])
}

/// HDR radiance of a single ray.
pub fn render_hdr(
    ray: &Ray,
    bundle: &ModelBundle,
    bbox: &Aabb,
    stage: Stage,
    settings: &RenderSettings,
) -> Result<[f64; 3]> {
    let mut rng = ray_rng(settings.seed, 0);
    let rng = settings.jitter.then_some(&mut rng);
    Ok(render_chunk(bundle, bbox, &[*ray], RenderMode::Hdr, stage, settings, rng)?[0])
}

/// Renders every pixel of `view` with the fine model.
pub fn render_image(
    view: &CameraView,
    frame: &SceneFrame,
    bundle: &ModelBundle,
    mode: RenderMode,
    settings: &RenderSettings,
) -> Result<ImageBuffer> {
    view.validate()?;
    let k = &view.intrinsics;
    let pixels: Vec<(usize, usize)> = (0..k.height)
        .flat_map(|r| (0..k.width).map(move |c| (r, c)))
        .collect();
    let rays = generate_rays(view, &pixels, frame.near, frame.far)?;
    let colors = render_rays(bundle, &frame.bbox, &rays, mode, Stage::Fine, settings)?;
    ImageBuffer::new(k.width, k.height, colors.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::model::{FieldConfig, ToneMapperParams};
    use crate::render::Intrinsics;

    fn micro() -> ModelConfig {
        ModelConfig {
            field: FieldConfig {
                trunk_depth: 2,
                trunk_width: 8,
                head_width: 4,
            },
            tone_hidden: 4,
            encoding: crate::encoding::EncodingConfig {
                levels_position: 2,
                levels_direction: 1,
                include_input: true,
            },
            ..Default::default()
        }
    }

    fn bbox() -> Aabb {
        Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    fn ray() -> Ray {
        Ray::new([0.0, 0.0, 3.0], [0.0, 0.0, -1.0], 2.0, 4.0).unwrap()
    }

    fn settings(c: usize, f: usize) -> RenderSettings {
        RenderSettings {
            coarse_samples: c,
            fine_samples: f,
            ..Default::default()
        }
    }

    /// Field whose density is `softplus(bias)` and log-radiance `ln_e` everywhere.
    fn constant_bundle(sigma_bias: f64, ln_e: [f64; 3]) -> ModelBundle {
        let mut b = ModelBundle::init(micro(), 1).unwrap();
        for f in [&mut b.coarse, &mut b.fine] {
            f.zero_density_head();
            let n = f.layers.len();
            f.layers[n - 3].bias.data_mut()[0] = sigma_bias;
            f.layers[n - 1].weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
            f.layers[n - 1].bias.data_mut().copy_from_slice(&ln_e);
        }
        b
    }

    #[test]
    fn zero_density_renders_black() {
        let b = constant_bundle(-800.0, [1.0, 2.0, 3.0]);
        for stage in [Stage::Coarse, Stage::Fine] {
            let hdr = render_hdr(&ray(), &b, &bbox(), stage, &settings(8, 8)).unwrap();
            let ldr = render_ldr(&ray(), 1.0, &b, &bbox(), stage, &settings(8, 8)).unwrap();
            assert!(hdr.iter().chain(&ldr).all(|v| v.abs() < 1e-300));
        }
    }

    #[test]
    fn opaque_constant_medium_conserves_radiance() {
        let b = constant_bundle(60.0, [0.3, -1.2, 2.0]);
        let hdr = render_hdr(&ray(), &b, &bbox(), Stage::Fine, &settings(8, 8)).unwrap();
        for c in 0..3 {
            assert!((hdr[c] - [0.3f64, -1.2, 2.0][c].exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn opaque_sample_through_sigmoid_mapper_is_half_gray() {
        let mut b = constant_bundle(60.0, [0.0; 3]);
        b.tone = ToneMapperParams::sigmoid_construction();
        b.config.tone_hidden = b.tone.hidden_width();
        let c = render_ldr(&ray(), 1.0, &b, &bbox(), Stage::Fine, &settings(4, 4)).unwrap();
        for v in c {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn longer_exposure_is_brighter_under_monotone_mapper() {
        let mut b = ModelBundle::init(micro(), 4).unwrap();
        b.tone.project_monotone();
        let s = settings(8, 8);
        let a = render_ldr(&ray(), 0.5, &b, &bbox(), Stage::Fine, &s).unwrap();
        let c = render_ldr(&ray(), 1.0, &b, &bbox(), Stage::Fine, &s).unwrap();
        for i in 0..3 {
            assert!(c[i] >= a[i]);
        }
    }

    #[test]
    fn ldr_gradient_matches_finite_differences_on_four_samples() {
        let b = ModelBundle::init(micro(), 9).unwrap();
        let cfg = b.config;
        let r = ray();
        let fixed = vec![vec![2.2, 2.7, 3.1, 3.8]];
        let s = settings(4, 1);
        let params = b.to_tensors();
        let report = finite_diff_check(
            |tape, p| {
                let vars = BundleVars::from_handles(&cfg, p)?;
                let ln_dt = [0.25f64.ln()];
                let opts = TapeRenderOptions {
                    stage: Stage::Fine,
                    keep_coarse: true,
                    fixed_fine_depths: Some(&fixed),
                };
                let out = render_on_tape::<ChaCha8Rng>(
                    tape,
                    &vars,
                    &cfg,
                    &bbox(),
                    &[r],
                    Shading::Ldr(&ln_dt),
                    &s,
                    &opts,
                    None,
                )?;
                let f = tape.sum(out.fine.unwrap())?;
                let c = tape.sum(out.coarse.unwrap())?;
                let c = tape.scale(c, 0.7)?;
                tape.add(f, c)
            },
            &params,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn image_render_is_deterministic_and_one_pixel_matches_ray() {
        let b = ModelBundle::init(micro(), 2).unwrap();
        let frame = SceneFrame {
            bbox: bbox(),
            near: 2.0,
            far: 4.0,
            intrinsics: Intrinsics::from_fov(3, 2, 40.0),
        };
        let view = CameraView {
            pose: crate::render::Pose::look_at([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0]),
            intrinsics: frame.intrinsics,
            exposure_time: 1.0,
        };
        let mut s = settings(8, 8);
        s.jitter = true;
        let a = render_image(&view, &frame, &b, RenderMode::Hdr, &s).unwrap();
        let c = render_image(&view, &frame, &b, RenderMode::Hdr, &s).unwrap();
        assert_eq!(a, c);

        s.jitter = false;
        let img = render_image(&view, &frame, &b, RenderMode::Ldr { exposure_time: 0.5 }, &s).unwrap();
        let r = generate_rays(&view, &[(1, 2)], 2.0, 4.0).unwrap()[0];
        let direct = render_ldr(&r, 0.5, &b, &bbox(), Stage::Fine, &s).unwrap();
        assert_eq!(&img.data[(3 + 2) * 3..(3 + 2) * 3 + 3], &direct);
    }
}
