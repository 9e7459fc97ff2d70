//! Cameras, ray sampling, volume-rendering quadrature and image rendering.

mod camera;
mod composite;
mod renderer;
mod sampling;

pub use camera::{generate_rays, Aabb, CameraView, Intrinsics, Pose, Ray, SceneFrame};
pub use composite::{
    batch_weights, composite, composite_deltas, composite_on_tape, deltas, CompositeOutput,
    TERMINAL_DELTA,
};
pub use renderer::{
    render_hdr, render_image, render_ldr, render_on_tape, render_rays, RenderMode, RenderSettings,
    Shading, Stage, TapeRender, TapeRenderOptions,
};
pub use sampling::{bin_edges, hierarchical_sample, merge_sorted, stratified_sample};
