//! Tile-based splatting of 3D Gaussians and its analytic backward pass.
//!
//! Forward: every Gaussian is projected through the local affine
//! approximation of the perspective map (`Σ' = J W Σ Wᵀ Jᵀ` plus a low-pass
//! floor), sorted by depth, binned into 16×16 tiles and alpha-composited front
//! to back. Backward replays the forward pass per tile, walks each pixel's
//! contributors back to front, and chains the per-splat screen-space gradients
//! through the projection to every stored parameter.
//!
//! Work is split across tiles with rayon; per-tile results are reduced in tile
//! order so outputs do not depend on the thread count.

pub mod math;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{pose_from_view, Camera, CameraIntrinsics, ViewSample};
use crate::cloud::{sigmoid, GaussianCloud};
use math::{normalize_quat, normalize_quat_vjp, quat_to_mat, quat_to_mat_vjp, vec3};

pub const TILE_SIZE: usize = 16;
/// Added to the diagonal of every screen-space covariance (px²).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_CLAMP: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Splats whose 3σ footprint misses the image entirely are culled.
pub const CULL_SIGMA: f64 = 3.0;
/// Pixels where `½ dᵀ Σ'⁻¹ d` exceeds this are not evaluated; the dropped
/// weight is below `e^-23 ≈ 1e-10`.
pub const MAX_POWER: f64 = 23.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean_2d: [f64; 2],
    /// Inverse screen covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha_max: f64,
    pub source_index: usize,
    /// Half-extents of the evaluated footprint in pixels.
    pub extent: [f64; 2],
}

impl Splat2D {
    #[inline]
    fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean_2d[0];
        let dy = py - self.mean_2d[1];
        let [a, b, c] = self.conic;
        0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
    }

    /// Inclusive pixel index bounds covered by the footprint, clipped to the image.
    fn pixel_bounds(&self, width: usize, height: usize) -> Option<[usize; 4]> {
        let lo_x = (self.mean_2d[0] - self.extent[0] - 0.5).ceil().max(0.0);
        let hi_x = (self.mean_2d[0] + self.extent[0] - 0.5).floor().min(width as f64 - 1.0);
        let lo_y = (self.mean_2d[1] - self.extent[1] - 0.5).ceil().max(0.0);
        let hi_y = (self.mean_2d[1] + self.extent[1] - 0.5).floor().min(height as f64 - 1.0);
        if lo_x > hi_x || lo_y > hi_y {
            return None;
        }
        Some([lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major `H×W×3`.
    pub image: Vec<f64>,
    /// Row-major `H×W`, equal to `1 - T_final`.
    pub alpha: Vec<f64>,
    pub splats: Vec<Splat2D>,
    /// Per tile (row-major), indices into `splats` in depth order.
    pub tile_lists: Vec<Vec<u32>>,
}

impl RenderOutput {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = 3 * (y * self.width + x);
        [self.image[o], self.image[o + 1], self.image[o + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeOptions {
    /// Stop a pixel once its transmittance drops below [`MIN_TRANSMITTANCE`].
    pub early_termination: bool,
}

impl Default for CompositeOptions {
    fn default() -> Self {
        CompositeOptions {
            early_termination: true,
        }
    }
}

/// Gradients for every stored parameter of a cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudGrad {
    pub means: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub translations: Vec<[f64; 3]>,
    /// Norm of the loss gradient w.r.t. each projected 2D mean (px units).
    pub screen: Vec<f64>,
    pub visible: Vec<bool>,
}

impl CloudGrad {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        CloudGrad {
            means: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            translations: vec![[0.0; 3]; cloud.object_count()],
            screen: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    /// `self += weight * other` for every parameter gradient. Screen-space
    /// statistics are not accumulated here.
    pub fn add_scaled(&mut self, other: &CloudGrad, weight: f64) {
        fn axpy<const K: usize>(dst: &mut [[f64; K]], src: &[[f64; K]], w: f64) {
            for (d, s) in dst.iter_mut().zip(src) {
                for k in 0..K {
                    d[k] += w * s[k];
                }
            }
        }
        axpy(&mut self.means, &other.means, weight);
        axpy(&mut self.log_scales, &other.log_scales, weight);
        axpy(&mut self.rotations, &other.rotations, weight);
        axpy(&mut self.colors, &other.colors, weight);
        axpy(&mut self.translations, &other.translations, weight);
        for (d, s) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *d += weight * s;
        }
    }

    /// Clears all gradients belonging to objects outside `keep`.
    pub fn restrict_to(&mut self, cloud: &GaussianCloud, keep: &[usize]) {
        for (k, slot) in cloud.objects.iter().enumerate() {
            if keep.contains(&k) {
                continue;
            }
            for i in slot.range.clone() {
                self.means[i] = [0.0; 3];
                self.log_scales[i] = [0.0; 3];
                self.rotations[i] = [0.0; 4];
                self.opacity_logits[i] = 0.0;
                self.colors[i] = [0.0; 3];
                self.screen[i] = 0.0;
                self.visible[i] = false;
            }
            self.translations[k] = [0.0; 3];
        }
    }

    /// True when every gradient entry of object `object` is exactly zero.
    pub fn object_is_zero(&self, cloud: &GaussianCloud, object: usize) -> bool {
        let r = cloud.range(object);
        self.translations[object] == [0.0; 3]
            && self.means[r.clone()].iter().all(|g| *g == [0.0; 3])
            && self.log_scales[r.clone()].iter().all(|g| *g == [0.0; 3])
            && self.rotations[r.clone()].iter().all(|g| *g == [0.0; 4])
            && self.opacity_logits[r.clone()].iter().all(|g| *g == 0.0)
            && self.colors[r].iter().all(|g| *g == [0.0; 3])
    }

    pub fn squared_norm(&self) -> f64 {
        let sq3 = |v: &[[f64; 3]]| v.iter().flatten().map(|x| x * x).sum::<f64>();
        sq3(&self.means)
            + sq3(&self.log_scales)
            + sq3(&self.colors)
            + self.rotations.iter().flatten().map(|x| x * x).sum::<f64>()
            + self.opacity_logits.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Cached forward quantities of one projected Gaussian.
struct Projection {
    splat: Splat2D,
    t_cam: Vector3<f64>,
    jw: Matrix2x3<f64>,
    sigma: Matrix3<f64>,
    m: Matrix3<f64>,
    rot: Matrix3<f64>,
    scale: Vector3<f64>,
    q_hat: [f64; 4],
    q_norm: f64,
}

fn project_one(cloud: &GaussianCloud, index: usize, mean: [f64; 3], camera: &Camera) -> Option<Projection> {
    let t_cam = camera.world_to_camera(&vec3(mean));
    if t_cam.z <= camera.near || t_cam.z > camera.far {
        return None;
    }
    let (q_hat, q_norm) = normalize_quat(cloud.rotations[index]);
    let rot = quat_to_mat(q_hat);
    let ls = cloud.log_scales[index];
    let scale = Vector3::new(ls[0].exp(), ls[1].exp(), ls[2].exp());
    let m = rot * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (t_cam.x, t_cam.y, t_cam.z);
    let j = Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z));
    let jw = j * camera.rotation;
    let cov = jw * sigma * jw.transpose() + Matrix2::identity() * LOW_PASS;
    let (ca, cb, cc) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let det = ca * cc - cb * cb;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cc / det, -cb / det, ca / det];
    let mean_2d = camera.project(&t_cam);
    let (sx, sy) = (ca.sqrt(), cc.sqrt());
    let (w, h) = (camera.width as f64, camera.height as f64);
    if mean_2d[0] + CULL_SIGMA * sx < 0.0
        || mean_2d[0] - CULL_SIGMA * sx > w
        || mean_2d[1] + CULL_SIGMA * sy < 0.0
        || mean_2d[1] - CULL_SIGMA * sy > h
    {
        return None;
    }
    let reach = (2.0 * MAX_POWER).sqrt();
    let c = cloud.colors[index];
    let splat = Splat2D {
        mean_2d,
        conic,
        depth: z,
        color: [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])],
        alpha_max: sigmoid(cloud.opacity_logits[index]),
        source_index: index,
        extent: [reach * sx, reach * sy],
    };
    Some(Projection {
        splat,
        t_cam,
        jw,
        sigma,
        m,
        rot,
        scale,
        q_hat,
        q_norm,
    })
}

fn project_all(cloud: &GaussianCloud, gaussians: &[usize], camera: &Camera) -> Vec<Projection> {
    let means = cloud.effective_means();
    let mut out: Vec<Projection> = gaussians
        .par_iter()
        .filter_map(|&i| project_one(cloud, i, means[i], camera))
        .collect();
    out.sort_by(|a, b| {
        a.splat
            .depth
            .total_cmp(&b.splat.depth)
            .then(a.splat.source_index.cmp(&b.splat.source_index))
    });
    out
}

/// Projects the given Gaussians (by index) into screen space, culling those
/// behind the near plane or outside the frustum. Output is depth-sorted with
/// ties broken by source index.
pub fn project(cloud: &GaussianCloud, gaussians: &[usize], camera: &Camera) -> Vec<Splat2D> {
    project_all(cloud, gaussians, camera).into_iter().map(|p| p.splat).collect()
}

fn tiles_across(n: usize) -> usize {
    n.div_ceil(TILE_SIZE)
}

fn bin_tiles(splats: &[Splat2D], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tw, th) = (tiles_across(width), tiles_across(height));
    let mut lists = vec![Vec::new(); tw * th];
    for (k, s) in splats.iter().enumerate() {
        if let Some([x0, x1, y0, y1]) = s.pixel_bounds(width, height) {
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    lists[ty * tw + tx].push(k as u32);
                }
            }
        }
    }
    lists
}

/// Pixel rectangle of tile `t`, as `(x0, x1, y0, y1)` with exclusive ends.
fn tile_rect(t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tw = tiles_across(width);
    let (tx, ty) = (t % tw, t / tw);
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, (x0 + TILE_SIZE).min(width), y0, (y0 + TILE_SIZE).min(height))
}

/// Iterates the pixels of `rect` covered by a splat's footprint.
fn footprint(s: &Splat2D, rect: (usize, usize, usize, usize), width: usize, height: usize) -> Option<[usize; 4]> {
    let [bx0, bx1, by0, by1] = s.pixel_bounds(width, height)?;
    let (x0, x1, y0, y1) = rect;
    let lx = bx0.max(x0);
    let hx = (bx1 + 1).min(x1);
    let ly = by0.max(y0);
    let hy = (by1 + 1).min(y1);
    (lx < hx && ly < hy).then_some([lx, hx, ly, hy])
}

struct TileState {
    color: Vec<[f64; 3]>,
    trans: Vec<f64>,
    /// Position in the tile list of the last splat that touched each pixel.
    last: Vec<usize>,
}

const NO_SPLAT: usize = usize::MAX;

fn forward_tile(
    splats: &[Splat2D],
    list: &[u32],
    rect: (usize, usize, usize, usize),
    width: usize,
    height: usize,
    options: CompositeOptions,
) -> TileState {
    let (x0, x1, y0, y1) = rect;
    let tw = x1 - x0;
    let np = tw * (y1 - y0);
    let mut st = TileState {
        color: vec![[0.0; 3]; np],
        trans: vec![1.0; np],
        last: vec![NO_SPLAT; np],
    };
    let mut done = vec![false; np];
    for (k, &si) in list.iter().enumerate() {
        let s = &splats[si as usize];
        let Some([lx, hx, ly, hy]) = footprint(s, rect, width, height) else { continue };
        for py in ly..hy {
            for px in lx..hx {
                let p = (py - y0) * tw + (px - x0);
                if done[p] {
                    continue;
                }
                let power = s.power(px as f64 + 0.5, py as f64 + 0.5);
                if power > MAX_POWER {
                    continue;
                }
                let alpha = (s.alpha_max * (-power).exp()).min(ALPHA_CLAMP);
                let w = alpha * st.trans[p];
                for ch in 0..3 {
                    st.color[p][ch] += s.color[ch] * w;
                }
                st.trans[p] *= 1.0 - alpha;
                st.last[p] = k;
                if options.early_termination && st.trans[p] < MIN_TRANSMITTANCE {
                    done[p] = true;
                }
            }
        }
    }
    st
}

/// Front-to-back alpha compositing of depth-sorted splats over a solid background.
pub fn composite(splats: &[Splat2D], camera: &Camera, background: [f64; 3]) -> RenderOutput {
    composite_with(splats, camera, background, CompositeOptions::default())
}

pub fn composite_with(
    splats: &[Splat2D],
    camera: &Camera,
    background: [f64; 3],
    options: CompositeOptions,
) -> RenderOutput {
    let (width, height) = (camera.width, camera.height);
    let tile_lists = bin_tiles(splats, width, height);
    let tiles: Vec<TileState> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| forward_tile(splats, list, tile_rect(t, width, height), width, height, options))
        .collect();
    let mut image = vec![0.0; width * height * 3];
    let mut alpha = vec![0.0; width * height];
    for (t, st) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = tile_rect(t, width, height);
        let tw = x1 - x0;
        for py in y0..y1 {
            for px in x0..x1 {
                let p = (py - y0) * tw + (px - x0);
                let o = py * width + px;
                for ch in 0..3 {
                    image[3 * o + ch] = st.color[p][ch] + st.trans[p] * background[ch];
                }
                alpha[o] = 1.0 - st.trans[p];
            }
        }
    }
    RenderOutput {
        width,
        height,
        image,
        alpha,
        splats: splats.to_vec(),
        tile_lists,
    }
}

/// Renders the Gaussians of `objects` (translations applied).
pub fn render(cloud: &GaussianCloud, objects: &[usize], camera: &Camera, background: [f64; 3]) -> RenderOutput {
    let splats = project(cloud, &cloud.subset_indices(objects), camera);
    composite(&splats, camera, background)
}

pub fn render_view(
    cloud: &GaussianCloud,
    objects: &[usize],
    view: &ViewSample,
    intr: &CameraIntrinsics,
    background: [f64; 3],
) -> RenderOutput {
    render(cloud, objects, &pose_from_view(view, intr), background)
}

#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    /// Gradient w.r.t. `(a, b, c)` with power `½(a dx² + 2b dx dy + c dy²)`.
    conic: [f64; 3],
    color: [f64; 3],
    alpha_max: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha_max += o.alpha_max;
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_tile(
    splats: &[Splat2D],
    list: &[u32],
    rect: (usize, usize, usize, usize),
    width: usize,
    height: usize,
    background: [f64; 3],
    grad_image: &[f64],
) -> Vec<ScreenGrad> {
    let fwd = forward_tile(splats, list, rect, width, height, CompositeOptions::default());
    let (x0, x1, y0, _) = rect;
    let tw = x1 - x0;
    let mut trans = fwd.trans.clone();
    let mut behind: Vec<[f64; 3]> = fwd
        .trans
        .iter()
        .map(|t| [t * background[0], t * background[1], t * background[2]])
        .collect();
    let mut grads = vec![ScreenGrad::default(); list.len()];
    for (k, &si) in list.iter().enumerate().rev() {
        let s = &splats[si as usize];
        let Some([lx, hx, ly, hy]) = footprint(s, rect, width, height) else { continue };
        let g_acc = &mut grads[k];
        for py in ly..hy {
            for px in lx..hx {
                let p = (py - y0) * tw + (px - x0);
                if fwd.last[p] == NO_SPLAT || k > fwd.last[p] {
                    continue;
                }
                let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
                let power = s.power(fx, fy);
                if power > MAX_POWER {
                    continue;
                }
                let gauss = (-power).exp();
                let raw = s.alpha_max * gauss;
                let alpha = raw.min(ALPHA_CLAMP);
                let t_k = trans[p] / (1.0 - alpha);
                let o = 3 * (py * width + px);
                let g = [grad_image[o], grad_image[o + 1], grad_image[o + 2]];
                let w = alpha * t_k;
                let mut g_dot_c = 0.0;
                let mut g_dot_b = 0.0;
                for ch in 0..3 {
                    g_acc.color[ch] += g[ch] * w;
                    g_dot_c += g[ch] * s.color[ch];
                    g_dot_b += g[ch] * behind[p][ch];
                }
                let d_alpha = t_k * g_dot_c - g_dot_b / (1.0 - alpha);
                for ch in 0..3 {
                    behind[p][ch] += s.color[ch] * w;
                }
                trans[p] = t_k;
                if raw < ALPHA_CLAMP {
                    g_acc.alpha_max += d_alpha * gauss;
                    let d_power = -d_alpha * alpha;
                    let dx = fx - s.mean_2d[0];
                    let dy = fy - s.mean_2d[1];
                    let [a, b, c] = s.conic;
                    g_acc.mean[0] += -d_power * (a * dx + b * dy);
                    g_acc.mean[1] += -d_power * (b * dx + c * dy);
                    g_acc.conic[0] += d_power * 0.5 * dx * dx;
                    g_acc.conic[1] += d_power * dx * dy;
                    g_acc.conic[2] += d_power * 0.5 * dy * dy;
                }
            }
        }
    }
    grads
}

/// Parameter gradients of one Gaussian from its screen-space gradient.
struct ParamGrad {
    mean: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
    color: [f64; 3],
    screen: f64,
}

fn backward_one(p: &Projection, g: &ScreenGrad, camera: &Camera) -> ParamGrad {
    let s = &p.splat;
    let mut color = [0.0; 3];
    for ch in 0..3 {
        color[ch] = g.color[ch] * s.color[ch] * (1.0 - s.color[ch]);
    }
    let opacity_logit = g.alpha_max * s.alpha_max * (1.0 - s.alpha_max);

    // conic -> screen covariance
    let [a, b, c] = s.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);

    // screen covariance -> world covariance and projection Jacobian
    let jw = &p.jw;
    let g_sigma = jw.transpose() * g_cov2 * jw;
    let g_jw = 2.0 * g_cov2 * jw * p.sigma;
    let g_j = g_jw * camera.rotation.transpose();

    // camera-space mean: through the pixel position and the Jacobian entries
    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (p.t_cam.x, p.t_cam.y, p.t_cam.z);
    let (z2, z3) = (z * z, z * z * z);
    let mut d_t = Vector3::new(
        g.mean[0] * fx / z,
        g.mean[1] * fy / z,
        -g.mean[0] * fx * x / z2 - g.mean[1] * fy * y / z2,
    );
    d_t.x += g_j[(0, 2)] * (-fx / z2);
    d_t.y += g_j[(1, 2)] * (-fy / z2);
    d_t.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    let d_mean = camera.rotation.transpose() * d_t;

    // covariance -> scale and rotation
    let g_m = 2.0 * g_sigma * p.m;
    let mut g_rot = Matrix3::zeros();
    let mut log_scale = [0.0; 3];
    for jc in 0..3 {
        let mut d_s = 0.0;
        for i in 0..3 {
            g_rot[(i, jc)] = g_m[(i, jc)] * p.scale[jc];
            d_s += g_m[(i, jc)] * p.rot[(i, jc)];
        }
        log_scale[jc] = d_s * p.scale[jc];
    }
    let g_q_hat = quat_to_mat_vjp(p.q_hat, &g_rot);
    let rotation = normalize_quat_vjp(p.q_hat, p.q_norm, g_q_hat);

    ParamGrad {
        mean: [d_mean.x, d_mean.y, d_mean.z],
        log_scale,
        rotation,
        opacity_logit,
        color,
        screen: (g.mean[0] * g.mean[0] + g.mean[1] * g.mean[1]).sqrt(),
    }
}

/// Exact gradients of `⟨grad_image, image⟩` with respect to every parameter
/// of the Gaussians in `objects`, where `image` is the output of
/// [`render`] with identical arguments. Translation gradients are the sums of
/// each partition's mean gradients.
pub fn backward(
    cloud: &GaussianCloud,
    objects: &[usize],
    camera: &Camera,
    background: [f64; 3],
    grad_image: &[f64],
) -> CloudGrad {
    let (width, height) = (camera.width, camera.height);
    assert_eq!(grad_image.len(), width * height * 3, "grad_image shape mismatch");
    let projections = project_all(cloud, &cloud.subset_indices(objects), camera);
    let splats: Vec<Splat2D> = projections.iter().map(|p| p.splat).collect();
    let tile_lists = bin_tiles(&splats, width, height);

    let per_tile: Vec<Vec<ScreenGrad>> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            backward_tile(&splats, list, tile_rect(t, width, height), width, height, background, grad_image)
        })
        .collect();
    let mut screen = vec![ScreenGrad::default(); splats.len()];
    for (list, grads) in tile_lists.iter().zip(&per_tile) {
        for (&si, g) in list.iter().zip(grads) {
            screen[si as usize].add(g);
        }
    }

    let params: Vec<ParamGrad> = projections
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, g)| backward_one(p, g, camera))
        .collect();

    let mut out = CloudGrad::zeros(cloud);
    for (p, g) in projections.iter().zip(params) {
        let i = p.splat.source_index;
        out.means[i] = g.mean;
        out.log_scales[i] = g.log_scale;
        out.rotations[i] = g.rotation;
        out.opacity_logits[i] = g.opacity_logit;
        out.colors[i] = g.color;
        out.screen[i] = g.screen;
        out.visible[i] = true;
    }
    for (k, slot) in cloud.objects.iter().enumerate() {
        let mut t = [0.0; 3];
        for g in &out.means[slot.range.clone()] {
            for d in 0..3 {
                t[d] += g[d];
            }
        }
        out.translations[k] = t;
    }
    out
}
