//! Differentiable rasterizer for [`PathSequence`]s.
//!
//! Coverage of a pixel by a path is `sigmoid(-sd / tau)`, where `sd` is the
//! signed distance in pixels from the pixel center to the path outline
//! (negative inside under the nonzero rule). Paths composite "over" in order,
//! with `beta * coverage` as alpha. The backward pass chains the per-pixel
//! upstream gradient through compositing, the sigmoid, the distance to the
//! nearest curve point, and the Bernstein weights at that point.

use std::path::Path as FsPath;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    bernstein, eval_cubic, flatten_with_sources, point_segment_distance, ClosedPath, FlatPath,
    PathSequence, Point, BETA_OFFSET, COLOR_OFFSET, CONTROL_POINTS, PARAMS_PER_PATH, SEGMENTS,
};

/// Coverage is exactly 0 or 1 once `|sd| >= SATURATION * tau`.
pub const SATURATION: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        RasterImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Self {
        let mut data = Vec::with_capacity(width * height * color.len());
        for _ in 0..width * height {
            data.extend_from_slice(color);
        }
        RasterImage {
            width,
            height,
            channels: color.len(),
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = RasterImage::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn check_same_shape(&self, other: &RasterImage) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    /// Averages `factor × factor` blocks.
    pub fn downsample_box(&self, factor: usize) -> RasterImage {
        assert!(factor >= 1);
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        RasterImage::from_fn(w, h, self.channels, |x, y, c| {
            let mut s = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    s += self.get(x * factor + dx, y * factor + dy, c);
                }
            }
            s * norm
        })
    }

    /// Replicates a single-channel image into RGB.
    pub fn to_rgb(&self) -> RasterImage {
        match self.channels {
            3 => self.clone(),
            1 => RasterImage::from_fn(self.width, self.height, 3, |x, y, _| self.get(x, y, 0)),
            _ => panic!("unsupported channel count {}", self.channels),
        }
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> RasterImage {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        RasterImage {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data: rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// Loads a PNG or JPEG as RGB in `[0, 1]`.
    pub fn load(path: impl AsRef<FsPath>) -> Result<RasterImage> {
        let img = image::open(path)?;
        Ok(RasterImage::from_dynamic(&img))
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let rgb = self.to_rgb();
        let bytes = rgb.data.iter().map(|&v| quantize_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions")
    }

    /// Writes an 8-bit sRGB PNG.
    pub fn save_png(&self, path: impl AsRef<FsPath>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    /// Width of the boundary sigmoid, in pixels.
    pub smoothing_tau: f64,
    /// Flattening tolerance, in pixels at render resolution.
    pub flatten_tolerance: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            smoothing_tau: 1.0,
            flatten_tolerance: 0.25,
            background: [0.0; 3],
        }
    }
}

impl RenderConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.smoothing_tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.25..=4.0).contains(&self.smoothing_tau) {
            return Err(Error::InvalidArgument(format!(
                "smoothing_tau {} outside [0.25, 4] pixels",
                self.smoothing_tau
            )));
        }
        if !(self.flatten_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "flatten_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Smoothed coverage for signed distance `sd` (pixels).
pub fn coverage(sd: f64, tau: f64) -> f64 {
    coverage_with_slope(sd, tau).0
}

/// Where the sigmoid tail starts tapering to exact saturation, in units of tau.
const TAPER_START: f64 = 8.0;

/// Coverage and its derivative in `sd`. The sigmoid tail is multiplied by a
/// quintic smoothstep falling from 1 to 0 over `[8, 10] * tau`, so coverage
/// reaches exactly 0 or 1 without a jump.
fn coverage_with_slope(sd: f64, tau: f64) -> (f64, f64) {
    let s = sd.abs() / tau;
    if s >= SATURATION {
        return (if sd > 0.0 { 0.0 } else { 1.0 }, 0.0);
    }
    let tail = 1.0 / (1.0 + s.exp());
    let dtail = -tail * (1.0 - tail) / tau;
    let (tail, dtail) = if s > TAPER_START {
        let x = (s - TAPER_START) / (SATURATION - TAPER_START);
        let keep = 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let dkeep = -30.0 * x * x * (1.0 - x) * (1.0 - x) / ((SATURATION - TAPER_START) * tau);
        (tail * keep, dtail * keep + tail * dkeep)
    } else {
        (tail, dtail)
    };
    // d coverage / d sd equals d tail / d |sd| on both sides
    (if sd >= 0.0 { tail } else { 1.0 - tail }, dtail)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Path colors and betas over the configured background.
    Color,
    /// White, fully opaque paths over black, single channel.
    Binary,
}

/// One pixel touched by a path.
#[derive(Clone, Copy, Debug)]
struct Sample {
    pixel: u32,
    coverage: f64,
    /// d coverage / d sd; zero when saturated.
    dcov: f64,
    /// Nearest curve point: segment and parameter.
    segment: u8,
    u: f64,
    /// d sd / d (nearest point), negated.
    dir: Point,
}

#[derive(Default)]
struct PathSamples {
    samples: Vec<Sample>,
}

struct PathRecord {
    samples: PathSamples,
    /// Values under this path before it was composited, per sample.
    prev: Vec<[f64; 3]>,
}

/// Output of a forward render.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: RasterImage,
    /// Indices of degenerate paths rendered as empty.
    pub skipped: Vec<usize>,
}

/// Forward render that keeps what the backward pass needs.
pub struct RenderTape {
    mode: RenderMode,
    width: usize,
    height: usize,
    paths: Vec<ClosedPath>,
    records: Vec<Option<PathRecord>>,
    image: RasterImage,
    skipped: Vec<usize>,
}

fn to_pixels(path: &ClosedPath, w: usize, h: usize) -> ClosedPath {
    path.map_points(|p| Point::new(p.x * w as f64, p.y * h as f64))
}

/// Uniform grid of edge lists; an edge is listed in every cell its bounding box,
/// grown by `reach`, overlaps.
struct EdgeGrid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl EdgeGrid {
    fn build(edges: &[(Point, Point)], bounds: (Point, Point), reach: f64) -> Self {
        let cell = reach.max(1.0);
        let x0 = bounds.0.x - reach;
        let y0 = bounds.0.y - reach;
        let nx = (((bounds.1.x + reach - x0) / cell).floor() as usize + 1).max(1);
        let ny = (((bounds.1.y + reach - y0) / cell).floor() as usize + 1).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (k, (a, b)) in edges.iter().enumerate() {
            let cx0 = ((a.x.min(b.x) - reach - x0) / cell).floor().max(0.0) as usize;
            let cx1 = (((a.x.max(b.x) + reach - x0) / cell).floor() as usize).min(nx - 1);
            let cy0 = ((a.y.min(b.y) - reach - y0) / cell).floor().max(0.0) as usize;
            let cy1 = (((a.y.max(b.y) + reach - y0) / cell).floor() as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * nx + cx].push(k as u32);
                }
            }
        }
        EdgeGrid {
            x0,
            y0,
            cell,
            nx,
            ny,
            cells,
        }
    }

    fn candidates(&self, p: Point) -> &[u32] {
        let cx = ((p.x - self.x0) / self.cell).floor();
        let cy = ((p.y - self.y0) / self.cell).floor();
        if cx < 0.0 || cy < 0.0 || cx as usize >= self.nx || cy as usize >= self.ny {
            return &[];
        }
        &self.cells[cy as usize * self.nx + cx as usize]
    }
}

/// Nearest point to `p` on a cubic segment by safeguarded Newton iteration
/// on `|B(u) - p|^2`, starting from `u`. Returns `(u, B(u))`.
fn nearest_on_cubic(seg: &[Point; 4], p: Point, mut u: f64) -> (f64, Point) {
    let d1 = [seg[1] - seg[0], seg[2] - seg[1], seg[3] - seg[2]];
    let d2 = [
        seg[2] - seg[1] * 2.0 + seg[0],
        seg[3] - seg[2] * 2.0 + seg[1],
    ];
    for _ in 0..16 {
        let v = 1.0 - u;
        let b = eval_cubic(seg, u);
        let db = (d1[0] * (v * v) + d1[1] * (2.0 * v * u) + d1[2] * (u * u)) * 3.0;
        let ddb = (d2[0] * v + d2[1] * u) * 6.0;
        let r = b - p;
        let f1 = db.dot(r);
        let gn = db.dot(db);
        let f2 = gn + ddb.dot(r);
        let step = if f2 > 1e-12 {
            -f1 / f2
        } else if gn > 1e-12 {
            -f1 / gn
        } else {
            break;
        };
        let next = (u + step.clamp(-0.25, 0.25)).clamp(0.0, 1.0);
        let done = (next - u).abs() < 1e-13;
        u = next;
        if done {
            break;
        }
    }
    (u, eval_cubic(seg, u))
}

/// Direction of travel along the segment at `u`, robust to a handle that
/// coincides with its anchor.
fn tangent(seg: &[Point; 4], u: f64) -> Point {
    let v = 1.0 - u;
    let t = ((seg[1] - seg[0]) * (v * v)
        + (seg[2] - seg[1]) * (2.0 * v * u)
        + (seg[3] - seg[2]) * (u * u))
        * 3.0;
    if t.norm() > 1e-9 {
        t
    } else {
        eval_cubic(seg, (u + 1e-3).min(1.0)) - eval_cubic(seg, (u - 1e-3).max(0.0))
    }
}

/// Computes the samples of one path (already in pixel coordinates).
///
/// The distance is measured to the cubic curves themselves; the flattened
/// outline supplies the winding number and the starting points for the
/// nearest-point search. A pixel lying in the thin sliver between curve and
/// outline gets its winding corrected by one so the inside test agrees with
/// the curve.
fn rasterize_path(
    path: &ClosedPath,
    flat: &FlatPath,
    w: usize,
    h: usize,
    cfg: &RenderConfig,
) -> PathSamples {
    let tau = cfg.smoothing_tau;
    let slack = 2.0 * cfg.flatten_tolerance;
    let verts = &flat.polyline.vertices;
    let n = verts.len();
    let segs: [[Point; 4]; SEGMENTS] = std::array::from_fn(|s| path.segment(s));
    let edges: Vec<(Point, Point)> = (0..n).map(|i| (verts[i], verts[(i + 1) % n])).collect();
    // curve parameter range of each edge
    let spans: Vec<(usize, f64, f64)> = (0..n)
        .map(|i| {
            let a = flat.sources[i];
            let b = flat.sources[(i + 1) % n];
            let u1 = if b.segment == a.segment { b.t } else { 1.0 };
            (a.segment, a.t, u1)
        })
        .collect();
    let radius = SATURATION * tau;
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in verts {
        lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
        hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
    }
    let reach = radius + slack;
    // pixel centers at (c + 0.5, r + 0.5)
    let col0 = (lo.x - reach - 0.5).ceil().max(0.0) as usize;
    let col1 = ((hi.x + reach - 0.5).floor()).min(w as f64 - 1.0);
    let row0 = (lo.y - reach - 0.5).ceil().max(0.0) as usize;
    let row1 = ((hi.y + reach - 0.5).floor()).min(h as f64 - 1.0);
    if col1 < 0.0 || row1 < 0.0 || col0 as f64 > col1 || row0 as f64 > row1 {
        return PathSamples::default();
    }
    let (col1, row1) = (col1 as usize, row1 as usize);
    let grid = EdgeGrid::build(&edges, (lo, hi), reach);

    let rows: Vec<Vec<Sample>> = (row0..=row1)
        .into_par_iter()
        .map(|row| {
            let yc = row as f64 + 0.5;
            // crossings of the scanline: winding(p) = sum of signs with x > p.x
            let mut crossings: Vec<(f64, i32)> = edges
                .iter()
                .filter_map(|&(a, b)| {
                    if a.y <= yc && b.y > yc {
                        Some((a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y), 1))
                    } else if a.y > yc && b.y <= yc {
                        Some((a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y), -1))
                    } else {
                        None
                    }
                })
                .collect();
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: i32 = crossings.iter().map(|c| c.1).sum();
            let mut out = Vec::new();
            let mut near: Vec<(u32, f64, f64)> = Vec::new();
            let mut passed = 0;
            let mut winding_left = 0;
            for col in col0..=col1 {
                let p = Point::new(col as f64 + 0.5, yc);
                while passed < crossings.len() && crossings[passed].0 <= p.x {
                    winding_left += crossings[passed].1;
                    passed += 1;
                }
                let winding = total - winding_left;
                let pixel = (row * w + col) as u32;
                near.clear();
                let mut d_min = f64::INFINITY;
                let mut e_min = 0;
                let mut t_min = 0.0;
                for &k in grid.candidates(p) {
                    let (a, b) = edges[k as usize];
                    let (d, t) = point_segment_distance(a, b, p);
                    if d < d_min {
                        d_min = d;
                        e_min = k;
                        t_min = t;
                    }
                    near.push((k, d, t));
                }
                let saturated = Sample {
                    pixel,
                    coverage: 1.0,
                    dcov: 0.0,
                    segment: 0,
                    u: 0.0,
                    dir: Point::default(),
                };
                if d_min >= radius + slack {
                    if winding != 0 {
                        out.push(saturated);
                    }
                    continue;
                }
                let mut best = (f64::INFINITY, 0usize, 0.0, Point::default());
                for &(k, d, t) in &near {
                    if d > d_min + slack {
                        continue;
                    }
                    let (s, u0, u1) = spans[k as usize];
                    let (u, b) = nearest_on_cubic(&segs[s], p, u0 + (u1 - u0) * t);
                    let dist = b.distance(p);
                    if dist < best.0 {
                        best = (dist, s, u, b);
                    }
                }
                let (dist, s, u, b) = best;
                let mut winding = winding;
                // Only a pixel within the flattening slack of an edge interior,
                // nearest to a curve interior, can sit in a sliver.
                let in_band = d_min <= slack && t_min > 0.0 && t_min < 1.0 && u > 0.0 && u < 1.0;
                if in_band {
                    let (ea, eb) = edges[e_min as usize];
                    let side_poly = (eb - ea).cross(p - ea);
                    let side_curve = tangent(&segs[s], u).cross(p - b);
                    if side_poly > 0.0 && side_curve < 0.0 {
                        winding -= 1;
                    } else if side_poly < 0.0 && side_curve > 0.0 {
                        winding += 1;
                    }
                }
                let inside = winding != 0;
                if dist >= radius {
                    if inside {
                        out.push(saturated);
                    }
                    continue;
                }
                let sign = if inside { -1.0 } else { 1.0 };
                let (cov, dcov) = coverage_with_slope(sign * dist, tau);
                let dir = if dist > 0.0 {
                    (p - b) * (sign / dist)
                } else {
                    Point::default()
                };
                out.push(Sample {
                    pixel,
                    coverage: cov,
                    dcov,
                    segment: s as u8,
                    u,
                    dir,
                });
            }
            out
        })
        .collect();
    PathSamples {
        samples: rows.into_iter().flatten().collect(),
    }
}

impl RenderTape {
    pub fn record(
        seq: &PathSequence,
        width: usize,
        height: usize,
        cfg: &RenderConfig,
        mode: RenderMode,
    ) -> Result<RenderTape> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "canvas must be at least 1x1, got {width}x{height}"
            )));
        }
        let image = match mode {
            RenderMode::Color => RasterImage::filled(width, height, &cfg.background),
            RenderMode::Binary => RasterImage::new(width, height, 1),
        };
        Self::record_onto(seq, image, cfg, mode)
    }

    /// Color render of `seq` composited over an existing RGB image instead
    /// of the background. Gradients cover `seq` only.
    pub fn record_over(
        seq: &PathSequence,
        base: &RasterImage,
        cfg: &RenderConfig,
    ) -> Result<RenderTape> {
        if base.channels != 3 || base.pixel_count() == 0 {
            return Err(Error::shape(
                "non-empty RGB base image",
                format!("{}x{}x{}", base.width, base.height, base.channels),
            ));
        }
        Self::record_onto(seq, base.clone(), cfg, RenderMode::Color)
    }

    fn record_onto(
        seq: &PathSequence,
        mut image: RasterImage,
        cfg: &RenderConfig,
        mode: RenderMode,
    ) -> Result<RenderTape> {
        cfg.validate()?;
        let (width, height) = (image.width, image.height);
        let channels = image.channels;
        let mut records = Vec::with_capacity(seq.len());
        let mut skipped = Vec::new();
        for (k, path) in seq.iter().enumerate() {
            if path.is_degenerate() || !path.is_finite() {
                log::warn!("path {k} is degenerate; rendered as empty");
                skipped.push(k);
                records.push(None);
                continue;
            }
            let px = to_pixels(path, width, height);
            let flat = flatten_with_sources(&px, cfg.flatten_tolerance);
            let samples = rasterize_path(&px, &flat, width, height, cfg);
            let (color, beta) = match mode {
                RenderMode::Color => (path.color, path.beta),
                RenderMode::Binary => ([1.0; 3], 1.0),
            };
            let mut prev = Vec::with_capacity(samples.samples.len());
            for s in &samples.samples {
                let base = s.pixel as usize * channels;
                let alpha = beta * s.coverage;
                let mut before = [0.0; 3];
                for c in 0..channels {
                    let v = image.data[base + c];
                    before[c] = v;
                    image.data[base + c] = alpha * color[c] + (1.0 - alpha) * v;
                }
                prev.push(before);
            }
            records.push(Some(PathRecord { samples, prev }));
        }
        Ok(RenderTape {
            mode,
            width,
            height,
            paths: seq.paths.clone(),
            records,
            image,
            skipped,
        })
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn into_rendered(self) -> Rendered {
        Rendered {
            image: self.image,
            skipped: self.skipped,
        }
    }

    /// Gradient of `Σ upstream · image` with respect to every path parameter,
    /// laid out as [`PathSequence::params`].
    pub fn backward(&self, upstream: &RasterImage) -> Result<Vec<f64>> {
        upstream.check_same_shape(&self.image)?;
        let channels = self.image.channels;
        let mut g = upstream.data.clone();
        let mut grad = vec![0.0; self.paths.len() * PARAMS_PER_PATH];
        let (sx, sy) = (self.width as f64, self.height as f64);
        for (k, rec) in self.records.iter().enumerate().rev() {
            let Some(rec) = rec else { continue };
            let path = &self.paths[k];
            let (color, beta, binary) = match self.mode {
                RenderMode::Color => (path.color, path.beta, false),
                RenderMode::Binary => ([1.0; 3], 1.0, true),
            };
            let mut dctrl = [Point::default(); CONTROL_POINTS];
            let mut dcolor = [0.0; 3];
            let mut dbeta = 0.0;
            for (s, before) in rec.samples.samples.iter().zip(&rec.prev) {
                let base = s.pixel as usize * channels;
                let alpha = beta * s.coverage;
                let mut dalpha = 0.0;
                for c in 0..channels {
                    let gc = g[base + c];
                    dalpha += gc * (color[c] - before[c]);
                    dcolor[c] += gc * alpha;
                    g[base + c] = gc * (1.0 - alpha);
                }
                dbeta += dalpha * s.coverage;
                if s.dcov != 0.0 {
                    // sd moves opposite to the nearest point along `dir`
                    let dpoint = s.dir * (-dalpha * beta * s.dcov);
                    let idx = ClosedPath::segment_indices(s.segment as usize);
                    for (j, wj) in bernstein(s.u).into_iter().enumerate() {
                        dctrl[idx[j]] = dctrl[idx[j]] + dpoint * wj;
                    }
                }
            }
            let out = &mut grad[k * PARAMS_PER_PATH..(k + 1) * PARAMS_PER_PATH];
            for (i, d) in dctrl.iter().enumerate() {
                out[2 * i] = d.x * sx;
                out[2 * i + 1] = d.y * sy;
            }
            if !binary {
                out[COLOR_OFFSET..BETA_OFFSET].copy_from_slice(&dcolor);
                out[BETA_OFFSET] = dbeta;
            }
        }
        Ok(grad)
    }
}

pub fn render(seq: &PathSequence, w: usize, h: usize, cfg: &RenderConfig) -> Result<Rendered> {
    Ok(RenderTape::record(seq, w, h, cfg, RenderMode::Color)?.into_rendered())
}

/// Renders with every color forced to white and beta to 1 over black; one channel.
pub fn render_binary(
    seq: &PathSequence,
    w: usize,
    h: usize,
    cfg: &RenderConfig,
) -> Result<Rendered> {
    Ok(RenderTape::record(seq, w, h, cfg, RenderMode::Binary)?.into_rendered())
}

pub fn render_with_grad(
    seq: &PathSequence,
    w: usize,
    h: usize,
    cfg: &RenderConfig,
    upstream: &RasterImage,
) -> Result<Vec<f64>> {
    RenderTape::record(seq, w, h, cfg, RenderMode::Color)?.backward(upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(paths: Vec<ClosedPath>) -> PathSequence {
        PathSequence::new(paths)
    }

    #[test]
    fn empty_sequence_is_background() {
        let cfg = RenderConfig {
            background: [0.2, 0.4, 0.6],
            ..Default::default()
        };
        let img = render(&PathSequence::default(), 8, 5, &cfg).unwrap().image;
        assert!(img.data.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        let bin = render_binary(&PathSequence::default(), 8, 5, &cfg)
            .unwrap()
            .image;
        assert_eq!(bin.channels, 1);
        assert!(bin.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_canvas_square_saturates_interior() {
        let c = [0.3, 0.7, 0.5];
        let s = seq(vec![ClosedPath::rect(0.0, 0.0, 1.0, 1.0, c, 1.0)]);
        let img = render(&s, 64, 64, &RenderConfig::default()).unwrap().image;
        for y in 11..53 {
            for x in 11..53 {
                for ch in 0..3 {
                    assert!((img.get(x, y, ch) - c[ch]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn later_path_wins_overlap() {
        let red = ClosedPath::rect(0.1, 0.1, 0.6, 0.6, [1.0, 0.0, 0.0], 1.0);
        let blue = ClosedPath::rect(0.4, 0.4, 0.9, 0.9, [0.0, 0.0, 1.0], 1.0);
        let img = render(&seq(vec![red, blue]), 100, 100, &RenderConfig::default())
            .unwrap()
            .image;
        let p = img.pixel(50, 50);
        assert!(p[2] > 0.999 && p[0] < 1e-3);
    }

    #[test]
    fn binary_left_half() {
        let s = seq(vec![ClosedPath::rect(0.0, 0.0, 0.5, 1.0, [0.2; 3], 0.3)]);
        let img = render_binary(&s, 64, 64, &RenderConfig::default())
            .unwrap()
            .image;
        assert!(img.get(15, 30, 0) > 0.999);
        assert!(img.get(60, 30, 0) < 1e-3);
    }

    #[test]
    fn binary_union_of_disjoint_paths_is_max() {
        let cfg = RenderConfig::default();
        let a = ClosedPath::ellipse(Point::new(0.25, 0.3), 0.15, 0.2, [0.5; 3], 1.0);
        let b = ClosedPath::rect(0.7, 0.5, 0.95, 0.9, [0.5; 3], 1.0);
        let both = render_binary(&seq(vec![a.clone(), b.clone()]), 64, 64, &cfg)
            .unwrap()
            .image;
        let ra = render_binary(&seq(vec![a]), 64, 64, &cfg).unwrap().image;
        let rb = render_binary(&seq(vec![b]), 64, 64, &cfg).unwrap().image;
        for i in 0..both.data.len() {
            assert!(
                (both.data[i] - ra.data[i].max(rb.data[i])).abs() < 1e-3,
                "{i}: {} {} {}",
                both.data[i],
                ra.data[i],
                rb.data[i]
            );
        }
    }

    #[test]
    fn degenerate_path_is_skipped() {
        let dot = ClosedPath::new([Point::new(0.5, 0.5); 12], [1.0; 3], 1.0);
        let r = render(&seq(vec![dot]), 16, 16, &RenderConfig::default()).unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert!(r.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let s = seq(vec![ClosedPath::ellipse(
            Point::new(0.5, 0.5),
            0.3,
            0.2,
            [0.4; 3],
            0.9,
        )]);
        let up = RasterImage::new(32, 32, 3);
        let g = render_with_grad(&s, 32, 32, &RenderConfig::default(), &up).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let bad = RasterImage::new(31, 32, 3);
        assert!(render_with_grad(&s, 32, 32, &RenderConfig::default(), &bad).is_err());
    }

    #[test]
    fn mean_loss_color_gradient_positive() {
        let s = seq(vec![ClosedPath::ellipse(
            Point::new(0.5, 0.5),
            0.3,
            0.2,
            [0.4; 3],
            0.9,
        )]);
        let n = (32 * 32 * 3) as f64;
        let up = RasterImage::filled(32, 32, &[1.0 / n; 3]);
        let g = render_with_grad(&s, 32, 32, &RenderConfig::default(), &up).unwrap();
        for c in 0..3 {
            assert!(g[COLOR_OFFSET + c] > 0.0);
        }
    }

    #[test]
    fn values_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let paths = (0..4)
                .map(|_| {
                    let mut c = [Point::default(); 12];
                    c.iter_mut()
                        .for_each(|p| *p = Point::new(rng.gen(), rng.gen()));
                    ClosedPath::new(c, [rng.gen(), rng.gen(), rng.gen()], rng.gen())
                })
                .collect();
            let img = render(&seq(paths), 24, 24, &RenderConfig::default())
                .unwrap()
                .image;
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn swapping_disjoint_paths_is_invisible() {
        let a = ClosedPath::rect(0.05, 0.05, 0.3, 0.3, [1.0, 0.0, 0.0], 0.8);
        let b = ClosedPath::rect(0.6, 0.6, 0.95, 0.95, [0.0, 1.0, 0.0], 0.7);
        let cfg = RenderConfig::default();
        let ab = render(&seq(vec![a.clone(), b.clone()]), 64, 64, &cfg)
            .unwrap()
            .image;
        let ba = render(&seq(vec![b, a]), 64, 64, &cfg).unwrap().image;
        let diff = ab
            .data
            .iter()
            .zip(&ba.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn beta_affine_at_saturated_pixel() {
        let under = ClosedPath::rect(0.0, 0.0, 1.0, 1.0, [0.2, 0.3, 0.4], 1.0);
        let value = |beta: f64| {
            let top = ClosedPath::rect(0.2, 0.2, 0.8, 0.8, [0.9, 0.1, 0.5], beta);
            render(
                &seq(vec![under.clone(), top]),
                64,
                64,
                &RenderConfig::default(),
            )
            .unwrap()
            .image
            .get(32, 32, 0)
        };
        let (v0, v5, v1) = (value(0.0), value(0.5), value(1.0));
        assert!((v5 - 0.5 * (v0 + v1)).abs() < 1e-12);
        let v3 = value(0.3);
        assert!((v3 - (0.7 * v0 + 0.3 * v1)).abs() < 1e-12);
    }

    #[test]
    fn double_resolution_box_filter_matches() {
        let s = seq(vec![
            ClosedPath::ellipse(Point::new(0.4, 0.45), 0.3, 0.25, [0.9, 0.2, 0.1], 1.0),
            ClosedPath::rect(0.5, 0.1, 0.9, 0.6, [0.1, 0.3, 0.8], 0.8),
        ]);
        let cfg = RenderConfig::default();
        let lo = render(&s, 64, 64, &cfg).unwrap().image;
        let hi = render(&s, 128, 128, &cfg).unwrap().image.downsample_box(2);
        let mae = lo
            .data
            .iter()
            .zip(&hi.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / lo.data.len() as f64;
        assert!(mae < 2e-2, "{mae}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RenderConfig::default().with_tau(0.1);
        assert!(render(&PathSequence::default(), 4, 4, &cfg).is_err());
        assert!(render(&PathSequence::default(), 0, 4, &RenderConfig::default()).is_err());
    }

    fn fd_check(
        scene: &PathSequence,
        up: &RasterImage,
        step: f64,
    ) -> crate::gradcheck::GradComparison {
        use crate::gradcheck::{central_differences, compare};
        let cfg = RenderConfig::default();
        let analytic = render_with_grad(scene, 64, 64, &cfg, up).unwrap();
        let numeric = central_differences(
            |x| {
                let img = render(&PathSequence::from_params(x).unwrap(), 64, 64, &cfg)
                    .unwrap()
                    .image;
                img.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
            },
            &scene.params(),
            step,
        );
        compare(&analytic, &numeric, 1e-2, 1e-6)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::scenes::{random_scene, random_upstream};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mut within, mut total) = (0, 0);
        for _ in 0..3 {
            let s = random_scene(&mut rng, 3);
            let up = random_upstream(&mut rng, 64, 64, 3);
            let cmp = fd_check(&s, &up, 1e-3);
            within += cmp.within;
            total += cmp.total;
        }
        assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
    }

    #[test]
    fn gradient_exact_with_corners_at_small_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene: PathSequence = (0..2)
            .map(|_| {
                let control = std::array::from_fn(|_| {
                    Point::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8))
                });
                ClosedPath::new(
                    control,
                    [rng.gen(), rng.gen(), rng.gen()],
                    rng.gen_range(0.3..1.0),
                )
            })
            .collect();
        let up = crate::scenes::random_upstream(&mut rng, 64, 64, 3);
        let cmp = fd_check(&scene, &up, 1e-6);
        assert!(cmp.fraction_within() >= 0.95, "{cmp:?}");
    }

    #[test]
    fn tiny_moves_never_flip_pixels() {
        // Arbitrary control points spilling past the canvas, then clamped:
        // folds, corners, and edges lying on the border.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = RenderConfig::default();
        let mut worst: f64 = 0.0;
        for _ in 0..60 {
            let mut path = ClosedPath::new(
                std::array::from_fn(|_| {
                    Point::new(rng.gen_range(-0.3..1.3), rng.gen_range(-0.3..1.3))
                }),
                [0.9, 0.5, 0.1],
                1.0,
            );
            path.clamp();
            let a = render(&seq(vec![path.clone()]), 48, 48, &cfg)
                .unwrap()
                .image;
            for _ in 0..4 {
                let mut moved = path.clone();
                for p in moved.control.iter_mut() {
                    *p = Point::new(
                        p.x + rng.gen_range(-1e-9..1e-9),
                        p.y + rng.gen_range(-1e-9..1e-9),
                    );
                }
                let b = render(&seq(vec![moved]), 48, 48, &cfg).unwrap().image;
                for (x, y) in a.data.iter().zip(&b.data) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn coverage_is_continuous_through_the_taper() {
        for tau in [0.5, 1.0, 2.0] {
            let mut prev = coverage(-12.0 * tau, tau);
            let mut sd = -12.0 * tau;
            while sd < 12.0 * tau {
                sd += 1e-3 * tau;
                let c = coverage(sd, tau);
                assert!((c - prev).abs() < 1e-3, "jump at {sd}");
                assert!(c <= prev + 1e-15);
                prev = c;
            }
            assert_eq!(coverage(10.0 * tau, tau), 0.0);
            assert_eq!(coverage(-10.0 * tau, tau), 1.0);
            let (c, dc) = coverage_with_slope(8.7 * tau, tau);
            let h = 1e-6;
            let fd = (coverage(8.7 * tau + h, tau) - coverage(8.7 * tau - h, tau)) / (2.0 * h);
            assert!((fd - dc).abs() < 1e-8 && c > 0.0);
        }
    }

    #[test]
    fn compositing_over_a_base_matches_full_render() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let all = crate::scenes::random_scene(&mut rng, 4);
        let cfg = RenderConfig::default();
        let canvas = PathSequence::new(all.paths[..2].to_vec());
        let top = PathSequence::new(all.paths[2..].to_vec());
        let base = render(&canvas, 40, 30, &cfg).unwrap().image;
        let tape = RenderTape::record_over(&top, &base, &cfg).unwrap();
        assert_eq!(tape.image(), &render(&all, 40, 30, &cfg).unwrap().image);
        let up = crate::scenes::random_upstream(&mut rng, 40, 30, 3);
        let full = render_with_grad(&all, 40, 30, &cfg, &up).unwrap();
        assert_eq!(tape.backward(&up).unwrap()[..], full[2 * PARAMS_PER_PATH..]);
    }
}
