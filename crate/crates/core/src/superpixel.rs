//! SLIC superpixels and per-superpixel patch extraction.

use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    /// Row-major label per pixel.
    pub labels: Vec<u32>,
    pub num_labels: usize,
    pub bboxes: Vec<BBox>,
    pub areas: Vec<usize>,
}

impl SuperpixelMap {
    /// Builds the map from raw labels, relabeling to `0..k` in raster order of
    /// first appearance.
    pub fn from_labels(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::shape(width * height, raw.len()));
        }
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &l in raw {
            let next = remap.len() as u32;
            labels.push(*remap.entry(l).or_insert(next));
        }
        let num_labels = remap.len();
        let mut bboxes = vec![
            BBox {
                x0: usize::MAX,
                y0: usize::MAX,
                x1: 0,
                y1: 0
            };
            num_labels
        ];
        let mut areas = vec![0; num_labels];
        for y in 0..height {
            for x in 0..width {
                let l = labels[y * width + x] as usize;
                let b = &mut bboxes[l];
                b.x0 = b.x0.min(x);
                b.y0 = b.y0.min(y);
                b.x1 = b.x1.max(x);
                b.y1 = b.y1.max(y);
                areas[l] += 1;
            }
        }
        Ok(SuperpixelMap {
            width,
            height,
            labels,
            num_labels,
            bboxes,
            areas,
        })
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Full-size binary mask of one label (single channel, 0 or 1).
    pub fn mask(&self, label: usize) -> Result<RasterImage> {
        self.check_label(label)?;
        let data = self
            .labels
            .iter()
            .map(|&l| if l as usize == label { 1.0 } else { 0.0 })
            .collect();
        Ok(RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        })
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::LabelOutOfRange {
                label,
                num_labels: self.num_labels,
            });
        }
        Ok(())
    }

    /// `4πA / P²` per region, with the perimeter counted in unit pixel edges
    /// (including edges on the image border).
    pub fn isoperimetric_quotients(&self) -> Vec<f64> {
        let mut perim = vec![0usize; self.num_labels];
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let l = self.labels[y * w + x];
                let neighbors = [
                    (x > 0).then(|| self.labels[y * w + x - 1]),
                    (x + 1 < w).then(|| self.labels[y * w + x + 1]),
                    (y > 0).then(|| self.labels[(y - 1) * w + x]),
                    (y + 1 < h).then(|| self.labels[(y + 1) * w + x]),
                ];
                perim[l as usize] += neighbors.iter().filter(|n| **n != Some(l)).count();
            }
        }
        self.areas
            .iter()
            .zip(&perim)
            .map(|(&a, &p)| 4.0 * std::f64::consts::PI * a as f64 / (p * p) as f64)
            .collect()
    }

    /// Writes the label map as an indexed PNG (labels cycle through a
    /// 256-entry palette).
    pub fn save_label_png(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        let palette: Vec<u8> = (0..256u32)
            .flat_map(|i| {
                // golden-ratio hue walk keeps neighbors distinguishable
                let h = (i as f64 * 0.618_033_988_75).fract();
                hsv_to_rgb(h, 0.65, 0.95)
            })
            .collect();
        enc.set_palette(palette);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = self.labels.iter().map(|&l| (l % 256) as u8).collect();
        writer.write_image_data(&data)?;
        Ok(())
    }

    /// Writes `image` with superpixel boundaries painted red.
    pub fn save_overlay_png(&self, image: &RasterImage, path: impl AsRef<FsPath>) -> Result<()> {
        let mut out = image.to_rgb();
        if (out.width, out.height) != (self.width, self.height) {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", out.width, out.height),
            ));
        }
        let w = self.width;
        for y in 0..self.height {
            for x in 0..w {
                let l = self.labels[y * w + x];
                let edge = (x + 1 < w && self.labels[y * w + x + 1] != l)
                    || (y + 1 < self.height && self.labels[(y + 1) * w + x] != l);
                if edge {
                    for (c, v) in [1.0, 0.0, 0.0].into_iter().enumerate() {
                        out.set(x, y, c, v);
                    }
                }
            }
        }
        out.save_png(path)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// One superpixel cropped to its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelPatch {
    /// RGB crop, zero outside the mask.
    pub image: RasterImage,
    /// Single-channel 0/1 mask of the crop.
    pub mask: RasterImage,
    /// Top-left of the crop in full-image pixels.
    pub offset: (usize, usize),
    /// Width and height of the crop.
    pub size: (usize, usize),
}

impl SuperpixelPatch {
    /// Patch covering a whole image with an all-ones mask.
    pub fn whole(image: &RasterImage) -> SuperpixelPatch {
        let image = image.to_rgb();
        let mask = RasterImage::filled(image.width, image.height, &[1.0]);
        let size = (image.width, image.height);
        SuperpixelPatch {
            image,
            mask,
            offset: (0, 0),
            size,
        }
    }

    pub fn mask_area(&self) -> f64 {
        self.mask.data.iter().sum()
    }
}

pub fn extract_patch(
    image: &RasterImage,
    map: &SuperpixelMap,
    label: usize,
) -> Result<SuperpixelPatch> {
    map.check_label(label)?;
    if (image.width, image.height) != (map.width, map.height) {
        return Err(Error::shape(
            format!("{}x{}", map.width, map.height),
            format!("{}x{}", image.width, image.height),
        ));
    }
    let rgb = image.to_rgb();
    let b = map.bboxes[label];
    let (w, h) = (b.width(), b.height());
    let mut crop = RasterImage::new(w, h, 3);
    let mut mask = RasterImage::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = (b.x0 + x, b.y0 + y);
            if map.label(gx, gy) == label {
                mask.set(x, y, 0, 1.0);
                for c in 0..3 {
                    crop.set(x, y, c, rgb.get(gx, gy, c));
                }
            }
        }
    }
    Ok(SuperpixelPatch {
        image: crop,
        mask,
        offset: (b.x0, b.y0),
        size: (w, h),
    })
}

/// Superpixel backends. Only SLIC is implemented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SuperpixelMethod {
    #[default]
    Slic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelConfig {
    pub method: SuperpixelMethod,
    /// Overrides the count derived from the path budget.
    pub n_superpixels: Option<usize>,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SuperpixelConfig {
    fn default() -> Self {
        SuperpixelConfig {
            method: SuperpixelMethod::Slic,
            n_superpixels: None,
            compactness: 30.0,
            iterations: 10,
        }
    }
}

impl SuperpixelConfig {
    /// About half the budget goes to coarse paths at ~32 paths per superpixel.
    pub fn count_for_budget(&self, n_paths: usize) -> usize {
        self.n_superpixels.unwrap_or((n_paths / 64).max(1))
    }

    pub fn decompose(&self, image: &RasterImage, n_paths: usize) -> Result<SuperpixelMap> {
        match self.method {
            SuperpixelMethod::Slic => slic_decompose(
                image,
                self.count_for_budget(n_paths),
                self.compactness,
                self.iterations,
            ),
        }
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in [0,1] to CIELAB (D65).
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC in CIELAB+xy with `D = sqrt(d_lab² + (m/S)² d_xy²)`, followed by
/// connectivity enforcement. The exact region count may differ from
/// `n_superpixels`.
pub fn slic_decompose(
    image: &RasterImage,
    n_superpixels: usize,
    compactness: f64,
    iterations: usize,
) -> Result<SuperpixelMap> {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("image is empty".into()));
    }
    if n_superpixels == 0 {
        return Err(Error::InvalidArgument(
            "n_superpixels must be at least 1".into(),
        ));
    }
    if n_superpixels > w * h {
        return Err(Error::TooManySuperpixels {
            requested: n_superpixels,
            pixels: w * h,
        });
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    let rgb = image.to_rgb();
    let lab: Vec<[f64; 3]> = (0..w * h)
        .map(|i| rgb_to_lab([rgb.data[3 * i], rgb.data[3 * i + 1], rgb.data[3 * i + 2]]))
        .collect();
    let step = ((w * h) as f64 / n_superpixels as f64).sqrt();

    let mut centers = seed_centers(&lab, w, h, n_superpixels);
    let mut labels = vec![u32::MAX; w * h];
    let mut best = vec![f64::INFINITY; w * h];
    let spatial = (compactness / step).powi(2);
    for _ in 0..iterations.max(1) {
        best.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x - step).floor().max(0.0) as usize;
            let x1 = ((c.x + step).ceil() as usize).min(w - 1);
            let y0 = (c.y - step).floor().max(0.0) as usize;
            let y1 = ((c.y + step).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let l = lab[i];
                    let dlab = (l[0] - c.lab[0]).powi(2)
                        + (l[1] - c.lab[1]).powi(2)
                        + (l[2] - c.lab[2]).powi(2);
                    let dxy = (x as f64 + 0.5 - c.x).powi(2) + (y as f64 + 0.5 - c.y).powi(2);
                    let d = dlab + spatial * dxy;
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // pixels outside every search window go to the spatially nearest center
        for i in 0..w * h {
            if best[i].is_infinite() {
                let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                let k = centers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = (a.1.x - x).powi(2) + (a.1.y - y).powi(2);
                        let db = (b.1.x - x).powi(2) + (b.1.y - y).powi(2);
                        da.total_cmp(&db)
                    })
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                labels[i] = k as u32;
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64 + 0.5;
            s[4] += (i / w) as f64 + 0.5;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                *c = Center {
                    lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    x: s[3] / s[5],
                    y: s[4] / s[5],
                };
            }
        }
    }
    let min_size = ((step * step) / 4.0).round().max(1.0) as usize;
    let merged = enforce_connectivity(&labels, w, h, min_size);
    SuperpixelMap::from_labels(w, h, &merged)
}

fn seed_centers(lab: &[[f64; 3]], w: usize, h: usize, n: usize) -> Vec<Center> {
    let nx = ((n as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w.min(n));
    let ny = ((n as f64 / nx as f64).round() as usize).clamp(1, h);
    let grad = |x: usize, y: usize| -> f64 {
        let at = |x: usize, y: usize| lab[y * w + x];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let dx: f64 = (0..3).map(|c| (at(xr, y)[c] - at(xl, y)[c]).powi(2)).sum();
        let dy: f64 = (0..3).map(|c| (at(x, yd)[c] - at(x, yu)[c]).powi(2)).sum();
        dx + dy
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            // move to the lowest gradient in the 3x3 neighborhood
            let mut best = (grad(cx, cy), cx, cy);
            for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = grad(x, y);
                    if g < best.0 {
                        best = (g, x, y);
                    }
                }
            }
            let (_, x, y) = best;
            centers.push(Center {
                lab: lab[y * w + x],
                x: x as f64 + 0.5,
                y: y as f64 + 0.5,
            });
        }
    }
    centers
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Splits every label into 4-connected components, then merges components
/// smaller than `min_size` into their largest adjacent component, smallest
/// first.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == l {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    let ncomp = sizes.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        let a = comp[i];
        for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)]
            .into_iter()
            .flatten()
        {
            let b = comp[j];
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }
    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut merged_size = sizes.clone();
    let mut order: Vec<usize> = (0..ncomp).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let root = find(&mut parent, c);
        if merged_size[root] >= min_size {
            continue;
        }
        let mut target: Option<(usize, usize)> = None;
        for &nb in &adjacency[c] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            let cand = (merged_size[r], usize::MAX - r);
            if target.is_none_or(|t| cand > (merged_size[t.1], usize::MAX - t.1)) {
                target = Some((merged_size[r], r));
            }
        }
        if let Some((_, r)) = target {
            parent[root] = r;
            merged_size[r] += merged_size[root];
        }
    }
    (0..n).map(|i| find(&mut parent, comp[i]) as u32).collect()
}
