//! Constructed scenes and images shared by the experiments, the gradient
//! checks, and the test suites.

use rand::Rng;

use crate::geometry::{ClosedPath, PathSequence, Point, CONTROL_POINTS};
use crate::raster::RasterImage;

/// Random smooth closed path: a rotated ellipse whose anchors are jittered by
/// up to `jitter` and whose handle pairs are turned and stretched together, so
/// every junction stays tangent-continuous.
pub fn random_smooth_path(rng: &mut impl Rng, jitter: f64) -> ClosedPath {
    let center = Point::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
    let rx = rng.gen_range(0.1..0.3);
    let ry = rng.gen_range(0.1..0.3);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let color = [rng.gen(), rng.gen(), rng.gen()];
    let beta = rng.gen_range(0.3..1.0);
    let base = ClosedPath::ellipse(Point::default(), rx, ry, color, beta);
    let (sin, cos) = angle.sin_cos();
    let rotate = |p: Point| Point::new(p.x * cos - p.y * sin, p.x * sin + p.y * cos);
    let mut control = base.control.map(|p| center + rotate(p));
    for i in 0..CONTROL_POINTS / 3 {
        let a = 3 * i;
        let shift = Point::new(
            rng.gen_range(-jitter..=jitter),
            rng.gen_range(-jitter..=jitter),
        );
        let turn: f64 = rng.gen_range(-0.3..0.3);
        let (ts, tc) = turn.sin_cos();
        let anchor = control[a] + shift;
        for h in [
            (a + 1) % CONTROL_POINTS,
            (a + CONTROL_POINTS - 1) % CONTROL_POINTS,
        ] {
            let d = control[h] - control[a];
            let d = Point::new(d.x * tc - d.y * ts, d.x * ts + d.y * tc);
            control[h] = anchor + d * rng.gen_range(0.7..1.3);
        }
        control[a] = anchor;
    }
    let mut path = ClosedPath::new(control, color, beta);
    path.clamp();
    path
}

/// `n_paths` random smooth paths, in z-order.
pub fn random_scene(rng: &mut impl Rng, n_paths: usize) -> PathSequence {
    (0..n_paths)
        .map(|_| random_smooth_path(rng, 0.05))
        .collect()
}

/// Uniform `[-1, 1]` per pixel-channel.
pub fn random_upstream(rng: &mut impl Rng, w: usize, h: usize, channels: usize) -> RasterImage {
    RasterImage::from_fn(w, h, channels, |_, _, _| rng.gen_range(-1.0..=1.0))
}

/// Four flat quadrants with well-separated colors.
pub fn four_region_image(size: usize) -> RasterImage {
    const COLORS: [[f64; 3]; 4] = [
        [0.85, 0.25, 0.2],
        [0.2, 0.65, 0.3],
        [0.25, 0.35, 0.85],
        [0.9, 0.8, 0.25],
    ];
    let half = size / 2;
    RasterImage::from_fn(size, size, 3, |x, y, c| {
        let q = usize::from(x >= half) + 2 * usize::from(y >= half);
        COLORS[q][c]
    })
}

/// Deterministic photo-like image: smooth color field, a few soft blobs and
/// hard-edged shapes, plus mild texture.
pub fn synthetic_photo(width: usize, height: usize, seed: u64) -> RasterImage {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..7)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.05..0.25),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let x0 = rng.gen_range(0.0..0.8);
            let y0 = rng.gen_range(0.0..0.8);
            (
                x0,
                y0,
                x0 + rng.gen_range(0.1..0.3),
                y0 + rng.gen_range(0.1..0.3),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let noise: Vec<f64> = (0..width * height)
        .map(|_| rng.gen_range(-0.03..0.03))
        .collect();
    RasterImage::from_fn(width, height, 3, |x, y, c| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let mut val = match c {
            0 => 0.3 + 0.4 * u,
            1 => 0.5 + 0.3 * (std::f64::consts::PI * v).sin() * 0.5,
            _ => 0.6 - 0.3 * v,
        };
        for &(bx, by, r, col) in &blobs {
            let d2 = (u - bx).powi(2) + (v - by).powi(2);
            let w = (-d2 / (2.0 * r * r)).exp();
            val = val * (1.0 - w) + col[c] * w;
        }
        for &(x0, y0, x1, y1, col) in &rects {
            if u >= x0 && u < x1 && v >= y0 && v < y1 {
                val = col[c];
            }
        }
        (val + noise[y * width + x]).clamp(0.0, 1.0)
    })
}

/// A four-path "face": head, mouth, and two similar eyebrows, in z-order.
pub fn emoji_targets() -> PathSequence {
    PathSequence::new(vec![
        ClosedPath::ellipse(Point::new(0.5, 0.55), 0.34, 0.32, [0.95, 0.8, 0.2], 1.0),
        ClosedPath::ellipse(Point::new(0.5, 0.72), 0.16, 0.06, [0.6, 0.15, 0.1], 1.0),
        ClosedPath::rect(0.26, 0.36, 0.42, 0.42, [0.35, 0.2, 0.1], 1.0),
        ClosedPath::rect(0.58, 0.36, 0.74, 0.42, [0.35, 0.2, 0.1], 1.0),
    ])
}

/// Canvas size, canvas paths, the missing path, and the starting path of the
/// local-optimum experiment. The start straddles an edge the canvas already
/// reproduces, far from the missing path.
pub fn fig4_scene() -> (usize, PathSequence, ClosedPath, ClosedPath) {
    let canvas = PathSequence::new(vec![
        ClosedPath::rect(0.0, 0.0, 1.0, 1.0, [0.9, 0.88, 0.8], 1.0),
        ClosedPath::ellipse(Point::new(0.3, 0.32), 0.18, 0.18, [0.2, 0.4, 0.8], 1.0),
    ]);
    let target = ClosedPath::ellipse(Point::new(0.7, 0.7), 0.15, 0.12, [0.85, 0.3, 0.2], 1.0);
    let start = ClosedPath::ellipse(Point::new(0.44, 0.26), 0.08, 0.08, [0.5, 0.6, 0.75], 0.8);
    (64, canvas, target, start)
}
