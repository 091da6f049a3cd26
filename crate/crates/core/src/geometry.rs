//! Path parameterization and the planar primitives built on it.
//!
//! A [`ClosedPath`] is a fill region bounded by four cubic Bézier segments that
//! share endpoints cyclically through twelve control points, plus an RGB fill
//! and a visibility/opacity scalar `beta`: 24 + 3 + 1 = 28 parameters. All
//! coordinates live on the normalized canvas `[0, 1]²`; conversion to pixels
//! happens in the renderer and the SVG writer.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub const CONTROL_POINTS: usize = 12;
pub const SEGMENTS: usize = 4;
pub const SHAPE_PARAMS: usize = 2 * CONTROL_POINTS;
pub const COLOR_OFFSET: usize = SHAPE_PARAMS;
pub const BETA_OFFSET: usize = COLOR_OFFSET + 3;
/// Parameters per path: 24 for shape, 3 for color, 1 for visibility.
pub const PARAMS_PER_PATH: usize = BETA_OFFSET + 1;

/// Paths with `beta` at or above this are counted as visible.
pub const VISIBILITY_THRESHOLD: f64 = 0.5;

/// Deepest uniform subdivision level used when flattening a segment (256 pieces).
pub const MAX_SUBDIVISION_DEPTH: u32 = 8;

/// Handle length ratio for approximating a quarter circle with one cubic.
pub const KAPPA: f64 = 0.552_284_749_830_793_4;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Cubic Bernstein basis at `t`.
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

pub fn eval_cubic(segment: &[Point; 4], t: f64) -> Point {
    debug_assert!((0.0..=1.0).contains(&t), "t = {t} outside [0, 1]");
    if t == 0.0 {
        return segment[0];
    }
    if t == 1.0 {
        return segment[3];
    }
    let w = bernstein(t);
    segment
        .iter()
        .zip(w)
        .fold(Point::default(), |acc, (p, w)| acc + *p * w)
}

/// Splits a cubic at `t = 0.5` with de Casteljau's construction.
fn split_half(seg: &[Point; 4]) -> ([Point; 4], [Point; 4]) {
    let ab = seg[0].lerp(seg[1], 0.5);
    let bc = seg[1].lerp(seg[2], 0.5);
    let cd = seg[2].lerp(seg[3], 0.5);
    let abc = ab.lerp(bc, 0.5);
    let bcd = bc.lerp(cd, 0.5);
    let mid = abc.lerp(bcd, 0.5);
    ([seg[0], ab, abc, mid], [mid, bcd, cd, seg[3]])
}

/// Distance from `p` to the closed segment `a..b`, with the clamped parameter of
/// the nearest point.
pub fn point_segment_distance(a: Point, b: Point, p: Point) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= f64::MIN_POSITIVE {
        return (p.distance(a), 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (p.distance(a + ab * t), t)
}

/// Control polygon within `tolerance` of its chord; the curve lies in the hull,
/// so this bounds its deviation from the chord.
fn is_flat(seg: &[Point; 4], tolerance: f64) -> bool {
    point_segment_distance(seg[0], seg[3], seg[1]).0 <= tolerance
        && point_segment_distance(seg[0], seg[3], seg[2]).0 <= tolerance
}

/// Smallest uniform midpoint-subdivision depth at which every piece is flat.
pub fn subdivision_depth(seg: &[Point; 4], tolerance: f64) -> u32 {
    let mut pieces = vec![*seg];
    for depth in 0..MAX_SUBDIVISION_DEPTH {
        if pieces.iter().all(|p| is_flat(p, tolerance)) {
            return depth;
        }
        pieces = pieces
            .iter()
            .flat_map(|p| {
                let (l, r) = split_half(p);
                [l, r]
            })
            .collect();
    }
    MAX_SUBDIVISION_DEPTH
}

/// One closed fill path.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedPath {
    pub control: [Point; CONTROL_POINTS],
    pub color: [f64; 3],
    pub beta: f64,
}

impl ClosedPath {
    pub fn new(control: [Point; CONTROL_POINTS], color: [f64; 3], beta: f64) -> Self {
        ClosedPath {
            control,
            color,
            beta,
        }
    }

    /// Control point indices used by segment `i`.
    pub const fn segment_indices(i: usize) -> [usize; 4] {
        [3 * i, 3 * i + 1, 3 * i + 2, (3 * i + 3) % CONTROL_POINTS]
    }

    pub fn segment(&self, i: usize) -> [Point; 4] {
        Self::segment_indices(i).map(|k| self.control[k])
    }

    /// Four-segment circle approximation with the kappa handle ratio.
    pub fn ellipse(center: Point, rx: f64, ry: f64, color: [f64; 3], beta: f64) -> Self {
        // Anchors at angles 0, 90, 180, 270 degrees, counter-clockwise in y-up
        // terms (clockwise on a y-down canvas); orientation does not matter for
        // the nonzero rule.
        let anchors = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        let mut control = [Point::default(); CONTROL_POINTS];
        for (i, &(cx, cy)) in anchors.iter().enumerate() {
            let (nx, ny) = anchors[(i + 1) % 4];
            let a = Point::new(center.x + rx * cx, center.y + ry * cy);
            let b = Point::new(center.x + rx * nx, center.y + ry * ny);
            // tangent at anchor a points toward the next anchor's direction
            control[3 * i] = a;
            control[3 * i + 1] = Point::new(a.x + KAPPA * rx * nx, a.y + KAPPA * ry * ny);
            control[3 * i + 2] = Point::new(b.x + KAPPA * rx * cx, b.y + KAPPA * ry * cy);
        }
        ClosedPath::new(control, color, beta)
    }

    /// Axis-aligned rectangle with straight segments (handles at chord thirds).
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, color: [f64; 3], beta: f64) -> Self {
        let corners = [
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ];
        Self::polygon4(corners, color, beta)
    }

    /// Quadrilateral with straight edges.
    pub fn polygon4(corners: [Point; 4], color: [f64; 3], beta: f64) -> Self {
        let mut control = [Point::default(); CONTROL_POINTS];
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            control[3 * i] = a;
            control[3 * i + 1] = a.lerp(b, 1.0 / 3.0);
            control[3 * i + 2] = a.lerp(b, 2.0 / 3.0);
        }
        ClosedPath::new(control, color, beta)
    }

    pub fn params(&self) -> [f64; PARAMS_PER_PATH] {
        let mut out = [0.0; PARAMS_PER_PATH];
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut [f64]) {
        for (k, p) in self.control.iter().enumerate() {
            out[2 * k] = p.x;
            out[2 * k + 1] = p.y;
        }
        out[COLOR_OFFSET..BETA_OFFSET].copy_from_slice(&self.color);
        out[BETA_OFFSET] = self.beta;
    }

    pub fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() != PARAMS_PER_PATH {
            return Err(Error::shape(PARAMS_PER_PATH, params.len()));
        }
        let mut control = [Point::default(); CONTROL_POINTS];
        for (k, p) in control.iter_mut().enumerate() {
            *p = Point::new(params[2 * k], params[2 * k + 1]);
        }
        let color = [
            params[COLOR_OFFSET],
            params[COLOR_OFFSET + 1],
            params[COLOR_OFFSET + 2],
        ];
        Ok(ClosedPath::new(control, color, params[BETA_OFFSET]))
    }

    /// Clamps coordinates, color, and beta into `[0, 1]`.
    pub fn clamp(&mut self) {
        for p in &mut self.control {
            p.x = p.x.clamp(0.0, 1.0);
            p.y = p.y.clamp(0.0, 1.0);
        }
        for c in &mut self.color {
            *c = c.clamp(0.0, 1.0);
        }
        self.beta = self.beta.clamp(0.0, 1.0);
    }

    pub fn is_visible(&self) -> bool {
        self.beta >= VISIBILITY_THRESHOLD
    }

    pub fn is_finite(&self) -> bool {
        self.control.iter().all(|p| p.is_finite())
            && self.color.iter().all(|c| c.is_finite())
            && self.beta.is_finite()
    }

    /// All control points coincide.
    pub fn is_degenerate(&self) -> bool {
        let p0 = self.control[0];
        self.control
            .iter()
            .all(|p| (p.x - p0.x).abs() <= 1e-12 && (p.y - p0.y).abs() <= 1e-12)
    }

    /// Applies `f` to every control point.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> ClosedPath {
        ClosedPath::new(self.control.map(f), self.color, self.beta)
    }

    pub fn centroid(&self) -> Point {
        let sum = self
            .control
            .iter()
            .fold(Point::default(), |acc, p| acc + *p);
        sum * (1.0 / CONTROL_POINTS as f64)
    }
}

/// Ordered paths; later entries composite over earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathSequence {
    pub paths: Vec<ClosedPath>,
}

impl PathSequence {
    pub fn new(paths: Vec<ClosedPath>) -> Self {
        PathSequence { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ClosedPath> {
        self.paths.iter()
    }

    pub fn param_count(&self) -> usize {
        self.paths.len() * PARAMS_PER_PATH
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        for (path, chunk) in self.paths.iter().zip(out.chunks_mut(PARAMS_PER_PATH)) {
            path.write_params(chunk);
        }
        out
    }

    pub fn from_params(params: &[f64]) -> Result<Self> {
        if !params.len().is_multiple_of(PARAMS_PER_PATH) {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length {} is not a multiple of {PARAMS_PER_PATH}",
                params.len()
            )));
        }
        params
            .chunks(PARAMS_PER_PATH)
            .map(ClosedPath::from_params)
            .collect::<Result<Vec<_>>>()
            .map(PathSequence::new)
    }

    pub fn concat(&self, other: &PathSequence) -> PathSequence {
        let mut paths = self.paths.clone();
        paths.extend(other.paths.iter().cloned());
        PathSequence::new(paths)
    }

    pub fn visible_count(&self) -> usize {
        self.paths.iter().filter(|p| p.is_visible()).count()
    }

    pub fn clamp(&mut self) {
        self.paths.iter_mut().for_each(ClosedPath::clamp);
    }
}

impl FromIterator<ClosedPath> for PathSequence {
    fn from_iter<I: IntoIterator<Item = ClosedPath>>(iter: I) -> Self {
        PathSequence::new(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<Point>,
    pub closed: bool,
    /// Set when the source path collapsed to a single point.
    pub degenerate: bool,
}

impl Polyline {
    pub fn closed(vertices: Vec<Point>) -> Self {
        Polyline {
            vertices,
            closed: true,
            degenerate: false,
        }
    }

    pub fn open(vertices: Vec<Point>) -> Self {
        Polyline {
            vertices,
            closed: false,
            degenerate: false,
        }
    }

    /// Edges as `(start, end)` pairs, including the closing edge when closed.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        let count = if self.closed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area; positive for counter-clockwise in y-up coordinates.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    fn check_closed(&self) -> Result<()> {
        if !self.closed || self.vertices.len() < 3 && !self.degenerate {
            return Err(Error::OpenPolyline);
        }
        Ok(())
    }
}

/// Where a flattened vertex comes from: `Σ weights[k] · control[segment_indices(segment)[k]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexSource {
    pub segment: usize,
    /// Curve parameter within the segment.
    pub t: f64,
    pub weights: [f64; 4],
}

/// Flattened outline together with each vertex's linear dependence on the
/// control points.
#[derive(Clone, Debug)]
pub struct FlatPath {
    pub polyline: Polyline,
    pub sources: Vec<VertexSource>,
}

/// Flattens a path to a closed polyline within `tolerance` of the curve.
pub fn flatten(path: &ClosedPath, tolerance: f64) -> Polyline {
    flatten_with_sources(path, tolerance).polyline
}

/// Flattens every segment at its own uniform depth, picked from `tolerance`.
///
/// Vertices sit at `t = k / 2^depth`, so each is a fixed Bernstein combination
/// of four control points; the depth only changes when the flatness test flips.
pub fn flatten_with_sources(path: &ClosedPath, tolerance: f64) -> FlatPath {
    assert!(tolerance > 0.0, "flatten tolerance must be positive");
    if path.is_degenerate() {
        return FlatPath {
            polyline: Polyline {
                vertices: vec![path.control[0]],
                closed: true,
                degenerate: true,
            },
            sources: vec![VertexSource {
                segment: 0,
                t: 0.0,
                weights: [1.0, 0.0, 0.0, 0.0],
            }],
        };
    }
    let mut vertices = Vec::new();
    let mut sources = Vec::new();
    for s in 0..SEGMENTS {
        let seg = path.segment(s);
        let pieces = 1usize << subdivision_depth(&seg, tolerance);
        for k in 0..pieces {
            let t = k as f64 / pieces as f64;
            vertices.push(eval_cubic(&seg, t));
            sources.push(VertexSource {
                segment: s,
                t,
                weights: bernstein(t),
            });
        }
    }
    FlatPath {
        polyline: Polyline::closed(vertices),
        sources,
    }
}

/// Nonzero winding count of `poly` around `p`.
pub fn winding_number(poly: &Polyline, p: Point) -> Result<i32> {
    poly.check_closed()?;
    Ok(winding_of_edges(poly.edges(), p))
}

pub(crate) fn winding_of_edges(edges: impl Iterator<Item = (Point, Point)>, p: Point) -> i32 {
    let mut wn = 0;
    for (a, b) in edges {
        if a.y <= p.y {
            if b.y > p.y && (b - a).cross(p - a) > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && (b - a).cross(p - a) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Distance to the outline, negative inside under the nonzero rule.
pub fn signed_distance(poly: &Polyline, p: Point) -> Result<f64> {
    poly.check_closed()?;
    if poly.degenerate || poly.vertices.len() < 3 {
        return Err(Error::DegeneratePolyline);
    }
    let dist = poly
        .edges()
        .map(|(a, b)| point_segment_distance(a, b, p).0)
        .fold(f64::INFINITY, f64::min);
    let inside = winding_of_edges(poly.edges(), p) != 0;
    Ok(if inside { -dist } else { dist })
}
