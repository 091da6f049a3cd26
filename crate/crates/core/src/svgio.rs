//! SVG export and re-import of path sequences.
//!
//! Emitted documents use one `<path>` per visible path with four absolute
//! cubic segments in pixel units. The parser accepts exactly that subset.

use std::fmt::Write as _;
use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::geometry::{
    ClosedPath, PathSequence, Point, CONTROL_POINTS, SEGMENTS, VISIBILITY_THRESHOLD,
};

const SVG_NS: &str = "http://www.w3.org/2000/svg";

#[derive(Clone, Debug, PartialEq)]
pub struct SvgPathElement {
    /// Path data in pixel coordinates.
    pub d: String,
    /// Fill color in `[0, 1]`.
    pub fill: [f64; 3],
    pub opacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgDocument {
    pub width: usize,
    pub height: usize,
    /// Document order is z-order.
    pub elements: Vec<SvgPathElement>,
}

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// `M c0 C c1 c2 c3 C ... Z` for a path already in pixel units.
pub fn path_data(path: &ClosedPath) -> String {
    let pt = |p: Point| format!("{} {}", num(p.x), num(p.y));
    let mut d = format!("M {}", pt(path.control[0]));
    for i in 0..SEGMENTS {
        let seg = path.segment(i);
        write!(d, " C {} {} {}", pt(seg[1]), pt(seg[2]), pt(seg[3])).unwrap();
    }
    d.push_str(" Z");
    d
}

/// Keeps paths with `beta >= threshold` and maps them to pixel coordinates.
pub fn to_svg(seq: &PathSequence, width: usize, height: usize, threshold: f64) -> SvgDocument {
    let (w, h) = (width as f64, height as f64);
    let elements = seq
        .iter()
        .filter(|p| p.beta >= threshold)
        .map(|p| SvgPathElement {
            d: path_data(&p.map_points(|q| Point::new(q.x * w, q.y * h))),
            fill: p.color,
            opacity: p.beta,
        })
        .collect();
    SvgDocument {
        width,
        height,
        elements,
    }
}

/// [`to_svg`] with the standard visibility threshold.
pub fn to_svg_visible(seq: &PathSequence, width: usize, height: usize) -> SvgDocument {
    to_svg(seq, width, height, VISIBILITY_THRESHOLD)
}

/// Inverse of [`to_svg`]: normalized coordinates, `beta = fill-opacity`.
pub fn from_svg(doc: &SvgDocument) -> Result<PathSequence> {
    if doc.width == 0 || doc.height == 0 {
        return Err(Error::Svg(format!(
            "empty canvas {}x{}",
            doc.width, doc.height
        )));
    }
    let (w, h) = (doc.width as f64, doc.height as f64);
    doc.elements
        .iter()
        .enumerate()
        .map(|(k, el)| {
            let control = parse_path_data(&el.d).map_err(|message| Error::SvgElement {
                element: k,
                message,
            })?;
            let control = control.map(|p| Point::new(p.x / w, p.y / h));
            Ok(ClosedPath::new(control, el.fill, el.opacity))
        })
        .collect::<Result<Vec<_>>>()
        .map(PathSequence::new)
}

impl SvgDocument {
    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        writeln!(
            s,
            r#"<svg xmlns="{SVG_NS}" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.width,
            h = self.height
        )
        .unwrap();
        for el in &self.elements {
            let [r, g, b] = el.fill.map(|c| num(100.0 * c));
            writeln!(
                s,
                r#"  <path d="{}" fill="rgb({r}%,{g}%,{b}%)" fill-opacity="{}" fill-rule="nonzero"/>"#,
                el.d,
                num(el.opacity)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn parse(text: &str) -> Result<SvgDocument> {
        let xml = roxmltree::Document::parse(text).map_err(|e| Error::Svg(e.to_string()))?;
        let root = xml.root_element();
        if root.tag_name().name() != "svg" {
            return Err(Error::Svg(format!(
                "root element is <{}>, expected <svg>",
                root.tag_name().name()
            )));
        }
        let dim = |name: &str| -> Result<usize> {
            let v = root
                .attribute(name)
                .ok_or_else(|| Error::Svg(format!("missing {name}")))?;
            v.trim_end_matches("px")
                .parse::<usize>()
                .map_err(|_| Error::Svg(format!("bad {name} {v:?}")))
        };
        let (width, height) = (dim("width")?, dim("height")?);
        if let Some(vb) = root.attribute("viewBox") {
            let expected = format!("0 0 {width} {height}");
            let got: Vec<&str> = vb
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            if got.join(" ") != expected {
                return Err(Error::Svg(format!(
                    "viewBox {vb:?} does not match the canvas"
                )));
            }
        }
        let mut elements = Vec::new();
        for (k, node) in root.children().filter(|n| n.is_element()).enumerate() {
            let err = |message: String| Error::SvgElement {
                element: k,
                message,
            };
            let tag = node.tag_name().name();
            if tag != "path" {
                return Err(err(format!("unsupported element <{tag}>")));
            }
            for attr in node.attributes() {
                match attr.name() {
                    "d" | "fill" | "fill-opacity" => {}
                    "fill-rule" if attr.value() == "nonzero" => {}
                    other => {
                        return Err(err(format!(
                            "unsupported attribute {other}={:?}",
                            attr.value()
                        )))
                    }
                }
            }
            let d = node
                .attribute("d")
                .ok_or_else(|| err("missing path data".into()))?
                .to_string();
            let fill = parse_color(node.attribute("fill").unwrap_or("rgb(0,0,0)")).map_err(err)?;
            let opacity = match node.attribute("fill-opacity") {
                None => 1.0,
                Some(v) => v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|o| (0.0..=1.0).contains(o))
                    .ok_or_else(|| err(format!("bad fill-opacity {v:?}")))?,
            };
            elements.push(SvgPathElement { d, fill, opacity });
        }
        Ok(SvgDocument {
            width,
            height,
            elements,
        })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        std::fs::write(path, self.to_xml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<SvgDocument> {
        SvgDocument::parse(&std::fs::read_to_string(path)?)
    }
}

/// `rgb(r,g,b)` with integers in 0..=255 or `rgb(r%,g%,b%)`, or `#rrggbb`.
fn parse_color(s: &str) -> std::result::Result<[f64; 3], String> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix('#') {
        if hex.len() == 6 {
            let mut out = [0.0; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let v = u8::from_str_radix(&hex[2 * c..2 * c + 2], 16)
                    .map_err(|_| format!("bad color {s:?}"))?;
                *o = v as f64 / 255.0;
            }
            return Ok(out);
        }
        return Err(format!("bad color {s:?}"));
    }
    let inner = s
        .strip_prefix("rgb(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("unsupported fill {s:?}"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("bad color {s:?}"));
    }
    let percent = parts.iter().all(|p| p.ends_with('%'));
    if !percent && parts.iter().any(|p| p.ends_with('%')) {
        return Err(format!("mixed color units in {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        let v: f64 = p
            .trim_end_matches('%')
            .parse()
            .map_err(|_| format!("bad color component {p:?}"))?;
        *o = if percent { v / 100.0 } else { v / 255.0 };
        if !(0.0..=1.0).contains(o) {
            return Err(format!("color component {p:?} out of range"));
        }
    }
    Ok(out)
}

/// Control points of one `M x y (C x y x y x y){4} Z` path in pixel units.
pub fn parse_path_data(d: &str) -> std::result::Result<[Point; CONTROL_POINTS], String> {
    check_path_data_grammar(d)?;
    let mut tokens = PathTokens::new(d);
    let mut control = [Point::default(); CONTROL_POINTS];
    let next_point = |tokens: &mut PathTokens| -> std::result::Result<Point, String> {
        let x = tokens.number()?;
        let y = tokens.number()?;
        Ok(Point::new(x, y))
    };
    match tokens.command()? {
        Some('M') => {}
        Some(c) => return Err(format!("path must start with absolute M, found {c:?}")),
        None => return Err("empty path data".into()),
    }
    control[0] = next_point(&mut tokens)?;
    let mut end = control[0];
    for i in 0..SEGMENTS {
        match tokens.command()? {
            Some('C') => {}
            Some(c) => {
                return Err(format!(
                    "segment {i}: unsupported command {c:?}, expected absolute C"
                ))
            }
            None => return Err(format!("only {i} cubic segments, expected {SEGMENTS}")),
        }
        let pts = [
            next_point(&mut tokens)?,
            next_point(&mut tokens)?,
            next_point(&mut tokens)?,
        ];
        control[3 * i + 1] = pts[0];
        control[3 * i + 2] = pts[1];
        if i + 1 < SEGMENTS {
            control[3 * i + 3] = pts[2];
        }
        end = pts[2];
    }
    match tokens.command()? {
        Some('Z') | Some('z') => {}
        Some(c) => {
            return Err(format!(
                "unsupported command {c:?} after {SEGMENTS} segments"
            ))
        }
        None => return Err("path is not closed with Z".into()),
    }
    if tokens.command()?.is_some() {
        return Err("trailing commands after Z".into());
    }
    if end != control[0] {
        return Err(format!(
            "last segment ends at ({}, {}), not at the start point",
            end.x, end.y
        ));
    }
    Ok(control)
}

struct PathTokens<'a> {
    s: &'a [u8],
    i: usize,
}

impl<'a> PathTokens<'a> {
    fn new(s: &'a str) -> Self {
        PathTokens {
            s: s.as_bytes(),
            i: 0,
        }
    }

    fn skip_separators(&mut self) {
        while self.i < self.s.len()
            && (self.s[self.i].is_ascii_whitespace() || self.s[self.i] == b',')
        {
            self.i += 1;
        }
    }

    fn command(&mut self) -> std::result::Result<Option<char>, String> {
        self.skip_separators();
        match self.s.get(self.i) {
            None => Ok(None),
            Some(c) if c.is_ascii_alphabetic() => {
                self.i += 1;
                Ok(Some(*c as char))
            }
            Some(_) => Err(format!("unexpected argument at byte {}", self.i)),
        }
    }

    fn number(&mut self) -> std::result::Result<f64, String> {
        self.skip_separators();
        let start = self.i;
        let len = scan_number(&self.s[start..])
            .ok_or_else(|| format!("expected a number at byte {start}"))?;
        self.i += len;
        let text = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| format!("bad number {text:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite number {text:?}"));
        }
        Ok(v)
    }
}

/// Length of the SVG number at the start of `s`:
/// `sign? (digits ('.' digits?)? | '.' digits) exponent?`.
fn scan_number(s: &[u8]) -> Option<usize> {
    let mut i = 0;
    if matches!(s.first(), Some(b'+') | Some(b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i > int_start;
    if i < s.len() && s[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        digits |= i > frac_start;
    }
    if !digits {
        return None;
    }
    if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
        let mut j = i + 1;
        if matches!(s.get(j), Some(b'+') | Some(b'-')) {
            j += 1;
        }
        let exp_start = j;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    Some(i)
}

/// Validates `d` against the SVG 1.1 path-data grammar: a moveto first, then
/// any drawto commands with complete argument groups (repeats allowed).
pub fn check_path_data_grammar(d: &str) -> std::result::Result<(), String> {
    let s = d.as_bytes();
    let mut i = 0;
    let skip_ws = |i: &mut usize| {
        while *i < s.len() && s[*i].is_ascii_whitespace() {
            *i += 1;
        }
    };
    let skip_comma_ws = |i: &mut usize| {
        skip_ws(i);
        if *i < s.len() && s[*i] == b',' {
            *i += 1;
            skip_ws(i);
        }
    };
    skip_ws(&mut i);
    if i == s.len() {
        return Ok(());
    }
    let mut first = true;
    while i < s.len() {
        let c = s[i] as char;
        let arity = match c.to_ascii_uppercase() {
            'M' | 'L' | 'T' => 2,
            'H' | 'V' => 1,
            'C' => 6,
            'S' | 'Q' => 4,
            'A' => 7,
            'Z' => 0,
            _ => return Err(format!("invalid command {c:?} at byte {i}")),
        };
        if first && !c.eq_ignore_ascii_case(&'M') {
            return Err("path data must begin with a moveto".into());
        }
        first = false;
        i += 1;
        skip_ws(&mut i);
        if arity == 0 {
            continue;
        }
        let mut groups = 0;
        loop {
            let group_start = i;
            let mut ok = true;
            for k in 0..arity {
                if k > 0 {
                    skip_comma_ws(&mut i);
                }
                // arc flags are single 0/1 digits
                let is_flag = c.eq_ignore_ascii_case(&'A') && (k == 3 || k == 4);
                if is_flag {
                    if i < s.len() && (s[i] == b'0' || s[i] == b'1') {
                        i += 1;
                        continue;
                    }
                    ok = false;
                    break;
                }
                match scan_number(&s[i..]) {
                    Some(len) => i += len,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                if groups == 0 {
                    return Err(format!(
                        "command {c:?} at byte {} lacks a full argument group",
                        group_start - 1
                    ));
                }
                i = group_start;
                break;
            }
            groups += 1;
            let after = i;
            skip_comma_ws(&mut i);
            if i >= s.len() || (s[i] as char).is_ascii_alphabetic() {
                break;
            }
            if i == after && !matches!(s[i], b'+' | b'-' | b'.') && !s[i].is_ascii_digit() {
                return Err(format!("unexpected byte {:?} at {i}", s[i] as char));
            }
        }
        skip_ws(&mut i);
        if i < s.len() && !(s[i] as char).is_ascii_alphabetic() {
            return Err(format!("dangling argument at byte {i}"));
        }
    }
    Ok(())
}
