//! Point-cloud containers, file formats, synthetic shape generation, and
//! normalization.
//!
//! Supported formats are ASCII only: OFF (faces parsed past but ignored),
//! ASCII PLY 1.0, and bare XYZ. Coordinates are written with the shortest
//! round-trip representation, so a save/load cycle reproduces coordinates
//! exactly.

use crate::rng::SeededRng;
use crate::vec3::{self, Vec3};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Class label, when the cloud belongs to a labeled dataset.
    pub label: Option<usize>,
    /// Per-point part labels; length matches `points` when present.
    pub part_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, label: None, part_labels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Off,
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(Self::Off),
            "ply" => Some(Self::PlyAscii),
            "xyz" => Some(Self::Xyz),
            _ => None,
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Off => write!(f, "off"),
            Self::PlyAscii => write!(f, "ply_ascii"),
            Self::Xyz => write!(f, "xyz"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PcioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: cloud contains no points")]
    Empty { path: PathBuf },
    #[error("synthetic shapes need at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> PcioError {
    PcioError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

pub fn load_point_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud, PcioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| PcioError::Io { path: path.to_path_buf(), source })?;
    let cloud = match format {
        CloudFormat::Off => parse_off(path, &text)?,
        CloudFormat::PlyAscii => parse_ply_ascii(path, &text)?,
        CloudFormat::Xyz => parse_xyz(path, &text)?,
    };
    if cloud.is_empty() {
        return Err(PcioError::Empty { path: path.to_path_buf() });
    }
    Ok(cloud)
}

pub fn save_point_cloud(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
) -> Result<(), PcioError> {
    let mut out = String::new();
    match format {
        CloudFormat::Off => {
            out.push_str("OFF\n");
            out.push_str(&format!("{} 0 0\n", cloud.len()));
            for p in &cloud.points {
                out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
        }
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            out.push_str(&format!("element vertex {}\n", cloud.len()));
            out.push_str("property double x\nproperty double y\nproperty double z\n");
            out.push_str("end_header\n");
            for p in &cloud.points {
                out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
        }
        CloudFormat::Xyz => {
            for p in &cloud.points {
                out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
        }
    }
    std::fs::write(path, out).map_err(|source| PcioError::Io { path: path.to_path_buf(), source })
}

/// Significant lines of a text file: (1-based line number, trimmed content),
/// with blank and '#' comment lines skipped.
fn significant_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_floats(path: &Path, line_no: usize, line: &str, want: usize) -> Result<Vec<f64>, PcioError> {
    let mut vals = Vec::with_capacity(want);
    for tok in line.split_whitespace().take(want) {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("expected a number, got {tok:?}")))?;
        vals.push(v);
    }
    if vals.len() < want {
        return Err(parse_err(
            path,
            line_no,
            format!("expected {want} numeric fields, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

fn parse_off(path: &Path, text: &str) -> Result<PointCloud, PcioError> {
    let mut lines = significant_lines(text);
    let (hdr_no, hdr) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected OFF header"))?;
    if hdr != "OFF" {
        return Err(parse_err(path, hdr_no, format!("expected OFF header, got {hdr:?}")));
    }
    let (cnt_no, counts) = lines
        .next()
        .ok_or_else(|| parse_err(path, hdr_no, "file ended before the count line"))?;
    let fields: Vec<&str> = counts.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(parse_err(path, cnt_no, "count line must read \"V F E\""));
    }
    let n_vertices: usize = fields[0]
        .parse()
        .map_err(|_| parse_err(path, cnt_no, format!("bad vertex count {:?}", fields[0])))?;
    let mut points = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (line_no, line) = lines.next().ok_or_else(|| {
            parse_err(
                path,
                cnt_no,
                format!("expected {n_vertices} vertices, file ended after {}", points.len()),
            )
        })?;
        let v = parse_floats(path, line_no, line, 3)?;
        points.push([v[0], v[1], v[2]]);
    }
    // Face lines carry only connectivity; ignore them.
    Ok(PointCloud::new(points))
}

fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud, PcioError> {
    let mut points = Vec::new();
    for (line_no, line) in significant_lines(text) {
        let v = parse_floats(path, line_no, line, 3)?;
        points.push([v[0], v[1], v[2]]);
    }
    Ok(PointCloud::new(points))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn parse_ply_ascii(path: &Path, text: &str) -> Result<PointCloud, PcioError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (no, magic) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if magic != "ply" {
        return Err(parse_err(path, no, format!("expected \"ply\" magic, got {magic:?}")));
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_end = no;
    for (line_no, line) in &mut lines {
        header_end = line_no;
        if line.is_empty() || line.starts_with("comment") || line.starts_with("obj_info") {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("format") => {
                let rest: Vec<&str> = toks.collect();
                if rest != ["ascii", "1.0"] {
                    return Err(parse_err(path, line_no, "only \"format ascii 1.0\" is supported"));
                }
                saw_format = true;
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(path, line_no, "element line missing a name"))?;
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, line_no, "element line missing a count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before any element"))?;
                let rest: Vec<&str> = toks.collect();
                if rest.first() == Some(&"list") {
                    if el.name == "vertex" {
                        return Err(parse_err(
                            path,
                            line_no,
                            "list properties are not supported on the vertex element",
                        ));
                    }
                    el.properties.push("<list>".to_string());
                } else {
                    let name = rest
                        .last()
                        .ok_or_else(|| parse_err(path, line_no, "property line missing a name"))?;
                    el.properties.push((*name).to_string());
                }
            }
            Some("end_header") => {
                if !saw_format {
                    return Err(parse_err(path, line_no, "header missing a format line"));
                }
                let mut points = Vec::new();
                for el in &elements {
                    if el.name == "vertex" {
                        let xi = prop_index(path, header_end, el, "x")?;
                        let yi = prop_index(path, header_end, el, "y")?;
                        let zi = prop_index(path, header_end, el, "z")?;
                        points.reserve(el.count);
                        for k in 0..el.count {
                            let (vno, vline) = next_data_line(&mut lines).ok_or_else(|| {
                                parse_err(
                                    path,
                                    header_end,
                                    format!(
                                        "vertex element declares {} rows but the file ends after {k}",
                                        el.count
                                    ),
                                )
                            })?;
                            let toks: Vec<&str> = vline.split_whitespace().collect();
                            let need = xi.max(yi).max(zi) + 1;
                            if toks.len() < need {
                                return Err(parse_err(
                                    path,
                                    vno,
                                    format!("vertex row has {} fields, need {need}", toks.len()),
                                ));
                            }
                            let coord = |i: usize| -> Result<f64, PcioError> {
                                toks[i].parse().map_err(|_| {
                                    parse_err(path, vno, format!("bad coordinate {:?}", toks[i]))
                                })
                            };
                            points.push([coord(xi)?, coord(yi)?, coord(zi)?]);
                        }
                    } else {
                        // Non-vertex elements (faces, edges) are consumed and dropped.
                        for k in 0..el.count {
                            if next_data_line(&mut lines).is_none() {
                                return Err(parse_err(
                                    path,
                                    header_end,
                                    format!(
                                        "element {:?} declares {} rows but the file ends after {k}",
                                        el.name, el.count
                                    ),
                                ));
                            }
                        }
                    }
                }
                return Ok(PointCloud::new(points));
            }
            Some(other) => {
                return Err(parse_err(path, line_no, format!("unexpected header token {other:?}")));
            }
            None => continue,
        }
    }
    Err(parse_err(path, header_end, "file ended before end_header"))
}

fn next_data_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Option<(usize, &'a str)> {
    lines.find(|(_, l)| !l.is_empty())
}

fn prop_index(
    path: &Path,
    line: usize,
    el: &PlyElement,
    name: &str,
) -> Result<usize, PcioError> {
    el.properties
        .iter()
        .position(|p| p == name)
        .ok_or_else(|| parse_err(path, line, format!("vertex element has no {name:?} property")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl Shape {
    /// Stable class index used as the synthetic label.
    pub fn class_index(self) -> usize {
        match self {
            Self::Sphere => 0,
            Self::Cube => 1,
            Self::Cylinder => 2,
            Self::Torus => 3,
        }
    }

    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Cube, Shape::Cylinder, Shape::Torus];
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sphere => write!(f, "sphere"),
            Self::Cube => write!(f, "cube"),
            Self::Cylinder => write!(f, "cylinder"),
            Self::Torus => write!(f, "torus"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "cube" => Ok(Self::Cube),
            "cylinder" => Ok(Self::Cylinder),
            "torus" => Ok(Self::Torus),
            other => Err(format!("unknown shape {other:?}")),
        }
    }
}

/// Cylinder proportions: radius 0.5, z in [-1, 1].
const CYL_R: f64 = 0.5;
const CYL_H: f64 = 2.0;
/// Torus proportions: center-circle radius 0.7, tube radius 0.3.
const TOR_R: f64 = 0.7;
const TOR_T: f64 = 0.3;

/// Part label values on the cylinder.
pub const CYL_PART_BOTTOM_CAP: usize = 0;
pub const CYL_PART_TOP_CAP: usize = 1;
pub const CYL_PART_SIDE: usize = 2;

/// Uniform surface samples of an analytic shape. A pure function of its
/// arguments: the same (shape, n_points, seed) always yields the same cloud.
/// The class label is the shape index; cylinders carry cap/side part labels
/// and tori carry a two-way split by major angle.
pub fn generate_synthetic(
    shape: Shape,
    n_points: usize,
    seed: u64,
) -> Result<PointCloud, PcioError> {
    if n_points < 8 {
        return Err(PcioError::TooFewPoints { min: 8, got: n_points });
    }
    let mut rng = SeededRng::new(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut parts: Option<Vec<usize>> = None;
    match shape {
        Shape::Sphere => {
            for _ in 0..n_points {
                let z = rng.range(-1.0, 1.0);
                let phi = rng.range(0.0, std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                points.push([r * phi.cos(), r * phi.sin(), z]);
            }
        }
        Shape::Cube => {
            // Faces of the side-2 cube centered at the origin, equal areas.
            for _ in 0..n_points {
                let face = rng.index(6);
                let a = rng.range(-1.0, 1.0);
                let b = rng.range(-1.0, 1.0);
                let p = match face {
                    0 => [1.0, a, b],
                    1 => [-1.0, a, b],
                    2 => [a, 1.0, b],
                    3 => [a, -1.0, b],
                    4 => [a, b, 1.0],
                    _ => [a, b, -1.0],
                };
                points.push(p);
            }
        }
        Shape::Cylinder => {
            let side_area = std::f64::consts::TAU * CYL_R * CYL_H;
            let cap_area = std::f64::consts::PI * CYL_R * CYL_R;
            let p_side = side_area / (side_area + 2.0 * cap_area);
            let mut labels = Vec::with_capacity(n_points);
            for _ in 0..n_points {
                let u = rng.uniform();
                if u < p_side {
                    let theta = rng.range(0.0, std::f64::consts::TAU);
                    let z = rng.range(-CYL_H / 2.0, CYL_H / 2.0);
                    points.push([CYL_R * theta.cos(), CYL_R * theta.sin(), z]);
                    labels.push(CYL_PART_SIDE);
                } else {
                    let top = rng.uniform() < 0.5;
                    let rho = CYL_R * rng.uniform().sqrt();
                    let theta = rng.range(0.0, std::f64::consts::TAU);
                    let z = if top { CYL_H / 2.0 } else { -CYL_H / 2.0 };
                    points.push([rho * theta.cos(), rho * theta.sin(), z]);
                    labels.push(if top { CYL_PART_TOP_CAP } else { CYL_PART_BOTTOM_CAP });
                }
            }
            parts = Some(labels);
        }
        Shape::Torus => {
            let mut labels = Vec::with_capacity(n_points);
            for _ in 0..n_points {
                // Minor angle by rejection against the surface-area density
                // (R + t cos v); major angle uniform.
                let v = loop {
                    let cand = rng.range(0.0, std::f64::consts::TAU);
                    let accept = (TOR_R + TOR_T * cand.cos()) / (TOR_R + TOR_T);
                    if rng.uniform() < accept {
                        break cand;
                    }
                };
                let u = rng.range(0.0, std::f64::consts::TAU);
                let w = TOR_R + TOR_T * v.cos();
                points.push([w * u.cos(), w * u.sin(), TOR_T * v.sin()]);
                labels.push(if u < std::f64::consts::PI { 0 } else { 1 });
            }
            parts = Some(labels);
        }
    }
    Ok(PointCloud {
        points,
        label: Some(shape.class_index()),
        part_labels: parts,
    })
}

/// Center the cloud on its centroid and scale the farthest point to norm 1.
/// All-coincident clouds collapse to the origin. Idempotent up to floating
/// round-off.
pub fn normalize_unit_sphere(cloud: &mut PointCloud) {
    let n = cloud.len();
    if n == 0 {
        return;
    }
    let mut centroid = [0.0f64; 3];
    for p in &cloud.points {
        centroid = vec3::add(centroid, *p);
    }
    centroid = vec3::scale(centroid, 1.0 / n as f64);
    for p in &mut cloud.points {
        *p = vec3::sub(*p, centroid);
    }
    let max_norm = cloud.points.iter().map(|p| vec3::norm(*p)).fold(0.0f64, f64::max);
    if max_norm < 1e-12 {
        for p in &mut cloud.points {
            *p = [0.0; 3];
        }
        return;
    }
    let inv = 1.0 / max_norm;
    for p in &mut cloud.points {
        *p = vec3::scale(*p, inv);
    }
}
