//! Triangle mesh ingestion: ASCII OFF (including the ModelNet header quirk),
//! ASCII and binary STL, plus bounding-box computation.

use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

/// Default symmetric padding applied to a mesh bounding box before gridding.
pub const DEFAULT_PAD_FRACTION: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no vertices")]
    Empty,
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

impl MeshError {
    fn parse(line: usize, msg: impl Into<String>) -> Self {
        MeshError::Parse {
            line,
            msg: msg.into(),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Indexed triangle mesh. Triangles reference `vertices` by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-triangle unit normals.
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    /// Builds a mesh and checks the index and normal invariants.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, MeshError> {
        let mesh = Self {
            vertices,
            triangles,
            normals,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v as usize >= n) {
                return Err(MeshError::Invalid(format!(
                    "triangle {t} references a vertex out of range ({n} vertices)"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Invalid(format!(
                    "triangle {t} repeats a vertex index"
                )));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.triangles.len() {
                return Err(MeshError::Invalid(
                    "normal count differs from triangle count".into(),
                ));
            }
            if let Some(t) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(MeshError::Invalid(format!("normal {t} is not unit length")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unit normal of triangle `t`: the stored one if present, otherwise the
    /// geometric normal. Zero for degenerate triangles.
    pub fn unit_normal(&self, t: usize) -> Vector3<f64> {
        if let Some(normals) = &self.normals {
            return normals[t];
        }
        let [a, b, c] = self.triangle(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Writes the mesh as ASCII OFF. Coordinates use Rust's shortest
    /// round-trip float formatting, so re-parsing is lossless.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

/// Whitespace tokenizer over non-comment lines that remembers line numbers.
struct Tokens<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    current: Vec<&'a str>,
    pos: usize,
    line_no: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
            current: Vec::new(),
            pos: 0,
            line_no: 0,
        }
    }

    /// Advances to the next line that carries tokens and returns them.
    fn next_line(&mut self) -> Option<&[&'a str]> {
        for (idx, line) in self.lines.by_ref() {
            let body = line.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            if !toks.is_empty() {
                self.current = toks;
                self.pos = 0;
                self.line_no = idx + 1;
                return Some(&self.current);
            }
        }
        None
    }

    fn next(&mut self) -> Option<&'a str> {
        while self.pos >= self.current.len() {
            self.next_line()?;
        }
        let t = self.current[self.pos];
        self.pos += 1;
        Some(t)
    }

    fn line(&self) -> usize {
        self.line_no
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| MeshError::parse(line, format!("unexpected end of input reading {what}")))?;
    tok.parse()
        .map_err(|_| MeshError::parse(line, format!("invalid {what} `{tok}`")))
}

/// Parses ASCII OFF. Polygons are fan-triangulated from their first vertex;
/// fan triangles that repeat a vertex index are dropped.
pub fn parse_off(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::parse(0, format!("not ASCII: {e}")))?;
    let mut toks = Tokens::new(text);

    let header: Vec<&str> = toks
        .next_line()
        .ok_or_else(|| MeshError::parse(1, "empty input, expected OFF header"))?
        .to_vec();
    let line = toks.line();
    let first = header[0];
    if !first.starts_with("OFF") {
        return Err(MeshError::parse(line, format!("expected `OFF` header, found `{first}`")));
    }
    // ModelNet files sometimes glue the counts to the keyword: `OFF490 518 0`.
    let mut counts: Vec<&str> = Vec::new();
    let glued = &first[3..];
    if !glued.is_empty() {
        counts.push(glued);
    }
    counts.extend(header[1..].iter().copied());
    if counts.is_empty() {
        counts = toks
            .next_line()
            .ok_or_else(|| MeshError::parse(line + 1, "missing vertex/face count line"))?
            .to_vec();
    }
    let line = toks.line();
    if counts.len() < 2 {
        return Err(MeshError::parse(line, "count line needs vertex and face counts"));
    }
    let n_vertices: usize = parse_num(Some(counts[0]), line, "vertex count")?;
    let n_faces: usize = parse_num(Some(counts[1]), line, "face count")?;
    toks.pos = toks.current.len();

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let x: f64 = parse_num(toks.next(), toks.line(), "vertex coordinate")?;
        let line = toks.line();
        let y: f64 = parse_num(toks.next(), line, "vertex coordinate")?;
        let z: f64 = parse_num(toks.next(), line, "vertex coordinate")?;
        // Anything trailing on a vertex line (colors) is ignored.
        toks.pos = toks.current.len();
        vertices.push(Point3::new(x, y, z));
    }

    let mut triangles = Vec::with_capacity(n_faces);
    let mut face = Vec::new();
    for _ in 0..n_faces {
        let k: usize = parse_num(toks.next(), toks.line(), "polygon size")?;
        let line = toks.line();
        face.clear();
        for _ in 0..k {
            let v: usize = parse_num(toks.next(), line, "vertex index")?;
            if v >= n_vertices {
                return Err(MeshError::parse(
                    line,
                    format!("vertex index {v} out of range ({n_vertices} vertices)"),
                ));
            }
            face.push(v as u32);
        }
        toks.pos = toks.current.len();
        for w in 1..k.saturating_sub(1) {
            let tri = [face[0], face[w], face[w + 1]];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                triangles.push(tri);
            }
        }
    }

    TriangleMesh::new(vertices, triangles, None)
}

const STL_HEADER: usize = 80;
const STL_RECORD: usize = 50;

/// Parses ASCII or binary STL. Each facet becomes one triangle over three
/// fresh vertices; nothing is welded.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if looks_like_ascii_stl(bytes) {
        parse_stl_ascii(bytes)
    } else {
        parse_stl_binary(bytes)
    }
}

fn looks_like_ascii_stl(bytes: &[u8]) -> bool {
    let start = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    if !bytes[start..].starts_with(b"solid") {
        return false;
    }
    // Binary files may also start with "solid"; require a facet keyword and
    // a size that does not match the binary layout.
    let size_matches_binary = bytes.len() >= STL_HEADER + 4 && {
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        bytes.len() == STL_HEADER + 4 + n * STL_RECORD
    };
    !size_matches_binary && bytes.windows(5).any(|w| w == b"facet")
}

fn parse_stl_binary(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if bytes.len() < STL_HEADER + 4 {
        return Err(MeshError::parse(0, "binary STL shorter than its 84-byte header"));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let need = STL_HEADER + 4 + n * STL_RECORD;
    if bytes.len() < need {
        return Err(MeshError::parse(
            0,
            format!(
                "binary STL truncated: header claims {n} facets ({need} bytes), got {} bytes",
                bytes.len()
            ),
        ));
    }
    let read_vec = |off: usize| {
        let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        [f(off), f(off + 4), f(off + 8)]
    };
    let mut facets = Vec::with_capacity(n);
    for r in 0..n {
        let base = STL_HEADER + 4 + r * STL_RECORD;
        let nrm = read_vec(base);
        let v = [read_vec(base + 12), read_vec(base + 24), read_vec(base + 36)];
        facets.push((nrm, v));
    }
    mesh_from_facets(facets)
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::parse(0, format!("not ASCII: {e}")))?;
    let mut facets = Vec::new();
    let mut normal = [0.0; 3];
    let mut verts: Vec<[f64; 3]> = Vec::with_capacity(3);
    let mut in_facet = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("facet") => {
                if in_facet {
                    return Err(MeshError::parse(line, "nested facet"));
                }
                in_facet = true;
                verts.clear();
                normal = [0.0; 3];
                if toks.get(1) == Some(&"normal") {
                    for a in 0..3 {
                        normal[a] = parse_num(toks.get(2 + a).copied(), line, "normal component")?;
                    }
                }
            }
            Some("vertex") => {
                if !in_facet {
                    return Err(MeshError::parse(line, "vertex outside facet"));
                }
                let mut v = [0.0; 3];
                for a in 0..3 {
                    v[a] = parse_num(toks.get(1 + a).copied(), line, "vertex coordinate")?;
                }
                verts.push(v);
            }
            Some("endfacet") => {
                if !in_facet || verts.len() != 3 {
                    return Err(MeshError::parse(line, "facet does not have exactly 3 vertices"));
                }
                in_facet = false;
                facets.push((normal, [verts[0], verts[1], verts[2]]));
            }
            _ => {}
        }
    }
    if in_facet {
        return Err(MeshError::parse(text.lines().count(), "unterminated facet"));
    }
    mesh_from_facets(facets)
}

fn mesh_from_facets(facets: Vec<([f64; 3], [[f64; 3]; 3])>) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::with_capacity(facets.len() * 3);
    let mut triangles = Vec::with_capacity(facets.len());
    let mut normals = Vec::with_capacity(facets.len());
    for (t, (nrm, v)) in facets.into_iter().enumerate() {
        let p: Vec<Point3<f64>> = v.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let base = (3 * t) as u32;
        vertices.extend_from_slice(&p);
        triangles.push([base, base + 1, base + 2]);
        // Stored normals are frequently zero or unnormalized; prefer geometry.
        let geometric = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let stored = Vector3::new(nrm[0], nrm[1], nrm[2]);
        let n = if geometric.norm() > 0.0 {
            geometric.normalize()
        } else if stored.norm() > 0.0 {
            stored.normalize()
        } else {
            Vector3::z()
        };
        normals.push(n);
    }
    TriangleMesh::new(vertices, triangles, Some(normals))
}

/// Dispatches on file extension (`.off` or `.stl`, case-insensitive).
pub fn load_mesh(path: &std::path::Path) -> Result<TriangleMesh, crate::Error> {
    let bytes = std::fs::read(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("off") => parse_off(&bytes)?,
        Some("stl") => parse_stl(&bytes)?,
        _ => {
            return Err(MeshError::Invalid(format!("unsupported mesh extension: {}", path.display())).into())
        }
    };
    Ok(mesh)
}

/// Bounding box of all vertices, padded on each side by `pad_fraction` of
/// the axis extent. Zero-extent axes are padded by `pad_fraction` of the
/// largest extent instead (or by `pad_fraction` itself for a single point).
pub fn compute_aabb(mesh: &TriangleMesh, pad_fraction: f64) -> Result<Aabb, MeshError> {
    let first = *mesh.vertices.first().ok_or(MeshError::Empty)?;
    let (mut min, mut max) = (first, first);
    for v in &mesh.vertices[1..] {
        min = min.inf(v);
        max = max.sup(v);
    }
    let extent = max - min;
    let largest = extent.max();
    for a in 0..3 {
        let base = if extent[a] > 0.0 {
            extent[a]
        } else if largest > 0.0 {
            largest
        } else {
            1.0
        };
        let pad = pad_fraction * base;
        min[a] -= pad;
        max[a] += pad;
    }
    Ok(Aabb { min, max })
}
