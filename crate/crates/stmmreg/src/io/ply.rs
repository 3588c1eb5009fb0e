//! Minimal PLY support: vertex positions only.
//!
//! Reads `ascii` and `binary_little_endian` files whose vertex element carries
//! `x`, `y`, `z` as `float` or `double`. Other elements and properties are
//! parsed only as far as needed to skip them.

use std::fs;
use std::io::Write;
use std::path::Path;

use stmmreg_core::{Point3, PointSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl std::str::FromStr for PlyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(PlyFormat::Ascii),
            "binary" | "binary-le" | "binary_little_endian" => Ok(PlyFormat::BinaryLittleEndian),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Vertex positions read from a PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<Point3>,
    /// Vertices dropped because a coordinate was not finite.
    pub skipped_nonfinite: usize,
}

impl PlyCloud {
    pub fn into_point_set(self, id: usize) -> Result<PointSet> {
        Ok(PointSet::new(id, self.points)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Line number of the first body line (ASCII).
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    loop {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::ply(line_no, "missing end_header"));
        };
        let raw = &rest[..end];
        offset += end + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::ply(line_no, "header is not valid ASCII"))?
            .trim_end_matches('\r');
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(Error::ply(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                let name = words.next().unwrap_or("");
                let version = words.next().unwrap_or("");
                format = Some(match name {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(Error::UnsupportedFormat(name.to_string()));
                    }
                    _ => return Err(Error::ply(line_no, format!("unknown format `{name}`"))),
                });
                if version != "1.0" {
                    return Err(Error::ply(
                        line_no,
                        format!("unsupported version `{version}`"),
                    ));
                }
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::ply(line_no, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::ply(line_no, "element count is not a non-negative integer")
                    })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::ply(line_no, "property before any element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| Error::ply(line_no, "property without a type"))?;
                let property = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_name)) if !count.is_float() => {
                            Property::List { count, item }
                        }
                        _ => return Err(Error::ply(line_no, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| {
                        Error::ply(line_no, format!("unknown property type `{ty}`"))
                    })?;
                    let name = words
                        .next()
                        .ok_or_else(|| Error::ply(line_no, "property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(property);
            }
            "end_header" => {
                let format = format.ok_or_else(|| Error::ply(line_no, "missing format line"))?;
                return Ok(Header {
                    format,
                    elements,
                    body: offset,
                    body_line: line_no + 1,
                });
            }
            other => return Err(Error::ply(line_no, format!("unexpected keyword `{other}`"))),
        }
    }
}

/// Position of x, y and z among the vertex properties.
fn xyz_slots(element: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (k, p) in element.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !ty.is_float() {
                return Err(Error::Schema(format!(
                    "vertex property `{name}` must be float or double"
                )));
            }
            slots[axis] = k;
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(Error::Schema("vertex element lacks x, y or z".into()));
    }
    Ok(slots)
}

struct Tokens<'a> {
    lines: std::str::Lines<'a>,
    current: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, first_line: usize) -> Self {
        Self {
            lines: text.lines(),
            current: "".split_whitespace(),
            line: first_line.saturating_sub(1),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        loop {
            if let Some(t) = self.current.next() {
                return Ok(t);
            }
            match self.lines.next() {
                Some(l) => {
                    self.line += 1;
                    self.current = l.split_whitespace();
                }
                None => return Err(Error::ply(self.line, "unexpected end of data")),
            }
        }
    }

    fn number(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse::<f64>()
            .map_err(|_| Error::ply(self.line, format!("invalid number `{t}`")))
    }
}

fn read_ascii(header: &Header, bytes: &[u8]) -> Result<PlyCloud> {
    let text = std::str::from_utf8(&bytes[header.body..])
        .map_err(|_| Error::ply(header.body_line, "ASCII body is not valid UTF-8"))?;
    let mut tokens = Tokens::new(text, header.body_line);
    let mut cloud = PlyCloud {
        points: Vec::new(),
        skipped_nonfinite: 0,
    };
    for element in &header.elements {
        let slots = if element.name == "vertex" {
            Some(xyz_slots(element)?)
        } else {
            None
        };
        let mut values = vec![0.0; element.properties.len()];
        for _ in 0..element.count {
            for (k, p) in element.properties.iter().enumerate() {
                match p {
                    Property::Scalar { .. } => values[k] = tokens.number()?,
                    Property::List { .. } => {
                        let n = tokens.number()?;
                        if n.is_nan() || n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::ply(tokens.line, "invalid list length"));
                        }
                        for _ in 0..n as u64 {
                            tokens.number()?;
                        }
                    }
                }
            }
            if let Some(s) = slots {
                push_vertex(&mut cloud, values[s[0]], values[s[1]], values[s[2]]);
            }
        }
        if element.name == "vertex" {
            break;
        }
    }
    Ok(cloud)
}

fn push_vertex(cloud: &mut PlyCloud, x: f64, y: f64, z: f64) {
    if x.is_finite() && y.is_finite() && z.is_finite() {
        cloud.points.push(Point3::new(x, y, z));
    } else {
        cloud.skipped_nonfinite += 1;
    }
}

fn read_binary(header: &Header, bytes: &[u8]) -> Result<PlyCloud> {
    let body = &bytes[header.body..];
    let mut pos = 0usize;
    let truncated = || Error::ply(header.body_line, "binary body is truncated");
    let take = |n: usize, pos: &mut usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).ok_or_else(truncated)?;
        let slice = body.get(*pos..end).ok_or_else(truncated)?;
        *pos = end;
        Ok(slice)
    };
    let mut cloud = PlyCloud {
        points: Vec::new(),
        skipped_nonfinite: 0,
    };
    for element in &header.elements {
        let slots = if element.name == "vertex" {
            Some(xyz_slots(element)?)
        } else {
            None
        };
        let fixed: Option<usize> = element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Some(ty.size()),
                Property::List { .. } => None,
            })
            .sum();
        if let Some(row) = fixed {
            let needed = row.checked_mul(element.count).ok_or_else(truncated)?;
            if body.len() - pos < needed {
                return Err(truncated());
            }
        }
        let mut values = vec![0.0; element.properties.len()];
        for _ in 0..element.count {
            for (k, p) in element.properties.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => {
                        values[k] = ty.read_le(take(ty.size(), &mut pos)?);
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(count.size(), &mut pos)?);
                        if n < 0.0 {
                            return Err(Error::ply(header.body_line, "negative list length"));
                        }
                        let len = (n as usize)
                            .checked_mul(item.size())
                            .ok_or_else(truncated)?;
                        take(len, &mut pos)?;
                    }
                }
            }
            if let Some(s) = slots {
                push_vertex(&mut cloud, values[s[0]], values[s[1]], values[s[2]]);
            }
        }
        if element.name == "vertex" {
            break;
        }
    }
    Ok(cloud)
}

/// Parses PLY bytes. Never panics; malformed input yields an error.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyCloud> {
    let header = parse_header(bytes)?;
    if !header.elements.iter().any(|e| e.name == "vertex") {
        return Err(Error::Schema("PLY file has no vertex element".into()));
    }
    match header.format {
        PlyFormat::Ascii => read_ascii(&header, bytes),
        PlyFormat::BinaryLittleEndian => read_binary(&header, bytes),
    }
}

pub fn read_ply_cloud(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Reads the vertices of a PLY file as view `id`.
pub fn read_ply(path: impl AsRef<Path>, id: usize) -> Result<PointSet> {
    let path = path.as_ref();
    let cloud = read_ply_cloud(path)?;
    if cloud.points.is_empty() {
        return Err(Error::Schema(format!(
            "{} has no finite vertices",
            path.display()
        )));
    }
    cloud.into_point_set(id)
}

pub fn encode_ply(points: &[Point3], format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + points.len() * 24);
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    match format {
        PlyFormat::Ascii => {
            for p in points {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for p in points {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_ply(points: &[Point3], path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ply(points, format)).map_err(|e| Error::io(path, e))
}
