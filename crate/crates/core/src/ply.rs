//! PLY reading and writing (ASCII and binary little-endian).
//!
//! Only what the pipeline needs: a `vertex` element with float positions,
//! optional `red`/`green`/`blue` and an optional integer label property, and
//! a `face` element holding triangle index lists. Other elements and
//! properties are parsed and skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use crate::mesh::TriangleMesh;
use crate::{is_class, ClassId, Error, Result, MAX_CLASSES, UNLABELED};

pub const DEFAULT_LABEL_PROPERTY: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { ty: ScalarType, name: String },
    List { count: ScalarType, item: ScalarType, name: String },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Parsed numeric value. Integers are kept exact, floats as f64.
#[derive(Debug, Clone, Copy)]
enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    fn as_f64(self) -> f64 {
        match self {
            Value::Int(i) => i as f64,
            Value::Float(f) => f,
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| parse_err(line_start, "header is not terminated by end_header"))?;
        pos = end + 1;
        let line = std::str::from_utf8(&data[line_start..end])
            .map_err(|_| parse_err(line_start, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if first {
            if keyword != "ply" {
                return Err(parse_err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match keyword {
            "format" => {
                let f = match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(line_start, format!("unsupported format '{other}'")))
                    }
                    None => return Err(parse_err(line_start, "format line without a format")),
                };
                format = Some(f);
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| parse_err(line_start, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_start, "element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_start, "property before any element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| parse_err(line_start, "property without a type"))?;
                let prop = if ty == "list" {
                    let count = words.next().and_then(ScalarType::parse);
                    let item = words.next().and_then(ScalarType::parse);
                    let name = words.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) if !count.is_float() => {
                            Property::List {
                                count,
                                item,
                                name: name.to_string(),
                            }
                        }
                        _ => return Err(parse_err(line_start, "malformed list property")),
                    }
                } else {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| parse_err(line_start, format!("unknown type '{ty}'")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| parse_err(line_start, "property without a name"))?;
                    Property::Scalar {
                        ty,
                        name: name.to_string(),
                    }
                };
                element.properties.push(prop);
            }
            "end_header" => break,
            other => {
                return Err(parse_err(line_start, format!("unexpected header keyword '{other}'")))
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

/// Sequential reader over the body in either encoding.
struct BodyReader<'a> {
    data: &'a [u8],
    pos: usize,
    format: PlyFormat,
}

impl BodyReader<'_> {
    fn read(&mut self, ty: ScalarType) -> Result<(Value, usize)> {
        match self.format {
            PlyFormat::Ascii => self.read_ascii(ty),
            PlyFormat::BinaryLittleEndian => self.read_binary(ty),
        }
    }

    fn read_ascii(&mut self, ty: ScalarType) -> Result<(Value, usize)> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "unexpected end of data"));
        }
        let token = std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| parse_err(start, "non-UTF-8 token"))?;
        let value = if ty.is_float() {
            token
                .parse::<f64>()
                .map(Value::Float)
                .map_err(|_| parse_err(start, format!("invalid number '{token}'")))?
        } else {
            token
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| parse_err(start, format!("invalid integer '{token}'")))?
        };
        Ok((value, start))
    }

    fn read_binary(&mut self, ty: ScalarType) -> Result<(Value, usize)> {
        let start = self.pos;
        let n = ty.size();
        let bytes = self
            .data
            .get(start..start + n)
            .ok_or_else(|| parse_err(start, "unexpected end of data"))?;
        self.pos += n;
        let v = match ty {
            ScalarType::I8 => Value::Int(bytes[0] as i8 as i64),
            ScalarType::U8 => Value::Int(bytes[0] as i64),
            ScalarType::I16 => Value::Int(i16::from_le_bytes([bytes[0], bytes[1]]) as i64),
            ScalarType::U16 => Value::Int(u16::from_le_bytes([bytes[0], bytes[1]]) as i64),
            ScalarType::I32 => Value::Int(i32::from_le_bytes(bytes.try_into().unwrap()) as i64),
            ScalarType::U32 => Value::Int(u32::from_le_bytes(bytes.try_into().unwrap()) as i64),
            ScalarType::F32 => Value::Float(f32::from_le_bytes(bytes.try_into().unwrap()) as f64),
            ScalarType::F64 => Value::Float(f64::from_le_bytes(bytes.try_into().unwrap())),
        };
        Ok((v, start))
    }
}

/// Loads a PLY triangle mesh. Labels come from the integer vertex property
/// `label_property`; a missing property leaves every vertex UNLABELED and
/// negative values also map to UNLABELED. The class count is set to the
/// largest label plus one.
pub fn load_mesh(path: impl AsRef<Path>, label_property: &str) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&data, label_property)
}

/// Parses PLY bytes; see [`load_mesh`].
pub fn parse_mesh(data: &[u8], label_property: &str) -> Result<TriangleMesh> {
    let header = parse_header(data)?;
    let mut reader = BodyReader {
        data,
        pos: header.body_start,
        format: header.format,
    };

    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut faces = Vec::new();
    let mut saw_vertex = false;

    for element in &header.elements {
        match element.name.as_str() {
            "vertex" => {
                saw_vertex = true;
                let find = |n: &str| element.properties.iter().position(|p| p.name() == n);
                let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(header.body_start, "vertex element lacks x/y/z")),
                };
                let rgb = [find("red"), find("green"), find("blue")];
                let ilabel = find(label_property);
                let mut row = vec![Value::Int(0); element.properties.len()];
                let mut color_float = [false; 3];
                for (c, idx) in rgb.iter().enumerate() {
                    if let Some(Property::Scalar { ty, .. }) = idx.map(|i| &element.properties[i]) {
                        color_float[c] = ty.is_float();
                    }
                }
                positions.reserve(element.count);
                for _ in 0..element.count {
                    let mut label_offset = 0;
                    for (pi, prop) in element.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                let (v, off) = reader.read(*ty)?;
                                if Some(pi) == ilabel {
                                    label_offset = off;
                                }
                                row[pi] = v;
                            }
                            Property::List { count, item, .. } => {
                                skip_list(&mut reader, *count, *item)?;
                            }
                        }
                    }
                    positions.push(Point3::new(
                        row[ix].as_f64() as f32,
                        row[iy].as_f64() as f32,
                        row[iz].as_f64() as f32,
                    ));
                    let mut color = [0.0f32; 3];
                    for c in 0..3 {
                        if let Some(i) = rgb[c] {
                            let v = row[i].as_f64();
                            color[c] = if color_float[c] { v as f32 } else { (v / 255.0) as f32 };
                        }
                    }
                    colors.push(color);
                    let label = match ilabel {
                        None => UNLABELED,
                        Some(i) => match row[i] {
                            Value::Int(l) if l < 0 => UNLABELED,
                            Value::Int(l) if (l as usize) < MAX_CLASSES => l as ClassId,
                            Value::Int(l) => {
                                return Err(parse_err(label_offset, format!("label {l} too large")))
                            }
                            Value::Float(_) => {
                                return Err(parse_err(
                                    label_offset,
                                    format!("label property '{label_property}' is not an integer"),
                                ))
                            }
                        },
                    };
                    labels.push(label);
                }
            }
            "face" => {
                let idx = element
                    .properties
                    .iter()
                    .position(|p| {
                        matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
                    })
                    .ok_or_else(|| parse_err(header.body_start, "face element lacks vertex_indices"))?;
                faces.reserve(element.count);
                for _ in 0..element.count {
                    for (pi, prop) in element.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                reader.read(*ty)?;
                            }
                            Property::List { count, item, .. } if pi == idx => {
                                let (n, off) = reader.read(*count)?;
                                let n = match n {
                                    Value::Int(n) => n,
                                    Value::Float(_) => unreachable!(),
                                };
                                if n != 3 {
                                    return Err(parse_err(
                                        off,
                                        format!("face with {n} vertices; only triangles are supported"),
                                    ));
                                }
                                let mut f = [0u32; 3];
                                for slot in &mut f {
                                    let (v, off) = reader.read(*item)?;
                                    match v {
                                        Value::Int(i) if (0..=u32::MAX as i64).contains(&i) => {
                                            *slot = i as u32
                                        }
                                        _ => return Err(parse_err(off, "invalid vertex index")),
                                    }
                                }
                                faces.push(f);
                            }
                            Property::List { count, item, .. } => {
                                skip_list(&mut reader, *count, *item)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..element.count {
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                reader.read(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                skip_list(&mut reader, *count, *item)?
                            }
                        }
                    }
                }
            }
        }
    }
    if !saw_vertex {
        return Err(parse_err(0, "no vertex element"));
    }

    let class_count = labels
        .iter()
        .filter(|&&l| is_class(l))
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(1);
    TriangleMesh::new(positions, colors, labels, faces, class_count)
}

fn skip_list(reader: &mut BodyReader<'_>, count: ScalarType, item: ScalarType) -> Result<()> {
    let (n, off) = reader.read(count)?;
    let n = match n {
        Value::Int(n) if n >= 0 => n as usize,
        _ => return Err(parse_err(off, "invalid list length")),
    };
    for _ in 0..n {
        reader.read(item)?;
    }
    Ok(())
}

/// Serializes a mesh: float x/y/z, uchar red/green/blue, int `label_property`
/// (sentinels written as -1) and a uchar/uint triangle index list.
pub fn write_mesh_bytes(mesh: &TriangleMesh, label_property: &str, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let header = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty int {label_property}\n\
         element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    );
    out.extend_from_slice(header.as_bytes());
    let to_u8 = |c: f32| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    let label_i32 = |l: ClassId| if is_class(l) { l as i32 } else { -1 };
    for v in 0..mesh.vertex_count() {
        let p = mesh.positions[v];
        let c = mesh.colors[v].map(to_u8);
        let l = label_i32(mesh.labels[v]);
        match format {
            PlyFormat::Ascii => {
                writeln!(out, "{} {} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2], l).unwrap();
            }
            PlyFormat::BinaryLittleEndian => {
                for k in 0..3 {
                    out.extend_from_slice(&p[k].to_le_bytes());
                }
                out.extend_from_slice(&c);
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    for f in &mesh.faces {
        match format {
            PlyFormat::Ascii => writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap(),
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save_mesh(
    mesh: &TriangleMesh,
    path: impl AsRef<Path>,
    label_property: &str,
    format: PlyFormat,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_mesh_bytes(mesh, label_property, format)).map_err(|e| Error::io(path, e))
}
