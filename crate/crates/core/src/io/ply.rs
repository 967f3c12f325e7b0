//! PLY point cloud reader/writer (ASCII and binary little-endian).
//!
//! Only the `vertex` element is interpreted: `x`, `y`, `z` are required, `red`/`green`/
//! `blue`, `label` and `instance_id` are optional. Other properties and elements are
//! skipped.

use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const FMT: &str = "PLY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::format(FMT, format!("unknown property type {other:?}"))),
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &data[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(FMT, "unterminated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim_end_matches('\r'))
            .map_err(|_| Error::format(FMT, "header is not UTF-8"))
    };
    if next_line()?.trim() != "ply" {
        return Err(Error::format(FMT, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _version] => {
                encoding = Some(match *kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(Error::format(FMT, format!("unsupported encoding {other:?}")))
                    }
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format(FMT, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format(FMT, "property before element"))?
                .props
                .push(Property::List(
                    name.to_string(),
                    Scalar::parse(count_ty)?,
                    Scalar::parse(item_ty)?,
                )),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::format(FMT, "property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(Error::format(FMT, format!("unexpected header line {line:?}"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::format(FMT, "missing format line"))?,
        elements,
        body_offset: pos,
    })
}

/// Column positions of the recognised vertex properties.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    label: Option<usize>,
    instance: Option<usize>,
}

impl VertexLayout {
    fn new(el: &Element) -> Result<Self> {
        let find = |name: &str| el.props.iter().position(|p| p.name() == name);
        let xyz = [find("x"), find("y"), find("z")];
        let [Some(x), Some(y), Some(z)] = xyz else {
            return Err(Error::format(FMT, "vertex element needs x, y and z"));
        };
        let rgb = match [find("red"), find("green"), find("blue")] {
            [Some(r), Some(g), Some(b)] => Some([r, g, b]),
            _ => None,
        };
        for &i in [Some(x), Some(y), Some(z), rgb.map(|c| c[0]), find("label"), find("instance_id")]
            .iter()
            .flatten()
        {
            if matches!(el.props[i], Property::List(..)) {
                return Err(Error::format(FMT, "list-typed vertex attribute"));
            }
        }
        Ok(Self {
            xyz: [x, y, z],
            rgb,
            label: find("label"),
            instance: find("instance_id"),
        })
    }
}

#[derive(Default)]
struct Columns {
    positions: Vec<[f64; 3]>,
    colors: Vec<[u8; 3]>,
    labels: Vec<u32>,
    instances: Vec<u32>,
}

impl Columns {
    fn push(&mut self, layout: &VertexLayout, row: &[f64]) -> Result<()> {
        self.positions.push(layout.xyz.map(|i| row[i]));
        if let Some(rgb) = layout.rgb {
            self.colors.push(rgb.map(|i| row[i].clamp(0.0, 255.0) as u8));
        }
        let as_label = |v: f64| -> Result<u32> {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::format(FMT, format!("invalid label value {v}")));
            }
            Ok(v as u32)
        };
        if let Some(i) = layout.label {
            self.labels.push(as_label(row[i])?);
        }
        if let Some(i) = layout.instance {
            self.instances.push(as_label(row[i])?);
        }
        Ok(())
    }

    fn into_cloud(self, layout: &VertexLayout) -> Result<PointCloud> {
        let mut cloud = PointCloud::new(self.positions)?;
        if layout.rgb.is_some() {
            cloud = cloud.with_colors(self.colors)?;
        }
        if layout.label.is_some() {
            cloud = cloud.with_semantic_labels(self.labels)?;
        }
        if layout.instance.is_some() {
            cloud = cloud.with_instance_labels(self.instances)?;
        }
        Ok(cloud)
    }
}

pub fn parse_ply(data: &[u8]) -> Result<PointCloud> {
    let header = parse_header(data)?;
    let body = &data[header.body_offset..];
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(FMT, "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    let layout = VertexLayout::new(vertex)?;
    let mut cols = Columns::default();
    let mut row = vec![0.0; vertex.props.len()];

    match header.encoding {
        PlyEncoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::format(FMT, "body is not UTF-8"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for el in &header.elements[..vertex_pos] {
                for _ in 0..el.count {
                    lines.next().ok_or_else(|| Error::format(FMT, "truncated body"))?;
                }
            }
            for n in 0..vertex.count {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::format(FMT, format!("expected {} vertices, got {n}", vertex.count)))?;
                let mut tok = line.split_whitespace();
                for (slot, prop) in row.iter_mut().zip(&vertex.props) {
                    let mut parse = || -> Result<f64> {
                        tok.next()
                            .ok_or_else(|| Error::format(FMT, format!("short vertex line {n}")))?
                            .parse::<f64>()
                            .map_err(|e| Error::format(FMT, format!("vertex {n}: {e}")))
                    };
                    *slot = match prop {
                        Property::Scalar(_, Scalar::F32) => parse()? as f32 as f64,
                        Property::Scalar(..) => parse()?,
                        Property::List(..) => {
                            let count = parse()? as usize;
                            for _ in 0..count {
                                parse()?;
                            }
                            0.0
                        }
                    };
                }
                cols.push(&layout, &row)?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut pos = 0usize;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = body
                    .get(*pos..*pos + n)
                    .ok_or_else(|| Error::format(FMT, "truncated binary body"))?;
                *pos += n;
                Ok(s)
            };
            let read_row = |pos: &mut usize, props: &[Property], row: Option<&mut [f64]>| -> Result<()> {
                let mut row = row;
                for (k, prop) in props.iter().enumerate() {
                    let v = match prop {
                        Property::Scalar(_, ty) => ty.read_le(take(pos, ty.size())?),
                        Property::List(_, count_ty, item_ty) => {
                            let count = count_ty.read_le(take(pos, count_ty.size())?) as usize;
                            take(pos, count * item_ty.size())?;
                            0.0
                        }
                    };
                    if let Some(r) = row.as_deref_mut() {
                        r[k] = v;
                    }
                }
                Ok(())
            };
            for el in &header.elements[..vertex_pos] {
                for _ in 0..el.count {
                    read_row(&mut pos, &el.props, None)?;
                }
            }
            for _ in 0..vertex.count {
                read_row(&mut pos, &vertex.props, Some(&mut row))?;
                cols.push(&layout, &row)?;
            }
        }
    }
    cols.into_cloud(&layout)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    parse_ply(&data).map_err(|e| e.at(path))
}

pub fn write_ply_to(mut w: impl Write, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.colors().is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.semantic_labels().is_some() {
        writeln!(w, "property int label")?;
    }
    if cloud.instance_labels().is_some() {
        writeln!(w, "property int instance_id")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.positions()[i].map(|c| c as f32);
        let rgb = cloud.colors().map(|c| c[i]);
        let label = cloud.semantic_labels().map(|l| l[i] as i32);
        let inst = cloud.instance_labels().map(|l| l[i] as i32);
        match encoding {
            PlyEncoding::Ascii => {
                write!(w, "{} {} {}", p[0], p[1], p[2])?;
                if let Some(c) = rgb {
                    write!(w, " {} {} {}", c[0], c[1], c[2])?;
                }
                for v in [label, inst].into_iter().flatten() {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for c in p {
                    w.write_f32::<LittleEndian>(c)?;
                }
                if let Some(c) = rgb {
                    w.write_all(&c)?;
                }
                for v in [label, inst].into_iter().flatten() {
                    w.write_i32::<LittleEndian>(v)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
    write_ply_to(BufWriter::new(f), cloud, encoding).map_err(|e| e.at(path))
}
