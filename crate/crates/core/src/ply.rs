//! Binary little-endian splat PLY reading and writing.
//!
//! The writer always emits the reference 3DGS vertex layout (62 `float`
//! properties). The reader accepts any property order, ignores unknown
//! properties and zero-pads missing `f_rest_*` coefficients.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Quaternion;
use thiserror::Error;

use crate::scene::{CoordinateFrame, Gaussian, Scene, SH_REST_LEN};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported format `{0}`, expected binary_little_endian")]
    Format(String),
    #[error("no `vertex` element (found {0:?})")]
    MissingVertexElement(Vec<String>),
    #[error("missing required property `{0}`")]
    MissingProperty(String),
    #[error("unsupported property type `{ty}` for `{property}`")]
    PropertyType { property: String, ty: String },
    #[error("truncated payload while reading property `{property}` of vertex {vertex}")]
    Truncated { property: String, vertex: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Where a property's value lands in a [`Gaussian`].
#[derive(Debug, Clone, Copy)]
enum Slot {
    Center(usize),
    Dc(usize),
    Rest(usize),
    Opacity,
    Scale(usize),
    Rot(usize),
    Ignored,
}

fn slot_for(name: &str) -> Slot {
    let indexed = |prefix: &str, n: usize| {
        name.strip_prefix(prefix)
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|i| *i < n)
    };
    match name {
        "x" => Slot::Center(0),
        "y" => Slot::Center(1),
        "z" => Slot::Center(2),
        "opacity" => Slot::Opacity,
        _ => {
            if let Some(i) = indexed("f_dc_", 3) {
                Slot::Dc(i)
            } else if let Some(i) = indexed("f_rest_", SH_REST_LEN) {
                Slot::Rest(i)
            } else if let Some(i) = indexed("scale_", 3) {
                Slot::Scale(i)
            } else if let Some(i) = indexed("rot_", 4) {
                Slot::Rot(i)
            } else {
                Slot::Ignored
            }
        }
    }
}

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

struct Property {
    name: String,
    ty: ScalarType,
    slot: Slot,
}

struct Header {
    vertex_count: usize,
    properties: Vec<Property>,
    frame: CoordinateFrame,
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header, PlyError> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<(), PlyError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(PlyError::Header("unexpected end of header".into()));
        }
        Ok(())
    };

    next_line(reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::Header("missing `ply` magic".into()));
    }

    let mut frame = CoordinateFrame::default();
    let mut elements: Vec<String> = Vec::new();
    let mut vertex: Option<(usize, Vec<Property>)> = None;
    let mut in_vertex = false;
    let mut seen_format = false;
    loop {
        next_line(reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(PlyError::Format((*fmt).to_string()));
                }
                seen_format = true;
            }
            ["comment", "frame", tag] => {
                frame = CoordinateFrame::from_tag(tag).unwrap_or_default();
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("bad element count `{count}`")))?;
                elements.push((*name).to_string());
                if *name == "vertex" {
                    if !vertex.is_none() {
                        return Err(PlyError::Header("duplicate vertex element".into()));
                    }
                    if elements.len() > 1 {
                        return Err(PlyError::Header(
                            "vertex element must be the first element".into(),
                        ));
                    }
                    vertex = Some((count, Vec::new()));
                    in_vertex = true;
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(PlyError::PropertyType {
                    property: tokens.last().unwrap_or(&"?").to_string(),
                    ty: "list".into(),
                });
            }
            ["property", ty, name] => {
                if in_vertex {
                    let parsed = ScalarType::parse(ty).ok_or_else(|| PlyError::PropertyType {
                        property: (*name).to_string(),
                        ty: (*ty).to_string(),
                    })?;
                    if let Some((_, props)) = vertex.as_mut() {
                        props.push(Property {
                            name: (*name).to_string(),
                            ty: parsed,
                            slot: slot_for(name),
                        });
                    }
                }
            }
            ["property", ..] => {}
            _ => return Err(PlyError::Header(format!("unrecognized line `{}`", line.trim_end()))),
        }
    }
    if !seen_format {
        return Err(PlyError::Header("missing format line".into()));
    }
    let (vertex_count, properties) = vertex.ok_or(PlyError::MissingVertexElement(elements))?;
    for req in REQUIRED {
        if !properties.iter().any(|p| p.name == req) {
            return Err(PlyError::MissingProperty(req.to_string()));
        }
    }
    Ok(Header {
        vertex_count,
        properties,
        frame,
    })
}

/// Parses a splat PLY from an in-memory buffer.
pub fn load_ply(bytes: &[u8]) -> Result<Scene, PlyError> {
    read_ply(&mut std::io::BufReader::new(bytes))
}

pub fn read_ply<R: BufRead>(reader: &mut R) -> Result<Scene, PlyError> {
    let header = read_header(reader)?;
    let stride: usize = header.properties.iter().map(|p| p.ty.size()).sum();
    let mut record = vec![0u8; stride];
    let mut gaussians = Vec::with_capacity(header.vertex_count);

    for vertex in 0..header.vertex_count {
        let mut filled = 0;
        while filled < stride {
            let n = reader.read(&mut record[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        let mut g = Gaussian {
            rotation: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            ..Default::default()
        };
        let mut offset = 0;
        for prop in &header.properties {
            let size = prop.ty.size();
            if offset + size > filled {
                return Err(PlyError::Truncated {
                    property: prop.name.clone(),
                    vertex,
                });
            }
            let v = prop.ty.read_le(&record[offset..offset + size]);
            offset += size;
            match prop.slot {
                Slot::Center(i) => g.center[i] = v,
                Slot::Dc(i) => g.sh_dc[i] = v,
                Slot::Rest(i) => g.sh_rest[i] = v,
                Slot::Opacity => g.opacity_logit = v,
                Slot::Scale(i) => g.log_scale[i] = v,
                // rot_0 is w
                Slot::Rot(0) => g.rotation.coords[3] = v,
                Slot::Rot(i) => g.rotation.coords[i - 1] = v,
                Slot::Ignored => {}
            }
        }
        gaussians.push(g);
    }
    Ok(Scene {
        gaussians,
        frame: header.frame,
    })
}

/// Property names in the order the writer emits them.
pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..SH_REST_LEN).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn header_text(scene: &Scene) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("comment frame {}\n", scene.frame.tag()));
    h.push_str(&format!("element vertex {}\n", scene.len()));
    for name in property_names() {
        h.push_str(&format!("property float {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

fn vertex_values(g: &Gaussian) -> impl Iterator<Item = f64> + '_ {
    let q = &g.rotation;
    g.center
        .iter()
        .copied()
        .chain([0.0; 3])
        .chain(g.sh_dc.iter().copied())
        .chain(g.sh_rest.iter().copied())
        .chain(std::iter::once(g.opacity_logit))
        .chain(g.log_scale.iter().copied())
        .chain([q.w, q.i, q.j, q.k])
}

pub fn write_ply<W: Write>(scene: &Scene, w: &mut W) -> Result<(), PlyError> {
    w.write_all(header_text(scene).as_bytes())?;
    let mut buf = Vec::with_capacity(62 * 4);
    for g in &scene.gaussians {
        buf.clear();
        for v in vertex_values(g) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Serializes a scene; values are rounded to `f32`.
pub fn save_ply(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::with_capacity(1024 + scene.len() * 62 * 4);
    write_ply(scene, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<Scene, PlyError> {
    let file = std::fs::File::open(path)?;
    read_ply(&mut std::io::BufReader::new(file))
}

pub fn write_ply_file(scene: &Scene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Offset of the binary payload in a PLY buffer, if the header terminates.
pub fn payload_offset(bytes: &[u8]) -> Option<usize> {
    const END: &[u8] = b"end_header\n";
    bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
}
