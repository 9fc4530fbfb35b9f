use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::scene::{GaussianScene, SH_REST_LEN};
use crate::error::{Error, Result};

/// Stored opacity logits are clamped to `±OPACITY_LOGIT_LIMIT` so that
/// opacities of exactly 0 or 1 survive a save.
pub const OPACITY_LOGIT_LIMIT: f64 = 16.0;

const SH_PER_CHANNEL: usize = SH_REST_LEN / 3;

#[derive(Debug, Clone, Copy)]
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

    fn read(self, b: &[u8]) -> f64 {
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

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|(_, t)| t.size()).sum()
    }
}

fn parse_header(reader: &mut impl BufRead) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(())
    };

    read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        read_line(&mut line)?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let fmt = tokens.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(Error::Format(format!(
                        "unsupported PLY format '{fmt}', expected binary_little_endian"
                    )));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tokens.next().unwrap_or("").to_string();
                let count = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line: {}", line.trim())))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let ty = tokens.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::Format("list properties are not supported".into()));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type '{ty}'")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::Format("property without a name".into()))?;
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?;
                element.properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::Format(format!("unexpected header keyword '{other}'")));
            }
        }
    }
    if !saw_format {
        return Err(Error::Format("missing format line".into()));
    }
    Ok(elements)
}

/// Reads a splat PLY. Opacities go through a sigmoid, scales through `exp`,
/// and quaternions are renormalized when their norm is off by at most 1e-3.
pub fn load_gaussian_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let elements = parse_header(&mut reader)?;

    let mut skip_bytes = 0usize;
    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        skip_bytes += el.count * el.stride();
    }
    let vertex = vertex.ok_or_else(|| Error::Format("no 'vertex' element".into()))?;
    if skip_bytes > 0 {
        std::io::copy(&mut (&mut reader).take(skip_bytes as u64), &mut std::io::sink())
            .map_err(|e| Error::io(path, e))?;
    }

    // byte offset and type of each property
    let mut offsets = Vec::with_capacity(vertex.properties.len());
    let mut off = 0;
    for (name, ty) in &vertex.properties {
        offsets.push((name.as_str(), off, *ty));
        off += ty.size();
    }
    let stride = off;
    let find = |name: &str| offsets.iter().find(|(n, _, _)| *n == name).map(|&(_, o, t)| (o, t));
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Format(format!("missing vertex property '{name}'")))
    };

    let pos = [require("x")?, require("y")?, require("z")?];
    let dc = [require("f_dc_0")?, require("f_dc_1")?, require("f_dc_2")?];
    let opacity = require("opacity")?;
    let scale = [require("scale_0")?, require("scale_1")?, require("scale_2")?];
    let rot = [require("rot_0")?, require("rot_1")?, require("rot_2")?, require("rot_3")?];
    let mut rest = Vec::new();
    while let Some(p) = find(&format!("f_rest_{}", rest.len())) {
        rest.push(p);
    }
    if rest.len() % 3 != 0 || rest.len() > SH_REST_LEN {
        return Err(Error::Format(format!(
            "unsupported number of f_rest properties: {}",
            rest.len()
        )));
    }
    let rest_per_channel = rest.len() / 3;

    let mut buf = vec![0u8; stride * vertex.count];
    reader.read_exact(&mut buf).map_err(|e| {
        Error::Format(format!("truncated vertex data in {}: {e}", path.display()))
    })?;

    let mut scene = GaussianScene::new();
    for i in 0..vertex.count {
        let row = &buf[i * stride..(i + 1) * stride];
        let get = |(o, t): (usize, ScalarType)| -> Result<f64> {
            let v = t.read(&row[o..]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Data(format!("non-finite value at vertex {i}")))
            }
        };
        let position = [get(pos[0])?, get(pos[1])?, get(pos[2])?];
        let sh_dc = [get(dc[0])?, get(dc[1])?, get(dc[2])?];
        let mut sh_rest = [0.0; SH_REST_LEN];
        for ch in 0..3 {
            for k in 0..rest_per_channel {
                sh_rest[ch * SH_PER_CHANNEL + k] = get(rest[ch * rest_per_channel + k])?;
            }
        }
        let logit = get(opacity)?;
        let log_scale = [get(scale[0])?, get(scale[1])?, get(scale[2])?];
        let mut q = [get(rot[0])?, get(rot[1])?, get(rot[2])?, get(rot[3])?];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::Data(format!(
                "vertex {i}: quaternion norm {norm} is not within 1e-3 of 1"
            )));
        }
        // Only renormalize when the stored value is not already unit length
        // at float32 precision, so that load/save is bit-stable.
        if (norm - 1.0).abs() > 1e-6 {
            q.iter_mut().for_each(|v| *v /= norm);
        }
        scene.positions.push(position);
        scene.rotations.push(q);
        scene.scales.push(log_scale.map(f64::exp));
        scene.opacities.push(sigmoid(logit));
        scene.sh_dc.push(sh_dc);
        scene.sh_rest.push(sh_rest);
    }
    Ok(scene)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p))
        .ln()
        .clamp(-OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT)
}

/// Writes `scene` as a binary little-endian splat PLY with all 45 `f_rest`
/// coefficients.
pub fn save_gaussian_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    scene.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..SH_REST_LEN).map(|k| format!("f_rest_{k}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let mut row = Vec::with_capacity(names.len());
    for i in 0..scene.len() {
        row.clear();
        row.extend_from_slice(&scene.positions[i]);
        row.extend_from_slice(&[0.0, 0.0, 0.0]);
        row.extend_from_slice(&scene.sh_dc[i]);
        row.extend_from_slice(&scene.sh_rest[i]);
        row.push(logit(scene.opacities[i]));
        row.extend(scene.scales[i].iter().map(|s| s.ln()));
        row.extend_from_slice(&scene.rotations[i]);
        for &v in &row {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}
