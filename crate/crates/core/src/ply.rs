//! Binary little-endian PLY export and import of Gaussian clouds.
//!
//! Properties use the usual splatting names (`x y z`, `scale_0..2`,
//! `rot_0..3`, `opacity`, `f_dc_0..2`) stored as `double` so a round trip is
//! bit-exact, plus an `object_index` column. Partition identifiers and
//! translations travel in header comments of the form
//! `comment object <index> <tx> <ty> <tz> <id>`.

use std::path::Path;

use crate::cloud::{GaussianCloud, ObjectSlot};
use crate::error::{Error, Result};

const FLOAT_PROPS: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "f_dc_0", "f_dc_1",
    "f_dc_2",
];
const INDEX_PROP: &str = "object_index";
const MAX_HEADER_BYTES: usize = 1 << 20;

pub fn encode_ply(cloud: &GaussianCloud, object_filter: Option<&str>) -> Result<Vec<u8>> {
    let owned;
    let cloud = match object_filter {
        Some(id) => {
            owned = cloud.extract_object_by_id(id)?;
            &owned
        }
        None => cloud,
    };
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for (k, slot) in cloud.objects.iter().enumerate() {
        let [tx, ty, tz] = slot.translation;
        header.push_str(&format!("comment object {k} {tx} {ty} {tz} {}\n", slot.id));
    }
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in FLOAT_PROPS {
        header.push_str(&format!("property double {name}\n"));
    }
    header.push_str(&format!("property uint {INDEX_PROP}\nend_header\n"));

    let mut out = header.into_bytes();
    out.reserve(cloud.len() * (FLOAT_PROPS.len() * 8 + 4));
    for (k, slot) in cloud.objects.iter().enumerate() {
        for i in slot.range.clone() {
            let row = cloud.means[i]
                .iter()
                .chain(&cloud.log_scales[i])
                .chain(&cloud.rotations[i])
                .chain(std::iter::once(&cloud.opacity_logits[i]))
                .chain(&cloud.colors[i]);
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(k as u32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn export_ply(cloud: &GaussianCloud, object_filter: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ply(cloud, object_filter)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn import_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_ply(&bytes)
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

    fn read(self, b: &[u8]) -> f64 {
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

struct Header {
    vertex_count: usize,
    props: Vec<(String, Scalar, usize)>,
    stride: usize,
    objects: Vec<(usize, [f64; 3], String)>,
    body_offset: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Ply(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header\n";
    let limit = bytes.len().min(MAX_HEADER_BYTES);
    let end = bytes[..limit]
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut format_seen = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Scalar, usize)> = Vec::new();
    let mut stride = 0usize;
    let mut objects = Vec::new();
    for line in lines {
        let mut words = line.split_whitespace();
        match words.next() {
            None => {}
            Some("format") => {
                if words.next() != Some("binary_little_endian") || words.next() != Some("1.0") {
                    return Err(bad("only binary_little_endian 1.0 is supported"));
                }
                format_seen = true;
            }
            Some("comment") => {
                if words.next() == Some("object") {
                    objects.push(parse_object_comment(line)?);
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| bad("element without name"))?;
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("element without valid count"))?;
                if name != "vertex" || vertex_count.is_some() {
                    return Err(bad(format!("unsupported element `{name}`")));
                }
                vertex_count = Some(count);
                in_vertex = true;
            }
            Some("property") => {
                if !in_vertex {
                    return Err(bad("property outside vertex element"));
                }
                let ty = words.next().ok_or_else(|| bad("property without type"))?;
                if ty == "list" {
                    return Err(bad("list properties are not supported"));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type `{ty}`")))?;
                let name = words.next().ok_or_else(|| bad("property without name"))?;
                if props.iter().any(|(n, _, _)| n == name) {
                    return Err(bad(format!("duplicate property `{name}`")));
                }
                props.push((name.to_string(), scalar, stride));
                stride += scalar.size();
            }
            Some(other) => return Err(bad(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(bad("missing format line"));
    }
    let vertex_count = vertex_count.ok_or_else(|| bad("missing vertex element"))?;
    Ok(Header {
        vertex_count,
        props,
        stride,
        objects,
        body_offset: end + END.len(),
    })
}

fn parse_object_comment(line: &str) -> Result<(usize, [f64; 3], String)> {
    let rest = line.trim_start().strip_prefix("comment object").unwrap_or("").trim_start();
    let mut parts = rest.splitn(5, ' ');
    let mut next = || parts.next().ok_or_else(|| bad("truncated object comment"));
    let index: usize = next()?.parse().map_err(|_| bad("bad object index in comment"))?;
    let mut t = [0.0f64; 3];
    for v in &mut t {
        *v = next()?.parse().map_err(|_| bad("bad translation in comment"))?;
        if !v.is_finite() {
            return Err(bad("non-finite translation in comment"));
        }
    }
    let id = next()?.to_string();
    if id.is_empty() {
        return Err(bad("empty object id in comment"));
    }
    Ok((index, t, id))
}

/// Decodes a PLY produced by [`encode_ply`] or any binary little-endian
/// splatting PLY carrying the standard property names.
pub fn decode_ply(bytes: &[u8]) -> Result<GaussianCloud> {
    let header = parse_header(bytes)?;
    let find = |name: &str| header.props.iter().find(|(n, _, _)| n == name).map(|&(_, s, o)| (s, o));
    let columns: Vec<(Scalar, usize)> = FLOAT_PROPS
        .iter()
        .map(|n| find(n).ok_or_else(|| bad(format!("missing property `{n}`"))))
        .collect::<Result<_>>()?;
    let index_col = find(INDEX_PROP);

    let n = header.vertex_count;
    let body_len = n.checked_mul(header.stride).ok_or_else(|| bad("vertex count overflows"))?;
    let body = &bytes[header.body_offset..];
    if body.len() < body_len {
        return Err(bad(format!("expected {body_len} body bytes, found {}", body.len())));
    }

    let mut cloud = GaussianCloud {
        means: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        objects: Vec::new(),
    };
    let mut indices = Vec::with_capacity(n);
    for row in body[..body_len].chunks_exact(header.stride.max(1)).take(n) {
        let v: Vec<f64> = columns.iter().map(|&(s, o)| s.read(&row[o..])).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite vertex property"));
        }
        let mut q = [v[6], v[7], v[8], v[9]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(bad("rotation quaternion has zero or non-finite norm"));
        }
        // Other writers store unnormalized rotations.
        if (norm - 1.0).abs() > 1e-9 {
            q = q.map(|c| c / norm);
        }
        cloud.means.push([v[0], v[1], v[2]]);
        cloud.log_scales.push([v[3], v[4], v[5]]);
        cloud.rotations.push(q);
        cloud.opacity_logits.push(v[10]);
        cloud.colors.push([v[11], v[12], v[13]]);
        let idx = match index_col {
            Some((s, o)) => {
                let x = s.read(&row[o..]);
                if !(x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64) {
                    return Err(bad("object_index must be a non-negative integer"));
                }
                x as usize
            }
            None => 0,
        };
        indices.push(idx);
    }
    if header.stride == 0 && n > 0 {
        return Err(bad("vertex element has no properties"));
    }

    let n_objects = if header.objects.is_empty() {
        indices.iter().max().map_or(0, |m| m + 1)
    } else {
        header.objects.len()
    };
    for (k, (idx, _, _)) in header.objects.iter().enumerate() {
        if *idx != k {
            return Err(bad("object comments must be numbered 0, 1, 2, ..."));
        }
    }
    let mut start = 0;
    for k in 0..n_objects {
        let len = indices[start..].iter().take_while(|&&i| i == k).count();
        let (translation, id) = match header.objects.get(k) {
            Some((_, t, id)) => (*t, id.clone()),
            None => ([0.0; 3], format!("object_{k}")),
        };
        cloud.objects.push(ObjectSlot {
            id,
            range: start..start + len,
            translation,
        });
        start += len;
    }
    if start != n {
        return Err(bad("object_index column is not contiguous and ascending"));
    }
    if n_objects == 0 && n > 0 {
        return Err(bad("vertices without an object"));
    }
    Ok(cloud)
}
