//! PLY meshes and point clouds, ascii or binary (either endianness) on
//! input, binary little-endian or ascii on output.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geom::{ColoredPointCloud, OrganizedCloud, TriangleMesh, Vec3};

fn malformed(msg: impl Into<String>) -> Error {
    Error::format("PLY", msg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
            _ => return Err(malformed(format!("unknown property type `{s}`"))),
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().expect("sized slice");
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct ElementDecl {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Decoded contents of one element: scalar columns and list columns.
#[derive(Clone, Debug, Default)]
pub struct PlyElement {
    pub count: usize,
    pub scalars: HashMap<String, Vec<f64>>,
    pub lists: HashMap<String, Vec<Vec<f64>>>,
}

/// A parsed PLY file.
#[derive(Clone, Debug, Default)]
pub struct PlyData {
    pub elements: HashMap<String, PlyElement>,
    pub comments: Vec<String>,
    pub obj_info: Vec<String>,
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(malformed("unexpected end of header"));
    }
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

fn parse_count(s: Option<&str>) -> Result<usize> {
    s.and_then(|v| v.parse().ok()).ok_or_else(|| malformed("bad element count"))
}

/// Parses a PLY stream.
pub fn read_ply(mut r: impl BufRead) -> Result<PlyData> {
    if read_line(&mut r)? != "ply" {
        return Err(malformed("missing `ply` magic"));
    }
    let mut encoding = None;
    let mut decls: Vec<ElementDecl> = Vec::new();
    let mut data = PlyData::default();
    loop {
        let line = read_line(&mut r)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some("binary_big_endian") => PlyEncoding::BinaryBigEndian,
                    other => return Err(malformed(format!("unknown format {other:?}"))),
                })
            }
            Some("comment") => data.comments.push(line["comment".len()..].trim().to_string()),
            Some("obj_info") => data.obj_info.push(line["obj_info".len()..].trim().to_string()),
            Some("element") => {
                let name = tok.next().ok_or_else(|| malformed("element without name"))?;
                decls.push(ElementDecl {
                    name: name.to_string(),
                    count: parse_count(tok.next())?,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let decl = decls.last_mut().ok_or_else(|| malformed("property before element"))?;
                let kind = tok.next().ok_or_else(|| malformed("empty property"))?;
                let prop = if kind == "list" {
                    let c = Scalar::parse(tok.next().unwrap_or(""))?;
                    let i = Scalar::parse(tok.next().unwrap_or(""))?;
                    if matches!(c, Scalar::F32 | Scalar::F64) {
                        return Err(malformed("list count must be an integer type"));
                    }
                    Property::List(tok.next().ok_or_else(|| malformed("unnamed list"))?.to_string(), c, i)
                } else {
                    Property::Scalar(
                        tok.next().ok_or_else(|| malformed("unnamed property"))?.to_string(),
                        Scalar::parse(kind)?,
                    )
                };
                decl.props.push(prop);
            }
            Some("end_header") => break,
            None => {}
            Some(other) => return Err(malformed(format!("unexpected header keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| malformed("missing format line"))?;
    match encoding {
        PlyEncoding::Ascii => read_ascii_body(r, &decls, &mut data)?,
        PlyEncoding::BinaryLittleEndian => read_binary_body(r, &decls, true, &mut data)?,
        PlyEncoding::BinaryBigEndian => read_binary_body(r, &decls, false, &mut data)?,
    }
    Ok(data)
}

fn new_element(decl: &ElementDecl) -> PlyElement {
    let mut el = PlyElement {
        count: decl.count,
        ..Default::default()
    };
    for p in &decl.props {
        match p {
            Property::Scalar(n, _) => {
                el.scalars.insert(n.clone(), Vec::with_capacity(decl.count));
            }
            Property::List(n, _, _) => {
                el.lists.insert(n.clone(), Vec::with_capacity(decl.count));
            }
        }
    }
    el
}

fn read_ascii_body(r: impl BufRead, decls: &[ElementDecl], data: &mut PlyData) -> Result<()> {
    let mut lines = r.lines();
    for decl in decls {
        let mut el = new_element(decl);
        for row in 0..decl.count {
            let line = lines
                .next()
                .ok_or_else(|| malformed(format!("{} row {row} missing", decl.name)))??;
            let mut vals = line.split_whitespace().map(|t| {
                t.parse::<f64>()
                    .map_err(|_| malformed(format!("bad number `{t}` in {} row {row}", decl.name)))
            });
            let mut next = || vals.next().unwrap_or_else(|| Err(malformed(format!("{} row {row} too short", decl.name))));
            for p in &decl.props {
                match p {
                    Property::Scalar(n, _) => {
                        let v = next()?;
                        el.scalars.get_mut(n).expect("declared").push(v);
                    }
                    Property::List(n, _, _) => {
                        let c = next()?;
                        if c < 0.0 || c.fract() != 0.0 {
                            return Err(malformed("bad list length"));
                        }
                        let items = (0..c as usize).map(|_| next()).collect::<Result<Vec<_>>>()?;
                        el.lists.get_mut(n).expect("declared").push(items);
                    }
                }
            }
        }
        data.elements.insert(decl.name.clone(), el);
    }
    Ok(())
}

fn read_binary_body(mut r: impl Read, decls: &[ElementDecl], little: bool, data: &mut PlyData) -> Result<()> {
    let mut buf = [0u8; 8];
    let mut read_scalar = |r: &mut dyn Read, s: Scalar| -> Result<f64> {
        r.read_exact(&mut buf[..s.size()])
            .map_err(|_| malformed("binary body truncated"))?;
        Ok(s.decode(&buf, little))
    };
    for decl in decls {
        let mut el = new_element(decl);
        for _ in 0..decl.count {
            for p in &decl.props {
                match p {
                    Property::Scalar(n, s) => {
                        let v = read_scalar(&mut r, *s)?;
                        el.scalars.get_mut(n).expect("declared").push(v);
                    }
                    Property::List(n, c, s) => {
                        let len = read_scalar(&mut r, *c)?;
                        if len < 0.0 {
                            return Err(malformed("negative list length"));
                        }
                        let items = (0..len as usize)
                            .map(|_| read_scalar(&mut r, *s))
                            .collect::<Result<Vec<_>>>()?;
                        el.lists.get_mut(n).expect("declared").push(items);
                    }
                }
            }
        }
        data.elements.insert(decl.name.clone(), el);
    }
    Ok(())
}

impl PlyElement {
    fn column(&self, name: &str) -> Option<&Vec<f64>> {
        self.scalars.get(name)
    }

    fn triples(&self, names: [&str; 3]) -> Option<Vec<Vec3>> {
        let [a, b, c] = names.map(|n| self.column(n));
        let (a, b, c) = (a?, b?, c?);
        Some((0..self.count).map(|i| Vec3::new(a[i], b[i], c[i])).collect())
    }

    fn colors(&self) -> Option<Vec<Vec3>> {
        if let Some(c) = self.triples(["red", "green", "blue"]) {
            return Some(c.into_iter().map(|v| v / 255.0).collect());
        }
        self.triples(["r", "g", "b"])
    }
}

/// Positions, normals and colors.
type VertexAttributes = (Vec<Vec3>, Option<Vec<Vec3>>, Option<Vec<Vec3>>);

fn vertex_attributes(data: &PlyData) -> Result<VertexAttributes> {
    let v = data.elements.get("vertex").ok_or_else(|| malformed("no vertex element"))?;
    let pos = v.triples(["x", "y", "z"]).ok_or_else(|| malformed("vertex lacks x/y/z"))?;
    Ok((pos, v.triples(["nx", "ny", "nz"]), v.colors()))
}

/// Mesh from parsed PLY data. Polygons with more than three corners are fanned.
pub fn mesh_from_ply(data: &PlyData) -> Result<TriangleMesh> {
    let (vertices, normals, colors) = vertex_attributes(data)?;
    let mut faces = Vec::new();
    if let Some(f) = data.elements.get("face") {
        let lists = f
            .lists
            .get("vertex_indices")
            .or_else(|| f.lists.get("vertex_index"))
            .ok_or_else(|| malformed("face element lacks vertex_indices"))?;
        for poly in lists {
            if poly.len() < 3 || poly.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err(malformed("bad face index list"));
            }
            for k in 1..poly.len() - 1 {
                faces.push([poly[0] as usize, poly[k] as usize, poly[k + 1] as usize]);
            }
        }
    }
    TriangleMesh::new(vertices, faces, colors, normals, true).map_err(|e| malformed(e.to_string()))
}

/// Unorganized cloud from parsed PLY data.
pub fn cloud_from_ply(data: &PlyData) -> Result<ColoredPointCloud> {
    let (positions, normals, colors) = vertex_attributes(data)?;
    ColoredPointCloud::new(positions, normals, colors).map_err(|e| malformed(e.to_string()))
}

const ORGANIZED_TAG: &str = "organized";

/// Organized cloud; needs an `obj_info organized <width> <height>` header line.
pub fn organized_from_ply(data: &PlyData) -> Result<OrganizedCloud> {
    let dims = data
        .obj_info
        .iter()
        .find_map(|s| {
            let mut t = s.split_whitespace();
            (t.next() == Some(ORGANIZED_TAG)).then(|| {
                let w = t.next()?.parse::<usize>().ok()?;
                let h = t.next()?.parse::<usize>().ok()?;
                Some((w, h))
            })?
        })
        .ok_or_else(|| malformed("cloud is not organized"))?;
    let (positions, normals, colors) = vertex_attributes(data)?;
    let n = dims.0 * dims.1;
    if positions.len() != n {
        return Err(malformed(format!("organized cloud has {} points, expected {n}", positions.len())));
    }
    Ok(OrganizedCloud {
        width: dims.0,
        height: dims.1,
        positions,
        normals: normals.unwrap_or_else(|| vec![Vec3::zeros(); n]),
        colors: colors.unwrap_or_else(|| vec![Vec3::zeros(); n]),
    })
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct VertexBlock<'a> {
    positions: &'a [Vec3],
    normals: Option<&'a [Vec3]>,
    colors: Option<&'a [Vec3]>,
}

fn write_ply(
    w: &mut impl Write,
    enc: PlyEncoding,
    obj_info: Option<String>,
    v: VertexBlock,
    faces: Option<&[[usize; 3]]>,
) -> Result<()> {
    let format = match enc {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        PlyEncoding::BinaryBigEndian => return Err(Error::InvalidInput("big-endian output is not supported".into())),
    };
    writeln!(w, "ply\nformat {format} 1.0")?;
    if let Some(info) = obj_info {
        writeln!(w, "obj_info {info}")?;
    }
    writeln!(w, "element vertex {}", v.positions.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if v.normals.is_some() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    if v.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if let Some(f) = faces {
        writeln!(w, "element face {}\nproperty list uchar int vertex_indices", f.len())?;
    }
    writeln!(w, "end_header")?;
    let ascii = enc == PlyEncoding::Ascii;
    for i in 0..v.positions.len() {
        let mut vals: Vec<f64> = v.positions[i].iter().copied().collect();
        if let Some(n) = v.normals {
            vals.extend(n[i].iter());
        }
        if ascii {
            let mut parts: Vec<String> = vals.iter().map(|x| x.to_string()).collect();
            if let Some(c) = v.colors {
                parts.extend(c[i].iter().map(|&x| to_u8(x).to_string()));
            }
            writeln!(w, "{}", parts.join(" "))?;
        } else {
            for x in vals {
                w.write_all(&x.to_le_bytes())?;
            }
            if let Some(c) = v.colors {
                w.write_all(c[i].map(to_u8).as_slice())?;
            }
        }
    }
    for f in faces.unwrap_or(&[]) {
        let mut idx = [0i32; 3];
        for (d, &s) in idx.iter_mut().zip(f) {
            *d = i32::try_from(s).map_err(|_| Error::InvalidInput("vertex index exceeds i32".into()))?;
        }
        if ascii {
            writeln!(w, "3 {} {} {}", idx[0], idx[1], idx[2])?;
        } else {
            w.write_all(&[3u8])?;
            for i in idx {
                w.write_all(&i.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_mesh_ply(w: &mut impl Write, mesh: &TriangleMesh, enc: PlyEncoding) -> Result<()> {
    write_ply(
        w,
        enc,
        None,
        VertexBlock {
            positions: &mesh.vertices,
            normals: mesh.vertex_normals.as_deref(),
            colors: mesh.vertex_colors.as_deref(),
        },
        Some(&mesh.faces),
    )
}

pub fn write_cloud_ply(w: &mut impl Write, cloud: &ColoredPointCloud, enc: PlyEncoding) -> Result<()> {
    write_ply(
        w,
        enc,
        None,
        VertexBlock {
            positions: &cloud.positions,
            normals: cloud.normals.as_deref(),
            colors: cloud.colors.as_deref(),
        },
        None,
    )
}

pub fn write_organized_ply(w: &mut impl Write, cloud: &OrganizedCloud, enc: PlyEncoding) -> Result<()> {
    write_ply(
        w,
        enc,
        Some(format!("{ORGANIZED_TAG} {} {}", cloud.width, cloud.height)),
        VertexBlock {
            positions: &cloud.positions,
            normals: Some(&cloud.normals),
            colors: Some(&cloud.colors),
        },
        None,
    )
}
