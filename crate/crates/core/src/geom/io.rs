//! Text (and PNM) file formats: XYZ, ASCII PLY, OBJ, PGM.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{BinaryMask, PointCloud, TriangleMesh};
use crate::error::{Error, Result};

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: bad number {tok:?}")))
}

/// One `x y z` triple per line. Blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::Parse(format!("line {}: expected x y z", i + 1)));
        }
        pts.push(Point3::new(
            parse_f64(toks[0], i + 1)?,
            parse_f64(toks[1], i + 1)?,
            parse_f64(toks[2], i + 1)?,
        ));
    }
    PointCloud::new(pts).map_err(|e| Error::Parse(e.to_string()))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::Parse("missing ply magic".into())),
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    for (i, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::Parse(format!("unsupported ply format {fmt}")));
                }
            }
            ["element", "vertex", n] => {
                n_vertices = n.parse().map_err(|_| Error::Parse(format!("line {}: bad count", i + 1)))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = n.parse().map_err(|_| Error::Parse(format!("line {}: bad count", i + 1)))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let col = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parse(format!("ply vertex lacks property {name}")))
    };
    let (cx, cy, cz) = if n_vertices > 0 {
        (col("x")?, col("y")?, col("z")?)
    } else {
        (0, 1, 2)
    };
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (i, line) = body.next().ok_or_else(|| Error::Parse("truncated ply vertex list".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < vertex_props.len() {
            return Err(Error::Parse(format!("line {}: short vertex record", i + 1)));
        }
        vertices.push(Point3::new(
            parse_f64(toks[cx], i + 1)?,
            parse_f64(toks[cy], i + 1)?,
            parse_f64(toks[cz], i + 1)?,
        ));
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (i, line) = body.next().ok_or_else(|| Error::Parse("truncated ply face list".into()))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("line {}: bad index", i + 1))))
            .collect::<Result<_>>()?;
        if idx.is_empty() || idx[0] != idx.len() - 1 || idx[0] < 3 {
            return Err(Error::Parse(format!("line {}: bad face record", i + 1)));
        }
        // fan-triangulate polygons
        for k in 2..idx[0] {
            faces.push([idx[1], idx[k], idx[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::Parse(e.to_string()))
}

pub fn format_ply(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if !faces.is_empty() {
        let _ = writeln!(s, "element face {}", faces.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for p in vertices {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    for f in faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks.take(3).map(|t| parse_f64(t, i + 1)).collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::Parse(format!("line {}: short vertex", i + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let v: i64 = head
                            .parse()
                            .map_err(|_| Error::Parse(format!("line {}: bad face index", i + 1)))?;
                        let n = vertices.len() as i64;
                        let v = if v < 0 { n + v } else { v - 1 };
                        if v < 0 {
                            return Err(Error::Parse(format!("line {}: face index out of range", i + 1)));
                        }
                        Ok(v as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face needs 3 vertices", i + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::Parse(e.to_string()))
}

pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for p in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads XYZ (any extension other than .ply/.obj), PLY or OBJ vertices.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    match extension(path).as_str() {
        "ply" => PointCloud::new(parse_ply(&text)?.vertices),
        "obj" => PointCloud::new(parse_obj(&text)?.vertices),
        _ => parse_xyz(&text),
    }
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let text = match extension(path).as_str() {
        "ply" => format_ply(cloud.points(), &[]),
        _ => format_xyz(cloud),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    match extension(path).as_str() {
        "ply" => parse_ply(&text),
        "obj" => parse_obj(&text),
        other => Err(Error::Parse(format!("unknown mesh extension {other:?}"))),
    }
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let text = match extension(path).as_str() {
        "ply" => format_ply(&mesh.vertices, &mesh.faces),
        "obj" => format_obj(mesh),
        other => return Err(Error::Parse(format!("unknown mesh extension {other:?}"))),
    };
    fs::write(path, text)?;
    Ok(())
}

/// Parsed PNM header: magic number, width, height, maxval, byte offset of
/// the raster.
pub(crate) struct PnmHeader {
    pub magic: [u8; 2],
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    pub data_start: usize,
}

pub(crate) fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Parse("missing PNM magic".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("bad PNM header".into()))?;
    }
    // exactly one whitespace byte separates header and raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        if !(pos == bytes.len() && fields[0] * fields[1] == 0) {
            return Err(Error::Parse("bad PNM header terminator".into()));
        }
    }
    if fields[2] == 0 || fields[2] > 255 {
        return Err(Error::Parse(format!("unsupported PNM maxval {}", fields[2])));
    }
    Ok(PnmHeader {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_start: pos + 1,
    })
}

/// Reads the raster of a PNM as 8-bit samples scaled to 0..=255.
pub(crate) fn pnm_samples(bytes: &[u8], header: &PnmHeader, channels: usize, ascii: bool) -> Result<Vec<u8>> {
    let n = header.width * header.height * channels;
    let raw: Vec<usize> = if ascii {
        let text = std::str::from_utf8(bytes.get(header.data_start.min(bytes.len())..).unwrap_or(&[]))
            .map_err(|_| Error::Parse("non-ascii PNM body".into()))?;
        let vals: Vec<usize> = text
            .split_whitespace()
            .take(n)
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad PNM sample {t:?}"))))
            .collect::<Result<_>>()?;
        vals
    } else {
        let body = bytes.get(header.data_start..).unwrap_or(&[]);
        body.iter().take(n).map(|&b| b as usize).collect()
    };
    if raw.len() != n {
        return Err(Error::Parse(format!("PNM raster has {} samples, expected {n}", raw.len())));
    }
    raw.into_iter()
        .map(|v| {
            if v > header.maxval {
                Err(Error::Parse(format!("PNM sample {v} exceeds maxval")))
            } else {
                Ok(((v * 255 + header.maxval / 2) / header.maxval) as u8)
            }
        })
        .collect()
}

/// PGM (P2 or P5). Values above 127 are foreground.
pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let h = parse_pnm_header(bytes)?;
    let ascii = match &h.magic {
        b"P2" => true,
        b"P5" => false,
        _ => return Err(Error::Parse("not a PGM (P2/P5) file".into())),
    };
    let samples = pnm_samples(bytes, &h, 1, ascii)?;
    BinaryMask::from_bits(h.width, h.height, samples.into_iter().map(|v| v > 127).collect())
}

/// Binary (P5) PGM with 0 = background, 255 = foreground.
pub fn format_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// ASCII (P2) PGM.
pub fn format_pgm_ascii(mask: &BinaryMask) -> String {
    let mut s = format!("P2\n{} {}\n255\n", mask.width(), mask.height());
    for row in mask.bits().chunks(mask.width().max(1)) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "255" } else { "0" }).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    parse_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    fs::write(path, format_pgm(mask))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_round_trip_is_exact() {
        let c = PointCloud::from_xyz(&[[0.1, -2.5e-17, 3.0], [1.0 / 3.0, 7.0, -0.0]]).unwrap();
        assert_eq!(parse_xyz(&format_xyz(&c)).unwrap(), c);
        assert!(parse_xyz("1 2\n").is_err());
        assert!(parse_xyz("1 2 x\n").is_err());
        assert_eq!(parse_xyz("# c\n\n1 2 3\n").unwrap().len(), 1);
    }

    #[test]
    fn ply_and_obj_round_trip() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.25),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(parse_ply(&format_ply(&m.vertices, &m.faces)).unwrap(), m);
        assert_eq!(parse_obj(&format_obj(&m)).unwrap(), m);
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn ply_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nend_header\n9 1 2 3\n9 4 5 6\n";
        let m = parse_ply(text).unwrap();
        assert_eq!(m.vertices[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn pgm_both_encodings() {
        let m = BinaryMask::from_fn(5, 3, |r, c| (r + c) % 2 == 0);
        assert_eq!(parse_pgm(&format_pgm(&m)).unwrap(), m);
        assert_eq!(parse_pgm(format_pgm_ascii(&m).as_bytes()).unwrap(), m);
        let thresh = parse_pgm(b"P2\n# c\n3 1\n255\n127 128 0\n").unwrap();
        assert_eq!(thresh.bits(), &[false, true, false]);
        assert!(parse_pgm(b"P2\n3 1\n255\n1 2\n").is_err());
    }
}
