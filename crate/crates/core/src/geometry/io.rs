//! Text (`xyzl`) and packed binary (`pcb`) point-cloud files.
//!
//! `xyzl`: a header line `N C` (point count, class count), `N` lines of
//! `x y z`, then an optional `label k` line.
//!
//! `pcb`: the magic bytes `PCB1`, a little-endian `u32` point count, then
//! `3N` little-endian `f32` coordinates.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::PointCloud;
use crate::error::{Error, Result};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file_name(path),
        location,
        message: message.into(),
    }
}

pub fn write_xyzl(path: &Path, cloud: &PointCloud, num_classes: usize) -> Result<()> {
    let mut text = String::with_capacity(cloud.len() * 64);
    text.push_str(&format!("{} {}\n", cloud.len(), num_classes));
    for r in cloud.points().rows() {
        text.push_str(&format!("{} {} {}\n", r[0], r[1], r[2]));
    }
    if let Some(label) = cloud.label {
        text.push_str(&format!("label {label}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads an `xyzl` file, returning the cloud and the declared class count.
pub fn read_xyzl(path: &Path) -> Result<(PointCloud, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, "line 1".into(), "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(parse_err(
            path,
            format!("line {hline}"),
            "header must be 'N C'",
        ));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| parse_err(path, format!("line {hline}"), format!("'{s}': {e}")))
    };
    let n = parse_count(fields[0])?;
    let classes = parse_count(fields[1])?;

    let mut coords = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let (ln, line) = lines.next().ok_or_else(|| {
            parse_err(
                path,
                "end of file".into(),
                format!("expected {n} points, found {}", coords.len() / 3),
            )
        })?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(
                path,
                format!("line {ln}"),
                format!("expected 3 coordinates, got {}", parts.len()),
            ));
        }
        for p in parts {
            let v: f64 = p.parse().map_err(|_| {
                parse_err(path, format!("line {ln}"), format!("'{p}' is not a number"))
            })?;
            coords.push(v);
        }
    }

    let mut label = None;
    if let Some((ln, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["label", k] => {
                label = Some(k.parse::<usize>().map_err(|_| {
                    parse_err(path, format!("line {ln}"), format!("bad label '{k}'"))
                })?)
            }
            _ => {
                return Err(parse_err(
                    path,
                    format!("line {ln}"),
                    "trailing content after points",
                ))
            }
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(
            path,
            format!("line {ln}"),
            "trailing content after label",
        ));
    }

    let points = Array2::from_shape_vec((n, 3), coords).map_err(|e| Error::Shape(e.to_string()))?;
    let mut cloud = PointCloud::new(points)?;
    cloud.label = label;
    Ok((cloud, classes))
}

pub fn write_pcb(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + cloud.len() * 12);
    bytes.extend_from_slice(PCB_MAGIC);
    bytes.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for v in cloud.points().iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pcb(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len()),
            "truncated header",
        ));
    }
    if &bytes[..4] != PCB_MAGIC {
        return Err(parse_err(path, "byte 0".into(), "bad magic, expected PCB1"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * 12;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!(
                "expected {expected} bytes for {n} points, found {}",
                bytes.len()
            ),
        ));
    }
    let coords: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let points = Array2::from_shape_vec((n, 3), coords).map_err(|e| Error::Shape(e.to_string()))?;
    PointCloud::new(points)
}

/// Reads either format, chosen by file extension.
pub fn read_cloud(path: &Path) -> Result<(PointCloud, Option<usize>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyzl") => read_xyzl(path).map(|(c, k)| (c, Some(k))),
        Some("pcb") => read_pcb(path).map(|c| (c, None)),
        _ => Err(parse_err(
            path,
            "name".into(),
            "expected .xyzl or .pcb extension",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyzl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xyzl");
        let c = PointCloud::from_rows(&[[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -1.0]])
            .unwrap()
            .with_label(4);
        write_xyzl(&path, &c, 8).unwrap();
        let (back, classes) = read_xyzl(&path).unwrap();
        assert_eq!(classes, 8);
        assert_eq!(back.points(), c.points());
        assert_eq!(back.label, Some(4));
    }

    #[test]
    fn xyzl_reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyzl");
        fs::write(&path, "2 3\n0 0 0\n1 x 0\n").unwrap();
        let err = read_xyzl(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn pcb_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pcb");
        let c = PointCloud::from_rows(&[[0.5, -0.25, 1.0], [0.1, 0.2, 0.3]]).unwrap();
        write_pcb(&path, &c).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PCB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 24);
        let back = read_pcb(&path).unwrap();
        for (a, b) in back.points().iter().zip(c.points().iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn pcb_truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcb");
        let mut bytes = b"PCB1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 10]);
        fs::write(&path, bytes).unwrap();
        let err = read_pcb(&path).unwrap_err().to_string();
        assert!(err.contains("byte 18"), "{err}");
    }
}
