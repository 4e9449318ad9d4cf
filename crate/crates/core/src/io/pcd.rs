//! PCD v0.7 reader and writer (`DATA ascii` and `DATA binary`).
//!
//! Recognized fields are `x`, `y`, `z`, `intensity`, `ring` and `timestamp`;
//! any other field is skipped with a warning. Positions are written as 8-byte
//! floats so a write/read cycle is lossless. The scan stamp and frame id are
//! carried in `# stamp` / `# frame_id` header comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Scan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Unsigned,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    X,
    Y,
    Z,
    Intensity,
    Ring,
    Timestamp,
    Ignored,
}

#[derive(Debug, Clone)]
struct Field {
    name: String,
    size: usize,
    kind: Kind,
    count: usize,
    target: Target,
}

#[derive(Debug, Default)]
struct Header {
    fields: Vec<Field>,
    width: Option<usize>,
    height: Option<usize>,
    points: Option<usize>,
    stamp: Option<f64>,
    frame_id: Option<String>,
}

fn target_for(name: &str) -> Target {
    match name {
        "x" => Target::X,
        "y" => Target::Y,
        "z" => Target::Z,
        "intensity" => Target::Intensity,
        "ring" => Target::Ring,
        "timestamp" | "time" => Target::Timestamp,
        _ => Target::Ignored,
    }
}

pub fn read_scan(path: &Path) -> Result<Scan> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scan(&bytes, path)
}

/// Parse PCD bytes; `path` is only used in error messages.
pub fn parse_scan(bytes: &[u8], path: &Path) -> Result<Scan> {
    let perr = |line: usize, msg: String| Error::parse(path, line, msg);
    let mut header = Header::default();
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut kinds: Vec<Kind> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut pos = 0usize;
    let mut lineno = 0usize;
    let encoding;

    loop {
        if pos >= bytes.len() {
            return Err(perr(lineno, "malformed header: missing DATA line".into()));
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| pos + i);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| perr(lineno + 1, "malformed header: not valid text".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        lineno += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("stamp ") {
                header.stamp = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| perr(lineno, format!("non-numeric stamp `{v}`")))?,
                );
            } else if let Some(v) = comment.strip_prefix("frame_id ") {
                header.frame_id = Some(v.trim().to_string());
            }
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        let parse_usizes = |rest: &[&str]| -> Result<Vec<usize>> {
            rest.iter()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| perr(lineno, format!("malformed header: bad integer `{t}` in {key}")))
                })
                .collect()
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => names = rest.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = parse_usizes(&rest)?,
            "COUNT" => counts = parse_usizes(&rest)?,
            "TYPE" => {
                kinds = rest
                    .iter()
                    .map(|t| match *t {
                        "F" => Ok(Kind::Float),
                        "U" => Ok(Kind::Unsigned),
                        "I" => Ok(Kind::Signed),
                        other => Err(perr(lineno, format!("malformed header: unknown TYPE `{other}`"))),
                    })
                    .collect::<Result<_>>()?
            }
            "WIDTH" => header.width = parse_usizes(&rest)?.first().copied(),
            "HEIGHT" => header.height = parse_usizes(&rest)?.first().copied(),
            "POINTS" => header.points = parse_usizes(&rest)?.first().copied(),
            "DATA" => {
                encoding = match rest.first().copied() {
                    Some("ascii") => PcdEncoding::Ascii,
                    Some("binary") => PcdEncoding::Binary,
                    Some(other) => {
                        return Err(perr(lineno, format!("unsupported DATA encoding `{other}`")))
                    }
                    None => return Err(perr(lineno, "malformed header: DATA without encoding".into())),
                };
                break;
            }
            other => return Err(perr(lineno, format!("malformed header: unknown keyword `{other}`"))),
        }
    }

    if names.is_empty() {
        return Err(perr(lineno, "malformed header: no FIELDS".into()));
    }
    if counts.is_empty() {
        counts = vec![1; names.len()];
    }
    if sizes.len() != names.len() || kinds.len() != names.len() || counts.len() != names.len() {
        return Err(perr(
            lineno,
            "malformed header: FIELDS, SIZE, TYPE and COUNT lengths differ".into(),
        ));
    }
    for (i, name) in names.iter().enumerate() {
        let target = target_for(name);
        let valid_size = match kinds[i] {
            Kind::Float => matches!(sizes[i], 4 | 8),
            _ => matches!(sizes[i], 1 | 2 | 4 | 8),
        };
        if !valid_size {
            return Err(perr(lineno, format!("malformed header: bad SIZE for field `{name}`")));
        }
        if target == Target::Ignored {
            log::warn!("{}: ignoring unknown field `{name}`", path.display());
        } else if counts[i] != 1 {
            return Err(perr(lineno, format!("malformed header: field `{name}` must have COUNT 1")));
        }
        header.fields.push(Field {
            name: name.clone(),
            size: sizes[i],
            kind: kinds[i],
            count: counts[i],
            target,
        });
    }
    for axis in ["x", "y", "z"] {
        if !header.fields.iter().any(|f| f.name == axis) {
            return Err(perr(lineno, format!("malformed header: missing field `{axis}`")));
        }
    }
    let declared = match (header.points, header.width, header.height) {
        (Some(p), Some(w), Some(h)) if p != w * h => {
            return Err(perr(lineno, format!("malformed header: POINTS {p} != WIDTH*HEIGHT {}", w * h)))
        }
        (Some(p), _, _) => p,
        (None, Some(w), h) => w * h.unwrap_or(1),
        (None, None, _) => return Err(perr(lineno, "malformed header: no POINTS or WIDTH".into())),
    };

    let points = match encoding {
        PcdEncoding::Ascii => parse_ascii(&bytes[pos..], lineno, declared, &header.fields, path)?,
        PcdEncoding::Binary => parse_binary(&bytes[pos..], lineno, declared, &header.fields, path)?,
    };
    let mut scan = Scan::new(points);
    scan.stamp = header.stamp.unwrap_or(0.0);
    scan.frame_id = header.frame_id.unwrap_or_default();
    Ok(scan)
}

struct PointBuilder {
    x: f64,
    y: f64,
    z: f64,
    intensity: Option<f32>,
    ring: Option<u16>,
    timestamp: Option<f64>,
}

impl PointBuilder {
    fn new() -> Self {
        Self {
            x: f64::NAN,
            y: f64::NAN,
            z: f64::NAN,
            intensity: None,
            ring: None,
            timestamp: None,
        }
    }

    fn set(&mut self, target: Target, v: f64) {
        match target {
            Target::X => self.x = v,
            Target::Y => self.y = v,
            Target::Z => self.z = v,
            Target::Intensity => self.intensity = v.is_finite().then_some(v as f32),
            Target::Ring => self.ring = (v.is_finite() && v >= 0.0).then_some(v as u16),
            Target::Timestamp => self.timestamp = v.is_finite().then_some(v),
            Target::Ignored => {}
        }
    }

    fn finish(self) -> Option<Point> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return None;
        }
        Some(Point {
            x: self.x,
            y: self.y,
            z: self.z,
            intensity: self.intensity,
            ring: self.ring,
            timestamp: self.timestamp,
        })
    }
}

fn parse_ascii(
    data: &[u8],
    header_lines: usize,
    declared: usize,
    fields: &[Field],
    path: &Path,
) -> Result<Vec<Point>> {
    let text = std::str::from_utf8(data)
        .map_err(|_| Error::parse(path, header_lines + 1, "ascii data is not valid text"))?;
    let expected_tokens: usize = fields.iter().map(|f| f.count).sum();
    let mut points = Vec::with_capacity(declared);
    let mut rows = 0usize;
    let mut dropped = 0usize;
    let mut last_line = header_lines;
    for (i, line) in text.lines().enumerate() {
        let lineno = header_lines + i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        last_line = lineno;
        rows += 1;
        if rows > declared {
            return Err(Error::parse(
                path,
                lineno,
                format!("point count mismatch: header declares {declared} points, found more"),
            ));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != expected_tokens {
            return Err(Error::parse(
                path,
                lineno,
                format!("field-count mismatch: expected {expected_tokens} values, found {}", toks.len()),
            ));
        }
        let mut b = PointBuilder::new();
        let mut t = 0;
        for f in fields {
            if f.target != Target::Ignored {
                let tok = toks[t];
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("non-numeric token `{tok}` in field `{}`", f.name)))?;
                b.set(f.target, v);
            }
            t += f.count;
        }
        match b.finish() {
            Some(p) => points.push(p),
            None => dropped += 1,
        }
    }
    if rows != declared {
        return Err(Error::parse(
            path,
            last_line,
            format!("point count mismatch: header declares {declared} points, found {rows}"),
        ));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} points with non-finite coordinates", path.display());
    }
    Ok(points)
}

fn decode(bytes: &[u8], kind: Kind) -> f64 {
    match (kind, bytes.len()) {
        (Kind::Float, 4) => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Float, 8) => f64::from_le_bytes(bytes.try_into().unwrap()),
        (Kind::Unsigned, 1) => bytes[0] as f64,
        (Kind::Unsigned, 2) => u16::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Unsigned, 4) => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Unsigned, 8) => u64::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Signed, 1) => bytes[0] as i8 as f64,
        (Kind::Signed, 2) => i16::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Signed, 4) => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        (Kind::Signed, 8) => i64::from_le_bytes(bytes.try_into().unwrap()) as f64,
        _ => f64::NAN,
    }
}

fn parse_binary(
    data: &[u8],
    header_lines: usize,
    declared: usize,
    fields: &[Field],
    path: &Path,
) -> Result<Vec<Point>> {
    let record: usize = fields.iter().map(|f| f.size * f.count).sum();
    let needed = record * declared;
    if data.len() < needed {
        return Err(Error::parse(
            path,
            header_lines + 1,
            format!(
                "point count mismatch: header declares {declared} points, binary payload holds {}",
                data.len() / record.max(1)
            ),
        ));
    }
    let mut points = Vec::with_capacity(declared);
    for rec in data[..needed].chunks_exact(record) {
        let mut b = PointBuilder::new();
        let mut off = 0;
        for f in fields {
            if f.target != Target::Ignored {
                b.set(f.target, decode(&rec[off..off + f.size], f.kind));
            }
            off += f.size * f.count;
        }
        if let Some(p) = b.finish() {
            points.push(p);
        }
    }
    Ok(points)
}

struct Layout {
    intensity: bool,
    ring: bool,
    timestamp: bool,
}

fn layout(scan: &Scan) -> Layout {
    let intensity = scan.points.iter().any(|p| p.intensity.is_some());
    let timestamp = scan.points.iter().any(|p| p.timestamp.is_some());
    let all_ring = !scan.points.is_empty() && scan.points.iter().all(|p| p.ring.is_some());
    if !all_ring && scan.points.iter().any(|p| p.ring.is_some()) {
        log::warn!("ring present on only some points; ring field not written");
    }
    Layout {
        intensity,
        ring: all_ring,
        timestamp,
    }
}

fn header_text(scan: &Scan, l: &Layout, encoding: PcdEncoding) -> String {
    let mut names = vec!["x", "y", "z"];
    let mut sizes = vec!["8", "8", "8"];
    let mut types = vec!["F", "F", "F"];
    if l.intensity {
        names.push("intensity");
        sizes.push("4");
        types.push("F");
    }
    if l.ring {
        names.push("ring");
        sizes.push("2");
        types.push("U");
    }
    if l.timestamp {
        names.push("timestamp");
        sizes.push("8");
        types.push("F");
    }
    let n = scan.len();
    let mut h = String::new();
    h.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    let _ = writeln!(h, "# stamp {}", scan.stamp);
    if !scan.frame_id.is_empty() {
        let _ = writeln!(h, "# frame_id {}", scan.frame_id);
    }
    h.push_str("VERSION 0.7\n");
    let _ = writeln!(h, "FIELDS {}", names.join(" "));
    let _ = writeln!(h, "SIZE {}", sizes.join(" "));
    let _ = writeln!(h, "TYPE {}", types.join(" "));
    let _ = writeln!(h, "COUNT {}", vec!["1"; names.len()].join(" "));
    let _ = writeln!(h, "WIDTH {n}");
    h.push_str("HEIGHT 1\n");
    h.push_str("VIEWPOINT 0 0 0 1 0 0 0\n");
    let _ = writeln!(h, "POINTS {n}");
    let _ = writeln!(
        h,
        "DATA {}",
        match encoding {
            PcdEncoding::Ascii => "ascii",
            PcdEncoding::Binary => "binary",
        }
    );
    h
}

/// Serialize a scan to PCD bytes.
pub fn encode_scan(scan: &Scan, encoding: PcdEncoding) -> Vec<u8> {
    let l = layout(scan);
    let mut out = header_text(scan, &l, encoding).into_bytes();
    match encoding {
        PcdEncoding::Ascii => {
            let mut s = String::with_capacity(scan.len() * 48);
            for p in &scan.points {
                let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
                if l.intensity {
                    match p.intensity {
                        Some(i) => {
                            let _ = write!(s, " {i}");
                        }
                        None => s.push_str(" nan"),
                    }
                }
                if l.ring {
                    let _ = write!(s, " {}", p.ring.unwrap_or_default());
                }
                if l.timestamp {
                    match p.timestamp {
                        Some(t) => {
                            let _ = write!(s, " {t}");
                        }
                        None => s.push_str(" nan"),
                    }
                }
                s.push('\n');
            }
            out.extend_from_slice(s.as_bytes());
        }
        PcdEncoding::Binary => {
            for p in &scan.points {
                out.extend_from_slice(&p.x.to_le_bytes());
                out.extend_from_slice(&p.y.to_le_bytes());
                out.extend_from_slice(&p.z.to_le_bytes());
                if l.intensity {
                    out.extend_from_slice(&p.intensity.unwrap_or(f32::NAN).to_le_bytes());
                }
                if l.ring {
                    out.extend_from_slice(&p.ring.unwrap_or_default().to_le_bytes());
                }
                if l.timestamp {
                    out.extend_from_slice(&p.timestamp.unwrap_or(f64::NAN).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_scan(scan: &Scan, path: &Path, encoding: PcdEncoding) -> Result<()> {
    std::fs::write(path, encode_scan(scan, encoding)).map_err(|e| Error::io(path, e))
}
