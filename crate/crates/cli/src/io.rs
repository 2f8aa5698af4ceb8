//! Point-cloud readers (XYZ, CSV, ASCII PLY) and the XYZ writer.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ellfit_core::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Xyz,
    Csv,
    Ply,
}

impl Format {
    /// Guesses the format from the file extension; anything unknown is XYZ.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => Format::Csv,
            Some("ply") => Format::Ply,
            _ => Format::Xyz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based line number, if the problem is tied to one line.
    pub line: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn whole(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

fn number(token: &str, line: usize) -> Result<f64, ParseError> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| ParseError::at(line, format!("cannot parse `{}` as a number", token.trim())))?;
    if !v.is_finite() {
        return Err(ParseError::at(line, format!("non-finite coordinate `{}`", token.trim())));
    }
    Ok(v)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse(text: &str, format: Format) -> Result<Vec<Point3>, ParseError> {
    match format {
        Format::Xyz => parse_xyz(text),
        Format::Csv => parse_csv(text),
        Format::Ply => parse_ply(text),
    }
}

/// Three whitespace-separated numbers per line.
pub fn parse_xyz(text: &str) -> Result<Vec<Point3>, ParseError> {
    content_lines(text)
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(ParseError::at(n, format!("expected 3 values, found {}", fields.len())));
            }
            Ok(Point3::new(number(fields[0], n)?, number(fields[1], n)?, number(fields[2], n)?))
        })
        .collect()
}

/// Comma-separated; an optional header names the `x`, `y`, `z` columns,
/// otherwise the first three columns are used.
pub fn parse_csv(text: &str) -> Result<Vec<Point3>, ParseError> {
    let mut lines = content_lines(text).peekable();
    let mut columns = [0, 1, 2];
    if let Some(&(n, first)) = lines.peek() {
        let fields: Vec<&str> = first.split(',').map(str::trim).collect();
        if fields.iter().any(|f| f.parse::<f64>().is_err()) {
            for (slot, name) in columns.iter_mut().zip(["x", "y", "z"]) {
                *slot = fields
                    .iter()
                    .position(|f| f.eq_ignore_ascii_case(name))
                    .ok_or_else(|| ParseError::at(n, format!("header has no `{name}` column")))?;
            }
            lines.next();
        }
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let get = |c: usize| {
                fields
                    .get(c)
                    .ok_or_else(|| ParseError::at(n, format!("missing column {}", c + 1)))
                    .and_then(|f| number(f, n))
            };
            Ok(Point3::new(get(columns[0])?, get(columns[1])?, get(columns[2])?))
        })
        .collect()
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// ASCII PLY; reads the `x`, `y`, `z` properties of the `vertex` element.
pub fn parse_ply(text: &str) -> Result<Vec<Point3>, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(ParseError::at(1, "missing `ply` magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ascii = false;
    loop {
        let (n, line) = lines
            .next()
            .ok_or_else(|| ParseError::whole("PLY header is not terminated by `end_header`"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = true,
            ["format", kind, ..] => {
                return Err(ParseError::at(n, format!("only ASCII PLY is supported, found `{kind}`")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| ParseError::at(n, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", .., name] => elements
                .last_mut()
                .ok_or_else(|| ParseError::at(n, "property before any element"))?
                .properties
                .push(name.to_string()),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(ParseError::at(n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !ascii {
        return Err(ParseError::whole("PLY header lacks a `format ascii 1.0` line"));
    }
    let mut points = Vec::new();
    for element in &elements {
        let vertex = element.name == "vertex";
        let columns = if vertex {
            let find = |p: &str| {
                element
                    .properties
                    .iter()
                    .position(|q| q == p)
                    .ok_or_else(|| ParseError::whole(format!("vertex element has no `{p}` property")))
            };
            [find("x")?, find("y")?, find("z")?]
        } else {
            [0; 3]
        };
        for _ in 0..element.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| ParseError::whole(format!("file ends inside element `{}`", element.name)))?;
            if !vertex {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let get = |c: usize| {
                fields
                    .get(c)
                    .ok_or_else(|| ParseError::at(n, format!("missing vertex property {}", c + 1)))
                    .and_then(|f| number(f, n))
            };
            points.push(Point3::new(get(columns[0])?, get(columns[1])?, get(columns[2])?));
        }
        if vertex {
            return Ok(points);
        }
    }
    Err(ParseError::whole("PLY file has no `vertex` element"))
}

/// One point per line with 17 significant digits, which round-trips exactly.
pub fn write_xyz<W: Write>(mut w: W, points: &[Point3]) -> std::io::Result<()> {
    for p in points {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_skips_comments_and_blank_lines() {
        let p = parse_xyz("# header\n1 2 3\n\n  -1.5e0\t0 4\n").unwrap();
        assert_eq!(p, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.5, 0.0, 4.0)]);
    }

    #[test]
    fn xyz_reports_line_numbers() {
        let e = parse_xyz("1 2 3\n# c\n4 NaN 6\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("line 3:"));
        assert_eq!(parse_xyz("1 2\n").unwrap_err().line, Some(1));
        assert_eq!(parse_xyz("1 2 inf\n").unwrap_err().line, Some(1));
        assert_eq!(parse_xyz("1 2 3 4\n").unwrap_err().line, Some(1));
    }

    #[test]
    fn csv_with_and_without_header() {
        let plain = parse_csv("1,2,3\n4,5,6\n").unwrap();
        assert_eq!(plain[1], Point3::new(4.0, 5.0, 6.0));
        let named = parse_csv("id,Z,y,x\n0,3,2,1\n").unwrap();
        assert_eq!(named, vec![Point3::new(1.0, 2.0, 3.0)]);
        assert_eq!(parse_csv("a,b,c\n1,2,3\n").unwrap_err().line, Some(1));
        assert_eq!(parse_csv("x,y,z\n1,2\n").unwrap_err().line, Some(2));
    }

    #[test]
    fn ply_ascii_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float nx\n\
                    property float x\nproperty float y\nproperty float z\nelement face 1\n\
                    property list uchar int vertex_indices\nend_header\n9 1 2 3\n9 4 5 6\n3 0 1 1\n";
        let p = parse_ply(text).unwrap();
        assert_eq!(p, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_rejects_binary_and_bad_rows() {
        let binary = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(parse_ply(binary).unwrap_err().message.contains("ASCII"));
        let short = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n1 2\n";
        assert_eq!(parse_ply(short).unwrap_err().line, Some(8));
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let points = vec![
            Point3::new(0.1, -1.0 / 3.0, 1e-300),
            Point3::new(std::f64::consts::PI, 123456.789, -2.5e17),
        ];
        let mut buf = Vec::new();
        write_xyz(&mut buf, &points).unwrap();
        assert_eq!(parse_xyz(std::str::from_utf8(&buf).unwrap()).unwrap(), points);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("a.CSV")), Format::Csv);
        assert_eq!(Format::from_path(Path::new("a.ply")), Format::Ply);
        assert_eq!(Format::from_path(Path::new("a.txt")), Format::Xyz);
    }
}
