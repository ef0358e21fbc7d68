//! CSV and PGM artifacts.
//!
//! Floats are written the way `printf("%.17g")` writes them, so every value
//! round-trips exactly and identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// `%.17g` formatting of an `f64`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let e = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = e.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let s = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&s).to_string()
    } else {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// In-memory CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&fmt_g17(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", n + 1)))?;
            if row.len() != header.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {}",
                    n + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?)
    }
}

/// Grayscale image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Binary PGM (P5, maxval 255, row-major). Values are clamped to `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Parse(format!("expected P5 magic, got {}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM header: {e}")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Parse(format!("unsupported maxval {maxval}")));
        }
        pos += 1;
        let body = bytes.get(pos..pos + width * height).ok_or_else(|| Error::Parse("truncated PGM body".into()))?;
        Ok(Self {
            width,
            height,
            data: body.iter().map(|&b| b as f64 / maxval as f64).collect(),
        })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        Self::from_pgm(&fs::read(path)?)
    }
}

/// Grid field as CSV: one row per grid row, no header.
pub fn grid_to_csv(nx: usize, data: &[f64]) -> String {
    let mut out = String::new();
    for row in data.chunks(nx) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_g17(*v));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`grid_to_csv`]; returns `(nx, ny, data)`.
pub fn grid_from_csv(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut data = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("grid row {}: {e}", ny + 1)))?;
        match nx {
            None => nx = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse(format!("grid row {} has {} values, expected {n}", ny + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
        ny += 1;
    }
    let nx = nx.ok_or_else(|| Error::Parse("empty grid".into()))?;
    Ok((nx, ny, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
        assert_eq!(fmt_g17(0.0001), "0.0001");
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0 / 3.0), "0.33333333333333331");
    }

    proptest::proptest! {
        #[test]
        fn g17_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            proptest::prop_assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(["t", "r"]);
        t.push(vec![0.0, 2.0]);
        t.push(vec![0.001, 1.9999999]);
        assert_eq!(Table::parse_csv(&t.to_csv()).unwrap(), t);
        assert_eq!(t.column("r").unwrap(), vec![2.0, 1.9999999]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(Table::parse_csv("a,b\n1,2,3\n").is_err());
        assert!(Table::parse_csv("a,b\n1,x\n").is_err());
        assert!(Table::parse_csv("").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            data: vec![0.0, 1.0, 0.5, 0.2, 0.8, 1.0],
        };
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = GrayImage::from_pgm(&bytes).unwrap();
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn pgm_header_comments() {
        let img = GrayImage::from_pgm(b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn grid_csv_round_trip() {
        let data = vec![0.25, 0.5, 1.0, -3.0, 7.5, 1e-9];
        let (nx, ny, back) = grid_from_csv(&grid_to_csv(3, &data)).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(back, data);
    }
}
