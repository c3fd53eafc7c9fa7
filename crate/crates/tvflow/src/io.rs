//! CSV and PGM formats.
//!
//! Field CSV: `i[,j],xi1[,xi2],value`, one row per interior node, `i`
//! fastest. Images are binary PGM (P5), 8-bit for `maxval < 256` and 16-bit
//! big-endian otherwise; pixel `(c, r)` maps to node `(c, height-1-r)` so
//! that row 0 is the top of the domain. Each written image gets a
//! `<name>.map` sidecar describing the affine value mapping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tvflow_core::solver::NormRecord;
use tvflow_core::{BrownianPath, Grid, ScalarField};

use crate::error::{Error, Result};

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn field_csv(field: &ScalarField) -> String {
    let g = field.grid();
    let mut s = String::new();
    if g.dim() == 1 {
        s.push_str("i,xi1,value\n");
    } else {
        s.push_str("i,j,xi1,xi2,value\n");
    }
    let n1 = g.counts()[0];
    for (idx, v) in field.values().iter().enumerate() {
        let c = g.node_coords(idx);
        if g.dim() == 1 {
            let _ = writeln!(s, "{idx},{},{v}", c[0]);
        } else {
            let _ = writeln!(s, "{},{},{},{},{v}", idx % n1, idx / n1, c[0], c[1]);
        }
    }
    s
}

pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    write_text(path, &field_csv(field))
}

/// Reads a field CSV written for `grid`; rows may come in any order.
pub fn read_field_csv(path: &Path, grid: Grid) -> Result<ScalarField> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let expected = if grid.dim() == 1 { "i,xi1,value" } else { "i,j,xi1,xi2,value" };
    if header.trim() != expected {
        return Err(Error::format(path, format!("expected header `{expected}`")));
    }
    let mut values = vec![f64::NAN; grid.len()];
    let n1 = grid.counts()[0];
    for (line_no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format(path, format!("line {}: malformed row", line_no + 2));
        let (idx, value) = if grid.dim() == 1 {
            if cols.len() != 3 {
                return Err(bad());
            }
            (cols[0].parse::<usize>().map_err(|_| bad())?, cols[2])
        } else {
            if cols.len() != 5 {
                return Err(bad());
            }
            let i: usize = cols[0].parse().map_err(|_| bad())?;
            let j: usize = cols[1].parse().map_err(|_| bad())?;
            if i >= n1 {
                return Err(bad());
            }
            (i + n1 * j, cols[4])
        };
        if idx >= values.len() {
            return Err(bad());
        }
        values[idx] = value.parse().map_err(|_| bad())?;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::format(path, "missing nodes"));
    }
    Ok(ScalarField::from_values(grid, values)?)
}

pub fn norms_csv(norms: &[NormRecord]) -> String {
    let mut s = String::from("t,l2,lN,tv,phi_lambda\n");
    for r in norms {
        let _ = writeln!(s, "{},{},{},{},{}", r.t, r.l2, r.l_n, r.tv, r.phi_lambda);
    }
    s
}

pub fn path_csv(path: &BrownianPath) -> String {
    let mut s = String::from("step,mode,increment\n");
    for n in 0..path.steps() {
        for k in 0..path.modes() {
            let _ = writeln!(s, "{n},{k},{}", path.increment(k, n));
        }
    }
    s
}

/// Rows of the per-experiment CSV: `t,estimate,ci,bound,verdict`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckRow {
    pub t: f64,
    pub estimate: f64,
    pub ci: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn check_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from("t,estimate,ci,bound,verdict\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.t, r.estimate, r.ci, r.bound, if r.pass { "pass" } else { "fail" });
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major from the top row.
    pub pixels: Vec<u16>,
}

impl Image {
    /// Grid with one interior node per pixel and square spacing
    /// `1 / (max(width, height) + 1)`.
    pub fn grid(&self) -> Result<Grid> {
        let h = 1.0 / (self.width.max(self.height) + 1) as f64;
        Ok(Grid::rect(
            [(self.width + 1) as f64 * h, (self.height + 1) as f64 * h],
            [self.width, self.height],
        )?)
    }

    /// Pixel values mapped to `[0, 1]` by `v = p / maxval`.
    pub fn to_field(&self) -> Result<ScalarField> {
        let grid = self.grid()?;
        let scale = 1.0 / self.maxval as f64;
        let mut values = vec![0.0; self.pixels.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                values[c + self.width * (self.height - 1 - r)] = self.pixels[c + self.width * r] as f64 * scale;
            }
        }
        Ok(ScalarField::from_values(grid, values)?)
    }

    /// Inverse of [`Image::to_field`], rounding and clipping to `[0, maxval]`.
    pub fn from_field(field: &ScalarField, maxval: u16) -> Result<Image> {
        let g = field.grid();
        if g.dim() != 2 {
            return Err(tvflow_core::Error::Unsupported("images need a 2D grid").into());
        }
        let (width, height) = (g.counts()[0], g.counts()[1]);
        let mut pixels = vec![0u16; width * height];
        for r in 0..height {
            for c in 0..width {
                let v = field.values()[c + width * (height - 1 - r)] * maxval as f64;
                pixels[c + width * r] = v.round().clamp(0.0, maxval as f64) as u16;
            }
        }
        Ok(Image { width, height, maxval, pixels })
    }
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Some((tokens, i + 1))
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated PGM header"))?;
    if tokens[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field `{s}`")));
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "invalid PGM dimensions or maxval"));
    }
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let raster = bytes.get(offset..offset + need).ok_or_else(|| Error::format(path, "truncated PGM raster"))?;
    let pixels = if wide {
        raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok(Image { width, height, maxval: maxval as u16, pixels })
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval > 255 {
        for p in &image.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    } else {
        out.extend(image.pixels.iter().map(|&p| p as u8));
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// Writes the image and its `<path>.map` sidecar.
pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".map");
    let text = format!(
        "# value = pixel * scale + offset\nscale={}\noffset=0\nmaxval={}\nbits={}\n",
        1.0 / image.maxval as f64,
        image.maxval,
        if image.maxval > 255 { 16 } else { 8 }
    );
    write_text(Path::new(&sidecar), &text)
}
