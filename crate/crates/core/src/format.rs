//! On-disk formats.
//!
//! Grid text: a header line `H W`, then `H` lines of `W` whitespace-separated
//! decimals. Masks: 8-bit binary PGM (`P5`) with 0 for background and 255 for
//! foreground; any other pixel value is rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, MaskGrid};

fn parse_err(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses grid text. `source_name` is used in diagnostics only.
pub fn parse_grid_text(text: &str, source_name: &str) -> Result<Grid2D> {
    // blank lines are tolerated anywhere
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(source_name, 1, "empty file, expected header \"H W\""))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| parse_err(source_name, header_no, format!("invalid dimension {s:?}")))
    };
    if dims.len() != 2 {
        return Err(parse_err(
            source_name,
            header_no,
            format!("header must be \"H W\", got {header:?}"),
        ));
    }
    let (height, width) = (parse_dim(dims[0])?, parse_dim(dims[1])?);

    let mut data = Vec::with_capacity(height * width);
    let mut rows = 0;
    for (line_no, line) in lines {
        if rows == height {
            return Err(parse_err(
                source_name,
                line_no,
                format!("unexpected extra row, header declares {height} rows"),
            ));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(source_name, line_no, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(source_name, line_no, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != width {
            return Err(parse_err(
                source_name,
                line_no,
                format!("expected {width} values, found {got}"),
            ));
        }
        rows += 1;
    }
    if rows != height {
        return Err(parse_err(
            source_name,
            text.lines().count().max(1),
            format!("expected {height} rows, found {rows}"),
        ));
    }
    Grid2D::new(height, width, data)
}

/// Renders a grid in the text format; values use the shortest round-trip form.
pub fn grid_to_text(grid: &Grid2D) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", grid.height(), grid.width());
    for row in grid.data().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_grid(path: &Path) -> Result<Grid2D> {
    let text = fs::read_to_string(path)?;
    parse_grid_text(&text, &path.display().to_string())
}

pub fn write_grid(path: &Path, grid: &Grid2D) -> Result<()> {
    fs::write(path, grid_to_text(grid))?;
    Ok(())
}

/// Decodes a binary PGM into a mask, mapping 255 to 1 and 0 to 0.
pub fn decode_pgm_mask(bytes: &[u8], source_name: &str) -> Result<MaskGrid> {
    let mut pos = 0;
    let mut line = 1;

    // header tokens: magic, width, height, maxval; '#' comments run to end of line
    let next_token = |pos: &mut usize, line: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                if bytes[*pos] == b'\n' {
                    *line += 1;
                }
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos, &mut line);
    if magic.as_deref() != Some("P5") {
        return Err(parse_err(source_name, 1, "not a binary PGM (missing P5 magic)"));
    }
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(&mut pos, &mut line)
            .ok_or_else(|| parse_err(source_name, line, format!("missing {what}")))?;
        *slot = tok
            .parse()
            .map_err(|_| parse_err(source_name, line, format!("invalid {what} {tok:?}")))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(parse_err(source_name, line, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(
            source_name,
            line,
            format!("maxval {maxval} is not an 8-bit PGM"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(source_name, line, "missing raster data"));
    }
    let raster = &bytes[pos + 1..];
    let n = width * height;
    if raster.len() < n {
        return Err(parse_err(
            source_name,
            line,
            format!("raster has {} bytes, expected {n}", raster.len()),
        ));
    }
    let mut data = Vec::with_capacity(n);
    for (i, &b) in raster[..n].iter().enumerate() {
        match b {
            0 => data.push(0.0),
            255 => data.push(1.0),
            other => {
                return Err(parse_err(
                    source_name,
                    line,
                    format!(
                        "pixel ({}, {}) has value {other}; masks must be 0 or 255",
                        i / width,
                        i % width
                    ),
                ))
            }
        }
    }
    MaskGrid::new(height, width, data)
}

pub fn encode_pgm_mask(mask: &MaskGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| if v == 1.0 { 255u8 } else { 0 }));
    out
}

pub fn read_pgm_mask(path: &Path) -> Result<MaskGrid> {
    let bytes = fs::read(path)?;
    decode_pgm_mask(&bytes, &path.display().to_string())
}

pub fn write_pgm_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
    fs::write(path, encode_pgm_mask(mask))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_grid_text() {
        let g = parse_grid_text("2 3\n1 2 3\n-4.5 0 1e-3\n", "t").unwrap();
        assert_eq!(g.shape().0, 2);
        assert_eq!(g.data(), &[1.0, 2.0, 3.0, -4.5, 0.0, 1e-3]);
    }

    #[test]
    fn malformed_grid_names_line() {
        let err = parse_grid_text("2 2\n1 2\n3 x\n", "logits.txt").unwrap_err();
        assert_eq!(err.to_string(), "logits.txt:3: invalid number \"x\"");
        let err = parse_grid_text("2 2\n1 2 3\n4 5\n", "g").unwrap_err();
        assert!(err.to_string().starts_with("g:2:"), "{err}");
        let err = parse_grid_text("2 2\n1 2\n", "g").unwrap_err();
        assert!(err.to_string().contains("expected 2 rows"), "{err}");
        let err = parse_grid_text("2\n", "g").unwrap_err();
        assert!(err.to_string().starts_with("g:1:"), "{err}");
    }

    #[test]
    fn pgm_with_comment_decodes() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend([0, 255, 0, 255, 255, 0]);
        let m = decode_pgm_mask(&bytes, "m.pgm").unwrap();
        assert_eq!((m.height(), m.width()), (2, 3));
        assert_eq!(m.data(), &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pgm_rejects_gray_pixels() {
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend([0, 128]);
        let err = decode_pgm_mask(&bytes, "m.pgm").unwrap_err();
        assert!(err.to_string().contains("value 128"), "{err}");
    }

    #[test]
    fn pgm_rejects_ascii_and_truncation() {
        assert!(decode_pgm_mask(b"P2\n1 1\n255\n0\n", "m").is_err());
        assert!(decode_pgm_mask(b"P5\n4 4\n255\n\0\0", "m").is_err());
    }

    proptest! {
        #[test]
        fn grid_text_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 1..40), w in 1usize..5) {
            let n = vals.len() - vals.len() % w;
            prop_assume!(n > 0);
            let g = Grid2D::new(n / w, w, vals[..n].to_vec()).unwrap();
            prop_assert_eq!(parse_grid_text(&grid_to_text(&g), "p").unwrap(), g);
        }

        #[test]
        fn pgm_round_trips(bits in prop::collection::vec(any::<bool>(), 1..64), w in 1usize..8) {
            let n = bits.len() - bits.len() % w;
            prop_assume!(n > 0);
            let m = MaskGrid::from_bits(n / w, w, &bits[..n]).unwrap();
            prop_assert_eq!(decode_pgm_mask(&encode_pgm_mask(&m), "p").unwrap(), m);
        }
    }
}
