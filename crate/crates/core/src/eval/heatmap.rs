use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// 8-bit gray levels: `[0, max]` maps linearly onto `[0, 255]` with
/// round-half-up; negatives clamp to 0. An all-nonpositive frame is black.
pub fn gray_levels(frame: &[f64]) -> Vec<u8> {
    let max = frame.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return vec![0; frame.len()];
    }
    frame
        .iter()
        .map(|&v| (v.max(0.0) / max * 255.0 + 0.5).floor().min(255.0) as u8)
        .collect()
}

/// Raw values as CSV: one line per grid row, row 0 (southmost) first.
pub fn heatmap_csv(frame: &[f64], rows: usize, cols: usize) -> String {
    let mut s = String::new();
    for r in 0..rows {
        let line: Vec<String> = frame[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_heatmap_csv(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::invalid(format!("heatmap line {}: bad number '{v}'", i + 1))
                })
            })
            .collect::<Result<_>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Error::invalid(format!(
                "heatmap line {}: ragged row",
                i + 1
            )));
        }
        values.extend(row);
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), values))
}

/// Binary PGM (P5) with north at the top, so grid rows appear flipped.
pub fn heatmap_pgm(frame: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let px = gray_levels(frame);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        out.extend_from_slice(&px[r * cols..(r + 1) * cols]);
    }
    out
}

/// Writes `frame` as `<stem>.csv` and `<stem>.pgm`.
pub fn export_heatmap(frame: &[f64], rows: usize, cols: usize, stem: &Path) -> Result<()> {
    if frame.len() != rows * cols {
        return Err(Error::invalid(format!(
            "heatmap frame has {} values for {rows}x{cols}",
            frame.len()
        )));
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("heatmap frame has non-finite values"));
    }
    write_atomic(
        &stem.with_extension("csv"),
        heatmap_csv(frame, rows, cols).as_bytes(),
    )?;
    write_atomic(&stem.with_extension("pgm"), &heatmap_pgm(frame, rows, cols))
}
