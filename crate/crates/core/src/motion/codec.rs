//! PMF/1 motion file codec.
//!
//! UTF-8 text. Line 1 is the header `PMF 1 <fps> <J>`; every following line
//! holds one frame as `3 + 6*J` space-separated decimal numbers (translation
//! first, then joints in kinematic-tree order). Lines starting with `#` are
//! comments; blank lines are skipped. Numbers are written as the shortest
//! decimal that round-trips the 64-bit value, so write -> read -> write is
//! byte-identical.

use std::fs;
use std::path::Path;

use super::{Frame, MotionError, MotionSequence};

fn format_err(line: usize, detail: impl Into<String>) -> MotionError {
    MotionError::FormatError { line, detail: detail.into() }
}

/// Serializes a sequence to PMF/1 text.
pub fn motion_to_text(seq: &MotionSequence) -> Result<String, MotionError> {
    for (i, f) in seq.frames().iter().enumerate() {
        if !f.to_vec().iter().all(|v| v.is_finite()) {
            return Err(format_err(i + 2, "non-finite value in frame"));
        }
    }
    let mut out = String::new();
    out.push_str(&format!("PMF 1 {} {}\n", seq.fps(), seq.joint_count()));
    let mut buf = String::new();
    for f in seq.frames() {
        buf.clear();
        for (k, v) in f.to_vec().iter().enumerate() {
            if k > 0 {
                buf.push(' ');
            }
            buf.push_str(&format!("{v}"));
        }
        buf.push('\n');
        out.push_str(&buf);
    }
    Ok(out)
}

/// Parses PMF/1 text.
pub fn motion_from_text(text: &str) -> Result<MotionSequence, MotionError> {
    let mut header: Option<(u32, usize)> = None;
    let mut frames: Vec<Frame> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match header {
            None => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 4 || fields[0] != "PMF" {
                    return Err(format_err(line_no, format!("expected `PMF 1 <fps> <J>`, got `{line}`")));
                }
                if fields[1] != "1" {
                    return Err(format_err(line_no, format!("unsupported PMF version `{}`", fields[1])));
                }
                let fps: u32 = fields[2]
                    .parse()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| format_err(line_no, format!("bad fps `{}`", fields[2])))?;
                let joints: usize = fields[3]
                    .parse()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| format_err(line_no, format!("bad joint count `{}`", fields[3])))?;
                header = Some((fps, joints));
            }
            Some((_, joints)) => {
                let expected = 3 + 6 * joints;
                let mut values = Vec::with_capacity(expected);
                for field in line.split_whitespace() {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| format_err(line_no, format!("bad number `{field}`")))?;
                    if !v.is_finite() {
                        return Err(format_err(line_no, format!("non-finite value `{field}`")));
                    }
                    values.push(v);
                }
                if values.len() != expected {
                    return Err(format_err(
                        line_no,
                        format!("expected {} columns, got {}", expected, values.len()),
                    ));
                }
                frames.push(
                    Frame::from_slice(&values).map_err(|e| format_err(line_no, e.to_string()))?,
                );
            }
        }
    }
    let (fps, joints) = header.ok_or_else(|| format_err(1, "missing PMF header"))?;
    if frames.is_empty() {
        return Err(format_err(2, "no frames"));
    }
    MotionSequence::new(fps, joints, frames)
        .map_err(|e| format_err(1, e.to_string()))
}

/// Writes a sequence to a PMF/1 file.
pub fn write_motion_file(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<(), MotionError> {
    let text = motion_to_text(seq)?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a PMF/1 file.
pub fn read_motion_file(path: impl AsRef<Path>) -> Result<MotionSequence, MotionError> {
    let text = fs::read_to_string(path)?;
    motion_from_text(&text)
}
