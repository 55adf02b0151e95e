//! I/Q capture files and PPM frame export.
//!
//! A capture is either raw interleaved little-endian `f32` pairs (`.iq`) or a
//! two-column `I,Q` text file (`.csv`). Both need a sidecar `.hdr` with
//! `sample_rate_hz=`, `center_frequency_hz=` and `timestamp=` lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;

use super::stft::IqRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn sidecar_path(capture: &Path) -> PathBuf {
    capture.with_extension("hdr")
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Data(format!("{}:{}: expected key=value, got {line:?}", origin.display(), n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn read_header(capture: &Path) -> Result<(f64, f64, i64)> {
    let hdr = sidecar_path(capture);
    let text = fs::read_to_string(&hdr).map_err(|e| {
        Error::Data(format!("missing or unreadable header {} for {}: {e}", hdr.display(), capture.display()))
    })?;
    let kv = parse_key_values(&text, &hdr)?;
    let field = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::Data(format!("{}: missing {k}", hdr.display())))
    };
    let bad = |k: &str| Error::Data(format!("{}: {k} is not a number", hdr.display()));
    Ok((
        field("sample_rate_hz")?.parse().map_err(|_| bad("sample_rate_hz"))?,
        field("center_frequency_hz")?.parse().map_err(|_| bad("center_frequency_hz"))?,
        field("timestamp")?.parse().map_err(|_| bad("timestamp"))?,
    ))
}

fn parse_raw(bytes: &[u8], path: &Path) -> Result<Vec<Complex<f32>>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a whole number of I/Q pairs",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            Complex::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect())
}

fn parse_csv(text: &str, path: &Path) -> Result<Vec<Complex<f32>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (i, q) = (cols.next(), cols.next());
        let parsed = match (i, q, cols.next()) {
            (Some(i), Some(q), None) => i.parse::<f32>().ok().zip(q.parse::<f32>().ok()),
            _ => None,
        };
        match parsed {
            Some((i, q)) => out.push(Complex::new(i, q)),
            // a single non-numeric header row is allowed
            None if n == 0 => continue,
            None => {
                return Err(Error::Data(format!("{}:{}: expected two numeric columns", path.display(), n + 1)));
            }
        }
    }
    Ok(out)
}

/// Reads a capture and its sidecar header.
pub fn read_capture(path: &Path) -> Result<IqRecord> {
    let (sample_rate_hz, center_frequency_hz, timestamp) = read_header(path)?;
    let samples = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)?,
        _ => parse_raw(&fs::read(path).map_err(|e| Error::io(path, e))?, path)?,
    };
    let rec = IqRecord {
        samples,
        sample_rate_hz,
        center_frequency_hz,
        timestamp,
    };
    rec.validate()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(rec)
}

/// Writes a raw capture plus sidecar.
pub fn write_capture(path: &Path, rec: &IqRecord) -> Result<()> {
    let mut bytes = Vec::with_capacity(rec.samples.len() * 8);
    for s in &rec.samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let hdr = sidecar_path(path);
    let text = format!(
        "sample_rate_hz={}\ncenter_frequency_hz={}\ntimestamp={}\n",
        rec.sample_rate_hz, rec.center_frequency_hz, rec.timestamp
    );
    fs::write(&hdr, text).map_err(|e| Error::io(&hdr, e))
}

/// Binary PPM (P6, maxval 255) of an `(H, W, 1|3)` frame.
pub fn write_ppm(path: &Path, frame: &Tensor) -> Result<()> {
    let s = frame.shape();
    if s.len() != 3 || !matches!(s[2], 1 | 3) {
        return Err(Error::shape("write_ppm", format!("expected (H,W,1|3), got {s:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    for px in frame.data().chunks(s[2]) {
        let rgb = if s[2] == 1 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        out.extend(rgb.iter().map(|&v| crate::colormap::level(v)));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_and_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let rec = IqRecord {
            samples: vec![Complex::new(0.5, -1.25), Complex::new(3.0, 0.0)],
            sample_rate_hz: 1e6,
            center_frequency_hz: 98.1e6,
            timestamp: 42,
        };
        let p = dir.path().join("a.iq");
        write_capture(&p, &rec).unwrap();
        assert_eq!(read_capture(&p).unwrap(), rec);
        fs::remove_file(sidecar_path(&p)).unwrap();
        let err = read_capture(&p).unwrap_err().to_string();
        assert!(err.contains("a.hdr"), "{err}");
    }

    #[test]
    fn csv_with_header_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        fs::write(&p, "i,q\n1,2\n-0.5, 0.25\n").unwrap();
        fs::write(sidecar_path(&p), "sample_rate_hz=2\ncenter_frequency_hz=0\ntimestamp=7\n").unwrap();
        let r = read_capture(&p).unwrap();
        assert_eq!(r.samples, vec![Complex::new(1.0, 2.0), Complex::new(-0.5, 0.25)]);
        assert_eq!(r.timestamp, 7);
    }

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ppm");
        write_ppm(&p, &Tensor::full([2, 3, 1], 1.0)).unwrap();
        let b = fs::read(&p).unwrap();
        assert!(b.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(b.len(), 11 + 2 * 3 * 3);
    }
}
