//! Minimal RIFF/WAVE I/O: mono 16-bit little-endian PCM, the only shape the
//! rest of the pipeline produces or consumes. Samples travel as f64 in
//! [-1, 1] and are quantized symmetrically on write.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Pipeline-wide sample rate in Hz.
pub const SAMPLE_RATE: u32 = 8000;

fn chunk_id(bytes: &[u8], at: usize) -> Option<&[u8]> {
    bytes.get(at..at + 4)
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    let b = bytes
        .get(at..at + 2)
        .ok_or_else(|| Error::audio("file truncated"))?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::audio("file truncated"))?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parse a mono 16-bit PCM WAV; returns the samples scaled so full scale is
/// 1.0, plus the sample rate. Unknown chunks are skipped.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::audio(format!("{}: {e}", path.display())))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::audio(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }

    let mut at = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while at + 8 <= bytes.len() {
        let id = chunk_id(&bytes, at).unwrap();
        let size = read_u32(&bytes, at + 4)? as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return Err(Error::audio(format!(
                "{}: chunk overruns the file",
                path.display()
            )));
        }
        match id {
            b"fmt " => {
                format = Some((
                    read_u16(&bytes, body)?,
                    read_u16(&bytes, body + 2)?,
                    read_u32(&bytes, body + 4)?,
                    read_u16(&bytes, body + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        at = body + size + (size & 1);
    }

    let (codec, channels, rate, bits) = format
        .ok_or_else(|| Error::audio(format!("{}: missing fmt chunk", path.display())))?;
    if codec != 1 || channels != 1 || bits != 16 {
        return Err(Error::audio(format!(
            "{}: want mono 16-bit PCM, got codec {codec}, {channels} ch, {bits} bit",
            path.display()
        )));
    }
    let data =
        data.ok_or_else(|| Error::audio(format!("{}: missing data chunk", path.display())))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0)
        .collect();
    Ok((samples, rate))
}

/// Write samples as mono 16-bit PCM, clamping to [-1, 1] before quantizing.
pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    let data_len = 2 * samples.len();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, &out).map_err(|e| Error::audio(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let wave: Vec<f64> = (0..500)
            .map(|i| 0.8 * (std::f64::consts::TAU * 440.0 * i as f64 / 8000.0).sin())
            .collect();
        write_wav(&path, &wave, SAMPLE_RATE).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, SAMPLE_RATE);
        assert_eq!(back.len(), wave.len());
        for (a, b) in wave.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_and_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        write_wav(&path, &[2.0, -2.0, 1.0, -1.0, 0.0], SAMPLE_RATE).unwrap();
        let (back, _) = read_wav(&path).unwrap();
        assert_eq!(back[0], back[2]);
        assert_eq!(back[1], back[3]);
        assert_eq!(back[4], 0.0);
        assert!((back[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFFxxxxWAVE").unwrap();
        assert!(read_wav(&bad).is_err());
        std::fs::write(&bad, b"not audio at all").unwrap();
        assert!(read_wav(&bad).is_err());
        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &[0.25, -0.25], SAMPLE_RATE).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // splice a LIST chunk between fmt and data
        let mut spliced = bytes[..36].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&4u32.to_le_bytes());
        spliced.extend_from_slice(b"info");
        spliced.extend_from_slice(&bytes[36..]);
        let new_len = (spliced.len() - 8) as u32;
        spliced[4..8].copy_from_slice(&new_len.to_le_bytes());
        bytes = spliced;
        std::fs::write(&path, &bytes).unwrap();
        let (back, _) = read_wav(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0] - 0.25).abs() < 1e-3);
    }
}
