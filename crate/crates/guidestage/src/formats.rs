//! On-disk formats: the `GSTENS01` tensor container, binary PGM masks,
//! PPM previews, and atomic file writes.

use std::io::Write;
use std::path::Path;

use guidestage_core::geometry::Mask;
use guidestage_core::Tensor;

use crate::error::{CliError, CliResult};

pub const TENSOR_MAGIC: &[u8; 8] = b"GSTENS01";

/// Writes `bytes` to `path` via a temp file in the same directory and a
/// rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Magic, u32 LE rank, u32 LE dims, then the data as f32 LE.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, String> {
    let rest = bytes.strip_prefix(TENSOR_MAGIC.as_slice()).ok_or("missing GSTENS01 magic")?;
    let mut words = rest.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    let mut next = |what: &str| words.next().ok_or_else(|| format!("truncated {what}"));
    let rank = u32::from_le_bytes(next("rank")?) as usize;
    if rank == 0 || rank > 8 {
        return Err(format!("unsupported rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(next("shape")?) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or("shape overflows")?;
    let expected = 4 * (1 + rank + n);
    if rest.len() != expected {
        return Err(format!("payload is {} bytes, expected {expected}", rest.len()));
    }
    let data = (0..n)
        .map(|_| next("data").map(|w| f32::from_le_bytes(w) as f64))
        .collect::<Result<Vec<_>, _>>()?;
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn write_tensor(path: &Path, t: &Tensor) -> CliResult<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> CliResult<Tensor> {
    decode_tensor(&read_file(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Splits the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
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
    if start == *pos {
        return Err("truncated header".into());
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, String> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad {what}"))
}

/// Binary PGM (P5, 8-bit). A pixel is set when `value ≥ 128` at maxval
/// 255, scaled proportionally for other maxvals.
pub fn decode_pgm(bytes: &[u8]) -> Result<Mask, String> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if w == 0 || h == 0 || !(1..=255).contains(&maxval) {
        return Err(format!("unsupported PGM {w}x{h} maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < w * h {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h));
    }
    let bits = raster[..w * h].iter().map(|&v| v as usize * 255 >= 128 * maxval).collect();
    Mask::new(w, h, bits).map_err(|e| e.to_string())
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn read_pgm(path: &Path) -> CliResult<Mask> {
    decode_pgm(&read_file(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// `[3 × H × W]` in `[0, 1]` as binary PPM (P6); values are clamped.
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>, String> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(format!("PPM needs [3, H, W], got {s:?}"));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = rgb.data();
    for p in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, rgb: &Tensor) -> CliResult<()> {
    let bytes = encode_ppm(rgb).map_err(CliError::Shape)?;
    write_atomic(path, &bytes)
}
