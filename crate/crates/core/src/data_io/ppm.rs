use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Byte for a pixel value in `[-1, 1]`.
pub fn pixel_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Binary PPM bytes for one `3×H×W` image in `[-1, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("encode_ppm", format!("expected 3×H×W, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if let Some(bad) = image.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("pixel value {bad} outside [-1, 1]")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(pixel_byte(d[(c * h + y) * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_ppm(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Tile a batch `N×3×H×W` into one `3×(rows·H)×(cols·W)` image.
pub fn tile_grid(batch: &Tensor, cols: usize) -> Result<Tensor> {
    let s = batch.shape();
    if s.len() != 4 || s[1] != 3 || s[0] == 0 || cols == 0 {
        return Err(Error::shape("tile_grid", format!("expected a non-empty N×3×H×W batch, got {s:?}")));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[3, gh, gw], -1.0);
    let src = batch.data();
    let dst = out.data_mut();
    for i in 0..n {
        let (r, col) = (i / cols, i % cols);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    dst[(c * gh + r * h + y) * gw + col * w + x] = src[((i * 3 + c) * h + y) * w + x];
                }
            }
        }
    }
    Ok(out)
}
