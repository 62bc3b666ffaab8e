//! Separable RGB rescaling: exact area averaging when an axis shrinks,
//! bilinear interpolation (half-pixel centers) when it grows.

use image::RgbImage;

/// Resamples one axis. `src` holds `lines` interleaved runs of `src_len`
/// samples with `channels` values each.
fn resample_axis(src: &[f32], lines: usize, src_len: usize, dst_len: usize, channels: usize) -> Vec<f32> {
    let mut dst = vec![0f32; lines * dst_len * channels];
    if src_len == dst_len {
        dst.copy_from_slice(src);
        return dst;
    }
    let scale = src_len as f64 / dst_len as f64;
    for line in 0..lines {
        let s = &src[line * src_len * channels..(line + 1) * src_len * channels];
        let d = &mut dst[line * dst_len * channels..(line + 1) * dst_len * channels];
        for i in 0..dst_len {
            let out = &mut d[i * channels..(i + 1) * channels];
            if dst_len < src_len {
                let start = i as f64 * scale;
                let end = (i + 1) as f64 * scale;
                let mut acc = [0f64; 4];
                let mut j = start.floor() as usize;
                while (j as f64) < end && j < src_len {
                    let overlap = (end.min(j as f64 + 1.0) - start.max(j as f64)).max(0.0);
                    for c in 0..channels {
                        acc[c] += overlap * f64::from(s[j * channels + c]);
                    }
                    j += 1;
                }
                for c in 0..channels {
                    out[c] = (acc[c] / scale) as f32;
                }
            } else {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
                let j0 = x.floor() as usize;
                let j1 = (j0 + 1).min(src_len - 1);
                let t = x - j0 as f64;
                for c in 0..channels {
                    let a = f64::from(s[j0 * channels + c]);
                    let b = f64::from(s[j1 * channels + c]);
                    out[c] = (a + (b - a) * t) as f32;
                }
            }
        }
    }
    dst
}

fn transpose(src: &[f32], rows: usize, cols: usize, channels: usize) -> Vec<f32> {
    let mut dst = vec![0f32; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            let from = (r * cols + c) * channels;
            let to = (c * rows + r) * channels;
            dst[to..to + channels].copy_from_slice(&src[from..from + channels]);
        }
    }
    dst
}

/// Rescales to `width` x `height` (both at least 1). Horizontal pass first.
pub fn rescale(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    assert!(width > 0 && height > 0, "target size must be positive");
    let (sw, sh) = (src.width() as usize, src.height() as usize);
    let (dw, dh) = (width as usize, height as usize);
    if (sw, sh) == (dw, dh) {
        return src.clone();
    }
    let buf: Vec<f32> = src.as_raw().iter().map(|&v| f32::from(v)).collect();
    let horiz = resample_axis(&buf, sh, sw, dw, 3);
    let cols = transpose(&horiz, sh, dw, 3);
    let vert = resample_axis(&cols, dw, sh, dh, 3);
    let out = transpose(&vert, dw, dh, 3);
    let raw: Vec<u8> = out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::from_raw(width, height, raw).expect("buffer matches target size")
}
