//! Reference implementations shared by the integration and acceptance tests.
//!
//! Everything here is written as plain nested loops over explicit indices,
//! independent of the kernels in the library.
#![allow(dead_code)]

/// Naive 4-d index into a row-major `[a,b,c,d]` buffer.
fn at(shape: [usize; 4], i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * shape[1] + j) * shape[2] + k) * shape[3] + l
}

/// Six nested loops (plus the batch loop): zero-padded cross-correlation.
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = xs[2] + 2 * pad + 1 - ws[2];
    let ow = xs[3] + 2 * pad + 1 - ws[3];
    let os = [xs[0], ws[0], oh, ow];
    let mut out = vec![0.0; os.iter().product()];
    for n in 0..xs[0] {
        for co in 0..ws[0] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[co];
                    for ci in 0..xs[1] {
                        for ky in 0..ws[2] {
                            for kx in 0..ws[3] {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs[2] as isize || ix >= xs[3] as isize {
                                    continue;
                                }
                                s += w[at(ws, co, ci, ky, kx)]
                                    * x[at(xs, n, ci, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[at(os, n, co, oy, ox)] = s;
                }
            }
        }
    }
    (out, os)
}

/// Sliding 3x3 window, stride 2, zero padding 1, always divided by 9.
pub fn naive_avgpool(x: &[f64], xs: [usize; 4]) -> (Vec<f64>, [usize; 4]) {
    let oh = (xs[2] + 1) / 2;
    let ow = (xs[3] + 1) / 2;
    let os = [xs[0], xs[1], oh, ow];
    let mut out = vec![0.0; os.iter().product()];
    for n in 0..xs[0] {
        for c in 0..xs[1] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let iy = 2 * oy as isize + dy;
                            let ix = 2 * ox as isize + dx;
                            if iy >= 0 && ix >= 0 && iy < xs[2] as isize && ix < xs[3] as isize {
                                s += x[at(xs, n, c, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[at(os, n, c, oy, ox)] = s / 9.0;
                }
            }
        }
    }
    (out, os)
}

pub fn naive_linear(x: &[f64], n: usize, d: usize, w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut s = b[j];
            for t in 0..d {
                s += x[i * d + t] * w[j * d + t];
            }
            out[i * k + j] = s;
        }
    }
    out
}

pub fn naive_attention_pool(x: &[f64], xs: [usize; 4], p: f64) -> Vec<f64> {
    let mut out = vec![0.0; xs[0] * xs[2] * xs[3]];
    for n in 0..xs[0] {
        for y in 0..xs[2] {
            for xx in 0..xs[3] {
                let mut s = 0.0;
                for c in 0..xs[1] {
                    s += x[at(xs, n, c, y, xx)].abs().powf(p);
                }
                out[(n * xs[2] + y) * xs[3] + xx] = s;
            }
        }
    }
    out
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-element relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Per-element relative error, with near-zero components measured against
/// 1e-3 of the largest reference magnitude.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    max_rel_err(analytic, numeric, (1e-3 * scale).max(1e-300))
}

/// Deterministic xorshift values in `[-1, 1)` for oracle inputs.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next() + 1.0) / 2.0 * n as f64) as usize % n
    }
}

/// Two CIFAR-10 records: labels 3 and 7, pixel byte `j` of record `r` is
/// `(r * 101 + j * 7) % 256`.
pub fn cifar_fixture() -> Vec<u8> {
    let mut out = Vec::new();
    for (r, label) in [(0usize, 3u8), (1, 7)] {
        out.push(label);
        out.extend((0..3072).map(|j| ((r * 101 + j * 7) % 256) as u8));
    }
    out
}

/// IDX image file (magic 0x803) with big-endian dims.
pub fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = 0x0000_0803u32.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// IDX label file (magic 0x801).
pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = 0x0000_0801u32.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Per-channel population mean and std of `[0,1]` values, in `f64`.
pub fn channel_stats(pixels01: &[f64], channels: usize, plane: usize) -> Vec<(f64, f64)> {
    (0..channels)
        .map(|c| {
            let vals: Vec<f64> = pixels01
                .chunks(plane)
                .enumerate()
                .filter(|(i, _)| i % channels == c)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            (m, v.sqrt())
        })
        .collect()
}
