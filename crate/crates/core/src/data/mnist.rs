//! MNIST IDX files: big-endian magic and dimensions, then one byte per
//! value. Images use magic `0x00000803` with dims `count, rows, cols`;
//! labels use `0x00000801` with a single `count`.

use std::fs;
use std::path::Path;

use super::DatasetIndex;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            msg: "file ends inside the header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels)` with raw byte values.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::Parse {
            offset: 16 + body.len().min(need) as u64,
            msg: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Parse {
            offset: 8 + body.len().min(n) as u64,
            msg: format!("expected {n} label bytes, found {}", body.len()),
        });
    }
    body.iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < MNIST_CLASSES {
                Ok(l as usize)
            } else {
                Err(Error::Parse {
                    offset: 8 + i as u64,
                    msg: format!("label {l} > 9"),
                })
            }
        })
        .collect()
}

/// Centre-crops or zero-pads a `rows x cols` image to `size x size`.
fn fit(src: &[u8], rows: usize, cols: usize, size: usize, out: &mut Vec<f32>) {
    let off = |from: usize| (from as isize - size as isize) / 2;
    let (oy, ox) = (off(rows), off(cols));
    for y in 0..size {
        for x in 0..size {
            let (sy, sx) = (y as isize + oy, x as isize + ox);
            let v = if sy >= 0 && sx >= 0 && (sy as usize) < rows && (sx as usize) < cols {
                src[sy as usize * cols + sx as usize] as f32 / 255.0
            } else {
                0.0
            };
            out.push(v);
        }
    }
}

fn build(
    images: &[u8],
    labels: &[u8],
    resize: Option<usize>,
    stats: Option<&super::ChannelStats>,
) -> Result<DatasetIndex> {
    let (n, rows, cols, body) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("{n} images but {} labels", labels.len()),
        });
    }
    let size = resize.unwrap_or(rows);
    let mut pixels = Vec::with_capacity(n * size * size);
    if resize.is_none() && rows == cols {
        pixels.extend(body.iter().map(|&b| b as f32 / 255.0));
    } else {
        for img in body.chunks_exact(rows * cols) {
            fit(img, rows, cols, size, &mut pixels);
        }
    }
    DatasetIndex::from_pixels(pixels, [n, 1, size, size], labels, MNIST_CLASSES, stats)
}

/// Loads an image/label IDX pair. `resize` centre-crops or pads to a square.
pub fn load_mnist(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    resize: Option<usize>,
) -> Result<DatasetIndex> {
    build(&fs::read(images)?, &fs::read(labels)?, resize, None)
}

/// Train and test splits from the four standard file names in `dir`; the
/// test split reuses the train statistics.
pub fn load_mnist_dir(dir: impl AsRef<Path>, resize: Option<usize>) -> Result<(DatasetIndex, DatasetIndex)> {
    let dir = dir.as_ref();
    let read = |name: &str| fs::read(dir.join(name));
    let train = build(&read("train-images-idx3-ubyte")?, &read("train-labels-idx1-ubyte")?, resize, None)?;
    let test = build(
        &read("t10k-images-idx3-ubyte")?,
        &read("t10k-labels-idx1-ubyte")?,
        resize,
        Some(&train.stats),
    )?;
    Ok((train, test))
}
