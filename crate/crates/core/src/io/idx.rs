//! Reader for big-endian IDX files of unsigned bytes (the MNIST container).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::dataset::{split_rows, Dataset};
use crate::tensor::Tensor;
use crate::training::dequantize_and_scale;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX payload whose magic must equal `expected`.
pub fn parse_idx(bytes: &[u8], expected: u32, path: &Path) -> Result<IdxArray> {
    let err = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 {
        return Err(err(
            0,
            format!("truncated header: expected 4 bytes, found {}", bytes.len()),
        ));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected {
        return Err(err(0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err(
            4,
            format!("truncated header: expected {header} bytes, found {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let expected_len = header + count;
    if bytes.len() != expected_len {
        let what = if bytes.len() < expected_len {
            "truncated payload"
        } else {
            "trailing bytes"
        };
        return Err(err(
            bytes.len().min(expected_len),
            format!("{what}: expected {expected_len} bytes, found {}", bytes.len()),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxData {
    /// `[n, rows, cols]`.
    pub images: IdxArray,
    pub labels: Option<Vec<u8>>,
}

/// Reads an image file and an optional label file without any rescaling.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<IdxData> {
    let images = parse_idx(&std::fs::read(images_path)?, IMAGES_MAGIC, images_path)?;
    let labels = match labels_path {
        Some(p) => {
            let l = parse_idx(&std::fs::read(p)?, LABELS_MAGIC, p)?;
            if l.dims[0] != images.dims[0] {
                return Err(Error::Format {
                    path: p.to_path_buf(),
                    offset: 4,
                    message: format!("{} labels for {} images", l.dims[0], images.dims[0]),
                });
            }
            Some(l.data)
        }
        None => None,
    };
    Ok(IdxData { images, labels })
}

/// 2x2 average pooling of `[n, rows, cols]` values stored row-major.
pub fn average_pool2(values: &[f64], n: usize, rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::InvalidArgument(format!("cannot pool {rows}x{cols} images by 2")));
    }
    let (r2, c2) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(n * r2 * c2);
    for img in values.chunks_exact(rows * cols) {
        for i in 0..r2 {
            for j in 0..c2 {
                let at = |a: usize, b: usize| img[(2 * i + a) * cols + 2 * j + b];
                out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    Ok(out)
}

/// Dequantizes the images to `[0, 1)`, optionally pools them to half
/// resolution, flattens each to a row and splits 80/10/10.
pub fn idx_dataset(data: &IdxData, seed: u64, pool: bool, provenance: &str) -> Result<Dataset> {
    let dims = &data.images.dims;
    if dims.len() != 3 || dims[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "expected [n, rows, cols] images, got {dims:?}"
        )));
    }
    let (n, mut rows, mut cols) = (dims[0], dims[1], dims[2]);
    let raw: Vec<i64> = data.images.data.iter().map(|&v| i64::from(v)).collect();
    let mut values = dequantize_and_scale(&raw, seed)?;
    if pool {
        values = average_pool2(&values, n, rows, cols)?;
        rows /= 2;
        cols /= 2;
    }
    let x = Tensor::new(vec![n, rows * cols], values)?;
    let labels = data
        .labels
        .as_ref()
        .map(|l| l.iter().map(|&v| usize::from(v)).collect::<Vec<_>>());
    let num_classes = labels.as_ref().map(|l| l.iter().copied().max().unwrap_or(0) + 1);
    let (train, val, test) = split_rows(x, labels, seed)?;
    Dataset::new("idx", train, val, test, num_classes, true, provenance)
}
