use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Raw unsigned-byte IDX payload with its dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses the big-endian IDX container. Only the unsigned-byte element type
/// (`0x08`) is supported.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Idx("file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Idx(format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Idx("truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Idx(format!(
            "truncated payload: {count} bytes expected, {} present",
            body.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: body[..count].to_vec(),
    })
}

fn read(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| match e {
        Error::Idx(m) => Error::Idx(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads an image file as `[N, H, W]` with intensities scaled to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<Tensor> {
    let arr = read(path)?;
    if arr.dims.len() != 3 {
        return Err(Error::Idx(format!("expected rank-3 images, got dims {:?}", arr.dims)));
    }
    let data = arr.data.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(arr.dims, data)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let arr = read(path)?;
    if arr.dims.len() != 1 {
        return Err(Error::Idx(format!("expected rank-1 labels, got dims {:?}", arr.dims)));
    }
    Ok(arr.data.into_iter().map(usize::from).collect())
}

/// Average-pools `[N, H, W]` images by `factor` and flattens to
/// `[N, (H / factor) * (W / factor)]`.
pub fn downsample_images(images: &Tensor, factor: usize) -> Result<Tensor> {
    let &[n, h, w] = images.shape() else {
        return Err(Error::shape("downsample", &[images.shape()]));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!("factor {factor} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let src = images.data();
    let mut out = vec![0.0; n * oh * ow];
    for (img, dst) in src.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for r in 0..h {
            for c in 0..w {
                dst[(r / factor) * ow + c / factor] += img[r * w + c] / norm;
            }
        }
    }
    Tensor::new(vec![n, oh * ow], out)
}
