//! IDX binary parsing (the MNIST container format).
//!
//! Big-endian magic: `0x00000801` for unsigned-byte label vectors,
//! `0x00000803` for unsigned-byte image stacks. Dimension sizes follow as
//! big-endian u32, then the payload bytes. Image stacks flatten to
//! `(n, rows*cols)` with pixels scaled to `[0, 1]`; label vectors stay raw
//! as `(n)` class values. Files ending in `.gz` are decompressed
//! transparently.

use super::{Dataset, LabelKind};
use crate::{Error, Result, Tensor};
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;
/// Anything bigger than this is not a desk-scale dataset.
const MAX_ELEMENTS: u64 = 1 << 31;

struct IdxReader<R> {
    inner: R,
    offset: u64,
    path: std::path::PathBuf,
}

impl<R: Read> IdxReader<R> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::IdxParse {
            path: self.path.clone(),
            offset: self.offset,
            detail: detail.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) => Err(self.err(format!("truncated read of {} bytes: {e}", buf.len()))),
        }
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf)?;
        Ok(u32::from_be_bytes(buf))
    }
}

/// Parse one IDX file into a tensor (see module docs for shapes/scaling).
pub fn load_idx(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut r = IdxReader {
        inner: reader,
        offset: 0,
        path: path.to_path_buf(),
    };

    let magic = r.read_u32_be()?;
    let dims = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => {
            return Err(Error::IdxParse {
                path: path.to_path_buf(),
                offset: 0,
                detail: format!(
                    "bad magic {other:#010x}; want {MAGIC_LABELS:#010x} (labels) or {MAGIC_IMAGES:#010x} (images)"
                ),
            })
        }
    };

    let mut sizes = Vec::with_capacity(dims);
    let mut total: u64 = 1;
    for _ in 0..dims {
        let s = r.read_u32_be()? as u64;
        total = total.checked_mul(s).ok_or_else(|| r.err("dimension overflow"))?;
        if total > MAX_ELEMENTS {
            return Err(r.err(format!("dimension overflow: {total} elements")));
        }
        sizes.push(s as usize);
    }

    let mut payload = vec![0u8; total as usize];
    r.read_exact(&mut payload)?;
    // A well-formed file ends exactly here.
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| r.err(e.to_string()))? != 0 {
        return Err(r.err("trailing bytes after payload"));
    }

    match magic {
        MAGIC_LABELS => Ok(Tensor::new(
            vec![sizes[0]],
            payload.iter().map(|&b| b as f64).collect(),
        )?),
        _ => {
            let (n, rows, cols) = (sizes[0], sizes[1], sizes[2]);
            Ok(Tensor::new(
                vec![n, rows * cols],
                payload.iter().map(|&b| b as f64 / 255.0).collect(),
            )?)
        }
    }
}

fn one_hot(values: &Tensor, classes: usize) -> Result<Tensor> {
    let n = values.len();
    let mut out = Tensor::zeros(&[n, classes]);
    for (i, &v) in values.data().iter().enumerate() {
        let c = v as usize;
        if v.fract() != 0.0 || c >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {v} at row {i} outside 0..{classes}"
            )));
        }
        out.data_mut()[i * classes + c] = 1.0;
    }
    Ok(out)
}

/// Load the four standard MNIST files from a directory (gz or raw), giving
/// `(train, test)` with one-hot 10-class labels.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let pick = |stem: &str| -> std::path::PathBuf {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    let load_pair = |images: &str, labels: &str, tag: &str| -> Result<Dataset> {
        let features = load_idx(pick(images))?;
        let raw_labels = load_idx(pick(labels))?;
        if features.rows() != raw_labels.len() {
            return Err(Error::shape(
                "load_mnist",
                format!("{} images vs {} labels", features.rows(), raw_labels.len()),
            ));
        }
        Dataset::new(
            features,
            one_hot(&raw_labels, 10)?,
            LabelKind::OneHot,
            tag,
            format!("mnist {tag} ({})", dir.display()),
        )
    };
    Ok((
        load_pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train")?,
        load_pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test")?,
    ))
}
