//! Datasets for the simulator: the MNIST IDX container format and a seeded
//! synthetic fallback, plus the index partitioning that deals examples out to
//! clients.

use crate::rng::RandomStream;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic in {what} file: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("image file announces {images} items but label file announces {labels}")]
    CountMismatch { images: u32, labels: u32 },
    #[error("{what} file truncated: need {need} bytes, have {have}")]
    Truncated {
        what: &'static str,
        need: usize,
        have: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("requested {requested} examples, file holds {available}")]
    NotEnoughExamples { requested: usize, available: usize },
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Labeled vectors, pixels scaled to [0, 1]. Images are stored flat in f32;
/// the model promotes them on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    /// Parses an IDX image/label file pair, keeping at most `limit` examples.
    ///
    /// Image files: u32 big-endian magic 0x00000803, item count, row count,
    /// column count, then count*rows*cols raw u8 pixels. Label files: magic
    /// 0x00000801, item count, then count u8 labels.
    pub fn from_idx_bytes(
        image_bytes: &[u8],
        label_bytes: &[u8],
        limit: usize,
    ) -> Result<Self, DataError> {
        if image_bytes.len() < 16 {
            return Err(DataError::Truncated {
                what: "image",
                need: 16,
                have: image_bytes.len(),
            });
        }
        if label_bytes.len() < 8 {
            return Err(DataError::Truncated {
                what: "label",
                need: 8,
                have: label_bytes.len(),
            });
        }
        let image_magic = be_u32(image_bytes, 0);
        if image_magic != IMAGE_MAGIC {
            return Err(DataError::BadMagic {
                what: "image",
                expected: IMAGE_MAGIC,
                found: image_magic,
            });
        }
        let label_magic = be_u32(label_bytes, 0);
        if label_magic != LABEL_MAGIC {
            return Err(DataError::BadMagic {
                what: "label",
                expected: LABEL_MAGIC,
                found: label_magic,
            });
        }
        let image_count = be_u32(image_bytes, 4);
        let label_count = be_u32(label_bytes, 4);
        if image_count != label_count {
            return Err(DataError::CountMismatch {
                images: image_count,
                labels: label_count,
            });
        }
        let rows = be_u32(image_bytes, 8) as usize;
        let cols = be_u32(image_bytes, 12) as usize;
        let dim = rows * cols;
        let available = image_count as usize;
        if limit > available {
            return Err(DataError::NotEnoughExamples {
                requested: limit,
                available,
            });
        }
        let count = limit;
        let need = 16 + available * dim;
        if image_bytes.len() < need {
            return Err(DataError::Truncated {
                what: "image",
                need,
                have: image_bytes.len(),
            });
        }
        let need = 8 + available;
        if label_bytes.len() < need {
            return Err(DataError::Truncated {
                what: "label",
                need,
                have: label_bytes.len(),
            });
        }
        let classes = 10;
        let labels = label_bytes[8..8 + count].to_vec();
        for &l in &labels {
            if usize::from(l) >= classes {
                return Err(DataError::LabelOutOfRange { label: l, classes });
            }
        }
        let images = image_bytes[16..16 + count * dim]
            .iter()
            .map(|&p| f32::from(p) / 255.0)
            .collect();
        Ok(Dataset {
            dim,
            classes,
            images,
            labels,
        })
    }

    pub fn from_idx_files(
        image_path: &Path,
        label_path: &Path,
        limit: usize,
    ) -> Result<Self, DataError> {
        let read = |path: &Path| {
            std::fs::read(path).map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Dataset::from_idx_bytes(&read(image_path)?, &read(label_path)?, limit)
    }

    /// Gaussian class clusters: one random unit-scale center per class,
    /// examples scattered around the centers with the given spread, classes
    /// assigned round-robin.
    pub fn synthetic(
        count: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        stream: &mut RandomStream,
    ) -> Self {
        let mut centers = vec![0.0f64; classes * dim];
        stream.fill_normal(&mut centers);
        let mut images = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        let mut noise = vec![0.0f64; dim];
        for i in 0..count {
            let class = i % classes;
            stream.fill_normal(&mut noise);
            for (c, z) in centers[class * dim..(class + 1) * dim].iter().zip(&noise) {
                images.push((c + spread * z) as f32);
            }
            labels.push(class as u8);
        }
        Dataset {
            dim,
            classes,
            images,
            labels,
        }
    }

    /// Copies out the examples [start, start + count).
    pub fn take(&self, start: usize, count: usize) -> Result<Self, DataError> {
        if start + count > self.len() {
            return Err(DataError::NotEnoughExamples {
                requested: start + count,
                available: self.len(),
            });
        }
        Ok(Dataset {
            dim: self.dim,
            classes: self.classes,
            images: self.images[start * self.dim..(start + count) * self.dim].to_vec(),
            labels: self.labels[start..start + count].to_vec(),
        })
    }
}

/// Looks for the canonical MNIST file names under `dir` (both the hyphenated
/// and the dotted extension variants) and loads `train_limit` training and
/// `test_limit` test examples.
pub fn load_mnist(
    dir: &Path,
    train_limit: usize,
    test_limit: usize,
) -> Result<(Dataset, Dataset), DataError> {
    let find = |names: &[&str]| -> std::path::PathBuf {
        for name in names {
            let p = dir.join(name);
            if p.exists() {
                return p;
            }
        }
        dir.join(names[0])
    };
    let train_images = find(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"]);
    let train_labels = find(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]);
    let test_images = find(&["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]);
    let test_labels = find(&["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]);
    Ok((
        Dataset::from_idx_files(&train_images, &train_labels, train_limit)?,
        Dataset::from_idx_files(&test_images, &test_labels, test_limit)?,
    ))
}

/// Deals example indices out to `clients` equal shares (earlier clients absorb
/// the remainder one example each). With `iid` the indices are shuffled first;
/// otherwise they are sorted by label, giving each client a label-skewed
/// shard.
pub fn partition_indices(
    data: &Dataset,
    clients: usize,
    iid: bool,
    stream: &mut RandomStream,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    if iid {
        for i in (1..order.len()).rev() {
            let j = stream.uniform_int(i as u64 + 1) as usize;
            order.swap(i, j);
        }
    } else {
        order.sort_by_key(|&i| (data.label(i), i));
    }
    let base = data.len() / clients;
    let extra = data.len() % clients;
    let mut shares = Vec::with_capacity(clients);
    let mut cursor = 0;
    for k in 0..clients {
        let size = base + usize::from(k < extra);
        shares.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    shares
}
