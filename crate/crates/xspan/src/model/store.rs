//! Flat named tensor storage.
//!
//! All parameters (and their gradients and optimizer moments) live in one
//! contiguous buffer; a `Layout` maps tensor names to shapes and element
//! offsets. On disk a store is a JSON manifest (name, shape, dtype, byte
//! offset per tensor, in layout order) plus a single little-endian blob of
//! f32 values; save → load round-trips bit-exactly.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the buffer.
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    index: HashMap<String, usize>,
    total: usize,
}

impl Layout {
    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &TensorSpec> {
        self.specs.iter()
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Name of the tensor owning flat element index `i`.
    pub fn name_at(&self, i: usize) -> Option<&str> {
        self.specs
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.len())
            .map(|s| s.name.as_str())
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, shape: &[usize]) {
        let spec = TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
    }

    pub fn build(self) -> Layout {
        let index = self
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Layout {
            specs: self.specs,
            index,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorStore<F> {
    layout: Arc<Layout>,
    data: Vec<F>,
}

impl<F: Scalar> TensorStore<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![F::zero(); layout.total_len()];
        TensorStore { layout, data }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn fill(&mut self, v: F) {
        self.data.fill(v);
    }

    fn spec(&self, name: &str) -> &TensorSpec {
        self.layout
            .spec(name)
            .unwrap_or_else(|| panic!("unknown tensor {name:?}"))
    }

    pub fn view1(&self, name: &str) -> ArrayView1<'_, F> {
        let s = self.spec(name);
        assert_eq!(s.shape.len(), 1, "tensor {name} is not rank 1");
        ArrayView1::from_shape(s.shape[0], &self.data[s.offset..s.offset + s.len()]).unwrap()
    }

    pub fn view2(&self, name: &str) -> ArrayView2<'_, F> {
        let s = self.spec(name);
        assert_eq!(s.shape.len(), 2, "tensor {name} is not rank 2");
        ArrayView2::from_shape(
            (s.shape[0], s.shape[1]),
            &self.data[s.offset..s.offset + s.len()],
        )
        .unwrap()
    }

    pub fn view1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, F> {
        let s = self.spec(name).clone();
        ArrayViewMut1::from_shape(s.shape[0], &mut self.data[s.offset..s.offset + s.len()])
            .unwrap()
    }

    pub fn view2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, F> {
        let s = self.spec(name).clone();
        ArrayViewMut2::from_shape(
            (s.shape[0], s.shape[1]),
            &mut self.data[s.offset..s.offset + s.len()],
        )
        .unwrap()
    }

    /// Adds `delta` into the named rank-2 tensor.
    pub fn add2(&mut self, name: &str, delta: &ndarray::ArrayView2<'_, F>) {
        let mut v = self.view2_mut(name);
        v += delta;
    }

    /// Adds `delta` into the named rank-1 tensor.
    pub fn add1(&mut self, name: &str, delta: &ndarray::ArrayView1<'_, F>) {
        let mut v = self.view1_mut(name);
        v += delta;
    }

    /// Copies every tensor that exists in both layouts from `other`.
    pub fn copy_common_from(&mut self, other: &TensorStore<F>) {
        let names: Vec<String> = self.layout.iter().map(|s| s.name.clone()).collect();
        for name in names {
            if let (Some(dst), Some(src)) = (self.layout.spec(&name), other.layout.spec(&name)) {
                if dst.shape == src.shape {
                    let (d_off, len) = (dst.offset, dst.len());
                    let s_off = src.offset;
                    self.data[d_off..d_off + len]
                        .copy_from_slice(&other.data[s_off..s_off + len]);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    total_len: usize,
    tensors: Vec<ManifestTensor>,
}

/// Writes the manifest and the little-endian f32 blob.
pub fn save_store(store: &TensorStore<f32>, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let manifest = Manifest {
        dtype: "f32".to_string(),
        total_len: store.layout().total_len(),
        tensors: store
            .layout()
            .iter()
            .map(|s| ManifestTensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                dtype: "f32".to_string(),
                byte_offset: s.offset * 4,
            })
            .collect(),
    };
    crate::util::write_json(manifest_path, &manifest)?;
    let mut blob = Vec::with_capacity(store.data().len() * 4);
    for v in store.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    crate::util::write_atomic(blob_path, &blob)
}

pub fn load_store(manifest_path: &Path, blob_path: &Path) -> Result<TensorStore<f32>> {
    let manifest: Manifest = crate::util::read_json(manifest_path)?;
    if manifest.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    let mut builder = LayoutBuilder::new();
    for t in &manifest.tensors {
        builder.push(&t.name, &t.shape);
    }
    let layout = builder.build();
    // Manifest offsets must agree with the reconstructed layout.
    for t in &manifest.tensors {
        let spec = layout
            .spec(&t.name)
            .ok_or_else(|| Error::Checkpoint(format!("duplicate tensor {:?}", t.name)))?;
        if spec.offset * 4 != t.byte_offset {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} offset {} disagrees with layout {}",
                t.name,
                t.byte_offset,
                spec.offset * 4
            )));
        }
    }
    if layout.total_len() != manifest.total_len {
        return Err(Error::Checkpoint(format!(
            "manifest total_len {} disagrees with tensor shapes {}",
            manifest.total_len,
            layout.total_len()
        )));
    }
    let blob = std::fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    if blob.len() != layout.total_len() * 4 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest expects {}",
            blob.len(),
            layout.total_len() * 4
        )));
    }
    let data: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(TensorStore {
        layout: Arc::new(layout),
        data,
    })
}
