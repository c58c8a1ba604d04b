// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense `f32` tensors, the handful of kernels the reference model needs, and
//! the named tensor store that backs model weights and activation dumps.
//!
//! Every reduction accumulates in `f64` and rounds once to `f32`, so results do
//! not depend on summation order tricks of the target platform.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    name: Option<String>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite data.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self {
            shape,
            data,
            name: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
            name: None,
        }
    }

    /// One-dimensional tensor over `data`.
    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                op: "dims2",
                left: other.to_vec(),
                right: vec![0, 0],
            }),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        let cols = self.shape.get(1).copied().unwrap_or(1).max(1);
        self.data.chunks_exact(cols)
    }

    /// Byte length of the little-endian payload.
    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Dot product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `out[i] = Σ_j m[i, j] · v[j]` over a row-major `rows × cols` slice.
pub fn matvec_into(m: &[f32], cols: usize, v: &[f32], out: &mut [f32]) {
    debug_assert_eq!(v.len(), cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = dot(row, v) as f32;
    }
}

/// `out[j] = Σ_i m[i, j] · w[i]`, i.e. `mᵀ w`, accumulated in `f64`.
pub fn matvec_t_into(m: &[f32], cols: usize, w: &[f32], out: &mut [f32]) {
    let mut acc = vec![0.0f64; cols];
    for (row, &wi) in m.chunks_exact(cols).zip(w) {
        if wi == 0.0 {
            continue;
        }
        let wi = f64::from(wi);
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += wi * f64::from(x);
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

/// Matrix-vector product `m · v` for `m: [r × c]`, `v: [c]`.
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (rows, cols) = m.dims2()?;
    if v.shape() != [cols] {
        return Err(Error::ShapeMismatch {
            op: "matvec",
            left: m.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; rows];
    matvec_into(m.data(), cols, v.data(), &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matvec"));
    }
    Tensor::vector(out)
}

/// Cosine similarity over raw slices, clamped to `[-1, 1]`.
pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two equally shaped vectors.
pub fn cosine(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    cosine_slices(a.data(), b.data())
}

/// Element type tag of the on-disk container. Only `F32` exists.
pub const DTYPE_F32: &str = "F32";

/// One manifest line: where a tensor lives inside the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// `[begin, end)` byte range relative to the start of the payload.
    pub data_offsets: (u64, u64),
}

/// Named tensors plus free-form string metadata.
///
/// Entries iterate in lexicographic name order, which is also the payload
/// order of the serialized container.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor under a fresh name. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateTensor(name));
        }
        let tensor = tensor.with_name(name.clone());
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::MissingTensor(name.into()))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Payload layout: tensors in name order, packed back to back.
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0u64;
        self.entries
            .iter()
            .map(|(name, t)| {
                let begin = offset;
                offset += t.byte_len() as u64;
                ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data_offsets: (begin, offset),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_matvec(m: &[f32], rows: usize, cols: usize, v: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0f64; rows];
        for j in 0..cols {
            for (i, o) in out.iter_mut().enumerate() {
                *o += f64::from(m[i * cols + j]) * f64::from(v[j]);
            }
        }
        out
    }

    #[test]
    fn identity_matvec() {
        let m = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let v = Tensor::vector(vec![1., 2., 3.]).unwrap();
        assert_eq!(matvec(&m, &v).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn zero_matvec() {
        let m = Tensor::zeros(vec![2, 3]);
        let v = Tensor::vector(vec![4., -5., 6.]).unwrap();
        assert_eq!(matvec(&m, &v).unwrap().data(), &[0., 0.]);
    }

    #[test]
    fn small_matvec() {
        let m = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let v = Tensor::vector(vec![1., 1.]).unwrap();
        assert_eq!(matvec(&m, &v).unwrap().data(), &[3., 7.]);
    }

    #[test]
    fn matvec_shape_mismatch() {
        let m = Tensor::zeros(vec![2, 3]);
        let v = Tensor::vector(vec![1., 1.]).unwrap();
        assert!(matches!(matvec(&m, &v), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn tensor_rejects_bad_shape_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert_eq!(
            Tensor::vector(vec![1.0, f32::NAN]),
            Err(Error::NonFinite("Tensor::new"))
        );
    }

    #[test]
    fn cosine_examples() {
        let v = Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let a = Tensor::vector(vec![1., 0.]).unwrap();
        let b = Tensor::vector(vec![0., 1.]).unwrap();
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        let a = Tensor::vector(vec![1., 1., 0.]).unwrap();
        let b = Tensor::vector(vec![1., 0., 0.]).unwrap();
        assert!((cosine(&a, &b).unwrap() - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_norm() {
        let a = Tensor::vector(vec![0., 0.]).unwrap();
        let b = Tensor::vector(vec![0., 1.]).unwrap();
        assert_eq!(cosine(&a, &b), Err(Error::ZeroNormVector));
        assert_eq!(cosine(&b, &a), Err(Error::ZeroNormVector));
    }

    #[test]
    fn store_rejects_duplicates_and_orders_manifest() {
        let mut s = TensorStore::new();
        s.insert("b", Tensor::zeros(vec![2])).unwrap();
        s.insert("a", Tensor::zeros(vec![3])).unwrap();
        assert!(matches!(
            s.insert("a", Tensor::zeros(vec![1])),
            Err(Error::DuplicateTensor(_))
        ));
        let m = s.manifest();
        assert_eq!(m[0].name, "a");
        assert_eq!(m[0].data_offsets, (0, 12));
        assert_eq!(m[1].data_offsets, (12, 20));
        assert_eq!(s.get("a").unwrap().name(), Some("a"));
    }

    proptest! {
        #[test]
        fn matvec_matches_transposed_loop(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in proptest::collection::vec(-10.0f32..10.0, 64 + 8),
        ) {
            let m = seed[..rows * cols].to_vec();
            let v = seed[64..64 + cols].to_vec();
            let got = matvec(
                &Tensor::matrix(rows, cols, m.clone()).unwrap(),
                &Tensor::vector(v.clone()).unwrap(),
            ).unwrap();
            let want = reference_matvec(&m, rows, cols, &v);
            for (g, w) in got.data().iter().zip(want) {
                let scale = w.abs().max(1.0);
                prop_assert!((f64::from(*g) - w).abs() / scale <= 1e-6);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-5.0f32..5.0, 6),
            b in proptest::collection::vec(-5.0f32..5.0, 6),
            s in 0.01f32..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let ab = cosine_slices(&a, &b).unwrap();
            let ba = cosine_slices(&b, &a).unwrap();
            let scaled: Vec<f32> = a.iter().map(|x| x * s).collect();
            let sab = cosine_slices(&scaled, &b).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-6);
            prop_assert!((ab - sab).abs() <= 1e-6);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
