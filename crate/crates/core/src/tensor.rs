//! Dense video tensors, binary masks and search directions.
//!
//! Every tensor is stored row-major in `(t, w, h, c)` order on the 0–255
//! pixel scale. Frame indices are 0-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a video: frames × width × height × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub w: usize,
    pub h: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(t: usize, w: usize, h: usize, c: usize) -> Result<Self> {
        let dims = Dims { t, w, h, c };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.w == 0 || self.h == 0 || self.c == 0 {
            return Err(Error::InvalidDims(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.t * self.w * self.h * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries per frame (`w·h·c`).
    pub fn frame_len(&self) -> usize {
        self.w * self.h * self.c
    }

    /// Spatial positions per frame (`w·h`).
    pub fn pixels_per_frame(&self) -> usize {
        self.w * self.h
    }

    #[inline]
    pub fn index(&self, t: usize, w: usize, h: usize, c: usize) -> usize {
        ((t * self.w + w) * self.h + h) * self.c + c
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.t, self.w, self.h, self.c]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.t, self.w, self.h, self.c)
    }
}

/// Class identifier in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Dense real tensor with the shape of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidDims(format!(
                "data length {} does not match dims {dims} ({} entries)",
                data.len(),
                dims.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(VideoTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        VideoTensor { dims, data: vec![value; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.t {
            for w in 0..dims.w {
                for h in 0..dims.h {
                    for c in 0..dims.c {
                        data.push(f(t, w, h, c));
                    }
                }
            }
        }
        VideoTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, t: usize, w: usize, h: usize, c: usize) -> f64 {
        self.data[self.dims.index(t, w, h, c)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        VideoTensor { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn check_shape(&self, other: Dims) -> Result<()> {
        if self.dims != other {
            return Err(Error::ShapeMismatch { expected: self.dims, actual: other });
        }
        Ok(())
    }

    pub fn add(&self, other: &VideoTensor) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &VideoTensor) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &VideoTensor) -> Result<Self> {
        self.check_shape(other.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        Ok(VideoTensor { dims: self.dims, data })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn dot(&self, other: &VideoTensor) -> Result<f64> {
        self.check_shape(other.dims)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Elementwise product with a binary mask; entries where the mask is 0
    /// become exactly 0.
    pub fn apply_mask(&self, mask: &BinaryMask) -> Result<Self> {
        self.check_shape(mask.dims)?;
        let data = self
            .data
            .iter()
            .zip(&mask.data)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        Ok(VideoTensor { dims: self.dims, data })
    }

    /// Unit-norm copy of this tensor.
    pub fn normalize(&self) -> Result<Direction> {
        normalize(self)
    }

    /// Clamp every entry to the 0–255 pixel range.
    pub fn clamp_pixels(&self) -> Self {
        self.map(|v| v.clamp(0.0, 255.0))
    }
}

/// Euclidean norm of a slice.
pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Returns `v / ‖v‖`, or [`Error::ZeroDirection`] if `v` is identically zero.
pub fn normalize(v: &VideoTensor) -> Result<Direction> {
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::ZeroDirection);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(Direction(v.map(|x| x / norm)))
}

/// Search direction: a non-zero, finite tensor congruent to the video.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(VideoTensor);

impl Direction {
    pub fn new(tensor: VideoTensor) -> Result<Self> {
        if tensor.is_zero() {
            return Err(Error::ZeroDirection);
        }
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Direction(tensor))
    }

    pub fn as_tensor(&self) -> &VideoTensor {
        &self.0
    }

    pub fn into_tensor(self) -> VideoTensor {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims
    }

    pub fn norm(&self) -> f64 {
        self.0.l2_norm()
    }

    pub fn normalized(&self) -> Direction {
        // non-zero by construction
        normalize(&self.0).expect("direction invariant: non-zero")
    }
}

/// `{0,1}` tensor selecting perturbed positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn ones(dims: Dims) -> Self {
        BinaryMask { dims, data: vec![true; dims.len()] }
    }

    pub fn zeros(dims: Dims) -> Self {
        BinaryMask { dims, data: vec![false; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.t {
            for w in 0..dims.w {
                for h in 0..dims.h {
                    for c in 0..dims.c {
                        data.push(f(t, w, h, c));
                    }
                }
            }
        }
        BinaryMask { dims, data }
    }

    pub fn from_bools(dims: Dims, data: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidDims(format!(
                "mask length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(BinaryMask { dims, data })
    }

    /// Interpret a tensor whose entries are exactly 0.0 or 1.0 as a mask.
    pub fn from_tensor(tensor: &VideoTensor) -> Result<Self> {
        let data = tensor
            .as_slice()
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                _ => Err(Error::NotBinary),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinaryMask { dims: tensor.dims, data })
    }

    pub fn to_tensor(&self) -> VideoTensor {
        VideoTensor {
            dims: self.dims,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, t: usize, w: usize, h: usize, c: usize) -> bool {
        self.data[self.dims.index(t, w, h, c)]
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn frame_ones(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&b| b).count()
    }

    /// Copy with every entry of frame `t` cleared.
    pub fn del_frame(&self, t: usize) -> Result<Self> {
        if t >= self.dims.t {
            return Err(Error::FrameOutOfRange { frame: t, frames: self.dims.t });
        }
        let mut out = self.clone();
        let n = self.dims.frame_len();
        out.data[t * n..(t + 1) * n].iter_mut().for_each(|b| *b = false);
        Ok(out)
    }

    /// Number of frames with at least one selected entry. A partially
    /// masked frame counts as one key frame.
    pub fn key_frame_count(&self) -> usize {
        (0..self.dims.t).filter(|&t| self.frame(t).iter().any(|&b| b)).count()
    }

    /// Indices of frames holding at least one selected entry.
    pub fn key_frames(&self) -> Vec<usize> {
        (0..self.dims.t).filter(|&t| self.frame(t).iter().any(|&b| b)).collect()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch { expected: self.dims, actual: other.dims });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(BinaryMask { dims: self.dims, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(t: usize, w: usize, h: usize, c: usize) -> Dims {
        Dims::new(t, w, h, c).unwrap()
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Dims::new(0, 1, 1, 1).is_err());
        assert!(Dims::new(1, 1, 0, 1).is_err());
    }

    #[test]
    fn row_major_layout() {
        let d = dims(2, 3, 4, 5);
        assert_eq!(d.index(0, 0, 0, 1), 1);
        assert_eq!(d.index(0, 0, 1, 0), 5);
        assert_eq!(d.index(0, 1, 0, 0), 20);
        assert_eq!(d.index(1, 0, 0, 0), 60);
        let v = VideoTensor::from_fn(d, |t, w, h, c| d.index(t, w, h, c) as f64);
        assert!(v.as_slice().iter().enumerate().all(|(i, &x)| x == i as f64));
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        let d = dims(1, 1, 1, 2);
        assert!(matches!(VideoTensor::new(d, vec![1.0, f64::NAN]), Err(Error::NonFinite)));
        assert!(VideoTensor::new(d, vec![1.0]).is_err());
    }

    #[test]
    fn l2_norm_cases() {
        let d = dims(2, 1, 1, 1);
        assert_eq!(VideoTensor::zeros(dims(3, 2, 2, 1)).l2_norm(), 0.0);
        let mut one_hot = vec![0.0; 12];
        one_hot[7] = 3.0;
        assert_eq!(VideoTensor::new(dims(3, 2, 2, 1), one_hot).unwrap().l2_norm(), 3.0);
        assert_eq!(VideoTensor::new(d, vec![3.0, 4.0]).unwrap().l2_norm(), 5.0);
    }

    #[test]
    fn normalize_cases() {
        let d = dims(4, 1, 1, 1);
        let unit = VideoTensor::new(d, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(normalize(&unit).unwrap().as_tensor(), &unit);

        let v = VideoTensor::new(d, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let n = normalize(&v).unwrap();
        let expected = [0.6, 0.8, 0.0, 0.0];
        for (a, b) in n.as_tensor().as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n.norm() - 1.0).abs() < 1e-9);

        assert!(matches!(normalize(&VideoTensor::zeros(d)), Err(Error::ZeroDirection)));
        assert!(matches!(Direction::new(VideoTensor::zeros(d)), Err(Error::ZeroDirection)));
    }

    #[test]
    fn apply_mask_cases() {
        let d = dims(3, 2, 2, 2);
        let v = VideoTensor::from_fn(d, |t, w, h, c| (t * 8 + w * 4 + h * 2 + c) as f64 + 1.0);
        assert_eq!(v.apply_mask(&BinaryMask::ones(d)).unwrap(), v);
        assert!(v.apply_mask(&BinaryMask::zeros(d)).unwrap().is_zero());

        let m = BinaryMask::ones(d).del_frame(0).unwrap();
        let out = v.apply_mask(&m).unwrap();
        assert!(out.frame(0).iter().all(|&x| x == 0.0));
        assert_eq!(out.frame(1), v.frame(1));
        assert_eq!(out.frame(2), v.frame(2));

        let other = BinaryMask::ones(dims(3, 2, 2, 1));
        assert!(matches!(v.apply_mask(&other), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn del_frame_cases() {
        let d = dims(4, 2, 2, 1);
        let m = BinaryMask::ones(d);
        let m0 = m.del_frame(0).unwrap();
        assert_eq!(m0.frame_ones(0), 0);
        assert!((1..4).all(|t| m0.frame_ones(t) == 4));
        assert_eq!(m0.del_frame(0).unwrap(), m0);
        assert_eq!(
            m.del_frame(1).unwrap().del_frame(2).unwrap(),
            m.del_frame(2).unwrap().del_frame(1).unwrap()
        );
        assert!(matches!(m.del_frame(4), Err(Error::FrameOutOfRange { frame: 4, frames: 4 })));
    }

    #[test]
    fn key_frame_count_cases() {
        let d = dims(16, 2, 2, 1);
        assert_eq!(BinaryMask::ones(d).key_frame_count(), 16);
        assert_eq!(BinaryMask::zeros(d).key_frame_count(), 0);
        let partial = BinaryMask::from_fn(d, |t, w, h, _| (t == 2 || t == 5) && w == 0 && h == 1);
        assert_eq!(partial.key_frame_count(), 2);
        assert_eq!(partial.key_frames(), vec![2, 5]);
    }

    #[test]
    fn mask_tensor_conversion() {
        let d = dims(2, 2, 1, 1);
        let m = BinaryMask::from_fn(d, |t, w, _, _| t != w);
        assert_eq!(BinaryMask::from_tensor(&m.to_tensor()).unwrap(), m);
        let bad = VideoTensor::new(d, vec![0.0, 0.5, 1.0, 1.0]).unwrap();
        assert!(matches!(BinaryMask::from_tensor(&bad), Err(Error::NotBinary)));
    }

    fn tensor_and_mask() -> impl Strategy<Value = (VideoTensor, BinaryMask)> {
        (1usize..4, 1usize..4, 1usize..4, 1usize..3).prop_flat_map(|(t, w, h, c)| {
            let d = Dims { t, w, h, c };
            (
                proptest::collection::vec(-300.0f64..300.0, d.len()),
                proptest::collection::vec(any::<bool>(), d.len()),
            )
                .prop_map(move |(v, m)| {
                    (VideoTensor::new(d, v).unwrap(), BinaryMask::from_bools(d, m).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn apply_mask_is_idempotent((v, m) in tensor_and_mask()) {
            let once = v.apply_mask(&m).unwrap();
            prop_assert_eq!(once.apply_mask(&m).unwrap(), once);
        }

        #[test]
        fn normalize_is_scale_invariant((v, _m) in tensor_and_mask(), c in 1e-3f64..1e3) {
            prop_assume!(!v.is_zero());
            let a = normalize(&v).unwrap();
            let b = normalize(&v.scale(c)).unwrap();
            for (x, y) in a.as_tensor().as_slice().iter().zip(b.as_tensor().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn del_frame_never_increases_key_frames((_v, m) in tensor_and_mask(), t in 0usize..4) {
            prop_assume!(t < m.dims().t);
            let before = m.key_frame_count();
            let after = m.del_frame(t).unwrap().key_frame_count();
            let had_entries = m.frame_ones(t) > 0;
            prop_assert!(after <= before);
            prop_assert_eq!(after < before, had_entries);
        }
    }
}
