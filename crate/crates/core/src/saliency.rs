//! Spectral-residual saliency and top-φ pixel selection.
//!
//! Each frame is reduced to grayscale (channel mean), resized so its longer
//! side is 64, and passed through the spectral-residual transform: the log
//! amplitude spectrum minus its 3×3 local average, recombined with the
//! original phase, inverted, squared and Gaussian-smoothed. The map is then
//! resized back to the frame and the `⌈φ·W·H⌉` highest-scoring pixels are
//! kept.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Dims, VideoTensor};

/// Longer side of the internal working resolution.
pub const INTERNAL_SIZE: usize = 64;
pub const BOX_SIZE: usize = 3;
pub const GAUSSIAN_SIGMA: f64 = 2.5;
pub const LOG_EPSILON: f64 = 1e-8;
/// Spectral bins below this fraction of the peak amplitude are treated as nulls.
pub const NULL_FLOOR: f64 = 1e-10;
/// Smallest accepted frame side.
pub const MIN_SIDE: usize = 8;

/// Per-frame saliency scores, row-major over `(w, h)`, normalised to a
/// maximum of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    /// The frame was constant; `data` is uniform.
    pub degenerate: bool,
}

impl SaliencyMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        SaliencyMap { width, height, data: vec![1.0; width * height], degenerate: true }
    }

    pub fn get(&self, w: usize, h: usize) -> f64 {
        self.data[w * self.height + h]
    }
}

/// Salient-area ratio `φ ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct SalienceRatio(f64);

impl SalienceRatio {
    pub const FULL: SalienceRatio = SalienceRatio(1.0);

    pub fn new(phi: f64) -> Result<Self> {
        if !(phi > 0.0 && phi <= 1.0) {
            return Err(Error::InvalidParameter(format!("phi must be in (0, 1], got {phi}")));
        }
        Ok(SalienceRatio(phi))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Number of positions selected out of `n`.
    pub fn count(self, n: usize) -> usize {
        // the epsilon keeps products like 0.5·4 from rounding up to 3
        let k = (self.0 * n as f64 - 1e-9).ceil();
        (k.max(1.0) as usize).min(n)
    }
}

impl<'de> Deserialize<'de> for SalienceRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        SalienceRatio::new(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Saliency of one frame laid out as `(w, h, c)` row-major.
pub fn spectral_residual(frame: &[f64], width: usize, height: usize, channels: usize) -> Result<SaliencyMap> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::InvalidDims(format!(
            "saliency needs frames of at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
        )));
    }
    if channels == 0 || frame.len() != width * height * channels {
        return Err(Error::InvalidDims(format!(
            "frame has {} values, expected {width}x{height}x{channels}",
            frame.len()
        )));
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let gray: Vec<f64> = frame.chunks_exact(channels).map(|px| px.iter().sum::<f64>() / channels as f64).collect();
    let (lo, hi) = gray.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo == 0.0 {
        return Ok(SaliencyMap::uniform(width, height));
    }

    let scale = INTERNAL_SIZE as f64 / width.max(height) as f64;
    let rw = ((width as f64 * scale).round() as usize).max(1);
    let rh = ((height as f64 * scale).round() as usize).max(1);
    let mut small = resize_bilinear(&gray, width, height, rw, rh);
    // Centre the image: a constant offset only moves the DC coefficient, which
    // is dropped below, so the map is independent of global brightness.
    let mean = small.iter().sum::<f64>() / small.len() as f64;
    small.iter_mut().for_each(|v| *v -= mean);

    let mut spectrum: Vec<Complex64> = small.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, rw, rh, false);

    // Bins at rounding-noise level (exact spectral nulls, and the DC term
    // removed above) carry no amplitude; leaving them in would put ln(ε) into
    // the local average and swamp the residual of their neighbours. They are
    // excluded from the average and contribute nothing to the reconstruction.
    let max_amp = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let valid: Vec<f64> = spectrum
        .iter()
        .enumerate()
        .map(|(i, z)| if i != 0 && z.norm() > NULL_FLOOR * max_amp { 1.0 } else { 0.0 })
        .collect();
    if valid.iter().all(|&v| v == 0.0) {
        return Ok(SaliencyMap::uniform(width, height));
    }
    let log_amp: Vec<f64> =
        spectrum.iter().zip(&valid).map(|(z, &v)| v * (z.norm() + LOG_EPSILON).ln()).collect();
    let sum = box_filter(&log_amp, rw, rh, BOX_SIZE);
    let weight = box_filter(&valid, rw, rh, BOX_SIZE);

    for (i, z) in spectrum.iter_mut().enumerate() {
        *z = if valid[i] == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            // `weight > 0` because the bin itself is valid
            let residual = log_amp[i] - sum[i] / weight[i];
            Complex64::from_polar(residual.exp(), z.arg())
        };
    }
    fft2(&mut spectrum, rw, rh, true);
    let n = (rw * rh) as f64;
    let energy: Vec<f64> = spectrum.iter().map(|z| (z / n).norm_sqr()).collect();
    let blurred = gaussian_blur(&energy, rw, rh, GAUSSIAN_SIGMA);
    let mut data = resize_bilinear(&blurred, rw, rh, width, height);

    data.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = data.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Ok(SaliencyMap::uniform(width, height));
    }
    data.iter_mut().for_each(|v| *v /= max);
    Ok(SaliencyMap { width, height, data, degenerate: false })
}

/// The `⌈φ·W·H⌉` highest-scoring positions; ties go to the lower row-major index.
pub fn select_salient(map: &SaliencyMap, phi: SalienceRatio) -> Vec<bool> {
    let n = map.data.len();
    let k = phi.count(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.data[b].total_cmp(&map.data[a]).then(a.cmp(&b)));
    let mut selected = vec![false; n];
    for &i in &order[..k] {
        selected[i] = true;
    }
    selected
}

/// One saliency map per frame.
pub fn saliency_maps(x: &VideoTensor) -> Result<Vec<SaliencyMap>> {
    let d = x.dims();
    (0..d.t).into_par_iter().map(|t| spectral_residual(x.frame(t), d.w, d.h, d.c)).collect()
}

/// Spatial mask of `x`: every channel of the selected pixels in every frame.
pub fn spatial_mask(x: &VideoTensor, phi: SalienceRatio) -> Result<BinaryMask> {
    let d = x.dims();
    if phi == SalienceRatio::FULL {
        return Ok(BinaryMask::ones(d));
    }
    let maps = saliency_maps(x)?;
    Ok(mask_from_maps(d, &maps, phi))
}

/// Combine per-frame selections into a channel-coherent mask.
pub fn mask_from_maps(d: Dims, maps: &[SaliencyMap], phi: SalienceRatio) -> BinaryMask {
    let selections: Vec<Vec<bool>> = maps.iter().map(|m| select_salient(m, phi)).collect();
    BinaryMask::from_fn(d, |t, w, h, _| selections[t][w * d.h + h])
}

/// Stack per-frame maps into a `T×W×H×1` tensor for export.
pub fn maps_to_tensor(maps: &[SaliencyMap]) -> Result<VideoTensor> {
    let first = maps.first().ok_or(Error::EmptyBatch)?;
    let d = Dims::new(maps.len(), first.width, first.height, 1)?;
    VideoTensor::new(d, maps.iter().flat_map(|m| m.data.iter().copied()).collect())
}

/// Bilinear resize with half-pixel centres and edge clamping.
fn resize_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let taps = |dst: usize, s: usize, d: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * s as f64 / d as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(dw * dh);
    for w in 0..dw {
        let (w0, w1, fw) = taps(w, sw, dw);
        for h in 0..dh {
            let (h0, h1, fh) = taps(h, sh, dh);
            let at = |a: usize, b: usize| src[a * sh + b];
            let top = at(w0, h0) * (1.0 - fh) + at(w0, h1) * fh;
            let bottom = at(w1, h0) * (1.0 - fh) + at(w1, h1) * fh;
            out.push(top * (1.0 - fw) + bottom * fw);
        }
    }
    out
}

/// In-place 2-D DFT of a `rows × cols` row-major buffer. The inverse is
/// unnormalised.
fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = |len: usize, planner: &mut FftPlanner<f64>| -> Arc<dyn Fft<f64>> {
        if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        }
    };
    let row_fft = plan(cols, &mut planner);
    row_fft.process(data);
    let mut transposed = transpose(data, rows, cols);
    let col_fft = plan(rows, &mut planner);
    col_fft.process(&mut transposed);
    data.copy_from_slice(&transpose(&transposed, cols, rows));
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Index into `0..len` with mirror reflection that excludes the edge
/// (`dcb|abcd|cba`).
fn reflect101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

fn separable(values: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; values.len()];
    for i in 0..rows {
        for j in 0..cols {
            tmp[i * cols + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * values[i * cols + reflect101(j as isize + k as isize - r, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * tmp[reflect101(i as isize + k as isize - r, rows) * cols + j])
                .sum();
        }
    }
    out
}

fn box_filter(values: &[f64], rows: usize, cols: usize, size: usize) -> Vec<f64> {
    separable(values, rows, cols, &vec![1.0 / size as f64; size])
}

fn gaussian_blur(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|v| v / total).collect();
    separable(values, rows, cols, &kernel)
}
