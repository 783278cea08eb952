//! Two-dimensional DFTs and element-wise operations in the phase domain.
//!
//! Conventions used throughout the crate:
//!
//! - frames are square, `N x N`, row-major, with `N` a power of two;
//! - the x axis runs along columns and the y axis along rows;
//! - the forward DFT is unnormalized, the inverse carries the `1/N^2` factor;
//! - spectra are stored in natural DFT order (bin 0 is DC).
//!
//! A frame shifted circularly by `d`, `next(n) = prev(n - d)`, correlates to a
//! phase grid `e^{+i 2 pi k.d / N}`. Applying a transform multiplies by the
//! conjugate phase, which advances a spectrum by `d`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kinematics::TransformVec;

/// Magnitude below which a cross-power bin is treated as carrying no motion.
pub const PHASE_EPS: f64 = 1e-12;

/// Imaginary residual above which [`idft2`] logs a symmetry warning.
pub const IMAG_RESIDUAL_WARN: f64 = 1e-6;

fn check_size(size: usize) -> Result<()> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(size));
    }
    Ok(())
}

fn check_same(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::SizeMismatch { expected, actual });
    }
    Ok(())
}

/// Signed frequency of DFT bin `k` on an `n`-point axis.
#[inline]
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Real-valued square image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    size: usize,
    values: Vec<f64>,
}

impl Frame {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        check_same(size * size, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame"));
        }
        Ok(Self { size, values })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    /// Builds a frame from `f(row, col)`.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                values.push(f(row, col));
            }
        }
        Self::new(size, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Circular shift by `dx` columns and `dy` rows.
    pub fn circular_shift(&self, dx: isize, dy: isize) -> Frame {
        let n = self.size as isize;
        let mut values = vec![0.0; self.values.len()];
        for row in 0..n {
            for col in 0..n {
                let src_row = (row - dy).rem_euclid(n);
                let src_col = (col - dx).rem_euclid(n);
                values[(row * n + col) as usize] = self.values[(src_row * n + src_col) as usize];
            }
        }
        Frame {
            size: self.size,
            values,
        }
    }

    /// Element-wise clamp into `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> Frame {
        Frame {
            size: self.size,
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    /// `clamp(sum of frames, 0, 1)`, the composite of per-object channels.
    pub fn composite(channels: &[Frame]) -> Result<Frame> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Config("composite of zero channels".into()))?;
        let mut values = vec![0.0; first.values.len()];
        for ch in channels {
            check_same(first.size, ch.size)?;
            for (acc, v) in values.iter_mut().zip(&ch.values) {
                *acc += v;
            }
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Frame {
            size: first.size,
            values,
        })
    }
}

/// Complex `N x N` grid in natural DFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    size: usize,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(size: usize, values: Vec<Complex64>) -> Result<Self> {
        check_size(size)?;
        check_same(size * size, values.len())?;
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Bin at frequency row `ky`, column `kx`.
    pub fn get(&self, ky: usize, kx: usize) -> Complex64 {
        self.values[ky * self.size + kx]
    }
}

/// A translation expressed per frequency: a unit-modulus phase grid plus a
/// non-negative reliability weight for each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTransform {
    size: usize,
    phase: Vec<Complex64>,
    energy: Vec<f64>,
}

impl PhaseTransform {
    /// Builds a transform, checking unit modulus and non-negative energy.
    pub fn new(size: usize, phase: Vec<Complex64>, energy: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        check_same(size * size, phase.len())?;
        check_same(size * size, energy.len())?;
        if phase.iter().any(|p| (p.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::OutOfRange("phase entries must have unit modulus".into()));
        }
        if energy.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::OutOfRange("energy must be finite and non-negative".into()));
        }
        Ok(Self { size, phase, energy })
    }

    pub(crate) fn from_parts(size: usize, phase: Vec<Complex64>, energy: Vec<f64>) -> Self {
        debug_assert_eq!(phase.len(), size * size);
        debug_assert_eq!(energy.len(), size * size);
        Self { size, phase, energy }
    }

    /// The identity transform with unit energy everywhere.
    pub fn identity(size: usize) -> Result<Self> {
        check_size(size)?;
        Ok(Self {
            size,
            phase: vec![Complex64::new(1.0, 0.0); size * size],
            energy: vec![1.0; size * size],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn phase(&self) -> &[Complex64] {
        &self.phase
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    /// Largest `|phase - other.phase|` over all bins.
    pub fn max_phase_deviation(&self, other: &PhaseTransform) -> f64 {
        self.phase
            .iter()
            .zip(&other.phase)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan(size: usize) -> Arc<Plan> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(Default::default);
    let mut guard = plans.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(size)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan {
                forward: planner.plan_fft_forward(size),
                inverse: planner.plan_fft_inverse(size),
            })
        })
        .clone()
}

fn transpose(values: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            values.swap(r * n + c, c * n + r);
        }
    }
}

/// Row transforms, transpose, row transforms, transpose back.
fn fft2_in_place(values: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(values, &mut scratch);
    transpose(values, n);
    fft.process_with_scratch(values, &mut scratch);
    transpose(values, n);
}

/// Unnormalized forward 2D DFT. The DC bin equals the pixel sum.
pub fn dft2(frame: &Frame) -> Spectrum {
    let n = frame.size;
    let mut values: Vec<Complex64> = frame.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut values, n, &plan(n).forward);
    Spectrum { size: n, values }
}

/// Inverse 2D DFT (scaled by `1/N^2`) returning the real part together with
/// the largest discarded imaginary magnitude.
pub fn idft2_with_residual(spectrum: &Spectrum) -> (Frame, f64) {
    let n = spectrum.size;
    let mut values = spectrum.values.clone();
    fft2_in_place(&mut values, n, &plan(n).inverse);
    let scale = 1.0 / (n * n) as f64;
    let mut max_imag = 0.0f64;
    let real = values
        .iter()
        .map(|c| {
            max_imag = max_imag.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    (Frame { size: n, values: real }, max_imag)
}

/// Inverse 2D DFT. Output is not clamped; a warning is logged when the
/// spectrum was not conjugate-symmetric enough to yield a real frame.
pub fn idft2(spectrum: &Spectrum) -> Frame {
    let (frame, residual) = idft2_with_residual(spectrum);
    if residual > IMAG_RESIDUAL_WARN {
        log::warn!("idft2: imaginary residual {residual:.3e} exceeds {IMAG_RESIDUAL_WARN:e}");
    }
    frame
}

/// Normalized cross-power spectrum of two consecutive spectra.
///
/// Bins whose cross-power magnitude falls below [`PHASE_EPS`] get the identity
/// phase and zero energy. Live bins are divided by their exact modulus so every
/// phase entry has unit length.
pub fn phase_correlate(prev: &Spectrum, next: &Spectrum) -> Result<PhaseTransform> {
    check_same(prev.size, next.size)?;
    let (phase, energy) = prev
        .values
        .iter()
        .zip(&next.values)
        .map(|(a, b)| {
            let p = a * b.conj();
            let mag = p.norm();
            if mag < PHASE_EPS {
                (Complex64::new(1.0, 0.0), 0.0)
            } else {
                (p / mag, mag)
            }
        })
        .unzip();
    Ok(PhaseTransform::from_parts(prev.size, phase, energy))
}

/// Advances `spectrum` by the displacement encoded in `t`.
pub fn apply_transform(spectrum: &Spectrum, t: &PhaseTransform) -> Result<Spectrum> {
    check_same(spectrum.size, t.size)?;
    let values = spectrum
        .values
        .iter()
        .zip(&t.phase)
        .map(|(x, p)| x * p.conj())
        .collect();
    Ok(Spectrum {
        size: spectrum.size,
        values,
    })
}

/// Per-axis ramp factor. The Nyquist bin is forced to the sign of its cosine
/// so the ramp stays conjugate-symmetric.
fn axis_ramp(v: f64, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            if n > 1 && k == n / 2 {
                let c = (PI * v).cos();
                Complex64::new(if c < 0.0 { -1.0 } else { 1.0 }, 0.0)
            } else {
                Complex64::from_polar(1.0, 2.0 * PI * signed_frequency(k, n) * v / n as f64)
            }
        })
        .collect()
}

/// Phase ramp that shifts a frame by `v` pixels. Energy is 1 everywhere.
pub fn ramp_from_vec(v: TransformVec, size: usize) -> Result<PhaseTransform> {
    check_size(size)?;
    let half = size as f64 / 2.0;
    if !v.x.is_finite() || !v.y.is_finite() || v.x.abs() >= half || v.y.abs() >= half {
        return Err(Error::OutOfRange(format!(
            "ramp displacement ({}, {}) must lie strictly inside +-{half}",
            v.x, v.y
        )));
    }
    let fx = axis_ramp(v.x, size);
    let fy = axis_ramp(v.y, size);
    let mut phase = Vec::with_capacity(size * size);
    for py in &fy {
        for px in &fx {
            phase.push(py * px);
        }
    }
    Ok(PhaseTransform::from_parts(size, phase, vec![1.0; size * size]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::extract_vec;

    fn impulse(n: usize, row: usize, col: usize) -> Frame {
        Frame::from_fn(n, |r, c| if r == row && c == col { 1.0 } else { 0.0 }).unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> Frame {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Frame::from_fn(n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(Frame::new(6, vec![0.0; 36]), Err(Error::NotPowerOfTwo(6))));
        assert!(matches!(
            Frame::new(4, vec![0.0; 15]),
            Err(Error::SizeMismatch {
                expected: 16,
                actual: 15
            })
        ));
        assert!(Frame::new(2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_frame_has_only_dc() {
        let s = dft2(&Frame::new(4, vec![1.0; 16]).unwrap());
        assert!((s.get(0, 0) - Complex64::new(16.0, 0.0)).norm() < 1e-12);
        for (i, v) in s.values().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i} = {v}");
        }
    }

    #[test]
    fn impulse_at_origin_is_flat() {
        let s = dft2(&impulse(8, 0, 0));
        for v in s.values() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_random_frame() {
        let x = pseudo_random(8, 3);
        let y = idft2(&dft2(&x));
        let err = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let s = Spectrum::new(4, vec![Complex64::default(); 16]).unwrap();
        assert!(idft2(&s).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn impulse_spectrum_inverts_to_impulse() {
        let x = impulse(8, 3, 5);
        let y = idft2(&dft2(&x));
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ramp_keeps_frames_real() {
        let x = pseudo_random(16, 9);
        let t = ramp_from_vec(TransformVec::new(2.37, -5.81), 16).unwrap();
        let (_, residual) = idft2_with_residual(&apply_transform(&dft2(&x), &t).unwrap());
        assert!(residual < 1e-9, "{residual}");
    }

    #[test]
    fn identical_frames_correlate_to_identity() {
        let x = dft2(&pseudo_random(8, 1));
        let t = phase_correlate(&x, &x).unwrap();
        for p in t.phase() {
            assert!((p - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let v = extract_vec(&t);
        assert_eq!((v.x, v.y), (0.0, 0.0));
    }

    #[test]
    fn zero_frames_fall_back_to_identity() {
        let z = dft2(&Frame::zeros(8).unwrap());
        let t = phase_correlate(&z, &z).unwrap();
        assert!(t.energy().iter().all(|e| *e == 0.0));
        assert!(t.phase().iter().all(|p| *p == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let a = dft2(&Frame::zeros(8).unwrap());
        let b = dft2(&Frame::zeros(4).unwrap());
        assert!(matches!(phase_correlate(&a, &b), Err(Error::SizeMismatch { .. })));
        let t = PhaseTransform::identity(4).unwrap();
        assert!(apply_transform(&a, &t).is_err());
    }

    #[test]
    fn identity_transform_is_neutral() {
        let x = dft2(&pseudo_random(8, 5));
        let y = apply_transform(&x, &PhaseTransform::identity(8).unwrap()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_ramp_is_identity() {
        let t = ramp_from_vec(TransformVec::new(0.0, 0.0), 8).unwrap();
        assert_eq!(t, PhaseTransform::identity(8).unwrap());
    }

    #[test]
    fn ramp_range_is_enforced() {
        assert!(ramp_from_vec(TransformVec::new(4.0, 0.0), 8).is_err());
        assert!(ramp_from_vec(TransformVec::new(0.0, -4.0), 8).is_err());
        assert!(ramp_from_vec(TransformVec::new(f64::NAN, 0.0), 8).is_err());
        assert!(ramp_from_vec(TransformVec::new(3.99, -3.99), 8).is_ok());
    }

    #[test]
    fn ramp_phases_have_unit_modulus() {
        let t = ramp_from_vec(TransformVec::new(-1.5, 3.25), 64).unwrap();
        assert!(t.phase().iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn circular_shift_wraps() {
        let x = impulse(4, 0, 3);
        let y = x.circular_shift(1, -1);
        assert_eq!(y.get(3, 0), 1.0);
    }
}
