//! Transformation algebra over phase grids and explicit displacement vectors.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::PhaseTransform;

/// Explicit 2D displacement in pixels per step. `x` runs along columns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformVec {
    pub x: f64,
    pub y: f64,
}

impl TransformVec {
    pub const ZERO: TransformVec = TransformVec { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: TransformVec) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: TransformVec) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Counter-clockwise rotation (in the x/y frame) by `angle` radians.
    pub fn rotated(self, angle: f64) -> TransformVec {
        let (s, c) = angle.sin_cos();
        TransformVec::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Wraps each component into `[-size/2, size/2)`; shifts on an `size`-torus
    /// are unchanged by this.
    pub fn wrapped(self, size: usize) -> TransformVec {
        let n = size as f64;
        let wrap = |v: f64| (v + n / 2.0).rem_euclid(n) - n / 2.0;
        TransformVec::new(wrap(self.x), wrap(self.y))
    }

    pub fn max_abs_diff(self, other: TransformVec) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl Add for TransformVec {
    type Output = TransformVec;
    fn add(self, rhs: TransformVec) -> TransformVec {
        TransformVec::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for TransformVec {
    fn add_assign(&mut self, rhs: TransformVec) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for TransformVec {
    type Output = TransformVec;
    fn sub(self, rhs: TransformVec) -> TransformVec {
        TransformVec::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for TransformVec {
    type Output = TransformVec;
    fn neg(self) -> TransformVec {
        TransformVec::new(-self.x, -self.y)
    }
}

impl Mul<TransformVec> for f64 {
    type Output = TransformVec;
    fn mul(self, rhs: TransformVec) -> TransformVec {
        TransformVec::new(self * rhs.x, self * rhs.y)
    }
}

fn check_same(a: &PhaseTransform, b: &PhaseTransform) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::SizeMismatch {
            expected: a.size(),
            actual: b.size(),
        });
    }
    Ok(())
}

/// Energy-weighted mean phase step between cyclically adjacent bins, turned
/// into a displacement.
///
/// Pairs touching the Nyquist bin of the stepping axis are skipped: a real
/// signal's Nyquist coefficient only carries a sign, so its phase step does not
/// encode a fractional displacement. Each remaining pair is weighted by the
/// energy of its base bin; when that energy is zero everywhere the weights fall
/// back to uniform.
pub fn extract_vec(t: &PhaseTransform) -> TransformVec {
    let n = t.size();
    let nyq = n / 2;
    let phase = t.phase();
    let energy = t.energy();

    let mut weighted = [Complex64::default(); 2];
    let mut uniform = [Complex64::default(); 2];
    let mut total = [0.0f64; 2];
    for ky in 0..n {
        for kx in 0..n {
            let k = ky * n + kx;
            let base_conj = phase[k].conj();
            let w = energy[k];
            if kx != nyq && (kx + 1) % n != nyq {
                let step = phase[ky * n + (kx + 1) % n] * base_conj;
                weighted[0] += w * step;
                uniform[0] += step;
                total[0] += w;
            }
            if ky != nyq && (ky + 1) % n != nyq {
                let step = phase[((ky + 1) % n) * n + kx] * base_conj;
                weighted[1] += w * step;
                uniform[1] += step;
                total[1] += w;
            }
        }
    }
    let scale = n as f64 / (2.0 * PI);
    let angle = |axis: usize| {
        let m = if total[axis] > 0.0 {
            weighted[axis]
        } else {
            uniform[axis]
        };
        scale * m.im.atan2(m.re)
    };
    TransformVec::new(angle(0), angle(1))
}

/// Applies `b` after `a`. Phases multiply; a bin is only as reliable as its
/// weaker operand.
pub fn compose(a: &PhaseTransform, b: &PhaseTransform) -> Result<PhaseTransform> {
    check_same(a, b)?;
    let phase = a.phase().iter().zip(b.phase()).map(|(p, q)| p * q).collect();
    let energy = a.energy().iter().zip(b.energy()).map(|(p, q)| p.min(*q)).collect();
    Ok(PhaseTransform::from_parts(a.size(), phase, energy))
}

pub fn invert(t: &PhaseTransform) -> PhaseTransform {
    PhaseTransform::from_parts(
        t.size(),
        t.phase().iter().map(|p| p.conj()).collect(),
        t.energy().to_vec(),
    )
}

/// Acceleration transform carrying `v_prev` onto `v_next`.
pub fn higher_order(v_prev: &PhaseTransform, v_next: &PhaseTransform) -> Result<PhaseTransform> {
    compose(v_next, &invert(v_prev))
}

/// Motion of `child` with the parent's motion divided out. `None` is the
/// world frame, against which the child is returned unchanged.
pub fn relative_transform(child: &PhaseTransform, parent: Option<&PhaseTransform>) -> Result<PhaseTransform> {
    match parent {
        None => Ok(child.clone()),
        Some(p) => compose(child, &invert(p)),
    }
}

/// Extrapolates with the highest-order term held constant:
/// `v_1 = v + a`, `v_{i+1} = v_i + a`.
pub fn const_order_rollout(v: TransformVec, a: TransformVec, steps: usize) -> Vec<TransformVec> {
    let mut out = Vec::with_capacity(steps);
    let mut cur = v;
    for _ in 0..steps {
        cur += a;
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dft2, phase_correlate, ramp_from_vec, Frame};

    fn ramp(x: f64, y: f64, n: usize) -> PhaseTransform {
        ramp_from_vec(TransformVec::new(x, y), n).unwrap()
    }

    fn impulse(n: usize, row: usize, col: usize) -> Frame {
        Frame::from_fn(n, |r, c| if r == row && c == col { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn identity_extracts_zero() {
        let v = extract_vec(&PhaseTransform::identity(16).unwrap());
        assert_eq!(v, TransformVec::ZERO);
    }

    #[test]
    fn ramp_roundtrip_fractional() {
        let v = extract_vec(&ramp(-1.5, 3.25, 64));
        assert!(v.max_abs_diff(TransformVec::new(-1.5, 3.25)) < 1e-9, "{v:?}");
    }

    #[test]
    fn compose_with_identity() {
        let t = ramp(1.3, -0.4, 16);
        let c = compose(&t, &PhaseTransform::identity(16).unwrap()).unwrap();
        assert_eq!(c, t);
    }

    #[test]
    fn compose_adds_displacements() {
        let v = extract_vec(&compose(&ramp(1.0, 0.0, 8), &ramp(2.0, 0.0, 8)).unwrap());
        assert!(v.max_abs_diff(TransformVec::new(3.0, 0.0)) < 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = ramp(2.7, -1.1, 32);
        let c = compose(&t, &invert(&t)).unwrap();
        assert!(c.max_phase_deviation(&PhaseTransform::identity(32).unwrap()) < 1e-12);
    }

    #[test]
    fn invert_negates() {
        let id = PhaseTransform::identity(8).unwrap();
        assert_eq!(invert(&id), id);
        let v = extract_vec(&invert(&ramp(2.0, -1.0, 8)));
        assert!(v.max_abs_diff(TransformVec::new(-2.0, 1.0)) < 1e-9);
        let t = ramp(0.3, 0.9, 8);
        assert_eq!(invert(&invert(&t)), t);
    }

    #[test]
    fn compose_size_mismatch() {
        assert!(compose(&ramp(0.0, 0.0, 8), &ramp(0.0, 0.0, 16)).is_err());
    }

    fn shifted_impulses(n: usize, shifts: &[(usize, usize)]) -> Vec<PhaseTransform> {
        let spectra: Vec<_> = shifts.iter().map(|&(r, c)| dft2(&impulse(n, r, c))).collect();
        spectra
            .windows(2)
            .map(|w| phase_correlate(&w[0], &w[1]).unwrap())
            .collect()
    }

    #[test]
    fn acceleration_of_growing_shift() {
        // x-positions 0, 1, 3: velocities 1 then 2.
        let v = shifted_impulses(16, &[(0, 0), (0, 1), (0, 3)]);
        let a = higher_order(&v[0], &v[1]).unwrap();
        assert!(extract_vec(&a).max_abs_diff(TransformVec::new(1.0, 0.0)) < 1e-9);
        let back = compose(&a, &v[0]).unwrap();
        assert!(back.max_phase_deviation(&v[1]) < 1e-10);
    }

    #[test]
    fn constant_velocity_has_identity_acceleration() {
        let t = ramp(1.25, -0.5, 16);
        let a = higher_order(&t, &t).unwrap();
        assert!(a.max_phase_deviation(&PhaseTransform::identity(16).unwrap()) < 1e-9);
    }

    #[test]
    fn relative_motion_against_parent() {
        let parent = shifted_impulses(16, &[(0, 0), (0, 1)]).remove(0);
        let child = shifted_impulses(16, &[(4, 4), (5, 5)]).remove(0);
        let rel = relative_transform(&child, Some(&parent)).unwrap();
        assert!(extract_vec(&rel).max_abs_diff(TransformVec::new(0.0, 1.0)) < 1e-9);

        let same = relative_transform(&child, Some(&child)).unwrap();
        assert!(same.max_phase_deviation(&PhaseTransform::identity(16).unwrap()) < 1e-12);
        assert_eq!(relative_transform(&child, None).unwrap(), child);
    }

    #[test]
    fn rollout_integrates_acceleration() {
        let out = const_order_rollout(TransformVec::new(1.0, 0.0), TransformVec::new(1.0, 0.0), 3);
        let xs: Vec<f64> = out.iter().map(|v| v.x).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        // discrete parabola x(t) = t + t^2/2 + t/2 sampled at t = 0..3.
        let parabola = |t: f64| t * t / 2.0 + 1.5 * t;
        assert_eq!(out.iter().map(|v| v.x).sum::<f64>(), parabola(3.0));

        let flat = const_order_rollout(TransformVec::new(0.5, 2.0), TransformVec::ZERO, 4);
        assert!(flat.iter().all(|v| *v == TransformVec::new(0.5, 2.0)));
        assert_eq!(
            const_order_rollout(TransformVec::new(1.0, 1.0), TransformVec::new(0.5, 0.0), 1),
            vec![TransformVec::new(1.5, 1.0)]
        );
    }

    #[test]
    fn wrapping_keeps_torus_position() {
        let v = TransformVec::new(40.0, -33.0).wrapped(64);
        assert_eq!(v, TransformVec::new(-24.0, 31.0));
    }
}
