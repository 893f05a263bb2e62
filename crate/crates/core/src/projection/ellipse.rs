//! Direct least-squares ellipse fitting.
//!
//! Minimizes the algebraic distance of the conic `ax² + bxy + cy² + dx + ey + f`
//! subject to `4ac − b² = 1`, using the partitioned scatter-matrix formulation
//! that keeps the constrained eigenproblem well conditioned. Points are
//! centered and scaled before fitting.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::camera::ImagePoint;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FitError {
    #[error("ellipse fit needs at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("points are degenerate (collinear or coincident)")]
    Degenerate,
    #[error("no elliptical solution for the constrained fit")]
    NotAnEllipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: ImagePoint,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Orientation of the major axis, radians in [0, π).
    pub angle: f64,
}

impl Ellipse {
    pub fn new(center: ImagePoint, semi_major: f64, semi_minor: f64, angle: f64) -> Self {
        Ellipse { center, semi_major, semi_minor, angle: angle.rem_euclid(std::f64::consts::PI) }
    }

    /// Point at parametric angle `t`.
    pub fn point_at(&self, t: f64) -> ImagePoint {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (self.semi_major * t.cos(), self.semi_minor * t.sin());
        ImagePoint::new(self.center.u + x * c - y * s, self.center.v + x * s + y * c)
    }

    /// `k` points at evenly spaced parametric angles starting at `phase`.
    pub fn sample(&self, k: usize, phase: f64) -> Vec<ImagePoint> {
        (0..k)
            .map(|i| self.point_at(phase + std::f64::consts::TAU * i as f64 / k as f64))
            .collect()
    }

    /// Implicit coefficients `[A, B, C, D, E, F]` of
    /// `Au² + Buv + Cv² + Du + Ev + F = 0`.
    pub fn conic(&self) -> [f64; 6] {
        let (a, b) = (self.semi_major, self.semi_minor);
        let (s, c) = self.angle.sin_cos();
        let (x0, y0) = (self.center.u, self.center.v);
        let ca = a * a * s * s + b * b * c * c;
        let cb = 2.0 * (b * b - a * a) * s * c;
        let cc = a * a * c * c + b * b * s * s;
        let cd = -2.0 * ca * x0 - cb * y0;
        let ce = -cb * x0 - 2.0 * cc * y0;
        let cf = ca * x0 * x0 + cb * x0 * y0 + cc * y0 * y0 - a * a * b * b;
        [ca, cb, cc, cd, ce, cf]
    }

    /// Approximate geometric distance of `p` from the ellipse boundary
    /// (first-order Sampson distance).
    pub fn distance(&self, p: &ImagePoint) -> f64 {
        let [a, b, c, d, e, f] = self.conic();
        let (x, y) = (p.u, p.v);
        let val = a * x * x + b * x * y + c * y * y + d * x + e * y + f;
        let gx = 2.0 * a * x + b * y + d;
        let gy = b * x + 2.0 * c * y + e;
        val.abs() / gx.hypot(gy)
    }
}

/// Converts an implicit conic to center/axes/angle form.
pub fn ellipse_from_conic(conic: &[f64; 6]) -> Result<Ellipse, FitError> {
    let [a, b, c, d, e, f] = *conic;
    let disc = 4.0 * a * c - b * b;
    if !(disc > 0.0) {
        return Err(FitError::NotAnEllipse);
    }
    let x0 = (b * e - 2.0 * c * d) / disc;
    let y0 = (b * d - 2.0 * a * e) / disc;
    let fc = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    // Eigen-decomposition of the quadratic part [[a, b/2], [b/2, c]].
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let root = half_diff.hypot(0.5 * b);
    let (l_small, l_large) = if mean > 0.0 { (mean - root, mean + root) } else { (mean + root, mean - root) };
    let major2 = -fc / l_small;
    let minor2 = -fc / l_large;
    if !(major2 > 0.0 && minor2 > 0.0) {
        return Err(FitError::NotAnEllipse);
    }
    // Major axis is the eigenvector of the eigenvalue nearest zero in magnitude.
    let angle = if root < 1e-15 * mean.abs() {
        0.0
    } else {
        // Eigenvector for eigenvalue l_small: (b/2, l_small − a) or (l_small − c, b/2).
        let (vx, vy) = if (l_small - a).abs() > (l_small - c).abs() {
            (0.5 * b, l_small - a)
        } else {
            (l_small - c, 0.5 * b)
        };
        vy.atan2(vx)
    };
    let (major, minor) = (major2.sqrt(), minor2.sqrt());
    Ok(Ellipse::new(ImagePoint::new(x0, y0), major.max(minor), minor.min(major), angle))
}

pub fn fit_ellipse(points: &[ImagePoint]) -> Result<Ellipse, FitError> {
    let n = points.len();
    if n < 5 {
        return Err(FitError::TooFewPoints(n));
    }
    let (mx, my) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.u, sy + p.v));
    let (mx, my) = (mx / n as f64, my / n as f64);
    let spread = (points.iter().map(|p| (p.u - mx).powi(2) + (p.v - my).powi(2)).sum::<f64>() / (2.0 * n as f64)).sqrt();
    if !(spread > 0.0) {
        return Err(FitError::Degenerate);
    }

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let x = (p.u - mx) / spread;
        let y = (p.v - my) / spread;
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    // Collinear points make the linear scatter singular.
    let s3_inv = s3.try_inverse().ok_or(FitError::Degenerate)?;
    if s3.determinant().abs() < 1e-12 * (n as f64).powi(3) {
        return Err(FitError::Degenerate);
    }
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    let reduced = Matrix3::from_rows(&[m.row(2) * 0.5, -m.row(1), m.row(0) * 0.5]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in reduced.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * ev.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 {
            // Smallest non-negative eigenvalue minimizes the algebraic error.
            if best.is_none_or(|(l, _)| ev.re < l) {
                best = Some((ev.re, v));
            }
        }
    }
    let (_, a1) = best.ok_or(FitError::NotAnEllipse)?;
    let a2 = t * a1;
    let conic = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let local = ellipse_from_conic(&conic)?;
    Ok(Ellipse::new(
        ImagePoint::new(mx + spread * local.center.u, my + spread * local.center.v),
        spread * local.semi_major,
        spread * local.semi_minor,
        local.angle,
    ))
}

/// Unit vector spanning the (numerical) null space of a rank-2 3×3 matrix,
/// refined by inverse iteration.
fn null_vector(a: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [a.row(0).transpose(), a.row(1).transpose(), a.row(2).transpose()];
    let mut v = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])]
        .into_iter()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))?;
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    v /= norm;
    let shift = a.norm() * 1e-13;
    if let Some(lu_inv) = (a + Matrix3::identity() * shift).try_inverse() {
        for _ in 0..2 {
            let w = lu_inv * v;
            let wn = w.norm();
            if wn.is_finite() && wn > 0.0 {
                v = w / wn;
            }
        }
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_ellipse_close(a: &Ellipse, b: &Ellipse, tol: f64) {
        assert!(a.center.distance(&b.center) < tol, "{a:?} vs {b:?}");
        assert!((a.semi_major - b.semi_major).abs() < tol, "{a:?} vs {b:?}");
        assert!((a.semi_minor - b.semi_minor).abs() < tol, "{a:?} vs {b:?}");
        let da = (a.angle - b.angle).rem_euclid(PI);
        assert!(da.min(PI - da) < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn recovers_rotated_ellipse() {
        let truth = Ellipse::new(ImagePoint::new(3.0, -2.0), 5.0, 2.0, 30f64.to_radians());
        let fit = fit_ellipse(&truth.sample(10, 0.0)).unwrap();
        assert_ellipse_close(&fit, &truth, 1e-9);
    }

    #[test]
    fn recovers_circle() {
        let truth = Ellipse::new(ImagePoint::new(-7.0, 11.0), 4.0, 4.0, 0.0);
        let fit = fit_ellipse(&truth.sample(10, 0.3)).unwrap();
        assert!(fit.center.distance(&truth.center) < 1e-9);
        assert!((fit.semi_major - 4.0).abs() < 1e-9 && (fit.semi_minor - 4.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_pixel_scale_ellipse() {
        let truth = Ellipse::new(ImagePoint::new(341.25, 187.5), 88.0, 61.0, 2.5);
        let fit = fit_ellipse(&truth.sample(10, 0.0)).unwrap();
        assert_ellipse_close(&fit, &truth, 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| ImagePoint::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert_eq!(fit_ellipse(&pts), Err(FitError::Degenerate));
    }

    #[test]
    fn too_few_points() {
        let pts = vec![ImagePoint::new(0.0, 0.0); 4];
        assert_eq!(fit_ellipse(&pts), Err(FitError::TooFewPoints(4)));
    }

    #[test]
    fn conic_roundtrip() {
        let e = Ellipse::new(ImagePoint::new(10.0, 20.0), 7.0, 3.0, 1.1);
        let back = ellipse_from_conic(&e.conic()).unwrap();
        assert_ellipse_close(&back, &e, 1e-10);
        for p in e.sample(16, 0.2) {
            assert!(e.distance(&p) < 1e-10);
        }
    }
}
