//! Second-order polynomial gaze mapping from pupil-center pixels to gaze angles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::camera::ImagePoint;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomial fit needs at least 6 samples, got {0}")]
    TooFewSamples(usize),
    #[error("calibration features are rank deficient in the quadratic basis")]
    RankDeficient,
}

/// Feature centering and scaling applied before evaluating the basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub u0: f64,
    pub v0: f64,
    pub su: f64,
    pub sv: f64,
}

impl Normalization {
    fn apply(&self, p: &ImagePoint) -> (f64, f64) {
        ((p.u - self.u0) / self.su, (p.v - self.v0) / self.sv)
    }
}

/// Coefficients over the basis `[1, u, v, uv, u², v²]` of normalized features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyMap {
    pub coeff_h: [f64; 6],
    pub coeff_v: [f64; 6],
    pub normalization: Normalization,
}

fn basis(u: f64, v: f64) -> [f64; 6] {
    [1.0, u, v, u * v, u * u, v * v]
}

/// One calibration correspondence: image feature and gaze angles in degrees.
pub type PolySample = (ImagePoint, (f64, f64));

pub fn fit_poly(samples: &[PolySample]) -> Result<PolyMap, PolyError> {
    let n = samples.len();
    if n < 6 {
        return Err(PolyError::TooFewSamples(n));
    }
    let mean = |f: &dyn Fn(&PolySample) -> f64| samples.iter().map(f).sum::<f64>() / n as f64;
    let u0 = mean(&|s| s.0.u);
    let v0 = mean(&|s| s.0.v);
    let su = mean(&|s| (s.0.u - u0).powi(2)).sqrt();
    let sv = mean(&|s| (s.0.v - v0).powi(2)).sqrt();
    if !(su > 0.0 && sv > 0.0) {
        return Err(PolyError::RankDeficient);
    }
    let norm = Normalization { u0, v0, su, sv };

    let a = DMatrix::from_fn(n, 6, |i, j| {
        let (u, v) = norm.apply(&samples[i].0);
        basis(u, v)[j]
    });
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(PolyError::RankDeficient);
    }
    let solve = |col: DVector<f64>| -> Result<[f64; 6], PolyError> {
        let x = svd.solve(&col, 0.0).map_err(|_| PolyError::RankDeficient)?;
        Ok([x[0], x[1], x[2], x[3], x[4], x[5]])
    };
    let th = DVector::from_iterator(n, samples.iter().map(|s| s.1 .0));
    let tv = DVector::from_iterator(n, samples.iter().map(|s| s.1 .1));
    Ok(PolyMap { coeff_h: solve(th)?, coeff_v: solve(tv)?, normalization: norm })
}

pub fn predict_poly(m: &PolyMap, feature: &ImagePoint) -> (f64, f64) {
    let (u, v) = m.normalization.apply(feature);
    let b = basis(u, v);
    let dot = |c: &[f64; 6]| c.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    (dot(&m.coeff_h), dot(&m.coeff_v))
}

/// Coefficients re-expressed over the raw pixel basis `[1, u, v, uv, u², v²]`.
pub fn raw_coefficients(m: &PolyMap) -> ([f64; 6], [f64; 6]) {
    let Normalization { u0, v0, su, sv } = m.normalization;
    let convert = |c: &[f64; 6]| {
        // p(u', v') with u' = (u − u0)/su, v' = (v − v0)/sv, expanded.
        let (a, b) = (1.0 / su, 1.0 / sv);
        let (cu, cv) = (-u0 * a, -v0 * b);
        let [k0, k1, k2, k3, k4, k5] = *c;
        [
            k0 + k1 * cu + k2 * cv + k3 * cu * cv + k4 * cu * cu + k5 * cv * cv,
            k1 * a + k3 * a * cv + 2.0 * k4 * a * cu,
            k2 * b + k3 * b * cu + 2.0 * k5 * b * cv,
            k3 * a * b,
            k4 * a * a,
            k5 * b * b,
        ]
    };
    (convert(&m.coeff_h), convert(&m.coeff_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generator(p: &ImagePoint) -> (f64, f64) {
        let (u, v) = (p.u, p.v);
        (
            -30.0 + 0.08 * u - 0.01 * v + 2e-5 * u * v + 3e-5 * u * u - 1e-5 * v * v,
            12.0 - 0.02 * u + 0.09 * v - 1e-5 * u * v + 2e-6 * u * u + 4e-5 * v * v,
        )
    }

    fn grid9() -> Vec<ImagePoint> {
        let mut v = Vec::new();
        for j in [180.0, 240.0, 300.0] {
            for i in [260.0, 320.0, 380.0] {
                v.push(ImagePoint::new(i + 0.3 * j, j - 0.1 * i));
            }
        }
        v
    }

    #[test]
    fn recovers_quadratic_generator() {
        let samples: Vec<_> = grid9().into_iter().map(|p| (p, generator(&p))).collect();
        let m = fit_poly(&samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = ImagePoint::new(rng.gen_range(200.0..440.0), rng.gen_range(120.0..360.0));
            let (h, v) = predict_poly(&m, &p);
            let (gh, gv) = generator(&p);
            assert!((h - gh).abs() < 1e-9 && (v - gv).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_special_case() {
        let samples: Vec<_> = grid9().into_iter().map(|p| (p, (0.25 * p.u, 0.0))).collect();
        let m = fit_poly(&samples).unwrap();
        let (raw_h, raw_v) = raw_coefficients(&m);
        let expected = [0.0, 0.25, 0.0, 0.0, 0.0, 0.0];
        for k in 0..6 {
            assert!((raw_h[k] - expected[k]).abs() < 1e-9, "{raw_h:?}");
            assert!(raw_v[k].abs() < 1e-9);
        }
    }

    #[test]
    fn exact_interpolation_with_six_samples() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (20.0, 5.0), (5.0, 20.0)];
        let samples: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| (ImagePoint::new(u, v), (i as f64, -(i as f64) * 2.0)))
            .collect();
        let m = fit_poly(&samples).unwrap();
        for (p, (h, v)) in &samples {
            let (ph, pv) = predict_poly(&m, p);
            assert!((ph - h).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let m = PolyMap {
            coeff_h: [0.0; 6],
            coeff_v: [0.0; 6],
            normalization: Normalization { u0: 3.0, v0: 4.0, su: 2.0, sv: 5.0 },
        };
        assert_eq!(predict_poly(&m, &ImagePoint::new(123.0, -8.0)), (0.0, 0.0));
    }

    #[test]
    fn collinear_samples_are_rank_deficient() {
        let samples: Vec<_> = (0..6).map(|i| (ImagePoint::new(i as f64, 2.0 * i as f64), (i as f64, 0.0))).collect();
        assert_eq!(fit_poly(&samples), Err(PolyError::RankDeficient));
        assert_eq!(fit_poly(&samples[..5]), Err(PolyError::TooFewSamples(5)));
    }

    #[test]
    fn least_squares_matches_qr_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = grid9()
            .into_iter()
            .map(|p| (p, (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0))))
            .collect();
        let m = fit_poly(&samples).unwrap();
        // Independent solve over the raw pixel basis via QR.
        let a = DMatrix::from_fn(9, 6, |i, j| basis(samples[i].0.u, samples[i].0.v)[j]);
        let b = DVector::from_iterator(9, samples.iter().map(|s| s.1 .0));
        let qr = a.clone().qr();
        let qtb = qr.q().transpose() * &b;
        let x = qr.r().solve_upper_triangular(&qtb).unwrap();
        let resid_qr = (&a * &x - &b).norm();
        let resid_fit = samples
            .iter()
            .map(|(p, (h, _))| (predict_poly(&m, p).0 - h).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((resid_qr - resid_fit).abs() < 1e-9 * (1.0 + resid_qr), "{resid_qr} {resid_fit}");
    }

    proptest! {
        #[test]
        fn translation_equivariance(du in -200.0f64..200.0, dv in -200.0f64..200.0, pu in 250.0f64..400.0, pv in 150.0f64..330.0) {
            let samples: Vec<_> = grid9().into_iter().map(|p| (p, generator(&p))).collect();
            let shifted: Vec<_> = samples.iter().map(|(p, t)| (ImagePoint::new(p.u + du, p.v + dv), *t)).collect();
            let a = predict_poly(&fit_poly(&samples).unwrap(), &ImagePoint::new(pu, pv));
            let b = predict_poly(&fit_poly(&shifted).unwrap(), &ImagePoint::new(pu + du, pv + dv));
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }

        #[test]
        fn duplicated_samples_give_same_map(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = grid9()
                .into_iter()
                .map(|p| (p, (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0))))
                .collect();
            let doubled: Vec<_> = samples.iter().chain(samples.iter()).copied().collect();
            let a = fit_poly(&samples).unwrap();
            let b = fit_poly(&doubled).unwrap();
            for k in 0..6 {
                prop_assert!((a.coeff_h[k] - b.coeff_h[k]).abs() < 1e-12);
                prop_assert!((a.coeff_v[k] - b.coeff_v[k]).abs() < 1e-12);
            }
        }
    }
}
