//! Numerical solvers: 2-DOF shooting for point-to-point refracted ray paths,
//! and a Nelder–Mead simplex minimizer.

use nalgebra::{Matrix2, Vector2};

use crate::optics::{orthonormal_basis, Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    /// Finite-difference step of the Jacobian, radians.
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Miss distance accepted as converged, mm.
    pub accept: f64,
    /// Miss distance at which iteration stops early, mm.
    pub target: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { fd_step: 1e-7, max_iterations: 50, accept: 1e-6, target: 1e-11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingSolution {
    /// Unit direction leaving the start point.
    pub initial_direction: Vec3,
    /// Ray after the last interface, heading for the target.
    pub exit_ray: Ray,
    /// Distance of closest approach of `exit_ray` to the target, mm.
    pub miss: f64,
    pub iterations: usize,
}

/// Shooting parameterization around a reference direction.
#[derive(Debug, Clone, Copy)]
pub struct DirectionChart {
    pub base: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl DirectionChart {
    pub fn new(base: Vec3) -> Self {
        let base = base.normalize();
        let (e1, e2) = orthonormal_basis(&base);
        DirectionChart { base, e1, e2 }
    }

    /// Direction tilted by `a` toward `e1`, then by `b` toward `e2`.
    pub fn direction(&self, a: f64, b: f64) -> Vec3 {
        ((self.base * a.cos() + self.e1 * a.sin()) * b.cos() + self.e2 * b.sin()).normalize()
    }
}

/// Signed 2D miss of `exit` relative to `target`, in the chart's transverse
/// frame, plus the 3D closest-approach distance.
fn miss_vector(chart: &DirectionChart, exit: &Ray, target: &Vec3) -> Option<(Vector2<f64>, f64)> {
    let w = target - exit.origin;
    let along = w.dot(&exit.direction);
    if along <= 0.0 {
        return None;
    }
    let perp = w - exit.direction * along;
    Some((Vector2::new(perp.dot(&chart.e1), perp.dot(&chart.e2)), perp.norm()))
}

/// Finds the direction leaving `from` whose image under `trace` passes through
/// `to`. `trace` maps the initial ray to the ray after the last interface,
/// or `None` when the ray is blocked.
pub fn shoot<F>(from: &Vec3, to: &Vec3, trace: F, opts: &ShootingOptions) -> Option<ShootingSolution>
where
    F: Fn(&Ray) -> Option<Ray>,
{
    shoot_from(from, to, &(to - from), trace, opts)
}

/// [`shoot`] with an explicit initial direction.
pub fn shoot_from<F>(from: &Vec3, to: &Vec3, initial: &Vec3, trace: F, opts: &ShootingOptions) -> Option<ShootingSolution>
where
    F: Fn(&Ray) -> Option<Ray>,
{
    let chart = DirectionChart::new(*initial);
    let eval = |x: &Vector2<f64>| -> Option<(Vector2<f64>, f64, Ray)> {
        let d = chart.direction(x[0], x[1]);
        let exit = trace(&Ray::spawn(*from, d))?;
        let (m, dist) = miss_vector(&chart, &exit, to)?;
        Some((m, dist, exit))
    };

    let mut x = Vector2::zeros();
    let (mut f, mut dist, mut exit) = eval(&x)?;
    let mut iterations = 0;
    while dist > opts.target && iterations < opts.max_iterations {
        iterations += 1;
        let h = opts.fd_step;
        let mut jac = Matrix2::zeros();
        for k in 0..2 {
            let mut step = Vector2::zeros();
            step[k] = h;
            let column = match (eval(&(x + step)), eval(&(x - step))) {
                (Some((fp, _, _)), Some((fm, _, _))) => (fp - fm) / (2.0 * h),
                (Some((fp, _, _)), None) => (fp - f) / h,
                (None, Some((fm, _, _))) => (f - fm) / h,
                (None, None) => return None,
            };
            jac.set_column(k, &column);
        }
        let delta = jac.lu().solve(&(-f))?;
        // Backtrack until the miss shrinks.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = x + delta * scale;
            if let Some((fc, dc, ec)) = eval(&cand) {
                if dc < dist {
                    accepted = Some((cand, fc, dc, ec));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cx, fc, dc, ec)) => {
                x = cx;
                f = fc;
                dist = dc;
                exit = ec;
            }
            None => break,
        }
    }
    if dist <= opts.accept {
        Some(ShootingSolution {
            initial_direction: chart.direction(x[0], x[1]),
            exit_ray: exit,
            miss: dist,
            iterations,
        })
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tolerance: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evaluations: 2000, f_tolerance: 1e-24, x_tolerance: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Derivative-free simplex minimization from `start` with initial edge `step`.
pub fn nelder_mead<F>(f: F, start: &[f64], step: f64, opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let call = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), call(start)));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += step;
        let v = call(&x);
        simplex.push((x, v));
    }

    let point = |c: &[f64], d: &[f64], t: f64| -> Vec<f64> { c.iter().zip(d).map(|(a, b)| a + t * (b - a)).collect() };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tolerance && diameter <= opts.x_tolerance {
            break;
        }
        if diameter == 0.0 || evals.get() >= opts.max_evaluations {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let xr = point(&centroid, &simplex[n].0, -1.0);
        let fr = call(&xr);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &simplex[n].0, -2.0);
            let fe = call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = point(&centroid, &xr, 0.5);
            let fc = call(&xc);
            (xc, fc)
        } else {
            let xc = point(&centroid, &simplex[n].0, 0.5);
            let fc = call(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let xs = point(&x0, &item.0, 0.5);
            let fs = call(&xs);
            *item = (xs, fs);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evaluations: evals.get() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{intersect_plane, refract};

    #[test]
    fn straight_path_needs_no_iterations() {
        let from = Vec3::new(1.0, 2.0, 3.0);
        let to = Vec3::new(-4.0, 0.5, 30.0);
        let sol = shoot(&from, &to, |r| Some(*r), &ShootingOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.miss < 1e-12);
    }

    #[test]
    fn solves_refraction_at_a_plane() {
        // Point under water imaged from above: closed-form check of Snell.
        let from = Vec3::new(0.0, 0.0, -10.0);
        let to = Vec3::new(30.0, 0.0, 20.0);
        let n_water = 1.33;
        let trace = |r: &Ray| {
            let hit = intersect_plane(r, &Vec3::zeros(), &Vec3::z())?;
            let d = refract(&r.direction, &hit.normal, n_water, 1.0)?;
            Some(Ray::spawn(hit.point, d))
        };
        let sol = shoot(&from, &to, trace, &ShootingOptions::default()).unwrap();
        assert!(sol.miss < 1e-10);
        let d = sol.initial_direction;
        let sin_i = (d.x * d.x + d.y * d.y).sqrt();
        let e = sol.exit_ray.direction;
        let sin_t = (e.x * e.x + e.y * e.y).sqrt();
        assert!((n_water * sin_i - sin_t).abs() < 1e-10);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evaluations: 10_000, ..Default::default() };
        let m = nelder_mead(rosen, &[-1.2, 1.0], 0.1, &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn nelder_mead_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 4.0 * (x[1] + 0.2).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0], 0.05, &NelderMeadOptions::default());
        assert!(m.value < 1e-20);
    }
}
