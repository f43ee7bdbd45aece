//! Small deterministic optimizers used by the trend and residual fitters:
//! golden-section line search and BFGS with central-difference gradients.

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal function on [a, b]. Returns (x, f(x)).
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    // pick the best of the three evaluated points; ties to the leftmost
    let mut best = (x1, f1);
    if f2 < best.1 {
        best = (x2, f2);
    }
    if fm < best.1 {
        best = (mid, fm);
    }
    best
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_tol: 1e-8, step_tol: 1e-12, max_iter: 200, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h_rel: f64) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = h_rel * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// BFGS minimization with backtracking Armijo line search and a
/// central-difference gradient. Deterministic for a given objective.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 {
        return BfgsResult { x, value: fx, grad_norm: 0.0, iterations: 0, converged: true };
    }
    let mut g = gradient(&mut f, &x, opts.fd_step);
    // inverse Hessian approximation, started at identity
    let mut h_inv = vec![vec![0.0; n]; n];
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        // direction = -H g
        let mut dir = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                dir[i] -= h_inv[i][j] * g[j];
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // not a descent direction; reset to steepest descent
            for i in 0..n {
                dir[i] = -g[i];
                for (j, row) in h_inv.iter_mut().enumerate() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = if j == k { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let mut step = 1.0;
        let mut x_new = x.clone();
        let mut f_new = fx;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = f(&x_new);
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // objective is flat to machine precision along this direction
            converged = true;
            break;
        }
        let step_len: f64 =
            dir.iter().map(|d| (step * d) * (step * d)).sum::<f64>().sqrt();
        let g_new = gradient(&mut f, &x_new, opts.fd_step);
        // BFGS inverse update
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * step_len {
            let rho = 1.0 / sy;
            // H' = (I - rho s y') H (I - rho y s') + rho s s'
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h_inv[i][j] * y[j];
                }
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if step_len <= opts.step_tol {
            converged = true;
            break;
        }
    }
    let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if grad_norm <= opts.grad_tol {
        converged = true;
    }
    BfgsResult { x, value: fx, grad_norm, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        // zero-minimum quadratic: comparisons stay resolvable throughout
        let (x, fx) = golden_section(|x| (x - 3.25) * (x - 3.25), -10.0, 10.0, 1e-10, 200);
        assert!((x - 3.25).abs() < 1e-9);
        assert!(fx < 1e-18);
        // an offset limits attainable accuracy to ~sqrt(eps)*|f|
        let (x, fx) = golden_section(|x| (x - 3.25) * (x - 3.25) + 2.0, -10.0, 10.0, 1e-10, 200);
        assert!((x - 3.25).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_handles_reversed_bounds() {
        let (x, _) = golden_section(|x| (x + 1.0).powi(2), 5.0, -5.0, 1e-10, 200);
        assert!((x + 1.0).abs() < 1e-8);
    }

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let rosenbrock = |v: &[f64]| {
            let (x, y) = (v[0], v[1]);
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        };
        let res = bfgs(rosenbrock, &[-1.2, 1.0], &BfgsOptions { max_iter: 500, ..Default::default() });
        assert!(res.converged, "grad norm {}", res.grad_norm);
        assert!((res.x[0] - 1.0).abs() < 1e-5, "x = {:?}", res.x);
        assert!((res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_on_quadratic_bowl() {
        let f = |v: &[f64]| v.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum();
        let res = bfgs(f, &[3.0, -2.0, 1.0], &BfgsOptions::default());
        assert!(res.converged);
        for xi in &res.x {
            assert!(xi.abs() < 1e-6);
        }
    }

    #[test]
    fn bfgs_zero_dimensional_is_noop() {
        let res = bfgs(|_| 7.0, &[], &BfgsOptions::default());
        assert!(res.converged);
        assert_eq!(res.value, 7.0);
    }
}
