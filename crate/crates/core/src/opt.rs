//! Minimal L-BFGS with Armijo backtracking, used by the path optimizer.

pub(crate) struct LbfgsConfig {
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iterations: 100,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            memory: 8,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` in place; `f` writes the gradient and returns the value.
pub(crate) fn minimize<F>(mut f: F, x: &mut [f64], cfg: &LbfgsConfig) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for _iter in 0..cfg.max_iterations {
        let gnorm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gnorm < cfg.grad_tol * (1.0 + fx.abs()) {
            break;
        }

        // Two-loop recursion for d = -H g.
        dir.copy_from_slice(&g);
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * y;
            }
        }
        if k > 0 {
            let last = k - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            if gamma.is_finite() && gamma > 0.0 {
                for d in dir.iter_mut() {
                    *d *= gamma;
                }
            }
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * s;
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }

        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // Not a descent direction: reset to steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = -dot(&g, &g);
            if slope == 0.0 {
                break;
            }
        }

        // Armijo backtracking; the cold-start step is scaled to the gradient
        // so wild first moves on stiff objectives are avoided.
        let mut step = if s_hist.is_empty() {
            let dnorm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            (1.0 / dnorm.max(1.0)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut f_accepted = fx;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                f_accepted = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }

        let mut s = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut step_norm2 = 0.0;
        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
            step_norm2 += s[i] * s[i];
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * step_norm2.sqrt() * dot(&y, &y).sqrt().max(1e-300) {
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_accepted;
        if step_norm2.sqrt() < cfg.step_tol {
            break;
        }
    }
    fx
}
