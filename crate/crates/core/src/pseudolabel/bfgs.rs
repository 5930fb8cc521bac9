//! Dense BFGS with Armijo backtracking.

/// Termination controls for [`minimize`].
#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
    /// Length (infinity norm) of the first trial step.
    pub initial_step: f64,
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    /// Best point seen; never worse than the start.
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The objective returns `None` where it is undefined; the caller decides how
/// to handle that.
pub type Objective<'a> = dyn FnMut(&[f64]) -> Option<(f64, Vec<f64>)> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Undefined;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `objective` from `x0`, keeping a dense inverse-Hessian estimate.
///
/// Returns `Err(Undefined)` if the objective is undefined at any evaluated
/// point.
pub fn minimize(
    objective: &mut Objective<'_>,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Result<BfgsResult, Undefined> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x).ok_or(Undefined)?;
    let mut h: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.clear();
        h.resize(n * n, 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };

    while iterations < opts.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm == 0.0 || !f.is_finite() {
            converged = true;
            break;
        }
        if h.is_empty() {
            reset(&mut h, opts.initial_step / gnorm);
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            reset(&mut h, opts.initial_step / gnorm);
            d = g.iter().map(|gi| -gi * opts.initial_step / gnorm).collect();
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (ft, gt) = objective(&trial).ok_or(Undefined)?;
            if ft.is_finite() && ft <= f + ARMIJO * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((x_new, f_new, g_new)) = accepted else {
            converged = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if decrease < opts.tolerance {
            converged = true;
            break;
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if iterations == 1 {
                reset(&mut h, sy / dot(&y, &y));
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    Ok(BfgsResult {
        x,
        f,
        iterations,
        converged,
    })
}
