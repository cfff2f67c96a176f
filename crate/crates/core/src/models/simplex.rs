//! Downhill-simplex (Nelder-Mead) minimization.

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// The simplex shrank below the parameter tolerance before the
    /// iteration limit.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Largest coordinate distance from the best vertex at convergence.
    pub x_tol: f64,
    pub max_iter: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-8,
            max_iter: 2_000,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimize `f` from `x0` with an initial simplex offset by `step` along
/// each axis. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], opts: SimplexOptions) -> SimplexOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // order vertices; stable sort keeps earlier vertices first on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(REFLECT * EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = pts[0]
                .iter()
                .zip(&pts[i])
                .map(|(b, x)| b + SHRINK * (x - b))
                .collect();
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexOutcome {
        x: pts[best].clone(),
        value: vals[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let out = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            SimplexOptions::default(),
        );
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() < 1e-7);
        assert!((out.x[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn rosenbrock() {
        let out = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            SimplexOptions::default(),
        );
        assert!((out.x[0] - 1.0).abs() < 1e-6, "{out:?}");
        assert!((out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stops_at_iteration_limit() {
        let out = nelder_mead(
            |x| x[0].abs(),
            &[100.0],
            &[1.0],
            SimplexOptions { x_tol: 1e-300, max_iter: 5 },
        );
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
    }
}
