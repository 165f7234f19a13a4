//! Nelder–Mead simplex minimization with restarts.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Objective evaluations allowed, across restarts.
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Spread of vertex values at convergence, on top of 1e-10 relative.
    pub f_tol: f64,
    /// Largest vertex distance from the best vertex at convergence.
    pub x_tol: f64,
    /// Fresh simplices built around the optimum after convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_evals: 2000, initial_step: 0.5, f_tol: 1e-18, x_tol: 1e-9, restarts: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// Whether the last run met the tolerances before the budget ran out.
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`. Non-finite objective values are treated
/// as `+∞`.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0);
    if n == 0 {
        return SimplexResult { x: best_x, f: best_f, evaluations: 1, converged: true };
    }
    let mut converged = false;
    let mut step = opts.initial_step;

    for _ in 0..=opts.restarts {
        let mut pts: Vec<Vec<f64>> = vec![best_x.clone()];
        let mut vals = vec![best_f];
        for i in 0..n {
            let mut p = best_x.clone();
            p[i] += step;
            vals.push(eval(&p));
            pts.push(p);
        }
        converged = false;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            pts = order.iter().map(|&i| pts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let spread = vals[n] - vals[0];
            let size = pts[1..]
                .iter()
                .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            let flat = spread <= opts.f_tol + 1e-10 * vals[0].abs() || spread.is_nan();
            if (flat && size <= opts.x_tol) || size <= 1e-3 * opts.x_tol {
                converged = true;
                break;
            }
            if evals.get() >= opts.max_evals {
                break;
            }

            let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
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
            // Outside contraction if the reflection helped at all, else inside.
            let xc = along(if fr < vals[n] { -0.5 } else { 0.5 });
            let fc = eval(&xc);
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            for i in 1..=n {
                let p: Vec<f64> = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                vals[i] = eval(&p);
                pts[i] = p;
            }
        }
        let i = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("nonempty simplex");
        let improved = vals[i] < best_f;
        if vals[i] <= best_f {
            best_f = vals[i];
            best_x = pts[i].clone();
        }
        if evals.get() >= opts.max_evals || (!improved && converged) {
            break;
        }
        step = (step * 0.1).max(1e3 * opts.x_tol);
    }
    SimplexResult { x: best_x, f: best_f, evaluations: evals.get(), converged }
}
