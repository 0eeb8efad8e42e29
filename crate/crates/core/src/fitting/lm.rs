//! Bounded Levenberg–Marquardt for small dense problems.
//!
//! The caller supplies a closure that, for a parameter vector, returns the
//! half sum of squared residuals together with the normal-equation pieces
//! `JᵀJ` and `Jᵀr` accumulated in a single pass over the data. Trial points
//! are projected onto the bound box, and a parameter sitting on a bound with
//! its descent direction pointing outward is held fixed for that step.

#[derive(Debug, Clone, Copy)]
pub struct Normal<const P: usize> {
    pub cost: f64,
    pub jtj: [[f64; P]; P],
    pub jtr: [f64; P],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Relative decrease of the cost below which an accepted step ends the search.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    StepTolerance,
    /// The damping grew without finding a lower cost: a minimum to working precision.
    Stalled,
    MaxIterations,
    NonFinite,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::CostTolerance | Termination::StepTolerance | Termination::Stalled)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOutcome<const P: usize> {
    pub params: [f64; P],
    pub normal: Normal<P>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky.
/// Returns `None` if `a` is not numerically positive definite.
pub fn cholesky_solve<const P: usize>(a: &[[f64; P]; P], b: &[f64; P]) -> Option<[f64; P]> {
    let mut l = [[0.0; P]; P];
    for i in 0..P {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; P];
    for i in 0..P {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; P];
    for i in (0..P).rev() {
        let mut s = y[i];
        for k in i + 1..P {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Smallest pivot accepted when inverting a unit-diagonal (equilibrated)
/// normal matrix. Well-posed Voigt fits sit above 1e-4; a line narrower
/// than one bin leaves only amplitude × width determined and lands near
/// 1e-7 or below, where the linearized errors mean nothing.
pub const PIVOT_TOLERANCE: f64 = 1e-6;

/// Inverse of the sub-matrix of `a` selected by `free`; entries outside the
/// selection are zero. The sub-matrix is scaled to unit diagonal first, so
/// `None` means it is singular or ill-conditioned independent of parameter
/// units.
pub fn masked_inverse<const P: usize>(a: &[[f64; P]; P], free: &[bool; P]) -> Option<[[f64; P]; P]> {
    let idx: Vec<usize> = (0..P).filter(|&i| free[i]).collect();
    let n = idx.len();
    let d: Vec<f64> = idx.iter().map(|&i| a[i][i]).collect();
    if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return None;
    }
    let d: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut m = vec![vec![0.0; 2 * n]; n];
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            m[r][c] = a[i][j] * d[r] * d[c];
        }
        m[r][n + r] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .expect("non-empty");
        if m[pivot][col].abs() <= PIVOT_TOLERANCE || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        let inv = 1.0 / m[col][col];
        for v in m[col].iter_mut() {
            *v *= inv;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    let mut out = [[0.0; P]; P];
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[i][j] = m[r][n + c] * d[r] * d[c];
        }
    }
    Some(out)
}

pub fn minimize<const P: usize, F>(
    mut eval: F,
    start: [f64; P],
    lower: [f64; P],
    upper: [f64; P],
    settings: &LmSettings,
) -> LmOutcome<P>
where
    F: FnMut(&[f64; P]) -> Normal<P>,
{
    let project = |p: [f64; P]| {
        let mut q = p;
        for i in 0..P {
            q[i] = q[i].clamp(lower[i], upper[i]);
        }
        q
    };
    let mut params = project(start);
    let mut current = eval(&params);
    let mut lambda = 1e-3;
    let mut growth = 2.0;
    let mut iterations = 0;
    // Marquardt scaling: running maximum of the JᵀJ diagonal.
    let mut scale = [0.0f64; P];

    if !current.cost.is_finite() {
        return LmOutcome {
            params,
            normal: current,
            iterations,
            termination: Termination::NonFinite,
        };
    }

    let termination = loop {
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        if current.cost <= 1e-300 {
            break Termination::CostTolerance;
        }

        for i in 0..P {
            scale[i] = scale[i].max(current.jtj[i][i]);
        }
        let max_scale = scale.iter().copied().fold(0.0, f64::max).max(1e-300);
        let mut a = current.jtj;
        for i in 0..P {
            a[i][i] += lambda * scale[i].max(1e-12 * max_scale);
        }
        // Parameters on a bound whose descent direction points out of the
        // box are held fixed for this step.
        let mut neg_g = current.jtr.map(|g| -g);
        for i in 0..P {
            let blocked = (params[i] <= lower[i] && current.jtr[i] > 0.0) || (params[i] >= upper[i] && current.jtr[i] < 0.0);
            if blocked {
                for j in 0..P {
                    a[i][j] = 0.0;
                    a[j][i] = 0.0;
                }
                a[i][i] = 1.0;
                neg_g[i] = 0.0;
            }
        }
        let Some(delta) = cholesky_solve(&a, &neg_g) else {
            lambda *= growth;
            growth *= 2.0;
            if lambda > 1e16 {
                break Termination::Stalled;
            }
            continue;
        };
        let mut trial = params;
        for i in 0..P {
            trial[i] += delta[i];
        }
        let trial = project(trial);
        let step: [f64; P] = std::array::from_fn(|i| trial[i] - params[i]);

        let step_small = (0..P).all(|i| step[i].abs() <= settings.step_tolerance * (params[i].abs() + settings.step_tolerance));
        if step_small {
            break Termination::StepTolerance;
        }

        // Predicted decrease of the quadratic model along the projected step.
        let mut predicted = 0.0;
        for i in 0..P {
            let mut jtj_step = 0.0;
            for j in 0..P {
                jtj_step += current.jtj[i][j] * step[j];
            }
            predicted -= step[i] * (current.jtr[i] + 0.5 * jtj_step);
        }

        let candidate = eval(&trial);
        let actual = current.cost - candidate.cost;
        if candidate.cost.is_finite() && actual > 0.0 {
            let rho = if predicted > 0.0 { actual / predicted } else { 1.0 };
            let rel_actual = actual / current.cost;
            let rel_predicted = predicted.max(0.0) / current.cost;
            params = trial;
            current = candidate;
            lambda = (lambda * (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(1e-15);
            growth = 2.0;
            if rel_actual < settings.cost_tolerance && rel_predicted < settings.cost_tolerance {
                break Termination::CostTolerance;
            }
        } else {
            lambda *= growth;
            growth *= 2.0;
            if lambda > 1e16 {
                break Termination::Stalled;
            }
        }
    };

    LmOutcome {
        params,
        normal: current,
        iterations,
        termination,
    }
}
