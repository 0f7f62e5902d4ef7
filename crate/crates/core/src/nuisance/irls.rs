//! Weighted least squares and logistic IRLS over a dense row-major design.

use nalgebra::{DMatrix, DVector};

use super::IrlsConfig;

/// Largest |linear predictor| tolerated before the fit is declared separated.
/// At 30 the fitted probability is within 1e-13 of 0 or 1.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, PartialEq)]
pub(crate) enum IrlsFailure {
    Singular,
    Separation,
    NonConvergence(usize),
}

#[derive(Debug)]
pub(crate) struct IrlsFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

fn solve_normal_equations(xtwx: DMatrix<f64>, xtwz: DVector<f64>) -> Option<Vec<f64>> {
    let p = xtwx.nrows();
    let scale = (0..p).map(|j| xtwx[(j, j)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    // Reject numerically rank-deficient designs instead of returning garbage.
    let chol = xtwx.clone().cholesky()?;
    let l = chol.l();
    let min_pivot = (0..p).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= scale * 1e-13 {
        return None;
    }
    Some(chol.solve(&xtwz).iter().copied().collect())
}

fn accumulate(x: &[f64], p: usize, z: &[f64], w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwz = DVector::zeros(p);
    for (i, (&zi, &wi)) in z.iter().zip(w).enumerate() {
        if wi == 0.0 {
            continue;
        }
        let row = &x[i * p..(i + 1) * p];
        for j in 0..p {
            let wxj = wi * row[j];
            if wxj == 0.0 {
                continue;
            }
            xtwz[j] += wxj * zi;
            for k in j..p {
                xtwx[(j, k)] += wxj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            xtwx[(j, k)] = xtwx[(k, j)];
        }
    }
    (xtwx, xtwz)
}

pub(crate) fn weighted_least_squares(x: &[f64], p: usize, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let (xtwx, xtwy) = accumulate(x, p, y, w);
    solve_normal_equations(xtwx, xtwy)
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logistic(eta: f64) -> f64 {
    sigmoid(eta)
}

fn linear_predictor(x: &[f64], p: usize, beta: &[f64], out: &mut [f64]) {
    for (i, eta) in out.iter_mut().enumerate() {
        *eta = x[i * p..(i + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum();
    }
}

fn deviance(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|((&e, &yi), &wi)| {
            // -2 log-likelihood, written stably in terms of the linear predictor.
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            2.0 * wi * (log1pexp - yi * e)
        })
        .sum()
}

/// Newton-Raphson for a logistic mean with frequency weights; responses in [0, 1].
pub(crate) fn irls_logistic(
    x: &[f64],
    p: usize,
    y: &[f64],
    w: &[f64],
    config: &IrlsConfig,
) -> Result<IrlsFit, IrlsFailure> {
    let n = y.len();
    let total: f64 = w.iter().sum();
    let ybar = (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total).clamp(1e-6, 1.0 - 1e-6);

    // Start from the intercept-only fit when the first column is an intercept;
    // otherwise every coefficient starts at the marginal logit.
    let has_intercept = (0..n).all(|i| w[i] == 0.0 || x[i * p] == 1.0)
        && (0..n).any(|i| w[i] > 0.0 && (1..p).any(|j| x[i * p + j] != 0.0));
    let start = (ybar / (1.0 - ybar)).ln();
    let mut beta = if has_intercept {
        let mut b = vec![0.0; p];
        b[0] = start;
        b
    } else {
        vec![start; p]
    };

    let mut eta = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut ww = vec![0.0; n];
    linear_predictor(x, p, &beta, &mut eta);
    let mut dev = deviance(&eta, y, w);

    for iteration in 1..=config.max_iterations {
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let v = (mu * (1.0 - mu)).max(1e-300);
            ww[i] = w[i] * v;
            z[i] = eta[i] + (y[i] - mu) / v;
        }
        let (xtwx, xtwz) = accumulate(x, p, &z, &ww);
        let proposal = solve_normal_equations(xtwx, xtwz).ok_or(IrlsFailure::Singular)?;

        // Step halving guards against the rare Newton overshoot.
        let mut step = 1.0;
        let mut next = proposal.clone();
        let mut new_dev;
        loop {
            for j in 0..p {
                next[j] = beta[j] + step * (proposal[j] - beta[j]);
            }
            linear_predictor(x, p, &next, &mut eta);
            new_dev = deviance(&eta, y, w);
            if new_dev <= dev * (1.0 + 1e-12) + 1e-12 || step < 1e-3 {
                break;
            }
            step *= 0.5;
        }

        let max_eta = eta
            .iter()
            .zip(w)
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(e, _)| e.abs())
            .fold(0.0, f64::max);
        if max_eta > SEPARATION_ETA {
            return Err(IrlsFailure::Separation);
        }

        let change = beta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta.copy_from_slice(&next);
        dev = new_dev;
        if change < config.tolerance {
            return Ok(IrlsFit {
                coefficients: beta,
                iterations: iteration,
            });
        }
    }
    Err(IrlsFailure::NonConvergence(config.max_iterations))
}
