//! Least-squares fit of the depression recurrence to an amplitude train.

use super::StpError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StpFit {
    pub u: f64,
    pub tau_rec: f64,
    pub offset: f64,
    /// Root-mean-square residual of the fitted sequence.
    pub residual: f64,
}

/// Model amplitudes and their derivatives w.r.t. `(u, d, offset)`, where
/// `d = exp(-isi / tau_rec)`. The train starts from fully recovered resources.
fn model(u: f64, d: f64, offset: f64, n: usize) -> (Vec<f64>, Vec<[f64; 3]>) {
    let mut values = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    let (mut r, mut dr_du, mut dr_dd) = (1.0, 0.0, 0.0);
    for _ in 0..n {
        values.push(u * r + offset);
        jac.push([r + u * dr_du, u * dr_dd, 1.0]);
        let next_du = d * (-r + (1.0 - u) * dr_du);
        let next_dd = -1.0 + (1.0 - u) * r + d * (1.0 - u) * dr_dd;
        r = 1.0 - d + d * (1.0 - u) * r;
        dr_du = next_du;
        dr_dd = next_dd;
    }
    (values, jac)
}

fn sum_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    Some(x)
}

/// Direct estimate from the affine map between consecutive amplitudes:
/// `a[k+1] = alpha + beta * a[k]` with `beta = d (1 - u)`.
fn closed_form(a: &[f64]) -> Option<(f64, f64, f64)> {
    let x = &a[..a.len() - 1];
    let y = &a[1..];
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    if !(beta > 0.0) {
        return None;
    }
    let k = (a[0] * (1.0 - beta) - alpha) / beta;
    if !(k > 0.0) {
        return None;
    }
    let u = 2.0 * k / (k + (k * k + 4.0 * k).sqrt());
    let d = beta / (1.0 - u);
    if !(u > 0.0 && u <= 1.0 && d > 0.0 && d < 1.0) {
        return None;
    }
    Some((u, d, a[0] - u))
}

/// Fits utilization, recovery time constant and additive offset to the
/// amplitudes of an equidistant train with spacing `inter_spike_interval`.
pub fn extract_stp_params(
    amplitudes: &[f64],
    inter_spike_interval: f64,
) -> Result<StpFit, StpError> {
    if amplitudes.len() < 3 {
        return Err(StpError::FitUnderdetermined(format!(
            "need at least 3 amplitudes, got {}",
            amplitudes.len()
        )));
    }
    if !(inter_spike_interval > 0.0) || amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(StpError::FitFailed("non-finite input".into()));
    }
    let max = amplitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = amplitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 1e-12 * max.abs().max(1.0) {
        return Err(StpError::FitUnderdetermined(
            "flat amplitude sequence carries no depression signature".into(),
        ));
    }

    let n = amplitudes.len();
    let (mut u, mut d, mut c) =
        closed_form(amplitudes).unwrap_or((0.5, 0.5, amplitudes[n - 1] - 0.25));
    let (vals, _) = model(u, d, c, n);
    let mut cost = sum_sq(&vals, amplitudes);
    let mut lambda = 1e-3;

    for _ in 0..200 {
        if cost < 1e-30 {
            break;
        }
        let (vals, jac) = model(u, d, c, n);
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (row, (v, a)) in jac.iter().zip(vals.iter().zip(amplitudes)) {
            let r = a - v;
            for i in 0..3 {
                jtr[i] += row[i] * r;
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(delta) = solve3(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let (nu, nd, nc) = (u + delta[0], d + delta[1], c + delta[2]);
            if nu > 0.0 && nu <= 1.0 && nd > 0.0 && nd < 1.0 {
                let (nv, _) = model(nu, nd, nc, n);
                let ncost = sum_sq(&nv, amplitudes);
                if ncost < cost {
                    let small = delta.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-15;
                    u = nu;
                    d = nd;
                    c = nc;
                    cost = ncost;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = !small;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let tau_rec = -inter_spike_interval / d.ln();
    if !tau_rec.is_finite() || tau_rec <= 0.0 {
        return Err(StpError::FitFailed(format!(
            "recovered decay factor {d} is degenerate"
        )));
    }
    Ok(StpFit {
        u,
        tau_rec,
        offset: c,
        residual: (cost / n as f64).sqrt(),
    })
}
