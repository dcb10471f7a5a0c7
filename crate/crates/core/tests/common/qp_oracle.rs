//! Exhaustive active-set solver for the soft-margin SVM dual on tiny problems.
//!
//! Every multiplier is fixed at 0, fixed at `C`, or left free. For each of the
//! `3^l` patterns the free block is solved exactly from the stationarity and
//! equality conditions; the best feasible pattern is the global optimum
//! because the dual is concave.

#![allow(dead_code)]

pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub objective: f64,
}

pub fn rbf_gram(points: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

pub fn dual_value(k: &[Vec<f64>], y: &[f64], alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alphas[i] * alphas[j] * y[i] * y[j] * k[i][j];
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

pub fn solve_dual(k: &[Vec<f64>], y: &[f64], c: f64) -> QpSolution {
    let l = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let feas_tol = 1e-10;
    let mut best: Option<QpSolution> = None;
    for code in 0..3usize.pow(l as u32) {
        let mut state = vec![0u8; l];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let free: Vec<usize> = (0..l).filter(|&i| state[i] == 2).collect();
        let mut alphas: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            // [Q_FF y_F; y_F' 0] [a_F; nu] = [1 - Q_FB a_B; -y_B' a_B]
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cidx, &j) in free.iter().enumerate() {
                    a[r][cidx] = q(i, j);
                }
                a[r][m] = y[i];
                a[m][r] = y[i];
                b[r] = 1.0 - (0..l).filter(|j| state[*j] == 1).map(|j| q(i, j) * c).sum::<f64>();
            }
            b[m] = -(0..l).filter(|j| state[*j] == 1).map(|j| y[j] * c).sum::<f64>();
            let Some(x) = solve(a, b) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alphas[i] = x[r];
            }
        }
        if alphas.iter().any(|&a| a < -feas_tol || a > c + feas_tol) {
            continue;
        }
        let eq: f64 = alphas.iter().zip(y).map(|(a, y)| a * y).sum();
        if eq.abs() > 1e-9 {
            continue;
        }
        for a in alphas.iter_mut() {
            *a = a.clamp(0.0, c);
        }
        let objective = dual_value(k, y, &alphas);
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(QpSolution { alphas, objective });
        }
    }
    best.expect("the all-zero pattern is always feasible")
}
