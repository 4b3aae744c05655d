//! Brute-force oracles shared by the integration suites. Everything here
//! is deliberately independent of the library's computation paths.

use ndarray::{Array1, Array2};

/// Enumeration oracle for the 2D hard-margin SVM: the optimum is
/// supported by two or three active constraints, so try every candidate
/// active set, keep feasible stationary candidates, and return the
/// feasible weight vector of minimum norm.
pub fn brute_force_qp(x: &Array2<f64>, y: &[i8]) -> Option<(Array1<f64>, f64)> {
    let n = x.nrows();
    let mut best: Option<(f64, Array1<f64>, f64)> = None;
    let feasible = |theta: &Array1<f64>, b: f64| -> bool {
        (0..n).all(|i| y[i] as f64 * (x.row(i).dot(theta) + b) >= 1.0 - 1e-9)
    };
    let mut consider = |theta: Array1<f64>, b: f64| {
        let norm = theta.dot(&theta);
        if norm > 1e-18 && feasible(&theta, b) {
            match &best {
                Some((cur, _, _)) if *cur <= norm => {}
                _ => best = Some((norm, theta, b)),
            }
        }
    };
    // opposite-label pairs: theta = alpha (x_i - x_j), both constraints tight
    for i in 0..n {
        for j in 0..n {
            if y[i] == 1 && y[j] == -1 {
                let d = &x.row(i) - &x.row(j);
                let dd = d.dot(&d);
                if dd < 1e-18 {
                    continue;
                }
                let theta = d.mapv(|v| 2.0 * v / dd);
                let b = 1.0 - theta.dot(&x.row(i));
                consider(theta, b);
            }
        }
    }
    // triples: solve the 4x4 KKT system in (alpha1, alpha2, alpha3, b)
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let idx = [i, j, k];
                let mut a = [[0.0f64; 4]; 4];
                let mut rhs = [0.0f64; 4];
                for (r, &p) in idx.iter().enumerate() {
                    for (c, &q) in idx.iter().enumerate() {
                        a[r][c] = y[p] as f64 * y[q] as f64 * x.row(p).dot(&x.row(q));
                    }
                    a[r][3] = y[p] as f64;
                    rhs[r] = 1.0;
                    a[3][r] = y[p] as f64;
                }
                if let Some(sol) = solve4(a, rhs) {
                    if sol[0] < -1e-9 || sol[1] < -1e-9 || sol[2] < -1e-9 {
                        continue;
                    }
                    let mut theta = Array1::zeros(x.ncols());
                    for (r, &p) in idx.iter().enumerate() {
                        theta.scaled_add(sol[r].max(0.0) * y[p] as f64, &x.row(p));
                    }
                    consider(theta, sol[3]);
                }
            }
        }
    }
    best.map(|(_, theta, b)| (theta, b))
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut pivot = col;
        for r in (col + 1)..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        out[r] = b[r] / a[r][r];
    }
    Some(out)
}

/// Plain-loop Pearson coefficient from the n-sum formula.
pub fn pearson_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    if den == 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / den)
}
