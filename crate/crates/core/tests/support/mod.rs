//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the code under test beyond plain data types.

#![allow(dead_code)]

use dci_core::GridSpec;

/// Plane-stress constitutive matrix for modulus `e`.
fn plane_stress(e: f64, nu: f64) -> [[f64; 3]; 3] {
    let c = e / (1.0 - nu * nu);
    [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]]
}

/// Element stiffness of the unit square `[x0, x0+1] x [y0, y0+1]` as a map
/// over its four corner positions, from bilinear shape functions written in
/// physical coordinates and 2x2 Gauss quadrature.
fn square_stiffness(e: f64, nu: f64) -> ([(f64, f64); 4], [[f64; 8]; 8]) {
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let d = plane_stress(e, nu);
    let g = 0.5 / 3f64.sqrt();
    let mut k = [[0.0; 8]; 8];
    for &px in &[0.5 - g, 0.5 + g] {
        for &py in &[0.5 - g, 0.5 + g] {
            // N_a = (1 - |x - xa|)(1 - |y - ya|)
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ya)) in corners.iter().enumerate() {
                let sx = if xa == 0.0 { -1.0 } else { 1.0 };
                let sy = if ya == 0.0 { -1.0 } else { 1.0 };
                let dndx = sx * (1.0 - (py - ya).abs());
                let dndy = sy * (1.0 - (px - xa).abs());
                b[0][2 * a] = dndx;
                b[1][2 * a + 1] = dndy;
                b[2][2 * a] = dndy;
                b[2][2 * a + 1] = dndx;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += b[p][i] * d[p][q] * b[q][j];
                        }
                    }
                    k[i][j] += 0.25 * s;
                }
            }
        }
    }
    (corners, k)
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for j in c..n {
                    a[r][j] -= f * a[c][j];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r][j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Compliance and full displacement vector for `densities` (row-major,
/// row 0 on top) by dense assembly. Node `(col, row)` carries DOFs
/// `2 (col (height+1) + row)` and `+1`; `y` points up.
pub fn dense_compliance(
    grid: &GridSpec,
    densities: &[f64],
    e0: f64,
    emin: f64,
    penal: f64,
    nu: f64,
    fixed: &[usize],
    load: &[f64],
) -> (f64, Vec<f64>) {
    let n_dofs = 2 * (grid.width + 1) * (grid.height + 1);
    let mut k = vec![vec![0.0; n_dofs]; n_dofs];
    let (corners, ke) = square_stiffness(1.0, nu);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let x = densities[row * grid.width + col];
            let e = emin + x.powf(penal) * (e0 - emin);
            // corner (dx, dy) with y up sits at node (col + dx, row + 1 - dy)
            let dofs: Vec<usize> = corners
                .iter()
                .flat_map(|&(dx, dy)| {
                    let n = (col + dx as usize) * (grid.height + 1) + (row + 1 - dy as usize);
                    [2 * n, 2 * n + 1]
                })
                .collect();
            for i in 0..8 {
                for j in 0..8 {
                    k[dofs[i]][dofs[j]] += e * ke[i][j];
                }
            }
        }
    }
    let free: Vec<usize> = (0..n_dofs).filter(|d| !fixed.contains(d)).collect();
    let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| k[i][j]).collect()).collect();
    let b: Vec<f64> = free.iter().map(|&i| load[i]).collect();
    let uf = dense_solve(a, b);
    let mut u = vec![0.0; n_dofs];
    for (&d, &v) in free.iter().zip(&uf) {
        u[d] = v;
    }
    let c = u.iter().zip(load).map(|(a, b)| a * b).sum();
    (c, u)
}

/// Inter-class variance evaluated from the samples for every threshold
/// `t in 0..=254` (class 0: levels `<= t`); returns all maximizers.
pub fn otsu_exhaustive(levels: &[u8]) -> Vec<u8> {
    let n = levels.len() as f64;
    let mut scores = Vec::with_capacity(255);
    for t in 0..=254u8 {
        let (lo, hi): (Vec<f64>, Vec<f64>) = {
            let lo: Vec<f64> = levels.iter().filter(|&&l| l <= t).map(|&l| l as f64).collect();
            let hi: Vec<f64> = levels.iter().filter(|&&l| l > t).map(|&l| l as f64).collect();
            (lo, hi)
        };
        if lo.is_empty() || hi.is_empty() {
            scores.push(f64::NEG_INFINITY);
            continue;
        }
        let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        scores.push(w0 * w1 * (m0 - m1).powi(2));
    }
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..=254u8).filter(|&t| scores[t as usize] >= best * (1.0 - 1e-12)).collect()
}

/// Penalized logistic objective for one scalar feature plus intercept.
pub fn logistic_objective_1d(points: &[(f64, bool)], w0: f64, w1: f64, lambda: f64) -> f64 {
    let ll: f64 = points
        .iter()
        .map(|&(f, y)| {
            let s = w0 + w1 * f;
            let p = 1.0 / (1.0 + (-s).exp());
            if y {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    ll - 0.5 * lambda * w1 * w1
}

/// Brute-force maximizer of [`logistic_objective_1d`] over `[-r, r]^2`.
pub fn logistic_grid_search(points: &[(f64, bool)], lambda: f64, r: f64, step: f64) -> (f64, f64) {
    let n = (2.0 * r / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=n {
        let w0 = -r + i as f64 * step;
        for j in 0..=n {
            let w1 = -r + j as f64 * step;
            let v = logistic_objective_1d(points, w0, w1, lambda);
            if v > best.0 {
                best = (v, w0, w1);
            }
        }
    }
    (best.1, best.2)
}

/// Fourth-order central difference `f'(x)` with step `h`.
pub fn five_point_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}
