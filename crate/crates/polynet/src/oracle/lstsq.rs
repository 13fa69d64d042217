//! Least squares via Householder QR with column pivoting.
//!
//! Full-rank systems solve by back substitution; rank-deficient ones fall
//! back to a complete orthogonal decomposition so the returned solution is
//! the minimum-norm least-squares solution. Deficiency is flagged, never
//! fatal.

use crate::{Error, Result, Tensor};

/// Diagonal entries of pivoted R below this fraction of the largest one
/// count as numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// `(n, nrhs)` coefficient matrix.
    pub coefficients: Tensor,
    /// L2 residual per right-hand side, computed against the original system.
    pub residuals: Vec<f64>,
    /// `|r_11| / |r_nn|` of the pivoted factor; infinity when singular.
    pub condition: f64,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm least squares for `design x = targets` with rows >= columns.
/// `targets` may be rank 1 (single RHS) or rank 2 `(m, nrhs)`.
pub fn solve_least_squares(design: &Tensor, targets: &Tensor) -> Result<LstsqSolution> {
    if design.rank() != 2 {
        return Err(Error::shape("solve_least_squares", "design must be rank 2".to_string()));
    }
    let (m, n) = (design.shape()[0], design.shape()[1]);
    if m < n {
        return Err(Error::shape(
            "solve_least_squares",
            format!("underdetermined: {m} rows < {n} columns"),
        ));
    }
    let (rhs_rows, nrhs) = match targets.rank() {
        1 => (targets.len(), 1),
        2 => (targets.shape()[0], targets.shape()[1]),
        _ => {
            return Err(Error::shape("solve_least_squares", "targets must be rank 1 or 2".to_string()));
        }
    };
    if rhs_rows != m {
        return Err(Error::shape(
            "solve_least_squares",
            format!("design has {m} rows, targets {rhs_rows}"),
        ));
    }

    // Working copies, row-major.
    let mut a = design.data().to_vec();
    let mut b = targets.data().to_vec(); // (m, nrhs)
    let idx = |i: usize, j: usize| i * n + j;
    let bidx = |i: usize, j: usize| i * nrhs + j;

    let mut piv: Vec<usize> = (0..n).collect();

    // Householder QR with column pivoting; reflections applied to b as well,
    // so b becomes Q^T b.
    for j in 0..n {
        // Pivot on the largest remaining column norm.
        let mut best = j;
        let mut best_norm = 0.0;
        for c in j..n {
            let norm: f64 = (j..m).map(|r| a[idx(r, c)] * a[idx(r, c)]).sum();
            if norm > best_norm {
                best_norm = norm;
                best = c;
            }
        }
        if best != j {
            for r in 0..m {
                a.swap(idx(r, j), idx(r, best));
            }
            piv.swap(j, best);
        }

        let norm = best_norm.sqrt();
        if norm == 0.0 {
            continue; // column already zero; diag stays 0
        }
        let alpha = if a[idx(j, j)] >= 0.0 { -norm } else { norm };
        // v = x - alpha e1 on rows j..m
        let mut v = vec![0.0; m - j];
        v[0] = a[idx(j, j)] - alpha;
        for r in j + 1..m {
            v[r - j] = a[idx(r, j)];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        // Apply H = I - beta v v^T to the trailing columns of a.
        for c in j..n {
            let s: f64 = (j..m).map(|r| v[r - j] * a[idx(r, c)]).sum::<f64>() * beta;
            for r in j..m {
                a[idx(r, c)] -= s * v[r - j];
            }
        }
        // And to b.
        for c in 0..nrhs {
            let s: f64 = (j..m).map(|r| v[r - j] * b[bidx(r, c)]).sum::<f64>() * beta;
            for r in j..m {
                b[bidx(r, c)] -= s * v[r - j];
            }
        }
        a[idx(j, j)] = alpha;
        for r in j + 1..m {
            a[idx(r, j)] = 0.0;
        }
    }

    let diag_max = (0..n).map(|j| a[idx(j, j)].abs()).fold(0.0_f64, f64::max);
    let rank = if diag_max == 0.0 {
        0
    } else {
        (0..n).take_while(|&j| a[idx(j, j)].abs() >= RANK_TOLERANCE * diag_max).count()
    };
    let diag_min = (0..n).map(|j| a[idx(j, j)].abs()).fold(f64::INFINITY, f64::min);
    let condition = if diag_min == 0.0 { f64::INFINITY } else { diag_max / diag_min };
    let rank_deficient = rank < n;

    let mut x_piv = vec![0.0; n * nrhs];
    if !rank_deficient {
        // Back substitution on R x = Q^T b.
        for c in 0..nrhs {
            for j in (0..n).rev() {
                let mut s = b[bidx(j, c)];
                for l in j + 1..n {
                    s -= a[idx(j, l)] * x_piv[l * nrhs + c];
                }
                x_piv[j * nrhs + c] = s / a[idx(j, j)];
            }
        }
    } else {
        // Complete orthogonal decomposition: annihilate R[.., rank..n] with
        // reflections from the right, then solve the triangular core and map
        // back. Gives the minimum-norm solution.
        let r = rank.max(1).min(n); // r == 0 means x = 0; handled naturally below
        let mut reflectors: Vec<(usize, Vec<f64>)> = Vec::new();
        if rank > 0 {
            for i in (0..r).rev() {
                // Coordinates {i} ∪ {r..n} of row i.
                let mut v = vec![a[idx(i, i)]];
                v.extend((r..n).map(|c| a[idx(i, c)]));
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let alpha = if v[0] >= 0.0 { -norm } else { norm };
                let mut u = v;
                u[0] -= alpha;
                let utu: f64 = u.iter().map(|x| x * x).sum();
                if utu == 0.0 {
                    continue;
                }
                let beta = 2.0 / utu;
                for t in 0..=i {
                    let mut s = a[idx(t, i)] * u[0];
                    for (uj, c) in u[1..].iter().zip(r..n) {
                        s += a[idx(t, c)] * uj;
                    }
                    s *= beta;
                    a[idx(t, i)] -= s * u[0];
                    for (uj, c) in u[1..].iter().zip(r..n) {
                        a[idx(t, c)] -= s * uj;
                    }
                }
                reflectors.push((i, u));
            }
            for c in 0..nrhs {
                // Solve T w1 = c1 on the r x r core.
                let mut w = vec![0.0; n];
                for j in (0..rank).rev() {
                    let mut s = b[bidx(j, c)];
                    for l in j + 1..rank {
                        s -= a[idx(j, l)] * w[l];
                    }
                    w[j] = s / a[idx(j, j)];
                }
                // x = Z w: apply stored reflectors in reverse of construction.
                for (i, u) in reflectors.iter().rev() {
                    let mut s = u[0] * w[*i];
                    for (uj, cc) in u[1..].iter().zip(r..n) {
                        s += uj * w[cc];
                    }
                    s *= 2.0 / u.iter().map(|x| x * x).sum::<f64>();
                    w[*i] -= s * u[0];
                    for (uj, cc) in u[1..].iter().zip(r..n) {
                        w[cc] -= s * uj;
                    }
                }
                for j in 0..n {
                    x_piv[j * nrhs + c] = w[j];
                }
            }
        }
    }

    // Undo the column pivoting.
    let mut x = vec![0.0; n * nrhs];
    for (j, &p) in piv.iter().enumerate() {
        for c in 0..nrhs {
            x[p * nrhs + c] = x_piv[j * nrhs + c];
        }
    }
    let coefficients = Tensor::new(vec![n, nrhs], x)?;

    // Residuals against the original system.
    let fitted = design.matmul(&coefficients)?;
    let mut residuals = vec![0.0; nrhs];
    let t_data = targets.data();
    for i in 0..m {
        for c in 0..nrhs {
            let diff = fitted.data()[i * nrhs + c] - t_data[i * nrhs + c];
            residuals[c] += diff * diff;
        }
    }
    for r in &mut residuals {
        *r = r.sqrt();
    }

    Ok(LstsqSolution {
        coefficients,
        residuals,
        condition,
        rank,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_well_conditioned_exact() {
        let a = Tensor::new(vec![3, 3], vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        let x_true = vec![0.5, -1.5, 2.0];
        let b = a.matmul(&Tensor::new(vec![3, 1], x_true.clone()).unwrap()).unwrap();
        let sol = solve_least_squares(&a, &b).unwrap();
        for (got, want) in sol.coefficients.data().iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(!sol.rank_deficient);
        assert!(sol.residuals[0] < 1e-12);
    }

    #[test]
    fn overdetermined_consistent_zero_residual() {
        // 5 rows, 2 columns, targets exactly in the column space.
        let a = Tensor::new(vec![5, 2], vec![1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0, 5.0]).unwrap();
        let x_true = Tensor::new(vec![2, 1], vec![0.7, -0.3]).unwrap();
        let b = a.matmul(&x_true).unwrap();
        let sol = solve_least_squares(&a, &b).unwrap();
        assert!(sol.residuals[0] < 1e-12, "residual {}", sol.residuals[0]);
        for (got, want) in sol.coefficients.data().iter().zip(x_true.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn vandermonde_cubic_recovery() {
        // Degree-3 polynomial from 8 points.
        let coeff = [1.25, -2.0, 0.5, 3.0]; // c0 + c1 t + c2 t^2 + c3 t^3
        let ts: Vec<f64> = (0..8).map(|i| -1.0 + (2.0 / 7.0) * i as f64).collect();
        let mut design = Vec::new();
        let mut target = Vec::new();
        for &t in &ts {
            design.extend_from_slice(&[1.0, t, t * t, t * t * t]);
            target.push(coeff[0] + coeff[1] * t + coeff[2] * t * t + coeff[3] * t * t * t);
        }
        let a = Tensor::new(vec![8, 4], design).unwrap();
        let b = Tensor::from_vec(target);
        let sol = solve_least_squares(&a, &b).unwrap();
        for (got, want) in sol.coefficients.data().iter().zip(&coeff) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn rank_deficiency_flagged_and_min_norm() {
        // Two identical columns: solutions satisfy x0 + x1 = s; minimum norm
        // splits evenly.
        let a = Tensor::new(vec![4, 2], vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let sol = solve_least_squares(&a, &b).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        assert!(sol.condition > 1e10);
        let x = sol.coefficients.data();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10, "{x:?}");
        assert!(sol.residuals[0] < 1e-12);
    }

    #[test]
    fn underdetermined_rejected() {
        let a = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(solve_least_squares(&a, &b).is_err());
    }

    #[test]
    fn multiple_rhs() {
        let a = Tensor::new(vec![4, 2], vec![1.0, 0.5, 1.0, 1.5, 1.0, 2.5, 1.0, 3.5]).unwrap();
        let x_true = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 0.25]).unwrap();
        let b = a.matmul(&x_true).unwrap();
        let sol = solve_least_squares(&a, &b).unwrap();
        for (got, want) in sol.coefficients.data().iter().zip(x_true.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
