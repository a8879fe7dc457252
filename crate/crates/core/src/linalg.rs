//! Linear systems `(I - P) z = b` and `(I - P^T) z = b` for substochastic
//! transition matrices restricted to transient states.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Above this many transient states the dense LU is replaced by Gauss-Seidel.
const DENSE_LIMIT: usize = 3000;
const GS_TOL: f64 = 1e-13;
const GS_MAX_SWEEPS: usize = 200_000;

pub(crate) type SparseRows = Vec<Vec<(usize, f64)>>;

/// Solves `(I - P) z = b` (or the transposed system) where row `i` of `p`
/// lists the entries `P[i][j]`.
pub(crate) fn solve_transient(p: &SparseRows, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    check_leaves(p)?;
    let z = if n <= DENSE_LIMIT {
        solve_dense(p, b, transpose)?
    } else {
        solve_gauss_seidel(p, b, transpose)?
    };
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("linear solve produced non-finite values".into()));
    }
    Ok(z)
}

/// `I - P` is invertible exactly when every state reaches a row that loses
/// mass. Checked on the graph so that near-singular pivots are not trusted.
fn check_leaves(p: &SparseRows) -> Result<()> {
    let n = p.len();
    let mut preds = vec![Vec::new(); n];
    let mut reaches = vec![false; n];
    let mut queue = Vec::new();
    for (i, row) in p.iter().enumerate() {
        for &(j, v) in row {
            if v > 0.0 {
                preds[j].push(i);
            }
        }
        if row.iter().map(|e| e.1).sum::<f64>() < 1.0 - 1e-12 {
            reaches[i] = true;
            queue.push(i);
        }
    }
    while let Some(j) = queue.pop() {
        for &i in &preds[j] {
            if !reaches[i] {
                reaches[i] = true;
                queue.push(i);
            }
        }
    }
    match reaches.iter().position(|r| !r) {
        Some(i) => Err(Error::Solver(format!(
            "singular system: state {i} never leaves the transient states"
        ))),
        None => Ok(()),
    }
}

fn solve_dense(p: &SparseRows, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = p.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    for (i, row) in p.iter().enumerate() {
        for &(j, v) in row {
            if transpose {
                m[(j, i)] -= v;
            } else {
                m[(i, j)] -= v;
            }
        }
    }
    let rhs = DVector::from_column_slice(b);
    let z = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular system: the policy does not leave the transient states".into()))?;
    Ok(z.as_slice().to_vec())
}

fn solve_gauss_seidel(p: &SparseRows, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = p.len();
    let rows: SparseRows = if transpose {
        let mut t = vec![Vec::new(); n];
        for (i, row) in p.iter().enumerate() {
            for &(j, v) in row {
                t[j].push((i, v));
            }
        }
        t
    } else {
        p.clone()
    };
    let mut z = b.to_vec();
    for _ in 0..GS_MAX_SWEEPS {
        let mut change = 0.0f64;
        for i in 0..n {
            let mut diag = 1.0;
            let mut acc = b[i];
            for &(j, v) in &rows[i] {
                if j == i {
                    diag -= v;
                } else {
                    acc += v * z[j];
                }
            }
            if diag <= 0.0 {
                return Err(Error::Solver(format!("state {i} is absorbing within the transient set")));
            }
            let next = acc / diag;
            change = change.max((next - z[i]).abs() / next.abs().max(1.0));
            z[i] = next;
        }
        if change < GS_TOL {
            return Ok(z);
        }
    }
    Err(Error::Solver("Gauss-Seidel did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> SparseRows {
        vec![vec![(0, 0.5), (1, 0.25)], vec![(0, 0.1)]]
    }

    #[test]
    fn dense_and_iterative_agree() {
        let b = [1.0, 0.0];
        for transpose in [false, true] {
            let d = solve_dense(&chain(), &b, transpose).unwrap();
            let g = solve_gauss_seidel(&chain(), &b, transpose).unwrap();
            for (x, y) in d.iter().zip(&g) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn geometric_self_loop() {
        let z = solve_transient(&vec![vec![(0, 0.5)]], &[1.0], true).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn closed_loop_is_singular() {
        assert!(solve_transient(&vec![vec![(0, 1.0)]], &[1.0], false).is_err());
    }

    #[test]
    fn closed_cycle_beside_a_leaking_state_is_singular() {
        // States 1 and 2 swap forever while state 0 leaks.
        let p = vec![vec![(1, 0.5)], vec![(2, 1.0)], vec![(1, 1.0)]];
        assert!(solve_transient(&p, &[1.0, 0.0, 0.0], true).is_err());
        assert!(solve_transient(&p, &[1.0, 0.0, 0.0], false).is_err());
    }
}
