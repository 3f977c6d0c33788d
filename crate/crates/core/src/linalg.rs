//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{CMat, Complex64};

/// Largest |M − Mᴴ| entry relative to the largest |M| entry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// 2-norm condition number of a Hermitian positive semidefinite matrix.
pub fn hermitian_condition(m: &CMat) -> f64 {
    let ev = hermitian_eigenvalues(m);
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Frobenius norm.
pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ‖a − b‖_F / max(‖b‖_F, tiny).
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    fro(&(a - b)) / fro(b).max(1e-300)
}

/// Permutation matrix Π with Π[perm[i], i] = 1, so that (Πᵀ X Π)[i][j] = X[perm[i]][perm[j]].
pub fn permutation_matrix(perm: &[usize]) -> CMat {
    let k = perm.len();
    let mut p = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for (i, &src) in perm.iter().enumerate() {
        p[(src, i)] = Complex64::new(1.0, 0.0);
    }
    p
}

/// (Πᵀ X Π) computed by index relabelling.
pub fn permute_square(x: &CMat, perm: &[usize]) -> CMat {
    CMat::from_fn(x.nrows(), x.ncols(), |i, j| x[(perm[i], perm[j])])
}

/// All permutations of 0..k in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_relabelling_matches_matrix_form() {
        let x = CMat::from_fn(3, 3, |i, j| Complex64::new(i as f64, j as f64 * 0.5));
        for perm in all_permutations(3) {
            let p = permutation_matrix(&perm);
            let a = p.transpose() * &x * &p;
            assert!(rel_diff(&a, &permute_square(&x, &perm)) == 0.0);
        }
        assert_eq!(all_permutations(4).len(), 24);
    }

    #[test]
    fn condition_of_diagonal() {
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(4.0, 0.0),
        ]));
        assert!((hermitian_condition(&m) - 4.0).abs() < 1e-12);
        assert_eq!(hermitian_defect(&m), 0.0);
    }
}
