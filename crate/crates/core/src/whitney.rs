//! Lowest-order Whitney forms on a single simplex.
//!
//! For a k-face `[v0..vk]` of an n-simplex the Whitney form is
//! `k! * sum_j (-1)^j λ_vj dλ_v0 ∧ .. ^dλ_vj .. ∧ dλ_vk`. Its L² Gram matrix only
//! needs the gradient inner products `∇λ_a · ∇λ_b` and the exact barycentric
//! moments `∫ λ_a λ_b = vol (1 + δ_ab) / ((n+1)(n+2))`.

use nalgebra::DMatrix;

use crate::mesh::{combinations, edge_gram, factorial, simplex_volume};

/// Inner products of barycentric gradients, `(n+1) x (n+1)`.
pub fn barycentric_gradient_gram(coords: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = coords.len() - 1;
    let pts: Vec<&Vec<f64>> = coords.iter().collect();
    let g = edge_gram(&pts);
    let ginv = g.try_inverse()?;
    let mut gamma = DMatrix::zeros(n + 1, n + 1);
    for a in 0..n {
        for b in 0..n {
            gamma[(a + 1, b + 1)] = ginv[(a, b)];
        }
    }
    for a in 1..=n {
        let s: f64 = (1..=n).map(|b| gamma[(a, b)]).sum();
        gamma[(a, 0)] = -s;
        gamma[(0, a)] = -s;
    }
    gamma[(0, 0)] = -(1..=n).map(|a| gamma[(a, 0)]).sum::<f64>();
    Some(gamma)
}

/// Gram matrix of the Whitney k-forms of one simplex. Faces are the
/// (k+1)-subsets of local vertices in lexicographic order, each oriented by
/// increasing local index.
pub fn whitney_gram(coords: &[Vec<f64>], k: usize) -> Option<DMatrix<f64>> {
    let n = coords.len() - 1;
    let gamma = barycentric_gradient_gram(coords)?;
    let pts: Vec<&Vec<f64>> = coords.iter().collect();
    let vol = simplex_volume(&pts);
    let moment = |a: usize, b: usize| -> f64 {
        let base = vol / ((n + 1) * (n + 2)) as f64;
        if a == b {
            2.0 * base
        } else {
            base
        }
    };
    let faces = combinations(n + 1, k + 1);
    let scale = factorial(k).powi(2);
    let m = faces.len();
    let mut gram = DMatrix::zeros(m, m);
    for (i, s) in faces.iter().enumerate() {
        for (j, t) in faces.iter().enumerate().skip(i) {
            let mut acc = 0.0;
            for (a, &sa) in s.iter().enumerate() {
                let rest_s: Vec<usize> = s.iter().copied().filter(|&x| x != sa).collect();
                for (b, &tb) in t.iter().enumerate() {
                    let rest_t: Vec<usize> = t.iter().copied().filter(|&x| x != tb).collect();
                    let minor = if k == 0 {
                        1.0
                    } else {
                        DMatrix::from_fn(k, k, |r, c| gamma[(rest_s[r], rest_t[c])]).determinant()
                    };
                    let sign = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * moment(sa, tb) * minor;
                }
            }
            gram[(i, j)] = scale * acc;
            gram[(j, i)] = scale * acc;
        }
    }
    Some(gram)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tet() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.2, 0.0],
            vec![0.3, 1.1, 0.1],
            vec![0.2, 0.1, 0.9],
        ]
    }

    #[test]
    fn top_degree_gram_is_inverse_volume() {
        for coords in [tet(), vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.5, 1.5]]] {
            let n = coords.len() - 1;
            let pts: Vec<&Vec<f64>> = coords.iter().collect();
            let vol = simplex_volume(&pts);
            let g = whitney_gram(&coords, n).unwrap();
            assert!((g[(0, 0)] - 1.0 / vol).abs() < 1e-12 / vol);
        }
    }

    #[test]
    fn zero_forms_give_p1_mass_matrix() {
        let coords = tet();
        let pts: Vec<&Vec<f64>> = coords.iter().collect();
        let vol = simplex_volume(&pts);
        let g = whitney_gram(&coords, 0).unwrap();
        assert!((g.sum() - vol).abs() < 1e-14);
        assert!((g[(0, 0)] - vol / 10.0).abs() < 1e-14);
        assert!((g[(0, 1)] - vol / 20.0).abs() < 1e-14);
    }

    #[test]
    fn constant_one_form_is_reproduced() {
        // edge values of a constant 1-form c are c·(x_j - x_i); the Whitney
        // interpolant is exact, so the Gram form gives |c|² vol
        let coords = tet();
        let c = [0.7, -1.3, 0.4];
        let faces = combinations(4, 2);
        let xi: Vec<f64> = faces
            .iter()
            .map(|f| {
                (0..3)
                    .map(|d| c[d] * (coords[f[1]][d] - coords[f[0]][d]))
                    .sum()
            })
            .collect();
        let xi = nalgebra::DVector::from_vec(xi);
        let g = whitney_gram(&coords, 1).unwrap();
        let pts: Vec<&Vec<f64>> = coords.iter().collect();
        let vol = simplex_volume(&pts);
        let norm2: f64 = c.iter().map(|x| x * x).sum();
        assert!(((xi.transpose() * &g * &xi)[0] - norm2 * vol).abs() < 1e-12);
    }

    #[test]
    fn gram_matrices_are_positive_definite() {
        let coords = tet();
        for k in 0..=3 {
            let g = whitney_gram(&coords, k).unwrap();
            assert!(g.clone().cholesky().is_some(), "degree {k}");
            assert!((&g - g.transpose()).amax() < 1e-15);
        }
    }
}
