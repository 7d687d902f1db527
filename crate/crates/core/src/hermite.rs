//! Normalized probabilists' Hermite polynomials.
//!
//! `He_k(v) / sqrt(k!)` is orthonormal in `L^2` with the Gaussian weight
//! `(2 pi)^{-1/2} exp(-v^2/2)`. In that basis
//!
//! ```text
//! v He_k      = sqrt(k+1) He_{k+1} + sqrt(k) He_{k-1}
//! d/dv He_k   = sqrt(k) He_{k-1}
//! ```
//!
//! The quadrature tables built here serve nodal oracle checks only; the
//! solver itself never leaves coefficient space in velocity.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::{DomainSpec, MAX_HERMITE_DEGREE};
use crate::error::{KfpError, Result};
use crate::scalar::Real;

/// Recurrence and quadrature tables for one velocity dimension.
#[derive(Clone, Debug)]
pub struct BasisTables<T> {
    pub kv: usize,
    /// `sqrt(k)` for `k = 0..=kv+1`.
    pub sqrt_k: Vec<T>,
    /// Gauss-Hermite nodes for the normalized Gaussian weight.
    pub nodes: Vec<T>,
    /// Matching weights, summing to one.
    pub weights: Vec<T>,
    /// `values[q][k]` is the normalized polynomial of degree `k` at `nodes[q]`.
    pub values: Vec<Vec<T>>,
    /// `derivs[q][k]` is its velocity derivative at `nodes[q]`.
    pub derivs: Vec<Vec<T>>,
}

/// Builds the tables for `domain`, with `kv + 2` quadrature nodes so that
/// products of three basis functions up to degree `2 kv + 3` are integrated exactly.
pub fn build_basis<T: Real>(domain: &DomainSpec<T>) -> Result<BasisTables<T>> {
    domain.validate()?;
    build_tables(domain.kv, domain.kv + 2)
}

pub fn build_tables<T: Real>(kv: usize, n_nodes: usize) -> Result<BasisTables<T>> {
    if kv > MAX_HERMITE_DEGREE {
        return Err(KfpError::InvalidDomain(format!(
            "Kv = {kv} exceeds the recurrence cap {MAX_HERMITE_DEGREE}"
        )));
    }
    let (nodes, weights) = gauss_hermite(n_nodes);
    let sqrt_k = (0..=kv + 1).map(|k| T::lit((k as f64).sqrt())).collect();
    let values: Vec<Vec<T>> = nodes
        .iter()
        .map(|&v| hermite_values(kv, v).into_iter().map(T::lit).collect())
        .collect();
    let derivs: Vec<Vec<T>> = nodes
        .iter()
        .map(|&v| {
            let h = hermite_values(kv, v);
            (0..=kv)
                .map(|k| if k == 0 { 0.0 } else { (k as f64).sqrt() * h[k - 1] })
                .map(T::lit)
                .collect()
        })
        .collect();
    Ok(BasisTables {
        kv,
        sqrt_k,
        nodes: nodes.into_iter().map(T::lit).collect(),
        weights: weights.into_iter().map(T::lit).collect(),
        values,
        derivs,
    })
}

/// Normalized Hermite values `h_0(v), .., h_kv(v)` by the stable three-term recurrence.
pub fn hermite_values(kv: usize, v: f64) -> Vec<f64> {
    let mut h = vec![0.0; kv + 1];
    h[0] = 1.0;
    if kv >= 1 {
        h[1] = v;
    }
    for k in 1..kv {
        h[k + 1] = (v * h[k] - (k as f64).sqrt() * h[k - 1]) / ((k + 1) as f64).sqrt();
    }
    h
}

/// Gauss quadrature for the standard normal density.
///
/// Golub-Welsch eigenvalues seed a Newton polish of the nodes on `h_n`;
/// weights come from the Christoffel formula `1 / sum_k h_k(x)^2`, which
/// stays accurate where squared eigenvector entries do not.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let h = hermite_values(n, *x);
            // h_n' = sqrt(n) h_{n-1}
            let step = h[n] / ((n as f64).sqrt() * h[n - 1]);
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let h = hermite_values(n - 1, *x);
        weights.push(1.0 / h.iter().map(|v| v * v).sum::<f64>());
    }
    (nodes, weights)
}

impl<T: Real> BasisTables<T> {
    /// Gram matrix of the basis under the quadrature rule.
    pub fn gram(&self) -> Vec<Vec<T>> {
        let n = self.kv + 1;
        let mut g = vec![vec![T::zero(); n]; n];
        for (q, w) in self.weights.iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    g[a][b] += *w * self.values[q][a] * self.values[q][b];
                }
            }
        }
        g
    }

    /// `int h_a(v) p(v) h_b(v) dmu` for a pointwise function `p`, by quadrature.
    pub fn weighted_pairing(&self, a: usize, b: usize, p: impl Fn(T) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(q, (&v, &w))| w * p(v) * self.values[q][a] * self.values[q][b])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(kv: usize) -> BasisTables<f64> {
        let d = DomainSpec::new(1, std::f64::consts::PI, 8, kv).unwrap();
        build_basis(&d).unwrap()
    }

    #[test]
    fn orthonormal_under_quadrature() {
        for kv in [2usize, 7, 31] {
            let g = tables(kv).gram();
            for a in 0..=kv {
                for b in 0..=kv {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((g[a][b] - expect).abs() < 1e-12, "kv={kv} ({a},{b}) {}", g[a][b]);
                }
            }
        }
    }

    #[test]
    fn multiplication_ladder_matches_quadrature() {
        let t = tables(6);
        // v h_0 = h_1 with coefficient sqrt(1).
        assert!((t.weighted_pairing(0, 1, |v| v) - 1.0).abs() < 1e-13);
        for k in 0..6 {
            let up = t.weighted_pairing(k, k + 1, |v| v);
            assert!((up - ((k + 1) as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_ladder_matches_quadrature() {
        let t = tables(6);
        for k in 1..=6 {
            // <d/dv h_k, h_{k-1}>
            let s: f64 = (0..t.nodes.len())
                .map(|q| t.weights[q] * t.derivs[q][k] * t.values[q][k - 1])
                .sum();
            assert!((s - (k as f64).sqrt()).abs() < 1e-12);
        }
        // d/dv h_1 = h_0
        assert!(t.derivs.iter().all(|d| (d[1] - 1.0).abs() < 1e-15));
    }

    #[test]
    fn cap_is_enforced() {
        assert!(build_tables::<f64>(181, 10).is_err());
        assert!(build_tables::<f64>(180, 182).is_ok());
    }

    #[test]
    fn weights_sum_to_one() {
        let (_, w) = gauss_hermite(40);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }
}
