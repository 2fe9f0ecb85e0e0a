//! Gauss-Legendre quadrature rules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule on a closed interval.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Approximates the integral of `f` over the rule's interval.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Legendre rule with `m` nodes on `[lo, hi]`.
///
/// Nodes and weights come from the Golub-Welsch eigendecomposition of the
/// Jacobi matrix; the rule is exact for polynomials of degree `2m - 1`.
pub fn gauss_legendre(m: usize, lo: f64, hi: f64) -> Result<QuadratureRule> {
    if m < 1 {
        return Err(Error::Range("quadrature rule needs at least one node".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!(
            "invalid quadrature interval [{lo}, {hi}]"
        )));
    }

    // Jacobi matrix for Legendre polynomials: zero diagonal, off-diagonal
    // b_k = k / sqrt(4k^2 - 1).
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if j + 1 == i || i + 1 == j {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);

    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, 2.0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for (t, w) in pairs {
        nodes.push(mid + half * t);
        let w = half * w;
        if !(w > 0.0) {
            return Err(Error::numerical(format!(
                "non-positive quadrature weight {w} at node count {m}"
            )));
        }
        weights.push(w);
    }
    Ok(QuadratureRule { nodes, weights })
}
