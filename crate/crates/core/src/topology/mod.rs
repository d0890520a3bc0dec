//! Communication graphs, consensus weight matrices and their spectral quantity λ.

mod graph;

pub use graph::{erdos_renyi, Graph, DEFAULT_ER_RETRIES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SymMatrix, Vector};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Which construction to use for the mixing weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Metropolis,
    #[default]
    Laplacian,
}

/// Symmetric doubly stochastic mixing matrix `M` with
/// `λ = max{|λ₂(M)|, |λ_m(M)|}`.
#[derive(Clone, Debug)]
pub struct ConsensusMatrix {
    weights: SymMatrix,
    lambda: f64,
    /// Nonzero entries per row, for mixing.
    rows: Vec<Vec<(usize, f64)>>,
}

impl ConsensusMatrix {
    /// Validates double stochasticity and computes λ. Symmetry is enforced
    /// by [`SymMatrix`].
    pub fn from_weights(weights: SymMatrix) -> Result<Self> {
        let m = weights.dim();
        for i in 0..m {
            let row: f64 = (0..m).map(|j| weights.get(i, j)).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("row {i} sums to {row}, not 1")));
            }
            if (0..m).any(|j| weights.get(i, j) < 0.0) {
                return Err(Error::invalid(format!("row {i} has a negative weight")));
            }
        }
        let lambda = second_largest_magnitude(&weights)?;
        let rows = (0..m)
            .map(|i| {
                (0..m)
                    .filter_map(|j| {
                        let w = weights.get(i, j);
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(ConsensusMatrix {
            weights,
            lambda,
            rows,
        })
    }

    pub fn build(kind: MatrixKind, g: &Graph) -> Result<Self> {
        match kind {
            MatrixKind::Metropolis => metropolis_matrix(g),
            MatrixKind::Laplacian => laplacian_matrix(g),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.weights.dim()
    }

    pub fn weights(&self) -> &SymMatrix {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Row `i` as `(j, M_ij)` over nonzero entries.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `out_i = Σ_j M_ij v_j` for a block of agent vectors.
    pub fn mix(&self, block: &[Vector]) -> Vec<Vector> {
        debug_assert_eq!(block.len(), self.num_agents());
        self.rows
            .iter()
            .map(|row| {
                let mut acc = Vector::zeros(block[0].dim());
                for &(j, w) in row {
                    acc.axpy(w, &block[j]);
                }
                acc
            })
            .collect()
    }

    /// Checks the sparsity condition against a graph: positive weight on
    /// every edge, zero on every non-edge.
    pub fn respects_sparsity(&self, g: &Graph) -> bool {
        let m = self.num_agents();
        if g.num_nodes() != m {
            return false;
        }
        (0..m).all(|i| {
            (0..m).all(|j| {
                let w = self.weights.get(i, j);
                if i == j {
                    w >= 0.0
                } else if g.has_edge(i, j) {
                    w > 0.0
                } else {
                    w == 0.0
                }
            })
        })
    }
}

fn second_largest_magnitude(w: &SymMatrix) -> Result<f64> {
    if w.dim() == 1 {
        return Ok(0.0);
    }
    let ev = w.eigvals()?;
    Ok(ev[1].abs().max(ev[ev.len() - 1].abs()))
}

fn require_connected(g: &Graph, what: &str) -> Result<()> {
    if !g.is_connected() {
        return Err(Error::invalid(format!("{what}: graph is disconnected (λ would be 1)")));
    }
    Ok(())
}

/// Fills the diagonal so each row sums to one and wraps the result.
fn finish_with_diagonal(mut w: Matrix) -> Result<ConsensusMatrix> {
    let m = w.rows();
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
        w.set(i, i, 1.0 - off);
    }
    ConsensusMatrix::from_weights(SymMatrix::new(w)?)
}

/// Metropolis weights `M_ij = 1 / (1 + max(d_i, d_j))` on edges.
pub fn metropolis_matrix(g: &Graph) -> Result<ConsensusMatrix> {
    require_connected(g, "metropolis_matrix")?;
    let m = g.num_nodes();
    let deg = g.degrees();
    let mut w = Matrix::zeros(m, m);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w.set(i, j, v);
        w.set(j, i, v);
    }
    finish_with_diagonal(w)
}

/// `M = I − 2V / (3 ρ_max(V))` with `V` the combinatorial Laplacian.
pub fn laplacian_matrix(g: &Graph) -> Result<ConsensusMatrix> {
    require_connected(g, "laplacian_matrix")?;
    let m = g.num_nodes();
    if m == 1 {
        return ConsensusMatrix::from_weights(SymMatrix::identity(1));
    }
    let deg = g.degrees();
    let mut lap = Matrix::zeros(m, m);
    for (i, j) in g.edges() {
        lap.set(i, j, -1.0);
        lap.set(j, i, -1.0);
    }
    for (i, d) in deg.iter().enumerate() {
        lap.set(i, i, *d as f64);
    }
    let rho = SymMatrix::new(lap)?.eigvals()?[0];
    let c = 2.0 / (3.0 * rho);
    let mut w = Matrix::zeros(m, m);
    for (i, j) in g.edges() {
        w.set(i, j, c);
        w.set(j, i, c);
    }
    finish_with_diagonal(w)
}

/// Recomputes `λ = max{|λ₂|, |λ_m|}` from the weights.
pub fn spectral_gap(cm: &ConsensusMatrix) -> Result<f64> {
    second_largest_magnitude(cm.weights())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Lane, Purpose, RngStream};
    use proptest::prelude::*;

    fn assert_matrix(cm: &ConsensusMatrix, expect: &[&[f64]]) {
        for (i, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let got = cm.weights().get(i, j);
                assert!((got - v).abs() < 1e-15, "({i},{j}): {got} vs {v}");
            }
        }
    }

    #[test]
    fn metropolis_path_graph() {
        let cm = metropolis_matrix(&Graph::path(3)).unwrap();
        let (a, b) = (2.0 / 3.0, 1.0 / 3.0);
        assert_matrix(&cm, &[&[a, b, 0.0], &[b, b, b], &[0.0, b, a]]);
        assert!((cm.lambda() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn metropolis_single_node_and_triangle() {
        let one = metropolis_matrix(&Graph::complete(1)).unwrap();
        assert_matrix(&one, &[&[1.0]]);
        assert_eq!(one.lambda(), 0.0);

        let tri = metropolis_matrix(&Graph::complete(3)).unwrap();
        let t = 1.0 / 3.0;
        assert_matrix(&tri, &[&[t, t, t], &[t, t, t], &[t, t, t]]);
        assert!(tri.lambda() < 1e-14);
    }

    #[test]
    fn laplacian_edge_graph() {
        let cm = laplacian_matrix(&Graph::complete(2)).unwrap();
        let (a, b) = (2.0 / 3.0, 1.0 / 3.0);
        assert_matrix(&cm, &[&[a, b], &[b, a]]);
        assert!((cm.lambda() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn laplacian_single_node() {
        let cm = laplacian_matrix(&Graph::complete(1)).unwrap();
        assert_matrix(&cm, &[&[1.0]]);
    }

    #[test]
    fn laplacian_triangle() {
        // V = 3I − J has ρ_max = 3, so off-diagonal weights are 2/9.
        let cm = laplacian_matrix(&Graph::complete(3)).unwrap();
        let (d, o) = (5.0 / 9.0, 2.0 / 9.0);
        assert_matrix(&cm, &[&[d, o, o], &[o, d, o], &[o, o, d]]);
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| cm.weights().get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!((cm.lambda() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        assert!(metropolis_matrix(&g).is_err());
        assert!(laplacian_matrix(&g).is_err());
    }

    #[test]
    fn spectral_gap_examples() {
        let t = 1.0 / 3.0;
        let avg = ConsensusMatrix::from_weights(
            SymMatrix::from_rows(&[vec![t; 3], vec![t; 3], vec![t; 3]]).unwrap(),
        )
        .unwrap();
        assert!(spectral_gap(&avg).unwrap() < 1e-14);

        let id = ConsensusMatrix::from_weights(SymMatrix::identity(4)).unwrap();
        assert_eq!(spectral_gap(&id).unwrap(), 1.0);

        let path = metropolis_matrix(&Graph::path(3)).unwrap();
        assert!((spectral_gap(&path).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(spectral_gap(&path).unwrap(), path.lambda());
    }

    #[test]
    fn non_stochastic_weights_rejected() {
        let w = SymMatrix::from_rows(&[vec![0.5, 0.4], vec![0.4, 0.5]]).unwrap();
        assert!(ConsensusMatrix::from_weights(w).is_err());
    }

    fn random_block(m: usize, d: usize, seed: u64) -> Vec<Vector> {
        let mut rng = RngStream::new(seed, Lane::global(Purpose::Custom(9)));
        (0..m).map(|_| rng.gaussian(d, 1.0).unwrap()).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn mixing_preserves_average_and_contracts(
            m in 2usize..16,
            p_c in 0.2f64..1.0,
            seed in 0u64..10_000,
            metropolis in any::<bool>(),
        ) {
            let mut rng = RngStream::new(seed, Lane::global(Purpose::Topology));
            let g = erdos_renyi(m, p_c, &mut rng, 1000).unwrap();
            let kind = if metropolis { MatrixKind::Metropolis } else { MatrixKind::Laplacian };
            let cm = ConsensusMatrix::build(kind, &g).unwrap();
            prop_assert!(cm.lambda() < 1.0);
            prop_assert!(cm.respects_sparsity(&g));

            let v = random_block(m, 3, seed);
            let mv = cm.mix(&v);
            let avg_v = Vector::mean(&v).unwrap();
            let avg_mv = Vector::mean(&mv).unwrap();
            let total: f64 = v.iter().map(Vector::norm_sq).sum::<f64>().sqrt();
            prop_assert!(avg_v.dist_sq(&avg_mv).sqrt() <= 1e-12 * total);

            let dev = |blk: &[Vector], c: &Vector| blk.iter().map(|x| x.dist_sq(c)).sum::<f64>().sqrt();
            let lhs = dev(&mv, &avg_v);
            let rhs = cm.lambda() * dev(&v, &avg_v) + 1e-10 * total;
            prop_assert!(lhs <= rhs, "{} > {}", lhs, rhs);
        }
    }
}
