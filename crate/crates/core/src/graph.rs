//! Similarity graphs over node features and their spectral (graph Fourier) analysis.
//!
//! Nodes are the rows of an `N×F` matrix. [`build_adjacency`] turns learned
//! inner-product similarities into a symmetric nonnegative adjacency,
//! [`normalized_laplacian`] gives `L = I − D^{-1/2} A D^{-1/2}`, and a
//! [`SpectralGraph`] carries the ascending eigendecomposition `L = PΛPᵀ` used by
//! [`gft`], [`igft`] and [`highpass_filter`].
//!
//! The high-pass filter with cutoff `k` keeps the `N − k` eigen-directions of
//! largest eigenvalue (columns `k..N` of `P`). Through the tape the
//! eigenvectors are constants: gradients reach the filtered signal but not the
//! adjacency that produced the basis.

use alloc::format;

use crate::error::{contract, shape_err, Error, Result};
use crate::numerics::autodiff::{Tape, Var};
use crate::numerics::eig::{sym_eig, EigenDecomposition};
use crate::numerics::tensor::{MulCounter, Tensor};

/// Diagonal added to every adjacency so that no node has zero degree.
pub const ADJ_FLOOR: f64 = 1e-6;

/// Raw similarities `S_ij = ⟨x_i W1, x_j W2⟩`.
pub fn similarity(nodes: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    let a = nodes.matmul(w1)?;
    let b = nodes.matmul(w2)?;
    a.matmul(&b.transpose()?)
}

/// `relu((S + Sᵀ)/2) + 1e-6·I` for the similarities of [`similarity`].
pub fn build_adjacency(nodes: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    condition(&similarity(nodes, w1, w2)?)
}

fn condition(s: &Tensor) -> Result<Tensor> {
    let n = s.dims2()?.0;
    let st = s.transpose()?;
    let mut a = s.add(&st)?.map(|v| (0.5 * v).max(0.0));
    for i in 0..n {
        a.set(i, i, a.at(i, i) + ADJ_FLOOR);
    }
    Ok(a)
}

/// Differentiable [`build_adjacency`].
pub fn adjacency_on_tape(tape: &mut Tape, nodes: Var, w1: Var, w2: Var) -> Result<Var> {
    let a = tape.matmul(nodes, w1)?;
    let b = tape.matmul(nodes, w2)?;
    let bt = tape.transpose(b)?;
    let s = tape.matmul(a, bt)?;
    let st = tape.transpose(s)?;
    let sym = tape.add(s, st)?;
    let sym = tape.scale(sym, 0.5)?;
    let r = tape.relu(sym)?;
    let n = tape.shape(nodes)[0];
    let floor = tape.constant(Tensor::eye(n).scale(ADJ_FLOOR));
    tape.add(r, floor)
}

/// `I − D^{-1/2} A D^{-1/2}` with `D_ii = Σ_j A_ij`.
pub fn normalized_laplacian(adjacency: &Tensor) -> Result<Tensor> {
    let (n, c) = adjacency.dims2()?;
    if n != c {
        return Err(shape_err(
            "normalized_laplacian",
            adjacency.shape(),
            &[c, n],
        ));
    }
    if adjacency.data().iter().any(|&v| v < 0.0) {
        return Err(contract("adjacency has negative entries"));
    }
    let mut inv_sqrt = alloc::vec![0.0; n];
    for (i, d) in inv_sqrt.iter_mut().enumerate() {
        let deg: f64 = adjacency.row(i).iter().sum();
        if deg.is_nan() || deg <= 0.0 {
            return Err(Error::ZeroDegree { node: i });
        }
        *d = 1.0 / libm::sqrt(deg);
    }
    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            l.set(i, j, delta - inv_sqrt[i] * adjacency.at(i, j) * inv_sqrt[j]);
        }
    }
    Ok(l)
}

/// Node features with their adjacency, Laplacian and its eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGraph {
    pub node_matrix: Tensor,
    pub adjacency: Tensor,
    pub laplacian: Tensor,
    pub eig: EigenDecomposition,
}

impl SpectralGraph {
    /// Builds the graph of `nodes` under the similarity weights `w1`, `w2`.
    pub fn new(nodes: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Self> {
        Self::from_adjacency(nodes.clone(), build_adjacency(nodes, w1, w2)?)
    }

    pub fn from_adjacency(node_matrix: Tensor, adjacency: Tensor) -> Result<Self> {
        let n = node_matrix.dims2()?.0;
        if adjacency.shape() != [n, n] {
            return Err(shape_err(
                "spectral graph",
                node_matrix.shape(),
                adjacency.shape(),
            ));
        }
        let laplacian = normalized_laplacian(&adjacency)?;
        let eig = sym_eig(&laplacian)?;
        Ok(Self {
            node_matrix,
            adjacency,
            laplacian,
            eig,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.eig.dim()
    }

    /// `P̄`: eigenvector columns `k..N`.
    pub fn highpass_basis(&self, k: usize) -> Result<Tensor> {
        let n = self.num_nodes();
        if k >= n {
            return Err(contract(format!("cutoff k = {k} must be below N = {n}")));
        }
        self.eig.eigenvectors.columns(k, n)
    }
}

fn check_rows(graph: &SpectralGraph, signal: &Tensor) -> Result<()> {
    if signal.dims2()?.0 != graph.num_nodes() {
        return Err(shape_err(
            "graph signal",
            &[graph.num_nodes()],
            signal.shape(),
        ));
    }
    Ok(())
}

/// Graph Fourier transform `Pᵀ X`.
pub fn gft(graph: &SpectralGraph, signal: &Tensor) -> Result<Tensor> {
    check_rows(graph, signal)?;
    graph.eig.eigenvectors.transpose()?.matmul(signal)
}

/// Inverse transform `P X̃`.
pub fn igft(graph: &SpectralGraph, spectrum: &Tensor) -> Result<Tensor> {
    check_rows(graph, spectrum)?;
    graph.eig.eigenvectors.matmul(spectrum)
}

/// `X̄ = P̄ P̄ᵀ X` for the graph's own node matrix.
pub fn highpass_filter(graph: &SpectralGraph, k: usize) -> Result<Tensor> {
    highpass_signal(graph, k, &graph.node_matrix)
}

/// `P̄ P̄ᵀ signal`.
pub fn highpass_signal(graph: &SpectralGraph, k: usize, signal: &Tensor) -> Result<Tensor> {
    check_rows(graph, signal)?;
    let pbar = graph.highpass_basis(k)?;
    let mut counter = MulCounter::default();
    project(&pbar, signal, &mut counter)
}

/// `P̄ (P̄ᵀ X)`, counting multiplications.
pub fn project(pbar: &Tensor, x: &Tensor, counter: &mut MulCounter) -> Result<Tensor> {
    let coeffs = pbar.transpose()?.matmul_counted(x, counter)?;
    pbar.matmul_counted(&coeffs, counter)
}

/// `P̄ P̄ᵀ x` on the tape with `P̄` as a constant.
pub fn highpass_on_tape(tape: &mut Tape, pbar: &Tensor, x: Var) -> Result<Var> {
    let pt = tape.constant(pbar.transpose()?);
    let p = tape.constant(pbar.clone());
    let coeffs = tape.matmul(pt, x)?;
    tape.matmul(p, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, FD_STEP};
    use crate::rng;

    #[test]
    fn orthonormal_nodes_give_identity_similarity() {
        let x = Tensor::eye(3);
        let a = build_adjacency(&x, &Tensor::eye(3), &Tensor::eye(3)).unwrap();
        assert!(a.max_abs_diff(&Tensor::eye(3).scale(1.0 + ADJ_FLOOR)) < 1e-15);
    }

    #[test]
    fn zero_nodes_give_floor_only() {
        let a = build_adjacency(&Tensor::zeros(&[4, 2]), &Tensor::eye(2), &Tensor::eye(2)).unwrap();
        assert_eq!(a, Tensor::eye(4).scale(ADJ_FLOOR));
    }

    #[test]
    fn similarity_matches_loop_oracle() {
        let mut r = rng::stream(0, 71);
        let x = Tensor::randn(&[4, 3], &mut r);
        let w1 = Tensor::randn(&[3, 3], &mut r);
        let w2 = Tensor::randn(&[3, 3], &mut r);
        let s = similarity(&x, &w1, &w2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut want = 0.0;
                for f in 0..3 {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for g in 0..3 {
                        a += x.at(i, g) * w1.at(g, f);
                        b += x.at(j, g) * w2.at(g, f);
                    }
                    want += a * b;
                }
                assert!((s.at(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_node_laplacian() {
        let a = Tensor::from_rows(&[&[ADJ_FLOOR, 1.0], &[1.0, ADJ_FLOOR]]).unwrap();
        let l = normalized_laplacian(&a).unwrap();
        let want = Tensor::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]).unwrap();
        assert!(l.max_abs_diff(&want) < 1e-5);
        let e = sym_eig(&l).unwrap();
        assert!(e.eigenvalues[0].abs() < 1e-9 && (e.eigenvalues[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn self_loops_only_give_zero_laplacian() {
        let l = normalized_laplacian(&Tensor::eye(3).scale(2.5)).unwrap();
        assert!(l.max_abs() < 1e-15);
    }

    #[test]
    fn path_graph_spectrum() {
        // Path 0-1-2: degrees (1,2,1); the characteristic polynomial of L is λ(λ−1)(λ−2).
        let a = Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]).unwrap();
        let e = sym_eig(&normalized_laplacian(&a).unwrap()).unwrap();
        for (got, want) in e.eigenvalues.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_degree_is_reported() {
        let a = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(normalized_laplacian(&a), Err(Error::ZeroDegree { node: 1 }));
    }

    fn two_node_graph(signal: Tensor) -> SpectralGraph {
        let a = Tensor::from_rows(&[&[ADJ_FLOOR, 1.0], &[1.0, ADJ_FLOOR]]).unwrap();
        SpectralGraph::from_adjacency(signal, a).unwrap()
    }

    #[test]
    fn constant_signal_is_low_frequency() {
        let g = two_node_graph(Tensor::full(&[2, 1], 3.0));
        let spec = gft(&g, &g.node_matrix).unwrap();
        assert!(spec.at(1, 0).abs() < 1e-12);
        assert!((spec.at(0, 0).abs() - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(highpass_filter(&g, 1).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn eigenvector_signal_is_one_hot() {
        let mut r = rng::stream(1, 72);
        let x = Tensor::randn(&[5, 2], &mut r);
        let g = SpectralGraph::new(&x, &Tensor::eye(2), &Tensor::eye(2)).unwrap();
        for k in 0..5 {
            let col = Tensor::new(&[5, 1], g.eig.eigenvectors.column(k)).unwrap();
            let spec = gft(&g, &col).unwrap();
            for i in 0..5 {
                let want = if i == k { 1.0 } else { 0.0 };
                assert!((spec.at(i, 0) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cutoff_zero_is_all_pass_and_out_of_range_fails() {
        let mut r = rng::stream(2, 73);
        let x = Tensor::randn(&[4, 3], &mut r);
        let g = SpectralGraph::new(&x, &Tensor::eye(3), &Tensor::eye(3)).unwrap();
        assert!(highpass_filter(&g, 0).unwrap().max_abs_diff(&x) < 1e-9);
        assert!(matches!(highpass_filter(&g, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_adjacency_matches_and_differentiates() {
        let mut r = rng::stream(3, 74);
        let x = Tensor::randn(&[4, 3], &mut r);
        let w1 = Tensor::randn(&[3, 3], &mut r);
        let w2 = Tensor::randn(&[3, 3], &mut r);
        let mut tape = Tape::new();
        let (vx, v1, v2) = (
            tape.leaf(x.clone()),
            tape.leaf(w1.clone()),
            tape.leaf(w2.clone()),
        );
        let a = adjacency_on_tape(&mut tape, vx, v1, v2).unwrap();
        assert!(
            tape.value(a)
                .max_abs_diff(&build_adjacency(&x, &w1, &w2).unwrap())
                < 1e-12
        );
        let rep = check_gradients(&[x, w1, w2], FD_STEP, |t, v| {
            let a = adjacency_on_tape(t, v[0], v[1], v[2])?;
            let sq = t.square(a)?;
            t.sum(sq)
        })
        .unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
    }
}
