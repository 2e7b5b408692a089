//! Communication graphs, consensus weight matrices, spectral-gap analysis,
//! and the synchronous gossip averaging primitive.

use crate::error::{Error, Result};
use crate::numerics::{sym_eig, Matrix, RngStream};

/// How edge weights are assigned.
///
/// `EqualNeighbor` is the literal 1/d_g rule (zero diagonal); it is row
/// stochastic but doubly stochastic only on regular graphs. `Metropolis`
/// is symmetric and doubly stochastic on every connected graph, so the
/// consensus contraction guarantee applies unconditionally; it is the
/// default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    EqualNeighbor,
    Metropolis,
}

/// An undirected connected communication graph with its consensus weight
/// matrix and spectral gap quantity.
#[derive(Debug, Clone)]
pub struct Network {
    pub l: usize,
    pub edges: Vec<(usize, usize)>,
    pub degrees: Vec<usize>,
    pub scheme: WeightScheme,
    pub w: Matrix,
    /// Second-largest eigenvalue magnitude of `w`; 0 for a single node.
    pub gamma: f64,
    /// Which resampling attempt produced a connected graph (0-based);
    /// recorded so a run can be reproduced exactly.
    pub accepted_attempt: u32,
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Build from an explicit edge list (node indices 0-based).
    pub fn from_edges(
        l: usize,
        edges: Vec<(usize, usize)>,
        scheme: WeightScheme,
    ) -> Result<Network> {
        if !is_connected(l, &edges) {
            return Err(Error::Disconnected { attempts: 0 });
        }
        let degrees = degree_list(l, &edges);
        let w = weight_matrix(l, &edges, scheme)?;
        let gamma = gamma_of(&w)?;
        let mut neighbors = vec![Vec::new(); l];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Network { l, edges, degrees, scheme, w, gamma, accepted_attempt: 0, neighbors })
    }

    /// The trivial one-node network (used by the centralized reductions).
    pub fn single_node() -> Network {
        Network {
            l: 1,
            edges: Vec::new(),
            degrees: vec![0],
            scheme: WeightScheme::Metropolis,
            w: Matrix::identity(1),
            gamma: 0.0,
            accepted_attempt: 0,
            neighbors: vec![Vec::new()],
        }
    }

    /// Sample Erdos-Renyi graphs from substreams of `stream` until one is
    /// connected (at most 1000 attempts).
    pub fn erdos_renyi_connected(
        l: usize,
        p: f64,
        scheme: WeightScheme,
        stream: RngStream,
    ) -> Result<Network> {
        if l == 1 {
            return Ok(Network::single_node());
        }
        const MAX_ATTEMPTS: u32 = 1000;
        for attempt in 0..MAX_ATTEMPTS {
            let edges = er_graph(l, p, stream.substream(u64::from(attempt)));
            if is_connected(l, &edges) {
                let mut net = Network::from_edges(l, edges, scheme)?;
                net.accepted_attempt = attempt;
                if attempt > 0 {
                    log::info!("connected graph accepted at attempt {attempt}");
                }
                return Ok(net);
            }
        }
        Err(Error::Disconnected { attempts: MAX_ATTEMPTS })
    }

    pub fn neighbors(&self, g: usize) -> &[usize] {
        &self.neighbors[g]
    }
}

fn degree_list(l: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut degrees = vec![0usize; l];
    for &(a, b) in edges {
        degrees[a] += 1;
        degrees[b] += 1;
    }
    degrees
}

/// Sample each unordered pair independently with probability `p`. Pairs
/// are visited in lexicographic order with one uniform draw each, so the
/// result is reproducible from the stream alone.
pub fn er_graph(l: usize, p: f64, stream: RngStream) -> Vec<(usize, usize)> {
    assert!(l >= 2 && p > 0.0 && p <= 1.0);
    let mut sampler = stream.sampler();
    let mut edges = Vec::new();
    for i in 0..l {
        for j in i + 1..l {
            if sampler.next_unit() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Breadth-first reachability from node 0.
pub fn is_connected(l: usize, edges: &[(usize, usize)]) -> bool {
    if l == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); l];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; l];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == l
}

/// Consensus weights for a connected graph.
///
/// Equal-neighbor: `w[g][j] = 1/d_g` on edges, zero elsewhere (zero
/// diagonal). Metropolis: `w[g][j] = 1/(1 + max(d_g, d_j))` on edges and
/// the diagonal absorbs the remainder.
pub fn weight_matrix(l: usize, edges: &[(usize, usize)], scheme: WeightScheme) -> Result<Matrix> {
    if l == 1 {
        return Ok(Matrix::identity(1));
    }
    let degrees = degree_list(l, edges);
    if degrees.iter().any(|&d| d == 0) {
        return Err(Error::IsolatedNode);
    }
    let mut w = Matrix::zeros(l, l);
    match scheme {
        WeightScheme::EqualNeighbor => {
            for &(a, b) in edges {
                w.set(a, b, 1.0 / degrees[a] as f64);
                w.set(b, a, 1.0 / degrees[b] as f64);
            }
        }
        WeightScheme::Metropolis => {
            for &(a, b) in edges {
                let v = 1.0 / (1.0 + degrees[a].max(degrees[b]) as f64);
                w.set(a, b, v);
                w.set(b, a, v);
            }
            for g in 0..l {
                let off: f64 = (0..l).filter(|&j| j != g).map(|j| w.get(g, j)).sum();
                w.set(g, g, 1.0 - off);
            }
        }
    }
    Ok(w)
}

/// Second-largest eigenvalue magnitude `max(|lambda_2|, |lambda_L|)`.
///
/// Symmetric matrices go straight to the Jacobi solver. The non-symmetric
/// equal-neighbor matrix `D^{-1}A` shares its spectrum with the symmetric
/// `D^{-1/2} A D^{-1/2}`, whose entries are `sqrt(w[i][j] * w[j][i])`;
/// anything that breaks that structure is rejected as `NotAnalyzable`.
pub fn gamma_of(w: &Matrix) -> Result<f64> {
    let l = w.rows();
    if w.cols() != l {
        return Err(Error::ShapeMismatch(format!("{}x{} weight matrix", l, w.cols())));
    }
    if l == 1 {
        return Ok(0.0);
    }
    let eigs = match sym_eig(w) {
        Ok((eigs, _)) => eigs,
        Err(Error::NotSymmetric) => {
            // Row sums must be 1 and the sparsity pattern symmetric.
            for i in 0..l {
                let s: f64 = w.row(i).iter().sum();
                if (s - 1.0).abs() > 1e-10 {
                    return Err(Error::NotAnalyzable);
                }
                for j in 0..l {
                    if (w.get(i, j) > 0.0) != (w.get(j, i) > 0.0) || w.get(i, j) < 0.0 {
                        return Err(Error::NotAnalyzable);
                    }
                }
            }
            let mut s = Matrix::zeros(l, l);
            for i in 0..l {
                for j in 0..l {
                    s.set(i, j, (w.get(i, j) * w.get(j, i)).sqrt());
                }
            }
            sym_eig(&s)?.0
        }
        Err(e) => return Err(e),
    };
    Ok(eigs[1].abs().max(eigs[l - 1].abs()))
}

/// Rounds needed to shrink the worst-node consensus error by `eps_con`:
/// `ceil(log(L / eps_con) / log(1 / gamma))`, at least 1.
pub fn t_con_for(eps_con: f64, gamma: f64, l: usize) -> Result<usize> {
    assert!(eps_con > 0.0 && eps_con < 1.0, "eps_con must be in (0, 1)");
    if gamma >= 1.0 {
        return Err(Error::NoContraction { gamma });
    }
    if gamma <= 0.0 {
        return Ok(1);
    }
    let t = ((l as f64 / eps_con).ln() / (1.0 / gamma).ln()).ceil();
    Ok((t as usize).max(1))
}

/// Synchronous gossip averaging: every node repeatedly replaces its value
/// by the `w`-weighted combination of all nodes' previous values
/// (double-buffered, fixed node order), and the final values are scaled by
/// `L` so they approximate the network-wide sum.
pub fn avg_cons(inputs: &[Matrix], w: &Matrix, t_con: usize) -> Result<Vec<Matrix>> {
    let l = inputs.len();
    if w.rows() != l || w.cols() != l {
        return Err(Error::ShapeMismatch(format!(
            "weight matrix {}x{} for {} nodes",
            w.rows(),
            w.cols(),
            l
        )));
    }
    let (rows, cols) = (inputs[0].rows(), inputs[0].cols());
    if inputs.iter().any(|m| m.rows() != rows || m.cols() != cols) {
        return Err(Error::ShapeMismatch("consensus payloads differ in shape".into()));
    }
    let mut z: Vec<Matrix> = inputs.to_vec();
    let mut next: Vec<Matrix> = vec![Matrix::zeros(rows, cols); l];
    for _ in 0..t_con {
        for g in 0..l {
            let out = &mut next[g];
            out.fill(0.0);
            for j in 0..l {
                let wij = w.get(g, j);
                if wij != 0.0 {
                    out.add_scaled(wij, &z[j]);
                }
            }
        }
        std::mem::swap(&mut z, &mut next);
    }
    let lf = l as f64;
    Ok(z.into_iter().map(|m| m.scale(lf)).collect())
}
