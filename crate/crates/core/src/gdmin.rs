//! The alternating minimization / projected-gradient engine: exact
//! per-column least squares over the coefficients, local gradients over the
//! shared basis, gossip aggregation of the gradients, and the projected
//! step with QR retraction.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::init::InitResult;
use crate::metrics::{error_x, node_disagreement, subspace_distance, MetricsRecord, MetricsTrace};
use crate::network::{avg_cons, Network};
use crate::numerics::{least_squares, thin_qr, Matrix};
use crate::problem::{Batch, BatchLabel, ColumnPartition, GroundTruth, MeasurementSet};

/// Everything one node carries between iterations.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub columns: Vec<usize>,
    /// n x r orthonormal basis estimate.
    pub u: Matrix,
    /// r x |columns| local coefficients.
    pub b: Matrix,
}

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// `0.4 / (m * sigma_hat^2)` with each node's `sigma_hat^2` read off
    /// its own final initialization QR factor (largest diagonal entry).
    TheoremDefault,
    /// A fixed step size shared by all nodes.
    Fixed(f64),
}

/// Settings for the descent loop.
#[derive(Debug, Clone)]
pub struct GdConfig {
    pub eta_mode: EtaMode,
    /// Total descent iterations `T`.
    pub iterations: usize,
    /// Gossip rounds per gradient aggregation.
    pub t_con: usize,
    /// Fresh batch pair per iteration (`Gd(t)` and `Gd(T + t)`) when true;
    /// `Gd(1)` reused for both steps when false.
    pub sample_split: bool,
    /// Replace gossip by the exact gradient sum (infinite-consensus mode).
    pub exact_consensus: bool,
    /// Record worst-node consensus and input errors each iteration
    /// (requires forming the exact sum, so it is off by default).
    pub track_consensus_error: bool,
    /// Shared top-singular-value estimate for `TheoremDefault` when no
    /// per-node QR factors exist (the neighbor-averaging baseline).
    pub sigma_max_est: Option<f64>,
}

impl GdConfig {
    pub fn new(iterations: usize, t_con: usize) -> Self {
        GdConfig {
            eta_mode: EtaMode::TheoremDefault,
            iterations,
            t_con,
            sample_split: true,
            exact_consensus: false,
            track_consensus_error: false,
            sigma_max_est: None,
        }
    }
}

/// A run that stopped early; the partial trace identifies the iteration.
#[derive(Debug)]
pub struct TrialAbort {
    pub error: Error,
    pub partial: MetricsTrace,
}

impl std::fmt::Display for TrialAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "aborted after {} iterations: {}",
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for TrialAbort {}

/// Exact per-column least squares for the local coefficients:
/// column `k` solves `min_b ||y_k - (a_k u) b||`.
pub fn min_step_b(u: &Matrix, batch: &Batch, columns: &[usize]) -> Result<Matrix> {
    let r = u.cols();
    let mut b = Matrix::zeros(r, columns.len());
    for (j, &k) in columns.iter().enumerate() {
        let design = batch.a[k].mul(u);
        let coeffs = least_squares(&design, &batch.y[k]).map_err(|e| match e {
            Error::SingularSystem { .. } => Error::SingularSystem { column: Some(k) },
            other => other,
        })?;
        for (i, v) in coeffs.iter().enumerate() {
            b.set(i, j, *v);
        }
    }
    Ok(b)
}

/// Local cost gradient with respect to the basis:
/// `sum_k a_kᵀ (a_k u b_k - y_k) b_kᵀ` over this node's columns.
pub fn local_gradient(u: &Matrix, b: &Matrix, batch: &Batch, columns: &[usize]) -> Matrix {
    let (n, r) = (u.rows(), u.cols());
    let mut grad = Matrix::zeros(n, r);
    for (j, &k) in columns.iter().enumerate() {
        let bcol = b.column(j);
        let xk = u.mul_vec(&bcol);
        let mut resid = batch.a[k].mul_vec(&xk);
        for (ri, yi) in resid.iter_mut().zip(&batch.y[k]) {
            *ri -= yi;
        }
        let back = batch.a[k].t_mul_vec(&resid);
        grad.add_outer(1.0, &back, &bcol);
    }
    grad
}

/// One projected step: retract `u - eta * grad` back onto orthonormal
/// bases via QR.
pub fn gd_step(u: &Matrix, grad: &Matrix, eta: f64) -> Result<Matrix> {
    assert!(eta > 0.0, "step size must be positive");
    let mut z = u.clone();
    z.add_scaled(-eta, grad);
    let (q, _) = thin_qr(&z).map_err(|_| Error::RankCollapse)?;
    Ok(q)
}

/// Top-singular-value estimate from a final power-method QR factor: the
/// iteration runs on the squared spectral matrix, so the largest diagonal
/// entry of R estimates `sigma_max^2` and its square root is the estimate.
pub fn estimate_sigma_max(r_factor: &Matrix) -> f64 {
    let mut top = 0.0f64;
    for i in 0..r_factor.rows().min(r_factor.cols()) {
        top = top.max(r_factor.get(i, i));
    }
    top.max(0.0).sqrt()
}

fn resolve_etas(
    config: &GdConfig,
    init: &InitResult,
    m: usize,
    l: usize,
) -> Result<Vec<f64>> {
    match config.eta_mode {
        EtaMode::Fixed(eta) => {
            if eta <= 0.0 {
                return Err(Error::InvalidConfig("fixed step size must be positive".into()));
            }
            Ok(vec![eta; l])
        }
        EtaMode::TheoremDefault => {
            if init.r_last.len() == l {
                Ok(init
                    .r_last
                    .iter()
                    .map(|r| {
                        let s = estimate_sigma_max(r);
                        0.4 / (m as f64 * s * s)
                    })
                    .collect())
            } else if let Some(s) = config.sigma_max_est {
                Ok(vec![0.4 / (m as f64 * s * s); l])
            } else {
                Err(Error::InvalidConfig(
                    "theorem-default step needs per-node R factors or sigma_max_est".into(),
                ))
            }
        }
    }
}

/// Run the full decentralized loop from an initialization.
///
/// Per iteration `t`: every node solves its local least squares on the
/// minimization batch, computes its local gradient on the gradient batch,
/// the gradients are gossiped (`t_con` rounds) into per-node sum estimates,
/// and every node takes the projected step with its own step size. Metrics
/// are recorded at the end of each iteration; any error aborts the run and
/// returns the partial trace.
pub fn run_dec_altgdmin(
    gt: Option<&GroundTruth>,
    measurements: &MeasurementSet,
    partition: &ColumnPartition,
    network: &Network,
    init: &InitResult,
    config: &GdConfig,
) -> std::result::Result<(Vec<NodeState>, MetricsTrace), Box<TrialAbort>> {
    run_loop(gt, measurements, partition, network, init, config, "dec-altgdmin", None)
}

/// Initialization mode for the neighbor-averaging (DGD-style) baseline.
pub enum DgdInit<'a> {
    /// Fresh orthonormalized Gaussian per node, substream `g` of the stream.
    Random(crate::numerics::RngStream),
    /// All-zero bases; QR is skipped until an iterate gains full rank and
    /// rank-deficient least squares fall back to zero coefficients.
    Zero,
    /// Output of the spectral initialization.
    Spectral(&'a InitResult),
}

pub(crate) struct DgdMode<'a> {
    pub init: DgdInit<'a>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_loop(
    gt: Option<&GroundTruth>,
    measurements: &MeasurementSet,
    partition: &ColumnPartition,
    network: &Network,
    init: &InitResult,
    config: &GdConfig,
    tag: &str,
    dgd: Option<DgdMode<'_>>,
) -> std::result::Result<(Vec<NodeState>, MetricsTrace), Box<TrialAbort>> {
    let l = network.l;
    let mut trace = MetricsTrace::new(tag);
    let abort = |error: Error, partial: MetricsTrace| {
        Box::new(TrialAbort { error, partial })
    };

    if partition.num_nodes() != l {
        return Err(abort(
            Error::ShapeMismatch(format!("partition {} sets, {} nodes", partition.num_nodes(), l)),
            trace,
        ));
    }
    if config.sample_split && measurements.t_max < config.iterations {
        return Err(abort(
            Error::InvalidConfig(format!(
                "sample splitting needs {} batches, measurement set holds {}",
                2 * config.iterations + 2,
                measurements.num_batches()
            )),
            trace,
        ));
    }

    // Starting bases: spectral init for the main algorithm, mode-specific
    // for the neighbor-averaging baseline.
    let mut states: Vec<NodeState> = Vec::with_capacity(l);
    let r = init.u0.first().map(Matrix::cols).unwrap_or(0);
    let (rank, starts): (usize, Vec<Matrix>) = match &dgd {
        None | Some(DgdMode { init: DgdInit::Spectral(_) }) => {
            let source = match &dgd {
                Some(DgdMode { init: DgdInit::Spectral(res) }) => res,
                _ => init,
            };
            (source.u0[0].cols(), source.u0.clone())
        }
        Some(DgdMode { init: DgdInit::Random(stream) }) => {
            let mut starts = Vec::with_capacity(l);
            for g in 0..l {
                let raw = crate::numerics::gaussian_matrix(
                    measurements.n(),
                    r.max(1),
                    stream.substream(g as u64),
                );
                match thin_qr(&raw) {
                    Ok((q, _)) => starts.push(q),
                    Err(_) => return Err(abort(Error::RankCollapse, trace)),
                }
            }
            (r.max(1), starts)
        }
        Some(DgdMode { init: DgdInit::Zero }) => {
            (r.max(1), vec![Matrix::zeros(measurements.n(), r.max(1)); l])
        }
    };
    for (g, set) in partition.sets.iter().enumerate() {
        states.push(NodeState {
            node_id: g,
            columns: set.clone(),
            u: starts[g].clone(),
            b: Matrix::zeros(rank, 0),
        });
    }

    let etas = match resolve_etas(config, init, measurements.m, l) {
        Ok(e) => e,
        Err(e) => return Err(abort(e, trace)),
    };

    let started = Instant::now();
    for t in 1..=config.iterations {
        let min_label =
            if config.sample_split { BatchLabel::Gd(t) } else { BatchLabel::Gd(1) };
        let grad_label = if config.sample_split {
            BatchLabel::Gd(config.iterations + t)
        } else {
            BatchLabel::Gd(1)
        };

        let min_batch = measurements.batch(min_label);
        // Minimization over the local coefficients.
        for st in states.iter_mut() {
            let solved = if dgd.is_some() {
                min_step_b_or_zero(&st.u, &min_batch, &st.columns)
            } else {
                min_step_b(&st.u, &min_batch, &st.columns)
            };
            match solved {
                Ok(b) => st.b = b,
                Err(e) => return Err(abort(e, trace)),
            }
        }
        drop(min_batch);

        let grad_batch = measurements.batch(grad_label);
        let grads: Vec<Matrix> = states
            .iter()
            .map(|st| local_gradient(&st.u, &st.b, &grad_batch, &st.columns))
            .collect();
        drop(grad_batch);

        let mut cons_err_max = None;
        let mut inp_err_max = None;

        match &dgd {
            None => {
                let exact_sum = if config.exact_consensus || config.track_consensus_error {
                    let mut sum = Matrix::zeros(grads[0].rows(), grads[0].cols());
                    for gm in &grads {
                        sum.add_scaled(1.0, gm);
                    }
                    Some(sum)
                } else {
                    None
                };
                let grad_hats: Vec<Matrix> = if config.exact_consensus {
                    vec![exact_sum.clone().unwrap(); l]
                } else {
                    match avg_cons(&grads, &network.w, config.t_con) {
                        Ok(h) => h,
                        Err(e) => return Err(abort(e, trace)),
                    }
                };
                if config.track_consensus_error {
                    let exact = exact_sum.as_ref().unwrap();
                    cons_err_max =
                        crate::metrics::consensus_error(&grad_hats, exact).ok();
                    inp_err_max = Some(
                        grads
                            .iter()
                            .map(|g| g.sub(exact).frobenius_norm())
                            .fold(0.0, f64::max),
                    );
                }
                for (g, st) in states.iter_mut().enumerate() {
                    match gd_step(&st.u, &grad_hats[g], etas[g]) {
                        Ok(u) => st.u = u,
                        Err(e) => return Err(abort(e, trace)),
                    }
                }
            }
            Some(_) => {
                // Neighbor averaging over the closed neighborhood, then a
                // local gradient step; QR only once the iterate has rank.
                let prev: Vec<Matrix> = states.iter().map(|st| st.u.clone()).collect();
                for (g, st) in states.iter_mut().enumerate() {
                    let mut z = prev[g].clone();
                    let nbrs = network.neighbors(g);
                    if !nbrs.is_empty() {
                        for &j in nbrs {
                            z.add_scaled(1.0, &prev[j]);
                        }
                        z = z.scale(1.0 / (nbrs.len() as f64 + 1.0));
                    }
                    z.add_scaled(-etas[g], &grads[g]);
                    match thin_qr(&z) {
                        Ok((q, _)) => st.u = q,
                        Err(Error::RankDeficient) => st.u = z,
                        Err(e) => return Err(abort(e, trace)),
                    }
                }
            }
        }

        let bases: Vec<Matrix> = states.iter().map(|st| st.u.clone()).collect();
        let se2 = gt.and_then(|g| subspace_distance(&states[0].u, &g.u_star).ok());
        let record = MetricsRecord {
            iteration: t,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            error_x: gt.map(|g| error_x(&states, g)),
            se2_node1: se2,
            max_disagreement_frob: node_disagreement(&bases),
            cons_err_max,
            inp_err_max,
        };
        trace.records.push(record);
    }
    Ok((states, trace))
}

/// Least squares that falls back to zero coefficients on a rank-deficient
/// design instead of failing; the neighbor-averaging baseline has to keep
/// running from a zero start.
pub(crate) fn min_step_b_or_zero(
    u: &Matrix,
    batch: &Batch,
    columns: &[usize],
) -> Result<Matrix> {
    let r = u.cols();
    let mut b = Matrix::zeros(r, columns.len());
    for (j, &k) in columns.iter().enumerate() {
        let design = batch.a[k].mul(u);
        match least_squares(&design, &batch.y[k]) {
            Ok(coeffs) => {
                for (i, v) in coeffs.iter().enumerate() {
                    b.set(i, j, *v);
                }
            }
            Err(Error::SingularSystem { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(b)
}
