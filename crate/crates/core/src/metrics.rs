//! Error measures and per-iteration instrumentation.

use crate::error::{Error, Result};
use crate::numerics::{sym_eig, Matrix};
use crate::problem::GroundTruth;

/// One row of a run trace. `error_x` and `se2_node1` are present whenever
/// the run knows the ground truth; `cons_err_max` (and the matching worst
/// input error) only when consensus diagnostics are enabled.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub error_x: Option<f64>,
    pub se2_node1: Option<f64>,
    pub max_disagreement_frob: f64,
    pub cons_err_max: Option<f64>,
    pub inp_err_max: Option<f64>,
}

/// Per-iteration records of one algorithm run.
#[derive(Debug, Clone)]
pub struct MetricsTrace {
    pub algorithm_tag: String,
    pub trial_id: u64,
    pub records: Vec<MetricsRecord>,
}

impl MetricsTrace {
    pub fn new(algorithm_tag: impl Into<String>) -> Self {
        MetricsTrace { algorithm_tag: algorithm_tag.into(), trial_id: 0, records: Vec::new() }
    }

    pub fn final_error_x(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.error_x)
    }

    pub fn final_se2(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.se2_node1)
    }

    /// Iterations strictly increasing, all present values finite and
    /// nonnegative.
    pub fn check_well_formed(&self) -> bool {
        let mut prev = None;
        for rec in &self.records {
            if let Some(p) = prev {
                if rec.iteration <= p {
                    return false;
                }
            }
            prev = Some(rec.iteration);
            let vals = [
                Some(rec.elapsed_seconds),
                rec.error_x,
                rec.se2_node1,
                Some(rec.max_disagreement_frob),
                rec.cons_err_max,
            ];
            if vals.into_iter().flatten().any(|v| !v.is_finite() || v < 0.0) {
                return false;
            }
        }
        true
    }
}

/// Subspace distance `||(I - u1 u1ᵀ) u2||` between the column spans of two
/// orthonormal bases, evaluated through r x r intermediates:
/// `sqrt(lambda_max(u2ᵀu2 - (u1ᵀu2)ᵀ(u1ᵀu2)))`.
pub fn subspace_distance(u1: &Matrix, u2: &Matrix) -> Result<f64> {
    let r = u2.cols() as f64;
    u1.check_orthonormal(1e-6 * r.sqrt().max(1.0))?;
    u2.check_orthonormal(1e-6 * r.sqrt().max(1.0))?;
    if u1.rows() != u2.rows() {
        return Err(Error::ShapeMismatch(format!(
            "bases live in different spaces: {} vs {} rows",
            u1.rows(),
            u2.rows()
        )));
    }
    let cross = u1.t_mul(u2);
    let mut m = u2.t_mul(u2);
    let ctc = cross.t_mul(&cross);
    m.add_scaled(-1.0, &ctc);
    let (eigs, _) = sym_eig(&m)?;
    Ok(eigs[0].max(0.0).sqrt())
}

/// Normalized recovery error over the columns the node states carry:
/// `||X - X*||_F / ||X*||_F` with both sides restricted to those columns.
/// For full partitions this is the plain normalized error; a single-node
/// run over a subset is measured against the matching slice of the truth.
pub fn error_x(states: &[crate::gdmin::NodeState], gt: &GroundTruth) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for st in states {
        if st.b.cols() == 0 {
            // no coefficients yet: estimate is the zero matrix
            for &k in &st.columns {
                let xk = gt.x_star.column(k);
                for v in xk {
                    num += v * v;
                    den += v * v;
                }
            }
            continue;
        }
        for (j, &k) in st.columns.iter().enumerate() {
            let bcol = st.b.column(j);
            let est = st.u.mul_vec(&bcol);
            let xk = gt.x_star.column(k);
            for (e, t) in est.iter().zip(&xk) {
                let d = e - t;
                num += d * d;
            }
            for t in xk {
                den += t * t;
            }
        }
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}

/// Largest pairwise Frobenius distance between node bases; 0 for a single
/// node.
pub fn node_disagreement(bases: &[Matrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..bases.len() {
        for j in i + 1..bases.len() {
            worst = worst.max(bases[i].sub(&bases[j]).frobenius_norm());
        }
    }
    worst
}

/// Worst-node Frobenius deviation of per-node consensus outputs from the
/// exact sum they approximate.
pub fn consensus_error(approx: &[Matrix], exact_sum: &Matrix) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for a in approx {
        if a.rows() != exact_sum.rows() || a.cols() != exact_sum.cols() {
            return Err(Error::ShapeMismatch("consensus output vs exact sum".into()));
        }
        worst = worst.max(a.sub(exact_sum).frobenius_norm());
    }
    Ok(worst)
}
