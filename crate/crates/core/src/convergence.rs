//! Audits of the fixed-point contraction argument for a graph-convolution layer.
//!
//! The analysed map is `f(Z) = relu(M Z W)` with a fixed propagator `M` and a
//! fixed weight `W`. Its Lipschitz constant is bounded by
//! `L_f = L_sigma * lambda_max(M) * B_W`, where `lambda_max(M)` is the largest
//! eigenvalue magnitude of `M` (its spectral norm, since `M` is symmetric) and
//! `B_W` the largest weight spectral norm.

use serde::{Deserialize, Serialize};

use crate::entanglement::EntangledGraph;
use crate::error::{GraceError, Result};
use crate::gcn::{gcn_layer, GraceModel};
use crate::numerics::{spectral_norm, Matrix};

/// Lipschitz constant of the rectifier.
pub const L_SIGMA: f64 = 1.0;
/// Looser bound on the propagator spectrum quoted alongside the measured one.
pub const GENERIC_SPECTRAL_BOUND: f64 = 2.0;
/// Successive iterates closer than this count as converged.
pub const CONVERGENCE_TOL: f64 = 1e-12;
/// Iterates with a larger Frobenius norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Slack on the interval check for the spectrum of `I - M`.
pub const INTERVAL_SLACK: f64 = 1e-8;
/// Relative slack on the geometric-decay bound.
pub const DECAY_SLACK: f64 = 1e-6;
/// A distance enters the ratio trace only when it exceeds the fixed-point
/// estimation error by this factor.
pub const RESOLUTION: f64 = 1e12;
const POLISH_BUDGET: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Contractive,
    NonContractive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremAudit {
    /// Largest eigenvalue magnitude of `M`.
    pub lambda_max_m: f64,
    /// Smallest and largest eigenvalue of `I - M`.
    pub lambda_interval_lnorm: (f64, f64),
    pub interval_check: bool,
    /// Spectral norm of each weight the audit covers.
    pub layer_norms: Vec<f64>,
    pub b_w: f64,
    pub l_sigma: f64,
    pub l_f: f64,
    /// `L_f` with the propagator factor replaced by the bound 2.
    pub generic_l_f: f64,
    /// `‖Z(l+1) - Z*‖ / ‖Z(l) - Z*‖` for every resolved step.
    pub contraction_trace: Vec<f64>,
    /// `‖Z(l) - Z*‖` for `l = 0..=iterations`.
    pub distances: Vec<f64>,
    /// Iterations taken before the stopping rule fired.
    pub iterations: usize,
    /// Last step size `‖Z(l+1) - Z(l)‖`; `None` before any iteration.
    pub residual: Option<f64>,
    pub converged: bool,
    /// Whether every resolved distance obeys `L_f^l` decay; `None` unless contractive.
    pub geometric_decay: Option<bool>,
    pub verdict: Verdict,
}

impl TheoremAudit {
    /// Plot-ready `step,ratio` rows.
    pub fn ratios_csv(&self) -> String {
        let mut out = String::from("step,ratio\n");
        for (l, r) in self.contraction_trace.iter().enumerate() {
            out.push_str(&format!("{l},{r}\n"));
        }
        out
    }

    /// True when every recorded ratio is within `slack` of `L_f` from below.
    pub fn ratios_bounded(&self, slack: f64) -> bool {
        self.contraction_trace
            .iter()
            .all(|&r| r <= self.l_f + slack)
    }
}

fn verdict_for(l_f: f64) -> Verdict {
    if l_f < 1.0 {
        Verdict::Contractive
    } else {
        Verdict::NonContractive
    }
}

fn spectral_part(g: &EntangledGraph) -> Result<(f64, (f64, f64))> {
    let eig = g.laplacian_eigen()?;
    let lambda_max_m = eig
        .eigenvalues
        .iter()
        .map(|l| (1.0 - l).abs())
        .fold(0.0, f64::max);
    Ok((lambda_max_m, (eig.min(), eig.max())))
}

fn assumptions(g: &EntangledGraph, weights: &[&Matrix]) -> Result<TheoremAudit> {
    let (lambda_max_m, interval) = spectral_part(g)?;
    let layer_norms = weights
        .iter()
        .map(|w| spectral_norm(w))
        .collect::<Result<Vec<_>>>()?;
    let b_w = layer_norms.iter().copied().fold(0.0, f64::max);
    let l_f = L_SIGMA * lambda_max_m * b_w;
    Ok(TheoremAudit {
        lambda_max_m,
        lambda_interval_lnorm: interval,
        interval_check: interval.0 >= -INTERVAL_SLACK
            && interval.1 <= GENERIC_SPECTRAL_BOUND + INTERVAL_SLACK,
        layer_norms,
        b_w,
        l_sigma: L_SIGMA,
        l_f,
        generic_l_f: L_SIGMA * GENERIC_SPECTRAL_BOUND * b_w,
        contraction_trace: Vec::new(),
        distances: Vec::new(),
        iterations: 0,
        residual: None,
        converged: false,
        geometric_decay: None,
        verdict: verdict_for(l_f),
    })
}

/// Spectral and weight-norm assumptions for every layer of `model`; no iteration.
pub fn audit_assumptions(g: &EntangledGraph, model: &GraceModel) -> Result<TheoremAudit> {
    let weights: Vec<&Matrix> = model.gcn_weights.iter().collect();
    assumptions(g, &weights)
}

fn checked_step(m: &Matrix, w: &Matrix, z: &Matrix, iteration: usize) -> Result<Matrix> {
    let next = gcn_layer(z, m, w)?;
    let norm = next.frobenius_norm();
    if norm.is_nan() || norm > DIVERGENCE_NORM {
        return Err(GraceError::Diverged { iteration, norm });
    }
    Ok(next)
}

/// Iterates `Z <- relu(M Z W)` from `z0` and measures the contraction ratios.
///
/// Iteration stops once a step is at most [`CONVERGENCE_TOL`] or after `iters`
/// steps. The fixed point `Z*` is then refined by iterating further until the
/// step size reaches the floating-point floor, and ratios are recorded only
/// for distances that exceed the remaining estimation error by [`RESOLUTION`].
pub fn measure_contraction(
    g: &EntangledGraph,
    w: &Matrix,
    z0: &Matrix,
    iters: usize,
) -> Result<TheoremAudit> {
    let mut audit = assumptions(g, &[w])?;
    if !z0.is_finite() {
        return Err(GraceError::NonFinite("initial iterate".into()));
    }
    let m = &g.m;

    let mut iterates = vec![z0.clone()];
    let mut residual = None;
    let mut converged = false;
    for l in 0..iters {
        let next = checked_step(m, w, &iterates[l], l + 1)?;
        let step = next.sub(&iterates[l])?.frobenius_norm();
        iterates.push(next);
        residual = Some(step);
        if step <= CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    // refine the fixed-point estimate beyond the stopping tolerance
    let mut z_star = iterates.last().expect("at least z0").clone();
    let mut last_step = residual.unwrap_or(0.0);
    for extra in 0..POLISH_BUDGET {
        let next = checked_step(m, w, &z_star, iterates.len() + extra)?;
        let step = next.sub(&z_star)?.frobenius_norm();
        z_star = next;
        last_step = step;
        if step <= 1e4 * f64::MIN_POSITIVE || step <= 4.0 * f64::EPSILON * z_star.frobenius_norm() {
            break;
        }
    }
    let estimate_error = if audit.l_f < 1.0 {
        last_step * audit.l_f / (1.0 - audit.l_f)
    } else {
        last_step
    };
    let floor = (RESOLUTION * estimate_error).max(RESOLUTION * f64::MIN_POSITIVE);

    let distances = iterates
        .iter()
        .map(|z| Ok(z.sub(&z_star)?.frobenius_norm()))
        .collect::<Result<Vec<f64>>>()?;
    let mut trace = Vec::new();
    for pair in distances.windows(2) {
        if pair[0] <= floor {
            break;
        }
        trace.push(pair[1] / pair[0]);
    }

    audit.geometric_decay = (audit.l_f < 1.0).then(|| {
        let e0 = distances[0];
        distances
            .iter()
            .enumerate()
            .take(trace.len() + 1)
            .all(|(l, &e)| e <= audit.l_f.powi(l as i32) * e0 * (1.0 + DECAY_SLACK))
    });
    audit.iterations = iterates.len() - 1;
    audit.residual = residual;
    audit.converged = converged;
    audit.contraction_trace = trace;
    audit.distances = distances;
    Ok(audit)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    /// Eigenvalue of `I - M`.
    pub lambda: f64,
    pub energy_in: f64,
    pub energy_out: f64,
    /// `(1 - lambda)²`.
    pub expected_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub bands: Vec<Band>,
    pub total_in: f64,
    /// `Σ (1 - λ_i)² e_i`.
    pub total_out_spectral: f64,
    /// `‖M s‖²` computed directly.
    pub total_out_direct: f64,
    /// Largest `|energy_out - expected_gain * energy_in|` over bands.
    pub max_band_error: f64,
}

impl SmoothingReport {
    pub fn consistent(&self, tol: f64) -> bool {
        self.max_band_error <= tol && (self.total_out_spectral - self.total_out_direct).abs() <= tol
    }
}

/// Per-band energy of `signal` before and after one application of `M`.
pub fn smoothing_audit(g: &EntangledGraph, signal: &Matrix) -> Result<SmoothingReport> {
    let d = g.nodes();
    if signal.shape() != (d, 1) {
        return Err(GraceError::ShapeMismatch {
            op: "smoothing_audit",
            left: (d, d),
            right: signal.shape(),
        });
    }
    if !signal.is_finite() {
        return Err(GraceError::NonFinite("smoothing signal".into()));
    }
    let eig = g.laplacian_eigen()?;
    let out = g.m.matmul(signal)?;
    let mut bands = Vec::with_capacity(d);
    let mut max_band_error: f64 = 0.0;
    let mut total_out_spectral = 0.0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let u = eig.vector(i);
        let c_in: f64 = u.iter().zip(signal.as_slice()).map(|(a, b)| a * b).sum();
        let c_out: f64 = u.iter().zip(out.as_slice()).map(|(a, b)| a * b).sum();
        let band = Band {
            lambda,
            energy_in: c_in * c_in,
            energy_out: c_out * c_out,
            expected_gain: (1.0 - lambda).powi(2),
        };
        max_band_error =
            max_band_error.max((band.energy_out - band.expected_gain * band.energy_in).abs());
        total_out_spectral += band.expected_gain * band.energy_in;
        bands.push(band);
    }
    Ok(SmoothingReport {
        total_in: bands.iter().map(|b| b.energy_in).sum(),
        total_out_spectral,
        total_out_direct: out.as_slice().iter().map(|x| x * x).sum(),
        max_band_error,
        bands,
    })
}
