//! Affinity graph over feature-context nodes.
//!
//! The affinity is the Gram matrix `X Xᵀ`. Entries not exceeding `q` times
//! the mean affinity (over all `d²` entries, diagonal included) are dropped.
//! Self-loops are added and the result is symmetrically degree-normalized into
//! the propagator `M = D̂^{-1/2} Â D̂^{-1/2}`. Spectral checks run on the
//! normalized Laplacian `I - M`.

use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};
use crate::feature_context::FeatureContext;
use crate::numerics::{sym_eigen, EigenResult, Matrix, Tape, Var, DEFAULT_TOL};

/// Default threshold factor.
pub const DEFAULT_Q: f64 = 0.5;

/// Eigenvalues at or below this count as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;

/// `X Xᵀ`, exactly symmetric.
pub fn gram(x: &Matrix) -> Matrix {
    let d = x.rows();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        let xi = x.row(i);
        for j in i..d {
            let v: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn entangle(ctx: &FeatureContext) -> Matrix {
    gram(&ctx.x)
}

/// 0/1 mask of entries strictly above `q * mean(x_fe)`.
pub fn threshold_mask(x_fe: &Matrix, q: f64) -> Matrix {
    let cutoff = q * x_fe.mean();
    x_fe.map(|v| if v > cutoff { 1.0 } else { 0.0 })
}

pub fn threshold_affinity(x_fe: &Matrix, q: f64) -> Matrix {
    let cutoff = q * x_fe.mean();
    x_fe.map(|v| if v > cutoff { v } else { 0.0 })
}

/// Affinity, sparsified adjacency, and the normalized propagator of one sample.
#[derive(Clone, Debug)]
pub struct EntangledGraph {
    pub x_fe: Matrix,
    pub a: Matrix,
    /// `A + I`.
    pub a_hat: Matrix,
    /// Row sums of `Â`.
    pub d_hat: Vec<f64>,
    /// `D̂^{-1/2} Â D̂^{-1/2}`.
    pub m: Matrix,
    pub q: f64,
}

/// Self-loops and symmetric degree normalization of a nonnegative symmetric adjacency.
///
/// The returned graph records `A` as its own affinity with `q = 0`; thresholding
/// a nonnegative matrix at zero leaves it unchanged.
pub fn build_propagator(a: &Matrix) -> Result<EntangledGraph> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(GraceError::NotSquare { rows, cols });
    }
    if !a.is_symmetric(0.0) {
        return Err(GraceError::InvalidArgument(
            "adjacency must be symmetric".into(),
        ));
    }
    if a.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(GraceError::InvalidArgument(
            "adjacency must be finite and nonnegative".into(),
        ));
    }
    Ok(assemble(a.clone(), a.clone(), 0.0))
}

fn assemble(x_fe: Matrix, a: Matrix, q: f64) -> EntangledGraph {
    let d = a.rows();
    let a_hat = a.add(&Matrix::identity(d)).expect("square");
    let d_hat: Vec<f64> = (0..d).map(|i| a_hat.row(i).iter().sum()).collect();
    assert!(
        d_hat.iter().all(|&v| v >= 1.0),
        "self-loops keep degrees positive"
    );
    let mut m = a_hat.clone();
    for i in 0..d {
        for (j, x) in m.row_mut(i).iter_mut().enumerate() {
            *x /= (d_hat[i] * d_hat[j]).sqrt();
        }
    }
    EntangledGraph {
        x_fe,
        a,
        a_hat,
        d_hat,
        m,
        q,
    }
}

impl EntangledGraph {
    /// Entangle, threshold, and normalize a feature context.
    pub fn from_context(ctx: &FeatureContext, q: f64) -> Result<Self> {
        Self::from_features(&ctx.x, q)
    }

    pub fn from_features(x: &Matrix, q: f64) -> Result<Self> {
        if q.is_nan() || q <= 0.0 {
            return Err(GraceError::InvalidArgument(format!(
                "threshold factor {q} must be positive"
            )));
        }
        if !x.is_finite() {
            return Err(GraceError::NonFinite("feature context".into()));
        }
        if x.as_slice().iter().any(|&v| v < 0.0) {
            return Err(GraceError::InvalidArgument(
                "feature context must be nonnegative".into(),
            ));
        }
        let x_fe = gram(x);
        let a = threshold_affinity(&x_fe, q);
        Ok(assemble(x_fe, a, q))
    }

    pub fn nodes(&self) -> usize {
        self.m.rows()
    }

    /// Nonzero off-diagonal entries of `A` (both triangles).
    pub fn nnz(&self) -> usize {
        let d = self.nodes();
        (0..d)
            .map(|i| (0..d).filter(|&j| i != j && self.a[(i, j)] != 0.0).count())
            .sum()
    }

    /// Upper-triangle edge list of `Â` without self-loops.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let d = self.nodes();
        let mut out = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                let w = self.a_hat[(i, j)];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// `I - M`.
    pub fn normalized_laplacian(&self) -> Matrix {
        Matrix::identity(self.nodes()).sub(&self.m).expect("square")
    }

    pub fn laplacian_eigen(&self) -> Result<EigenResult> {
        sym_eigen(&self.normalized_laplacian(), DEFAULT_TOL)
    }

    /// Connected components of the edge list, by union-find.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.nodes());
        for (i, j, _) in self.edges() {
            uf.union(i, j);
        }
        uf.count()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    sets: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            sets: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.sets -= 1;
    }

    fn count(&self) -> usize {
        self.sets
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianDiagnostics {
    /// Spectrum of `I - M`, ascending.
    pub eigenvalues: Vec<f64>,
    pub zero_multiplicity: usize,
    pub component_count: usize,
}

impl LaplacianDiagnostics {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Spectrum within `[0, 2]` up to `slack`.
    pub fn within_interval(&self, slack: f64) -> bool {
        self.eigenvalues
            .iter()
            .all(|&l| l >= -slack && l <= 2.0 + slack)
    }
}

pub fn diagnostics(g: &EntangledGraph) -> Result<LaplacianDiagnostics> {
    let eig = g.laplacian_eigen()?;
    Ok(diagnostics_from(g, &eig))
}

fn diagnostics_from(g: &EntangledGraph, eig: &EigenResult) -> LaplacianDiagnostics {
    LaplacianDiagnostics {
        zero_multiplicity: eig
            .eigenvalues
            .iter()
            .filter(|&&l| l <= ZERO_EIGENVALUE_TOL)
            .count(),
        eigenvalues: eig.eigenvalues.clone(),
        component_count: g.component_count(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralGain {
    pub lambda: f64,
    /// `‖M u‖ / ‖u‖` for the eigenvector `u` of `λ`.
    pub gain: f64,
}

/// Gain of the propagator on each Laplacian eigenvector.
pub fn spectral_response(g: &EntangledGraph) -> Result<Vec<SpectralGain>> {
    let eig = g.laplacian_eigen()?;
    spectral_response_from(g, &eig)
}

fn spectral_response_from(g: &EntangledGraph, eig: &EigenResult) -> Result<Vec<SpectralGain>> {
    let mut out = Vec::with_capacity(eig.eigenvalues.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let u = Matrix::column(&eig.vector(i));
        let mu = g.m.matmul(&u)?;
        out.push(SpectralGain {
            lambda,
            gain: mu.frobenius_norm() / u.frobenius_norm(),
        });
    }
    Ok(out)
}

/// Exportable summary of a graph's spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub d: usize,
    pub q: f64,
    pub nnz: usize,
    pub eigenvalue_min: f64,
    pub eigenvalue_max: f64,
    pub zero_multiplicity: usize,
    pub component_count: usize,
    pub interval_check: bool,
    pub gains: Vec<SpectralGain>,
}

pub fn spectral_certificate(g: &EntangledGraph) -> Result<SpectralCertificate> {
    let eig = g.laplacian_eigen()?;
    let diag = diagnostics_from(g, &eig);
    Ok(SpectralCertificate {
        d: g.nodes(),
        q: g.q,
        nnz: g.nnz(),
        eigenvalue_min: diag.lambda_min(),
        eigenvalue_max: diag.lambda_max(),
        zero_multiplicity: diag.zero_multiplicity,
        component_count: diag.component_count,
        interval_check: diag.within_interval(1e-8),
        gains: spectral_response_from(g, &eig)?,
    })
}

/// Tape form of the graph construction from a `d x c` feature node.
///
/// The threshold mask is computed from the current value and recorded as a
/// constant. With `normalize` unset the unnormalized `Â` is returned.
pub fn propagator_on_tape(tape: &mut Tape, x: Var, q: f64, normalize: bool) -> Result<Var> {
    let xt = tape.transpose(x);
    let x_fe = tape.matmul(x, xt)?;
    let mask = threshold_mask(tape.value(x_fe), q);
    let d = mask.rows();
    let a = tape.mask_mul(x_fe, mask)?;
    let a_hat = tape.add_const(a, Matrix::identity(d))?;
    if !normalize {
        return Ok(a_hat);
    }
    let deg = tape.row_sums(a_hat);
    let s = tape.powf(deg, -0.5);
    let left = tape.scale_rows(a_hat, s)?;
    tape.scale_cols(left, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn gram_of_small_matrix() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let expected = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]]);
        assert_eq!(gram(&x), expected);
        assert_eq!(gram(&Matrix::zeros(3, 2)), Matrix::zeros(3, 3));
        let orth = Matrix::from_rows(&[[0.6, 0.8], [-0.8, 0.6]]);
        assert!(gram(&orth).sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn threshold_keeps_strong_entries() {
        let x_fe = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]]);
        assert!((x_fe.mean() - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(threshold_affinity(&x_fe, 0.5), x_fe);
    }

    #[test]
    fn threshold_of_constant_matrix() {
        let c = Matrix::filled(4, 4, 2.5);
        assert_eq!(threshold_affinity(&c, 0.5), c);
        assert_eq!(threshold_affinity(&c, 0.99), c);
        assert_eq!(threshold_affinity(&c, 1.0), Matrix::zeros(4, 4));
        assert_eq!(threshold_affinity(&c, 2.0), Matrix::zeros(4, 4));
    }

    #[test]
    fn two_node_propagator() {
        let g = build_propagator(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_eq!(g.a_hat, Matrix::filled(2, 2, 1.0));
        assert_eq!(g.d_hat, vec![2.0, 2.0]);
        assert!(g.m.sub(&Matrix::filled(2, 2, 0.5)).unwrap().max_abs() < 1e-15);
        let diag = diagnostics(&g).unwrap();
        assert!(diag.eigenvalues[0].abs() < 1e-12);
        assert!((diag.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_node() {
        let g = build_propagator(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(g.m, Matrix::identity(1));
        assert_eq!(g.normalized_laplacian(), Matrix::zeros(1, 1));
    }

    #[test]
    fn disconnected_pair() {
        let g = build_propagator(&Matrix::zeros(2, 2)).unwrap();
        let diag = diagnostics(&g).unwrap();
        assert_eq!(diag.zero_multiplicity, 2);
        assert_eq!(diag.component_count, 2);
    }

    #[test]
    fn complete_triangle_with_self_loops() {
        let mut a = Matrix::filled(3, 3, 1.0);
        for i in 0..3 {
            a[(i, i)] = 0.0;
        }
        let g = build_propagator(&a).unwrap();
        assert_eq!(g.d_hat, vec![3.0; 3]);
        // M = J/3 has eigenvalues {1, 0, 0}, so I - M has {0, 1, 1}
        let diag = diagnostics(&g).unwrap();
        let want = [0.0, 1.0, 1.0];
        for (l, w) in diag.eigenvalues.iter().zip(want) {
            assert!((l - w).abs() < 1e-12, "{:?}", diag.eigenvalues);
        }
        assert_eq!(diag.zero_multiplicity, 1);
        assert_eq!(diag.component_count, 1);
    }

    #[test]
    fn gains_at_low_and_mid_frequency() {
        let g = build_propagator(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        let resp = spectral_response(&g).unwrap();
        assert!((resp[0].gain - 1.0).abs() < 1e-12);
        assert!(resp[1].gain.abs() < 1e-12);
    }

    #[test]
    fn high_frequency_mode_flips_sign() {
        // With zero self-weight the 2-node propagator is [[0,1],[1,0]]; its Laplacian
        // has λ = 2 on u = (1, -1)/√2, and M u = -u.
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let g = EntangledGraph {
            x_fe: m.clone(),
            a: m.clone(),
            a_hat: m.clone(),
            d_hat: vec![1.0, 1.0],
            m: m.clone(),
            q: 0.0,
        };
        let eig = g.laplacian_eigen().unwrap();
        assert!((eig.max() - 2.0).abs() < 1e-12);
        let u = Matrix::column(&eig.vector(1));
        let mu = m.matmul(&u).unwrap();
        assert!(mu.add(&u).unwrap().max_abs() < 1e-12);
        let resp = spectral_response(&g).unwrap();
        assert!((resp[1].gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_adjacency() {
        assert!(build_propagator(&Matrix::from_rows(&[[0.0, -1.0], [-1.0, 0.0]])).is_err());
        assert!(build_propagator(&Matrix::from_rows(&[[0.0, 1.0], [2.0, 0.0]])).is_err());
    }

    #[test]
    fn tape_propagator_matches_direct() {
        let x = Matrix::from_rows(&[[0.5, 0.1], [0.0, 1.2], [0.7, 0.7], [0.05, 0.02]]);
        let direct = EntangledGraph::from_features(&x, 0.5).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let m = propagator_on_tape(&mut tape, xv, 0.5, true).unwrap();
        assert!(tape.value(m).sub(&direct.m).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn masked_entanglement_gradient() {
        let x = Matrix::from_rows(&[[0.5, 0.1], [0.3, 1.2], [0.7, 0.7], [0.05, 0.02]]);
        let mask = threshold_mask(&gram(&x), 0.5);
        let weights = Matrix::from_rows(&[
            [0.3, -0.2, 0.5, 0.1],
            [0.9, 0.4, -0.6, 0.2],
            [-0.1, 0.8, 0.3, -0.7],
            [0.2, 0.1, 0.6, 0.4],
        ]);
        let err = grad_check(
            |t, v| {
                let vt = t.transpose(v);
                let fe = t.matmul(v, vt)?;
                let a = t.mask_mul(fe, mask.clone())?;
                let w = t.mask_mul(a, weights.clone())?;
                Ok(t.sum(w))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
