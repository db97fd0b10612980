//! The embedding <-> generator bridge.
//!
//! A generator induces token embeddings through its dominant eigenspace:
//! `Q1 = j1 (Qt1 Qt1^T)^{-1/2} Qt1` with
//! `Qt1 = diag(pi)^{-1/2} P1^T diag(pi)^{1/2}` and `emb(b) = Q1 (e_b / sqrt(pi_b))`.
//! Conversely, every injective embedding is induced by some generator on
//! `B + r + 1` states, built from a dummy-token augmentation of the Gram
//! matrix, an orthonormal completion, and a mixing parameter mu.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::generator::{build_generator, Generator};
use crate::simplex::SimplexPoint;

#[derive(Debug, Clone)]
pub struct Embedding {
    /// Per-token embedding vectors, B columns in R^r.
    vectors: Vec<Vec<f64>>,
    /// Projection r x B applied to rescaled fluctuation coordinates;
    /// `emb(b) = project(e_b / sqrt(pi_b))`.
    projector: DMatrix<f64>,
}

impl Embedding {
    /// Builds an embedding directly from explicit vectors (as when the
    /// embedding is the design input rather than derived from a generator).
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::InvalidInput("need at least two embedding vectors".into()));
        }
        let r = vectors[0].len();
        if r == 0 || vectors.iter().any(|v| v.len() != r) {
            return Err(Error::InvalidInput("embedding vectors must share a nonzero dimension".into()));
        }
        let projector = DMatrix::zeros(r, vectors.len());
        Ok(Embedding { vectors, projector })
    }

    pub fn num_tokens(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn of_token(&self, b: usize) -> &[f64] {
        &self.vectors[b]
    }

    /// emb(x~0) = sum_b x~0_b emb(b).
    pub fn of_mixture(&self, mix: &SimplexPoint) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (b, w) in mix.weights().iter().enumerate() {
            for (o, e) in out.iter_mut().zip(&self.vectors[b]) {
                *o += w * e;
            }
        }
        out
    }

    /// Q1 applied to an arbitrary rescaled vector (the dominant-eigenspace
    /// coordinates used by the convergence experiments).
    pub fn project(&self, rescaled: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(rescaled);
        (&self.projector * v).iter().cloned().collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let b = self.num_tokens();
        let mut g = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                g[(i, j)] = dot(&self.vectors[i], &self.vectors[j]);
            }
        }
        g
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.num_tokens() {
            for j in (i + 1)..self.num_tokens() {
                let d: f64 = self.vectors[i]
                    .iter()
                    .zip(&self.vectors[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }

    pub fn nearest_token(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (b, v) in self.vectors.iter().enumerate() {
            let d: f64 = v.iter().zip(point).map(|(a, p)| (a - p) * (a - p)).sum();
            if d < best_d {
                best_d = d;
                best = b;
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embeddings induced by the dominant eigenspace of a generator. The decay
/// rate is normalized to lambda_1 = 1 internally (the embedding itself is
/// scale-invariant). The isometry to R^r is fixed by a pivoted
/// orthonormalization of the columns of Qt1 with a first-nonzero-positive
/// sign convention, so embeddings are reproducible across runs.
pub fn embedding_from_generator(g: &Generator) -> Result<Embedding> {
    if g.spectral().len() < 2 {
        return Err(Error::RankZero);
    }
    let b = g.dim();
    let p1 = &g.spectral()[1].projection;
    if g.spectral()[1].rank == 0 {
        return Err(Error::RankZero);
    }
    let pi = g.stationary().weights();
    // Qt1 = D^{-1/2} P1^T D^{1/2}: P1 acts on row distributions, the paper's
    // projection acts on probability columns, hence the transpose.
    let mut qt1 = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            qt1[(i, j)] = p1[(j, i)] * (pi[j] / pi[i]).sqrt();
        }
    }

    // (Qt1 Qt1^T)^{-1/2} on its image.
    let sym = &qt1 * qt1.transpose();
    let eig = SymmetricEigen::new(sym);
    let emax = eig.eigenvalues.amax();
    let rank_tol = 1e-10 * emax.max(1.0);
    let mut inv_sqrt = DMatrix::<f64>::zeros(b, b);
    let mut rank = 0usize;
    for (i, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev > rank_tol {
            rank += 1;
            let u = eig.eigenvectors.column(i);
            inv_sqrt += DMatrix::from_fn(b, b, |r, c| u[r] * u[c] / ev.sqrt());
        }
    }
    if rank == 0 {
        return Err(Error::RankZero);
    }
    if rank != g.spectral()[1].rank {
        return Err(Error::NonRealEigenspace);
    }
    let m = inv_sqrt * &qt1;

    let basis = pivoted_orthonormal_basis(&qt1, rank)?;
    // projector = basis^T * M * D^{-1/2}; emb(b) = projector e_b * 1 (the
    // D^{-1/2} folds the / sqrt(pi_b) into the matrix).
    let mut proj = basis.transpose() * m;
    for j in 0..b {
        for i in 0..rank {
            proj[(i, j)] /= pi[j].sqrt();
        }
    }
    let vectors: Vec<Vec<f64>> = (0..b).map(|tok| proj.column(tok).iter().cloned().collect()).collect();
    Ok(Embedding { vectors, projector: proj })
}

/// Deterministic orthonormal basis of the column image: greedy pivot on the
/// largest residual column, Gram-Schmidt, first-nonzero-positive signs.
fn pivoted_orthonormal_basis(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let b = m.nrows();
    let mut residual: Vec<DVector<f64>> = (0..m.ncols()).map(|j| m.column(j).into_owned()).collect();
    let mut basis = DMatrix::<f64>::zeros(b, rank);
    for k in 0..rank {
        let (pivot, norm) = residual
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if norm < 1e-12 {
            return Err(Error::DegenerateSpectrum("image rank deficit in orthonormalization".into()));
        }
        let mut q = residual[pivot].clone() / norm;
        if let Some(first) = q.iter().find(|v| v.abs() > 1e-9) {
            if *first < 0.0 {
                q = -q;
            }
        }
        for c in residual.iter_mut() {
            let coef = q.dot(c);
            *c -= &q * coef;
        }
        basis.set_column(k, &q);
    }
    Ok(basis)
}

/// A generator on B + r + 1 states whose induced embedding restricted to the
/// first B tokens reproduces `emb` (exactly, up to the fixed isometry).
///
/// Construction: augment the Gram matrix with one dummy token so the top
/// eigenvector is not orthogonal to 1, complete the scaled eigenbasis to an
/// orthonormal frame over r extra states, solve the stationary-distribution
/// normalization for the scale eta by bisection, and mix the resulting
/// projection into the parent-independent generator with weight mu.
pub fn generator_from_embedding(emb: &Embedding, mu: f64) -> Result<Generator> {
    if emb.min_pairwise_distance() <= 1e-9 {
        return Err(Error::DegenerateEmbedding);
    }
    if !(0.0 < mu && mu < 1.0) {
        return Err(Error::NoValidMu(mu));
    }
    let b = emb.num_tokens();

    // Dummy-token augmentation: emb(B+1) = c * emb(j*), growing c until the
    // top eigenvector of the augmented Gram matrix leans on 1.
    let gram = emb.gram();
    let jstar = (0..b)
        .max_by(|&i, &j| gram[(i, i)].partial_cmp(&gram[(j, j)]).unwrap())
        .unwrap();
    if gram[(jstar, jstar)] <= 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let mut c = 1.0f64;
    let (aug, eig) = loop {
        let n = b + 1;
        let mut aug = DMatrix::<f64>::zeros(n, n);
        aug.view_mut((0, 0), (b, b)).copy_from(&gram);
        for i in 0..b {
            aug[(i, b)] = c * gram[(i, jstar)];
            aug[(b, i)] = c * gram[(jstar, i)];
        }
        aug[(b, b)] = c * c * gram[(jstar, jstar)];
        let eig = SymmetricEigen::new(aug.clone());
        let top = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let ones_component: f64 = eig.eigenvectors.column(top).iter().sum();
        if ones_component.abs() > 1e-6 {
            break (aug, eig);
        }
        c *= 2.0;
        if c > 1e18 {
            return Err(Error::DegenerateEmbedding);
        }
    };
    let n = b + 1;
    let _ = aug;

    // Rank-r eigenpairs of the augmented Gram matrix.
    let emax = eig.eigenvalues.amax();
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::new();
    for (i, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev > 1e-10 * emax {
            pairs.push((*ev, eig.eigenvectors.column(i).into_owned()));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let r = pairs.len();
    let lambda_max = pairs[0].0;
    let v_mat = DMatrix::from_columns(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    let lambdas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let v_t_ones: Vec<f64> = (0..r).map(|i| v_mat.column(i).iter().sum()).collect();

    // Normalization identity: f(eta) = (B+1)/eta + ||d(eta)||^2 / eta^2 - 1
    // with d_i = sqrt(lambda_i / (1 - lambda_i/eta)) (V^T 1)_i. The identity
    // diverges as eta -> lambda_max and tends to -1 as eta -> inf.
    let f = |eta: f64| -> f64 {
        let mut d2 = 0.0;
        for i in 0..r {
            d2 += lambdas[i] / (1.0 - lambdas[i] / eta) * v_t_ones[i] * v_t_ones[i];
        }
        n as f64 / eta + d2 / (eta * eta) - 1.0
    };
    let mut lo = lambda_max + 1e-9;
    let mut hi = 1e12;
    // Expand lo until f(lo) > 0 (it blows up at the left endpoint but may
    // start below the pole numerically).
    let mut guard = 0;
    while f(lo) <= 0.0 {
        lo = lambda_max + (lo - lambda_max) * 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::BisectionFailure);
        }
    }
    if f(hi) >= 0.0 {
        return Err(Error::BisectionFailure);
    }
    let mut eta = 0.0;
    for _ in 0..200 {
        eta = 0.5 * (lo + hi);
        let v = f(eta);
        if v.abs() <= 1e-12 {
            break;
        }
        if v > 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
    }

    // Orthonormal completion over r extra states.
    let d_vec: Vec<f64> = (0..r)
        .map(|i| (lambdas[i] / (1.0 - lambdas[i] / eta)).sqrt() * v_t_ones[i])
        .collect();
    let d_norm = dot(&d_vec, &d_vec).sqrt();
    if d_norm < 1e-12 {
        return Err(Error::BisectionFailure);
    }
    // U maps -d/|d| to 1/sqrt(r): a reflection through their bisector.
    let u_mat = reflection_between(
        &d_vec.iter().map(|v| -v / d_norm).collect::<Vec<_>>(),
        &vec![1.0 / (r as f64).sqrt(); r],
    );

    let total = n + r;
    let mut v_tilde = DMatrix::<f64>::zeros(total, r);
    for col in 0..r {
        let scale = (lambdas[col] / eta).sqrt();
        for row in 0..n {
            v_tilde[(row, col)] = v_mat[(row, col)] * scale;
        }
        let comp = (1.0 - lambdas[col] / eta).sqrt();
        for row in 0..r {
            v_tilde[(n + row, col)] = u_mat[(row, col)] * comp;
        }
    }

    // pi: 1/eta on tokens, |d|^2 / (eta^2 r) on completion states.
    let s2 = d_norm * d_norm / (eta * eta * r as f64);
    let mut pi = vec![1.0 / eta; n];
    pi.extend(std::iter::repeat(s2).take(r));
    let pi_sum: f64 = pi.iter().sum();
    if (pi_sum - 1.0).abs() > 1e-8 || s2 <= 0.0 {
        return Err(Error::BisectionFailure);
    }
    let pi: Vec<f64> = pi.iter().map(|p| p / pi_sum).collect();

    // Check the frame is orthonormal and annihilates sqrt(pi).
    let vtv = v_tilde.transpose() * &v_tilde;
    if (vtv - DMatrix::identity(r, r)).amax() > 1e-8 {
        return Err(Error::BisectionFailure);
    }
    let sqrt_pi = DVector::from_iterator(total, pi.iter().map(|p| p.sqrt()));
    if (v_tilde.transpose() * &sqrt_pi).amax() > 1e-7 {
        return Err(Error::BisectionFailure);
    }

    // L_mu = -(I - 1 pi^T) + mu * D^{-1/2} (Vt Vt^T) D^{1/2}.
    let p_proj = &v_tilde * v_tilde.transpose();
    let mut rates = DMatrix::<f64>::zeros(total, total);
    for i in 0..total {
        for j in 0..total {
            let ptilde = p_proj[(i, j)] * (pi[j] / pi[i]).sqrt();
            let base = -(if i == j { 1.0 } else { 0.0 }) + pi[j];
            rates[(i, j)] = base + mu * ptilde;
            if i != j && rates[(i, j)] < 0.0 {
                if rates[(i, j)] > -1e-12 {
                    rates[(i, j)] = 0.0;
                } else {
                    return Err(Error::NoValidMu(mu));
                }
            }
        }
    }
    // Repair roundoff in row sums so the generator validator accepts.
    for i in 0..total {
        let sum: f64 = rates.row(i).iter().sum();
        rates[(i, i)] -= sum;
    }

    build_generator(rates)
}

/// Orthogonal reflection mapping unit vector a to unit vector b.
fn reflection_between(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let r = a.len();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nrm2 = dot(&diff, &diff);
    if nrm2 < 1e-24 {
        return DMatrix::identity(r, r);
    }
    DMatrix::from_fn(r, r, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * diff[i] * diff[j] / nrm2
    })
}
