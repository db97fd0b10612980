//! Rate matrices, their spectral decomposition, and the transition semigroup.
//!
//! Convention: distributions are rows, so `x0^T e^{tau L}` is the marginal at
//! dilated time tau. Spectral components satisfy
//! `e^{tau L} = sum_i e^{-lambda_i tau} P_i` with decay rates
//! `0 = lambda_0 < lambda_1 < ...` and projections `P_i` grouped by
//! eigenvalue cluster (rank = multiplicity).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;

const ROW_SUM_TOL: f64 = 1e-12;
const PROJECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectralComponent {
    /// Decay rate lambda_i >= 0.
    pub decay: f64,
    /// Projection onto the corresponding eigenspace, acting as
    /// `x^T P_i` on row distributions.
    pub projection: DMatrix<f64>,
    /// Eigenspace dimension.
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct Generator {
    rates: DMatrix<f64>,
    stationary: SimplexPoint,
    spectral: Vec<SpectralComponent>,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn stationary(&self) -> &SimplexPoint {
        &self.stationary
    }

    pub fn spectral(&self) -> &[SpectralComponent] {
        &self.spectral
    }

    /// Smallest positive decay rate lambda_1.
    pub fn lambda1(&self) -> f64 {
        self.spectral[1].decay
    }

    /// The generator with rates divided by c (decay rates scale the same way).
    pub fn scaled(&self, c: f64) -> Generator {
        Generator {
            rates: &self.rates / c,
            stationary: self.stationary.clone(),
            spectral: self
                .spectral
                .iter()
                .map(|s| SpectralComponent {
                    decay: s.decay / c,
                    projection: s.projection.clone(),
                    rank: s.rank,
                })
                .collect(),
        }
    }

    /// `e^{tau L}` via the spectral decomposition. Rows sum to 1; tiny negative
    /// entries (above -1e-12) are clamped to 0, anything worse is an error.
    pub fn transition_matrix(&self, tau: f64) -> Result<DMatrix<f64>> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidInput(format!("tau must be >= 0, got {tau}")));
        }
        let b = self.dim();
        let mut m = DMatrix::<f64>::zeros(b, b);
        for comp in &self.spectral {
            m += &comp.projection * (-comp.decay * tau).exp();
        }
        for e in m.iter_mut() {
            if *e < 0.0 {
                if *e < -ROW_SUM_TOL {
                    return Err(Error::NumericalBreakdown);
                }
                *e = 0.0;
            }
        }
        // Clamping perturbs row sums at the 1e-12 level; renormalize.
        for mut row in m.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
        Ok(m)
    }

    /// Marginal row of `e^{tau L}` for a pure initial token.
    pub fn transition_row(&self, x0: usize, tau: f64) -> Result<Vec<f64>> {
        let m = self.transition_matrix(tau)?;
        Ok(m.row(x0).iter().cloned().collect())
    }
}

/// Validates and spectrally decomposes a rate matrix.
pub fn build_generator(rates: DMatrix<f64>) -> Result<Generator> {
    let b = rates.nrows();
    if rates.ncols() != b || b < 2 {
        return Err(Error::NotAGenerator(format!("matrix must be square with B >= 2, got {b}x{}", rates.ncols())));
    }
    for i in 0..b {
        let mut sum = 0.0;
        for j in 0..b {
            let v = rates[(i, j)];
            if !v.is_finite() {
                return Err(Error::NotAGenerator("non-finite entry".into()));
            }
            if i != j && v < -ROW_SUM_TOL {
                return Err(Error::NotAGenerator(format!("negative off-diagonal rate at ({i},{j})")));
            }
            sum += v;
        }
        if sum.abs() > ROW_SUM_TOL * (1.0 + rates.row(i).amax()) {
            return Err(Error::NotAGenerator(format!("row {i} sums to {sum}")));
        }
    }

    let scale = rates.amax().max(1.0);
    let eigs = rates.complex_eigenvalues();
    let imag_tol = 1e-9 * scale;
    let mut reals = Vec::with_capacity(b);
    for e in eigs.iter() {
        if e.im.abs() > imag_tol {
            return Err(Error::ComplexSpectrum);
        }
        reals.push(e.re);
    }
    reals.sort_by(|a, b| b.partial_cmp(a).unwrap());

    // Cluster eigenvalues; decay rates are the negated cluster means.
    let cluster_tol = 1e-7 * scale;
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for v in reals {
        match clusters.last_mut() {
            Some(c) if (c[0] - v).abs() <= cluster_tol => c.push(v),
            _ => clusters.push(vec![v]),
        }
    }

    if clusters[0].iter().any(|v| v.abs() > cluster_tol) {
        return Err(Error::DegenerateSpectrum("no zero eigenvalue found".into()));
    }
    if clusters[0].len() != 1 {
        return Err(Error::DegenerateStationary);
    }

    // Right eigenvectors per cluster from the nullspace of (L - lambda I).
    let mut basis = DMatrix::<f64>::zeros(b, b);
    let mut col = 0usize;
    let mut meta = Vec::new();
    for cluster in &clusters {
        let lambda = cluster.iter().sum::<f64>() / cluster.len() as f64;
        let vecs = nullspace(&(rates.clone() - DMatrix::identity(b, b) * lambda), cluster.len())?;
        for v in &vecs {
            basis.set_column(col, v);
            col += 1;
        }
        meta.push((-lambda, vecs.len()));
    }
    if col != b {
        return Err(Error::DegenerateSpectrum("eigenvector count mismatch".into()));
    }

    let inv = basis
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSpectrum("eigenbasis not invertible".into()))?;

    let mut spectral = Vec::with_capacity(meta.len());
    let mut offset = 0usize;
    for (decay, rank) in meta {
        let mut sel = DMatrix::<f64>::zeros(b, b);
        for k in offset..offset + rank {
            sel[(k, k)] = 1.0;
        }
        offset += rank;
        let projection = &basis * sel * &inv;
        spectral.push(SpectralComponent { decay: decay.max(0.0), projection, rank });
    }
    spectral[0].decay = 0.0;

    // Stationary distribution: the left null vector, i.e. nullspace of L^T.
    let pi_vec = nullspace(&rates.transpose(), 1)?.remove(0);
    let sum: f64 = pi_vec.iter().sum();
    if sum.abs() < 1e-12 {
        return Err(Error::DegenerateStationary);
    }
    let pi: Vec<f64> = pi_vec.iter().map(|v| v / sum).collect();
    if pi.iter().any(|p| *p <= 1e-12) {
        return Err(Error::DegenerateStationary);
    }
    let stationary = SimplexPoint::normalized(pi)?;

    let g = Generator { rates, stationary, spectral };
    verify_spectral(&g)?;
    Ok(g)
}

/// Parent-independent mutation: rates = psi (1 pi^T - I). The spectral
/// decomposition is exact: P_0 = 1 pi^T and P_1 = I - 1 pi^T with decay psi.
pub fn parent_independent_generator(psi: f64, pi: &SimplexPoint) -> Result<Generator> {
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::InvalidPsi(psi));
    }
    if !pi.is_strictly_positive() {
        return Err(Error::InvalidPi);
    }
    let b = pi.dim();
    let mut rates = DMatrix::<f64>::zeros(b, b);
    let mut p0 = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            let one_pi = pi.weights()[j];
            p0[(i, j)] = one_pi;
            rates[(i, j)] = psi * (one_pi - if i == j { 1.0 } else { 0.0 });
        }
    }
    let p1 = DMatrix::identity(b, b) - &p0;
    let g = Generator {
        rates,
        stationary: pi.clone(),
        spectral: vec![
            SpectralComponent { decay: 0.0, projection: p0, rank: 1 },
            SpectralComponent { decay: psi, projection: p1, rank: b - 1 },
        ],
    };
    verify_spectral(&g)?;
    Ok(g)
}

/// Rescaled fluctuation coordinates:
/// sqrt(zeta - (zeta-1) e^{-2 tau_t}) (v - pi) / sqrt(pi), orthogonal to
/// sqrt(pi).
pub fn population_rescale(v: &SimplexPoint, pi: &SimplexPoint, zeta: u64, tau_t: f64) -> Vec<f64> {
    let z = zeta as f64;
    let factor = (z - (z - 1.0) * (-2.0 * tau_t).exp()).sqrt();
    v.weights()
        .iter()
        .zip(pi.weights())
        .map(|(vb, pb)| factor * (vb - pb) / pb.sqrt())
        .collect()
}

fn nullspace(m: &DMatrix<f64>, expected_dim: usize) -> Result<Vec<DVector<f64>>> {
    let b = m.nrows();
    let svd = m.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().unwrap();
    let mut idx: Vec<usize> = (0..b).collect();
    idx.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    let smax = svd.singular_values.amax().max(1.0);
    let tol = 1e-7 * smax;
    let mut out = Vec::new();
    for &i in idx.iter().take(expected_dim) {
        if svd.singular_values[i] > tol {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenspace dimension deficit: singular value {} above tolerance",
                svd.singular_values[i]
            )));
        }
        out.push(v_t.row(i).transpose());
    }
    Ok(out)
}

fn verify_spectral(g: &Generator) -> Result<()> {
    let b = g.dim();
    let mut sum = DMatrix::<f64>::zeros(b, b);
    for c in &g.spectral {
        sum += &c.projection;
    }
    if (sum - DMatrix::identity(b, b)).amax() > PROJECTION_TOL {
        return Err(Error::DegenerateSpectrum("projections do not sum to identity".into()));
    }
    for (i, ci) in g.spectral.iter().enumerate() {
        for (j, cj) in g.spectral.iter().enumerate() {
            let prod = &ci.projection * &cj.projection;
            let target = if i == j { ci.projection.clone() } else { DMatrix::zeros(b, b) };
            if (prod - target).amax() > PROJECTION_TOL {
                return Err(Error::DegenerateSpectrum("projections not idempotent/orthogonal".into()));
            }
        }
    }
    // pi^T L = 0.
    let pi = DVector::from_column_slice(g.stationary.weights());
    if (g.rates.transpose() * &pi).amax() > 1e-8 * g.rates.amax().max(1.0) {
        return Err(Error::DegenerateSpectrum("stationary vector is not a left null vector".into()));
    }
    Ok(())
}
