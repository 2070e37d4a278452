//! Hodge decomposition and the spectrum of `δd` on coclosed k-forms.
//!
//! All eigenproblems are dense generalized symmetric problems `S x = λ M x`,
//! reduced to standard form with the Cholesky factor of the mass matrix.
//! Eigenvectors come out `M`-orthonormal.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dec::{Cochain, DecOps, MassOperator};
use crate::error::{Error, Result};

/// Relative threshold separating numerically zero eigenvalues.
const KERNEL_RTOL: f64 = 1e-9;
/// Relative tolerance for reporting eigenvalue multiplicities.
pub const CLUSTER_RTOL: f64 = 1e-6;
/// Safety factor applied to the empirical embedding constant.
pub const EMBEDDING_SAFETY: f64 = 1.5;

/// Solves `S x = λ M x`; eigenvalues ascending, eigenvectors `M`-orthonormal.
pub fn generalized_eigen(
    stiff: &DMatrix<f64>,
    mass: &MassOperator,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = mass.factor().l();
    let y = l
        .solve_lower_triangular(stiff)
        .ok_or_else(|| Error::EigenSolve("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::EigenSolve("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::EigenSolve("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let u = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    let x = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::EigenSolve("back substitution failed".into()))?;
    Ok((values, x))
}

fn kernel_count(values: &DVector<f64>) -> usize {
    let top = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    values
        .iter()
        .take_while(|&&v| v.abs() <= KERNEL_RTOL * top.max(1.0))
        .count()
}

/// Groups a sorted eigenvalue list into clusters `(start, len)` of relative width `rtol`.
pub fn clusters(values: &[f64], rtol: f64) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some((start, len))
                if (v - values[*start]).abs() <= rtol * v.abs().max(values[*start].abs()) =>
            {
                *len += 1;
            }
            _ => out.push((i, 1)),
        }
        let _ = i;
    }
    out
}

/// Eigenpairs of `δd` restricted to the coclosed k-forms, plus the harmonic basis.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub degree: usize,
    /// Nonzero eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Coexact eigencochains as columns (M-orthonormal).
    pub eigenvectors: DMatrix<f64>,
    /// Harmonic cochains as columns (M-orthonormal).
    pub harmonics: DMatrix<f64>,
    /// Dimension of the full coexact space of the mesh.
    pub coexact_dimension: usize,
}

impl SpectralBasis {
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn harmonic_count(&self) -> usize {
        self.harmonics.ncols()
    }

    pub fn is_complete(&self) -> bool {
        self.truncation() == self.coexact_dimension
    }

    pub fn eigenvector(&self, i: usize) -> Cochain {
        Cochain::new(self.degree, self.eigenvectors.column(i).into_owned())
    }

    pub fn harmonic(&self, j: usize) -> Cochain {
        Cochain::new(self.degree, self.harmonics.column(j).into_owned())
    }

    /// Multiplicity clusters of the computed eigenvalues.
    pub fn clusters(&self) -> Vec<(usize, usize)> {
        clusters(&self.eigenvalues, CLUSTER_RTOL)
    }

    /// Harmonics followed by eigenvectors, as one W basis.
    pub fn w_basis(&self) -> (DMatrix<f64>, Vec<f64>) {
        let rows = self.eigenvectors.nrows().max(self.harmonics.nrows());
        let cols = self.harmonic_count() + self.truncation();
        let mut b = DMatrix::zeros(rows, cols);
        b.columns_mut(0, self.harmonic_count())
            .copy_from(&self.harmonics);
        b.columns_mut(self.harmonic_count(), self.truncation())
            .copy_from(&self.eigenvectors);
        let mut lambdas = vec![0.0; self.harmonic_count()];
        lambdas.extend_from_slice(&self.eigenvalues);
        (b, lambdas)
    }

    /// Largest orthonormality defect and largest relative eigen-residual.
    pub fn diagnostics(&self, ops: &DecOps) -> Result<SpectralDiagnostics> {
        let k = self.degree;
        let m = ops.mass(k)?;
        let (b, lambdas) = self.w_basis();
        let gram = b.tr_mul(&(m.matrix() * &b));
        let mut ortho: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((gram[(i, j)] - target).abs());
            }
        }
        let mut residual: f64 = 0.0;
        let mut harmonic: f64 = 0.0;
        if k < ops.dim() {
            let s = ops.stiffness(k)?;
            for (j, &lam) in lambdas.iter().enumerate() {
                let x = b.column(j).into_owned();
                let r = m.solve(&(&s * &x)) - &x * lam;
                let rm = r.dot(&m.apply(&r)).max(0.0).sqrt();
                residual = residual.max(rm / (1.0 + lam));
            }
        }
        for j in 0..self.harmonic_count() {
            let h = self.harmonic(j);
            if k < ops.dim() {
                harmonic = harmonic.max(ops.l2_norm(&ops.exterior_derivative(&h)?)?);
            }
            if k > 0 {
                harmonic = harmonic.max(ops.l2_norm(&ops.codifferential(&h)?)?);
            }
        }
        Ok(SpectralDiagnostics {
            orthonormality: ortho,
            eigen_residual: residual,
            harmonic_residual: harmonic,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralDiagnostics {
    pub orthonormality: f64,
    pub eigen_residual: f64,
    pub harmonic_residual: f64,
}

/// Lowest `count` nonzero eigenpairs of `δd` on W, with the harmonic kernel.
/// `count = None` keeps the whole coexact spectrum.
pub fn eigensolve_w(ops: &DecOps, k: usize, count: Option<usize>) -> Result<SpectralBasis> {
    let n = ops.dim();
    if k >= n {
        return Err(Error::DegreeOutOfRange {
            degree: k,
            min: 0,
            max: n - 1,
        });
    }
    let m = ops.mass(k)?;
    let s = ops.stiffness(k)?;
    let (values, vectors) = generalized_eigen(&s, m)?;
    let z = kernel_count(&values);
    let coexact_dimension = values.len() - z;
    let count = count.unwrap_or(coexact_dimension);
    if count > coexact_dimension {
        return Err(Error::Truncation(format!(
            "requested {count} eigenpairs but the coexact space has dimension {coexact_dimension}"
        )));
    }
    if values.iter().skip(z).any(|&v| v <= 0.0) {
        return Err(Error::EigenSolve(
            "nonpositive eigenvalue outside the kernel".into(),
        ));
    }
    let closed = vectors.columns(0, z).into_owned();
    let harmonics = if k == 0 {
        closed
    } else {
        // harmonic = closed and M-orthogonal to exact forms
        let d = ops.derivative_matrix(k - 1)?;
        let b = closed.tr_mul(&(m.matrix() * d));
        let bbt = &b * b.transpose();
        let eig = SymmetricEigen::new((&bbt + bbt.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..z).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let sorted = DVector::from_iterator(z, order.iter().map(|&i| eig.eigenvalues[i]));
        let h = kernel_count(&sorted);
        let coeffs = DMatrix::from_fn(z, h, |r, c| eig.eigenvectors[(r, order[c])]);
        &closed * coeffs
    };
    Ok(SpectralBasis {
        degree: k,
        eigenvalues: values.iter().skip(z).take(count).copied().collect(),
        eigenvectors: vectors.columns(z, count).into_owned(),
        harmonics,
        coexact_dimension,
    })
}

/// Dimension of the kernel of the full Hodge Laplacian `δd + dδ` on degree k,
/// found numerically from its generalized spectrum.
pub fn harmonic_dimension(ops: &DecOps, k: usize) -> Result<usize> {
    let n = ops.dim();
    let size = ops.count(k);
    let mut s = DMatrix::zeros(size, size);
    if k < n {
        s += ops.stiffness(k)?;
    }
    if k > 0 {
        s += ops.costiffness(k)?;
    }
    let (values, _) = generalized_eigen(&s, ops.mass(k)?)?;
    Ok(kernel_count(&values))
}

/// `M`-orthonormal basis of V, the complement of closed (k-1)-forms.
#[derive(Clone, Debug)]
pub struct VBasis {
    pub degree: usize,
    /// Basis of V as columns.
    pub vectors: DMatrix<f64>,
    /// `d` of the basis; `image^T M_k image = diag(eigenvalues)`.
    pub image: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl VBasis {
    pub fn new(ops: &DecOps, degree: usize) -> Result<Self> {
        let (values, vectors) = generalized_eigen(&ops.stiffness(degree)?, ops.mass(degree)?)?;
        let z = kernel_count(&values);
        let vectors = vectors.columns(z, values.len() - z).into_owned();
        let image = ops.derivative_matrix(degree)? * &vectors;
        Ok(VBasis {
            degree,
            eigenvalues: values.iter().skip(z).copied().collect(),
            vectors,
            image,
        })
    }

    pub fn dimension(&self) -> usize {
        self.vectors.ncols()
    }

    /// Smallest constant with `|α|₂ ≤ c |dα|₂` on V.
    pub fn poincare_constant(&self) -> f64 {
        1.0 / self
            .eigenvalues
            .first()
            .copied()
            .unwrap_or(f64::INFINITY)
            .sqrt()
    }
}

/// The split of k-forms used by the solver: W (coclosed) and V (for α).
pub struct HodgeSpaces {
    ops: Arc<DecOps>,
    degree: usize,
    spectrum: SpectralBasis,
    v: VBasis,
    w_basis: DMatrix<f64>,
    w_lambdas: Vec<f64>,
}

impl HodgeSpaces {
    pub fn new(ops: Arc<DecOps>, degree: usize) -> Result<Self> {
        let n = ops.dim();
        if degree == 0 || degree >= n {
            return Err(Error::DegreeOutOfRange {
                degree,
                min: 1,
                max: n - 1,
            });
        }
        let spectrum = eigensolve_w(&ops, degree, None)?;
        let v = VBasis::new(&ops, degree - 1)?;
        let (w_basis, w_lambdas) = spectrum.w_basis();
        Ok(HodgeSpaces {
            ops,
            degree,
            spectrum,
            v,
            w_basis,
            w_lambdas,
        })
    }

    pub fn ops(&self) -> &DecOps {
        &self.ops
    }

    pub fn ops_arc(&self) -> Arc<DecOps> {
        Arc::clone(&self.ops)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn spectrum(&self) -> &SpectralBasis {
        &self.spectrum
    }

    pub fn v(&self) -> &VBasis {
        &self.v
    }

    /// W basis (harmonics first) and matching eigenvalues (0 for harmonics).
    pub fn w_basis(&self) -> &DMatrix<f64> {
        &self.w_basis
    }

    pub fn w_lambdas(&self) -> &[f64] {
        &self.w_lambdas
    }

    pub fn w_dimension(&self) -> usize {
        self.w_lambdas.len()
    }

    pub fn mass(&self) -> &MassOperator {
        self.ops
            .mass(self.degree)
            .expect("mass assembled at construction")
    }

    /// W coordinates of a coclosed cochain; fails if the cochain leaves W.
    pub fn w_coefficients(&self, beta: &Cochain) -> Result<DVector<f64>> {
        self.ops.check(beta)?;
        if beta.degree() != self.degree {
            return Err(Error::DegreeMismatch {
                left: beta.degree(),
                right: self.degree,
            });
        }
        let mb = self.mass().apply(beta.values());
        let c = self.w_basis.tr_mul(&mb);
        let norm = beta.values().dot(&mb).max(0.0).sqrt();
        let resid = self.residual_norm(beta.values(), &c);
        if norm > 0.0 && resid > 1e-8 * norm {
            return Err(Error::NotCoclosed(resid / norm));
        }
        Ok(c)
    }

    fn residual_norm(&self, x: &DVector<f64>, c: &DVector<f64>) -> f64 {
        let r = x - &self.w_basis * c;
        r.dot(&self.mass().apply(&r)).max(0.0).sqrt()
    }

    pub fn from_w_coefficients(&self, c: &DVector<f64>) -> Cochain {
        Cochain::new(self.degree, &self.w_basis * c)
    }

    /// M-orthogonal projection onto W.
    pub fn project_w(&self, xi: &Cochain) -> Result<Cochain> {
        self.ops.check(xi)?;
        let c = self.w_basis.tr_mul(&self.mass().apply(xi.values()));
        Ok(self.from_w_coefficients(&c))
    }

    /// M-orthogonal projection of a (k-1)-cochain onto V.
    pub fn project_v(&self, alpha: &Cochain) -> Result<Cochain> {
        self.ops.check(alpha)?;
        if alpha.degree() != self.degree - 1 {
            return Err(Error::DegreeMismatch {
                left: alpha.degree(),
                right: self.degree - 1,
            });
        }
        let m = self.ops.mass(self.degree - 1)?;
        let a = self.v.vectors.tr_mul(&m.apply(alpha.values()));
        Ok(Cochain::new(self.degree - 1, &self.v.vectors * a))
    }

    /// `ξ = dα + δγ + h`, returned as (exact, coexact, harmonic) parts.
    pub fn hodge_decompose(&self, xi: &Cochain) -> Result<HodgeParts> {
        self.ops.check(xi)?;
        if xi.degree() != self.degree {
            return Err(Error::DegreeMismatch {
                left: xi.degree(),
                right: self.degree,
            });
        }
        if !self.spectrum.is_complete() {
            return Err(Error::Truncation(
                "hodge_decompose needs the full coexact basis".into(),
            ));
        }
        let mx = self.mass().apply(xi.values());
        // exact part: least squares over V, using image^T M image = diag(ν)
        let rhs = self.v.image.tr_mul(&mx);
        let a = DVector::from_iterator(
            rhs.len(),
            rhs.iter().zip(&self.v.eigenvalues).map(|(r, nu)| r / nu),
        );
        let alpha = Cochain::new(self.degree - 1, &self.v.vectors * &a);
        let exact = Cochain::new(self.degree, &self.v.image * &a);
        let h = self.spectrum.harmonics.tr_mul(&mx);
        let harmonic = Cochain::new(self.degree, &self.spectrum.harmonics * h);
        let e = self.spectrum.eigenvectors.tr_mul(&mx);
        let coexact = Cochain::new(self.degree, &self.spectrum.eigenvectors * e);
        Ok(HodgeParts {
            alpha,
            exact,
            coexact,
            harmonic,
        })
    }

    /// Spectral Sobolev norm `(Σ (λ_i^s + 1) β_i² + |β⁰|²)^{1/2}` of β ∈ W.
    pub fn sobolev_norm(&self, beta: &Cochain, s: f64) -> Result<f64> {
        self.ops.check(beta)?;
        let mb = self.mass().apply(beta.values());
        let c = self.w_basis.tr_mul(&mb);
        let norm = beta.values().dot(&mb).max(0.0).sqrt();
        let resid = self.residual_norm(beta.values(), &c);
        if norm > 0.0 && resid > 1e-8 * norm {
            return Err(Error::Truncation(format!(
                "relative residual {:.3e} outside the W basis",
                resid / norm
            )));
        }
        Ok(sobolev_from_coefficients(&self.w_lambdas, &c, s))
    }

    /// Empirical constant `c̃` with `|β|_p² ≤ c̃ ‖β‖²_{s,2}` on W.
    pub fn estimate_embedding(
        &self,
        p: f64,
        s: Option<f64>,
        random_probes: usize,
        seed: u64,
    ) -> Result<EmbeddingEstimate> {
        let n = self.ops.dim();
        check_exponent_window(p, n)?;
        let s = s.unwrap_or_else(|| default_sobolev_order(n, p));
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sobolev order {s} must lie in (0,1)"
            )));
        }
        let dim = self.w_dimension();
        let mut probes: Vec<DVector<f64>> = (0..dim)
            .map(|i| {
                let mut c = DVector::zeros(dim);
                c[i] = 1.0;
                c
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..random_probes {
            probes.push(DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)));
        }
        let max_ratio = self.max_embedding_ratio(&probes, p, s)?;
        Ok(EmbeddingEstimate {
            s,
            p,
            max_ratio,
            c_tilde: EMBEDDING_SAFETY * max_ratio,
        })
    }

    /// Largest `|β|_p² / ‖β‖²_{s,2}` over probes given in W coordinates.
    pub fn max_embedding_ratio(&self, probes: &[DVector<f64>], p: f64, s: f64) -> Result<f64> {
        let mut best: f64 = 0.0;
        for c in probes {
            let beta = self.from_w_coefficients(c);
            let lp = self.ops.lp_norm(&beta, p)?;
            let sob = sobolev_from_coefficients(&self.w_lambdas, c, s);
            if sob > 0.0 {
                best = best.max(lp * lp / (sob * sob));
            }
        }
        Ok(best)
    }
}

pub fn sobolev_from_coefficients(lambdas: &[f64], c: &DVector<f64>, s: f64) -> f64 {
    lambdas
        .iter()
        .zip(c.iter())
        .map(|(&l, &x)| {
            if l > 0.0 {
                (l.powf(s) + 1.0) * x * x
            } else {
                x * x
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// `clamp(n(1/2 - 1/p) + 0.1, 0.05, 0.95)`.
pub fn default_sobolev_order(n: usize, p: f64) -> f64 {
    (n as f64 * (0.5 - 1.0 / p) + 0.1).clamp(0.05, 0.95)
}

/// Enforces `p ∈ ]2, 2n/(n-2)[`; for n ≤ 2 only `p > 2` is required.
pub fn check_exponent_window(p: f64, n: usize) -> Result<()> {
    let upper = if n > 2 {
        2.0 * n as f64 / (n as f64 - 2.0)
    } else {
        f64::INFINITY
    };
    if n <= 2 {
        log::warn!("exponent window check skipped for n = {n}");
    }
    if !(p > 2.0 && p < upper) {
        return Err(Error::ExponentWindow { p, upper });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct HodgeParts {
    pub alpha: Cochain,
    pub exact: Cochain,
    pub coexact: Cochain,
    pub harmonic: Cochain,
}

impl HodgeParts {
    /// The W component `δγ + h`.
    pub fn beta(&self) -> Cochain {
        self.coexact.add(&self.harmonic).expect("same degree")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingEstimate {
    pub s: f64,
    pub p: f64,
    pub max_ratio: f64,
    pub c_tilde: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_flat_torus, build_sphere};
    use std::f64::consts::PI;

    fn spaces(c: crate::mesh::SimplicialComplex, k: usize) -> HodgeSpaces {
        HodgeSpaces::new(Arc::new(DecOps::new(Arc::new(c)).unwrap()), k).unwrap()
    }

    fn rand_cochain(k: usize, len: usize, seed: u64) -> Cochain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Cochain::new(k, DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn torus_zero_form_spectrum() {
        let ops = DecOps::new(Arc::new(build_flat_torus(2, 12).unwrap())).unwrap();
        let sb = eigensolve_w(&ops, 0, Some(8)).unwrap();
        assert_eq!(sb.harmonic_count(), 1);
        let lam = sb.eigenvalues[0];
        assert!((lam - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 0.05);
        let first = sb.clusters()[0];
        assert_eq!(first, (0, 4));
    }

    #[test]
    fn harmonic_counts_match_betti() {
        let ops = DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap();
        assert_eq!(eigensolve_w(&ops, 1, None).unwrap().harmonic_count(), 2);
        let s = DecOps::new(Arc::new(build_sphere(1).unwrap())).unwrap();
        assert_eq!(eigensolve_w(&s, 1, None).unwrap().harmonic_count(), 0);
        for k in 0..=2 {
            assert_eq!(harmonic_dimension(&ops, k).unwrap(), [1, 2, 1][k]);
        }
    }

    #[test]
    fn basis_diagnostics() {
        let sp = spaces(build_flat_torus(3, 2).unwrap(), 1);
        let d = sp.spectrum().diagnostics(sp.ops()).unwrap();
        assert!(d.orthonormality < 1e-8, "{d:?}");
        assert!(d.eigen_residual < 1e-8, "{d:?}");
        assert!(d.harmonic_residual < 1e-8, "{d:?}");
    }

    #[test]
    fn hodge_decomposition_is_orthogonal_and_complete() {
        let sp = spaces(build_flat_torus(2, 4).unwrap(), 1);
        let ops = sp.ops();
        let xi = rand_cochain(1, ops.count(1), 11);
        let parts = sp.hodge_decompose(&xi).unwrap();
        let recon = parts
            .exact
            .add(&parts.coexact)
            .unwrap()
            .add(&parts.harmonic)
            .unwrap();
        let err = ops.l2_norm(&xi.sub(&recon).unwrap()).unwrap();
        let norm = ops.l2_norm(&xi).unwrap();
        assert!(err <= 1e-10 * norm);
        for (a, b) in [
            (&parts.exact, &parts.coexact),
            (&parts.exact, &parts.harmonic),
            (&parts.coexact, &parts.harmonic),
        ] {
            assert!(ops.l2_inner(a, b).unwrap().abs() <= 1e-10 * norm * norm);
        }
        // exact input has no coexact or harmonic content
        let alpha = rand_cochain(0, ops.count(0), 12);
        let da = ops.exterior_derivative(&alpha).unwrap();
        let p = sp.hodge_decompose(&da).unwrap();
        let scale = ops.l2_norm(&da).unwrap();
        assert!(ops.l2_norm(&p.coexact).unwrap() <= 1e-10 * scale);
        assert!(ops.l2_norm(&p.harmonic).unwrap() <= 1e-10 * scale);
        let h = sp.spectrum().harmonic(0);
        let ph = sp.hodge_decompose(&h).unwrap();
        assert!(ops.l2_norm(&ph.exact).unwrap() <= 1e-10);
        assert!(ops.l2_norm(&ph.coexact).unwrap() <= 1e-10);
    }

    #[test]
    fn project_v_properties() {
        let sp = spaces(build_flat_torus(2, 4).unwrap(), 1);
        let ops = sp.ops();
        let a = rand_cochain(0, ops.count(0), 21);
        let pa = sp.project_v(&a).unwrap();
        let ppa = sp.project_v(&pa).unwrap();
        assert!(ops.l2_norm(&pa.sub(&ppa).unwrap()).unwrap() <= 1e-10);
        let d1 = ops.exterior_derivative(&a).unwrap();
        let d2 = ops.exterior_derivative(&pa).unwrap();
        assert!(ops.l2_norm(&d1.sub(&d2).unwrap()).unwrap() <= 1e-10);
        let constant = Cochain::new(0, DVector::from_element(ops.count(0), 2.0));
        assert!(ops.l2_norm(&sp.project_v(&constant).unwrap()).unwrap() <= 1e-10);
        // |α|₂ ≤ c |dα|₂ on V
        let c = sp.v().poincare_constant();
        assert!(ops.l2_norm(&pa).unwrap() <= c * ops.l2_norm(&d2).unwrap() * (1.0 + 1e-10));
    }

    #[test]
    fn sobolev_norm_special_orders() {
        let sp = spaces(build_flat_torus(2, 4).unwrap(), 1);
        let ops = sp.ops();
        let xi = rand_cochain(1, ops.count(1), 31);
        let beta = sp.hodge_decompose(&xi).unwrap().coexact;
        let db = ops.exterior_derivative(&beta).unwrap();
        let l2 = ops.l2_norm(&beta).unwrap();
        let dl2 = ops.l2_norm(&db).unwrap();
        let s1 = sp.sobolev_norm(&beta, 1.0).unwrap();
        assert!((s1 - (dl2 * dl2 + l2 * l2).sqrt()).abs() <= 1e-8 * s1);
        let s0 = sp.sobolev_norm(&beta, 0.0).unwrap();
        assert!((s0 - 2f64.sqrt() * l2).abs() <= 1e-8 * s0);
        // all eigenvalues exceed one here, so the norm grows with s
        assert!(sp.spectrum().eigenvalues[0] > 1.0);
        assert!(sp.sobolev_norm(&beta, 0.3).unwrap() <= sp.sobolev_norm(&beta, 0.6).unwrap());
    }

    #[test]
    fn embedding_estimate_properties() {
        let sp = spaces(build_flat_torus(3, 2).unwrap(), 1);
        assert!(sp.estimate_embedding(7.0, None, 0, 1).is_err());
        let e = sp.estimate_embedding(3.0, None, 4, 1).unwrap();
        assert!(e.c_tilde > 0.0 && e.c_tilde.is_finite());
        assert!((e.s - 0.6).abs() < 1e-12);
        let e2 = sp.estimate_embedding(3.0, Some(0.8), 4, 1).unwrap();
        assert!(e2.c_tilde <= e.c_tilde);
        let dim = sp.w_dimension();
        let probes: Vec<DVector<f64>> = (0..3)
            .map(|i| DVector::from_fn(dim, |r, _| ((r + i) % 5) as f64 - 2.0))
            .collect();
        let doubled: Vec<DVector<f64>> = probes.iter().map(|c| c * 2.0).collect();
        let a = sp.max_embedding_ratio(&probes, 3.0, 0.6).unwrap();
        let b = sp.max_embedding_ratio(&doubled, 3.0, 0.6).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn truncated_request_beyond_dimension_fails() {
        let ops = DecOps::new(Arc::new(build_flat_torus(2, 3).unwrap())).unwrap();
        assert!(matches!(
            eigensolve_w(&ops, 1, Some(10_000)),
            Err(Error::Truncation(_))
        ));
        assert!(eigensolve_w(&ops, 2, None).is_err());
    }
}
