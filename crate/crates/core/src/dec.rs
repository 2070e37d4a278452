//! Discrete k-forms with Whitney-form inner products.
//!
//! `d` is the transposed signed boundary matrix. The L² inner product of
//! degree k is the assembled Whitney Gram matrix `M_k`, and the
//! codifferential is the exact `M`-adjoint of `d`:
//! `δ = M_{k-1}^{-1} d^T M_k`, evaluated with a cached Cholesky factor.
//!
//! Nonlinear integrals use one density value per top simplex,
//! `dens_T(ξ) = ξ_T^T G_T ξ_T / vol_T`, so that `Σ_T dens_T vol_T = (ξ, ξ)₂`
//! holds by construction.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mesh::SimplicialComplex;
use crate::whitney::whitney_gram;

/// A discrete k-form: one coefficient per oriented k-simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochain {
    degree: usize,
    values: DVector<f64>,
}

impl Cochain {
    pub fn new(degree: usize, values: DVector<f64>) -> Self {
        Cochain { degree, values }
    }

    pub fn zeros(degree: usize, len: usize) -> Self {
        Cochain::new(degree, DVector::zeros(len))
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, a: f64) -> Cochain {
        Cochain::new(self.degree, &self.values * a)
    }

    pub fn add(&self, other: &Cochain) -> Result<Cochain> {
        check_same_degree(self, other)?;
        Ok(Cochain::new(self.degree, &self.values + &other.values))
    }

    pub fn sub(&self, other: &Cochain) -> Result<Cochain> {
        check_same_degree(self, other)?;
        Ok(Cochain::new(self.degree, &self.values - &other.values))
    }

    pub fn axpy(&self, a: f64, other: &Cochain) -> Result<Cochain> {
        check_same_degree(self, other)?;
        Ok(Cochain::new(self.degree, &self.values + &other.values * a))
    }
}

fn check_same_degree(a: &Cochain, b: &Cochain) -> Result<()> {
    if a.degree != b.degree {
        return Err(Error::DegreeMismatch {
            left: a.degree,
            right: b.degree,
        });
    }
    Ok(())
}

/// Assembled Whitney mass matrix with its Cholesky factor.
pub struct MassOperator {
    degree: usize,
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl MassOperator {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }
}

/// Per-top-simplex nonnegative densities `⟨ξ,ξ⟩_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseDensity {
    pub values: Vec<f64>,
}

impl PointwiseDensity {
    pub fn integrate(&self, volumes: &[f64]) -> f64 {
        self.values.iter().zip(volumes).map(|(d, v)| d * v).sum()
    }
}

/// Local scatter data of one top cell for one degree.
#[derive(Clone, Debug)]
pub struct LocalBlock {
    pub indices: Vec<usize>,
    pub sign: f64,
    pub gram: DMatrix<f64>,
}

/// Discrete exterior calculus operators on a fixed complex.
pub struct DecOps {
    complex: Arc<SimplicialComplex>,
    blocks: Vec<Vec<LocalBlock>>,
    derivative: Vec<DMatrix<f64>>,
    mass: Vec<OnceLock<std::result::Result<MassOperator, usize>>>,
}

impl DecOps {
    pub fn new(complex: Arc<SimplicialComplex>) -> Result<Self> {
        let n = complex.dim();
        let mut blocks: Vec<Vec<LocalBlock>> =
            vec![Vec::with_capacity(complex.cells().len()); n + 1];
        for (ci, cell) in complex.cells().iter().enumerate() {
            for (k, per_degree) in blocks.iter_mut().enumerate() {
                let gram = whitney_gram(&cell.coords, k).ok_or_else(|| {
                    Error::DegenerateMesh(format!("top cell {ci} has a singular metric"))
                })?;
                let sign = if k == n { cell.orientation as f64 } else { 1.0 };
                per_degree.push(LocalBlock {
                    indices: cell.faces[k].clone(),
                    sign,
                    gram,
                });
            }
        }
        let derivative = (1..=n)
            .map(|k| complex.boundary_matrix(k).map(|b| b.to_dense().transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DecOps {
            mass: (0..=n).map(|_| OnceLock::new()).collect(),
            complex,
            blocks,
            derivative,
        })
    }

    pub fn complex(&self) -> &SimplicialComplex {
        &self.complex
    }

    pub fn complex_arc(&self) -> Arc<SimplicialComplex> {
        Arc::clone(&self.complex)
    }

    pub fn dim(&self) -> usize {
        self.complex.dim()
    }

    pub fn count(&self, k: usize) -> usize {
        self.complex.count(k)
    }

    pub fn blocks(&self, k: usize) -> &[LocalBlock] {
        &self.blocks[k]
    }

    pub fn cell_volumes(&self) -> &[f64] {
        self.complex.volumes(self.dim())
    }

    /// Dense matrix of `d` from degree k to k+1.
    pub fn derivative_matrix(&self, k: usize) -> Result<&DMatrix<f64>> {
        self.derivative.get(k).ok_or(Error::DegreeOutOfRange {
            degree: k,
            min: 0,
            max: self.dim().saturating_sub(1),
        })
    }

    pub fn mass(&self, k: usize) -> Result<&MassOperator> {
        if k > self.dim() {
            return Err(Error::DegreeOutOfRange {
                degree: k,
                min: 0,
                max: self.dim(),
            });
        }
        self.mass[k]
            .get_or_init(|| self.assemble_mass(k))
            .as_ref()
            .map_err(|&k| Error::SingularMass(k))
    }

    fn assemble_mass(&self, k: usize) -> std::result::Result<MassOperator, usize> {
        let size = self.count(k);
        let mut m = DMatrix::zeros(size, size);
        for block in &self.blocks[k] {
            for (a, &i) in block.indices.iter().enumerate() {
                for (b, &j) in block.indices.iter().enumerate() {
                    m[(i, j)] += block.gram[(a, b)];
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        let factor = Cholesky::new(sym.clone()).ok_or(k)?;
        Ok(MassOperator {
            degree: k,
            matrix: sym,
            factor,
        })
    }

    pub fn check(&self, xi: &Cochain) -> Result<()> {
        if xi.degree() > self.dim() {
            return Err(Error::DegreeOutOfRange {
                degree: xi.degree(),
                min: 0,
                max: self.dim(),
            });
        }
        let expected = self.count(xi.degree());
        if xi.len() != expected {
            return Err(Error::LengthMismatch {
                degree: xi.degree(),
                expected,
                got: xi.len(),
            });
        }
        Ok(())
    }

    pub fn zeros(&self, k: usize) -> Cochain {
        Cochain::zeros(k, self.count(k))
    }

    pub fn exterior_derivative(&self, xi: &Cochain) -> Result<Cochain> {
        self.check(xi)?;
        let k = xi.degree();
        if k >= self.dim() {
            return Err(Error::DegreeOutOfRange {
                degree: k,
                min: 0,
                max: self.dim() - 1,
            });
        }
        let b = self.complex.boundary_matrix(k + 1)?;
        Ok(Cochain::new(k + 1, b.transpose_apply(xi.values())))
    }

    pub fn codifferential(&self, xi: &Cochain) -> Result<Cochain> {
        self.check(xi)?;
        let k = xi.degree();
        if k == 0 {
            return Err(Error::DegreeOutOfRange {
                degree: 0,
                min: 1,
                max: self.dim(),
            });
        }
        let mk = self.mass(k)?;
        let mk1 = self.mass(k - 1)?;
        let rhs = self.derivative[k - 1].tr_mul(&mk.apply(xi.values()));
        Ok(Cochain::new(k - 1, mk1.solve(&rhs)))
    }

    pub fn l2_inner(&self, xi: &Cochain, eta: &Cochain) -> Result<f64> {
        check_same_degree(xi, eta)?;
        self.check(xi)?;
        self.check(eta)?;
        let m = self.mass(xi.degree())?;
        Ok(xi.values().dot(&m.apply(eta.values())))
    }

    pub fn l2_norm(&self, xi: &Cochain) -> Result<f64> {
        Ok(self.l2_inner(xi, xi)?.max(0.0).sqrt())
    }

    /// Local coefficients of `values` (degree k) on cell `block`.
    pub fn gather(block: &LocalBlock, values: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            block.indices.len(),
            block.indices.iter().map(|&i| block.sign * values[i]),
        )
    }

    pub fn density(&self, xi: &Cochain) -> Result<PointwiseDensity> {
        self.check(xi)?;
        let vols = self.cell_volumes();
        let values = self.blocks[xi.degree()]
            .iter()
            .zip(vols)
            .map(|(block, &vol)| {
                let local = Self::gather(block, xi.values());
                (local.dot(&(&block.gram * &local)) / vol).max(0.0)
            })
            .collect();
        Ok(PointwiseDensity { values })
    }

    pub fn lp_norm(&self, xi: &Cochain, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lp_norm needs q >= 1, got {q}"
            )));
        }
        let dens = self.density(xi)?;
        let sum: f64 = dens
            .values
            .iter()
            .zip(self.cell_volumes())
            .map(|(&d, &v)| d.powf(q / 2.0) * v)
            .sum();
        Ok(sum.powf(1.0 / q))
    }

    pub fn h1_norm(&self, xi: &Cochain) -> Result<f64> {
        self.check(xi)?;
        let k = xi.degree();
        if k == 0 || k >= self.dim() {
            return Err(Error::DegreeOutOfRange {
                degree: k,
                min: 1,
                max: self.dim() - 1,
            });
        }
        let dxi = self.exterior_derivative(xi)?;
        let delta = self.codifferential(xi)?;
        let total =
            self.l2_inner(&dxi, &dxi)? + self.l2_inner(&delta, &delta)? + self.l2_inner(xi, xi)?;
        Ok(total.max(0.0).sqrt())
    }

    /// Stiffness `d_k^T M_{k+1} d_k` on degree k.
    pub fn stiffness(&self, k: usize) -> Result<DMatrix<f64>> {
        let d = self.derivative_matrix(k)?;
        let m = self.mass(k + 1)?;
        let md = m.matrix() * d;
        let s = d.tr_mul(&md);
        Ok((&s + s.transpose()) * 0.5)
    }

    /// Co-stiffness `M_k d_{k-1} M_{k-1}^{-1} d_{k-1}^T M_k` on degree k.
    pub fn costiffness(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(Error::DegreeOutOfRange {
                degree: 0,
                min: 1,
                max: self.dim(),
            });
        }
        let d = &self.derivative[k - 1];
        let mk = self.mass(k)?.matrix();
        let b = mk * d;
        let x = self.mass(k - 1)?.factor().solve(&b.transpose());
        let s = &b * x;
        Ok((&s + s.transpose()) * 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_flat_torus, build_sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(ops: &DecOps, k: usize, rng: &mut ChaCha8Rng) -> Cochain {
        Cochain::new(
            k,
            DVector::from_fn(ops.count(k), |_, _| rng.gen_range(-1.0..1.0)),
        )
    }

    fn torus2(r: usize) -> DecOps {
        DecOps::new(Arc::new(build_flat_torus(2, r).unwrap())).unwrap()
    }

    #[test]
    fn d_squared_is_zero() {
        let ops = torus2(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&ops, 0, &mut rng);
        let dda = ops
            .exterior_derivative(&ops.exterior_derivative(&a).unwrap())
            .unwrap();
        assert!(dda.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_function_has_zero_derivative_and_unit_mass() {
        let ops = torus2(4);
        let c = Cochain::new(0, DVector::from_element(ops.count(0), 3.0));
        assert!(ops
            .exterior_derivative(&c)
            .unwrap()
            .values()
            .iter()
            .all(|&x| x == 0.0));
        assert!((ops.l2_inner(&c, &c).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn closed_dx_form() {
        // edge values are x-displacements; closed exactly by telescoping
        let t = Arc::new(build_flat_torus(2, 5).unwrap());
        let ops = DecOps::new(Arc::clone(&t)).unwrap();
        let xi = dx_cochain(&t, 0);
        let dxi = ops.exterior_derivative(&xi).unwrap();
        assert!(dxi.values().amax() < 1e-15);
        // constant forms are also coclosed on the flat torus
        let delta = ops.codifferential(&xi).unwrap();
        assert!(delta.values().amax() < 1e-10);
        assert!((ops.l2_inner(&xi, &xi).unwrap() - 1.0).abs() < 1e-12);
    }

    pub(crate) fn dx_cochain(t: &SimplicialComplex, axis: usize) -> Cochain {
        let p = t.period().unwrap_or(0.0);
        let vals: Vec<f64> = (0..t.count(1))
            .map(|e| {
                let labels = t.simplex_labels(1, e);
                let x = |i: usize| {
                    let l = &labels[i];
                    t.vertices()[l.vertex][axis]
                        + l.shift.get(axis).copied().unwrap_or(0) as f64 * p
                };
                x(1) - x(0)
            })
            .collect();
        Cochain::new(1, DVector::from_vec(vals))
    }

    #[test]
    fn adjointness_and_delta_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for c in [
            build_flat_torus(2, 4).unwrap(),
            build_flat_torus(3, 2).unwrap(),
            build_sphere(1).unwrap(),
        ] {
            let ops = DecOps::new(Arc::new(c)).unwrap();
            for k in 1..=ops.dim() {
                for _ in 0..5 {
                    let a = random(&ops, k - 1, &mut rng);
                    let x = random(&ops, k, &mut rng);
                    let lhs = ops
                        .l2_inner(&ops.exterior_derivative(&a).unwrap(), &x)
                        .unwrap();
                    let rhs = ops.l2_inner(&a, &ops.codifferential(&x).unwrap()).unwrap();
                    let scale = ops.h1_scale(&a) * ops.l2_norm(&x).unwrap();
                    assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
                }
            }
        }
    }

    impl DecOps {
        fn h1_scale(&self, a: &Cochain) -> f64 {
            let d = self.exterior_derivative(a).unwrap();
            (self.l2_norm(a).unwrap().powi(2) + self.l2_norm(&d).unwrap().powi(2)).sqrt()
        }
    }

    #[test]
    fn density_identities() {
        let ops = torus2(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..=2 {
            let x = random(&ops, k, &mut rng);
            let dens = ops.density(&x).unwrap();
            let integral = dens.integrate(ops.cell_volumes());
            let l2 = ops.l2_inner(&x, &x).unwrap();
            assert!((integral - l2).abs() <= 1e-12 * l2);
            let dens2 = ops.density(&x.scale(2.0)).unwrap();
            for (a, b) in dens.values.iter().zip(&dens2.values) {
                assert!((4.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            let n2 = ops.lp_norm(&x, 2.0).unwrap();
            assert!((n2 * n2 - l2).abs() <= 1e-12 * l2);
            assert!(ops.lp_norm(&x, 3.0).unwrap() >= n2 * (1.0 - 1e-12));
        }
        let z = ops.zeros(1);
        assert!(ops.density(&z).unwrap().values.iter().all(|&d| d == 0.0));
        assert_eq!(ops.lp_norm(&z, 3.0).unwrap(), 0.0);
        assert!(ops.lp_norm(&z, 0.5).is_err());
    }

    #[test]
    fn h1_norm_bounds() {
        let t = Arc::new(build_flat_torus(2, 4).unwrap());
        let ops = DecOps::new(Arc::clone(&t)).unwrap();
        let h = dx_cochain(&t, 1);
        let l2 = ops.l2_norm(&h).unwrap();
        assert!((ops.h1_norm(&h).unwrap() - l2).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&ops, 1, &mut rng);
        assert!(ops.h1_norm(&x).unwrap() >= ops.l2_norm(&x).unwrap());
        assert!(ops.h1_norm(&ops.zeros(1)).unwrap() == 0.0);
        assert!(ops.h1_norm(&ops.zeros(0)).is_err());
    }

    #[test]
    fn degree_errors() {
        let ops = torus2(3);
        assert!(ops.exterior_derivative(&ops.zeros(2)).is_err());
        assert!(ops.codifferential(&ops.zeros(0)).is_err());
        assert!(matches!(
            ops.l2_inner(&ops.zeros(0), &ops.zeros(1)),
            Err(Error::DegreeMismatch { .. })
        ));
        assert!(matches!(
            ops.l2_inner(&Cochain::zeros(1, 3), &Cochain::zeros(1, 3)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mass_symmetry() {
        let ops = DecOps::new(Arc::new(build_sphere(1).unwrap())).unwrap();
        for k in 0..=2 {
            let m = ops.mass(k).unwrap().matrix();
            let asym = (m - m.transpose()).amax();
            assert!(asym <= 1e-14 * m.amax());
        }
    }
}
