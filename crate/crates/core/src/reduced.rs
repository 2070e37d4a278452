//! The reduced functional `Ĵ(β) = |dβ|₂² − F(β + dΦ(β))` on W.
//!
//! β is handled through its coordinates `c` in the M-orthonormal W basis
//! `B` (harmonics first), so `|dβ|₂² = Σ λ_i c_i²` and the gradient vector
//! in these coordinates is already the M-Riesz representative.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dec::{Cochain, DecOps};
use crate::error::{Error, Result};
use crate::inner::{second_variation, InnerProblem, InnerResult, InnerSolveConfig};
use crate::nonlinearity::NonlinearityModel;
use crate::spectral::HodgeSpaces;

#[derive(Clone, Debug)]
pub struct ReducedEvaluation {
    pub coefficients: DVector<f64>,
    pub beta: Cochain,
    pub inner: InnerResult,
    /// `|dβ|₂²`
    pub dirichlet: f64,
    pub value: f64,
    /// Riesz gradient in W coordinates, `l_part + mass_part + k_part`.
    pub gradient: DVector<f64>,
    pub l_part: DVector<f64>,
    pub mass_part: DVector<f64>,
    pub k_part: DVector<f64>,
}

impl ReducedEvaluation {
    /// `β + dΦ(β)`.
    pub fn xi(&self) -> &Cochain {
        &self.inner.xi
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.norm()
    }
}

pub struct ReducedProblem<'a> {
    spaces: &'a HodgeSpaces,
    model: NonlinearityModel,
    inner: InnerSolveConfig,
}

impl<'a> ReducedProblem<'a> {
    pub fn new(spaces: &'a HodgeSpaces, model: NonlinearityModel, inner: InnerSolveConfig) -> Self {
        ReducedProblem {
            spaces,
            model,
            inner,
        }
    }

    pub fn spaces(&self) -> &HodgeSpaces {
        self.spaces
    }

    pub fn model(&self) -> &NonlinearityModel {
        &self.model
    }

    pub fn inner_config(&self) -> &InnerSolveConfig {
        &self.inner
    }

    pub fn dimension(&self) -> usize {
        self.spaces.w_dimension()
    }

    pub fn lambdas(&self) -> &[f64] {
        self.spaces.w_lambdas()
    }

    pub fn j_hat(&self, beta: &Cochain) -> Result<ReducedEvaluation> {
        let c = self.spaces.w_coefficients(beta)?;
        self.evaluate(&c)
    }

    /// Riesz representative of `Ĵ'(β)` as a cochain in W.
    pub fn j_hat_gradient(&self, beta: &Cochain) -> Result<Cochain> {
        let e = self.j_hat(beta)?;
        Ok(self.spaces.from_w_coefficients(&e.gradient))
    }

    pub fn evaluate(&self, c: &DVector<f64>) -> Result<ReducedEvaluation> {
        if c.len() != self.dimension() {
            return Err(Error::LengthMismatch {
                degree: self.spaces.degree(),
                expected: self.dimension(),
                got: c.len(),
            });
        }
        let ops = self.spaces.ops();
        let beta = self.spaces.from_w_coefficients(c);
        let inner = InnerProblem::new(self.spaces, &self.model).phi(&beta, &self.inner)?;
        let lambdas = self.lambdas();
        let dirichlet: f64 = c.iter().zip(lambdas).map(|(x, l)| l * x * x).sum();
        let value = dirichlet - inner.value;
        let basis = self.spaces.w_basis();
        let eps = self.model.shift();
        let r = self.model.weak_rhs_vector(ops, &inner.xi)?;
        let m_xi = self.spaces.mass().apply(inner.xi.values());
        let l_part =
            DVector::from_iterator(c.len(), c.iter().zip(lambdas).map(|(x, l)| 2.0 * l * x));
        let mass_part = basis.tr_mul(&m_xi) * (-2.0 * eps);
        let k_part = basis.tr_mul(&(&r - &m_xi * eps)) * -2.0;
        let gradient = &l_part + &mass_part + &k_part;
        Ok(ReducedEvaluation {
            coefficients: c.clone(),
            beta,
            inner,
            dirichlet,
            value,
            gradient,
            l_part,
            mass_part,
            k_part,
        })
    }

    /// Exact second derivative of `Ĵ` in W coordinates, including the
    /// response of Φ (Schur complement over V).
    pub fn hessian(&self, eval: &ReducedEvaluation) -> Result<DMatrix<f64>> {
        self.restricted_hessian(eval, None)
    }

    /// Hessian restricted to the W coordinates in `columns` (all if `None`).
    pub fn restricted_hessian(
        &self,
        eval: &ReducedEvaluation,
        columns: Option<&[usize]>,
    ) -> Result<DMatrix<f64>> {
        let ops = self.spaces.ops();
        let j = second_variation(&self.model, ops, &eval.inner.xi)?;
        let full = self.spaces.w_basis();
        let basis = match columns {
            Some(cols) => full.select_columns(cols),
            None => full.clone(),
        };
        let lambdas: Vec<f64> = match columns {
            Some(cols) => cols.iter().map(|&i| self.lambdas()[i]).collect(),
            None => self.lambdas().to_vec(),
        };
        let d = &self.spaces.v().image;
        let jb = &j * &basis;
        let jd = &j * d;
        let djd = d.tr_mul(&jd);
        let djd = (&djd + djd.transpose()) * 0.5;
        let chol = djd
            .cholesky()
            .ok_or_else(|| Error::Stagnation("inner Hessian lost definiteness".into()))?;
        let djb = d.tr_mul(&jb);
        let x = chol.solve(&djb);
        let mut h = (basis.tr_mul(&jb) - djb.tr_mul(&x)) * -2.0;
        for (i, l) in lambdas.iter().enumerate() {
            h[(i, i)] += 2.0 * l;
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

/// Componentwise residual of the discrete weak equation
/// `(dξ, dη)₂ = Σ_T f'(dens_T) ξ_T·G_T η_T` over unit basis cochains η,
/// normalized by the larger side. `probes = None` uses every basis cochain.
pub fn weak_residual(
    model: &NonlinearityModel,
    ops: &DecOps,
    xi: &Cochain,
    probes: Option<usize>,
    seed: u64,
) -> Result<f64> {
    ops.check(xi)?;
    let k = xi.degree();
    let lhs = if k < ops.dim() {
        let dxi = ops.exterior_derivative(xi)?;
        let m = ops.mass(k + 1)?;
        ops.derivative_matrix(k)?.tr_mul(&m.apply(dxi.values()))
    } else {
        DVector::zeros(xi.len())
    };
    let rhs = model.weak_rhs_vector(ops, xi)?;
    let scale = lhs.amax().max(rhs.amax());
    if scale == 0.0 {
        return Ok(0.0);
    }
    let diff = &lhs - &rhs;
    let worst = match probes {
        Some(n) if n < xi.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, xi.len(), n)
                .iter()
                .map(|i| diff[i].abs())
                .fold(0.0, f64::max)
        }
        _ => diff.amax(),
    };
    Ok(worst / scale)
}
