//! The inner problem: `Φ(β) = argmin_{α ∈ V} F(β + dα)`.
//!
//! α is represented by its coordinates `a` in the V basis `Y`, so `α = Y a`
//! lies in V by construction and `dα = D a` with `D = dY`. Because
//! `DᵀMD = diag(ν)`, gradients are measured in the dual norm
//! `(Σ g_i² / ν_i)^{1/2}`, i.e. against `|dα|₂`.

use nalgebra::{DMatrix, DVector};

use crate::dec::{Cochain, DecOps};
use crate::error::{Error, Result};
use crate::nonlinearity::{MassModel, NonlinearityModel};
use crate::spectral::HodgeSpaces;

#[derive(Clone, Debug)]
pub struct InnerSolveConfig {
    /// Absolute gradient tolerance in the dual norm.
    pub tolerance: f64,
    /// Added to `tolerance`, relative to the size of `f'(⟨ξ,ξ⟩)ξ`.
    pub relative_tolerance: f64,
    pub max_steps: usize,
    pub backtrack: f64,
    pub max_trials: usize,
    pub trace: bool,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        InnerSolveConfig {
            tolerance: 1e-10,
            relative_tolerance: 1e-12,
            max_steps: 60,
            backtrack: 0.5,
            max_trials: 40,
            trace: false,
        }
    }
}

impl InnerSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.relative_tolerance >= 0.0 && self.max_steps >= 1) {
            return Err(Error::Config(
                "inner tolerances must be positive and max_steps >= 1".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0 && self.max_trials >= 1) {
            return Err(Error::Config("backtrack factor must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InnerTraceRow {
    pub iteration: usize,
    pub value: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    /// `Φ(β)` as a (k-1)-cochain.
    pub alpha: Cochain,
    /// Coordinates of α in the V basis.
    pub coefficients: DVector<f64>,
    /// `β + dΦ(β)`.
    pub xi: Cochain,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub tolerance: f64,
    /// `F_β(Φ(β)) = F(β + dΦ(β))`.
    pub value: f64,
    pub trace: Vec<InnerTraceRow>,
}

/// `∂r/∂ξ` for `r = weak_rhs_vector`, i.e. half the Hessian of `F` at ξ:
/// `Σ_T f'(dens) G_T + 2 f''(dens)/vol (G_T ξ_T)(G_T ξ_T)ᵀ`.
pub fn second_variation(
    model: &NonlinearityModel,
    ops: &DecOps,
    xi: &Cochain,
) -> Result<DMatrix<f64>> {
    ops.check(xi)?;
    let k = xi.degree();
    let size = xi.len();
    let mut h = DMatrix::zeros(size, size);
    for (block, &vol) in ops.blocks(k).iter().zip(ops.cell_volumes()) {
        let x = DecOps::gather(block, xi.values());
        let g = &block.gram * &x;
        let dens = (x.dot(&g) / vol).max(0.0);
        let w1 = model.df(dens);
        let w2 = if dens > 0.0 {
            2.0 * model.d2f(dens) / vol
        } else {
            0.0
        };
        for (a, &i) in block.indices.iter().enumerate() {
            for (b, &j) in block.indices.iter().enumerate() {
                h[(i, j)] += w1 * block.gram[(a, b)] + w2 * g[a] * g[b];
            }
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Size of `f'(⟨ξ,ξ⟩)ξ` in L², used to scale tolerances.
pub fn force_scale(model: &NonlinearityModel, ops: &DecOps, xi: &Cochain) -> Result<f64> {
    let dens = ops.density(xi)?;
    Ok(dens
        .values
        .iter()
        .zip(ops.cell_volumes())
        .map(|(&d, &v)| model.df(d).powi(2) * d * v)
        .sum::<f64>()
        .sqrt())
}

/// Inner problem bound to one Hodge setting.
pub struct InnerProblem<'a> {
    spaces: &'a HodgeSpaces,
    model: &'a NonlinearityModel,
}

impl<'a> InnerProblem<'a> {
    pub fn new(spaces: &'a HodgeSpaces, model: &'a NonlinearityModel) -> Self {
        InnerProblem { spaces, model }
    }

    fn ops(&self) -> &DecOps {
        self.spaces.ops()
    }

    fn check_pair(&self, alpha: &Cochain, beta: &Cochain) -> Result<()> {
        let k = self.spaces.degree();
        self.ops().check(alpha)?;
        self.ops().check(beta)?;
        if alpha.degree() + 1 != k || beta.degree() != k {
            return Err(Error::DegreeMismatch {
                left: alpha.degree() + 1,
                right: beta.degree(),
            });
        }
        Ok(())
    }

    fn xi_of(&self, beta: &DVector<f64>, a: &DVector<f64>) -> Cochain {
        Cochain::new(self.spaces.degree(), beta + &self.spaces.v().image * a)
    }

    fn dual_norm(&self, g: &DVector<f64>) -> f64 {
        g.iter()
            .zip(&self.spaces.v().eigenvalues)
            .map(|(x, nu)| x * x / nu)
            .sum::<f64>()
            .sqrt()
    }

    /// Gradient of `α ↦ F(dα + β)` in V coordinates: `ᾱ = Y c ↦ c · g`.
    pub fn inner_gradient(&self, alpha: &Cochain, beta: &Cochain) -> Result<DVector<f64>> {
        self.check_pair(alpha, beta)?;
        let da = self.ops().exterior_derivative(alpha)?;
        let xi = beta.add(&da)?;
        let r = self.model.weak_rhs_vector(self.ops(), &xi)?;
        Ok(self.spaces.v().image.tr_mul(&r) * 2.0)
    }

    /// Second derivative of `α ↦ F(dα + β)` applied to `direction`, in V coordinates.
    pub fn inner_hessian_apply(
        &self,
        alpha: &Cochain,
        beta: &Cochain,
        direction: &Cochain,
    ) -> Result<DVector<f64>> {
        self.check_pair(alpha, beta)?;
        self.check_pair(direction, beta)?;
        let xi = beta.add(&self.ops().exterior_derivative(alpha)?)?;
        let h = second_variation(self.model, self.ops(), &xi)?;
        let v = self.ops().exterior_derivative(direction)?;
        Ok(self.spaces.v().image.tr_mul(&(h * v.values())) * 2.0)
    }

    /// Quadratic form of the second derivative along `direction`.
    pub fn inner_hessian_form(
        &self,
        alpha: &Cochain,
        beta: &Cochain,
        direction: &Cochain,
    ) -> Result<f64> {
        let hv = self.inner_hessian_apply(alpha, beta, direction)?;
        let m = self.ops().mass(self.spaces.degree() - 1)?;
        let c = self.spaces.v().vectors.tr_mul(&m.apply(direction.values()));
        Ok(c.dot(&hv))
    }

    /// Minimizes `F(β + dα)` over V by damped Newton from `α = 0`.
    pub fn phi(&self, beta: &Cochain, config: &InnerSolveConfig) -> Result<InnerResult> {
        if self.model.mass() == MassModel::ZeroMass {
            return Err(Error::ZeroMass);
        }
        config.validate()?;
        self.ops().check(beta)?;
        if beta.degree() != self.spaces.degree() {
            return Err(Error::DegreeMismatch {
                left: beta.degree(),
                right: self.spaces.degree(),
            });
        }
        let ops = self.ops();
        let d = &self.spaces.v().image;
        let dim = self.spaces.v().dimension();
        let b = beta.values();
        let mut a = DVector::zeros(dim);
        let mut xi = self.xi_of(b, &a);
        let mut value = self.model.functional(ops, &xi)?;
        let mut g = d.tr_mul(&self.model.weak_rhs_vector(ops, &xi)?) * 2.0;
        let mut gnorm = self.dual_norm(&g);
        let tol = config.tolerance + config.relative_tolerance * force_scale(self.model, ops, &xi)?;
        let mut trace = Vec::new();
        let mut iterations = 0;
        loop {
            if config.trace {
                trace.push(InnerTraceRow {
                    iteration: iterations,
                    value,
                    gradient_norm: gnorm,
                });
            }
            if gnorm <= tol {
                break;
            }
            if iterations >= config.max_steps {
                return Err(Error::InnerMaxIterations {
                    iterations,
                    gradient_norm: gnorm,
                });
            }
            iterations += 1;
            let h = second_variation(self.model, ops, &xi)?;
            let ha = d.tr_mul(&(h * d)) * 2.0;
            let ha = (&ha + ha.transpose()) * 0.5;
            let chol = ha.cholesky().ok_or_else(|| Error::LineSearch {
                iteration: iterations,
                reason: "inner Hessian is not positive definite".into(),
            })?;
            let step = -chol.solve(&g);
            let slope = g.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..config.max_trials {
                let trial = &a + &step * t;
                let xt = self.xi_of(b, &trial);
                let vt = self.model.functional(ops, &xt)?;
                let rt = self.model.weak_rhs_vector(ops, &xt)?;
                let gt = d.tr_mul(&rt) * 2.0;
                let gn = self.dual_norm(&gt);
                let armijo = vt <= value + 1e-4 * t * slope;
                // below round-off the value cannot certify descent; the gradient can
                let flat = (vt - value).abs() <= 1e-13 * value.abs().max(1e-300) && gn < gnorm;
                if armijo || flat {
                    a = trial;
                    xi = xt;
                    value = vt;
                    g = gt;
                    gnorm = gn;
                    accepted = true;
                    break;
                }
                t *= config.backtrack;
            }
            if !accepted {
                if gnorm <= 1e3 * tol {
                    log::debug!("inner solve stopped at round-off floor, gradient {gnorm:.3e}");
                    break;
                }
                return Err(Error::LineSearch {
                    iteration: iterations,
                    reason: format!(
                        "no decrease after {} trials (gradient {gnorm:.3e})",
                        config.max_trials
                    ),
                });
            }
        }
        let alpha = Cochain::new(self.spaces.degree() - 1, &self.spaces.v().vectors * &a);
        Ok(InnerResult {
            alpha,
            coefficients: a,
            xi,
            iterations,
            gradient_norm: gnorm,
            tolerance: tol,
            value,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_flat_torus, build_sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn spaces(c: crate::mesh::SimplicialComplex) -> HodgeSpaces {
        HodgeSpaces::new(Arc::new(DecOps::new(Arc::new(c)).unwrap()), 1).unwrap()
    }

    fn random_w(sp: &HodgeSpaces, scale: f64, seed: u64) -> Cochain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(sp.w_dimension(), |_, _| rng.gen_range(-1.0..1.0) * scale);
        sp.from_w_coefficients(&c)
    }

    fn random_v(sp: &HodgeSpaces, seed: u64) -> Cochain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(sp.v().dimension(), |_, _| rng.gen_range(-1.0..1.0));
        Cochain::new(0, &sp.v().vectors * c)
    }

    #[test]
    fn linear_model_gives_zero_minimizer() {
        let sp = spaces(build_flat_torus(3, 2).unwrap());
        let lin = NonlinearityModel::linear();
        let prob = InnerProblem::new(&sp, &lin);
        for s in 0..5 {
            let beta = random_w(&sp, 3.0, s);
            let res = prob.phi(&beta, &InnerSolveConfig::default()).unwrap();
            assert!(sp.ops().l2_norm(&res.alpha).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn zero_beta_and_zero_mass() {
        let sp = spaces(build_flat_torus(2, 4).unwrap());
        let m = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
        let res = InnerProblem::new(&sp, &m)
            .phi(&sp.ops().zeros(1), &InnerSolveConfig::default())
            .unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.alpha.values().amax(), 0.0);
        let z = NonlinearityModel::power(3.0).unwrap();
        assert!(matches!(
            InnerProblem::new(&sp, &z).phi(&sp.ops().zeros(1), &InnerSolveConfig::default()),
            Err(Error::ZeroMass)
        ));
    }

    #[test]
    fn oddness_and_first_order_condition() {
        let sp = spaces(build_flat_torus(2, 4).unwrap());
        let m = NonlinearityModel::power(3.0).unwrap().perturb(0.2).unwrap();
        let prob = InnerProblem::new(&sp, &m);
        let cfg = InnerSolveConfig::default();
        let beta = random_w(&sp, 4.0, 3);
        let plus = prob.phi(&beta, &cfg).unwrap();
        let minus = prob.phi(&beta.scale(-1.0), &cfg).unwrap();
        assert!(plus.gradient_norm <= plus.tolerance || plus.gradient_norm <= 1e3 * plus.tolerance);
        let sum = plus.alpha.add(&minus.alpha).unwrap();
        let da = sp.ops().exterior_derivative(&sum).unwrap();
        assert!(sp.ops().l2_norm(&da).unwrap() <= 2.0 * plus.tolerance);
        assert!(sp.ops().l2_norm(&plus.alpha).unwrap() > 1e-6);
        // minimality against random perturbations
        for s in 0..5 {
            let dir = random_v(&sp, 100 + s);
            for tau in [1e-2, -1e-2, 1e-1, -1e-1] {
                let trial = plus.alpha.axpy(tau, &dir).unwrap();
                let xi = beta
                    .add(&sp.ops().exterior_derivative(&trial).unwrap())
                    .unwrap();
                assert!(m.functional(sp.ops(), &xi).unwrap() >= plus.value * (1.0 - 1e-14));
            }
        }
        // the inner minimum never exceeds F(β)
        assert!(plus.value <= m.functional(sp.ops(), &beta).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sp = spaces(build_sphere(1).unwrap());
        let m = NonlinearityModel::shifted_power(0.5, 3.0).unwrap();
        let prob = InnerProblem::new(&sp, &m);
        let beta = random_w(&sp, 2.0, 5);
        let alpha = random_v(&sp, 6);
        let g = prob.inner_gradient(&alpha, &beta).unwrap();
        let mass0 = sp.ops().mass(0).unwrap();
        for s in 0..10 {
            let dir = random_v(&sp, 200 + s);
            let c = sp.v().vectors.tr_mul(&mass0.apply(dir.values()));
            let h = 1e-5 * (1.0 + sp.ops().l2_norm(&alpha).unwrap());
            let eval = |t: f64| {
                let a = alpha.axpy(t, &dir).unwrap();
                m.functional(
                    sp.ops(),
                    &beta
                        .add(&sp.ops().exterior_derivative(&a).unwrap())
                        .unwrap(),
                )
                .unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = c.dot(&g);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} {an}");
        }
        // adding a closed form to α changes nothing
        let constant = Cochain::new(0, DVector::from_element(sp.ops().count(0), 5.0));
        let g2 = prob
            .inner_gradient(&alpha.add(&constant).unwrap(), &beta)
            .unwrap();
        assert!((&g - &g2).amax() <= 1e-12 * g.amax().max(1.0));
        let zero = prob
            .inner_gradient(&sp.ops().zeros(0), &sp.ops().zeros(1))
            .unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn hessian_form_properties() {
        let sp = spaces(build_flat_torus(2, 4).unwrap());
        let lin = NonlinearityModel::linear();
        let beta = random_w(&sp, 2.0, 8);
        let alpha = random_v(&sp, 9);
        let dir = random_v(&sp, 10);
        let other = random_v(&sp, 11);
        let form = InnerProblem::new(&sp, &lin)
            .inner_hessian_form(&alpha, &beta, &dir)
            .unwrap();
        let dd = sp
            .ops()
            .l2_norm(&sp.ops().exterior_derivative(&dir).unwrap())
            .unwrap();
        assert!((form - 2.0 * dd * dd).abs() <= 1e-10 * form);
        let m = NonlinearityModel::power(3.0).unwrap().perturb(0.5).unwrap();
        let prob = InnerProblem::new(&sp, &m);
        let mass0 = sp.ops().mass(0).unwrap();
        let pair = |x: &Cochain, y: &Cochain| {
            let hx = prob.inner_hessian_apply(&alpha, &beta, x).unwrap();
            sp.v().vectors.tr_mul(&mass0.apply(y.values())).dot(&hx)
        };
        let (a, b) = (pair(&dir, &other), pair(&other, &dir));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        for s in 0..20 {
            let d = random_v(&sp, 300 + s);
            let q = prob.inner_hessian_form(&alpha, &beta, &d).unwrap();
            let n = sp
                .ops()
                .l2_norm(&sp.ops().exterior_derivative(&d).unwrap())
                .unwrap();
            assert!(q >= 0.5 * n * n);
        }
    }
}
