//! Linking frames on W and a min-max search for critical points of `Ĵ`.
//!
//! A frame splits the W eigenbasis at a level μ: `H⁻` holds the harmonics,
//! every mode with `λ ≤ μ` and the first cluster `M_{λ_k}` above μ; `H⁺`
//! holds every mode with `λ > μ`. The search maximizes `Ĵ` over the fiber
//! `span{λ ≤ μ} ⊕ ℝ₊u` for a direction `u ∈ H⁺`, moves `u` downhill, and
//! polishes the result with Newton's method on the full gradient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dec::Cochain;
use crate::error::{Error, Result};
use crate::reduced::{weak_residual, ReducedEvaluation, ReducedProblem};
use crate::spectral::{clusters, EmbeddingEstimate, CLUSTER_RTOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkingFrame {
    pub mu: f64,
    pub rho: f64,
    pub s: f64,
    /// Smallest eigenvalue above μ.
    pub lambda_k: f64,
    /// `min_{λ_i > μ} λ_i^s / (λ_i^s + 1)`.
    pub k_constant: f64,
    /// W indices with `λ ≤ μ`, harmonics included.
    pub minus: Vec<usize>,
    /// W indices of the cluster `M_{λ_k}`.
    pub cluster: Vec<usize>,
    /// W indices with `λ > μ`.
    pub plus: Vec<usize>,
    pub target: f64,
    pub band: Band,
}

impl LinkingFrame {
    pub fn dim_minus(&self) -> usize {
        self.minus.len() + self.cluster.len()
    }

    pub fn codim_plus(&self) -> usize {
        self.minus.len()
    }

    pub fn multiplicity(&self) -> usize {
        self.cluster.len()
    }
}

struct Split {
    minus: Vec<usize>,
    cluster: Vec<usize>,
    plus: Vec<usize>,
    lambda_k: f64,
}

/// Index split of the W basis at level μ.
fn split(lambdas: &[f64], mu: f64) -> Result<Split> {
    let minus: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i] <= mu).collect();
    let plus: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i] > mu).collect();
    let lambda_k = plus
        .iter()
        .map(|&i| lambdas[i])
        .fold(f64::INFINITY, f64::min);
    if !lambda_k.is_finite() {
        return Err(Error::Truncation(format!(
            "no eigenvalue above mu = {mu:.6e}"
        )));
    }
    let cluster: Vec<usize> = plus
        .iter()
        .copied()
        .filter(|&i| (lambdas[i] - lambda_k).abs() <= CLUSTER_RTOL * lambda_k)
        .collect();
    Ok(Split {
        minus,
        cluster,
        plus,
        lambda_k,
    })
}

pub fn k_constant(lambda_k: f64, s: f64) -> f64 {
    let x = lambda_k.powf(s);
    x / (x + 1.0)
}

/// Frame for target level `C` from the geometric lower bound
/// `ρ² − a(c̃/K)^{p/2} − b′c̃/K ≥ C` with `μ = ρ^{2/(1−s)}`, scanning a
/// geometric ρ grid upward and keeping the first admissible value.
pub fn build_linking_frame(
    lambdas: &[f64],
    embedding: &EmbeddingEstimate,
    a: f64,
    b_prime: f64,
    target: f64,
) -> Result<LinkingFrame> {
    let s = embedding.s;
    let top = lambdas.iter().copied().fold(0.0, f64::max);
    let rho_max = top.powf((1.0 - s) / 2.0);
    let mut rho = 1e-3f64;
    while rho < rho_max {
        let mu = rho.powf(2.0 / (1.0 - s));
        let Split {
            minus,
            cluster,
            plus,
            lambda_k,
        } = split(lambdas, mu)?;
        let k = k_constant(lambda_k, s);
        let ct = embedding.c_tilde;
        let bound = rho * rho - a * (ct / k).powf(embedding.p / 2.0) - b_prime * ct / k;
        if bound >= target {
            return Ok(LinkingFrame {
                mu,
                rho,
                s,
                lambda_k,
                k_constant: k,
                minus,
                cluster,
                plus,
                target,
                band: Band {
                    lower: target,
                    upper: f64::INFINITY,
                },
            });
        }
        rho *= 1.01;
    }
    Err(Error::Truncation(format!(
        "target level {target:.6e} needs mu beyond the largest computed eigenvalue {top:.6e}"
    )))
}

/// Constants entering the refined band estimates.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BandConstants {
    /// `f(t) ≤ a t^{p/2} + b t`
    pub a: f64,
    pub b: f64,
    /// `f(t) ≥ c t^{p/2} − d`
    pub c: f64,
    pub d: f64,
    pub volume: f64,
}

impl BandConstants {
    pub fn from_model(prob: &ReducedProblem) -> Self {
        let m = prob.model();
        let (a, b) = m.upper_growth(1e4, 100_000);
        let (c, d) = m.lower_growth(1e4, 100_000);
        BandConstants {
            a,
            b,
            c,
            d,
            volume: prob.spaces().ops().complex().total_volume(),
        }
    }
}

/// Largest observed `|β|_p² / |dβ|₂²` over probes in `H⁺(μ)`.
pub fn plus_embedding_ratio(
    prob: &ReducedProblem,
    plus: &[usize],
    random_probes: usize,
    seed: u64,
) -> Result<f64> {
    let sp = prob.spaces();
    let ops = sp.ops();
    let lambdas = sp.w_lambdas();
    let p = prob.model().p();
    let dim = sp.w_dimension();
    let ratio = |c: &DVector<f64>| -> Result<f64> {
        let dirichlet: f64 = c.iter().zip(lambdas).map(|(x, l)| l * x * x).sum();
        let lp = ops.lp_norm(&sp.from_w_coefficients(c), p)?;
        Ok(lp * lp / dirichlet)
    };
    let mut best: f64 = 0.0;
    for &i in plus {
        let mut c = DVector::zeros(dim);
        c[i] = 1.0;
        best = best.max(ratio(&c)?);
    }
    // random combinations weighted toward the bottom of H⁺
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam0 = plus
        .iter()
        .map(|&i| lambdas[i])
        .fold(f64::INFINITY, f64::min);
    let low: Vec<usize> = plus
        .iter()
        .copied()
        .filter(|&i| lambdas[i] <= 2.5 * lam0)
        .collect();
    for _ in 0..random_probes {
        let mut c = DVector::zeros(dim);
        for &i in &low {
            c[i] = rng.gen_range(-1.0..1.0);
        }
        best = best.max(ratio(&c)?);
    }
    Ok(best)
}

/// `max_X [(1 − b/λ_k) X − a (A X)^{p/2}]`: a lower bound of `Ĵ` on a sphere in `H⁺`.
pub fn lower_band(constants: &BandConstants, p: f64, lambda_k: f64, ratio: f64) -> f64 {
    let q = p / 2.0;
    let alpha = 1.0 - constants.b / lambda_k;
    let gamma = constants.a * ratio.powf(q);
    if alpha <= 0.0 {
        return 0.0;
    }
    if gamma <= 0.0 {
        return f64::INFINITY;
    }
    let x = (alpha / (q * gamma)).powf(1.0 / (q - 1.0));
    alpha * x * (1.0 - 1.0 / q)
}

/// `sup_t (λ_k t² − c|M|^{1−p/2} t^p) + d|M|`: an upper bound of `Ĵ` on `H⁻`.
pub fn upper_band(constants: &BandConstants, p: f64, lambda_k: f64) -> f64 {
    let cp = constants.c * constants.volume.powf(1.0 - p / 2.0);
    if cp <= 0.0 {
        return f64::INFINITY;
    }
    let t2 = (2.0 * lambda_k / (p * cp)).powf(2.0 / (p - 2.0));
    lambda_k * t2 * (1.0 - 2.0 / p) + constants.d * constants.volume
}

/// Frame at level μ with refined band `[c₀, c₁]`; `ρ = μ^{(1−s)/2}`.
pub fn frame_at(
    prob: &ReducedProblem,
    mu: f64,
    s: f64,
    constants: &BandConstants,
    probes: usize,
    seed: u64,
) -> Result<LinkingFrame> {
    let lambdas = prob.lambdas();
    let Split {
        minus,
        cluster,
        plus,
        lambda_k,
    } = split(lambdas, mu)?;
    let p = prob.model().p();
    let ratio =
        plus_embedding_ratio(prob, &plus, probes, seed)? * crate::spectral::EMBEDDING_SAFETY;
    let lower = lower_band(constants, p, lambda_k, ratio);
    let upper = upper_band(constants, p, lambda_k);
    Ok(LinkingFrame {
        mu,
        rho: mu.powf((1.0 - s) / 2.0),
        s,
        lambda_k,
        k_constant: k_constant(lambda_k, s),
        minus,
        cluster,
        plus,
        target: lower,
        band: Band { lower, upper },
    })
}

/// Up to `count` frames at spectral gaps, chosen greedily so that each
/// band starts above `separation` times the previous band's top.
pub fn level_frames(
    prob: &ReducedProblem,
    s: f64,
    count: usize,
    constants: &BandConstants,
    separation: f64,
    seed: u64,
) -> Result<Vec<LinkingFrame>> {
    let lambdas = prob.lambdas();
    let positive: Vec<f64> = lambdas.iter().copied().filter(|&l| l > 0.0).collect();
    let groups = clusters(&positive, CLUSTER_RTOL);
    let mut frames: Vec<LinkingFrame> = Vec::new();
    let mut previous = 0.0f64;
    for (gi, &(start, _)) in groups.iter().enumerate() {
        if frames.len() >= count {
            break;
        }
        let next = positive[start];
        let mu = if gi == 0 {
            0.5 * next
        } else {
            (positive[groups[gi - 1].0] * next).sqrt()
        };
        let frame = frame_at(prob, mu, s, constants, 64, seed)?;
        if frame.band.lower > separation * previous && frame.band.lower > 0.0 {
            previous = frame.band.upper;
            frames.push(frame);
        }
    }
    Ok(frames)
}

/// Frames for explicit target levels: μ from the geometric lower bound,
/// then the refined band at that μ. `b′ = b|M|^{1−2/p}` converts the
/// linear term of the upper growth bound to an `L^p` bound.
pub fn frames_for_targets(
    prob: &ReducedProblem,
    embedding: &EmbeddingEstimate,
    constants: &BandConstants,
    targets: &[f64],
    seed: u64,
) -> Result<Vec<LinkingFrame>> {
    let p = prob.model().p();
    let b_prime = constants.b * constants.volume.powf(1.0 - 2.0 / p);
    let mut frames = Vec::with_capacity(targets.len());
    for &c in targets {
        let geometric = build_linking_frame(prob.lambdas(), embedding, constants.a, b_prime, c)?;
        let mut frame = frame_at(prob, geometric.mu, embedding.s, constants, 64, seed)?;
        frame.rho = geometric.rho;
        frame.target = c;
        frames.push(frame);
    }
    Ok(frames)
}

#[derive(Clone, Debug)]
pub struct SaddleConfig {
    /// Target for the weak residual of `β + dΦ(β)`.
    pub residual_tolerance: f64,
    pub max_fiber_steps: usize,
    pub max_descent_steps: usize,
    pub max_newton_steps: usize,
    /// Relative preconditioned gradient at which Newton takes over.
    pub newton_switch: f64,
    /// Relative distance below which two solutions are the same.
    pub distinct_threshold: f64,
    /// Solutions requested per frame.
    pub per_frame: usize,
    pub enforce_band: bool,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            residual_tolerance: 1e-9,
            max_fiber_steps: 40,
            max_descent_steps: 40,
            max_newton_steps: 60,
            newton_switch: 1e-3,
            distinct_threshold: 1e-3,
            per_frame: 1,
            enforce_band: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    ContinuationLimit,
}

#[derive(Clone, Debug)]
pub struct CriticalPointRecord {
    pub coefficients: DVector<f64>,
    pub beta: Cochain,
    /// `β + dΦ(β)`.
    pub xi: Cochain,
    pub value: f64,
    pub gradient_norm: f64,
    pub residual: f64,
    pub level: usize,
    pub band: Band,
    pub paired: bool,
    pub provenance: Provenance,
    pub seed: usize,
    pub iterations: usize,
    /// Values and gradient norms along the search.
    pub history: SearchDiagnostics,
}

/// Iteration history of one search.
#[derive(Clone, Debug, Default)]
pub struct SearchDiagnostics {
    pub values: Vec<f64>,
    pub gradient_norms: Vec<f64>,
}

fn precond_norm(g: &DVector<f64>, lambdas: &[f64]) -> f64 {
    g.iter()
        .zip(lambdas)
        .map(|(x, l)| x * x / (2.0 * (l + 1.0)))
        .sum::<f64>()
        .sqrt()
}

/// Size of `2Λc` in the preconditioned norm.
fn precond_scale(c: &DVector<f64>, lambdas: &[f64]) -> f64 {
    c.iter()
        .zip(lambdas)
        .map(|(x, l)| (2.0 * l * x).powi(2) / (2.0 * (l + 1.0)))
        .sum::<f64>()
        .sqrt()
}

pub struct SaddleSearch<'p, 'a> {
    prob: &'p ReducedProblem<'a>,
    config: SaddleConfig,
}

impl<'p, 'a> SaddleSearch<'p, 'a> {
    pub fn new(prob: &'p ReducedProblem<'a>, config: SaddleConfig) -> Self {
        SaddleSearch { prob, config }
    }

    pub fn config(&self) -> &SaddleConfig {
        &self.config
    }

    /// Full W basis Hessian projected onto the columns of `u` (W coordinates).
    fn projected_hessian(
        &self,
        eval: &ReducedEvaluation,
        u: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let h = self.prob.hessian(eval)?;
        Ok(u.tr_mul(&(&h * u)))
    }

    /// Maximizes `Ĵ(Σ y_j U_j)` over `y` with `y_last > 0`.
    fn fiber_max(
        &self,
        u: &DMatrix<f64>,
        y0: DVector<f64>,
        diag: &mut SearchDiagnostics,
    ) -> Result<(DVector<f64>, ReducedEvaluation)> {
        let lambdas = self.prob.lambdas();
        let weights: Vec<f64> = (0..u.ncols())
            .map(|j| {
                let col = u.column(j);
                2.0 * (col.iter().zip(lambdas).map(|(x, l)| l * x * x).sum::<f64>() + 1.0)
            })
            .collect();
        let last = u.ncols() - 1;
        let mut y = y0;
        let mut eval = self.prob.evaluate(&(u * &y))?;
        for _ in 0..self.config.max_fiber_steps {
            let g = u.tr_mul(&eval.gradient);
            let gn = g
                .iter()
                .zip(&weights)
                .map(|(x, w)| x * x / w)
                .sum::<f64>()
                .sqrt();
            let scale = precond_scale(&eval.coefficients, lambdas).max(1e-300);
            if gn <= 1e-8 * scale {
                break;
            }
            let hf = self.projected_hessian(&eval, u)?;
            let eig = SymmetricEigen::new(hf);
            let floor = 1e-8 * eig.eigenvalues.amax().max(1e-300);
            let mut inv = DVector::zeros(eig.eigenvalues.len());
            for (i, &v) in eig.eigenvalues.iter().enumerate() {
                inv[i] = 1.0 / v.abs().max(floor);
            }
            // ascent direction from the negative-definite modification
            let step = &eig.eigenvectors * inv.component_mul(&eig.eigenvectors.tr_mul(&g));
            let slope = g.dot(&step);
            let mut tau = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let trial = &y + &step * tau;
                if trial[last] > 0.0 {
                    let te = self.prob.evaluate(&(u * &trial))?;
                    if te.value >= eval.value + 1e-4 * tau * slope {
                        y = trial;
                        eval = te;
                        moved = true;
                        break;
                    }
                }
                tau *= 0.5;
            }
            diag.values.push(eval.value);
            diag.gradient_norms.push(eval.gradient_norm());
            if !moved {
                break;
            }
        }
        Ok((y, eval))
    }

    /// Maximizer of `t ↦ Ĵ(t u)` for a W coordinate vector `u`.
    fn ray_max(&self, u: &DVector<f64>) -> Result<f64> {
        let value = |t: f64| -> Result<f64> { Ok(self.prob.evaluate(&(u * t))?.value) };
        let mut t = 1e-2 / u.norm().max(1e-300);
        let mut best = (t, value(t)?);
        loop {
            let next = t * 1.6;
            let v = value(next)?;
            if v < best.1 {
                break;
            }
            best = (next, v);
            t = next;
            if t > 1e8 {
                return Err(Error::Stagnation(
                    "ray maximization did not turn over".into(),
                ));
            }
        }
        // golden section on [t/1.6, t*1.6]
        let (mut lo, mut hi) = (best.0 / 1.6, best.0 * 1.6);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (value(x1)?, value(x2)?);
        for _ in 0..40 {
            if f1 > f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = value(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = value(x2)?;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Min-max search seeded by the unit direction `seed_dir ∈ H⁺`.
    pub fn search(
        &self,
        frame: &LinkingFrame,
        seed_dir: &DVector<f64>,
        diag: &mut SearchDiagnostics,
    ) -> Result<(ReducedEvaluation, usize)> {
        let lambdas = self.prob.lambdas();
        let dim = self.prob.dimension();
        let mut u = seed_dir / seed_dir.norm();
        for &i in &frame.minus {
            u[i] = 0.0;
        }
        let t0 = self.ray_max(&u)?;
        let mut w = DVector::zeros(frame.minus.len());
        let mut t = t0;
        let mut iterations = 0;
        let build = |u: &DVector<f64>| {
            let mut m = DMatrix::zeros(dim, frame.minus.len() + 1);
            for (j, &i) in frame.minus.iter().enumerate() {
                m[(i, j)] = 1.0;
            }
            m.column_mut(frame.minus.len()).copy_from(u);
            m
        };
        let mut y =
            DVector::from_iterator(w.len() + 1, w.iter().copied().chain(std::iter::once(t)));
        let (ny, mut eval) = self.fiber_max(&build(&u), y.clone(), diag)?;
        y = ny;
        for _ in 0..self.config.max_descent_steps {
            iterations += 1;
            let g = &eval.gradient;
            let scale = precond_scale(&eval.coefficients, lambdas).max(1e-300);
            if precond_norm(g, lambdas) <= self.config.newton_switch * scale {
                break;
            }
            w = y.rows(0, frame.minus.len()).into_owned();
            t = y[frame.minus.len()];
            let mut gp = DVector::zeros(dim);
            for &i in &frame.plus {
                gp[i] = g[i];
            }
            let along = u.dot(&gp);
            gp -= &u * along;
            let dir = DVector::from_iterator(
                dim,
                gp.iter().zip(lambdas).map(|(x, l)| -x / (2.0 * (l + 1.0))),
            );
            let decrease = -gp.dot(&dir);
            if decrease <= 0.0 {
                break;
            }
            let mut tau = 1.0;
            let mut moved = false;
            for _ in 0..20 {
                let v = &u * t + &dir * tau;
                let nv = v.norm();
                let nu = &v / nv;
                let y0 = DVector::from_iterator(
                    w.len() + 1,
                    w.iter().copied().chain(std::iter::once(nv)),
                );
                let (ty, te) = self.fiber_max(&build(&nu), y0, diag)?;
                if te.value <= eval.value - 1e-4 * tau * decrease {
                    u = nu;
                    y = ty;
                    eval = te;
                    moved = true;
                    break;
                }
                tau *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let (eval, polish) = self.newton(eval.coefficients.clone(), diag)?;
        Ok((eval, iterations + polish))
    }

    /// Newton's method on the full gradient with a preconditioned-norm merit.
    pub fn newton(
        &self,
        start: DVector<f64>,
        diag: &mut SearchDiagnostics,
    ) -> Result<(ReducedEvaluation, usize)> {
        let lambdas = self.prob.lambdas();
        let ops = self.prob.spaces().ops();
        let model = self.prob.model();
        let mut eval = self.prob.evaluate(&start)?;
        let mut merit = precond_norm(&eval.gradient, lambdas);
        for it in 0..=self.config.max_newton_steps {
            let res = weak_residual(model, ops, eval.xi(), None, 0)?;
            diag.values.push(eval.value);
            diag.gradient_norms.push(eval.gradient_norm());
            if res <= self.config.residual_tolerance {
                return Ok((eval, it));
            }
            if it == self.config.max_newton_steps {
                break;
            }
            let h = self.prob.hessian(&eval)?;
            let mut candidates: Vec<DVector<f64>> = Vec::new();
            if let Some(step) = h.clone().lu().solve(&(-&eval.gradient)) {
                if step.iter().all(|x| x.is_finite()) {
                    candidates.push(step);
                }
            }
            // damped least-squares fallbacks
            let hth = h.tr_mul(&h);
            let hg = h.tr_mul(&eval.gradient);
            let top = hth.diagonal().amax().max(1e-300);
            for nu in [1e-8, 1e-5, 1e-2] {
                let mut a = hth.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += nu * top;
                }
                if let Some(ch) = a.cholesky() {
                    candidates.push(-ch.solve(&hg));
                }
            }
            let mut moved = false;
            'outer: for step in &candidates {
                let mut tau = 1.0;
                for _ in 0..12 {
                    let trial = &eval.coefficients + step * tau;
                    if let Ok(te) = self.prob.evaluate(&trial) {
                        let tm = precond_norm(&te.gradient, lambdas);
                        if tm < (1.0 - 1e-4 * tau) * merit {
                            eval = te;
                            merit = tm;
                            moved = true;
                            break 'outer;
                        }
                    }
                    tau *= 0.5;
                }
            }
            if !moved {
                let res = weak_residual(model, ops, eval.xi(), None, 0)?;
                if res <= 1e2 * self.config.residual_tolerance {
                    log::debug!("newton stopped at round-off floor, residual {res:.3e}");
                    return Ok((eval, it + 1));
                }
                return Err(Error::Stagnation(format!(
                    "newton made no progress at residual {res:.3e}"
                )));
            }
        }
        let res = weak_residual(model, ops, eval.xi(), None, 0)?;
        Err(Error::Stagnation(format!(
            "newton did not reach residual {:.1e} (at {res:.3e})",
            self.config.residual_tolerance
        )))
    }

    fn record(
        &self,
        eval: ReducedEvaluation,
        level: usize,
        band: Band,
        seed: usize,
        iterations: usize,
        paired: bool,
    ) -> Result<CriticalPointRecord> {
        let residual = weak_residual(
            self.prob.model(),
            self.prob.spaces().ops(),
            eval.xi(),
            None,
            0,
        )?;
        Ok(CriticalPointRecord {
            gradient_norm: eval.gradient_norm(),
            value: eval.value,
            xi: eval.inner.xi.clone(),
            beta: eval.beta,
            coefficients: eval.coefficients,
            residual,
            level,
            band,
            paired,
            provenance: Provenance::Direct,
            seed,
            iterations,
            history: SearchDiagnostics::default(),
        })
    }

    /// One critical point in the frame's band from the seed direction.
    pub fn find_critical_point(
        &self,
        frame: &LinkingFrame,
        level: usize,
        seed: usize,
        seed_dir: &DVector<f64>,
    ) -> Result<CriticalPointRecord> {
        let mut diag = SearchDiagnostics::default();
        let (eval, iterations) = self.search(frame, seed_dir, &mut diag)?;
        self.accept(eval, frame, level, seed, iterations, diag)
    }

    /// Newton from an explicit start, then the same acceptance rule.
    pub fn find_critical_point_from(
        &self,
        frame: &LinkingFrame,
        level: usize,
        start: &DVector<f64>,
    ) -> Result<CriticalPointRecord> {
        let mut diag = SearchDiagnostics::default();
        let (eval, iterations) = self.newton(start.clone(), &mut diag)?;
        self.accept(eval, frame, level, usize::MAX, iterations, diag)
    }

    fn accept(
        &self,
        eval: ReducedEvaluation,
        frame: &LinkingFrame,
        level: usize,
        seed: usize,
        iterations: usize,
        history: SearchDiagnostics,
    ) -> Result<CriticalPointRecord> {
        if self.config.enforce_band && !frame.band.contains(eval.value) {
            return Err(Error::BandEscape {
                value: eval.value,
                lower: frame.band.lower,
                upper: frame.band.upper,
            });
        }
        let mut rec = self.record(eval, level, frame.band, seed, iterations, false)?;
        rec.history = history;
        Ok(rec)
    }

    /// The paired record `−β`, re-evaluated independently.
    pub fn pair(&self, rec: &CriticalPointRecord) -> Result<CriticalPointRecord> {
        let eval = self.prob.evaluate(&(-&rec.coefficients))?;
        let mut r = self.record(eval, rec.level, rec.band, rec.seed, 0, true)?;
        r.provenance = rec.provenance;
        Ok(r)
    }

    fn is_new(&self, c: &DVector<f64>, found: &[CriticalPointRecord]) -> bool {
        found.iter().all(|r| {
            let scale = c.norm().max(r.coefficients.norm());
            (c - &r.coefficients).norm() > self.config.distinct_threshold * scale
                && (c + &r.coefficients).norm() > self.config.distinct_threshold * scale
        })
    }

    /// Runs every frame; each accepted β is followed by its pair `−β`.
    pub fn collect_multiple(&self, frames: &[LinkingFrame]) -> Result<CollectReport> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument(
                "collect_multiple needs at least one frame".into(),
            ));
        }
        let dim = self.prob.dimension();
        let mut records: Vec<CriticalPointRecord> = Vec::new();
        let mut failures = Vec::new();
        for (level, frame) in frames.iter().enumerate() {
            let mut found_here: Vec<CriticalPointRecord> = Vec::new();
            let mut seeds: Vec<usize> = frame.cluster.clone();
            seeds.extend(
                frame
                    .plus
                    .iter()
                    .copied()
                    .filter(|i| !frame.cluster.contains(i))
                    .take(frame.cluster.len().max(2)),
            );
            for (si, &idx) in seeds.iter().enumerate() {
                if found_here.len() >= self.config.per_frame {
                    break;
                }
                let mut dir = DVector::zeros(dim);
                dir[idx] = 1.0;
                // deflation: remove the directions of solutions already found in this frame
                for r in &found_here {
                    let mut q = DVector::zeros(dim);
                    for &i in &frame.plus {
                        q[i] = r.coefficients[i];
                    }
                    let n = q.norm();
                    if n > 0.0 {
                        let q = q / n;
                        let proj = dir.dot(&q);
                        dir -= q * proj;
                    }
                }
                if dir.norm() < 1e-6 {
                    continue;
                }
                match self.find_critical_point(frame, level, si, &dir) {
                    Ok(rec) => {
                        let all: Vec<CriticalPointRecord> =
                            records.iter().chain(found_here.iter()).cloned().collect();
                        if self.is_new(&rec.coefficients, &all) {
                            found_here.push(rec);
                        } else {
                            failures.push(format!(
                                "level {level} seed {si}: duplicate of an earlier record"
                            ));
                        }
                    }
                    Err(e) => failures.push(format!("level {level} seed {si}: {e}")),
                }
            }
            for rec in found_here {
                let pair = self.pair(&rec)?;
                records.push(rec);
                records.push(pair);
            }
        }
        let requested = frames.len() * self.config.per_frame;
        let delivered = records.iter().filter(|r| !r.paired).count();
        Ok(CollectReport {
            records,
            requested,
            delivered,
            failures,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CollectReport {
    pub records: Vec<CriticalPointRecord>,
    pub requested: usize,
    pub delivered: usize,
    pub failures: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dec::DecOps;
    use crate::inner::InnerSolveConfig;
    use crate::mesh::build_flat_torus;
    use crate::nonlinearity::NonlinearityModel;
    use crate::spectral::HodgeSpaces;
    use std::sync::Arc;

    fn spaces() -> HodgeSpaces {
        HodgeSpaces::new(
            Arc::new(DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap()),
            1,
        )
        .unwrap()
    }

    #[test]
    fn frame_identity_and_monotone_rho() {
        let sp = spaces();
        let emb = sp.estimate_embedding(3.0, None, 8, 1).unwrap();
        let lambdas = sp.w_lambdas();
        let mut last = 0.0;
        for c in [1e-6, 0.5, 1.0, 2.0] {
            let f = build_linking_frame(lambdas, &emb, 0.0, 0.0, c).unwrap();
            assert_eq!(f.dim_minus(), f.codim_plus() + f.multiplicity());
            assert!((f.mu - f.rho.powf(2.0 / (1.0 - f.s))).abs() <= 1e-12 * f.mu);
            assert!(f.rho >= last);
            last = f.rho;
        }
        assert!(build_linking_frame(lambdas, &emb, 1.0, 1.0, 1e12).is_err());
        // K approaches one along the grid
        let ks: Vec<f64> = [1.0, 10.0, 100.0, 1e16]
            .iter()
            .map(|&l| k_constant(l, emb.s))
            .collect();
        assert!(ks.windows(2).all(|w| w[1] > w[0]));
        assert!(1.0 - ks[3] < 0.01);
    }

    #[test]
    fn band_formulas() {
        let c = BandConstants {
            a: 1.0,
            b: 0.0,
            c: 1.0,
            d: 0.0,
            volume: 1.0,
        };
        // p = 3: sup (λ t² − t³) = 4λ³/27
        assert!((upper_band(&c, 3.0, 3.0) - 4.0).abs() < 1e-12);
        // A = 1: max (X − X^{3/2}) = 4/27
        assert!((lower_band(&c, 3.0, 10.0, 1.0) - 4.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn zero_seed_is_rejected_and_solution_found() {
        let sp = spaces();
        let model = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
        let prob = ReducedProblem::new(&sp, model, InnerSolveConfig::default());
        let constants = BandConstants::from_model(&prob);
        let frames = level_frames(&prob, 0.6, 1, &constants, 1.05, 1).unwrap();
        assert_eq!(frames.len(), 1);
        let search = SaddleSearch::new(&prob, SaddleConfig::default());
        let zero = DVector::zeros(prob.dimension());
        assert!(matches!(
            search.find_critical_point_from(&frames[0], 0, &zero),
            Err(Error::BandEscape { .. })
        ));
        let report = search.collect_multiple(&frames).unwrap();
        assert_eq!(report.delivered, 1, "{:?}", report.failures);
        let (a, b) = (&report.records[0], &report.records[1]);
        assert!(a.residual <= 1e-8 && b.residual <= 1e-8);
        assert!(a.value > 0.0);
        assert!((a.value - b.value).abs() <= 1e-10 * a.value);
        assert!(b.paired && !a.paired);
        // bounded values and a vanishing gradient along the search
        let h = &a.history;
        assert!(!h.values.is_empty() && h.values.iter().all(|v| v.is_finite()));
        let g_min = h
            .gradient_norms
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(g_min <= 1e-6 * h.gradient_norms[0].max(1.0));
    }
}
