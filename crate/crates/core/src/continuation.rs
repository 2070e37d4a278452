//! Zero-mass continuation: solve the problems with `f_ε = f + εt` along
//! `ε_n = ε₀ rⁿ`, warm-starting each step from the previous solution, and
//! verify the limit against the unperturbed weak equation.

use nalgebra::DVector;
use serde::Serialize;

use crate::dec::Cochain;
use crate::error::{Error, Result};
use crate::inner::{InnerProblem, InnerSolveConfig};
use crate::nonlinearity::{MassModel, NonlinearityModel};
use crate::reduced::{weak_residual, ReducedProblem};
use crate::saddle::{
    Band, BandConstants, LinkingFrame, SaddleConfig, SaddleSearch, SearchDiagnostics,
};
use crate::spectral::HodgeSpaces;

/// Ratio `ε′/ε` of the proxy used for the unperturbed inner minimizer.
pub const PROXY_RATIO: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ContinuationSchedule {
    pub epsilon0: f64,
    pub ratio: f64,
    pub max_steps: usize,
    /// Relative H¹ increment for the stopping rule.
    pub limit_tolerance: f64,
    /// Unperturbed weak residual for the stopping rule.
    pub residual_target: f64,
    /// Consecutive small increments needed to stop.
    pub window: usize,
    pub saddle: SaddleConfig,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            epsilon0: 0.5,
            ratio: 0.5,
            max_steps: 40,
            limit_tolerance: 1e-4,
            residual_target: 1e-6,
            window: 3,
            saddle: SaddleConfig::default(),
        }
    }
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return Err(Error::Config(format!(
                "schedule epsilon0 must be positive, got {}",
                self.epsilon0
            )));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "schedule ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config(
                "schedule max_steps must be at least 1".into(),
            ));
        }
        if self.window == 0 {
            return Err(Error::Config("schedule window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, n: usize) -> f64 {
        self.epsilon0 * self.ratio.powi(n as i32)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SandwichReport {
    pub lower: f64,
    /// `F(β + dΦ_ε(β)) − F(β + dΦ_{ε′}(β))` with the unperturbed F.
    pub middle: f64,
    /// `ε (|β + dΦ_{ε′}(β)|₂² − |β + dΦ_ε(β)|₂²)`
    pub upper: f64,
    pub proxy_epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Two-sided bound on the change of `F` when the inner minimizer of the
/// unperturbed problem (proxied by `ε′ = 10⁻³ ε`) is replaced by that of `f_ε`.
pub fn sandwich_check(
    spaces: &HodgeSpaces,
    model: &NonlinearityModel,
    beta: &Cochain,
    epsilon: f64,
    inner: &InnerSolveConfig,
) -> Result<SandwichReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sandwich epsilon must be positive, got {epsilon}"
        )));
    }
    let base = model.unperturbed();
    let ops = spaces.ops();
    let proxy_epsilon = epsilon * PROXY_RATIO;
    let m_eps = base.perturb(epsilon)?;
    let m_proxy = base.perturb(proxy_epsilon)?;
    let b_eps = InnerProblem::new(spaces, &m_eps).phi(beta, inner)?.xi;
    let b_proxy = InnerProblem::new(spaces, &m_proxy).phi(beta, inner)?.xi;
    let f_eps = base.functional(ops, &b_eps)?;
    let f_proxy = base.functional(ops, &b_proxy)?;
    let n_eps = ops.l2_inner(&b_eps, &b_eps)?;
    let n_proxy = ops.l2_inner(&b_proxy, &b_proxy)?;
    let middle = f_eps - f_proxy;
    let upper = epsilon * (n_proxy - n_eps);
    let tolerance = 1e-8 * (f_eps.abs() + epsilon * n_eps).max(f64::MIN_POSITIVE);
    let pass = middle >= -tolerance && middle <= upper + tolerance;
    Ok(SandwichReport {
        lower: 0.0,
        middle,
        upper,
        proxy_epsilon,
        tolerance,
        pass,
    })
}

#[derive(Clone, Debug)]
pub struct ContinuationStep {
    pub step: usize,
    pub epsilon: f64,
    pub coefficients: DVector<f64>,
    pub beta: Cochain,
    pub value: f64,
    /// Weak residual against `f_ε`.
    pub residual: f64,
    /// Weak residual of `β + dΦ_ε(β)` against the unperturbed f.
    pub unperturbed_residual: f64,
    /// Relative H¹ distance to the previous step.
    pub h1_increment: Option<f64>,
    /// Relative L^p distance of `ξ = β + dΦ_ε(β)` to the previous step.
    /// Recorded only.
    pub lp_increment: Option<f64>,
    pub sandwich: SandwichReport,
    pub in_band: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitRecord {
    pub level: usize,
    pub epsilon_last: f64,
    pub proxy_epsilon: f64,
    pub value: f64,
    pub residual: f64,
    pub residual_pass: bool,
    pub in_band: bool,
    pub trivial: bool,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct ContinuationTrace {
    pub level: usize,
    pub band: Band,
    pub steps: Vec<ContinuationStep>,
    pub broken: Option<String>,
    pub converged: bool,
}

impl ContinuationTrace {
    pub fn last(&self) -> Option<&ContinuationStep> {
        self.steps.last()
    }

    pub fn sandwich_ok(&self) -> bool {
        self.steps.iter().all(|s| s.sandwich.pass)
    }

    pub fn band_ok(&self) -> bool {
        self.steps.iter().all(|s| s.in_band)
    }

    /// CSV rows: step, ε, value, residual, increment, sandwich terms.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epsilon,j_value,residual,h1_increment,sandwich_lower,sandwich_mid,sandwich_upper\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
                s.step,
                s.epsilon,
                s.value,
                s.residual,
                s.h1_increment
                    .map(|x| format!("{x:.16e}"))
                    .unwrap_or_default(),
                s.sandwich.lower,
                s.sandwich.middle,
                s.sandwich.upper
            ));
        }
        out
    }
}

fn h1_norm(c: &DVector<f64>, lambdas: &[f64]) -> f64 {
    c.iter()
        .zip(lambdas)
        .map(|(x, l)| (1.0 + l) * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Frames for a continuation run: bands from the `ε₀` model are valid for
/// every `ε ≤ ε₀` since the upper growth constant only shrinks with ε.
pub fn continuation_frames(
    spaces: &HodgeSpaces,
    model: &NonlinearityModel,
    schedule: &ContinuationSchedule,
    s: f64,
    count: usize,
    inner: &InnerSolveConfig,
    seed: u64,
) -> Result<Vec<LinkingFrame>> {
    let prob = ReducedProblem::new(
        spaces,
        model.unperturbed().perturb(schedule.epsilon0)?,
        inner.clone(),
    );
    let constants = BandConstants::from_model(&prob);
    crate::saddle::level_frames(&prob, s, count, &constants, 1.05, seed)
}

/// One trace per frame; each trace stops early on the H¹/residual rule.
pub fn run_schedule(
    spaces: &HodgeSpaces,
    model: &NonlinearityModel,
    schedule: &ContinuationSchedule,
    frames: &[LinkingFrame],
    inner: &InnerSolveConfig,
) -> Result<Vec<ContinuationTrace>> {
    schedule.validate()?;
    if model.mass() != MassModel::ZeroMass {
        return Err(Error::InvalidArgument(format!(
            "continuation needs a zero-mass model, got family {} with shift {}",
            model.family(),
            model.shift()
        )));
    }
    let ops = spaces.ops();
    let lambdas = spaces.w_lambdas();
    let mut traces = Vec::new();
    for (level, frame) in frames.iter().enumerate() {
        let mut trace = ContinuationTrace {
            level,
            band: frame.band,
            steps: Vec::new(),
            broken: None,
            converged: false,
        };
        let mut small = 0usize;
        let mut prev_xi: Option<Cochain> = None;
        for n in 0..schedule.max_steps {
            let eps = schedule.epsilon(n);
            let m = model.perturb(eps)?;
            let prob = ReducedProblem::new(spaces, m.clone(), inner.clone());
            let search = SaddleSearch::new(&prob, schedule.saddle.clone());
            let found = match trace.last() {
                None => first_solution(&search, frame, level),
                Some(prev) => {
                    let mut diag = SearchDiagnostics::default();
                    search.newton(prev.coefficients.clone(), &mut diag)
                }
            };
            let (eval, iterations) = match found {
                Ok(x) => x,
                Err(e) => {
                    trace.broken = Some(format!("step {n} (epsilon {eps:.3e}): {e}"));
                    break;
                }
            };
            let in_band = frame.band.contains(eval.value);
            let residual = weak_residual(&m, ops, eval.xi(), None, 0)?;
            let unperturbed_residual =
                weak_residual(&model.unperturbed(), ops, eval.xi(), None, 0)?;
            let sandwich = sandwich_check(spaces, model, &eval.beta, eps, inner)?;
            let h1_increment = trace.last().map(|p| {
                h1_norm(&(&eval.coefficients - &p.coefficients), lambdas)
                    / h1_norm(&eval.coefficients, lambdas).max(f64::MIN_POSITIVE)
            });
            let xi = eval.xi();
            let lp_increment = match &prev_xi {
                Some(q) => {
                    let diff = Cochain::new(xi.degree(), xi.values() - q.values());
                    Some(
                        ops.lp_norm(&diff, model.p())?
                            / ops.lp_norm(xi, model.p())?.max(f64::MIN_POSITIVE),
                    )
                }
                None => None,
            };
            prev_xi = Some(xi.clone());
            log::info!(
                "level {level} step {n}: eps {eps:.3e} value {:.6e} residual {residual:.2e} unperturbed {unperturbed_residual:.2e}",
                eval.value
            );
            trace.steps.push(ContinuationStep {
                step: n,
                epsilon: eps,
                coefficients: eval.coefficients.clone(),
                beta: eval.beta.clone(),
                value: eval.value,
                residual,
                unperturbed_residual,
                h1_increment,
                lp_increment,
                sandwich,
                in_band,
                iterations,
            });
            if !in_band {
                trace.broken = Some(format!(
                    "step {n}: value {:.6e} left band [{:.6e}, {:.6e}]",
                    eval.value, frame.band.lower, frame.band.upper
                ));
                break;
            }
            match h1_increment {
                Some(h) if h <= schedule.limit_tolerance => small += 1,
                _ => small = 0,
            }
            if small >= schedule.window && unperturbed_residual <= schedule.residual_target {
                trace.converged = true;
                break;
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn first_solution(
    search: &SaddleSearch,
    frame: &LinkingFrame,
    level: usize,
) -> Result<(crate::reduced::ReducedEvaluation, usize)> {
    let dim = frame.minus.len() + frame.plus.len();
    let mut last = None;
    for &idx in &frame.cluster {
        let mut dir = DVector::zeros(dim);
        dir[idx] = 1.0;
        let mut diag = SearchDiagnostics::default();
        match search.search(frame, &dir, &mut diag) {
            Ok((eval, it)) if frame.band.contains(eval.value) => return Ok((eval, it)),
            Ok((eval, _)) => {
                last = Some(Error::BandEscape {
                    value: eval.value,
                    lower: frame.band.lower,
                    upper: frame.band.upper,
                })
            }
            Err(e) => last = Some(e),
        }
        log::debug!("level {level}: seed {idx} rejected");
    }
    Err(last.unwrap_or_else(|| Error::Continuation("frame has an empty seed cluster".into())))
}

/// Checks the last iterate of a converged trace against the unperturbed
/// weak equation over the full basis.
pub fn verify_limit(
    spaces: &HodgeSpaces,
    model: &NonlinearityModel,
    trace: &ContinuationTrace,
    inner: &InnerSolveConfig,
) -> Result<LimitRecord> {
    if let Some(reason) = &trace.broken {
        return Err(Error::Continuation(format!(
            "trace {} is broken: {reason}",
            trace.level
        )));
    }
    if !trace.converged {
        return Err(Error::Continuation(format!(
            "trace {} did not converge",
            trace.level
        )));
    }
    let last = trace
        .last()
        .ok_or_else(|| Error::Continuation("empty trace".into()))?;
    verify_candidate(
        spaces,
        model,
        trace.level,
        trace.band,
        &last.beta,
        last.epsilon,
        inner,
    )
}

/// Limit check of a single candidate `β*` at proxy `ε′ = 10⁻³ ε_last`.
pub fn verify_candidate(
    spaces: &HodgeSpaces,
    model: &NonlinearityModel,
    level: usize,
    band: Band,
    beta: &Cochain,
    epsilon_last: f64,
    inner: &InnerSolveConfig,
) -> Result<LimitRecord> {
    let base = model.unperturbed();
    let ops = spaces.ops();
    let proxy_epsilon = epsilon_last * PROXY_RATIO;
    let proxy = base.perturb(proxy_epsilon)?;
    let xi = InnerProblem::new(spaces, &proxy).phi(beta, inner)?.xi;
    let residual = weak_residual(&base, ops, &xi, None, 0)?;
    let db = ops.exterior_derivative(beta)?;
    let value = ops.l2_inner(&db, &db)? - base.functional(ops, &xi)?;
    let trivial = beta.values().amax() == 0.0;
    let residual_pass = residual <= 1e-6;
    let in_band = band.contains(value);
    Ok(LimitRecord {
        level,
        epsilon_last,
        proxy_epsilon,
        value,
        residual,
        residual_pass,
        in_band,
        trivial,
        pass: residual_pass && in_band && !trivial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dec::DecOps;
    use crate::mesh::build_flat_torus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn spaces() -> HodgeSpaces {
        HodgeSpaces::new(
            Arc::new(DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap()),
            1,
        )
        .unwrap()
    }

    #[test]
    fn schedule_is_geometric() {
        let s = ContinuationSchedule::default();
        assert!(s.validate().is_ok());
        assert!((0..10).all(|n| s.epsilon(n + 1) < s.epsilon(n)));
        assert!((s.epsilon(3) - 0.0625).abs() < 1e-15);
        let bad = ContinuationSchedule {
            ratio: 1.0,
            ..ContinuationSchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sandwich_zero_and_random() {
        let sp = spaces();
        let model = NonlinearityModel::power(3.0).unwrap();
        let inner = InnerSolveConfig::default();
        let z = sandwich_check(&sp, &model, &sp.ops().zeros(1), 0.1, &inner).unwrap();
        assert_eq!((z.lower, z.middle, z.upper), (0.0, 0.0, 0.0));
        assert!(z.pass);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let c = DVector::from_fn(sp.w_dimension(), |_, _| rng.gen_range(-2.0..2.0));
            let r = sandwich_check(&sp, &model, &sp.from_w_coefficients(&c), 0.1, &inner).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(r.middle >= -r.tolerance);
        }
    }

    #[test]
    fn positive_mass_model_is_refused() {
        let sp = spaces();
        let m = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
        let r = run_schedule(
            &sp,
            &m,
            &ContinuationSchedule::default(),
            &[],
            &InnerSolveConfig::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn single_step_and_refusals() {
        let sp = spaces();
        let model = NonlinearityModel::power(3.0).unwrap();
        let inner = InnerSolveConfig::default();
        let schedule = ContinuationSchedule {
            max_steps: 1,
            ..ContinuationSchedule::default()
        };
        let frames = continuation_frames(&sp, &model, &schedule, 0.6, 1, &inner, 1).unwrap();
        let traces = run_schedule(&sp, &model, &schedule, &frames, &inner).unwrap();
        assert_eq!(traces[0].steps.len(), 1);
        let st = &traces[0].steps[0];
        assert!(st.residual <= 1e-8 && st.in_band && st.sandwich.pass);
        // unconverged trace is refused
        assert!(verify_limit(&sp, &model, &traces[0], &inner).is_err());
        // zero candidate: residual 0 but excluded
        let z = verify_candidate(
            &sp,
            &model,
            0,
            frames[0].band,
            &sp.ops().zeros(1),
            1e-3,
            &inner,
        )
        .unwrap();
        assert_eq!(z.residual, 0.0);
        assert!(z.trivial && !z.in_band && !z.pass);
    }
}
