//! The nonlinearity `f`, the functional `F(ξ) = ∫ f(⟨ξ,ξ⟩)`, its weak
//! derivative, and sampling audits of the structural hypotheses.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dec::{Cochain, DecOps};
use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassModel {
    PositiveMass { epsilon: f64 },
    ZeroMass,
}

#[derive(Clone)]
enum Base {
    /// `coef * t^{p/2}`
    Power { coef: f64 },
    Custom {
        f: ScalarFn,
        df: ScalarFn,
        d2f: ScalarFn,
    },
}

/// `f(t) = shift * t + base(t)` with growth exponent `p`.
#[derive(Clone)]
pub struct NonlinearityModel {
    family: String,
    p: f64,
    shift: f64,
    base: Base,
    base_mass: MassModel,
}

impl fmt::Debug for NonlinearityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearityModel")
            .field("family", &self.family)
            .field("p", &self.p)
            .field("shift", &self.shift)
            .field("mass", &self.mass())
            .finish()
    }
}

impl NonlinearityModel {
    /// `f(t) = t^{p/2}` (zero mass).
    pub fn power(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(NonlinearityModel {
            family: "power".into(),
            p,
            shift: 0.0,
            base: Base::Power { coef: 1.0 },
            base_mass: MassModel::ZeroMass,
        })
    }

    /// `f(t) = ε t + t^{p/2}` (positive mass).
    pub fn shifted_power(epsilon: f64, p: f64) -> Result<Self> {
        check_p(p)?;
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(NonlinearityModel {
            family: "shifted_power".into(),
            p,
            shift: epsilon,
            base: Base::Power { coef: 1.0 },
            base_mass: MassModel::ZeroMass,
        })
    }

    /// `f(t) = t`, the linear oracle (growth exponent 2).
    pub fn linear() -> Self {
        NonlinearityModel {
            family: "linear".into(),
            p: 2.0,
            shift: 1.0,
            base: Base::Power { coef: 0.0 },
            base_mass: MassModel::ZeroMass,
        }
    }

    /// User-supplied `(f, f', f'')`.
    pub fn custom(
        name: &str,
        p: f64,
        mass: MassModel,
        f: ScalarFn,
        df: ScalarFn,
        d2f: ScalarFn,
    ) -> Result<Self> {
        check_p(p)?;
        Ok(NonlinearityModel {
            family: name.to_string(),
            p,
            shift: 0.0,
            base: Base::Custom { f, df, d2f },
            base_mass: mass,
        })
    }

    /// `f_ε(t) = f(t) + ε t`.
    pub fn perturb(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let mut m = self.clone();
        m.shift += epsilon;
        Ok(m)
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Coefficient of the linear term added on top of the base function.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn mass(&self) -> MassModel {
        let base = match self.base_mass {
            MassModel::PositiveMass { epsilon } => epsilon,
            MassModel::ZeroMass => 0.0,
        };
        if base + self.shift > 0.0 {
            MassModel::PositiveMass {
                epsilon: base + self.shift,
            }
        } else {
            MassModel::ZeroMass
        }
    }

    /// Model without its linear shift (the zero-mass problem behind a perturbation).
    pub fn unperturbed(&self) -> Self {
        let mut m = self.clone();
        m.shift = 0.0;
        m
    }

    pub fn f(&self, t: f64) -> f64 {
        self.shift * t
            + match &self.base {
                Base::Power { coef } => coef * t.powf(self.p / 2.0),
                Base::Custom { f, .. } => f(t),
            }
    }

    pub fn df(&self, t: f64) -> f64 {
        self.shift
            + match &self.base {
                Base::Power { coef } => {
                    let e = self.p / 2.0 - 1.0;
                    if *coef == 0.0 || (t == 0.0 && e > 0.0) {
                        0.0
                    } else {
                        coef * self.p / 2.0 * t.powf(e)
                    }
                }
                Base::Custom { df, .. } => df(t),
            }
    }

    /// Second derivative; may be infinite at `t = 0` for `p < 4`.
    pub fn d2f(&self, t: f64) -> f64 {
        match &self.base {
            Base::Power { coef } => {
                let h = self.p / 2.0;
                if *coef == 0.0 || h == 1.0 {
                    0.0
                } else {
                    coef * h * (h - 1.0) * t.powf(h - 2.0)
                }
            }
            Base::Custom { d2f, .. } => d2f(t),
        }
    }

    /// `F(ξ) = Σ_T f(dens_T) vol_T`.
    pub fn functional(&self, ops: &DecOps, xi: &Cochain) -> Result<f64> {
        let dens = ops.density(xi)?;
        Ok(dens
            .values
            .iter()
            .zip(ops.cell_volumes())
            .map(|(&d, &v)| {
                debug_assert!(d >= 0.0);
                self.f(d) * v
            })
            .sum())
    }

    /// Riesz vector `r` of `η ↦ Σ_T f'(dens_T(ξ)) ξ_T·G_T η_T`, so that
    /// `weak_rhs(ξ, η) = η · r`.
    pub fn weak_rhs_vector(&self, ops: &DecOps, xi: &Cochain) -> Result<DVector<f64>> {
        ops.check(xi)?;
        let k = xi.degree();
        let mut r = DVector::zeros(xi.len());
        for (block, &vol) in ops.blocks(k).iter().zip(ops.cell_volumes()) {
            let local = DecOps::gather(block, xi.values());
            let g = &block.gram * &local;
            let dens = (local.dot(&g) / vol).max(0.0);
            let w = self.df(dens);
            for (a, &i) in block.indices.iter().enumerate() {
                r[i] += w * block.sign * g[a];
            }
        }
        Ok(r)
    }

    pub fn weak_rhs(&self, ops: &DecOps, xi: &Cochain, eta: &Cochain) -> Result<f64> {
        if xi.degree() != eta.degree() {
            return Err(Error::DegreeMismatch {
                left: xi.degree(),
                right: eta.degree(),
            });
        }
        ops.check(eta)?;
        Ok(self.weak_rhs_vector(ops, xi)?.dot(eta.values()))
    }

    /// Constants with `f(t) ≤ a t^{p/2} + b t`: exact for the builtin
    /// families, fitted on samples otherwise.
    pub fn upper_growth(&self, t_max: f64, samples: usize) -> (f64, f64) {
        match &self.base {
            Base::Power { coef } => (*coef, self.shift),
            Base::Custom { .. } => {
                let ts = log_samples(t_max, samples, 0);
                fit_power_plus_linear(&ts, self.p / 2.0, 1.0, |t| self.f(t))
            }
        }
    }

    /// Constants with `c t^{p/2} - d ≤ f(t)`: exact for builtins, fitted otherwise.
    pub fn lower_growth(&self, t_max: f64, samples: usize) -> (f64, f64) {
        match &self.base {
            Base::Power { coef } => (*coef, 0.0),
            Base::Custom { .. } => {
                let ts = log_samples(t_max, samples, 0);
                fit_lower(&ts, self.p / 2.0, |t| self.f(t))
            }
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            family: self.family.clone(),
            p: self.p,
            shift: self.shift,
            mass: self.mass(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelDescriptor {
    pub family: String,
    pub p: f64,
    pub shift: f64,
    pub mass: MassModel,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "growth exponent must exceed 2, got {p}"
        )));
    }
    Ok(())
}

/// `0` followed by `count` log-uniform samples on `[1e-8, t_max]`, sorted.
pub fn log_samples(t_max: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1e-8f64.ln(), t_max.ln());
    let mut ts: Vec<f64> = std::iter::once(0.0)
        .chain((0..count).map(|_| rng.gen_range(lo..=hi).exp()))
        .collect();
    ts.sort_by(f64::total_cmp);
    ts
}

/// `g(t) ≤ a t^e + b t^m`: `a` from `t ≥ 1`, then the smallest `b` covering `t < 1`.
fn fit_power_plus_linear(ts: &[f64], e: f64, m: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
    let a = ts
        .iter()
        .filter(|&&t| t >= 1.0)
        .map(|&t| g(t) / t.powf(e))
        .fold(0.0f64, f64::max);
    let b = ts
        .iter()
        .filter(|&&t| t > 0.0 || m == 0.0)
        .map(|&t| (g(t) - a * t.powf(e)) / t.powf(m))
        .fold(0.0f64, f64::max);
    (a, b)
}

fn fit_lower(ts: &[f64], e: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
    let c = ts
        .iter()
        .filter(|&&t| t >= 1.0)
        .map(|&t| g(t) / t.powf(e))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let c = if c.is_finite() { c } else { 0.0 };
    let d = ts
        .iter()
        .map(|&t| c * t.powf(e) - g(t))
        .fold(0.0f64, f64::max);
    (c, d)
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub pass: bool,
    /// Sample where the check fails (or is tightest).
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub model: ModelDescriptor,
    pub t_max: f64,
    pub samples: usize,
    pub f1: HypothesisCheck,
    pub f1_tilde: HypothesisCheck,
    pub f2: HypothesisCheck,
    pub f3: HypothesisCheck,
    pub f3_constants: (f64, f64),
    pub f4: HypothesisCheck,
    pub f4_radius: Option<f64>,
    /// Largest θ with `(θ/2) f(t) ≤ f'(t) t` on the sampled tail.
    pub f4_exponent: f64,
    pub increasing_constants: (f64, f64),
    pub note: String,
}

/// Sampling audit of the structural hypotheses on `[0, t_max]`.
pub fn audit_hypotheses(
    model: &NonlinearityModel,
    t_max: f64,
    samples: usize,
    seed: u64,
) -> HypothesisReport {
    let ts = log_samples(t_max, samples, seed);
    let p = model.p();
    let rel = |x: f64| 1e-12 * x.abs().max(1e-300);

    let f0 = model.f(0.0);
    let df0 = model.df(0.0);
    let (fmin_t, fmin) =
        ts.iter()
            .map(|&t| (t, model.df(t)))
            .fold(
                (0.0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );
    let f1 = match model.mass() {
        MassModel::PositiveMass { epsilon } => HypothesisCheck {
            pass: f0 == 0.0 && fmin >= epsilon * (1.0 - 1e-12),
            witness: Some(fmin_t),
            detail: format!("min f' = {fmin:.6e} against epsilon = {epsilon:.6e}"),
        },
        MassModel::ZeroMass => HypothesisCheck {
            pass: false,
            witness: Some(fmin_t),
            detail: format!("zero-mass model; min f' = {fmin:.6e}"),
        },
    };
    let f1_tilde = HypothesisCheck {
        pass: f0 == 0.0 && df0 == 0.0 && fmin >= 0.0,
        witness: Some(0.0),
        detail: format!("f(0) = {f0:.3e}, f'(0) = {df0:.3e}, min f' = {fmin:.3e}"),
    };

    // midpoint convexity on consecutive and random triples, plus f'' > 0
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut f2_fail = None;
    for _ in 0..samples.min(20_000) {
        let a = ts[rng.gen_range(0..ts.len())];
        let b = ts[rng.gen_range(0..ts.len())];
        if a == b {
            continue;
        }
        let mid = model.f(0.5 * (a + b));
        let chord = 0.5 * (model.f(a) + model.f(b));
        if !(mid <= chord + 1e-14 * chord.abs()) {
            f2_fail = Some(0.5 * (a + b));
            break;
        }
    }
    if f2_fail.is_none() {
        f2_fail = ts
            .iter()
            .copied()
            .filter(|&t| t > 0.0)
            .find(|&t| !(model.d2f(t) > 0.0));
    }
    let f2 = HypothesisCheck {
        pass: f2_fail.is_none(),
        witness: f2_fail,
        detail: "midpoint convexity and f'' > 0 on samples".into(),
    };

    let e = p / 2.0 - 1.0;
    let (a, b) = fit_power_plus_linear(&ts, e, 0.0, |t| model.df(t).abs());
    let f3_fail = ts
        .iter()
        .copied()
        .find(|&t| model.df(t).abs() > a * t.powf(e) + b + rel(a * t.powf(e) + b));
    let f3 = HypothesisCheck {
        pass: a.is_finite() && b.is_finite() && f3_fail.is_none(),
        witness: f3_fail,
        detail: format!("|f'(t)| <= {a:.6e} t^{e} + {b:.6e}"),
    };

    // smallest sampled R beyond which 0 < (p/2) f <= f' t holds
    let ok = |t: f64| {
        let lhs = 0.5 * p * model.f(t);
        lhs > 0.0 && lhs <= model.df(t) * t + rel(lhs)
    };
    let mut radius = None;
    for (i, &t) in ts.iter().enumerate().rev() {
        if !ok(t) {
            radius = ts.get(i + 1).map(|_| t);
            break;
        }
        if i == 0 {
            radius = Some(0.0);
        }
    }
    let f4 = HypothesisCheck {
        pass: radius.is_some_and(|r| r < t_max * 1e-2),
        witness: radius,
        detail: "0 < (p/2) f(t) <= f'(t) t for t > R".into(),
    };
    let tail: Vec<f64> = ts
        .iter()
        .copied()
        .filter(|&t| t >= t_max * 1e-2 && t > 0.0)
        .collect();
    let f4_exponent = tail
        .iter()
        .map(|&t| 2.0 * model.df(t) * t / model.f(t))
        .fold(f64::INFINITY, f64::min);

    HypothesisReport {
        model: model.descriptor(),
        t_max,
        samples,
        f1,
        f1_tilde,
        f2,
        f3,
        f3_constants: (a, b),
        f4,
        f4_radius: radius,
        f4_exponent,
        increasing_constants: fit_lower(&ts, p / 2.0, |t| model.f(t)),
        note: "discrete strict convexity is checked per cell density".into(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityAuditReport {
    pub p: f64,
    pub hilbert_dim: usize,
    pub seed: u64,
    pub sampled_pairs: usize,
    pub skipped: usize,
    /// Infimum of `LHS / ‖x-y‖^p` over random pairs.
    pub empirical_infimum: f64,
    /// Infimum per case: generic, collinear t >= 0, collinear t < 0, orthogonal shift.
    pub case_infima: [f64; 4],
    /// Infimum of the scalar inequality on the deterministic grid.
    pub grid_infimum: f64,
    pub violations: Vec<(f64, f64)>,
    pub pass: bool,
}

fn lhs_hilbert(x: &[f64], y: &[f64], p: f64) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ydx: f64 = y.iter().zip(x).map(|(a, b)| a * (b - a)).sum();
    let coupling = if ny == 0.0 {
        0.0
    } else {
        p * ny.powf(p - 2.0) * ydx
    };
    nx.powf(p) - ny.powf(p) - coupling
}

/// Scalar form `|a|^p - |b|^p - p |b|^{p-2} b (a-b)`.
pub fn lhs_scalar(a: f64, b: f64, p: f64) -> f64 {
    let coupling = if b == 0.0 {
        0.0
    } else {
        p * b.abs().powf(p - 2.0) * b * (a - b)
    };
    a.abs().powf(p) - b.abs().powf(p) - coupling
}

/// Sampling audit of `‖x‖^p − ‖y‖^p − p‖y‖^{p−2}(y|x−y) ≥ c̄‖x−y‖^p`.
pub fn audit_appendix_inequality(
    p: f64,
    hilbert_dim: usize,
    sample_count: usize,
    seed: u64,
) -> InequalityAuditReport {
    assert!(p > 2.0 && hilbert_dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut case_infima = [f64::INFINITY; 4];
    let mut skipped = 0;
    let mut violations = Vec::new();
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..hilbert_dim)
            .map(|_| {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let v: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
            })
            .collect()
    };
    for i in 0..sample_count {
        let case = i % 4;
        let scale = rng.gen_range(-3.0f64..3.0).exp();
        let y: Vec<f64> = gauss(&mut rng).into_iter().map(|v| v * scale).collect();
        let x: Vec<f64> = match case {
            0 => {
                let s = rng.gen_range(-3.0f64..3.0).exp();
                gauss(&mut rng).into_iter().map(|v| v * s).collect()
            }
            1 => {
                let t = rng.gen_range(0.0..4.0);
                y.iter().map(|v| t * v).collect()
            }
            2 => {
                let t = -rng.gen_range(0.0f64..4.0);
                y.iter().map(|v| t * v).collect()
            }
            _ => {
                // x = t y + z with z orthogonal to y
                let t = rng.gen_range(-4.0..4.0);
                let mut z = gauss(&mut rng);
                let ny2: f64 = y.iter().map(|v| v * v).sum();
                let proj: f64 = z.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / ny2;
                for (zi, yi) in z.iter_mut().zip(&y) {
                    *zi -= proj * yi;
                }
                let s = rng.gen_range(-3.0f64..1.0).exp() * scale;
                y.iter().zip(&z).map(|(a, b)| t * a + s * b).collect()
            }
        };
        let diff = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let lhs = lhs_hilbert(&x, &y, p);
        let norm_scale = x
            .iter()
            .chain(&y)
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .powf(p);
        if diff <= 1e-8 * norm_scale.powf(1.0 / p) {
            skipped += 1;
            continue;
        }
        if lhs < -1e-12 * norm_scale {
            violations.push((lhs, diff));
        }
        let ratio = lhs / diff.powf(p);
        case_infima[case] = case_infima[case].min(ratio);
    }
    let empirical_infimum = case_infima.iter().copied().fold(f64::INFINITY, f64::min);

    // scalar grid: by homogeneity b ∈ {−1, 0, 1} and a on a fine grid
    let mut grid_infimum = f64::INFINITY;
    for &b in &[-1.0, 0.0, 1.0] {
        for j in 0..=40_000 {
            let a = -20.0 + 40.0 * j as f64 / 40_000.0;
            let gap = (a - b).abs();
            if gap < 1e-9 {
                continue;
            }
            let lhs = lhs_scalar(a, b, p);
            if lhs < -1e-12 * a.abs().max(1.0).powf(p) {
                violations.push((a, b));
            }
            grid_infimum = grid_infimum.min(lhs / gap.powf(p));
        }
    }
    InequalityAuditReport {
        p,
        hilbert_dim,
        seed,
        sampled_pairs: sample_count,
        skipped,
        empirical_infimum,
        case_infima,
        grid_infimum,
        pass: empirical_infimum > 0.0 && grid_infimum > 0.0 && violations.is_empty(),
        violations,
    }
}

/// Discrete analogue of the pointwise strict convexity condition: the
/// infimum over cells of `[f(|ξ|²) − f(|η|²) − 2f'(|η|²)⟨η,ξ−η⟩] / |ξ−η|^p`.
pub fn cellwise_convexity_ratio(
    model: &NonlinearityModel,
    ops: &DecOps,
    xi: &Cochain,
    eta: &Cochain,
) -> Result<f64> {
    ops.check(xi)?;
    ops.check(eta)?;
    let k = xi.degree();
    let p = model.p();
    let mut best = f64::INFINITY;
    for (block, &vol) in ops.blocks(k).iter().zip(ops.cell_volumes()) {
        let x = DecOps::gather(block, xi.values());
        let y = DecOps::gather(block, eta.values());
        let dx = (x.dot(&(&block.gram * &x)) / vol).max(0.0);
        let dy = (y.dot(&(&block.gram * &y)) / vol).max(0.0);
        let diff = &x - &y;
        let dd = (diff.dot(&(&block.gram * &diff)) / vol).max(0.0);
        if dd <= 1e-14 * dx.max(dy) {
            continue;
        }
        let cross = y.dot(&(&block.gram * &diff)) / vol;
        let lhs = model.f(dx) - model.f(dy) - 2.0 * model.df(dy) * cross;
        best = best.min(lhs / dd.powf(p / 2.0));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_flat_torus;

    fn ops() -> DecOps {
        DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap()
    }

    fn random(ops: &DecOps, k: usize, seed: u64) -> Cochain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Cochain::new(
            k,
            DVector::from_fn(ops.count(k), |_, _| rng.gen_range(-1.0..1.0)),
        )
    }

    #[test]
    fn functional_identities() {
        let ops = ops();
        let xi = random(&ops, 1, 1);
        assert_eq!(
            NonlinearityModel::linear()
                .functional(&ops, &ops.zeros(1))
                .unwrap(),
            0.0
        );
        let l2 = ops.l2_inner(&xi, &xi).unwrap();
        let lin = NonlinearityModel::linear().functional(&ops, &xi).unwrap();
        assert!((lin - l2).abs() <= 1e-12 * l2);
        let pw = NonlinearityModel::power(3.0).unwrap();
        let lp = ops.lp_norm(&xi, 3.0).unwrap();
        assert!((pw.functional(&ops, &xi).unwrap() - lp.powi(3)).abs() <= 1e-12 * lp.powi(3));
        let even = pw.functional(&ops, &xi.scale(-1.0)).unwrap();
        assert_eq!(even, pw.functional(&ops, &xi).unwrap());
    }

    #[test]
    fn weak_rhs_properties() {
        let ops = ops();
        let xi = random(&ops, 1, 2);
        let e1 = random(&ops, 1, 3);
        let e2 = random(&ops, 1, 4);
        let lin = NonlinearityModel::linear();
        let l2 = ops.l2_inner(&xi, &xi).unwrap();
        assert!((lin.weak_rhs(&ops, &xi, &xi).unwrap() - l2).abs() <= 1e-12 * l2);
        let m = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
        let combo = e1.scale(2.0).axpy(-3.0, &e2).unwrap();
        let lhs = m.weak_rhs(&ops, &xi, &combo).unwrap();
        let rhs =
            2.0 * m.weak_rhs(&ops, &xi, &e1).unwrap() - 3.0 * m.weak_rhs(&ops, &xi, &e2).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        assert!(m.weak_rhs(&ops, &xi, &ops.zeros(2)).is_err());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let ops = ops();
        for m in [
            NonlinearityModel::power(3.0).unwrap(),
            NonlinearityModel::shifted_power(0.5, 2.5).unwrap(),
            NonlinearityModel::power(4.0).unwrap(),
        ] {
            let xi = random(&ops, 1, 5);
            let eta = random(&ops, 1, 6);
            let h = 1e-5 * (1.0 + xi.values().norm());
            let fp = m.functional(&ops, &xi.axpy(h, &eta).unwrap()).unwrap();
            let fm = m.functional(&ops, &xi.axpy(-h, &eta).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = 2.0 * m.weak_rhs(&ops, &xi, &eta).unwrap();
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "{fd} {an}");
        }
    }

    #[test]
    fn perturbation() {
        let ops = ops();
        let m = NonlinearityModel::power(3.0).unwrap();
        let me = m.perturb(0.1).unwrap();
        assert_eq!(me.df(0.0), 0.1);
        assert_eq!(me.mass(), MassModel::PositiveMass { epsilon: 0.1 });
        let xi = random(&ops, 1, 7);
        let lhs = me.functional(&ops, &xi).unwrap();
        let rhs = m.functional(&ops, &xi).unwrap() + 0.1 * ops.l2_inner(&xi, &xi).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs);
        for t in [0.0, 0.3, 7.0] {
            assert!(((me.f(t) - m.f(t)) - 0.1 * t).abs() <= 1e-12 * (1.0 + t));
        }
        assert!(m.perturb(0.0).is_err());
        assert_eq!(me.unperturbed().mass(), MassModel::ZeroMass);
    }

    #[test]
    fn hypothesis_audits() {
        let quad = NonlinearityModel::shifted_power(1.0, 4.0).unwrap();
        let r = audit_hypotheses(&quad, 1e4, 2000, 1);
        assert!(r.f1.pass && r.f2.pass && r.f3.pass, "{r:?}");
        assert!(!r.f1_tilde.pass);
        let pw = NonlinearityModel::power(3.0).unwrap();
        let r = audit_hypotheses(&pw, 1e4, 2000, 1);
        assert!(!r.f1.pass && r.f1_tilde.pass && r.f2.pass && r.f3.pass && r.f4.pass);
        assert!((r.f4_exponent - 3.0).abs() < 1e-9);
        assert!((r.increasing_constants.0 - 1.0).abs() < 1e-12);
        // the linear shift lowers the exponent of the tail condition below p
        let sh = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
        let r = audit_hypotheses(&sh, 1e4, 2000, 1);
        assert!(!r.f4.pass);
        assert!(r.f4_exponent > 2.0 && r.f4_exponent < 3.0);
        let lin = audit_hypotheses(&NonlinearityModel::linear(), 1e4, 500, 1);
        assert!(!lin.f2.pass);
    }

    #[test]
    fn scalar_inequality_examples() {
        assert!((lhs_scalar(0.0, 1.0, 4.0) - 3.0).abs() < 1e-15);
        assert_eq!(lhs_scalar(2.0, 2.0, 3.0), 0.0);
    }

    #[test]
    fn appendix_audit_small() {
        let r = audit_appendix_inequality(3.0, 2, 4000, 1);
        assert!(r.pass, "{r:?}");
        assert!(r.empirical_infimum > 0.0 && r.grid_infimum > 0.0);
    }

    #[test]
    fn cellwise_convexity_positive_for_power() {
        let ops = ops();
        let m = NonlinearityModel::power(3.0).unwrap();
        for s in 0..5 {
            let x = random(&ops, 1, 10 + s);
            let y = random(&ops, 1, 20 + s);
            assert!(cellwise_convexity_ratio(&m, &ops, &x, &y).unwrap() > 0.0);
        }
    }

    #[test]
    fn custom_model_matches_builtin() {
        let c = NonlinearityModel::custom(
            "cubic_half",
            3.0,
            MassModel::ZeroMass,
            Arc::new(|t: f64| t.powf(1.5)),
            Arc::new(|t: f64| 1.5 * t.sqrt()),
            Arc::new(|t: f64| 0.75 / t.sqrt()),
        )
        .unwrap();
        let b = NonlinearityModel::power(3.0).unwrap();
        for t in [0.0, 0.5, 3.0] {
            assert_eq!(c.f(t), b.f(t));
            assert_eq!(c.df(t), b.df(t));
        }
        let (a, bb) = c.upper_growth(1e4, 1000);
        assert!((a - 1.0).abs() < 1e-12 && bb < 1e-12);
    }
}
