//! TOML run configuration with sections `[mesh] [problem] [model] [solver]
//! [frames] [schedule] [output]` and a top-level `seed`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::ContinuationSchedule;
use crate::error::{Error, Result};
use crate::inner::InnerSolveConfig;
use crate::io::sha256_hex;
use crate::mesh::{build_flat_torus, build_sphere, load_mesh, SimplicialComplex};
use crate::nonlinearity::NonlinearityModel;
use crate::saddle::SaddleConfig;
use crate::spectral::check_exponent_window;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// `[n, resolution]`
    pub torus: Option<[usize; 2]>,
    pub sphere: Option<usize>,
    pub file: Option<String>,
}

impl MeshConfig {
    pub fn build(&self) -> Result<SimplicialComplex> {
        match (self.torus, self.sphere, &self.file) {
            (Some([n, r]), None, None) => build_flat_torus(n, r),
            (None, Some(s), None) => build_sphere(s),
            (None, None, Some(f)) => load_mesh(Path::new(f)),
            _ => Err(Error::Config(
                "[mesh] needs exactly one of torus, sphere, file".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub degree: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { degree: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `power`, `shifted_power` or `linear`.
    pub family: String,
    pub p: f64,
    pub epsilon: f64,
    pub t_max_audit: f64,
    pub samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: "shifted_power".into(),
            p: 3.0,
            epsilon: 1.0,
            t_max_audit: 1e4,
            samples: 20_000,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<NonlinearityModel> {
        match self.family.as_str() {
            "power" => NonlinearityModel::power(self.p),
            "shifted_power" => NonlinearityModel::shifted_power(self.epsilon, self.p),
            "linear" => Ok(NonlinearityModel::linear()),
            other => Err(Error::Config(format!(
                "model family must be power, shifted_power or linear, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inner_tolerance: f64,
    pub inner_relative_tolerance: f64,
    pub inner_max_steps: usize,
    pub residual_tolerance: f64,
    pub max_newton_steps: usize,
    pub per_frame: usize,
    pub distinct_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let inner = InnerSolveConfig::default();
        let saddle = SaddleConfig::default();
        SolverConfig {
            inner_tolerance: inner.tolerance,
            inner_relative_tolerance: inner.relative_tolerance,
            inner_max_steps: inner.max_steps,
            residual_tolerance: saddle.residual_tolerance,
            max_newton_steps: saddle.max_newton_steps,
            per_frame: saddle.per_frame,
            distinct_threshold: saddle.distinct_threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FramesConfig {
    /// Number of frames at spectral gaps, used when `targets` is empty.
    pub count: usize,
    /// Explicit target levels C_i.
    pub targets: Vec<f64>,
    /// Sobolev order; defaults to `n(1/2 − 1/p)` nudged into (0, 1).
    pub s: Option<f64>,
    /// Each band must start above this multiple of the previous band's top.
    pub separation: f64,
    pub embedding_probes: usize,
}

impl Default for FramesConfig {
    fn default() -> Self {
        FramesConfig {
            count: 2,
            targets: Vec::new(),
            s: None,
            separation: 1.05,
            embedding_probes: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epsilon0: f64,
    pub ratio: f64,
    pub max_steps: usize,
    pub limit_tolerance: f64,
    pub residual_target: f64,
    pub window: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = ContinuationSchedule::default();
        ScheduleConfig {
            epsilon0: s.epsilon0,
            ratio: s.ratio,
            max_steps: s.max_steps,
            limit_tolerance: s.limit_tolerance,
            residual_target: s.residual_target,
            window: s.window,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub frames: FramesConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form, defaults filled in.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    /// Checks everything that does not need the mesh geometry.
    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        let sources =
            m.torus.is_some() as usize + m.sphere.is_some() as usize + m.file.is_some() as usize;
        if sources != 1 {
            return Err(Error::Config(
                "[mesh] needs exactly one of torus, sphere, file".into(),
            ));
        }
        self.model.build()?;
        if self.model.family != "linear" && self.model.samples < 10 {
            return Err(Error::Config("model samples must be at least 10".into()));
        }
        if !(self.model.t_max_audit > 0.0) {
            return Err(Error::Config("model t_max_audit must be positive".into()));
        }
        self.inner_config().validate()?;
        let s = &self.solver;
        if !(s.residual_tolerance > 0.0) || s.per_frame == 0 || !(s.distinct_threshold > 0.0) {
            return Err(Error::Config(
                "solver needs residual_tolerance > 0, per_frame >= 1 and distinct_threshold > 0"
                    .into(),
            ));
        }
        let f = &self.frames;
        if f.targets.is_empty() && f.count == 0 {
            return Err(Error::Config(
                "frames needs count >= 1 or a targets list".into(),
            ));
        }
        if f.targets.windows(2).any(|w| w[1] <= w[0]) || f.targets.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config(
                "frame targets must be positive and strictly increasing".into(),
            ));
        }
        if let Some(s) = f.s {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!(
                    "frames s must lie in (0, 1), got {s}"
                )));
            }
        }
        if !(f.separation >= 1.0) {
            return Err(Error::Config("frames separation must be at least 1".into()));
        }
        self.schedule().validate()?;
        Ok(())
    }

    /// Checks that need the manifold dimension.
    pub fn validate_for_mesh(&self, n: usize) -> Result<()> {
        let k = self.problem.degree;
        if k < 1 || k + 1 > n {
            return Err(Error::Config(format!(
                "degree k = {k} violates 1 <= k <= n-1 for n = {n}"
            )));
        }
        if self.model.family != "linear" {
            check_exponent_window(self.model.p, n)?;
        }
        Ok(())
    }

    pub fn inner_config(&self) -> InnerSolveConfig {
        InnerSolveConfig {
            tolerance: self.solver.inner_tolerance,
            relative_tolerance: self.solver.inner_relative_tolerance,
            max_steps: self.solver.inner_max_steps,
            ..InnerSolveConfig::default()
        }
    }

    pub fn saddle_config(&self) -> SaddleConfig {
        SaddleConfig {
            residual_tolerance: self.solver.residual_tolerance,
            max_newton_steps: self.solver.max_newton_steps,
            per_frame: self.solver.per_frame,
            distinct_threshold: self.solver.distinct_threshold,
            ..SaddleConfig::default()
        }
    }

    pub fn schedule(&self) -> ContinuationSchedule {
        let s = &self.schedule;
        ContinuationSchedule {
            epsilon0: s.epsilon0,
            ratio: s.ratio,
            max_steps: s.max_steps,
            limit_tolerance: s.limit_tolerance,
            residual_target: s.residual_target,
            window: s.window,
            saddle: self.saddle_config(),
        }
    }
}
