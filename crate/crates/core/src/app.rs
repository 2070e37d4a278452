//! Command implementations behind the `hodge-maxwell` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::continuation::{continuation_frames, run_schedule, verify_limit, LimitRecord};
use crate::dec::DecOps;
use crate::error::{Error, Result};
use crate::inner::InnerProblem;
use crate::io::{cochain_hash, read_cochain, spectrum_csv, to_json, write_atomic, write_cochain};
use crate::mesh::{build_flat_torus, build_sphere, load_mesh, SimplicialComplex};
use crate::nonlinearity::{
    audit_appendix_inequality, audit_hypotheses, HypothesisReport, InequalityAuditReport,
    MassModel, ModelDescriptor,
};
use crate::reduced::{weak_residual, ReducedProblem};
use crate::saddle::{
    frames_for_targets, level_frames, Band, BandConstants, LinkingFrame, Provenance, SaddleSearch,
};
use crate::spectral::{eigensolve_w, HodgeSpaces};

#[derive(Parser, Debug)]
#[command(
    name = "hodge-maxwell",
    version,
    about = "Multiple weak solutions of d*d xi = f'(|xi|^2) xi on closed triangulated manifolds"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print simplex counts, Betti numbers, Euler characteristic and volumes.
    MeshInfo(MeshArgs),
    /// Eigenpairs of the restricted Hodge Laplacian on W, as CSV.
    Spectrum(RunArgs),
    /// Hypothesis audit of the nonlinearity and the pointwise inequality audit.
    Audit(RunArgs),
    /// Critical points of the positive-mass problem.
    Solve(RunArgs),
    /// Zero-mass continuation in epsilon with limit verification.
    Continue(RunArgs),
    /// Weak residual of a stored cochain.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    /// Flat torus of dimension N with RES cells per side.
    #[arg(long, num_args = 2, value_names = ["N", "RES"])]
    pub torus: Option<Vec<usize>>,
    /// Icosahedral sphere with SUB subdivisions.
    #[arg(long, value_name = "SUB")]
    pub sphere: Option<usize>,
    /// Mesh file.
    #[arg(long, value_name = "FILE")]
    pub mesh: Option<PathBuf>,
    /// Run configuration; its [mesh] section is used.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Output directory, overriding [output] dir.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of eigenpairs (spectrum only; default all).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Cochain file holding β in W.
    #[arg(long, value_name = "FILE")]
    pub cochain: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    /// ε′ of the inner problem when the model has zero mass.
    #[arg(long, default_value_t = 1e-8)]
    pub proxy_epsilon: f64,
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Runs one command; output text goes to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match &cli.command {
        Command::MeshInfo(a) => mesh_info(a, out),
        Command::Spectrum(a) => spectrum(a, out),
        Command::Audit(a) => audit(a, out),
        Command::Solve(a) => solve(a, out),
        Command::Continue(a) => continue_cmd(a, out),
        Command::Verify(a) => verify(a, out),
    }
}

struct Context {
    config: RunConfig,
    config_hash: String,
    ops: Arc<DecOps>,
    out_dir: PathBuf,
}

impl Context {
    fn new(args: &RunArgs) -> Result<Self> {
        Self::from_path(&args.config, args.out.clone())
    }

    fn from_path(path: &Path, out: Option<PathBuf>) -> Result<Self> {
        let config = RunConfig::load(path)?;
        config.validate()?;
        let complex = config.mesh.build()?;
        config.validate_for_mesh(complex.dim())?;
        let ops = Arc::new(DecOps::new(Arc::new(complex))?);
        let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output.dir));
        Ok(Context {
            config_hash: config.hash()?,
            config,
            ops,
            out_dir,
        })
    }

    fn mesh_hash(&self) -> String {
        self.ops.complex().hash().to_string()
    }

    fn spaces(&self) -> Result<HodgeSpaces> {
        HodgeSpaces::new(self.ops.clone(), self.config.problem.degree)
    }
}

fn mesh_info(a: &MeshArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let complex: SimplicialComplex = match (&a.torus, a.sphere, &a.mesh, &a.config) {
        (Some(t), None, None, None) => build_flat_torus(t[0], t[1])?,
        (None, Some(s), None, None) => build_sphere(s)?,
        (None, None, Some(p), None) => load_mesh(p)?,
        (None, None, None, Some(c)) => RunConfig::load(c)?.mesh.build()?,
        _ => {
            return Err(Error::Config(
                "mesh-info needs exactly one of --torus, --sphere, --mesh, --config".into(),
            ))
        }
    };
    let join = |v: Vec<String>| v.join("/");
    writeln!(out, "dimension {}", complex.dim())?;
    writeln!(
        out,
        "counts {}",
        join(complex.counts().iter().map(|c| c.to_string()).collect())
    )?;
    writeln!(
        out,
        "betti {}",
        join(
            complex
                .betti_numbers()
                .iter()
                .map(|c| c.to_string())
                .collect()
        )
    )?;
    writeln!(
        out,
        "euler_characteristic {}",
        complex.euler_characteristic()
    )?;
    let vols: Vec<String> = (0..=complex.dim())
        .map(|k| format!("{:.16e}", complex.volumes(k).iter().sum::<f64>()))
        .collect();
    writeln!(out, "volumes {}", vols.join(" "))?;
    writeln!(out, "mesh_hash {}", complex.hash())?;
    Ok(())
}

#[derive(Serialize)]
struct RunProvenance {
    command: &'static str,
    config_hash: String,
    mesh_hash: String,
}

fn provenance(cmd: &'static str, ctx: &Context) -> RunProvenance {
    RunProvenance {
        command: cmd,
        config_hash: ctx.config_hash.clone(),
        mesh_hash: ctx.mesh_hash(),
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    #[serde(flatten)]
    provenance: RunProvenance,
    degree: usize,
    truncation: usize,
    harmonic_count: usize,
    coexact_dimension: usize,
    complete: bool,
    clusters: usize,
    orthonormality: f64,
    eigen_residual: f64,
    harmonic_residual: f64,
    spectrum_file: String,
    harmonic_files: Vec<String>,
}

fn spectrum(a: &RunArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let ctx = Context::new(a)?;
    let k = ctx.config.problem.degree;
    let basis = eigensolve_w(&ctx.ops, k, a.count)?;
    let diag = basis.diagnostics(&ctx.ops)?;
    write_atomic(
        &ctx.out_dir.join("spectrum.csv"),
        &spectrum_csv(&basis, &ctx.ops)?,
    )?;
    let mut harmonic_files = Vec::new();
    for j in 0..basis.harmonic_count() {
        let name = format!("harmonic_{j}.cochain");
        write_cochain(
            &ctx.out_dir.join(&name),
            &basis.harmonic(j),
            &ctx.mesh_hash(),
        )?;
        harmonic_files.push(name);
    }
    let summary = SpectrumSummary {
        provenance: provenance("spectrum", &ctx),
        degree: k,
        truncation: basis.truncation(),
        harmonic_count: basis.harmonic_count(),
        coexact_dimension: basis.coexact_dimension,
        complete: basis.is_complete(),
        clusters: basis.clusters().len(),
        orthonormality: diag.orthonormality,
        eigen_residual: diag.eigen_residual,
        harmonic_residual: diag.harmonic_residual,
        spectrum_file: "spectrum.csv".into(),
        harmonic_files,
    };
    let text = to_json(&summary)?;
    write_atomic(&ctx.out_dir.join("spectrum.json"), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct AuditSummary {
    #[serde(flatten)]
    provenance: RunProvenance,
    hypotheses: HypothesisReport,
    inequality: Vec<InequalityAuditReport>,
}

fn audit(a: &RunArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let ctx = Context::new(a)?;
    let m = &ctx.config.model;
    let model = m.build()?;
    let hypotheses = audit_hypotheses(&model, m.t_max_audit, m.samples, ctx.config.seed);
    let inequality = if m.family == "linear" {
        Vec::new()
    } else {
        (1..=4)
            .map(|dim| audit_appendix_inequality(m.p, dim, m.samples, ctx.config.seed))
            .collect()
    };
    let summary = AuditSummary {
        provenance: provenance("audit", &ctx),
        hypotheses,
        inequality,
    };
    let text = to_json(&summary)?;
    write_atomic(&ctx.out_dir.join("audit.json"), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct FrameSummary {
    level: usize,
    target: f64,
    mu: f64,
    rho: f64,
    s: f64,
    lambda_k: f64,
    k_constant: f64,
    dim_minus: usize,
    codim_plus: usize,
    multiplicity: usize,
    band: Band,
}

fn frame_summary(level: usize, f: &LinkingFrame) -> FrameSummary {
    FrameSummary {
        level,
        target: f.target,
        mu: f.mu,
        rho: f.rho,
        s: f.s,
        lambda_k: f.lambda_k,
        k_constant: f.k_constant,
        dim_minus: f.dim_minus(),
        codim_plus: f.codim_plus(),
        multiplicity: f.multiplicity(),
        band: f.band,
    }
}

#[derive(Serialize)]
struct RecordSummary {
    level: usize,
    band: Band,
    j_value: f64,
    residual: f64,
    gradient_norm: f64,
    cochain_file: String,
    beta_hash: String,
    seed: usize,
    iterations: usize,
    paired: bool,
    provenance: Provenance,
}

#[derive(Serialize)]
struct SolveSummary {
    #[serde(flatten)]
    provenance: RunProvenance,
    model: ModelDescriptor,
    frames: Vec<FrameSummary>,
    requested: usize,
    delivered: usize,
    failures: Vec<String>,
    records: Vec<RecordSummary>,
}

fn build_frames(
    ctx: &Context,
    prob: &ReducedProblem,
    spaces: &HodgeSpaces,
    constants: &BandConstants,
) -> Result<Vec<LinkingFrame>> {
    let c = &ctx.config;
    let emb =
        spaces.estimate_embedding(c.model.p, c.frames.s, c.frames.embedding_probes, c.seed)?;
    if c.frames.targets.is_empty() {
        level_frames(
            prob,
            emb.s,
            c.frames.count,
            constants,
            c.frames.separation,
            c.seed,
        )
    } else {
        frames_for_targets(prob, &emb, constants, &c.frames.targets, c.seed)
    }
}

fn solve(a: &RunArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let ctx = Context::new(a)?;
    let model = ctx.config.model.build()?;
    if model.mass() == MassModel::ZeroMass {
        return Err(Error::Config(
            "solve needs a positive-mass model (family shifted_power); use continue for zero mass"
                .into(),
        ));
    }
    let spaces = ctx.spaces()?;
    let prob = ReducedProblem::new(&spaces, model.clone(), ctx.config.inner_config());
    let constants = BandConstants::from_model(&prob);
    let frames = build_frames(&ctx, &prob, &spaces, &constants)?;
    if frames.is_empty() {
        return Err(Error::Truncation(
            "no frame with a positive separated band".into(),
        ));
    }
    let search = SaddleSearch::new(&prob, ctx.config.saddle_config());
    let report = search.collect_multiple(&frames)?;
    let mut records = Vec::new();
    for r in &report.records {
        let name = format!(
            "solution_l{}_s{}{}.cochain",
            r.level,
            r.seed,
            if r.paired { "_neg" } else { "" }
        );
        write_cochain(&ctx.out_dir.join(&name), &r.beta, &ctx.mesh_hash())?;
        records.push(RecordSummary {
            level: r.level,
            band: r.band,
            j_value: r.value,
            residual: r.residual,
            gradient_norm: r.gradient_norm,
            cochain_file: name,
            beta_hash: cochain_hash(&r.beta),
            seed: r.seed,
            iterations: r.iterations,
            paired: r.paired,
            provenance: r.provenance,
        });
    }
    let summary = SolveSummary {
        provenance: provenance("solve", &ctx),
        model: model.descriptor(),
        frames: frames
            .iter()
            .enumerate()
            .map(|(i, f)| frame_summary(i, f))
            .collect(),
        requested: report.requested,
        delivered: report.delivered,
        failures: report.failures.clone(),
        records,
    };
    let text = to_json(&summary)?;
    write_atomic(&ctx.out_dir.join("solve.json"), &text)?;
    out.write_all(text.as_bytes())?;
    if report.delivered == 0 {
        return Err(Error::Stagnation(format!(
            "no critical point found: {}",
            report.failures.join("; ")
        )));
    }
    if report.delivered < report.requested {
        log::warn!(
            "under-delivery: {} of {} requested critical points",
            report.delivered,
            report.requested
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceSummary {
    level: usize,
    band: Band,
    steps: usize,
    converged: bool,
    broken: Option<String>,
    sandwich_ok: bool,
    band_ok: bool,
    max_residual: f64,
    final_lp_increment: Option<f64>,
    trace_file: String,
    limit_file: Option<String>,
    limit: Option<LimitRecord>,
    limit_error: Option<String>,
}

#[derive(Serialize)]
struct ContinueSummary {
    #[serde(flatten)]
    provenance: RunProvenance,
    model: ModelDescriptor,
    frames: Vec<FrameSummary>,
    traces: Vec<TraceSummary>,
}

fn continue_cmd(a: &RunArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let ctx = Context::new(a)?;
    let model = ctx.config.model.build()?;
    if model.mass() != MassModel::ZeroMass {
        return Err(Error::Config(
            "continue needs a zero-mass model (family power)".into(),
        ));
    }
    let spaces = ctx.spaces()?;
    let inner = ctx.config.inner_config();
    let schedule = ctx.config.schedule();
    let c = &ctx.config;
    let frames = if c.frames.targets.is_empty() {
        let emb =
            spaces.estimate_embedding(c.model.p, c.frames.s, c.frames.embedding_probes, c.seed)?;
        continuation_frames(
            &spaces,
            &model,
            &schedule,
            emb.s,
            c.frames.count,
            &inner,
            c.seed,
        )?
    } else {
        let prob = ReducedProblem::new(&spaces, model.perturb(schedule.epsilon0)?, inner.clone());
        let constants = BandConstants::from_model(&prob);
        build_frames(&ctx, &prob, &spaces, &constants)?
    };
    let traces = run_schedule(&spaces, &model, &schedule, &frames, &inner)?;
    let mut summaries = Vec::new();
    let mut all_ok = true;
    for t in &traces {
        let trace_file = format!("trace_l{}.csv", t.level);
        write_atomic(&ctx.out_dir.join(&trace_file), &t.to_csv())?;
        let (limit, limit_error, limit_file) = match verify_limit(&spaces, &model, t, &inner) {
            Ok(l) => {
                let name = format!("limit_l{}.cochain", t.level);
                write_cochain(
                    &ctx.out_dir.join(&name),
                    &t.last().expect("converged trace has steps").beta,
                    &ctx.mesh_hash(),
                )?;
                all_ok &= l.pass;
                (Some(l), None, Some(name))
            }
            Err(e) => {
                all_ok = false;
                (None, Some(e.to_string()), None)
            }
        };
        summaries.push(TraceSummary {
            level: t.level,
            band: t.band,
            steps: t.steps.len(),
            converged: t.converged,
            broken: t.broken.clone(),
            sandwich_ok: t.sandwich_ok(),
            band_ok: t.band_ok(),
            max_residual: t.steps.iter().map(|s| s.residual).fold(0.0, f64::max),
            final_lp_increment: t.last().and_then(|s| s.lp_increment),
            trace_file,
            limit_file,
            limit,
            limit_error,
        });
    }
    let summary = ContinueSummary {
        provenance: provenance("continue", &ctx),
        model: model.descriptor(),
        frames: frames
            .iter()
            .enumerate()
            .map(|(i, f)| frame_summary(i, f))
            .collect(),
        traces: summaries,
    };
    let text = to_json(&summary)?;
    write_atomic(&ctx.out_dir.join("continue.json"), &text)?;
    out.write_all(text.as_bytes())?;
    if !all_ok {
        return Err(Error::Continuation(
            "at least one trace failed limit verification".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifySummary {
    #[serde(flatten)]
    provenance: RunProvenance,
    cochain_hash: String,
    degree: usize,
    inner_epsilon: f64,
    j_value: f64,
    residual: f64,
    tolerance: f64,
    trivial: bool,
    pass: bool,
    checks: BTreeMap<&'static str, bool>,
}

fn verify(a: &VerifyArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let ctx = Context::from_path(&a.config, None)?;
    let spaces = ctx.spaces()?;
    let beta = read_cochain(&a.cochain, &ctx.ops)?;
    if beta.degree() != spaces.degree() {
        return Err(Error::DegreeMismatch {
            left: beta.degree(),
            right: spaces.degree(),
        });
    }
    let coclosed = spaces.w_coefficients(&beta).is_ok();
    let model = ctx.config.model.build()?;
    let (inner_model, inner_epsilon) = if model.mass() == MassModel::ZeroMass {
        (model.perturb(a.proxy_epsilon)?, a.proxy_epsilon)
    } else {
        (model.clone(), 0.0)
    };
    let xi = InnerProblem::new(&spaces, &inner_model)
        .phi(&beta, &ctx.config.inner_config())?
        .xi;
    let base = &model;
    let ops = spaces.ops();
    let residual = weak_residual(base, ops, &xi, None, 0)?;
    let db = ops.exterior_derivative(&beta)?;
    let j_value = ops.l2_inner(&db, &db)? - base.functional(ops, &xi)?;
    let trivial = beta.values().amax() == 0.0;
    let residual_ok = residual <= a.tolerance;
    let mut checks = BTreeMap::new();
    checks.insert("coclosed", coclosed);
    checks.insert("residual", residual_ok);
    let summary = VerifySummary {
        provenance: provenance("verify", &ctx),
        cochain_hash: cochain_hash(&beta),
        degree: beta.degree(),
        inner_epsilon,
        j_value,
        residual,
        tolerance: a.tolerance,
        trivial,
        pass: residual_ok && coclosed,
        checks,
    };
    out.write_all(to_json(&summary)?.as_bytes())?;
    if !summary.pass {
        return Err(Error::Stagnation(format!(
            "verification failed: residual {residual:.3e} (tolerance {:.1e}), coclosed {coclosed}",
            a.tolerance
        )));
    }
    Ok(())
}
