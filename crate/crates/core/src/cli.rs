//! The `flagwave` command line: argument parsing, run logging, exit codes and
//! the per-command pipelines.
//!
//! Exit status is 0 when every assertion of the command holds, 1 when one
//! fails and 2 for configuration or input errors. Every run writes
//! `<command>_report.json`; failing runs also write `failure.json`. Only
//! `run.log` carries timestamps.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atomic::{
    decompose, read_decomposition, reconstruct, synthetic_atom, validate_atom, write_decomposition,
    AtomTolerances, AtomValidationReport,
};
use crate::config::{kernel_pair, schema_json, Resolved, RunConfig};
use crate::dyadic::{log2_points, DyadicRectangle, OpenSet};
use crate::error::{FlagError, Result};
use crate::gridio::{read_grid, write_grid};
use crate::harness::{
    gen_corpus, identity_suite, inadmissible_mass, journe_csv, journe_experiment, norm_table,
    pp_check, write_norm_table, CorpusMember,
};
use crate::lattice::{l2_norm, relative_l2_error, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Spectral identity suite on leading corpus members.
    Selftest,
    /// Write the corpus as grid-function files.
    Corpus,
    /// Nine-norm comparison table.
    Norms,
    /// Sampled sup/inf comparison with the configured kernel.
    Pp,
    /// Atomic decomposition of the input or of a corpus member.
    Decompose,
    /// Validate the atoms of a written decomposition and synthetic atoms.
    Validate,
    /// Resynthesize a written decomposition and compare with its source.
    Reconstruct,
    /// Covering sums over random open sets.
    Journe,
    /// Write the config schema and the default config.
    Schema,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Selftest => "selftest",
            Command::Corpus => "corpus",
            Command::Norms => "norms",
            Command::Pp => "pp",
            Command::Decompose => "decompose",
            Command::Validate => "validate",
            Command::Reconstruct => "reconstruct",
            Command::Journe => "journe",
            Command::Schema => "schema",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "flagwave",
    version,
    about = "Flag Littlewood-Paley experiments on periodized grids"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Run configuration (JSON). Required by every command except `schema`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    /// `"<="`, `">="` or `"holds"`.
    pub relation: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl Assertion {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=",
            limit,
            passed: value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=",
            limit,
            passed: value >= limit,
        }
    }

    pub fn holds(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            value: f64::from(u8::from(passed)),
            relation: "holds",
            limit: 1.0,
            passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Failure<'a> {
    command: &'a str,
    exit_code: i32,
    kind: &'a str,
    message: String,
    failed_assertions: Vec<&'a Assertion>,
}

/// Errors that point at the configuration or the input files.
fn is_config_error(e: &FlagError) -> bool {
    matches!(
        e,
        FlagError::Config(_)
            | FlagError::InvalidLattice(_)
            | FlagError::InvalidScaleGrid(_)
            | FlagError::InvalidCorpus(_)
            | FlagError::InvalidLevelRange { .. }
            | FlagError::ShapeMismatch { .. }
            | FlagError::LatticeMismatch
            | FlagError::Format(_)
            | FlagError::Io(_)
            | FlagError::Json(_)
    )
}

struct RunLog {
    path: PathBuf,
}

impl RunLog {
    fn line(&self, msg: &str) {
        let stamp = humantime::format_rfc3339_millis(SystemTime::now());
        if let Ok(mut file) = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
        {
            let _ = writeln!(file, "{stamp} {msg}");
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if cli.command == Command::Schema {
        return run_schema(cli);
    }
    let command = cli.command.name();
    let loaded = match &cli.config {
        Some(path) => RunConfig::load(path),
        None => Err(FlagError::Config("--config <path> is required".into())),
    };
    let mut config = match loaded {
        Ok(c) => c,
        Err(e) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            return fail(&out, command, 2, "config", e.to_string(), &[]);
        }
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    let out = config.output_dir.clone();
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("flagwave: cannot create {}: {e}", out.display());
        return 2;
    }
    let log = RunLog {
        path: out.join("run.log"),
    };
    log.line(&format!(
        "start {command} config={} seed={} workers={}",
        cli.config
            .as_deref()
            .map(Path::display)
            .map(|d| d.to_string())
            .unwrap_or_default(),
        config.seed,
        config.workers
    ));
    let started = Instant::now();
    let code = match config.resolve() {
        Err(e) => fail(&out, command, 2, "config", e.to_string(), &[]),
        Ok(resolved) => execute(cli.command, &resolved, &out),
    };
    log.line(&format!(
        "finish {command} exit={code} elapsed={}",
        humantime::format_duration(round_ms(started))
    ));
    code
}

fn round_ms(started: Instant) -> std::time::Duration {
    std::time::Duration::from_millis(started.elapsed().as_millis() as u64)
}

fn execute(command: Command, resolved: &Resolved, out: &Path) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.config.workers)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            return fail(
                out,
                command.name(),
                2,
                "config",
                format!("thread pool: {e}"),
                &[],
            )
        }
    };
    match pool.install(|| pipeline(command, resolved, out)) {
        Err(e) => {
            let (code, kind) = if is_config_error(&e) {
                (2, "config")
            } else {
                (1, "error")
            };
            fail(out, command.name(), code, kind, e.to_string(), &[])
        }
        Ok(report) => {
            if let Err(e) = write_json(
                &out.join(format!("{}_report.json", report.command)),
                &report,
            ) {
                return fail(out, command.name(), 2, "config", e.to_string(), &[]);
            }
            for a in &report.assertions {
                let mark = if a.passed { "ok  " } else { "FAIL" };
                println!(
                    "{mark} {} = {:e} ({} {:e})",
                    a.name, a.value, a.relation, a.limit
                );
            }
            if report.passed {
                let _ = fs::remove_file(out.join("failure.json"));
                0
            } else {
                let failed: Vec<&Assertion> =
                    report.assertions.iter().filter(|a| !a.passed).collect();
                let names: Vec<&str> = failed.iter().map(|a| a.name.as_str()).collect();
                fail(
                    out,
                    command.name(),
                    1,
                    "assertion",
                    format!("failed: {}", names.join(", ")),
                    &failed,
                )
            }
        }
    }
}

fn fail(
    out: &Path,
    command: &str,
    code: i32,
    kind: &str,
    message: String,
    failed: &[&Assertion],
) -> i32 {
    eprintln!("flagwave {command}: {message}");
    let failure = Failure {
        command,
        exit_code: code,
        kind,
        message,
        failed_assertions: failed.to_vec(),
    };
    if fs::create_dir_all(out).is_ok() {
        let _ = write_json(&out.join("failure.json"), &failure);
    }
    code
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run_schema(cli: &Cli) -> i32 {
    let Some(out) = &cli.out else {
        print!("{}", schema_json());
        return 0;
    };
    let written = fs::create_dir_all(out)
        .map_err(FlagError::from)
        .and_then(|_| fs::write(out.join("schema.json"), schema_json()).map_err(FlagError::from))
        .and_then(|_| RunConfig::default().to_json())
        .and_then(|text| fs::write(out.join("default.json"), text).map_err(FlagError::from));
    match written {
        Ok(()) => 0,
        Err(e) => fail(out, "schema", 2, "config", e.to_string(), &[]),
    }
}

fn pipeline(command: Command, r: &Resolved, out: &Path) -> Result<Report> {
    let mut artifacts = Vec::new();
    let assertions = match command {
        Command::Selftest => selftest(r, out, &mut artifacts)?,
        Command::Corpus => corpus(r, out, &mut artifacts)?,
        Command::Norms => norms(r, out, &mut artifacts)?,
        Command::Pp => pp(r, out, &mut artifacts)?,
        Command::Decompose => decompose_cmd(r, out, &mut artifacts)?,
        Command::Validate => validate_cmd(r, out, &mut artifacts)?,
        Command::Reconstruct => reconstruct_cmd(r, out, &mut artifacts)?,
        Command::Journe => journe(r, out, &mut artifacts)?,
        Command::Schema => unreachable!("handled before configuration"),
    };
    Ok(Report {
        command: command.name(),
        passed: assertions.iter().all(|a| a.passed),
        assertions,
        artifacts,
    })
}

fn corpus_members(r: &Resolved) -> Result<Vec<CorpusMember>> {
    gen_corpus(&r.corpus, &r.lattice)
}

fn member_label(m: &CorpusMember) -> String {
    format!("{}_{}", m.family.name(), m.index)
}

fn selftest(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let per_family = r.config.selftest.members_per_family;
    let members = corpus_members(r)?;
    let chosen: Vec<(usize, &CorpusMember)> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.index < per_family)
        .collect();
    if chosen.is_empty() {
        return Err(FlagError::Config(
            "selftest selects no corpus member".into(),
        ));
    }
    let tol = &r.config.assertions.identities;
    let mut checks = Vec::new();
    let mut csv = String::from("check,member,label,residual,tolerance,passed\n");
    let mut assertions = Vec::new();
    for (pos, m) in chosen {
        for c in identity_suite(&m.f, pos, &r.grid, tol)? {
            writeln!(
                csv,
                "{},{},{},{:e},{:e},{}",
                c.name,
                pos,
                member_label(m),
                c.residual,
                c.tolerance,
                c.passed
            )
            .expect("write to string");
            assertions.push(Assertion::at_most(
                format!("{}[{}]", c.name, member_label(m)),
                c.residual,
                c.tolerance,
            ));
            checks.push(c);
        }
    }
    fs::write(out.join("identities.csv"), csv)?;
    write_json(&out.join("identities.json"), &checks)?;
    artifacts.extend(["identities.csv".into(), "identities.json".into()]);
    Ok(assertions)
}

#[derive(Serialize)]
struct CorpusEntry {
    file: String,
    family: &'static str,
    index: usize,
    l2_norm: f64,
    inadmissible_mass: f64,
}

fn corpus(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let members = corpus_members(r)?;
    let dir = out.join("corpus");
    fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    let mut worst = 0.0f64;
    for m in &members {
        let file = format!("{}.f64", member_label(m));
        write_grid(&dir.join(&file), &m.f, Some("corpus_member"))?;
        let bad = inadmissible_mass(&m.f) / l2_norm(&m.f);
        worst = worst.max(bad);
        artifacts.push(format!("corpus/{file}"));
        entries.push(CorpusEntry {
            file,
            family: m.family.name(),
            index: m.index,
            l2_norm: l2_norm(&m.f),
            inadmissible_mass: bad,
        });
    }
    write_json(&dir.join("manifest.json"), &entries)?;
    artifacts.push("corpus/manifest.json".into());
    Ok(vec![
        Assertion::at_least(
            "corpus_members",
            members.len() as f64,
            r.corpus.len() as f64,
        ),
        Assertion::at_most("max_relative_inadmissible_mass", worst, 1e-12),
    ])
}

fn norms(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let members = corpus_members(r)?;
    let table = norm_table(&members, &r.norm_config())?;
    write_norm_table(out, &table)?;
    artifacts.extend(["norms.csv".into(), "ratios.csv".into(), "norms.json".into()]);
    let positive = table
        .rows
        .iter()
        .all(|row| row.norms.iter().all(|v| v.is_finite() && *v > 0.0));
    Ok(vec![
        Assertion::holds("norms_positive_and_finite", positive),
        Assertion::at_most("c_emp", table.c_emp, r.config.assertions.max_c_emp),
        Assertion::holds(
            "dominations",
            table.rows.iter().all(|row| row.dominations_hold),
        ),
        Assertion::holds(
            "pp_sup_at_least_inf",
            table.rows.iter().all(|row| row.pp_sup >= row.pp_inf),
        ),
    ])
}

#[derive(Serialize)]
struct PpRow {
    label: String,
    sup_norm: f64,
    inf_norm: f64,
    ratio: f64,
}

fn pp(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let members = corpus_members(r)?;
    if members.is_empty() {
        return Err(FlagError::InvalidCorpus("empty corpus".into()));
    }
    let pair = kernel_pair(&r.config.kernel, &r.lattice, &r.grid)?;
    let mut rows = Vec::new();
    let mut csv = String::from("label,sup_norm,inf_norm,ratio\n");
    for m in &members {
        let (sup_norm, inf_norm) = pp_check(&m.f, &pair, &r.grid)?;
        let row = PpRow {
            label: member_label(m),
            sup_norm,
            inf_norm,
            ratio: sup_norm / inf_norm,
        };
        writeln!(
            csv,
            "{},{:e},{:e},{:e}",
            row.label, row.sup_norm, row.inf_norm, row.ratio
        )
        .expect("write to string");
        rows.push(row);
    }
    fs::write(out.join("pp.csv"), csv)?;
    write_json(&out.join("pp.json"), &rows)?;
    artifacts.extend(["pp.csv".into(), "pp.json".into()]);
    let worst = rows.iter().map(|row| row.ratio).fold(0.0, f64::max);
    Ok(vec![
        Assertion::holds(
            "sup_at_least_inf",
            rows.iter().all(|row| row.sup_norm >= row.inf_norm),
        ),
        Assertion::at_most("max_sup_inf_ratio", worst, r.config.assertions.max_pp_ratio),
    ])
}

/// The configured input file, or the configured corpus member.
fn source_function(r: &Resolved) -> Result<(GridFunction, String)> {
    if let Some(path) = &r.config.input {
        let (f, _) = read_grid(path)?;
        if f.lattice() != &r.lattice {
            return Err(FlagError::Config(format!(
                "{} does not live on the configured lattice",
                path.display()
            )));
        }
        return Ok((f, path.display().to_string()));
    }
    let member = r.config.atomic.member;
    let mut members = corpus_members(r)?;
    if member >= members.len() {
        return Err(FlagError::Config(format!(
            "atomic.member = {member} but the corpus has {} members",
            members.len()
        )));
    }
    let m = members.swap_remove(member);
    Ok((m.f.clone(), format!("corpus:{}", member_label(&m))))
}

#[derive(Serialize)]
struct DecomposeSummary {
    source: String,
    source_hash: String,
    level_range: Option<(i32, i32)>,
    levels: usize,
    degenerate_levels: Vec<i32>,
    reconstruction_error: f64,
    s_heat_l1: f64,
    lambda_sum: f64,
    lambda_ratio: f64,
    layer_cake_sum: f64,
    eps_trunc: f64,
    l2_bound: f64,
    max_l2_ratio: f64,
    min_support_mass: f64,
}

const DECOMPOSITION_DIR: &str = "decomposition";

fn decompose_cmd(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let (f, source) = source_function(r)?;
    let dec = decompose(&f, &r.atomic_config())?;
    write_decomposition(&out.join(DECOMPOSITION_DIR), &dec)?;
    artifacts.push(format!("{DECOMPOSITION_DIR}/manifest.json"));
    let summary = DecomposeSummary {
        source,
        source_hash: dec.source_hash.clone(),
        level_range: dec.level_range,
        levels: dec.levels.len(),
        degenerate_levels: dec.degenerate_levels.clone(),
        reconstruction_error: dec.reconstruction_error,
        s_heat_l1: dec.s_heat_l1,
        lambda_sum: dec.lambda_sum,
        lambda_ratio: dec.lambda_sum / dec.s_heat_l1,
        layer_cake_sum: dec.layer_cake_sum,
        eps_trunc: dec.eps_trunc,
        l2_bound: dec.l2_bound,
        max_l2_ratio: dec
            .levels
            .iter()
            .map(|l| l.validation.l2_norm_ratio)
            .fold(0.0, f64::max),
        min_support_mass: dec
            .levels
            .iter()
            .map(|l| l.validation.support_mass_inside)
            .fold(1.0, f64::min),
    };
    write_json(&out.join("decompose.json"), &summary)?;
    artifacts.push("decompose.json".into());
    Ok(vec![
        Assertion::at_most(
            "reconstruction_error",
            dec.reconstruction_error,
            r.config.assertions.max_reconstruction_error,
        ),
        Assertion::at_least(
            "layer_cake_lower",
            dec.layer_cake_sum,
            dec.s_heat_l1 - dec.eps_trunc,
        ),
        Assertion::at_most("layer_cake_upper", dec.layer_cake_sum, 2.0 * dec.s_heat_l1),
        Assertion::holds("atoms_pass", dec.levels.iter().all(|l| l.validation.passed)),
    ])
}

#[derive(Serialize)]
struct ValidationRow {
    kind: &'static str,
    id: i32,
    #[serde(flatten)]
    report: AtomValidationReport,
}

/// Dyadic rectangles with sides between `N/16` and `N/4` cells, anchored at
/// random aligned positions.
fn synthetic_rectangles(r: &Resolved, count: usize) -> Result<Vec<DyadicRectangle>> {
    let k = log2_points(&r.lattice)?;
    if k < 5 {
        return Err(FlagError::Config(
            "synthetic atoms need at least 32 points per axis".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(r.config.seed);
    rng.set_stream(0x5a);
    let n = r.lattice.points_per_axis;
    (0..count)
        .map(|_| {
            let xl = rng.gen_range(k - 4..=k - 2);
            let yl = rng.gen_range(k - 4..=k - 2);
            let anchor: Vec<usize> = (0..r.lattice.dim())
                .map(|axis| {
                    let l = if axis < r.lattice.n { xl } else { yl };
                    rng.gen_range(0..n >> l) << l
                })
                .collect();
            DyadicRectangle::new(&r.lattice, xl, yl, anchor)
        })
        .collect()
}

fn validate_cmd(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let dir = out.join(DECOMPOSITION_DIR);
    if !dir.join("manifest.json").exists() {
        return Err(FlagError::Config(format!(
            "no decomposition at {}; run decompose first",
            dir.display()
        )));
    }
    let dec = read_decomposition(&dir)?;
    let a = r.config.atomic;
    let tol = AtomTolerances {
        max_l2_ratio: a.tolerances.max_l2_ratio.max(dec.l2_bound * (1.0 + 1e-9)),
        ..a.tolerances
    };
    let mut rows = Vec::new();
    for level in &dec.levels {
        let report = validate_atom(&level.atom, &level.omega_tilde, a.m_power, a.dilation, &tol)?;
        rows.push(ValidationRow {
            kind: "decomposition",
            id: level.level,
            report,
        });
    }
    for (i, rect) in synthetic_rectangles(r, a.synthetic_atoms)?
        .iter()
        .enumerate()
    {
        let atom = synthetic_atom(&r.lattice, rect, a.m_power, 0.1)?;
        let omega = OpenSet::from_rectangles(r.lattice, std::slice::from_ref(rect));
        let report = validate_atom(&atom, &omega, a.m_power, a.dilation, &a.tolerances)?;
        rows.push(ValidationRow {
            kind: "synthetic",
            id: i as i32,
            report,
        });
    }
    let mut csv =
        String::from("kind,id,support_mass_inside,l2_norm_ratio,per_rectangle_budget,passed\n");
    for row in &rows {
        let budget = row
            .report
            .per_rectangle_budget
            .map(|b| format!("{b:e}"))
            .unwrap_or_default();
        writeln!(
            csv,
            "{},{},{:e},{:e},{},{}",
            row.kind,
            row.id,
            row.report.support_mass_inside,
            row.report.l2_norm_ratio,
            budget,
            row.report.passed
        )
        .expect("write to string");
    }
    fs::write(out.join("validation.csv"), csv)?;
    write_json(&out.join("validation.json"), &rows)?;
    artifacts.extend(["validation.csv".into(), "validation.json".into()]);
    let of = |kind: &'static str| rows.iter().filter(move |row| row.kind == kind);
    let min_mass = rows
        .iter()
        .map(|row| row.report.support_mass_inside)
        .fold(1.0, f64::min);
    let max_l2 = of("decomposition")
        .map(|row| row.report.l2_norm_ratio)
        .fold(0.0, f64::max);
    Ok(vec![
        Assertion::at_least("min_support_mass", min_mass, a.tolerances.min_support_mass),
        Assertion::at_most("max_decomposition_l2_ratio", max_l2, tol.max_l2_ratio),
        Assertion::holds(
            "decomposition_atoms_pass",
            of("decomposition").all(|row| row.report.passed),
        ),
        Assertion::holds(
            "synthetic_atoms_pass",
            of("synthetic").all(|row| row.report.passed),
        ),
    ])
}

#[derive(Serialize)]
struct ReconstructSummary {
    source: String,
    source_hash: String,
    levels: usize,
    relative_l2_error: f64,
}

fn reconstruct_cmd(
    r: &Resolved,
    out: &Path,
    artifacts: &mut Vec<String>,
) -> Result<Vec<Assertion>> {
    let dir = out.join(DECOMPOSITION_DIR);
    if !dir.join("manifest.json").exists() {
        return Err(FlagError::Config(format!(
            "no decomposition at {}; run decompose first",
            dir.display()
        )));
    }
    let dec = read_decomposition(&dir)?;
    let (f, source) = source_function(r)?;
    let g = reconstruct(&dec, &r.lattice);
    if g.lattice() != f.lattice() {
        return Err(FlagError::LatticeMismatch);
    }
    write_grid(&out.join("reconstruction.f64"), &g, Some("reconstruction"))?;
    let error = relative_l2_error(&g, &f)?;
    let summary = ReconstructSummary {
        source,
        source_hash: dec.source_hash,
        levels: dec.levels.len(),
        relative_l2_error: error,
    };
    write_json(&out.join("reconstruct.json"), &summary)?;
    artifacts.extend([
        "reconstruction.f64".into(),
        "reconstruction.json".into(),
        "reconstruct.json".into(),
    ]);
    Ok(vec![Assertion::at_most(
        "reconstruction_error",
        error,
        r.config.assertions.max_reconstruction_error,
    )])
}

fn journe(r: &Resolved, out: &Path, artifacts: &mut Vec<String>) -> Result<Vec<Assertion>> {
    let rows = journe_experiment(&r.config.journe, &r.lattice, r.config.seed)?;
    fs::write(out.join("journe.csv"), journe_csv(&rows))?;
    write_json(&out.join("journe.json"), &rows)?;
    artifacts.extend(["journe.csv".into(), "journe.json".into()]);
    let worst = rows
        .iter()
        .map(|row| row.gamma1.max(row.gamma2))
        .fold(0.0, f64::max);
    Ok(vec![Assertion::at_most(
        "max_journe_ratio",
        worst,
        r.config.assertions.max_journe_ratio,
    )])
}
