//! Versioned run configuration, its JSON schema and validation against the
//! preconditions of every pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::atomic::{AtomTolerances, AtomicConfig};
use crate::dyadic::log2_points;
use crate::error::{FlagError, Result};
use crate::flagconv::ScaleGrid;
use crate::harness::{CorpusSpec, FamilyCount, IdentityTolerances, JourneSpec, NormConfig};
use crate::kernels::{
    build_heat_pair, build_heatlp_pair, build_indicator_pair, build_lp_pair, build_poisson_pair,
    Calibration, KernelKind, KernelPair,
};
use crate::lattice::LatticeSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Complete description of a run. Every field except `version` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Configuration format version. Only 1 is accepted.
    pub version: u32,
    /// Seed of the corpus and of the random Journe sets.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub scales: ScaleConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub atomic: AtomicSection,
    #[serde(default)]
    pub journe: JourneSpec,
    #[serde(default)]
    pub selftest: SelftestConfig,
    #[serde(default)]
    pub assertions: AssertionConfig,
    /// Directory receiving all artifacts. Relative paths here and in `input`
    /// resolve against the working directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    /// Grid-function file (`.f64` with a `.json` sidecar) decomposed instead
    /// of a corpus member.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

fn default_seed() -> u64 {
    20260101
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: default_seed(),
            lattice: LatticeConfig::default(),
            kernel: KernelConfig::default(),
            scales: ScaleConfig::default(),
            corpus: CorpusConfig::default(),
            atomic: AtomicSection::default(),
            journe: JourneSpec::default(),
            selftest: SelftestConfig::default(),
            assertions: AssertionConfig::default(),
            output_dir: default_output_dir(),
            workers: 0,
            input: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    /// Dimension of the first factor.
    pub n: usize,
    /// Dimension of the second factor.
    pub m: usize,
    /// Points per axis; even, and a power of two for dyadic pipelines.
    #[serde(rename = "N")]
    pub points_per_axis: usize,
    /// Period of the torus.
    #[serde(rename = "L")]
    pub period: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            n: 1,
            m: 1,
            points_per_axis: 256,
            period: 16.0,
        }
    }
}

/// Kernel pair of the `pp` command; the calibration also applies to the
/// Littlewood-Paley pair of the norm table and the identity suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub calibration: Calibration,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::LittlewoodPaley,
            calibration: Calibration::DiscretelyRenormalized,
        }
    }
}

/// Dyadic scale ranges `t = 2^{-j}`, `s = 2^{-k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleConfig {
    pub j_min: i32,
    pub j_max: i32,
    pub k_min: i32,
    pub k_max: i32,
    /// Scale samples per dyadic block (1 to 64).
    pub samples_per_block: u32,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            j_min: -2,
            j_max: 7,
            k_min: -2,
            k_max: 7,
            samples_per_block: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Members per family, generated in this order.
    pub families: Vec<FamilyCount>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            families: CorpusSpec::standard(0).families,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AtomicSection {
    /// Corpus member (in generation order) decomposed when `input` is unset.
    pub member: usize,
    /// Laplacian power `M`; must exceed `max(n, m) / 4`.
    pub m_power: u32,
    /// Lowest level `l` of `{S > 2^l}`; derived from `max S` when unset.
    pub level_min: Option<i32>,
    /// Highest level; set together with `level_min`.
    pub level_max: Option<i32>,
    /// `l_max - l_min` when the range is derived.
    pub level_span: i32,
    /// Dilation factor of the maximal rectangles in the support check.
    pub dilation: f64,
    /// Gates of the atom validator. Decomposition atoms are gated on
    /// `max(max_l2_ratio, l2_bound)` with the bound stored in the manifest.
    pub tolerances: AtomTolerances,
    /// Synthetic atoms built and validated by the `validate` command.
    pub synthetic_atoms: usize,
}

impl Default for AtomicSection {
    fn default() -> Self {
        Self {
            member: 0,
            m_power: 1,
            level_min: None,
            level_max: None,
            level_span: 24,
            dilation: 10.0,
            tolerances: AtomTolerances::default(),
            synthetic_atoms: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestConfig {
    /// Leading members of each corpus family run through the identity suite.
    pub members_per_family: usize,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            members_per_family: 1,
        }
    }
}

/// Thresholds that decide the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AssertionConfig {
    /// Largest admissible spread (max ratio / min ratio) of the norm table.
    pub max_c_emp: f64,
    /// Largest admissible sup/inf ratio of the sampled comparison.
    pub max_pp_ratio: f64,
    /// Largest relative `L^2` error of the atomic reconstruction.
    pub max_reconstruction_error: f64,
    /// Largest admissible normalized Journe covering sum.
    pub max_journe_ratio: f64,
    pub identities: IdentityTolerances,
}

impl Default for AssertionConfig {
    fn default() -> Self {
        Self {
            max_c_emp: 100.0,
            max_pp_ratio: 100.0,
            max_reconstruction_error: 5e-2,
            max_journe_ratio: 10.0,
            identities: IdentityTolerances::default(),
        }
    }
}

/// A configuration checked against every module's preconditions.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub lattice: LatticeSpec,
    pub grid: ScaleGrid,
    pub corpus: CorpusSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FlagError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| FlagError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Checks every precondition that does not need the corpus itself.
    pub fn resolve(self) -> Result<Resolved> {
        let cfg = |msg: String| Err(FlagError::Config(msg));
        if self.version != CONFIG_VERSION {
            return cfg(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        let l = self.lattice;
        let lattice = LatticeSpec::new(l.n, l.m, l.points_per_axis, l.period).map_err(as_config)?;
        log2_points(&lattice).map_err(as_config)?;
        let s = self.scales;
        let grid = ScaleGrid::new(
            &lattice,
            s.j_min,
            s.j_max,
            s.k_min,
            s.k_max,
            s.samples_per_block,
        )
        .map_err(as_config)?;
        if !grid.full_coverage() {
            return cfg(format!(
                "scale grid j in [{}, {}], k in [{}, {}] does not cover every nonzero lattice frequency",
                s.j_min, s.j_max, s.k_min, s.k_max
            ));
        }
        kernel_pair(&self.kernel, &lattice, &grid)?;
        let a = self.atomic;
        if 4 * a.m_power as usize <= l.n.max(l.m) {
            return cfg(format!(
                "atomic.m_power = {} must exceed max(n, m) / 4",
                a.m_power
            ));
        }
        if !(a.dilation >= 1.0 && a.dilation.is_finite()) {
            return cfg(format!(
                "atomic.dilation must be finite and >= 1, got {}",
                a.dilation
            ));
        }
        match (a.level_min, a.level_max) {
            (Some(lo), Some(hi)) if lo > hi => {
                return cfg(format!("atomic.level_min = {lo} > level_max = {hi}"))
            }
            (Some(_), None) | (None, Some(_)) => {
                return cfg("atomic.level_min and atomic.level_max must be set together".into())
            }
            _ => {}
        }
        if a.level_span < 0 {
            return cfg(format!(
                "atomic.level_span must be >= 0, got {}",
                a.level_span
            ));
        }
        let t = a.tolerances;
        if !(0.0..=1.0).contains(&t.min_support_mass) || !(t.max_l2_ratio > 0.0) {
            return cfg(
                "atomic.tolerances need min_support_mass in [0, 1] and max_l2_ratio > 0".into(),
            );
        }
        let j = self.journe;
        if j.count == 0 || !(j.delta > 0.0) {
            return cfg(format!(
                "journe needs count >= 1 and delta > 0, got {} and {}",
                j.count, j.delta
            ));
        }
        if j.points < 8 || !j.points.is_power_of_two() {
            return cfg(format!(
                "journe.points must be a power of two >= 8, got {}",
                j.points
            ));
        }
        if j.max_pieces == 0 || !(j.max_side_fraction > 0.0 && j.max_side_fraction <= 1.0) {
            return cfg("journe needs max_pieces >= 1 and max_side_fraction in (0, 1]".into());
        }
        let positive = [
            ("max_c_emp", self.assertions.max_c_emp),
            ("max_pp_ratio", self.assertions.max_pp_ratio),
            (
                "max_reconstruction_error",
                self.assertions.max_reconstruction_error,
            ),
            ("max_journe_ratio", self.assertions.max_journe_ratio),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return cfg(format!("assertions.{name} must be positive, got {v}"));
        }
        if self.workers > 1024 {
            return cfg(format!(
                "workers must be at most 1024, got {}",
                self.workers
            ));
        }
        let corpus = CorpusSpec {
            seed: self.seed,
            families: self.corpus.families.clone(),
        };
        Ok(Resolved {
            lattice,
            grid,
            corpus,
            config: self,
        })
    }
}

fn as_config(e: FlagError) -> FlagError {
    match e {
        FlagError::Config(_) => e,
        other => FlagError::Config(other.to_string()),
    }
}

/// Kernel pair named by the `kernel` section. Only the Littlewood-Paley pair
/// has a renormalized calibration.
pub fn kernel_pair(
    kernel: &KernelConfig,
    lattice: &LatticeSpec,
    grid: &ScaleGrid,
) -> Result<KernelPair> {
    if kernel.kind != KernelKind::LittlewoodPaley && kernel.calibration != Calibration::Analytic {
        return Err(FlagError::Config(format!(
            "kernel.kind {:?} supports only the analytic calibration",
            kernel.kind
        )));
    }
    Ok(match kernel.kind {
        KernelKind::LittlewoodPaley => build_lp_pair(lattice, kernel.calibration, Some(grid))?,
        KernelKind::Poisson => build_poisson_pair(lattice),
        KernelKind::Heat => build_heat_pair(lattice),
        KernelKind::HeatLp => build_heatlp_pair(lattice),
        KernelKind::Indicator => build_indicator_pair(lattice),
    })
}

impl Resolved {
    pub fn norm_config(&self) -> NormConfig {
        NormConfig {
            scale_grid: self.grid.clone(),
            calibration: self.config.kernel.calibration,
        }
    }

    pub fn atomic_config(&self) -> AtomicConfig {
        let a = self.config.atomic;
        AtomicConfig {
            scale_grid: self.grid.clone(),
            level_range: a.level_min.zip(a.level_max),
            level_span: a.level_span,
            m_power: a.m_power,
            dilation: a.dilation,
            tolerances: a.tolerances,
        }
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }
}

/// JSON schema of [`RunConfig`], defaults included.
pub fn schema_json() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(RunConfig)).expect("schema serializes")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<Resolved> {
        RunConfig::from_json(text)?.resolve()
    }

    #[test]
    fn minimal_config_takes_every_default() {
        let r = resolve(r#"{"version": 1}"#).unwrap();
        assert_eq!(r.config, RunConfig::default());
        assert_eq!(r.lattice.points_per_axis, 256);
        assert_eq!(r.corpus.len(), 24);
        assert!(r.grid.full_coverage());
        let round = RunConfig::from_json(&r.config.to_json().unwrap()).unwrap();
        assert_eq!(round, r.config);
    }

    #[test]
    fn odd_point_count_names_the_precondition() {
        let e = resolve(r#"{"version": 1, "lattice": {"N": 255}}"#).unwrap_err();
        assert!(matches!(e, FlagError::Config(_)));
        assert!(e.to_string().contains("even"), "{e}");
        let e = resolve(r#"{"version": 1, "lattice": {"N": 96}}"#).unwrap_err();
        assert!(e.to_string().contains("power-of-two"), "{e}");
    }

    #[test]
    fn rejects_bad_fields_and_versions() {
        assert!(resolve(r#"{"version": 2}"#).is_err());
        assert!(resolve(r#"{}"#).is_err());
        assert!(resolve(r#"{"version": 1, "bogus": 3}"#).is_err());
        assert!(resolve(r#"{"version": 1, "scales": {"j_max": 3}}"#)
            .unwrap_err()
            .to_string()
            .contains("cover"));
        assert!(resolve(r#"{"version": 1, "atomic": {"m_power": 0}}"#).is_err());
        assert!(resolve(r#"{"version": 1, "atomic": {"level_min": 0}}"#).is_err());
        assert!(resolve(r#"{"version": 1, "journe": {"points": 48}}"#).is_err());
        assert!(resolve(r#"{"version": 1, "kernel": {"kind": "poisson"}}"#).is_err());
        assert!(resolve(
            r#"{"version": 1, "kernel": {"kind": "poisson", "calibration": "analytic"}}"#
        )
        .is_ok());
    }

    #[test]
    fn schema_documents_defaults() {
        let schema: serde_json::Value = serde_json::from_str(&schema_json()).unwrap();
        let props = &schema["properties"];
        assert_eq!(props["seed"]["default"], 20260101);
        assert_eq!(props["lattice"]["default"]["N"], 256);
        assert_eq!(props["assertions"]["default"]["max_c_emp"], 100.0);
        assert_eq!(schema["required"], serde_json::json!(["version"]));
    }

    #[test]
    fn shipped_files_match_generated() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("config");
        assert_eq!(
            fs::read_to_string(dir.join("schema.json")).unwrap(),
            schema_json()
        );
        let default = RunConfig::load(&dir.join("default.json")).unwrap();
        assert_eq!(default, RunConfig::default());
    }
}
