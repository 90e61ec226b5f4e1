//! Run configuration: a TOML tree with sections `run`, `kernel`, `domain`,
//! `scheme`, `estimator` and `experiment`, plus `section.key=value`
//! overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch::BatchConfig;
use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::jump_kernel::JumpKernel;
use crate::sampler::SchemeConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "SBM_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub workers: usize,
    pub chunk_size: usize,
    pub paths: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            chunk_size: 4096,
            paths: 100_000,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// Bernstein family, e.g. `pure_bm`, `gamma`, `stable:alpha=1,a=1`.
    pub spec: String,
    /// Set `j(r) = 0` for `r ≥ truncate`.
    pub truncate: Option<f64>,
    pub nodes: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            spec: "pure_bm".into(),
            truncate: None,
            nodes: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    /// e.g. `ball:r=1`, `box:lo=-1;-1,hi=1;1`, `slitbox:side=4,thickness=0.25`.
    pub spec: String,
    pub dim: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            spec: "ball:r=1".into(),
            dim: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Start point.
    pub x: Vec<f64>,
    /// Second point (Green function pole).
    pub y: Vec<f64>,
    /// Reference point for Martin kernels.
    pub x0: Vec<f64>,
    /// Boundary point for boundary statistics.
    pub q: Vec<f64>,
    pub r: f64,
    pub bandwidth: Option<f64>,
    /// `one`, `above:axis=1,level=0.5`, `below:axis=0,level=-0.5`,
    /// `ball:center=2;0,r=0.5`.
    pub payoff: String,
    /// Second payoff for two-function statistics.
    pub payoff2: Option<String>,
    /// Approach parameters for Martin kernels, decreasing.
    pub ts: Vec<f64>,
    /// `constant:c=1`, `gaussian:width=0.5,height=1`, `compact:r=0.8`,
    /// `quadratic:inner=0.5,outer=1`; centred at `x0` (origin if empty).
    pub test_function: String,
    /// Right end of the interval for boundary profiles.
    pub b: f64,
    /// Grid of points; flattened rows of length `domain.dim` (length 1 for
    /// boundary profiles).
    pub grid: Vec<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            x0: Vec::new(),
            q: Vec::new(),
            r: 0.5,
            bandwidth: None,
            payoff: "one".into(),
            payoff2: None,
            ts: vec![0.2, 0.1, 0.05],
            test_function: "gaussian:width=0.5,height=1".into(),
            b: 1.0,
            grid: Vec::new(),
        }
    }
}

/// Experiment selection and pass thresholds. Empty lists select the
/// experiment's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub kernels: Vec<String>,
    pub dim: Option<usize>,
    pub radii: Vec<f64>,
    /// Step size relative to the squared length scale, for experiments that
    /// run on several scales.
    pub dt_rel: f64,
    pub exit_ratio_max: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub bhp_ratio_max: f64,
    pub green_spread_max: f64,
    pub green_exact_rel_tol: f64,
    pub harnack_max: f64,
    pub carleson_max: f64,
    pub depth_factor_max: f64,
    pub residual_sigmas: f64,
    pub depths: Vec<u32>,
    pub slit_side: f64,
    pub slit_thickness: f64,
    pub slit_reach: f64,
    pub slit_smoothing: f64,
    /// Radius of the ball `B(0, R)` cut out of the slit box.
    pub local_radius: f64,
    pub r1: f64,
    /// Paths for the counterexample value at `A`, where the signal is rare.
    pub rare_paths: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            id: "exit_time_scaling".into(),
            kernels: Vec::new(),
            dim: None,
            radii: Vec::new(),
            dt_rel: 0.01,
            exit_ratio_max: 2.5,
            slope_min: 0.85,
            slope_max: 1.15,
            bhp_ratio_max: 50.0,
            green_spread_max: 25.0,
            green_exact_rel_tol: 0.10,
            harnack_max: 10.0,
            carleson_max: 10.0,
            depth_factor_max: 1.0 / 3.0,
            residual_sigmas: 3.0,
            depths: vec![2, 4, 6],
            slit_side: 4.0,
            slit_thickness: 0.25,
            slit_reach: 1.5,
            slit_smoothing: 0.05,
            local_radius: 0.24,
            r1: 0.2,
            rare_paths: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub kernel: KernelSection,
    pub domain: DomainSection,
    pub scheme: SchemeConfig,
    pub estimator: EstimatorSection,
    pub experiment: ExperimentSection,
}

/// Every accepted key as `section.key`, for help output.
pub fn config_keys() -> Vec<String> {
    let v = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut keys = Vec::new();
    if let serde_json::Value::Object(sections) = v {
        for (s, body) in sections {
            if let serde_json::Value::Object(fields) = body {
                for k in fields.keys() {
                    keys.push(format!("{s}.{k}"));
                }
            }
        }
    }
    keys
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        // integral floats such as `1e6` become integers so counts accept them
        Ok(mut t) => match t.remove("v") {
            Some(toml::Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => toml::Value::Integer(f as i64),
            Some(v) => v,
            None => toml::Value::String(raw.into()),
        },
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Apply `section.key=value` to a TOML tree. Values parse as TOML (numbers,
/// booleans, arrays), falling back to bare strings.
pub fn apply_override(tree: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key '{path}' is not section.key")))?;
    let entry = tree
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{section}' is not a section")))?;
    table.insert(key.trim().to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides, validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        // parse the file on its own first so errors point at its lines
        toml::from_str::<RunConfig>(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut tree: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.run.paths == 0 || self.run.chunk_size == 0 || self.run.workers == 0 {
            return Err(Error::Config("run.paths, run.chunk_size and run.workers must be positive".into()));
        }
        if self.domain.dim == 0 {
            return Err(Error::Config("domain.dim must be positive".into()));
        }
        let e = &self.experiment;
        if e.radii.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("experiment.radii must lie in (0, 1]".into()));
        }
        if !(e.dt_rel > 0.0) {
            return Err(Error::Config("experiment.dt_rel must be positive".into()));
        }
        if !(e.slope_min < e.slope_max) {
            return Err(Error::Config("experiment.slope_min must be below slope_max".into()));
        }
        if e.depths.len() < 2 || e.depths.windows(2).any(|w| w[1] <= w[0]) || e.depths[0] < 2 {
            return Err(Error::Config("experiment.depths must increase, start at ≥ 2 and have ≥ 2 entries".into()));
        }
        if !(e.local_radius < e.slit_thickness && e.r1 < e.local_radius) {
            return Err(Error::Config(
                "experiment needs r1 < local_radius < slit_thickness".into(),
            ));
        }
        if let Some(t) = self.kernel.truncate {
            if !(t > 0.0) {
                return Err(Error::Config("kernel.truncate must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            seed: self.run.seed,
            chunk_size: self.run.chunk_size,
            workers: self.run.workers,
        }
    }

    pub fn bernstein(&self) -> Result<BernsteinFunction> {
        BernsteinFunction::parse(&self.kernel.spec)
    }

    pub fn build_kernel(&self, dim: usize) -> Result<JumpKernel> {
        build_kernel(&self.kernel.spec, dim, self.kernel.nodes, self.kernel.truncate)
    }

    pub fn build_domain(&self) -> Result<Domain> {
        Domain::parse(&self.domain.spec, self.domain.dim)
    }

    /// Output directory: `run.output_dir`, else `$SBM_OUTPUT_DIR`, else
    /// `sbm-output`.
    pub fn output_dir(&self) -> PathBuf {
        self.run
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("sbm-output"))
    }

    /// SHA-256 of the canonical JSON form, with the fields that cannot
    /// change results (worker count, output location) blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.workers = 0;
        c.run.output_dir = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_string(&v).expect("json");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn build_kernel(spec: &str, dim: usize, nodes: usize, truncate: Option<f64>) -> Result<JumpKernel> {
    let f = BernsteinFunction::parse(spec)?;
    let k = JumpKernel::build_with_nodes(&f, dim, nodes)?;
    match truncate {
        Some(t) => k.truncated(t),
        None => Ok(k),
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("no file name in {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::from_toml_str("", &[]).unwrap();
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml_str(
            "[run]\nseed = 3\n",
            &["run.seed=7".into(), "run.paths=1e6".into(), "scheme.dt=1".into(), "kernel.spec=stable:alpha=1,a=1".into(), "estimator.x=[0.1, 0.2]".into()],
        )
        .unwrap();
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.run.paths, 1_000_000);
        assert_eq!(c.scheme.dt, 1.0);
        assert_eq!(c.kernel.spec, "stable:alpha=1,a=1");
        assert_eq!(c.estimator.x, vec![0.1, 0.2]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = RunConfig::from_toml_str("[run]\nsede = 3\n", &[]).unwrap_err().to_string();
        assert!(e.contains("sede"), "{e}");
        assert!(RunConfig::from_toml_str("", &["scheme.dtt=0.1".into()]).is_err());
        assert!(RunConfig::from_toml_str("[bogus]\n", &[]).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = RunConfig::from_toml_str("[run]\nseed = 1\nworkers = \"x\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn radii_above_one_rejected() {
        assert!(RunConfig::from_toml_str("", &["experiment.radii=[0.5, 2.0]".into()]).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.workers = 16;
        b.run.output_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn every_key_listed() {
        let keys = config_keys();
        assert!(keys.contains(&"scheme.bridge_correction".to_string()));
        assert!(keys.contains(&"experiment.depth_factor_max".to_string()));
        assert!(keys.contains(&"run.output_dir".to_string()));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_atomic(&p, b"{}").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"{}");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
