//! The TOML configuration file and the on-disk workspace.
//!
//! ```toml
//! workspace = "ebc-workspace"
//!
//! [llm]
//! backend = "deterministic_stub"   # or "remote"
//! max_retries = 2
//!
//! [mapping]
//! accept_threshold = 0.5
//! [mapping.weights]
//! text = 0.35
//! id = 0.25
//! surround = 0.25
//! visual = 0.15
//!
//! [router]
//! mode = "deterministic"
//! floor = 0.2
//!
//! [interpret]
//! budget = 200
//! max_loop_bound = 64
//!
//! [eval]
//! trials = 10
//! workers = 0
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::LlmConfig;
use crate::dsl::{InterpretConfig, DEFAULT_BUDGET, DEFAULT_MAX_LOOP_BOUND};
use crate::encoder::{read_demo_log, write_demo_log, Demonstration, EncodeError, EncodedDemo, VisualDescriberConfig};
use crate::eval::{EvalConfig, MetricsReport};
use crate::fusion::{FunctionLibrary, LibraryError, RouteMode, RouterConfig};
use crate::mapping::MappingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterSection {
    pub mode: RouteMode,
    pub floor: f64,
}

impl Default for RouterSection {
    fn default() -> Self {
        let d = RouterConfig::default();
        RouterSection {
            mode: d.mode,
            floor: d.floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpretSection {
    pub budget: usize,
    pub max_loop_bound: u64,
}

impl Default for InterpretSection {
    fn default() -> Self {
        InterpretSection {
            budget: DEFAULT_BUDGET,
            max_loop_bound: DEFAULT_MAX_LOOP_BOUND,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Overrides the trial counts in suite files.
    pub trials: Option<usize>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbcConfig {
    pub workspace: PathBuf,
    pub llm: LlmConfig,
    pub visual: VisualDescriberConfig,
    pub mapping: MappingConfig,
    pub router: RouterSection,
    pub interpret: InterpretSection,
    pub eval: EvalSection,
}

impl Default for EbcConfig {
    fn default() -> Self {
        EbcConfig {
            workspace: PathBuf::from("ebc-workspace"),
            llm: LlmConfig::default(),
            visual: VisualDescriberConfig::default(),
            mapping: MappingConfig::default(),
            router: RouterSection::default(),
            interpret: InterpretSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl EbcConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: EbcConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.mapping.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.router.floor) {
            return invalid(format!("router.floor must be in [0, 1], got {}", self.router.floor));
        }
        if self.interpret.budget == 0 {
            return invalid("interpret.budget must be at least 1".into());
        }
        if self.interpret.max_loop_bound == 0 {
            return invalid("interpret.max_loop_bound must be at least 1".into());
        }
        if self.eval.trials == Some(0) {
            return invalid("eval.trials must be at least 1".into());
        }
        if let Some(f) = self.llm.fault {
            if !(0.0..=1.0).contains(&f.rate) {
                return invalid(format!("llm.fault.rate must be in [0, 1], got {}", f.rate));
            }
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return invalid(format!("llm.temperature must be in [0, 2], got {}", self.llm.temperature));
        }
        Ok(())
    }

    pub fn interpret_config(&self) -> InterpretConfig {
        InterpretConfig {
            budget: self.interpret.budget,
            max_loop_bound: self.interpret.max_loop_bound,
            mapping: self.mapping.clone(),
        }
    }

    pub fn router_config(&self) -> RouterConfig {
        RouterConfig {
            mode: self.router.mode,
            floor: self.router.floor,
            llm: self.llm.clone(),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            trials: self.eval.trials,
            workers: self.eval.workers,
            llm: self.llm.clone(),
            router: self.router_config(),
            interpret: self.interpret_config(),
            visual: self.visual.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown demo id {0:?}")]
    UnknownDemo(String),
    #[error("{path}: {source}")]
    Demo {
        path: PathBuf,
        #[source]
        source: EncodeError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Library(#[from] LibraryError),
}

/// Plain-file persistence: `demos/` holds demonstration logs and encoded
/// demos, `functions/` the library, `reports/` evaluation reports.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

const DEMO_LOG_EXT: &str = "jsonl";
const ENCODED_SUFFIX: &str = ".encoded.json";

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let ws = Workspace { root: root.into() };
        for dir in [ws.demos_dir(), ws.functions_dir(), ws.reports_dir()] {
            fs::create_dir_all(&dir).map_err(|source| WorkspaceError::Io { path: dir.clone(), source })?;
        }
        Ok(ws)
    }

    pub fn demos_dir(&self) -> PathBuf {
        self.root.join("demos")
    }

    pub fn functions_dir(&self) -> PathBuf {
        self.root.join("functions")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
        move |source| WorkspaceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn save_demo(&self, demo: &Demonstration) -> Result<PathBuf, WorkspaceError> {
        let path = self.demos_dir().join(format!("{}.{DEMO_LOG_EXT}", demo.demo_id));
        let file = fs::File::create(&path).map_err(Self::io(&path))?;
        let mut out = BufWriter::new(file);
        write_demo_log(demo, &mut out).map_err(Self::io(&path))?;
        out.flush().map_err(Self::io(&path))?;
        Ok(path)
    }

    pub fn load_demo(&self, demo_id: &str) -> Result<Demonstration, WorkspaceError> {
        let path = self.demos_dir().join(format!("{demo_id}.{DEMO_LOG_EXT}"));
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(WorkspaceError::UnknownDemo(demo_id.into())),
            Err(source) => return Err(WorkspaceError::Io { path, source }),
        };
        read_demo_log(BufReader::new(file)).map_err(|source| WorkspaceError::Demo { path, source })
    }

    pub fn save_encoded(&self, encoded: &EncodedDemo) -> Result<PathBuf, WorkspaceError> {
        let path = self.demos_dir().join(format!("{}{ENCODED_SUFFIX}", encoded.demo_id));
        let json = serde_json::to_string_pretty(encoded).map_err(|source| WorkspaceError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, json + "\n").map_err(Self::io(&path))?;
        Ok(path)
    }

    pub fn load_encoded(&self, demo_id: &str) -> Result<EncodedDemo, WorkspaceError> {
        let path = self.demos_dir().join(format!("{demo_id}{ENCODED_SUFFIX}"));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(WorkspaceError::UnknownDemo(demo_id.into())),
            Err(source) => return Err(WorkspaceError::Io { path, source }),
        };
        serde_json::from_str(&text).map_err(|source| WorkspaceError::Json { path, source })
    }

    /// Ids of the demonstrations stored in the workspace, sorted.
    pub fn demo_ids(&self) -> Result<Vec<String>, WorkspaceError> {
        let dir = self.demos_dir();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(Self::io(&dir))? {
            let path = entry.map_err(Self::io(&dir))?.path();
            if path.extension().is_some_and(|e| e == DEMO_LOG_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_library(&self) -> Result<FunctionLibrary, WorkspaceError> {
        Ok(FunctionLibrary::load(&self.functions_dir())?)
    }

    pub fn save_library(&self, library: &FunctionLibrary) -> Result<(), WorkspaceError> {
        Ok(library.save(&self.functions_dir())?)
    }

    /// Writes `report.json` and `report.txt` under `reports/<name>/`.
    pub fn write_report(&self, name: &str, report: &MetricsReport) -> Result<Vec<PathBuf>, WorkspaceError> {
        let dir = self.reports_dir().join(name);
        fs::create_dir_all(&dir).map_err(Self::io(&dir))?;
        let json = dir.join("report.json");
        fs::write(&json, report.to_json()).map_err(Self::io(&json))?;
        let table = dir.join("report.txt");
        fs::write(&table, report.to_table()).map_err(Self::io(&table))?;
        Ok(vec![json, table])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(EbcConfig::from_toml("").unwrap(), EbcConfig::default());
    }

    #[test]
    fn sections_parse_and_validate() {
        let c = EbcConfig::from_toml(
            "workspace = \"/tmp/ws\"\n[llm]\nbackend = \"remote\"\nmodel = \"m\"\n[llm.fault]\nrate = 0.2\nseed = 3\n[router]\nfloor = 0.5\n[eval]\ntrials = 12\n",
        )
        .unwrap();
        assert_eq!(c.workspace, PathBuf::from("/tmp/ws"));
        assert_eq!(c.eval_config().trials, Some(12));
        assert_eq!(c.router_config().floor, 0.5);
        assert_eq!(c.llm.fault.unwrap().seed, 3);
        assert!(EbcConfig::from_toml("[router]\nfloor = 2.0\n").is_err());
        assert!(EbcConfig::from_toml("[mapping.weights]\ntext = 1.0\n").is_err());
        assert!(EbcConfig::from_toml("bogus = 1\n").is_err());
    }
}
