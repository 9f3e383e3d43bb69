use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pude_core::bench::{DataSource, FeatureSource, Labeling, Method, MethodConfigs, SyntheticSpec, TextSpec};
use serde::{Deserialize, Serialize};

use crate::ExperimentArgs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(pude_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_divergence() => 3,
            CliError::Core(e) if matches!(e.root(), pude_core::Error::Config(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<pude_core::Error> for CliError {
    fn from(e: pude_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| pude_core::Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| pude_core::Error::Validation(format!("{}: {e}", path.display())).into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| pude_core::Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| pude_core::Error::io(path, e).into())
}

/// Everything `run` and `sweep` need, as read from `--config`. Flags
/// override the file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSource>,
    pub dataset: Option<String>,
    pub methods: Vec<Method>,
    pub lp_counts: Vec<usize>,
    pub lp_ratio: Option<f64>,
    pub labeling: Option<Labeling>,
    pub configs: MethodConfigs,
    pub seeds: Vec<u64>,
}

pub fn parse_data(name: &str, vocab_size: usize) -> CliResult<(DataSource, String)> {
    Ok(match name {
        "gaussian" => (DataSource::Gaussian(SyntheticSpec::default()), "gaussian".into()),
        "text" => (DataSource::Text(TextSpec::default()), "text".into()),
        "topic1" => (DataSource::Text(TextSpec::topic1()), "topic1-shaped".into()),
        "covid" => (DataSource::Text(TextSpec::covid()), "covid-shaped".into()),
        path => {
            let path = PathBuf::from(path);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "--data {name:?} is neither gaussian, text, topic1, covid nor an existing file"
                )));
            }
            let source = DataSource::Corpus {
                path,
                features: FeatureSource::Tfidf { vocab_size },
            };
            let label = source.name();
            (source, label)
        }
    })
}

pub fn parse_labeling(name: &str) -> CliResult<Labeling> {
    match name {
        "scar" => Ok(Labeling::Scar),
        "biased" => Ok(Labeling::biased()),
        other => Err(CliError::Usage(format!("unknown labeling {other:?}; expected scar or biased"))),
    }
}

impl RunConfig {
    pub fn resolve(exp: &ExperimentArgs) -> CliResult<Self> {
        let mut cfg = match &exp.config {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig::default(),
        };
        if let Some(name) = &exp.data {
            let (data, label) = parse_data(name, exp.vocab_size)?;
            cfg.data = Some(data);
            cfg.dataset = Some(label);
        }
        if cfg.data.is_none() {
            return Err(CliError::Usage("no data source; pass --data or set \"data\" in --config".into()));
        }
        if !exp.method.is_empty() {
            cfg.methods = exp.method.clone();
        }
        if cfg.methods.is_empty() {
            cfg.methods = Method::ALL
                .into_iter()
                .filter(|m| *m != Method::Bm25 || !matches!(cfg.data, Some(DataSource::Gaussian(_))))
                .collect();
        }
        if !exp.seed.is_empty() {
            cfg.seeds = exp.seed.clone();
        }
        if cfg.seeds.is_empty() {
            cfg.seeds = vec![0];
        }
        if let Some(l) = &exp.labeling {
            cfg.labeling = Some(parse_labeling(l)?);
        }
        Ok(cfg)
    }

    pub fn data(&self) -> &DataSource {
        self.data.as_ref().expect("resolved")
    }
}
