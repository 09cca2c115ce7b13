//! Experiment configuration files.
//!
//! ```ini
//! [data]
//! source = csv
//! path = power.csv
//! observations = x1, x2, x3
//! controls = u1, u2, u3, u4, u5
//! timestamp = t
//! delimiter = ,
//! header = true
//!
//! [synthetic]
//! dim = 2
//! decay = 0.995
//! angle_step = 0.1
//! process_std = 0.05
//! obs_std = 0.05
//!
//! [partition]
//! tasks = 4
//! train_len = 1800
//! window_len = 50
//! windows = 32
//! test_len = 200
//! seed = 0
//!
//! [model]
//! latent_dim = 4
//! hidden = 32
//! recognition_hidden = 32
//! obs_noise = 0.01
//! particles = 100
//!
//! [train]
//! lr = 0.005
//! epochs = 400
//! batch_size = 1
//!
//! [regularizers]
//! kinds = none, ewc_online, mas, si, lwf
//! ewc_online.lambda = 1000
//! ewc_online.gamma = 1.0
//! si.epsilon = 0.01
//!
//! [run]
//! seeds = 0, 1, 2, 3, 4
//! out = results
//! ```
//!
//! `source` is `csv` or `synthetic` (the default). `[synthetic]` applies to
//! synthetic sources and `train_len` to csv sources only. `path` and `out`
//! are resolved against the config file's directory. Every section is
//! optional; unknown sections and keys are errors. Comments start a line with
//! `;` or `#`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cldssm::continual::{RegularizerConfig, RegularizerKind};
use cldssm::data::{ColumnRef, PartitionConfig, RegimeConfig, SeriesSpec};
use cldssm::training::{ModelConfig, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(RegimeConfig),
    Csv { path: PathBuf, spec: SeriesSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub partition: PartitionConfig,
    pub partition_seed: u64,
    pub model: ModelConfig,
    /// Training settings; `seed` is replaced per run.
    pub train: TrainConfig,
    pub kinds: Vec<RegularizerKind>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "source",
            "path",
            "observations",
            "controls",
            "timestamp",
            "delimiter",
            "header",
        ],
    ),
    ("synthetic", &["dim", "decay", "angle_step", "process_std", "obs_std"]),
    (
        "partition",
        &["tasks", "train_len", "window_len", "windows", "test_len", "seed"],
    ),
    (
        "model",
        &["latent_dim", "hidden", "recognition_hidden", "obs_noise", "particles"],
    ),
    ("train", &["lr", "epochs", "batch_size"]),
    (
        "regularizers",
        &[
            "kinds",
            "ewc_online.lambda",
            "ewc_online.gamma",
            "ewc_vanilla.lambda",
            "mas.lambda",
            "si.lambda",
            "si.epsilon",
            "lwf.lambda",
        ],
    ),
    ("run", &["seeds", "out"]),
];

type Table = BTreeMap<String, BTreeMap<String, String>>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn collect(ini: &ini::Ini) -> Result<Table, CliError> {
    let mut table = Table::new();
    for (section, props) in ini.iter() {
        let Some(section) = section else {
            if let Some((k, _)) = props.iter().next() {
                return Err(invalid(format!("key `{k}` outside any section")));
            }
            continue;
        };
        let name = section.trim().to_ascii_lowercase();
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
            return Err(invalid(format!("unknown section [{section}]")));
        };
        let entry = table.entry(name.clone()).or_default();
        for (k, v) in props.iter() {
            let key = k.trim().to_ascii_lowercase();
            if !keys.contains(&key.as_str()) {
                return Err(invalid(format!("unknown key `{k}` in [{name}]")));
            }
            if entry.insert(key, v.trim().to_string()).is_some() {
                return Err(invalid(format!("duplicate key `{k}` in [{name}]")));
            }
        }
    }
    Ok(table)
}

struct Section<'a> {
    name: &'static str,
    values: Option<&'a BTreeMap<String, String>>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.values.and_then(|v| v.get(key)).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| invalid(format!("[{}] {key}: cannot parse `{s}`", self.name)))
            })
            .transpose()
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        self.raw(key)
            .map(|s| parse_list(s).map_err(|bad| invalid(format!("[{}] {key}: cannot parse `{bad}`", self.name))))
            .transpose()
    }
}

/// Comma-separated values; empty items are skipped.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| p.to_string()))
        .collect()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_delimiter(s: &str) -> Result<u8, CliError> {
    match s {
        "tab" | "\t" => Ok(b'\t'),
        "comma" => Ok(b','),
        "semicolon" => Ok(b';'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(invalid(format!(
            "[data] delimiter: expected one ASCII character, got `{s}`"
        ))),
    }
}

fn columns(s: &str) -> Vec<ColumnRef> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(ColumnRef::parse)
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| invalid(format!("syntax: {e}")))?;
        let table = collect(&ini)?;
        let sec = |name: &'static str| Section {
            name,
            values: table.get(name),
        };
        let data = sec("data");
        let synth = sec("synthetic");
        let part = sec("partition");
        let model = sec("model");
        let train = sec("train");
        let regs = sec("regularizers");
        let run = sec("run");

        let n_tasks: usize = part.get("tasks", 4)?;
        let window_len: usize = part.get("window_len", 50)?;
        let n_windows: usize = part.get("windows", 32)?;
        let test_len: usize = part.get("test_len", 200)?;
        let partition_seed: u64 = part.get("seed", 0)?;
        let min_train = n_windows * window_len + test_len;

        let source = data.raw("source").unwrap_or("synthetic").to_ascii_lowercase();
        let (source, train_len) = match source.as_str() {
            "synthetic" => {
                for key in ["path", "observations", "controls", "timestamp", "delimiter", "header"] {
                    if data.raw(key).is_some() {
                        return Err(invalid(format!("[data] {key} requires source = csv")));
                    }
                }
                if part.raw("train_len").is_some() {
                    return Err(invalid("[partition] train_len requires source = csv"));
                }
                let d = RegimeConfig::default();
                let cfg = RegimeConfig {
                    n_tasks,
                    d_x: synth.get("dim", d.d_x)?,
                    window_len,
                    n_windows,
                    test_len,
                    decay: synth.get("decay", d.decay)?,
                    angle_step: synth.get("angle_step", d.angle_step)?,
                    process_std: synth.get("process_std", d.process_std)?,
                    obs_std: synth.get("obs_std", d.obs_std)?,
                };
                (DataSource::Synthetic(cfg), min_train)
            }
            "csv" => {
                if synth.values.is_some() {
                    return Err(invalid("[synthetic] requires source = synthetic"));
                }
                let path = data
                    .raw("path")
                    .ok_or_else(|| invalid("[data] path is required for csv"))?;
                let obs = columns(
                    data.raw("observations")
                        .ok_or_else(|| invalid("[data] observations is required for csv"))?,
                );
                if obs.is_empty() {
                    return Err(invalid("[data] observations must name at least one column"));
                }
                let mut spec = SeriesSpec::new(obs, columns(data.raw("controls").unwrap_or("")));
                spec.timestamp = data.raw("timestamp").filter(|s| !s.is_empty()).map(ColumnRef::parse);
                if let Some(d) = data.raw("delimiter") {
                    spec.delimiter = parse_delimiter(d)?;
                }
                if let Some(h) = data.raw("header") {
                    spec.has_header = parse_bool(h)
                        .ok_or_else(|| invalid(format!("[data] header: expected a boolean, got `{h}`")))?;
                }
                (
                    DataSource::Csv {
                        path: base.join(path),
                        spec,
                    },
                    part.get("train_len", min_train)?,
                )
            }
            other => {
                return Err(invalid(format!(
                    "[data] source: expected `synthetic` or `csv`, got `{other}`"
                )))
            }
        };
        let partition = PartitionConfig {
            n_tasks,
            train_len,
            window_len,
            n_windows,
            test_len,
        };
        if n_tasks == 0 || window_len == 0 || n_windows == 0 || test_len == 0 {
            return Err(invalid(
                "[partition] tasks, window_len, windows and test_len must be >= 1",
            ));
        }
        if train_len < min_train {
            return Err(invalid(format!(
                "[partition] train_len = {train_len} is shorter than windows * window_len + test_len = {min_train}"
            )));
        }
        if let DataSource::Synthetic(cfg) = &source {
            if cfg.n_tasks < 2 {
                return Err(invalid("[partition] synthetic data needs tasks >= 2"));
            }
        }

        let dm = ModelConfig::default();
        let model_cfg = ModelConfig {
            d_z: model.get("latent_dim", dm.d_z)?,
            hidden: model.list("hidden")?.unwrap_or(dm.hidden),
            recognition_hidden: model.get("recognition_hidden", dm.recognition_hidden)?,
            obs_noise: model.get("obs_noise", dm.obs_noise)?,
        };

        let dt = TrainConfig::default();
        let mut train_cfg = TrainConfig {
            lr: train.get("lr", dt.lr)?,
            epochs: train.get("epochs", dt.epochs)?,
            batch_size: train.get("batch_size", dt.batch_size)?,
            n_particles: model.get("particles", dt.n_particles)?,
            seed: 0,
            regularizers: Vec::new(),
        };
        for kind in RegularizerKind::ALL {
            if kind == RegularizerKind::None {
                continue;
            }
            let mut rc = RegularizerConfig::new(kind);
            rc.lambda = regs.get(&format!("{}.lambda", kind.name()), rc.lambda)?;
            if kind == RegularizerKind::EwcOnline {
                rc.gamma = regs.get("ewc_online.gamma", rc.gamma)?;
            }
            if kind == RegularizerKind::Si {
                rc.epsilon = regs.get("si.epsilon", rc.epsilon)?;
            }
            rc.validate()
                .map_err(|e| invalid(format!("[regularizers] {kind}: {e}")))?;
            if rc != RegularizerConfig::new(kind) {
                train_cfg.set_regularizer(rc);
            }
        }
        train_cfg.validate().map_err(|e| invalid(e.to_string()))?;

        let kinds = match regs.raw("kinds") {
            None => RegularizerKind::ALL
                .iter()
                .copied()
                .filter(|k| *k != RegularizerKind::EwcVanilla)
                .collect(),
            Some(s) => {
                let mut kinds: Vec<RegularizerKind> = Vec::new();
                for name in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    let k = name
                        .parse::<RegularizerKind>()
                        .map_err(|e| invalid(format!("[regularizers] kinds: {e}")))?;
                    if kinds.contains(&k) {
                        return Err(invalid(format!("[regularizers] kinds: `{name}` listed twice")));
                    }
                    kinds.push(k);
                }
                kinds
            }
        };
        if kinds.is_empty() {
            return Err(invalid("[regularizers] kinds must list at least one method"));
        }

        let seeds = run.list::<u64>("seeds")?.unwrap_or_else(|| (0..5).collect());
        if seeds.is_empty() {
            return Err(invalid("[run] seeds must list at least one seed"));
        }
        let out = base.join(run.raw("out").unwrap_or("results"));

        Ok(Self {
            data: source,
            partition,
            partition_seed,
            model: model_cfg,
            train: train_cfg,
            kinds,
            seeds,
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn empty_file_gives_synthetic_defaults() {
        let c = parse("").unwrap();
        assert!(matches!(c.data, DataSource::Synthetic(ref r) if r.n_tasks == 4 && r.window_len == 50));
        assert_eq!(c.train.lr, 0.005);
        assert_eq!(c.train.epochs, 400);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.kinds.len(), 5);
        assert_eq!(c.out, PathBuf::from("/base/results"));
    }

    #[test]
    fn full_csv_config() {
        let c = parse(
            "[data]\nsource = csv\npath = d/power.csv\nobservations = x1, x2\ncontrols = u1\ntimestamp = t\ndelimiter = tab\nheader = yes\n\
             [partition]\ntasks = 4\ntrain_len = 1800\nwindow_len = 50\nwindows = 32\ntest_len = 200\nseed = 9\n\
             [model]\nlatent_dim = 6\nhidden = 16, 8\nparticles = 40\n\
             [train]\nlr = 0.01\nepochs = 7\n\
             [regularizers]\nkinds = dssm, ewc, si\nsi.lambda = 2.5\newc_online.gamma = 0.9\n\
             [run]\nseeds = 3, 4\nout = /abs/out\n",
        )
        .unwrap();
        let DataSource::Csv { path, spec } = &c.data else {
            panic!()
        };
        assert_eq!(path, &PathBuf::from("/base/d/power.csv"));
        assert_eq!(spec.observations.len(), 2);
        assert_eq!(spec.delimiter, b'\t');
        assert_eq!(c.partition.train_len, 1800);
        assert_eq!(c.partition_seed, 9);
        assert_eq!(c.model.hidden, vec![16, 8]);
        assert_eq!(c.train.n_particles, 40);
        assert_eq!(
            c.kinds,
            vec![RegularizerKind::None, RegularizerKind::EwcOnline, RegularizerKind::Si]
        );
        assert_eq!(c.train.regularizer(RegularizerKind::Si).lambda, 2.5);
        assert_eq!(c.train.regularizer(RegularizerKind::EwcOnline).gamma, 0.9);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.out, PathBuf::from("/abs/out"));
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        for text in [
            "[train]\nlearning_rate = 0.1\n",
            "[optimizer]\nlr = 0.1\n",
            "stray = 1\n",
            "[train]\nlr = 0.1\nlr = 0.2\n",
        ] {
            assert!(matches!(parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "[train]\nlr = fast\n",
            "[train]\nlr = -1\n",
            "[train]\nepochs = 0\n",
            "[regularizers]\nkinds = vcl\n",
            "[regularizers]\nkinds = si, si\n",
            "[regularizers]\nmas.lambda = -3\n",
            "[data]\nsource = csv\n",
            "[data]\nsource = csv\npath = a.csv\nobservations = x\n[partition]\ntrain_len = 10\n",
            "[data]\nsource = parquet\n",
            "[data]\npath = a.csv\n",
            "[partition]\ntasks = 1\n",
            "[run]\nseeds = 1, x\n",
        ] {
            assert!(matches!(parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let quick = ExperimentConfig::load(&dir.join("regimes-quick.ini")).unwrap();
        assert_eq!(quick.kinds.len(), 5);
        assert_eq!(quick.seeds, vec![0, 1, 2]);
        assert_eq!(quick.train.regularizer(RegularizerKind::Mas).lambda, 1e5);
        let csv = ExperimentConfig::load(&dir.join("csv-template.ini")).unwrap();
        assert!(matches!(csv.data, DataSource::Csv { ref path, .. } if path.ends_with("data/series.csv")));
        assert_eq!(csv.partition.train_len, 1800);
    }
}
