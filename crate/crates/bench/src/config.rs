//! Run configuration: a TOML file, overridden key by key from the command
//! line, resolved against defaults and validated before anything runs.
//!
//! ```toml
//! data = "drive_test.csv"        # or "synthetic"
//! delimiter = ","
//! on_invalid_row = "reject"      # or "drop"
//! models = ["SVR", "CBR", "ANN", "XGBR", "RFR"]
//! outer_k = 6
//! inner_k = 4
//! seed = 0
//! threads = 0                    # 0: one per core
//! out_dir = "pathloss-out"
//! formats = ["json", "table", "svg"]
//! selection_metric = "mse"
//! leaky_baseline = false
//!
//! [columns]                      # field = header
//! clutter_height = "Cluster Height"
//!
//! [synthetic]                    # used when data = "synthetic"
//! n = 2000
//! noise_std = 2.0
//!
//! [grids.XGBR]
//! max_depth = [3, 5]
//! ```

use std::fmt;
use std::path::PathBuf;

use pathloss_core::cv::SelectionMetric;
use pathloss_core::data::{ColumnMapping, LoadOptions, LoadPolicy};
use pathloss_core::{EstimatorSpec, Family, SyntheticConfig};
use toml::{Table, Value};

/// Overrides the default output directory.
pub const OUT_DIR_ENV: &str = "PATHLOSS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pathloss-out";

const TOP_KEYS: &[&str] = &[
    "data",
    "delimiter",
    "on_invalid_row",
    "columns",
    "synthetic",
    "models",
    "grids",
    "outer_k",
    "inner_k",
    "seed",
    "threads",
    "out_dir",
    "formats",
    "selection_metric",
    "leaky_baseline",
];

const SYNTHETIC_KEYS: &[&str] = &["intercept", "slope", "noise_std", "n", "distance_min", "distance_max", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Formats {
    pub json: bool,
    pub table: bool,
    pub svg: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub load: LoadOptions,
    /// In report order.
    pub models: Vec<EstimatorSpec>,
    pub outer_k: usize,
    pub inner_k: usize,
    pub seed: u64,
    /// 0 lets the pool pick one thread per core.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub formats: Formats,
    pub selection_metric: SelectionMetric,
    pub leaky_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyError {
    pub key: String,
    pub message: String,
}

/// Every problem found in a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<KeyError>);

impl ConfigErrors {
    pub fn keys(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.key.as_str()).collect()
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "`{}`: {}", e.key, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Command-line values that replace the matching config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub outer_k: Option<usize>,
    pub inner_k: Option<usize>,
    pub leaky_baseline: bool,
}

impl Overrides {
    fn apply(&self, t: &mut Table) {
        let int = |v: u64| Value::Integer(i64::try_from(v).unwrap_or(-1));
        if let Some(d) = &self.data {
            t.insert("data".into(), Value::String(d.clone()));
        }
        if let Some(s) = self.seed {
            t.insert("seed".into(), int(s));
        }
        if let Some(n) = self.threads {
            t.insert("threads".into(), int(n as u64));
        }
        if let Some(o) = &self.out_dir {
            t.insert("out_dir".into(), Value::String(o.to_string_lossy().into_owned()));
        }
        if let Some(m) = &self.models {
            t.insert("models".into(), Value::Array(m.iter().map(|s| Value::String(s.clone())).collect()));
        }
        if let Some(k) = self.outer_k {
            t.insert("outer_k".into(), int(k as u64));
        }
        if let Some(k) = self.inner_k {
            t.insert("inner_k".into(), int(k as u64));
        }
        if self.leaky_baseline {
            t.insert("leaky_baseline".into(), Value::Boolean(true));
        }
    }
}

/// Parses `text` (may be empty), applies `overrides` and resolves the result.
pub fn resolve(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigErrors> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![KeyError {
            key: "<file>".into(),
            message: e.message().to_string(),
        }])
    })?;
    overrides.apply(&mut table);
    Resolver::default().run(&table)
}

#[derive(Default)]
struct Resolver {
    errors: Vec<KeyError>,
}

impl Resolver {
    fn err(&mut self, key: &str, message: impl Into<String>) {
        self.errors.push(KeyError {
            key: key.into(),
            message: message.into(),
        });
    }

    fn int(&mut self, t: &Table, key: &str, path: &str, min: i64, default: i64) -> i64 {
        match t.get(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= min => *v,
            Some(Value::Integer(v)) => {
                self.err(path, format!("must be >= {min}, got {v}"));
                default
            }
            Some(other) => {
                self.err(path, format!("expected an integer, got {}", other.type_str()));
                default
            }
        }
    }

    fn float(&mut self, t: &Table, key: &str, path: &str, default: f64) -> f64 {
        match t.get(key) {
            None => default,
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                self.err(path, format!("expected a number, got {}", other.type_str()));
                default
            }
        }
    }

    fn string<'a>(&mut self, t: &'a Table, key: &str) -> Option<&'a str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.err(key, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn strings(&mut self, t: &Table, key: &str) -> Option<Vec<String>> {
        match t.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.iter().enumerate() {
                    match v {
                        Value::String(s) => out.push(s.clone()),
                        other => self.err(&format!("{key}[{i}]"), format!("expected a string, got {}", other.type_str())),
                    }
                }
                Some(out)
            }
            other => {
                self.err(key, format!("expected an array of strings, got {}", other.type_str()));
                None
            }
        }
    }

    fn sub_table<'a>(&mut self, t: &'a Table, key: &str) -> Option<&'a Table> {
        match t.get(key)? {
            Value::Table(sub) => Some(sub),
            other => {
                self.err(key, format!("expected a table, got {}", other.type_str()));
                None
            }
        }
    }

    fn run(mut self, t: &Table) -> Result<RunConfig, ConfigErrors> {
        for key in t.keys() {
            if !TOP_KEYS.contains(&key.as_str()) {
                self.err(key, "unknown key");
            }
        }
        let outer_k = self.int(t, "outer_k", "outer_k", 2, 6) as usize;
        let inner_k = self.int(t, "inner_k", "inner_k", 2, 4) as usize;
        let seed = self.int(t, "seed", "seed", 0, 0) as u64;
        let threads = self.int(t, "threads", "threads", 0, 0) as usize;
        let synthetic = self.synthetic(t);
        let data = match self.string(t, "data") {
            None if !t.contains_key("data") => {
                self.err("data", "missing data source (a CSV path or \"synthetic\")");
                None
            }
            None => None,
            Some("") => {
                self.err("data", "empty path");
                None
            }
            Some("synthetic") => Some(DataSource::Synthetic(synthetic)),
            Some(path) => {
                if t.contains_key("synthetic") {
                    self.err("synthetic", "only valid with data = \"synthetic\"");
                }
                Some(DataSource::Csv(PathBuf::from(path)))
            }
        };
        let load = self.load_options(t);
        let models = self.models(t);
        let out_dir = match self.string(t, "out_dir") {
            Some(s) => PathBuf::from(s),
            None => std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        };
        let formats = self.formats(t);
        let selection_metric = match self.string(t, "selection_metric") {
            None | Some("mse") => SelectionMetric::Mse,
            Some("mae") => SelectionMetric::Mae,
            Some(other) => {
                self.err("selection_metric", format!("expected \"mse\" or \"mae\", got {other:?}"));
                SelectionMetric::Mse
            }
        };
        let leaky_baseline = match t.get("leaky_baseline") {
            None => false,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.err("leaky_baseline", format!("expected a boolean, got {}", other.type_str()));
                false
            }
        };
        match (self.errors.is_empty(), data) {
            (true, Some(data)) => Ok(RunConfig {
                data,
                load,
                models,
                outer_k,
                inner_k,
                seed,
                threads,
                out_dir,
                formats,
                selection_metric,
                leaky_baseline,
            }),
            _ => Err(ConfigErrors(self.errors)),
        }
    }

    fn synthetic(&mut self, t: &Table) -> SyntheticConfig {
        let d = SyntheticConfig::default();
        let Some(s) = self.sub_table(t, "synthetic") else {
            return d;
        };
        for key in s.keys() {
            if !SYNTHETIC_KEYS.contains(&key.as_str()) {
                self.err(&format!("synthetic.{key}"), "unknown key");
            }
        }
        let cfg = SyntheticConfig {
            intercept: self.float(s, "intercept", "synthetic.intercept", d.intercept),
            slope: self.float(s, "slope", "synthetic.slope", d.slope),
            noise_std: self.float(s, "noise_std", "synthetic.noise_std", d.noise_std),
            n: self.int(s, "n", "synthetic.n", 1, d.n as i64) as usize,
            distance_range: (
                self.float(s, "distance_min", "synthetic.distance_min", d.distance_range.0),
                self.float(s, "distance_max", "synthetic.distance_max", d.distance_range.1),
            ),
            seed: self.int(s, "seed", "synthetic.seed", 0, d.seed as i64) as u64,
        };
        if let Err(e) = cfg.validate() {
            self.err("synthetic", e.to_string());
        }
        cfg
    }

    fn load_options(&mut self, t: &Table) -> LoadOptions {
        let mut opts = LoadOptions::default();
        match self.string(t, "delimiter") {
            None => {}
            Some(s) if s.len() == 1 && s.is_ascii() => opts.delimiter = s.as_bytes()[0],
            Some("\\t") => opts.delimiter = b'\t',
            Some(s) => self.err("delimiter", format!("expected one ASCII character, got {s:?}")),
        }
        match self.string(t, "on_invalid_row") {
            None | Some("reject") => {}
            Some("drop") => opts.policy = LoadPolicy::Drop,
            Some(other) => self.err("on_invalid_row", format!("expected \"reject\" or \"drop\", got {other:?}")),
        }
        if let Some(cols) = self.sub_table(t, "columns") {
            let mut mapping = ColumnMapping::default();
            for (field, header) in cols {
                let key = format!("columns.{field}");
                match header {
                    Value::String(h) => {
                        if mapping.set(field, h).is_err() {
                            self.err(&key, format!("unknown field; expected one of {}", ColumnMapping::fields().join(", ")));
                        }
                    }
                    other => self.err(&key, format!("expected a header name, got {}", other.type_str())),
                }
            }
            opts.mapping = mapping;
        }
        opts
    }

    fn models(&mut self, t: &Table) -> Vec<EstimatorSpec> {
        let families: Vec<Family> = match self.strings(t, "models") {
            None => Family::ALL.to_vec(),
            Some(names) => {
                let mut out = Vec::new();
                for (i, name) in names.iter().enumerate() {
                    match name.parse::<Family>() {
                        Ok(f) if out.contains(&f) => self.err(&format!("models[{i}]"), format!("{name} listed twice")),
                        Ok(f) => out.push(f),
                        Err(e) => self.err(&format!("models[{i}]"), e.to_string()),
                    }
                }
                if names.is_empty() {
                    self.err("models", "at least one model required");
                }
                out
            }
        };
        let mut specs: Vec<EstimatorSpec> = families.iter().map(|&f| EstimatorSpec::default_for(f)).collect();
        if let Some(grids) = self.sub_table(t, "grids") {
            for (name, axes) in grids {
                let key = format!("grids.{name}");
                let family = match name.parse::<Family>() {
                    Ok(f) => f,
                    Err(e) => {
                        self.err(&key, e.to_string());
                        continue;
                    }
                };
                // Grids of unselected families are still checked, then dropped.
                let mut unused = EstimatorSpec::default_for(family);
                let spec = match specs.iter_mut().find(|s| s.family == family) {
                    Some(spec) => spec,
                    None => &mut unused,
                };
                let Value::Table(axes) = axes else {
                    self.err(&key, "expected a table of parameter = [values]");
                    continue;
                };
                for (param, values) in axes {
                    let pkey = format!("{key}.{param}");
                    let list: Option<Vec<f64>> = match values {
                        Value::Array(items) => items
                            .iter()
                            .map(|v| match v {
                                Value::Integer(i) => Some(*i as f64),
                                Value::Float(x) => Some(*x),
                                _ => None,
                            })
                            .collect(),
                        Value::Integer(i) => Some(vec![*i as f64]),
                        Value::Float(x) => Some(vec![*x]),
                        _ => None,
                    };
                    match list {
                        None => self.err(&pkey, "expected a number or an array of numbers"),
                        Some(list) => {
                            if let Err(e) = spec.set_axis(param, list) {
                                self.err(&pkey, e.to_string());
                            }
                        }
                    }
                }
            }
        }
        specs
    }

    fn formats(&mut self, t: &Table) -> Formats {
        let Some(list) = self.strings(t, "formats") else {
            return Formats {
                json: true,
                table: true,
                svg: true,
            };
        };
        let mut f = Formats {
            json: false,
            table: false,
            svg: false,
        };
        for (i, s) in list.iter().enumerate() {
            match s.as_str() {
                "json" => f.json = true,
                "table" => f.table = true,
                "svg" => f.svg = true,
                other => self.err(&format!("formats[{i}]"), format!("expected json, table or svg, got {other:?}")),
            }
        }
        f
    }
}

impl RunConfig {
    /// The resolved configuration in the input format, defaults filled in.
    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        let int = |v: u64| Value::Integer(v as i64);
        match &self.data {
            DataSource::Csv(p) => {
                t.insert("data".into(), Value::String(p.to_string_lossy().into_owned()));
            }
            DataSource::Synthetic(s) => {
                t.insert("data".into(), Value::String("synthetic".into()));
                let mut st = Table::new();
                st.insert("intercept".into(), Value::Float(s.intercept));
                st.insert("slope".into(), Value::Float(s.slope));
                st.insert("noise_std".into(), Value::Float(s.noise_std));
                st.insert("n".into(), int(s.n as u64));
                st.insert("distance_min".into(), Value::Float(s.distance_range.0));
                st.insert("distance_max".into(), Value::Float(s.distance_range.1));
                st.insert("seed".into(), int(s.seed));
                t.insert("synthetic".into(), Value::Table(st));
            }
        }
        t.insert("delimiter".into(), Value::String((self.load.delimiter as char).to_string()));
        t.insert(
            "on_invalid_row".into(),
            Value::String(match self.load.policy {
                LoadPolicy::Reject => "reject".into(),
                LoadPolicy::Drop => "drop".into(),
            }),
        );
        let mut cols = Table::new();
        for (k, field) in ColumnMapping::fields().iter().enumerate() {
            let names = self.load.mapping.accepted(k);
            if names.len() == 1 {
                cols.insert((*field).into(), Value::String(names[0].clone()));
            }
        }
        if !cols.is_empty() {
            t.insert("columns".into(), Value::Table(cols));
        }
        t.insert(
            "models".into(),
            Value::Array(self.models.iter().map(|m| Value::String(m.label().into())).collect()),
        );
        let mut grids = Table::new();
        for m in &self.models {
            let mut g = Table::new();
            for (name, values) in &m.grid.axes {
                g.insert(name.clone(), Value::Array(values.iter().map(|&v| Value::Float(v)).collect()));
            }
            grids.insert(m.label().into(), Value::Table(g));
        }
        t.insert("grids".into(), Value::Table(grids));
        t.insert("outer_k".into(), int(self.outer_k as u64));
        t.insert("inner_k".into(), int(self.inner_k as u64));
        t.insert("seed".into(), int(self.seed));
        t.insert("threads".into(), int(self.threads as u64));
        t.insert("out_dir".into(), Value::String(self.out_dir.to_string_lossy().into_owned()));
        let mut formats = Vec::new();
        for (on, name) in [(self.formats.json, "json"), (self.formats.table, "table"), (self.formats.svg, "svg")] {
            if on {
                formats.push(Value::String(name.into()));
            }
        }
        t.insert("formats".into(), Value::Array(formats));
        t.insert("selection_metric".into(), Value::String(self.selection_metric.to_string()));
        t.insert("leaky_baseline".into(), Value::Boolean(self.leaky_baseline));
        toml::to_string(&t).expect("plain table serializes")
    }
}
