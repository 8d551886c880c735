//! Pipeline configuration file (TOML) and its resolution into the core
//! option types. Every field beyond the input paths and windows has a
//! default, and a handful can be overridden from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use punctual_core::exec::Execution;
use punctual_core::fit::{FitFamily, FitOptions};
use punctual_core::ingest::{
    AssignOptions, CleanOptions, ExtractOptions, RouteDirection, Scenario, TimeWindow,
};
use punctual_core::smc::SmcOptions;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Route TOML file.
    pub route: PathBuf,
    /// AVL CSV inputs, one operating day each.
    pub avl: Vec<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Consistency check against the route file's direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<RouteDirection>,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    /// Families fitted for the selection table.
    #[serde(default = "FitFamily::standard_set")]
    pub table_families: Vec<FitFamily>,
    /// Families carried through model building and simulation.
    #[serde(default = "default_model_families")]
    pub model_families: Vec<FitFamily>,
    /// Analysis windows; crossings whose entry falls in any window are
    /// kept (several windows share one analysis, e.g. around midnight).
    pub windows: Vec<WindowConfig>,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub smc: SmcConfig,
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("PUNCTUAL_OUT_DIR").map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

fn default_scenarios() -> Vec<Scenario> {
    vec![Scenario::Baseline, Scenario::SpeedLimited]
}

fn default_model_families() -> Vec<FitFamily> {
    vec![
        FitFamily::HyperErlang { branches: 2 },
        FitFamily::ErlangPlusC,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub label: String,
    /// `HH:MM:SS` clock time (hours may exceed 23 for the after-midnight
    /// tail of the operating day) or plain seconds.
    pub start: toml::Value,
    pub end: toml::Value,
}

fn parse_window_time(value: &toml::Value) -> Result<f64, ConfigError> {
    match value {
        toml::Value::String(s) => {
            parse_extended_clock(s).ok_or_else(|| ConfigError(format!("bad window time `{s}`")))
        }
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        other => Err(ConfigError(format!("bad window time `{other}`"))),
    }
}

/// Clock parser for window bounds; unlike AVL timestamps these may reach
/// 27:00:00 (the exclusive end of the operating day).
fn parse_extended_clock(text: &str) -> Option<f64> {
    let mut parts = text.split(':');
    let hh: u32 = parts.next()?.parse().ok()?;
    let mm: u32 = parts.next()?.parse().ok()?;
    let ss: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || hh > 27 || mm > 59 || ss > 59 {
        return None;
    }
    Some(f64::from(hh) * 3600.0 + f64::from(mm) * 60.0 + f64::from(ss))
}

impl WindowConfig {
    pub fn to_window(&self) -> Result<TimeWindow, ConfigError> {
        let start = parse_window_time(&self.start)?;
        let end = parse_window_time(&self.end)?;
        if start >= end {
            return Err(ConfigError(format!(
                "window `{}` has start {start} >= end {end}",
                self.label
            )));
        }
        Ok(TimeWindow::new(self.label.clone(), start, end))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub snap_radius_m: Option<f64>,
    pub gap_threshold_s: Option<f64>,
    pub clean_floor_s: Option<f64>,
}

impl IngestConfig {
    pub fn assign_options(&self) -> AssignOptions {
        let mut opts = AssignOptions::default();
        if let Some(r) = self.snap_radius_m {
            opts.snap_radius_m = r;
        }
        opts
    }

    pub fn extract_options(&self) -> ExtractOptions {
        let mut opts = ExtractOptions::default();
        if let Some(g) = self.gap_threshold_s {
            opts.gap_threshold_s = g;
        }
        opts
    }

    pub fn clean_options(&self, route: &punctual_core::ingest::RouteSpec) -> CleanOptions {
        let mut opts = CleanOptions::default();
        if let Some(f) = self.clean_floor_s {
            opts.floor_s = f;
        }
        for p in &route.patches {
            if let Some(f) = p.clean_floor_s {
                opts.per_patch_floor_s.insert(p.index, f);
            }
        }
        opts
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub section_subdivisions: Option<usize>,
    pub line_search_steps: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tol: Option<f64>,
    pub shape_cap: Option<u32>,
    pub em_max_iterations: Option<usize>,
    pub em_tol: Option<f64>,
    /// Minimum cleaned samples required before a patch is fitted.
    pub min_samples: Option<usize>,
}

impl FitConfig {
    pub fn to_options(&self) -> FitOptions {
        let mut opts = FitOptions::default();
        if let Some(v) = self.section_subdivisions {
            opts.section_subdivisions = v;
        }
        if let Some(v) = self.line_search_steps {
            opts.line_search_steps = v;
        }
        if let Some(v) = self.max_iterations {
            opts.max_iterations = v;
        }
        if let Some(v) = self.tol {
            opts.tol = v;
        }
        if let Some(v) = self.shape_cap {
            opts.shape_cap = v;
        }
        if let Some(v) = self.em_max_iterations {
            opts.em_max_iterations = v;
        }
        if let Some(v) = self.em_tol {
            opts.em_tol = v;
        }
        opts
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(15)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    pub confidence: Option<f64>,
    pub half_width: Option<f64>,
    pub mean_relative_half_width: Option<f64>,
    pub max_runs: Option<u64>,
    pub batch: Option<u64>,
    pub fixed_runs: Option<u64>,
    pub include_initial_delay: Option<bool>,
    pub sequential: Option<bool>,
    pub early_margin_s: Option<f64>,
    pub late_margin_s: Option<f64>,
    pub histogram_bin_s: Option<f64>,
    pub histogram_runs: Option<u64>,
}

impl SmcConfig {
    pub fn to_options(&self, seed: u64) -> SmcOptions {
        let mut opts = SmcOptions {
            seed,
            ..SmcOptions::default()
        };
        if let Some(v) = self.confidence {
            opts.confidence = v;
        }
        if let Some(v) = self.half_width {
            opts.half_width = v;
        }
        if let Some(v) = self.mean_relative_half_width {
            opts.mean_relative_half_width = v;
        }
        if let Some(v) = self.max_runs {
            opts.max_runs = v;
        }
        if let Some(v) = self.batch {
            opts.batch = v;
        }
        opts.fixed_runs = self.fixed_runs;
        if let Some(v) = self.include_initial_delay {
            opts.include_initial_delay = v;
        }
        if self.sequential == Some(true) {
            opts.execution = Execution::Sequential;
        }
        opts
    }

    pub fn early_margin(&self) -> f64 {
        self.early_margin_s
            .unwrap_or(punctual_core::smc::DEFAULT_EARLY_MARGIN)
    }

    pub fn late_margin(&self) -> f64 {
        self.late_margin_s
            .unwrap_or(punctual_core::smc::DEFAULT_LATE_MARGIN)
    }

    pub fn histogram_bin(&self) -> f64 {
        self.histogram_bin_s.unwrap_or(30.0)
    }

    pub fn histogram_runs(&self) -> u64 {
        self.histogram_runs.unwrap_or(20_000)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ConfigError(format!("cannot read config `{}`: {e}", path.display())))?;
        let text = String::from_utf8_lossy(&bytes);
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("bad config `{}`: {e}", path.display())))?;
        // Paths are relative to the config file's directory.
        if let Some(dir) = path.parent() {
            config.route = resolve(dir, &config.route);
            config.avl = config.avl.iter().map(|p| resolve(dir, p)).collect();
            config.out_dir = resolve(dir, &config.out_dir);
        }
        if config.avl.is_empty() {
            return Err(ConfigError("config lists no AVL inputs".to_string()));
        }
        if config.scenarios.is_empty() {
            return Err(ConfigError("config lists no scenarios".to_string()));
        }
        if config.windows.is_empty() {
            return Err(ConfigError("config lists no analysis windows".to_string()));
        }
        Ok((config, bytes))
    }

    pub fn windows(&self) -> Result<Vec<TimeWindow>, ConfigError> {
        self.windows.iter().map(WindowConfig::to_window).collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
route = "route.toml"
avl = ["day1.csv"]

[[windows]]
label = "midday"
start = "09:00:00"
end = "15:00:00"
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(config.seed, 0);
        assert_eq!(config.scenarios.len(), 2);
        assert_eq!(config.table_families.len(), 4);
        let w = config.windows[0].to_window().unwrap();
        assert_eq!(w.start, 9.0 * 3600.0);
        assert_eq!(w.end, 15.0 * 3600.0);
    }

    #[test]
    fn window_times_accept_seconds_and_extended_hours() {
        let text = r#"
route = "r.toml"
avl = ["a.csv"]

[[windows]]
label = "night"
start = "24:00:00"
end = 97200
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        let w = config.windows[0].to_window().unwrap();
        assert_eq!(w.start, 86400.0);
        assert_eq!(w.end, 97200.0);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"
route = "r.toml"
avl = ["a.csv"]
typo_field = 3

[[windows]]
label = "w"
start = 0
end = 10
"#;
        assert!(toml::from_str::<PipelineConfig>(text).is_err());
    }

    #[test]
    fn bad_window_is_an_error() {
        let w = WindowConfig {
            label: "w".to_string(),
            start: toml::Value::String("25:99:00".to_string()),
            end: toml::Value::Integer(10),
        };
        assert!(w.to_window().is_err());
    }
}
