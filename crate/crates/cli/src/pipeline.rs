//! Pipeline stages and the end-to-end runner.
//!
//! Each stage reads the previous stage's files and writes its own, so the
//! standalone subcommands compose to exactly what `run` produces. All
//! outputs are byte-deterministic for a given config and seed: reports
//! carry the seed and the config hash, never wall-clock data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use punctual_core::fit::{model_selection_table, FitCell, FitFamily, FitOptions, PatchFits};
use punctual_core::ingest::{
    assign_patches, clean_outliers, crossing_samples, extract_crossings, parse_avl,
    read_samples_csv, write_samples_csv, AssignOptions, CleanOptions, CrossingSample,
    DiscardCounts, ExtractOptions, RouteSpec, Scenario, TimeWindow,
};
use punctual_core::pta::{build_pta_with_digits, Pta, DEFAULT_WEIGHT_DIGITS};
use punctual_core::smc::{
    estimate_mean, journey_histogram, on_time_report, SmcEstimate, SmcOptions,
};
use punctual_core::uppaal::{export_xml, render_query_file};

use crate::config::PipelineConfig;

/// Failures split by exit code: config/IO problems exit 2, analysis
/// problems exit 1.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

pub fn analysis_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Analysis(msg.into())
}

pub fn load_route(path: &Path) -> Result<RouteSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read route file `{}`: {e}", path.display())))?;
    RouteSpec::from_toml_str(&text)
        .map_err(|e| config_err(format!("route file `{}`: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| config_err(format!("cannot create `{}`: {e}", dir.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| config_err(format!("cannot write `{}`: {e}", path.display())))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct IngestStats {
    pub files: usize,
    pub parsed_fixes: usize,
    pub skipped_rows: usize,
    pub unassigned_fixes: usize,
    pub crossings_kept: usize,
    pub discarded: DiscardCounts,
    /// Outliers removed by cleaning, per scenario.
    pub outliers_removed: BTreeMap<String, usize>,
    /// (patch, scenario) groups too small to clean.
    pub small_groups: Vec<(usize, String)>,
}

pub struct IngestOutput {
    /// Cleaned samples per scenario, sorted by (patch, entry time).
    pub samples: BTreeMap<Scenario, Vec<CrossingSample>>,
    pub stats: IngestStats,
}

/// Parse, assign, extract, derive the counterfactual, and clean. Each AVL
/// file is one operating day; samples from all files pool together.
pub fn run_ingest(
    route: &RouteSpec,
    avl_paths: &[PathBuf],
    windows: &[TimeWindow],
    scenarios: &[Scenario],
    assign_opts: &AssignOptions,
    extract_opts: &ExtractOptions,
    clean_opts: &CleanOptions,
) -> Result<IngestOutput> {
    let mut stats = IngestStats {
        files: avl_paths.len(),
        ..IngestStats::default()
    };
    let mut crossings = Vec::new();
    for path in avl_paths {
        let file = fs::File::open(path)
            .map_err(|e| config_err(format!("cannot open AVL file `{}`: {e}", path.display())))?;
        let parsed = parse_avl(file, &route.route_id)
            .map_err(|e| config_err(format!("AVL file `{}`: {e}", path.display())))?;
        stats.parsed_fixes += parsed.fixes.len();
        stats.skipped_rows += parsed.skipped_rows;
        let assigned = assign_patches(&parsed.fixes, route, assign_opts);
        stats.unassigned_fixes += assigned.iter().filter(|a| a.patch.is_none()).count();
        for window in windows {
            let extracted = extract_crossings(&assigned, window, extract_opts);
            stats.discarded.outside_window += extracted.discarded.outside_window;
            stats.discarded.gap_exceeded += extracted.discarded.gap_exceeded;
            stats.discarded.regression += extracted.discarded.regression;
            stats.discarded.partial += extracted.discarded.partial;
            crossings.extend(extracted.crossings);
        }
    }
    crossings.sort_by(|a, b| {
        a.patch_index
            .cmp(&b.patch_index)
            .then(
                a.entry_ts
                    .partial_cmp(&b.entry_ts)
                    .expect("finite timestamps"),
            )
            .then(a.vehicle_id.cmp(&b.vehicle_id))
    });
    stats.crossings_kept = crossings.len();

    let mut samples = BTreeMap::new();
    for &scenario in scenarios {
        let raw = crossing_samples(&crossings, route, scenario);
        let cleaned = clean_outliers(&raw, clean_opts);
        stats
            .outliers_removed
            .insert(scenario.to_string(), cleaned.discarded.len());
        for (patch, sc) in cleaned.small_groups {
            stats.small_groups.push((patch, sc.to_string()));
        }
        let mut kept = cleaned.kept;
        kept.sort_by(|a, b| {
            a.patch_index.cmp(&b.patch_index).then(
                a.entry_ts
                    .partial_cmp(&b.entry_ts)
                    .expect("finite timestamps"),
            )
        });
        samples.insert(scenario, kept);
    }
    Ok(IngestOutput { samples, stats })
}

pub fn samples_path(out_dir: &Path, scenario: Scenario) -> PathBuf {
    out_dir.join(format!("samples_{scenario}.csv"))
}

pub fn write_ingest_outputs(out_dir: &Path, output: &IngestOutput) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (scenario, samples) in &output.samples {
        let path = samples_path(out_dir, *scenario);
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, samples)
            .map_err(|e| analysis_err(format!("sample export failed: {e}")))?;
        write_file(&path, &buf)?;
        written.push(path);
    }
    let stats_path = out_dir.join("ingest_stats.json");
    write_file(&stats_path, &to_json_pretty(&output.stats))?;
    written.push(stats_path);
    Ok(written)
}

// ------------------------------------------------------------------- fit

/// Fit every family to every patch with enough cleaned samples, reading
/// the stage input from the exported CSV so standalone runs reproduce the
/// pipeline byte for byte.
pub fn run_fit(
    samples_csv: &Path,
    families: &[FitFamily],
    opts: &FitOptions,
    min_samples: usize,
    execution: punctual_core::exec::Execution,
) -> Result<Vec<PatchFits>> {
    let file = fs::File::open(samples_csv).map_err(|e| {
        config_err(format!(
            "cannot open samples file `{}`: {e}",
            samples_csv.display()
        ))
    })?;
    let samples = read_samples_csv(file)
        .map_err(|e| config_err(format!("samples file `{}`: {e}", samples_csv.display())))?;
    let mut per_patch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in &samples {
        per_patch
            .entry(s.patch_index)
            .or_default()
            .push(s.duration_s);
    }
    let grouped: Vec<(usize, Vec<f64>)> = per_patch
        .into_iter()
        .filter(|(_, xs)| xs.len() >= min_samples)
        .collect();
    if grouped.is_empty() {
        return Err(analysis_err(format!(
            "no patch in `{}` has the {min_samples} samples required for fitting",
            samples_csv.display()
        )));
    }
    Ok(model_selection_table(&grouped, families, opts, execution))
}

pub fn write_fit_outputs(out_dir: &Path, label: &str, table: &[PatchFits]) -> Result<Vec<PathBuf>> {
    let fits = out_dir.join(format!("fits_{label}.json"));
    write_file(&fits, &to_json_pretty(&table))?;
    let mut buf = Vec::new();
    punctual_core::fit::write_fit_table_csv(&mut buf, table)
        .map_err(|e| analysis_err(format!("fit table export failed: {e}")))?;
    let csv = out_dir.join(format!("fit_table_{label}.csv"));
    write_file(&csv, &buf)?;
    Ok(vec![fits, csv])
}

// ------------------------------------------------------------- build-pta

/// Pull one family's fitted distribution per journey patch out of a fits
/// table and chain them into an automaton.
pub fn build_model_from_fits(
    fits: &[PatchFits],
    family: FitFamily,
    route: &RouteSpec,
    weight_digits: u32,
) -> Result<Pta> {
    let mut dists = Vec::new();
    for patch in route.journey_patches() {
        let row = fits
            .iter()
            .find(|r| r.patch_index == patch)
            .ok_or_else(|| analysis_err(format!("no fits for journey patch {patch}")))?;
        let cell = row
            .cells
            .get(&family)
            .ok_or_else(|| analysis_err(format!("patch {patch} has no `{family}` fit")))?;
        match cell {
            FitCell::Ok(report) => dists.push(report.dist.clone()),
            FitCell::Failed { error } => {
                return Err(analysis_err(format!(
                    "patch {patch} `{family}` fit failed: {error}"
                )))
            }
        }
    }
    build_pta_with_digits(&dists, weight_digits)
        .map_err(|e| analysis_err(format!("model build failed: {e}")))
}

pub fn load_fits(path: &Path) -> Result<Vec<PatchFits>> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read fits `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| config_err(format!("fits file `{}`: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<Pta> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read model `{}`: {e}", path.display())))?;
    let pta: Pta = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("model file `{}`: {e}", path.display())))?;
    let violations = pta.validate();
    if !violations.is_empty() {
        return Err(analysis_err(format!(
            "model `{}` is invalid:\n{}",
            path.display(),
            violations.join("\n")
        )));
    }
    Ok(pta)
}

pub fn model_path(out_dir: &Path, scenario: Scenario, family: FitFamily) -> PathBuf {
    out_dir.join(format!("model_{scenario}_{family}.json"))
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanRecord {
    pub scenario: Scenario,
    pub family: FitFamily,
    pub mean: SmcEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnTimeRecord {
    pub scenario: Scenario,
    pub family: FitFamily,
    pub timetable_s: f64,
    pub early_deadline_s: f64,
    pub late_deadline_s: f64,
    pub p_too_early: SmcEstimate,
    pub p_too_late: SmcEstimate,
}

/// Per-model estimates: mean journey time, on-time probabilities, and the
/// journey histogram. Streams are allocated per model so estimates never
/// share randomness.
pub struct ModelEstimates {
    pub mean: MeanRecord,
    pub on_time: OnTimeRecord,
    pub histogram: punctual_core::smc::Histogram,
}

/// Substream slots reserved per model (mean, histogram, early, late).
pub const STREAMS_PER_MODEL: u64 = 8;

/// Knobs shared by every model's estimation pass.
pub struct EstimateSettings {
    pub early_margin: f64,
    pub late_margin: f64,
    pub histogram_bin: f64,
    pub histogram_runs: u64,
}

pub fn run_model_estimates(
    pta: &Pta,
    scenario: Scenario,
    family: FitFamily,
    route: &RouteSpec,
    base_stream: u64,
    opts: &SmcOptions,
    settings: &EstimateSettings,
) -> Result<ModelEstimates> {
    let mean_opts = SmcOptions {
        stream: base_stream,
        ..opts.clone()
    };
    let mean = estimate_mean(pta, &mean_opts)
        .map_err(|e| analysis_err(format!("mean estimation failed: {e}")))?;
    let hist_opts = SmcOptions {
        stream: base_stream + 1,
        ..opts.clone()
    };
    let histogram = journey_histogram(
        pta,
        settings.histogram_runs,
        settings.histogram_bin,
        &hist_opts,
    )
    .map_err(|e| analysis_err(format!("histogram failed: {e}")))?;
    let ontime_opts = SmcOptions {
        stream: base_stream + 2,
        ..opts.clone()
    };
    let timetable = route.timetable_duration as f64;
    let report = on_time_report(
        pta,
        timetable,
        settings.early_margin,
        settings.late_margin,
        &ontime_opts,
    )
    .map_err(|e| analysis_err(format!("on-time estimation failed: {e}")))?;
    Ok(ModelEstimates {
        mean: MeanRecord {
            scenario,
            family,
            mean,
        },
        on_time: OnTimeRecord {
            scenario,
            family,
            timetable_s: timetable,
            early_deadline_s: report.early_deadline,
            late_deadline_s: report.late_deadline,
            p_too_early: report.p_too_early,
            p_too_late: report.p_too_late,
        },
        histogram,
    })
}

// ---------------------------------------------------------------- report

/// Context handed from `run`/`ingest` to `report` so reports can be
/// regenerated without re-simulating.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunContext {
    pub route_id: String,
    pub direction: String,
    pub window_labels: Vec<String>,
    pub timetable_s: f64,
    pub seed: u64,
    pub config_sha256: String,
    pub scenarios: Vec<Scenario>,
    pub model_families: Vec<FitFamily>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn report_preamble(context: &RunContext) -> String {
    format!(
        "# seed: {}\n# config_sha256: {}\n",
        context.seed, context.config_sha256
    )
}

/// Journey-time table: one row per family with per-scenario means, the
/// baseline-to-limited difference, and the percent change
/// (difference / baseline * 100, two decimals).
pub fn render_means_csv(context: &RunContext, means: &[MeanRecord]) -> String {
    let mut out = report_preamble(context);
    let both = context.scenarios.contains(&Scenario::Baseline)
        && context.scenarios.contains(&Scenario::SpeedLimited);
    out.push_str("route_id,window,direction,family,timetable_s");
    for scenario in &context.scenarios {
        out.push_str(&format!(",{scenario}_mean_s"));
    }
    if both {
        out.push_str(",difference_s,percent_change");
    }
    out.push('\n');
    for family in &context.model_families {
        let find = |scenario: Scenario| {
            means
                .iter()
                .find(|m| m.family == *family && m.scenario == scenario)
                .map(|m| m.mean.point)
        };
        out.push_str(&format!(
            "{},{},{},{},{}",
            context.route_id,
            context.window_labels.join("+"),
            context.direction,
            family,
            context.timetable_s
        ));
        for scenario in &context.scenarios {
            match find(*scenario) {
                Some(v) => out.push_str(&format!(",{v:.2}")),
                None => out.push(','),
            }
        }
        if both {
            if let (Some(old), Some(new)) = (find(Scenario::Baseline), find(Scenario::SpeedLimited))
            {
                let diff = new - old;
                out.push_str(&format!(",{:.2},{:.2}", diff, diff / old * 100.0));
            } else {
                out.push_str(",,");
            }
        }
        out.push('\n');
    }
    out
}

/// On-time probability table: one row per model with both interval bounds.
pub fn render_ontime_csv(context: &RunContext, records: &[OnTimeRecord]) -> String {
    let mut out = report_preamble(context);
    out.push_str(
        "route_id,family,scenario,timetable_s,early_deadline_s,p_too_early_low,p_too_early_high,p_too_early_runs,late_deadline_s,p_too_late_low,p_too_late_high,p_too_late_runs,confidence\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{:.6},{:.6},{},{}\n",
            context.route_id,
            r.family,
            r.scenario,
            r.timetable_s,
            r.early_deadline_s,
            r.p_too_early.ci_low,
            r.p_too_early.ci_high,
            r.p_too_early.runs,
            r.late_deadline_s,
            r.p_too_late.ci_low,
            r.p_too_late.ci_high,
            r.p_too_late.runs,
            r.p_too_early.confidence
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    context: &'a RunContext,
    means: &'a [MeanRecord],
    on_time: &'a [OnTimeRecord],
    files: &'a [String],
}

/// Assemble means/on-time/summary from estimate records already on disk.
pub fn write_reports(
    out_dir: &Path,
    context: &RunContext,
    means: &[MeanRecord],
    on_time: &[OnTimeRecord],
    files: &[String],
) -> Result<Vec<PathBuf>> {
    let means_path = out_dir.join("means.csv");
    write_file(&means_path, render_means_csv(context, means).as_bytes())?;
    let ontime_path = out_dir.join("ontime.csv");
    write_file(&ontime_path, render_ontime_csv(context, on_time).as_bytes())?;
    let summary_path = out_dir.join("summary.json");
    write_file(
        &summary_path,
        &to_json_pretty(&Summary {
            context,
            means,
            on_time,
            files,
        }),
    )?;
    Ok(vec![means_path, ontime_path, summary_path])
}

pub fn estimates_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("estimates")
}

/// Re-read the estimate records a pipeline run left in `out_dir`.
pub fn collect_estimates(
    out_dir: &Path,
) -> Result<(RunContext, Vec<MeanRecord>, Vec<OnTimeRecord>)> {
    let context_path = out_dir.join("context.json");
    let text = fs::read_to_string(&context_path).map_err(|e| {
        config_err(format!(
            "cannot read `{}` (run the pipeline first): {e}",
            context_path.display()
        ))
    })?;
    let context: RunContext =
        serde_json::from_str(&text).map_err(|e| config_err(format!("context file: {e}")))?;
    let mut means = Vec::new();
    let mut on_time = Vec::new();
    for scenario in &context.scenarios {
        for family in &context.model_families {
            let mean_path = estimates_dir(out_dir).join(format!("{scenario}_{family}_mean.json"));
            if let Ok(text) = fs::read_to_string(&mean_path) {
                means.push(
                    serde_json::from_str(&text)
                        .map_err(|e| config_err(format!("{}: {e}", mean_path.display())))?,
                );
            }
            let ontime_path =
                estimates_dir(out_dir).join(format!("{scenario}_{family}_ontime.json"));
            if let Ok(text) = fs::read_to_string(&ontime_path) {
                on_time.push(
                    serde_json::from_str(&text)
                        .map_err(|e| config_err(format!("{}: {e}", ontime_path.display())))?,
                );
            }
        }
    }
    Ok((context, means, on_time))
}

// ------------------------------------------------------------------- run

/// Execute the full pipeline. Partial outputs are kept on failure; the
/// MANIFEST records what completed.
pub fn run_pipeline(config: &PipelineConfig, config_bytes: &[u8]) -> Result<()> {
    let out_dir = config.out_dir.clone();
    let mut manifest: Vec<String> = Vec::new();
    let mut files: Vec<String> = Vec::new();

    let result = run_pipeline_inner(config, config_bytes, &out_dir, &mut manifest, &mut files);
    manifest.push(match &result {
        Ok(()) => "status: complete".to_string(),
        Err(e) => format!("status: incomplete ({e})"),
    });
    manifest.sort();
    let manifest_text = manifest.join("\n") + "\n";
    write_file(&out_dir.join("MANIFEST"), manifest_text.as_bytes())?;
    result
}

fn record(
    manifest: &mut Vec<String>,
    files: &mut Vec<String>,
    out_dir: &Path,
    paths: Vec<PathBuf>,
) {
    for p in paths {
        let rel = p.strip_prefix(out_dir).unwrap_or(&p).display().to_string();
        manifest.push(format!("ok {rel}"));
        files.push(rel);
    }
}

fn run_pipeline_inner(
    config: &PipelineConfig,
    config_bytes: &[u8],
    out_dir: &Path,
    manifest: &mut Vec<String>,
    files: &mut Vec<String>,
) -> Result<()> {
    let route = load_route(&config.route)?;
    if let Some(direction) = config.direction {
        if direction != route.direction {
            return Err(config_err(format!(
                "config direction {direction:?} does not match route direction {:?}",
                route.direction
            )));
        }
    }
    let windows = config.windows().map_err(|e| config_err(e.to_string()))?;

    let context = RunContext {
        route_id: route.route_id.clone(),
        direction: format!("{:?}", route.direction).to_lowercase(),
        window_labels: windows.iter().map(|w| w.label.clone()).collect(),
        timetable_s: route.timetable_duration as f64,
        seed: config.seed,
        config_sha256: sha256_hex(config_bytes),
        scenarios: config.scenarios.clone(),
        model_families: config.model_families.clone(),
    };
    write_file(&out_dir.join("context.json"), &to_json_pretty(&context))?;
    record(manifest, files, out_dir, vec![out_dir.join("context.json")]);

    // Ingest.
    let ingest = run_ingest(
        &route,
        &config.avl,
        &windows,
        &config.scenarios,
        &config.ingest.assign_options(),
        &config.ingest.extract_options(),
        &config.ingest.clean_options(&route),
    )?;
    record(
        manifest,
        files,
        out_dir,
        write_ingest_outputs(out_dir, &ingest)?,
    );

    // Fit (reading back the exported CSVs keeps stages composable).
    let fit_opts = config.fit.to_options();
    let execution = config.smc.to_options(config.seed).execution;
    let mut fits: BTreeMap<Scenario, Vec<PatchFits>> = BTreeMap::new();
    for &scenario in &config.scenarios {
        let table = run_fit(
            &samples_path(out_dir, scenario),
            &config.table_families,
            &fit_opts,
            config.fit.min_samples(),
            execution,
        )?;
        record(
            manifest,
            files,
            out_dir,
            write_fit_outputs(out_dir, &scenario.to_string(), &table)?,
        );
        fits.insert(scenario, table);
    }

    // Build models and estimate, one (scenario, family) at a time.
    let smc_opts = config.smc.to_options(config.seed);
    let mut means = Vec::new();
    let mut on_time = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut stream = 0u64;
    for &scenario in &config.scenarios {
        for &family in &config.model_families {
            let base_stream = stream;
            stream += STREAMS_PER_MODEL;
            let built =
                build_model_from_fits(&fits[&scenario], family, &route, DEFAULT_WEIGHT_DIGITS);
            let pta = match built {
                Ok(pta) => pta,
                Err(e) => {
                    manifest.push(format!("failed model_{scenario}_{family}: {e}"));
                    failures.push(format!("model {scenario}/{family}: {e}"));
                    continue;
                }
            };
            let model = model_path(out_dir, scenario, family);
            write_file(&model, &to_json_pretty(&pta))?;
            // UPPAAL export alongside the internal model file.
            let queries = on_time_queries(route.timetable_duration as f64, &config.smc);
            let xml = export_xml(&pta, &queries)
                .map_err(|e| analysis_err(format!("XML export failed: {e}")))?;
            let xml_path = out_dir.join(format!("model_{scenario}_{family}.xml"));
            write_file(&xml_path, xml.as_bytes())?;
            let q_path = out_dir.join(format!("model_{scenario}_{family}.q"));
            write_file(&q_path, render_query_file(&queries).as_bytes())?;
            record(manifest, files, out_dir, vec![model, xml_path, q_path]);

            let estimates = run_model_estimates(
                &pta,
                scenario,
                family,
                &route,
                base_stream,
                &smc_opts,
                &EstimateSettings {
                    early_margin: config.smc.early_margin(),
                    late_margin: config.smc.late_margin(),
                    histogram_bin: config.smc.histogram_bin(),
                    histogram_runs: config.smc.histogram_runs(),
                },
            )?;
            let mean_path = estimates_dir(out_dir).join(format!("{scenario}_{family}_mean.json"));
            write_file(&mean_path, &to_json_pretty(&estimates.mean))?;
            let ontime_path =
                estimates_dir(out_dir).join(format!("{scenario}_{family}_ontime.json"));
            write_file(&ontime_path, &to_json_pretty(&estimates.on_time))?;
            let hist_path = out_dir.join(format!("histogram_{scenario}_{family}.csv"));
            let mut buf = Vec::new();
            estimates
                .histogram
                .write_csv(&mut buf)
                .map_err(|e| analysis_err(format!("histogram export failed: {e}")))?;
            write_file(&hist_path, &buf)?;
            record(
                manifest,
                files,
                out_dir,
                vec![mean_path, ontime_path, hist_path],
            );
            means.push(estimates.mean);
            on_time.push(estimates.on_time);
        }
    }

    record(
        manifest,
        files,
        out_dir,
        write_reports(
            out_dir,
            &context,
            &means,
            &on_time,
            files.clone().as_slice(),
        )?,
    );

    if failures.is_empty() {
        Ok(())
    } else {
        Err(analysis_err(failures.join("; ")))
    }
}

/// The standard query pair for a timetable: too-early and too-late.
pub fn on_time_queries(
    timetable: f64,
    smc: &crate::config::SmcConfig,
) -> Vec<punctual_core::smc::Query> {
    use punctual_core::smc::{Comparison, Query};
    vec![
        Query::ProbReachByDeadline {
            deadline: timetable - smc.early_margin(),
            comparison: Comparison::AtMost,
        },
        Query::ProbReachByDeadline {
            deadline: timetable + smc.late_margin(),
            comparison: Comparison::AtLeast,
        },
    ]
}
