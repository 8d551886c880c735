//! `punctual` — patch-based bus journey-time modelling pipeline.
//!
//! Subcommands mirror the pipeline stages (ingest, fit, build-pta,
//! simulate, export-uppaal, synth, report) so each stage can run on the
//! previous stage's files; `run` chains them all from a single config.
//!
//! Exit codes: 0 success, 1 analysis failure, 2 configuration/IO failure.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use punctual_core::exec::Execution;
use punctual_core::fit::FitFamily;
use punctual_core::ingest::{
    format_clock, generate_synthetic_trace, write_avl_csv, Scenario, SynthOptions, TimeWindow,
};
use punctual_core::pta::DEFAULT_WEIGHT_DIGITS;
use punctual_core::smc::{
    estimate_mean, estimate_probability, journey_histogram, Comparison, Query, SmcOptions,
};
use punctual_core::uppaal::{export_xml, render_query_file};

use config::PipelineConfig;
use pipeline::{analysis_err, config_err, PipelineError, Result};

#[derive(Parser)]
#[command(
    name = "punctual",
    version,
    about = "Fit per-patch bus travel-time distributions from AVL traces, build a probabilistic timed automaton, and estimate journey times and on-time probabilities under baseline and 20 mph speed-limit scenarios."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline from a config file.
    Run {
        /// Pipeline TOML config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Restrict to one or more scenarios (default: config's list).
        #[arg(long = "scenario")]
        scenarios: Vec<Scenario>,
    },
    /// Parse AVL traces and export cleaned per-patch crossing samples.
    Ingest {
        #[arg(long)]
        route: PathBuf,
        /// AVL CSV file (repeat for several operating days).
        #[arg(long = "avl", required = true)]
        avl: Vec<PathBuf>,
        #[arg(long, default_value = "window")]
        window_label: String,
        /// Window start, HH:MM:SS or seconds since midnight.
        #[arg(long)]
        window_start: String,
        #[arg(long)]
        window_end: String,
        #[arg(long, default_value = "out", env = "PUNCTUAL_OUT_DIR")]
        out_dir: PathBuf,
        /// Scenarios to export (default both).
        #[arg(long = "scenario")]
        scenarios: Vec<Scenario>,
        #[arg(long, default_value_t = 50.0)]
        snap_radius: f64,
        #[arg(long, default_value_t = 60.0)]
        gap_threshold: f64,
        #[arg(long, default_value_t = 30.0)]
        clean_floor: f64,
    },
    /// Fit the distribution families to exported crossing samples.
    Fit {
        /// Crossing-sample CSV from `ingest`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "out", env = "PUNCTUAL_OUT_DIR")]
        out_dir: PathBuf,
        /// Label for the output files (`fits_<label>.json`).
        #[arg(long, default_value = "baseline")]
        label: String,
        /// Families to fit (comma-separated).
        #[arg(long, value_delimiter = ',')]
        families: Vec<FitFamily>,
        #[arg(long, default_value_t = 15)]
        min_samples: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Chain fitted patch distributions into a route automaton.
    BuildPta {
        /// Fits JSON from `fit` (with --family), or omit and give
        /// --hyperstar-table files instead.
        #[arg(long, required_unless_present = "hyperstar_table")]
        fits: Option<PathBuf>,
        #[arg(long, required_unless_present = "hyperstar_table")]
        family: Option<FitFamily>,
        #[arg(long)]
        route: PathBuf,
        /// Externally fitted hyper-Erlang parameter table (one file per
        /// journey patch, in route order; rows `alpha k lambda`).
        #[arg(long = "hyperstar-table")]
        hyperstar_table: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Decimal precision for branch-weight conversion.
        #[arg(long, default_value_t = DEFAULT_WEIGHT_DIGITS)]
        digits: u32,
    },
    /// Estimate a query on a built model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// "prob<=D", "prob>D", "mean", or "hist".
        #[arg(long)]
        query: String,
        #[command(flatten)]
        smc: SmcArgs,
        /// Histogram bin width, seconds (hist queries).
        #[arg(long, default_value_t = 30.0)]
        bin_width: f64,
        /// Histogram run count.
        #[arg(long, default_value_t = 20_000)]
        hist_runs: u64,
        /// Write the estimate (JSON) or histogram (CSV) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a model as UPPAAL XML plus a .q query file.
    ExportUppaal {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_xml: PathBuf,
        #[arg(long)]
        out_queries: Option<PathBuf>,
        /// Query strings ("prob<=D", "prob>D", "mean").
        #[arg(long = "query")]
        queries: Vec<String>,
        /// Derive the on-time query pair from a timetable duration.
        #[arg(long)]
        timetable: Option<f64>,
        #[arg(long, default_value_t = 60.0)]
        early_margin: f64,
        #[arg(long, default_value_t = 300.0)]
        late_margin: f64,
    },
    /// Generate a synthetic AVL trace from truth distributions.
    Synth {
        #[arg(long)]
        route: PathBuf,
        /// JSON array of per-journey-patch truth distributions.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        journeys: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        fix_interval: f64,
        /// First departure, HH:MM:SS or seconds.
        #[arg(long, default_value = "09:00:00")]
        first_departure: String,
        #[arg(long, default_value_t = 300.0)]
        headway: f64,
        #[arg(long, default_value_t = 2.0)]
        speed_noise: f64,
    },
    /// Rebuild the report files from a pipeline output directory.
    Report {
        #[arg(long, default_value = "out", env = "PUNCTUAL_OUT_DIR")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct SmcArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.90)]
    confidence: f64,
    #[arg(long, default_value_t = 0.0005)]
    half_width: f64,
    #[arg(long, default_value_t = 0.001)]
    mean_rel_half_width: f64,
    #[arg(long, default_value_t = 10_000_000)]
    max_runs: u64,
    #[arg(long, default_value_t = 1024)]
    batch: u64,
    /// Simulate exactly this many runs (disables adaptive stopping).
    #[arg(long)]
    fixed_runs: Option<u64>,
    /// Leave the initial location's 1-second delay out of journey times.
    #[arg(long)]
    exclude_initial_delay: bool,
    /// Force single-threaded simulation.
    #[arg(long)]
    sequential: bool,
}

impl SmcArgs {
    fn to_options(&self) -> SmcOptions {
        SmcOptions {
            confidence: self.confidence,
            half_width: self.half_width,
            mean_relative_half_width: self.mean_rel_half_width,
            max_runs: self.max_runs,
            seed: self.seed,
            stream: 0,
            batch: self.batch,
            fixed_runs: self.fixed_runs,
            include_initial_delay: !self.exclude_initial_delay,
            execution: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        }
    }
}

fn parse_query(text: &str, bin_width: f64) -> Result<Query> {
    if text == "mean" {
        return Ok(Query::MeanTimeToEnd);
    }
    if text == "hist" {
        return Ok(Query::Histogram { bin_width });
    }
    if let Some(rest) = text.strip_prefix("prob<=") {
        let deadline: f64 = rest
            .parse()
            .map_err(|_| config_err(format!("bad deadline in query `{text}`")))?;
        return Ok(Query::ProbReachByDeadline {
            deadline,
            comparison: Comparison::AtMost,
        });
    }
    if let Some(rest) = text.strip_prefix("prob>") {
        let deadline: f64 = rest
            .parse()
            .map_err(|_| config_err(format!("bad deadline in query `{text}`")))?;
        return Ok(Query::ProbReachByDeadline {
            deadline,
            comparison: Comparison::AtLeast,
        });
    }
    Err(config_err(format!(
        "unknown query `{text}` (expected prob<=D, prob>D, mean, or hist)"
    )))
}

fn parse_time(text: &str) -> Result<f64> {
    punctual_core::ingest::parse_clock(text)
        .or_else(|| text.parse::<f64>().ok())
        .ok_or_else(|| config_err(format!("bad time `{text}` (expected HH:MM:SS or seconds)")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(PipelineError::Analysis(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(PipelineError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            out_dir,
            scenarios,
        } => {
            let (mut cfg, bytes) =
                PipelineConfig::load(&config).map_err(|e| config_err(e.to_string()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out_dir) = out_dir {
                cfg.out_dir = out_dir;
            }
            if !scenarios.is_empty() {
                for s in &scenarios {
                    if !cfg.scenarios.contains(s) {
                        return Err(config_err(format!(
                            "scenario `{s}` is not enabled in the config"
                        )));
                    }
                }
                cfg.scenarios = scenarios;
            }
            pipeline::run_pipeline(&cfg, &bytes)
        }

        Command::Ingest {
            route,
            avl,
            window_label,
            window_start,
            window_end,
            out_dir,
            scenarios,
            snap_radius,
            gap_threshold,
            clean_floor,
        } => {
            let route = pipeline::load_route(&route)?;
            let window = TimeWindow::new(
                window_label,
                parse_time(&window_start)?,
                parse_time(&window_end)?,
            );
            if window.start >= window.end {
                return Err(config_err(
                    "window start must precede window end".to_string(),
                ));
            }
            let scenarios = if scenarios.is_empty() {
                vec![Scenario::Baseline, Scenario::SpeedLimited]
            } else {
                scenarios
            };
            let mut clean_opts = punctual_core::ingest::CleanOptions {
                floor_s: clean_floor,
                ..Default::default()
            };
            for p in &route.patches {
                if let Some(f) = p.clean_floor_s {
                    clean_opts.per_patch_floor_s.insert(p.index, f);
                }
            }
            let output = pipeline::run_ingest(
                &route,
                &avl,
                std::slice::from_ref(&window),
                &scenarios,
                &punctual_core::ingest::AssignOptions {
                    snap_radius_m: snap_radius,
                },
                &punctual_core::ingest::ExtractOptions {
                    gap_threshold_s: gap_threshold,
                },
                &clean_opts,
            )?;
            for path in pipeline::write_ingest_outputs(&out_dir, &output)? {
                println!("wrote {}", path.display());
            }
            println!(
                "kept {} crossings ({} discarded: {} window, {} gap, {} regression, {} partial)",
                output.stats.crossings_kept,
                output.stats.discarded.total(),
                output.stats.discarded.outside_window,
                output.stats.discarded.gap_exceeded,
                output.stats.discarded.regression,
                output.stats.discarded.partial,
            );
            Ok(())
        }

        Command::Fit {
            samples,
            out_dir,
            label,
            families,
            min_samples,
            sequential,
        } => {
            let families = if families.is_empty() {
                FitFamily::standard_set()
            } else {
                families
            };
            let execution = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let table = pipeline::run_fit(
                &samples,
                &families,
                &punctual_core::fit::FitOptions::default(),
                min_samples,
                execution,
            )?;
            for path in pipeline::write_fit_outputs(&out_dir, &label, &table)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }

        Command::BuildPta {
            fits,
            family,
            route,
            hyperstar_table,
            out,
            digits,
        } => {
            let route = pipeline::load_route(&route)?;
            let pta = if !hyperstar_table.is_empty() {
                let journey = route.journey_patches();
                if hyperstar_table.len() != journey.len() {
                    return Err(config_err(format!(
                        "{} hyper-Erlang tables given but the route has {} journey patches",
                        hyperstar_table.len(),
                        journey.len()
                    )));
                }
                let mut dists = Vec::new();
                for path in &hyperstar_table {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        config_err(format!("cannot read `{}`: {e}", path.display()))
                    })?;
                    let params = punctual_core::fit::parse_hyper_erlang_table(&text)
                        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                    dists.push(punctual_core::dist::PatchDistribution::HyperErlang(params));
                }
                punctual_core::pta::build_pta_with_digits(&dists, digits)
                    .map_err(|e| analysis_err(format!("model build failed: {e}")))?
            } else {
                let fits_path = fits.expect("clap enforces fits without tables");
                let family = family
                    .ok_or_else(|| config_err("--family is required with --fits".to_string()))?;
                let table = pipeline::load_fits(&fits_path)?;
                pipeline::build_model_from_fits(&table, family, &route, digits)?
            };
            pipeline::write_file(&out, &pipeline::to_json_pretty(&pta))?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Simulate {
            model,
            query,
            smc,
            bin_width,
            hist_runs,
            out,
        } => {
            let pta = pipeline::load_model(&model)?;
            let opts = smc.to_options();
            let query = parse_query(&query, bin_width)?;
            match query {
                Query::Histogram { bin_width } => {
                    let hist = journey_histogram(&pta, hist_runs, bin_width, &opts)
                        .map_err(|e| analysis_err(e.to_string()))?;
                    let out = out.ok_or_else(|| {
                        config_err("hist queries need --out for the CSV".to_string())
                    })?;
                    let mut buf = Vec::new();
                    hist.write_csv(&mut buf)
                        .map_err(|e| analysis_err(format!("histogram export failed: {e}")))?;
                    pipeline::write_file(&out, &buf)?;
                    println!(
                        "({} runs) histogram written to {}",
                        hist.runs,
                        out.display()
                    );
                }
                Query::MeanTimeToEnd => {
                    let est =
                        estimate_mean(&pta, &opts).map_err(|e| analysis_err(e.to_string()))?;
                    println!("{}", est.uppaal_style_line(&query.formula()));
                    if let Some(out) = out {
                        pipeline::write_file(&out, &pipeline::to_json_pretty(&est))?;
                    }
                }
                Query::ProbReachByDeadline { .. } => {
                    let est = estimate_probability(&pta, &query, &opts)
                        .map_err(|e| analysis_err(e.to_string()))?;
                    println!("{}", est.uppaal_style_line(&query.formula()));
                    if let Some(out) = out {
                        pipeline::write_file(&out, &pipeline::to_json_pretty(&est))?;
                    }
                }
            }
            Ok(())
        }

        Command::ExportUppaal {
            model,
            out_xml,
            out_queries,
            queries,
            timetable,
            early_margin,
            late_margin,
        } => {
            let pta = pipeline::load_model(&model)?;
            let mut parsed: Vec<Query> = Vec::new();
            for q in &queries {
                parsed.push(parse_query(q, 30.0)?);
            }
            if let Some(timetable) = timetable {
                parsed.push(Query::ProbReachByDeadline {
                    deadline: timetable - early_margin,
                    comparison: Comparison::AtMost,
                });
                parsed.push(Query::ProbReachByDeadline {
                    deadline: timetable + late_margin,
                    comparison: Comparison::AtLeast,
                });
            }
            let xml = export_xml(&pta, &parsed)
                .map_err(|e| analysis_err(format!("XML export failed: {e}")))?;
            pipeline::write_file(&out_xml, xml.as_bytes())?;
            println!("wrote {}", out_xml.display());
            if let Some(out_queries) = out_queries {
                pipeline::write_file(&out_queries, render_query_file(&parsed).as_bytes())?;
                println!("wrote {}", out_queries.display());
            }
            Ok(())
        }

        Command::Synth {
            route,
            truth,
            journeys,
            seed,
            out,
            fix_interval,
            first_departure,
            headway,
            speed_noise,
        } => {
            let route = pipeline::load_route(&route)?;
            let text = std::fs::read_to_string(&truth)
                .map_err(|e| config_err(format!("cannot read `{}`: {e}", truth.display())))?;
            let truths: Vec<punctual_core::dist::PatchDistribution> =
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("truth file `{}`: {e}", truth.display())))?;
            for t in &truths {
                t.validate()
                    .map_err(|e| config_err(format!("truth file `{}`: {e}", truth.display())))?;
            }
            let opts = SynthOptions {
                fix_interval_s: fix_interval,
                first_departure_s: parse_time(&first_departure)?,
                headway_s: headway,
                speed_noise_mph: speed_noise,
                ..SynthOptions::default()
            };
            let fixes = generate_synthetic_trace(&route, &truths, journeys, seed, &opts)
                .map_err(|e| config_err(e.to_string()))?;
            let mut buf = Vec::new();
            write_avl_csv(&mut buf, &fixes)
                .map_err(|e| analysis_err(format!("AVL export failed: {e}")))?;
            pipeline::write_file(&out, &buf)?;
            println!(
                "wrote {} fixes for {journeys} journeys (first departure {}) to {}",
                fixes.len(),
                format_clock(opts.first_departure_s),
                out.display()
            );
            Ok(())
        }

        Command::Report { out_dir } => {
            let (context, means, on_time) = pipeline::collect_estimates(&out_dir)?;
            for path in pipeline::write_reports(&out_dir, &context, &means, &on_time, &[])? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
