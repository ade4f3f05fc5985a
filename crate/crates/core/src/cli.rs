//! Command-line workflows. Every run writes its outputs and a `manifest.cfg`
//! under the output directory; passing that manifest back as `--config`
//! reproduces the outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::calib::{parse_codes_csv, run_campaign};
use crate::chip::Chip;
use crate::config::{load_config, Config};
use crate::executor::{parse_program, Executor};
use crate::experiment::train;
use crate::plot;
use crate::ppu::Ppu;
use crate::timing::{check_corner, format_results, parse_timing_report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SIM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "sim", version, about = "Neuromorphic chip simulator workflows")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "sim-out")]
    pub out: PathBuf,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a playback program and write its trace.
    RunProgram { program: PathBuf },
    /// Train the reward-modulated pattern discrimination task.
    Rstdp,
    /// Calibrate a campaign of virtual synapse drivers.
    Calibrate,
    /// Check a per-corner timing report.
    TimingCheck { report: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::RunProgram { .. } => "run-program",
            Command::Rstdp => "rstdp",
            Command::Calibrate => "calibrate",
            Command::TimingCheck { .. } => "timing-check",
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| failed(format!("cannot write {}: {e}", path.display())))
}

fn try_plot(
    enabled: bool,
    path: PathBuf,
    f: impl FnOnce(&Path) -> Result<(), Box<dyn std::error::Error>>,
) {
    if enabled {
        if let Err(e) = f(&path) {
            eprintln!("warning: plot {} not written: {e}", path.display());
        }
    }
}

/// Parses `argv` and runs the selected workflow, returning the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32, Failure> {
    let mut config = match &cli.common.config {
        Some(path) => load_config(path).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(|e| failed(format!("cannot create {}: {e}", out.display())))?;

    let input = match &cli.command {
        Command::RunProgram { program } | Command::TimingCheck { report: program } => {
            format!(" {}", program.display())
        }
        _ => String::new(),
    };
    let manifest = format!(
        "# sim {}{input} --config <this file>\n{}",
        cli.command.name(),
        config.to_flat()
    );
    write(out, "manifest.cfg", &manifest)?;

    match &cli.command {
        Command::RunProgram { program } => run_program(&config, program, out),
        Command::Rstdp => rstdp(&config, out, cli.common.plots),
        Command::Calibrate => calibrate(&config, out, cli.common.plots),
        Command::TimingCheck { report } => timing_check(report, out),
    }
}

fn run_program(config: &Config, path: &Path, out: &Path) -> Result<i32, Failure> {
    let text = read(path)?;
    let program = parse_program(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut chip = Chip::new(config.chip_config()).map_err(|e| usage(e.to_string()))?;
    if !config.chip.weights_csv.is_empty() {
        let weights = read(Path::new(&config.chip.weights_csv))?;
        chip.array_mut()
            .load_weights_csv(&weights)
            .map_err(|e| usage(format!("{}: {e}", config.chip.weights_csv)))?;
    }
    if !config.chip.calib_codes_csv.is_empty() {
        let codes = parse_codes_csv(&read(Path::new(&config.chip.calib_codes_csv))?)
            .map_err(|e| usage(format!("{}: {e}", config.chip.calib_codes_csv)))?;
        for (driver, code) in codes {
            let d = chip
                .drivers_mut()
                .get_mut(driver as usize)
                .ok_or_else(|| usage(format!("calibration code for missing driver {driver}")))?;
            d.set_calib_code(code).map_err(|e| usage(e.to_string()))?;
        }
    }
    chip.record_membranes(config.chip.record_membranes);

    let trace = Executor::new(config.executor)
        .execute(&program, &mut chip, &mut Ppu::new(), config.seed)
        .map_err(|e| failed(e.to_string()))?;
    write(out, "trace.csv", &trace.to_csv())?;
    write(out, "trace.jsonl", &trace.to_jsonl())?;
    if let Some(csv) = chip.membranes_to_csv() {
        write(out, "membranes.csv", &csv)?;
    }
    let s = &trace.stats;
    let stats = format!(
        "instructions={}\nspikes_injected={}\nbus_events={}\ndriver_matches={}\ndeliveries={}\nneuron_spikes={}\nspikes_out={}\ndropped_spikes={}\nerrors={}\nsteps={}\nend_time_ns={}\n",
        s.instructions,
        s.spikes_injected,
        s.bus_events,
        s.driver_matches,
        s.deliveries,
        s.neuron_spikes,
        s.spikes_out,
        s.dropped_spikes,
        s.errors,
        s.steps,
        s.end_time_ns
    );
    write(out, "stats.txt", &stats)?;
    print!("{stats}");
    if s.errors > 0 {
        eprintln!(
            "{} instruction(s) failed; see error entries in the trace",
            s.errors
        );
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn rstdp(config: &Config, out: &Path, plots: bool) -> Result<i32, Failure> {
    let exp = config.experiment_config();
    let started = Instant::now();
    let result =
        train(&exp, &config.chip_config(), &config.executor).map_err(|e| usage(e.to_string()))?;
    let wall = started.elapsed().as_secs_f64();
    write(out, "learning_curve.csv", &result.learning_curve_csv())?;
    write(out, "population.csv", &result.population_csv())?;
    write(out, "weights.csv", &result.weights_csv(exp.n_neurons))?;
    let summary = result.summary();
    write(out, "summary.txt", &summary)?;
    try_plot(plots, out.join("learning_curves.svg"), |p| {
        plot::learning_curves(&result, p)
    });
    try_plot(plots, out.join("weights.svg"), |p| {
        plot::weight_evolution(&result, p)
    });
    print!("{summary}");
    println!(
        "wall_time_s={wall:.3}\nwall_time_per_step_s={:.6}",
        result.metrics.wall_time_per_step
    );
    Ok(if result.metrics.converged {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn calibrate(config: &Config, out: &Path, plots: bool) -> Result<i32, Failure> {
    let report = run_campaign(
        &config.calib_config(),
        config.calib.n_instances,
        config.seed,
    )
    .map_err(|e| usage(e.to_string()))?;
    write(out, "calibration.csv", &report.to_csv())?;
    write(out, "histogram.csv", &report.histogram_csv())?;
    write(out, "codes.csv", &report.codes_csv())?;
    let summary = format!(
        "instances={}\nfailures={}\npre_mean={:?}\npre_std={:?}\npost_mean={:?}\npost_std={:?}\n",
        report.results.len(),
        report.failures.len(),
        report.pre_mean,
        report.pre_std,
        report.post_mean,
        report.post_std
    );
    write(out, "summary.txt", &summary)?;
    try_plot(plots, out.join("histogram.svg"), |p| {
        plot::calibration_histogram(&report, p)
    });
    print!("{summary}");
    for (id, msg) in &report.failures {
        eprintln!("instance {id}: {msg}");
    }
    Ok(if report.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn timing_check(path: &Path, out: &Path) -> Result<i32, Failure> {
    let corners =
        parse_timing_report(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let results: Vec<_> = corners.iter().map(check_corner).collect();
    let table = format_results(&results);
    write(out, "timing.txt", &table)?;
    let mut csv = String::from("corner,spread_ps,budget_margin_ps,setup_slack_ps,pass\n");
    for r in &results {
        let skew = r.skew.as_ref();
        let cell = |v: Option<i64>| v.map_or(String::new(), |x| x.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.corner,
            cell(skew.map(|s| s.spread_ps)),
            cell(skew.map(|s| s.budget_margin_ps)),
            cell(r.setup.map(|s| s.slack_ps)),
            r.pass()
        ));
    }
    write(out, "timing.csv", &csv)?;
    print!("{table}");
    Ok(if results.iter().all(|r| r.pass()) {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}
