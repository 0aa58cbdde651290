use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use loadgen::audit::{
    audit_accuracy_verification, audit_alternate_seed, audit_caching, AuditOutcome, Verdict,
    DEFAULT_CACHING_THRESHOLD, DEFAULT_SEED_TOLERANCE,
};
use loadgen::harness::bridge::ProcessSut;
use loadgen::harness::{
    find_max_qps, find_max_streams, run_accuracy, run_performance, run_server_official, InMemoryLibrary, QpsSearch,
    RunLog, Sut,
};
use loadgen::par::Execution;
use loadgen::report::log::{read_log, write_log, LogDocument};
use loadgen::report::{check_accuracy, check_validity, digest_accuracy, summarize, summarize_json, RunResult};
use loadgen::scenario::{validate_settings, ClockMode, ProfileSet, Scenario, TestMode, TestSettings, ValidSettings};
use loadgen::sim::{sim_sut, SimConfig};
use loadgen::time::Nanos;

#[derive(Parser)]
#[command(name = "loadgen", version, about = "Scenario-driven load generator for inference systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario in performance or accuracy mode.
    Run(RunArgs),
    /// Five server runs with derived seeds; the result is the minimum.
    OfficialServer(RunArgs),
    /// Search for the largest valid server rate.
    SearchQps {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
    },
    /// Search for the largest valid multistream stream count.
    SearchStreams {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        max_n: u64,
    },
    /// Run a compliance audit.
    Audit {
        #[command(subcommand)]
        test: AuditCommand,
    },
    /// Re-verify stored run logs.
    Check {
        logs: Vec<PathBuf>,
        /// Also check this measured accuracy against the log's profile target.
        #[arg(long)]
        accuracy: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Tabulate stored results per task and scenario.
    Summarize {
        files: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Compare sampled performance-mode digests against an accuracy log.
    Accuracy {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        sampling_rate: f64,
    },
    /// Paired unique and duplicate-heavy runs.
    Caching {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_CACHING_THRESHOLD)]
        threshold: f64,
    },
    /// Re-run with alternate schedule seeds.
    AlternateSeed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long = "alt-seed", required = true)]
        alt_seeds: Vec<u64>,
        #[arg(long, default_value_t = DEFAULT_SEED_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Settings document (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    mode: Option<TestMode>,
    #[arg(long)]
    profile: Option<String>,
    /// Extra profiles (JSON array or JSON Lines) merged over the built-ins.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Sets both the schedule and the sample seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    schedule_seed: Option<u64>,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    target_qps: Option<f64>,
    #[arg(long)]
    samples_per_query: Option<u64>,
    /// Milliseconds.
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    min_query_count: Option<u64>,
    #[arg(long)]
    max_query_count: Option<u64>,
    #[arg(long)]
    performance_sample_count: Option<u64>,
    #[arg(long)]
    clock: Option<ClockMode>,
    /// Shorthand for `--clock virtual`.
    #[arg(long, conflicts_with = "clock")]
    virtual_clock: bool,
    #[arg(long)]
    accuracy_log_sampling_rate: Option<f64>,
    /// Milliseconds.
    #[arg(long)]
    watchdog: Option<f64>,
    /// Samples in the library; defaults to the performance sample count.
    #[arg(long)]
    library_size: Option<u64>,
    /// Simulated SUT configuration (JSON). The default simulator is used
    /// when neither this nor --sut-command is given.
    #[arg(long, conflicts_with = "sut_command")]
    sim_config: Option<PathBuf>,
    /// External SUT speaking the bridge protocol on stdin/stdout.
    #[arg(long)]
    sut_command: Option<String>,
    #[arg(long = "sut-arg", allow_hyphen_values = true)]
    sut_args: Vec<String>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// Run independent runs one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Factory = Box<dyn Fn() -> Box<dyn Sut> + Sync>;

struct Prepared {
    settings: ValidSettings,
    factory: Factory,
    library: InMemoryLibrary,
    output_dir: PathBuf,
    execution: Execution,
}

impl RunArgs {
    fn settings(&self, defaults: impl FnOnce(&mut TestSettings)) -> Result<ValidSettings, Failure> {
        let mut s = match &self.config {
            Some(path) => TestSettings::from_json_str(&std::fs::read_to_string(path).map_err(|e| {
                Failure(format!("{}: {e}", path.display()))
            })?)?,
            None => {
                let scenario = self.scenario.ok_or_else(|| Failure("--scenario or --config is required".into()))?;
                let profile = self.profile.clone().ok_or_else(|| Failure("--profile or --config is required".into()))?;
                TestSettings::new(scenario, profile)
            }
        };
        if let Some(v) = self.scenario {
            s.scenario = v;
        }
        if let Some(v) = self.mode {
            s.mode = v;
        }
        if let Some(v) = &self.profile {
            s.profile = v.clone();
        }
        if let Some(v) = self.seed {
            s.schedule_seed = v;
            s.sample_seed = v;
        }
        if let Some(v) = self.schedule_seed {
            s.schedule_seed = v;
        }
        if let Some(v) = self.sample_seed {
            s.sample_seed = v;
        }
        if self.target_qps.is_some() {
            s.target_qps = self.target_qps;
        }
        if self.samples_per_query.is_some() {
            s.samples_per_query = self.samples_per_query;
        }
        if let Some(ms) = self.min_duration {
            s.min_duration = Some(non_negative_ms("min-duration", ms)?);
        }
        if self.min_query_count.is_some() {
            s.min_query_count = self.min_query_count;
        }
        if self.max_query_count.is_some() {
            s.max_query_count = self.max_query_count;
        }
        if let Some(v) = self.performance_sample_count {
            s.performance_sample_count = v;
        }
        if let Some(v) = self.clock {
            s.clock = v;
        }
        if self.virtual_clock {
            s.clock = ClockMode::Virtual;
        }
        if let Some(v) = self.accuracy_log_sampling_rate {
            s.accuracy_log_sampling_rate = v;
        }
        if let Some(ms) = self.watchdog {
            s.watchdog = Some(non_negative_ms("watchdog", ms)?);
        }
        defaults(&mut s);
        let mut profiles = ProfileSet::builtin();
        if let Some(path) = &self.profiles {
            profiles.merge(ProfileSet::from_file(path)?);
        }
        validate_settings(&s, &profiles).map_err(|errs| {
            Failure(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })
    }

    fn prepare(&self) -> Result<Prepared, Failure> {
        self.prepare_with(|_| {})
    }

    /// `defaults` may fill fields the chosen verb supplies itself.
    fn prepare_with(&self, defaults: impl FnOnce(&mut TestSettings)) -> Result<Prepared, Failure> {
        let settings = self.settings(defaults)?;
        let clock = settings.settings().clock;
        let factory: Factory = match &self.sut_command {
            Some(cmd) => {
                if clock == ClockMode::Virtual {
                    return Err(Failure("an external SUT needs --clock wall".into()));
                }
                // Fail early if the command cannot be started at all.
                drop(ProcessSut::spawn(cmd, &self.sut_args)?);
                let (cmd, args) = (cmd.clone(), self.sut_args.clone());
                Box::new(move || -> Box<dyn Sut> {
                    Box::new(ProcessSut::spawn(&cmd, &args).expect("SUT command started before"))
                })
            }
            None => {
                let cfg = match &self.sim_config {
                    Some(path) => SimConfig::from_file(path)?,
                    None => SimConfig::default(),
                };
                cfg.validate()?;
                Box::new(move || sim_sut(cfg.clone(), clock).expect("validated config"))
            }
        };
        let size = self.library_size.unwrap_or(settings.settings().performance_sample_count);
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| Failure(format!("{}: {e}", self.output_dir.display())))?;
        Ok(Prepared {
            settings,
            factory,
            library: InMemoryLibrary::new("library", size),
            output_dir: self.output_dir.clone(),
            execution: if self.sequential { Execution::Sequential } else { Execution::default() },
        })
    }
}

fn non_negative_ms(name: &str, ms: f64) -> Result<Nanos, Failure> {
    if ms.is_finite() && ms >= 0.0 {
        Ok(Nanos::from_millis_f64(ms))
    } else {
        Err(Failure(format!("--{name} must be a nonnegative number of milliseconds")))
    }
}

fn save(dir: &Path, name: &str, doc: LogDocument) -> Result<PathBuf, Failure> {
    let path = dir.join(format!("{name}.jsonl"));
    write_log(&doc, &path)?;
    Ok(path)
}

fn save_run(dir: &Path, log: &RunLog) -> Result<(), Failure> {
    let path = save(dir, &log.run_id, log.clone().into())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn report_results(p: &Prepared, name: &str, results: Vec<RunResult>) -> Result<bool, Failure> {
    print!("{}", summarize(&results));
    let valid = results.iter().all(|r| r.valid);
    let path = save(&p.output_dir, &format!("{name}.result"), results.into())?;
    eprintln!("wrote {}", path.display());
    Ok(valid)
}

fn report_audit(p: &Prepared, outcome: AuditOutcome) -> Result<bool, Failure> {
    for log in &outcome.runs {
        save_run(&p.output_dir, log)?;
    }
    let report = outcome.report;
    println!("audit {}: {:?}", report.test_name, report.verdict);
    for e in &report.evidence {
        println!("  {} = {} (threshold {})", e.name, e.value, e.threshold);
    }
    let pass = report.verdict == Verdict::Pass;
    let path = save(&p.output_dir, &format!("audit-{}", report.test_name), report.into())?;
    eprintln!("wrote {}", path.display());
    Ok(pass)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Run(args) => {
            let p = args.prepare()?;
            let mut sut = (p.factory)();
            if p.settings.settings().mode == TestMode::Accuracy {
                let log = run_accuracy(sut.as_mut(), &p.library, &p.settings)?;
                save_run(&p.output_dir, &log)?;
                let acc = digest_accuracy(&log).unwrap_or(0.0);
                println!("{} queries, digest agreement {:.6}", log.records.len(), acc);
                return Ok(!log.is_aborted());
            }
            let log = run_performance(sut.as_mut(), &p.library, &p.settings)?;
            save_run(&p.output_dir, &log)?;
            let result = check_validity(&log)?;
            for v in &result.violations {
                eprintln!("violation {}: {}", v.rule, v.detail);
            }
            report_results(&p, &log.run_id, vec![result])
        }
        Command::OfficialServer(args) => {
            let p = args.prepare()?;
            let out = run_server_official(&p.factory, &p.library, &p.settings, p.execution)?;
            for log in &out.runs {
                save_run(&p.output_dir, log)?;
            }
            println!(
                "official result: {} {} ({})",
                out.selected.metric_value,
                out.selected.units,
                if out.valid { "VALID" } else { "INVALID" }
            );
            let name = format!("{}-official", out.runs[0].run_id);
            Ok(report_results(&p, &name, out.results)? && out.valid)
        }
        Command::SearchQps { run, lo, hi, resolution } => {
            let p = run.prepare_with(|s| {
                s.target_qps.get_or_insert(lo);
            })?;
            let search = QpsSearch { lo, hi, resolution, execution: p.execution };
            let out = find_max_qps(&p.factory, &p.library, &p.settings, search)?;
            for probe in &out.probes {
                eprintln!("probe {} qps: {}", probe.value, if probe.valid { "valid" } else { "invalid" });
            }
            println!("max valid qps: {}", out.value);
            let name = format!("{}-search-qps", out.result.run_id);
            report_results(&p, &name, vec![out.result])
        }
        Command::SearchStreams { run, max_n } => {
            let p = run.prepare_with(|s| {
                s.samples_per_query.get_or_insert(1);
            })?;
            let out = find_max_streams(&p.factory, &p.library, &p.settings, max_n, p.execution)?;
            for probe in &out.probes {
                eprintln!("probe N = {}: {}", probe.value, if probe.valid { "valid" } else { "invalid" });
            }
            println!("max valid streams: {}", out.value);
            let name = format!("{}-search-streams", out.result.run_id);
            report_results(&p, &name, vec![out.result])
        }
        Command::Audit { test } => match test {
            AuditCommand::Accuracy { run, reference, sampling_rate } => {
                let p = run.prepare()?;
                let reference = match read_log(&reference)? {
                    LogDocument::Run(log) => *log,
                    _ => return Err(Failure(format!("{} is not a run log", reference.display()))),
                };
                let out = audit_accuracy_verification(&p.factory, &p.library, &p.settings, Some(&reference), sampling_rate)?;
                report_audit(&p, out)
            }
            AuditCommand::Caching { run, threshold } => {
                let p = run.prepare()?;
                let out = audit_caching(&p.factory, &p.library, &p.settings, threshold)?;
                report_audit(&p, out)
            }
            AuditCommand::AlternateSeed { run, alt_seeds, tolerance } => {
                let p = run.prepare()?;
                let out = audit_alternate_seed(&p.factory, &p.library, &p.settings, &alt_seeds, tolerance, p.execution)?;
                report_audit(&p, out)
            }
        },
        Command::Check { logs, accuracy, json } => {
            if logs.is_empty() {
                return Err(Failure("no log files given".into()));
            }
            let mut results = Vec::new();
            let mut ok = true;
            for path in &logs {
                let log = match read_log(path)? {
                    LogDocument::Run(log) => *log,
                    _ => return Err(Failure(format!("{} is not a run log", path.display()))),
                };
                if let Some(measured) = accuracy {
                    let a = check_accuracy(measured, &log.profile);
                    println!(
                        "{}: accuracy {} vs threshold {} ({} x {}): {}",
                        log.profile.task_name,
                        a.measured,
                        a.threshold,
                        a.target_fraction,
                        a.reference,
                        if a.pass { "PASS" } else { "FAIL" }
                    );
                    ok &= a.pass;
                }
                if log.settings.mode == TestMode::Performance {
                    results.push(check_validity(&log)?);
                } else {
                    ok &= !log.is_aborted();
                }
            }
            if json {
                println!("{}", summarize_json(&results));
            } else if !results.is_empty() {
                print!("{}", summarize(&results));
            }
            Ok(ok && results.iter().all(|r| r.valid))
        }
        Command::Summarize { files, json } => {
            let mut results = Vec::new();
            for path in &files {
                match read_log(path)? {
                    LogDocument::Results(rs) => results.extend(rs),
                    LogDocument::Run(log) if log.settings.mode == TestMode::Performance => {
                        results.push(check_validity(&log)?)
                    }
                    _ => return Err(Failure(format!("{} holds no performance results", path.display()))),
                }
            }
            if json {
                println!("{}", summarize_json(&results));
            } else {
                print!("{}", summarize(&results));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
