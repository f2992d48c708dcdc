use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use planbench::blocksworld::{blocks_domain, generate_problem, BlocksConfig, CostProfile, DEFAULT_COLORS};
use planbench::config::{load_templates, manifest_to_string, read_manifest, RunConfig, RunDir};
use planbench::curriculum::{payload_gold, Curriculum, CurriculumConfig, TaskKind};
use planbench::gateway::{DiskCache, EndpointKind, Gateway, ModelEndpoint, RetryPolicy};
use planbench::harness::selftest::run_selftest;
use planbench::harness::study::{StudyInstance, StudyStore};
use planbench::harness::{run_suite, server, EvalTable, RecordLog, Report};
use planbench::pddl::{parse_domain, parse_problem};
use planbench::planner::{Planner, PlannerConfig};
use planbench::validator::{validate, validate_optimal};

#[derive(Parser)]
#[command(name = "planbench", version, about = "Planning benchmark for language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate test instances and write the instance manifest.
    Generate(GenerateArgs),
    /// Render the prompt of every instance in a manifest to its own file.
    Prompt(PromptArgs),
    /// Evaluate a model on a generated suite.
    Run(RunArgs),
    /// Validate a plan against a domain and problem.
    Check(CheckArgs),
    /// Render a results table from run directories or the bundled reference counts.
    Report(ReportArgs),
    /// Serve the human-study API.
    Serve(ServeArgs),
    /// Run every mock model over a fresh suite and check the expected outcomes.
    Selftest(SelftestArgs),
}

#[derive(Args, Clone)]
struct SuiteArgs {
    /// Task kinds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = TaskKind::ALL)]
    kinds: Vec<TaskKind>,
    /// Instances per kind.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Template TOML file (defaults to the bundled blocksworld templates).
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    min_blocks: usize,
    #[arg(long, default_value_t = 5)]
    max_blocks: usize,
    /// Worked examples per prompt.
    #[arg(long, default_value_t = 1)]
    shots: usize,
    #[arg(long, default_value_t = 4)]
    max_exec_steps: usize,
    /// Action costs for the cost-optimal task, e.g. `pickup=1,stack=2`.
    #[arg(long, value_delimiter = ',', value_parser = parse_cost)]
    costs: Vec<(String, u32)>,
    /// Block names, comma separated.
    #[arg(long, value_delimiter = ',')]
    colors: Vec<String>,
    #[arg(long, default_value_t = 1_000_000)]
    max_expanded: u64,
    #[arg(long, default_value_t = 60)]
    time_limit_secs: u64,
}

fn parse_cost(s: &str) -> Result<(String, u32), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected action=cost, got `{s}`"))?;
    let v: u32 = v.trim().parse().map_err(|_| format!("bad cost in `{s}`"))?;
    if v == 0 {
        return Err(format!("cost must be positive in `{s}`"));
    }
    Ok((k.trim().to_lowercase(), v))
}

impl SuiteArgs {
    fn curriculum(&self) -> CurriculumConfig {
        let mut c = CurriculumConfig {
            min_blocks: self.min_blocks,
            max_blocks: self.max_blocks,
            shots: self.shots,
            max_exec_steps: self.max_exec_steps,
            planner: PlannerConfig { max_expanded: self.max_expanded, time_limit: Duration::from_secs(self.time_limit_secs) },
            ..CurriculumConfig::default()
        };
        if !self.costs.is_empty() {
            let base = CostProfile::default_costed();
            let mut pairs: Vec<(&str, u32)> = base.iter().collect();
            for (k, v) in &self.costs {
                pairs.retain(|(a, _)| a != k);
                pairs.push((k, *v));
            }
            c.cost_profile = CostProfile::from_pairs(pairs);
        }
        if !self.colors.is_empty() {
            c.color_pool = self.colors.iter().map(|s| s.trim().to_lowercase()).collect();
        }
        c
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// Manifest path (JSON lines, one instance per line).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write domain, problem and gold plan files per instance here.
    #[arg(long)]
    pddl_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving `<instance-id>.txt`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EndpointChoice {
    Oracle,
    Echo,
    Prefix,
    Silent,
    Remote,
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    endpoint: EndpointChoice,
    /// Base URL of an OpenAI-style completions API.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long, default_value_t = 400)]
    max_tokens: u32,
    #[arg(long, default_value_t = 0.0)]
    temperature: f32,
    /// Stop sequence (repeatable); defaults to each instance's end tag.
    #[arg(long = "stop")]
    stop_sequences: Vec<String>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 0)]
    min_interval_ms: u64,
    #[arg(long, default_value_t = 5)]
    max_attempts: u32,
    #[arg(long, default_value_t = 500)]
    base_delay_ms: u64,
}

impl EndpointArgs {
    fn endpoint(&self) -> Result<ModelEndpoint, CliError> {
        let mut e = match self.endpoint {
            EndpointChoice::Remote => {
                let url = self.base_url.as_deref().ok_or_else(|| CliError::Usage("--endpoint remote needs --base-url".into()))?;
                let model = self.model.as_deref().ok_or_else(|| CliError::Usage("--endpoint remote needs --model".into()))?;
                ModelEndpoint::remote(url, model, self.auth_env.as_deref())
            }
            EndpointChoice::Oracle => ModelEndpoint::mock(EndpointKind::MockOracle),
            EndpointChoice::Echo => ModelEndpoint::mock(EndpointKind::MockEcho),
            EndpointChoice::Prefix => ModelEndpoint::mock(EndpointKind::MockPrefix),
            EndpointChoice::Silent => ModelEndpoint::mock(EndpointKind::MockSilent),
        };
        e.max_tokens = self.max_tokens;
        e.temperature = self.temperature;
        e.stop_sequences = self.stop_sequences.clone();
        e.timeout_secs = self.timeout_secs;
        e.max_in_flight = self.max_in_flight;
        e.min_interval_ms = self.min_interval_ms;
        e.retry = RetryPolicy { max_attempts: self.max_attempts, base_delay_ms: self.base_delay_ms };
        Ok(e)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run directory (config, manifest, results log, report, cache).
    #[arg(long, short)]
    out: PathBuf,
    /// Take the whole configuration from this file instead of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    problem: PathBuf,
    /// Plan file: one `(action arg ...)` per line, or natural language with `--text`.
    #[arg(long)]
    plan: PathBuf,
    /// Parse the plan file as a natural-language completion.
    #[arg(long)]
    text: bool,
    /// Also require minimal cost.
    #[arg(long)]
    optimal: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory; repeat for one column per run.
    #[arg(long = "run", required_unless_present = "fixture")]
    runs: Vec<PathBuf>,
    /// Use the bundled reference counts.
    #[arg(long, conflicts_with = "runs")]
    fixture: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Number of study problems besides the example.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Instances per task.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Endpoint(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Endpoint(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Prompt(a) => prompt(a),
        Command::Run(a) => run(a),
        Command::Check(a) => check(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Data(m) | CliError::Endpoint(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.code())
        }
    }
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let templates = load_templates(a.suite.templates.as_deref()).map_err(data)?;
    let curriculum = Curriculum::new(&templates, a.suite.curriculum()).map_err(data)?;
    let instances = curriculum.generate_suite(&a.suite.kinds, a.suite.count, a.suite.seed).map_err(data)?;
    write(&a.out, &manifest_to_string(&instances))?;
    if let Some(dir) = &a.pddl_dir {
        for i in &instances {
            let d = dir.join(&i.id);
            let (domain, problem, _) = payload_gold(i).map_err(data)?;
            let (problem, lines) = match (&i.payload.expected_state, &i.payload.actions) {
                (Some(end), Some(actions)) => (problem.with_goal(end.atoms().iter().cloned().collect()), actions),
                _ => (problem, &i.payload.gold_plan),
            };
            write(&d.join("domain.pddl"), &domain.to_string())?;
            write(&d.join("problem.pddl"), &problem.to_pddl())?;
            let mut plan = lines.join("\n");
            plan.push('\n');
            write(&d.join("gold.plan"), &plan)?;
        }
    }
    eprintln!("wrote {} instances to {}", instances.len(), a.out.display());
    Ok(())
}

fn prompt(a: PromptArgs) -> Result<(), CliError> {
    let instances = read_manifest(&a.manifest).map_err(data)?;
    for i in &instances {
        write(&a.out.join(format!("{}.txt", i.id)), &i.prompt)?;
    }
    eprintln!("wrote {} prompts to {}", instances.len(), a.out.display());
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    if let Some(path) = &a.config {
        let mut c: RunConfig = serde_json::from_str(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        c.output_dir = a.out.clone();
        return Ok(c);
    }
    Ok(RunConfig {
        kinds: a.suite.kinds.clone(),
        count: a.suite.count,
        seed: a.suite.seed,
        endpoint: a.endpoint.endpoint()?,
        template_file: a.suite.templates.clone(),
        output_dir: a.out.clone(),
        workers: a.workers,
        curriculum: a.suite.curriculum(),
    })
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let config = run_config(&a)?;
    let dir = RunDir::new(&config.output_dir);
    if dir.config().exists() {
        let previous = dir.read_config().map_err(data)?;
        if (RunConfig { workers: config.workers, ..previous }) != config {
            return Err(CliError::Data(format!(
                "{} was created with a different configuration; pick a fresh --out or pass --config {}",
                dir.root.display(),
                dir.config().display()
            )));
        }
    } else {
        write(&dir.config(), &(serde_json::to_string_pretty(&config).expect("config serializes") + "\n"))?;
    }

    let templates = Arc::new(config.templates().map_err(data)?);
    let curriculum = Curriculum::new(&templates, config.curriculum.clone()).map_err(data)?;
    let instances = curriculum.generate_suite(&config.kinds, config.count, config.seed).map_err(data)?;
    let manifest = manifest_to_string(&instances);
    if dir.manifest().exists() {
        if read(&dir.manifest())? != manifest {
            return Err(CliError::Data(format!("{} does not match the configuration", dir.manifest().display())));
        }
    } else {
        write(&dir.manifest(), &manifest)?;
    }

    let mut gateway = Gateway::new(config.endpoint.clone(), templates.clone()).map_err(|e| CliError::Endpoint(e.to_string()))?;
    if !config.endpoint.kind.is_mock() {
        gateway = gateway.with_cache(DiskCache::new(dir.cache()));
    }
    let log = RecordLog::new(dir.results());
    let summary = run_suite(&instances, &gateway, &templates, &log, config.workers).map_err(data)?;
    let text = Report::from_tables(std::slice::from_ref(&summary.table)).render_text();
    write(&dir.report(), &text)?;
    print!("{text}");
    eprintln!("evaluated {}, skipped {} already logged", summary.evaluated, summary.skipped);
    if !summary.table.failures.is_empty() {
        return Err(CliError::Endpoint(format!(
            "{} instances failed at the endpoint (rerun the same command to retry): {}",
            summary.table.failures.len(),
            summary.table.failures.join(", ")
        )));
    }
    Ok(())
}

fn check(a: CheckArgs) -> Result<(), CliError> {
    let domain = parse_domain(&read(&a.domain)?).map_err(|e| CliError::Data(format!("{}: {e}", a.domain.display())))?;
    let problem = parse_problem(&read(&a.problem)?, &domain).map_err(|e| CliError::Data(format!("{}: {e}", a.problem.display())))?;
    let text = read(&a.plan)?;
    let plan = if a.text {
        let templates = load_templates(a.templates.as_deref()).map_err(data)?;
        let parsed = templates.parse_plan(&text, &domain, &problem.objects);
        parsed.result.map_err(|e| CliError::Data(format!("{}: {e}", a.plan.display())))?
    } else {
        domain.parse_plan(&text, &problem.objects).map_err(|e| CliError::Data(format!("{}: {e}", a.plan.display())))?
    };
    let verdict = if a.optimal {
        validate_optimal(&Planner::default(), &domain, &problem, &plan).map_err(data)?
    } else {
        validate(&problem, &plan)
    };
    println!("{}", serde_json::to_string_pretty(&verdict.kind).expect("verdicts serialize"));
    if verdict.is_valid() {
        Ok(())
    } else {
        Err(CliError::Data("plan is not valid".into()))
    }
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let report = if a.fixture {
        Report::reference()
    } else {
        let mut tables = Vec::new();
        for root in &a.runs {
            let dir = RunDir::new(root);
            let config = dir.read_config().map_err(data)?;
            let records = RecordLog::new(dir.results()).read().map_err(data)?;
            tables.push(EvalTable::from_records(&config.endpoint.descriptor(), &records));
        }
        Report::from_tables(&tables)
    };
    let text = match a.format {
        Format::Text => report.render_text(),
        Format::Csv => report.render_csv(),
    };
    match &a.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let templates = Arc::new(load_templates(a.templates.as_deref()).map_err(data)?);
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    if a.blocks < 2 || a.blocks > DEFAULT_COLORS.len() {
        return Err(CliError::Usage(format!("--blocks must be between 2 and {}", DEFAULT_COLORS.len())));
    }
    let domain = blocks_domain(None);
    let planner = Planner::default();
    let mut made = Vec::with_capacity(a.instances + 1);
    for i in 0..=a.instances {
        let problem = generate_problem(&BlocksConfig::new(a.blocks, a.seed.wrapping_add(i as u64))).map_err(data)?;
        let id = if i == 0 { "example".to_string() } else { format!("study-{i:03}") };
        made.push(StudyInstance::new(&id, &domain, problem, &templates, &planner).map_err(data)?);
    }
    let example = made.remove(0);
    let store = Arc::new(StudyStore::new(templates, example, made, a.seed).map_err(data)?);
    server::serve_blocking(store, a.addr, |addr| eprintln!("listening on http://{addr}")).map_err(data)
}

fn selftest(a: SelftestArgs) -> Result<(), CliError> {
    let report = run_selftest(a.count, a.seed, a.workers).map_err(data)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!("selftest {verdict}: {} checks, {} instances per task, {:.1}s", report.checks.len(), report.count, report.elapsed.as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Data("selftest expectations not met".into()))
    }
}
