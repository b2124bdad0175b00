//! Command-line front end: model checks, gain design, scenario runs,
//! built-in experiments and sensing-graph orientation.
//!
//! Exit codes: 0 success, 1 usage or parse failure, 2 model or assumption
//! failure, 3 numerical divergence, 4 a built-in experiment failed a check.

mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use distobs::graphs::{self, DirectedGraph, WeightRule};
use distobs::localization::{self, SensingFile, SensingGraphPlus};
use distobs::mas::{MasModel, ModelFile};
use distobs::observer::{GainPolicy, GainReport, InputMode, ObserverGains};
use distobs::sim::{self, ModelSpec, ScenarioConfig, SimulationTrace};
use distobs::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Settling threshold reported in run summaries.
const SETTLE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "distobs", version, about = "Distributed observers for coupled multi-agent systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural conditions of a model, scenario or sensing file.
    Check { path: PathBuf },
    /// Design Luenberger gains, consensus weights and the coupling gain.
    Gains(GainsArgs),
    /// Run a scenario file and write the trace, metadata and a plot script.
    Run {
        path: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run built-in experiments and check them (all when none are named).
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(sim::BUILTIN_IDS))]
        ids: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Orient a sensing graph into an acyclic one.
    Dagc {
        path: PathBuf,
        /// Seed for IDs of agents without pinned IDs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed coupling gain; keeps the weight rule of the configured policy.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub subsample: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(t) = self.t_end {
            cfg.t_end = t;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mu) = self.mu {
            cfg.gains.policy = GainPolicy::Explicit { mu, rule: cfg.gains.policy.rule() };
        }
        if let Some(k) = self.subsample {
            cfg.subsample = k;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Explicit,
    AutoUndirected,
    AutoDirected,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Graph,
    Binary,
    NormalizedIn,
    NormalizedOut,
}

impl From<RuleArg> for WeightRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Graph => WeightRule::Graph,
            RuleArg::Binary => WeightRule::Binary,
            RuleArg::NormalizedIn => WeightRule::NormalizedIn,
            RuleArg::NormalizedOut => WeightRule::NormalizedOut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    OwnOnly,
}

#[derive(Debug, Args)]
pub struct GainsArgs {
    /// Model or scenario file.
    pub path: PathBuf,
    /// Policy; a scenario file's own policy is used when omitted.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Upper bound on the agent count for the automatic policies.
    #[arg(long = "m-bar")]
    pub m_bar: Option<usize>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Stability margin for designed Luenberger gains.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long = "input-mode", value_enum)]
    pub input_mode: Option<ModeArg>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Json(_) | Error::Parse(_) => EXIT_USAGE,
            Error::NonFinite { .. } => EXIT_DIVERGED,
            _ => EXIT_MODEL,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: Command) -> CliResult<i32> {
    match command {
        Command::Check { path } => cmd_check(&path),
        Command::Gains(args) => cmd_gains(&args),
        Command::Run { path, overrides, out } => cmd_run(&path, &overrides, &out),
        Command::Reproduce { ids, overrides, out } => cmd_reproduce(&ids, &overrides, &out),
        Command::Dagc { path, seed, out } => cmd_dagc(&path, seed, &out),
    }
}

/// What an input file turned out to be.
enum Input {
    Model(ModelFile),
    Scenario(Box<ScenarioConfig>),
    Sensing(SensingFile),
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn parse_as<T: serde::de::DeserializeOwned>(value: Value, path: &Path, what: &str) -> CliResult<T> {
    serde_json::from_value(value)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{} is not a valid {what}: {e}", path.display())))
}

fn read_input(path: &Path) -> CliResult<Input> {
    let value = read_json(path)?;
    let has = |k: &str| value.get(k).is_some();
    if has("model") && has("t_end") {
        // Parsed again through the path so relative model files resolve.
        let _: ScenarioConfig = parse_as(value, path, "scenario")?;
        Ok(Input::Scenario(Box::new(ScenarioConfig::from_path(path)?)))
    } else if has("gc") {
        Ok(Input::Model(parse_as(value, path, "model")?))
    } else if has("relative_edges") || has("anchors") {
        Ok(Input::Sensing(parse_as(value, path, "sensing file")?))
    } else if let Some(sensing) = value.get("sensing").cloned() {
        Ok(Input::Sensing(parse_as(sensing, path, "sensing file")?))
    } else {
        Err(Failure::new(
            EXIT_USAGE,
            format!("{}: expected a model, scenario or sensing file", path.display()),
        ))
    }
}

fn report(ok: bool, name: &str, detail: &str) -> bool {
    let tag = if ok { "PASS" } else { "FAIL" };
    if detail.is_empty() {
        println!("{tag}  {name}");
    } else {
        println!("{tag}  {name}: {detail}");
    }
    ok
}

fn labels(agents: &[usize]) -> Vec<usize> {
    agents.iter().map(|k| k + 1).collect()
}

/// Agents not reachable from agent 1, then agents that cannot reach it.
fn connectivity_witness(g: &DirectedGraph) -> String {
    if g.node_count() == 0 {
        return "empty graph".into();
    }
    let missing = |r: Vec<bool>| -> Vec<usize> { (0..r.len()).filter(|&k| !r[k]).collect() };
    let from = missing(g.reachable_from(0));
    if !from.is_empty() {
        return format!("agents {:?} are not reachable from agent 1", labels(&from));
    }
    let to = missing(g.reversed().reachable_from(0));
    format!("agents {:?} cannot reach agent 1", labels(&to))
}

fn cycle_detail(g: &DirectedGraph) -> (bool, String) {
    match graphs::topological_ordering(g) {
        Ok(_) => (true, String::new()),
        Err(Error::Cycle { cycle }) => (false, format!("cycle through agents {:?}", labels(&cycle))),
        Err(e) => (false, e.to_string()),
    }
}

/// Every structural check on a model, printing one line each.
fn check_model(model: &MasModel) -> bool {
    let mut ok = true;
    let unobservable: Vec<usize> = model
        .check_node_observability()
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k)
        .collect();
    ok &= report(
        unobservable.is_empty(),
        "every (A_ii, C_ii) observable",
        &if unobservable.is_empty() {
            String::new()
        } else {
            format!("unobservable agents {:?}", labels(&unobservable))
        },
    );
    let (gs_ok, gs_detail) = cycle_detail(model.gs());
    ok &= report(gs_ok, "dynamics graph acyclic", &gs_detail);
    let (go_ok, go_detail) = cycle_detail(model.go());
    ok &= report(go_ok, "sensing graph acyclic", &go_detail);
    if gs_ok && go_ok {
        let union = model.gs().union(model.go()).expect("same agent count");
        let (u_ok, u_detail) = cycle_detail(&union);
        ok &= report(u_ok, "dynamics and sensing graphs share a topological ordering", &u_detail);
        if u_ok {
            let order = graphs::topological_ordering(&union).expect("acyclic");
            println!("      ordering {:?}", labels(&order));
        }
    }
    let sc = graphs::is_strongly_connected(model.gc());
    ok &= report(
        sc,
        "communication graph strongly connected",
        &if sc { String::new() } else { connectivity_witness(model.gc()) },
    );
    ok
}

fn check_sensing(sg: &SensingGraphPlus, gc: Option<&DirectedGraph>) -> bool {
    let mut ok = true;
    let reach = sg.plus_graph().undirected_skeleton().reachable_from(0);
    let cut: Vec<usize> = (0..sg.agent_count()).filter(|&k| !reach[k + 1]).collect();
    ok &= report(
        cut.is_empty(),
        "sensing graph with origin connected",
        &if cut.is_empty() {
            String::new()
        } else {
            format!("agents {:?} are disconnected from every anchor", labels(&cut))
        },
    );
    let sources: Vec<usize> = localization::check_agent_observability(sg)
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k)
        .collect();
    ok &= report(
        sources.is_empty(),
        "no source besides the origin",
        &if sources.is_empty() {
            String::new()
        } else {
            format!("agents {:?} hold no measurement", labels(&sources))
        },
    );
    if let Some(gc) = gc {
        let sc = graphs::is_strongly_connected(gc);
        ok &= report(
            sc,
            "communication graph strongly connected",
            &if sc { String::new() } else { connectivity_witness(gc) },
        );
    }
    ok
}

fn dagc_ids(file: &SensingFile, seed: u64) -> CliResult<Vec<u64>> {
    match file.pinned_ids()? {
        Some(ids) => Ok(ids),
        None => Ok(localization::random_ids(&mut ChaCha8Rng::seed_from_u64(seed), file.agents)),
    }
}

fn cmd_check(path: &Path) -> CliResult<i32> {
    let ok = match read_input(path)? {
        Input::Model(file) => {
            let model = file.into_model()?;
            check_model(&model)
        }
        Input::Sensing(file) => {
            let sg = file.graph()?;
            println!("raw sensing graph");
            check_sensing(&sg, None)
        }
        Input::Scenario(cfg) => {
            let mut ok = true;
            if let ModelSpec::Localization { sensing, communication, .. } = &cfg.model {
                let sg = sensing.graph()?;
                let gc = distobs::mas::graph_from_specs(sensing.agents, communication)?;
                println!("raw sensing graph");
                ok &= check_sensing(&sg, Some(&gc));
            }
            match cfg.build_model() {
                Ok(model) => {
                    println!("observer model");
                    ok &= check_model(&model);
                }
                Err(e) => ok &= report(false, "model construction", &e.to_string()),
            }
            ok
        }
    };
    Ok(if ok { EXIT_OK } else { EXIT_MODEL })
}

fn policy_from_args(args: &GainsArgs, fallback: Option<GainPolicy>) -> CliResult<GainPolicy> {
    let rule = args.rule.map(WeightRule::from);
    let need_m_bar = || {
        args.m_bar
            .ok_or_else(|| Failure::new(EXIT_USAGE, "--m-bar is required for the automatic policies"))
    };
    Ok(match args.policy {
        Some(PolicyArg::Explicit) => GainPolicy::Explicit {
            mu: args.mu.ok_or_else(|| Failure::new(EXIT_USAGE, "--mu is required for the explicit policy"))?,
            rule: rule.unwrap_or(WeightRule::Binary),
        },
        Some(PolicyArg::AutoUndirected) => GainPolicy::AutoUndirected { m_bar: need_m_bar()? },
        Some(PolicyArg::AutoDirected) => GainPolicy::AutoDirected { m_bar: need_m_bar()? },
        Some(PolicyArg::Global) => GainPolicy::Global { rule: rule.unwrap_or(WeightRule::Binary) },
        None => match (fallback, args.mu) {
            (Some(p), Some(mu)) => GainPolicy::Explicit { mu, rule: rule.unwrap_or(p.rule()) },
            (Some(p), None) => p,
            (None, Some(mu)) => GainPolicy::Explicit { mu, rule: rule.unwrap_or(WeightRule::Binary) },
            (None, None) => return Err(Failure::new(EXIT_USAGE, "--policy is required for a model file")),
        },
    })
}

fn print_report(r: &GainReport) {
    println!("policy               {}", serde_json::to_string(&r.policy).unwrap_or_default());
    println!("rho_max              {:.6}", r.rho_max);
    if let Some(l2) = r.lambda2 {
        println!("lambda2              {l2:.6}");
    }
    println!("min grounded |eig|   {:.6}", r.min_grounded_modulus);
    if let Some(b) = r.bound {
        println!("bound                {b:.6}");
    }
    println!("mu                   {}", r.mu);
}

fn cmd_gains(args: &GainsArgs) -> CliResult<i32> {
    let (model, fallback, f, margin, mode) = match read_input(&args.path)? {
        Input::Model(file) => (file.into_model()?, None, None, None, None),
        Input::Scenario(cfg) => {
            let model = cfg.build_model()?;
            let f = cfg.luenberger(&model)?;
            (model, Some(cfg.gains.policy), f, cfg.gains.margin, Some(cfg.input_mode))
        }
        Input::Sensing(_) => return Err(Failure::new(EXIT_USAGE, "gains need a model or scenario file")),
    };
    let policy = policy_from_args(args, fallback)?;
    let margin = args.margin.or(margin).unwrap_or(distobs::observer::DEFAULT_MARGIN);
    let mode = match args.input_mode {
        Some(ModeArg::Full) => InputMode::Full,
        Some(ModeArg::OwnOnly) => InputMode::OwnOnly,
        None => mode.unwrap_or(InputMode::Full),
    };
    let (gains, rep) = distobs::observer::design_gains(&model, policy, f, margin, mode)?;
    print_report(&rep);
    let path = write_json(&args.out, "gains.json", &gains_document(&gains, &rep))?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn gains_document(gains: &ObserverGains, rep: &GainReport) -> Value {
    json!({ "gains": gains.to_file(), "report": rep })
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot create {}: {e}", dir.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &Value) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(dir, name, &text)
}

/// File-name stem of a scenario.
fn stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "scenario".into()
    } else {
        s
    }
}

/// Writes `<stem>.csv`, `<stem>.json`, `<stem>.config.json` and
/// `plot_<stem>.py`; returns the metadata.
pub fn write_artifacts(trace: &SimulationTrace, out: &Path, extra: Option<Value>) -> CliResult<Value> {
    let name = stem(&trace.config.name);
    let summary = sim::error_norms(trace, SETTLE_THRESHOLD);
    let mut meta = trace.metadata(&summary);
    if let Some(extra) = extra {
        meta["checks"] = extra;
    }
    write_text(out, &format!("{name}.csv"), &trace.to_csv())?;
    write_json(out, &format!("{name}.json"), &meta)?;
    write_text(out, &format!("{name}.config.json"), &trace.config.to_json())?;
    write_text(out, &format!("plot_{name}.py"), &plot::script(trace, &name))?;
    Ok(meta)
}

fn print_summary(trace: &SimulationTrace) {
    let s = sim::error_norms(trace, SETTLE_THRESHOLD);
    println!(
        "{}: {} samples, sup ‖E‖ = {:.6e}, final ‖E‖ = {:.6e}, settled below {:e} at {}",
        trace.config.name,
        trace.samples.len(),
        s.sup_norm,
        s.final_norm,
        s.threshold,
        s.settling_time.map(|t| format!("t = {t}")).unwrap_or_else(|| "never".into())
    );
    for e in &trace.events {
        println!("  event at t = {} (snap {:e}): {}", e.applied_time, e.snap, e.description);
    }
}

fn cmd_run(path: &Path, overrides: &Overrides, out: &Path) -> CliResult<i32> {
    let mut cfg = ScenarioConfig::from_path(path)?;
    overrides.apply(&mut cfg);
    let trace = sim::run_scenario(&cfg)?;
    print_summary(&trace);
    write_artifacts(&trace, out, None)?;
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_reproduce(ids: &[String], overrides: &Overrides, out: &Path) -> CliResult<i32> {
    let ids: Vec<&str> = if ids.is_empty() {
        sim::BUILTIN_IDS.to_vec()
    } else {
        ids.iter().map(String::as_str).collect()
    };
    let configs = ids
        .iter()
        .map(|id| {
            let mut cfg = sim::builtin(id)?;
            overrides.apply(&mut cfg);
            Ok((*id, cfg))
        })
        .collect::<distobs::Result<Vec<_>>>()?;
    // Experiments are independent; each runs single-threaded.
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(id, cfg)| s.spawn(move || (*id, sim::run_scenario(cfg))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });
    let mut all_passed = true;
    let mut diverged = false;
    let mut summary = Vec::new();
    for (id, result) in results {
        let trace = match result {
            Ok(t) => t,
            Err(e) => {
                println!("FAIL  {id}: {e}");
                diverged |= matches!(e, Error::NonFinite { .. });
                all_passed = false;
                summary.push(json!({ "id": id, "passed": false, "error": e.to_string() }));
                continue;
            }
        };
        print_summary(&trace);
        let checks = sim::evaluate(id, &trace)?;
        for c in &checks {
            report(c.passed, &format!("{id}: {}", c.name), &c.detail);
        }
        let passed = checks.iter().all(|c| c.passed);
        all_passed &= passed;
        let checks = serde_json::to_value(&checks).expect("serializable");
        write_artifacts(&trace, out, Some(checks.clone()))?;
        summary.push(json!({ "id": id, "passed": passed, "checks": checks }));
    }
    write_json(out, "summary.json", &json!({ "passed": all_passed, "experiments": summary }))?;
    println!("wrote {}", out.display());
    Ok(if diverged {
        EXIT_DIVERGED
    } else if all_passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn cmd_dagc(path: &Path, seed: u64, out: &Path) -> CliResult<i32> {
    let file = match read_input(path)? {
        Input::Sensing(f) => f,
        Input::Scenario(cfg) => match cfg.model {
            ModelSpec::Localization { sensing, .. } => sensing,
            _ => return Err(Failure::new(EXIT_USAGE, "scenario has no sensing graph")),
        },
        Input::Model(_) => return Err(Failure::new(EXIT_USAGE, "dagc needs a sensing file")),
    };
    let sg = file.graph()?;
    let ids = dagc_ids(&file, seed)?;
    let d = localization::dagc(&sg, &ids)?;
    if let Err(Error::Cycle { cycle }) = graphs::topological_ordering(&d.oriented.agent_graph()) {
        return Err(Failure::new(
            EXIT_MODEL,
            format!("oriented graph has a cycle through agents {:?}", labels(&cycle)),
        ));
    }
    // Each agent adopts one more than the least layer heard from a neighbour;
    // the replay must settle on the hop distances.
    let (replayed, rounds) = localization::assign_layers_by_rounds(&sg)?;
    if replayed != d.layers {
        return Err(Failure::new(EXIT_MODEL, "per-agent layer rounds disagree with hop distances"));
    }
    println!("agent  layer  id");
    for k in 0..sg.agent_count() {
        println!("{:>5}  {:>5}  {}", k + 1, d.layers[k], d.ids[k]);
    }
    println!("layer rounds: {rounds}");
    println!("ID passes: {}", d.id_passes);
    let edges: Vec<(usize, usize)> = d.oriented_edges().iter().map(|&(s, t)| (s + 1, t + 1)).collect();
    println!("oriented edges (source, holder): {edges:?}");
    let doc = json!({
        "sensing": SensingFile::from_graph(&d.oriented, Some(&d.ids)),
        "layers": d.layers,
        "ids": d.ids,
        "id_passes": d.id_passes,
        "layer_rounds": rounds,
        "acyclic": true,
    });
    let p = write_json(out, "dagc.json", &doc)?;
    println!("wrote {}", p.display());
    Ok(EXIT_OK)
}
