//! Command-line front end for the calibration toolkit: generate ownership
//! graphs, partition item sets, calibrate scores from owner rankings,
//! audit mechanisms for profitable deviations, and run simulation studies.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use isocal::experiment::{
    run_conference_study, run_partition_benchmark, run_tree_tradeoff, ExperimentConfig,
    GraphSpec,
};
use isocal::io::{
    audit_to_file, benchmark_csv_bytes, metrics_csv_bytes, partition_to_file, read_audit_spec,
    read_config_file, read_edge_csv, read_partition_json, read_reports_json, read_score_csv,
    run_audit_spec, tradeoff_csv_bytes, write_atomic, write_calibration_csv, write_edge_csv,
    write_json_atomic, BenchmarkFile, MetricsFile, RunManifest, TradeoffFile,
};
use isocal::mechanism::{
    calibrate_complete_overlap, calibrate_with_partition_detailed, naive_ownership_average,
    BlockStatus, FillPolicy, OwnerCredentials, ReportProfile,
};
use isocal::ownership::{
    gen_random_conference, gen_ternary_tree, gen_tightness_family, reduce_l_to_1, DegreeLaw,
    Partition, DEFAULT_REDUCTION_BUDGET,
};
use isocal::partition::{
    brute_force_optimal, greedy_partition_l, random_partition, SizeObjective,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit code when an audit finds a profitable deviation. Distinct from
/// operational failures (1) and usage errors (2) so CI can assert
/// truthfulness with plain shell tests.
const AUDIT_FAILURE_EXIT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "isocal",
    version,
    about = "Ranking-assisted calibration of noisy review scores",
    propagate_version = true
)]
struct Cli {
    /// Print the run manifest for this invocation and write nothing.
    #[arg(long, global = true)]
    manifest_only: bool,
    /// Record wall-clock timings in the manifest (makes output bytes
    /// run-dependent).
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ownership graph as an edge-list CSV.
    Gen(GenArgs),
    /// Partition a graph's items into blocks with common owners.
    Partition(PartitionArgs),
    /// Calibrate observed scores using owner rankings.
    Calibrate(CalibrateArgs),
    /// Search for profitable ranking deviations on a fixture.
    Audit(AuditArgs),
    /// Run a simulation study and emit report files.
    Simulate(SimulateArgs),
}

/// Tracks wall-clock phases when --timings is set.
struct Phases {
    enabled: bool,
    marks: BTreeMap<String, f64>,
    last: Instant,
}

impl Phases {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            marks: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn mark(&mut self, name: &str) {
        if self.enabled {
            let elapsed = self.last.elapsed().as_secs_f64() * 1e3;
            eprintln!("timing: {name} {elapsed:.1} ms");
            self.marks.insert(name.to_string(), elapsed);
        }
        self.last = Instant::now();
    }

    /// Copies the phases recorded so far into the manifest; phases marked
    /// after emission (the writes themselves) only reach stderr.
    fn apply(&self, manifest: &mut RunManifest) {
        if self.enabled {
            manifest.set_timings(self.marks.clone());
        }
    }
}

fn print_manifest(manifest: &RunManifest) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(manifest)?);
    Ok(())
}

fn main() -> ExitCode {
    // Restore the default SIGPIPE disposition so piping into `head` or a
    // closed pager ends the process quietly instead of panicking.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let manifest_only = cli.manifest_only;
    let timings = cli.timings;
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args, manifest_only, timings),
        Command::Partition(args) => cmd_partition(args, manifest_only, timings),
        Command::Calibrate(args) => cmd_calibrate(args, manifest_only, timings),
        Command::Audit(args) => cmd_audit(args, manifest_only, timings),
        Command::Simulate(args) => cmd_simulate(args, manifest_only, timings),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GenKind {
    /// Preferential-attachment conference graph with a degree law.
    Conference,
    /// Complete ternary tree: one owner per internal node.
    Tree,
    /// Layered overlap family with groups of tightly-coupled owners.
    Tightness,
}

#[derive(Args)]
struct GenArgs {
    /// Graph family to generate.
    #[arg(long, value_enum, default_value_t = GenKind::Conference)]
    kind: GenKind,
    /// Item count (conference).
    #[arg(long, default_value_t = 100)]
    items: usize,
    /// Owner count (conference).
    #[arg(long, default_value_t = 300)]
    owners: usize,
    /// Owner-degree power-law exponent (conference).
    #[arg(long, default_value_t = 2.5)]
    exponent: f64,
    /// Uniform owner-degree range LO HI instead of the power law
    /// (conference).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    uniform: Option<Vec<usize>>,
    /// Tree depth (tree); items = 3^depth.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Base owner count (tightness).
    #[arg(long, default_value_t = 4)]
    base_owners: usize,
    /// Extra overlap levels (tightness).
    #[arg(long, default_value_t = 1)]
    extra_levels: usize,
    /// Items per base owner (tightness); must be divisible by
    /// base_owners^extra_levels.
    #[arg(long, default_value_t = 16)]
    items_per_owner: usize,
    /// Seed for the conference generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output edge-list CSV.
    #[arg(long, default_value = "edges.csv")]
    out: PathBuf,
}

fn cmd_gen(args: GenArgs, manifest_only: bool, timings: bool) -> Result<ExitCode> {
    let mut phases = Phases::new(timings);
    let config = json!({
        "kind": format!("{:?}", args.kind).to_lowercase(),
        "items": args.items,
        "owners": args.owners,
        "exponent": args.exponent,
        "uniform": args.uniform,
        "depth": args.depth,
        "base_owners": args.base_owners,
        "extra_levels": args.extra_levels,
        "items_per_owner": args.items_per_owner,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("gen", config, VERSION);
    manifest.set_seed(args.seed);
    if manifest_only {
        print_manifest(&manifest.finalize())?;
        return Ok(ExitCode::SUCCESS);
    }
    let graph = match args.kind {
        GenKind::Conference => {
            let law = match &args.uniform {
                Some(range) => DegreeLaw::Uniform {
                    lo: range[0],
                    hi: range[1],
                },
                None => DegreeLaw::PowerLaw {
                    exponent: args.exponent,
                },
            };
            gen_random_conference(args.items, args.owners, law, args.seed)?
        }
        GenKind::Tree => gen_ternary_tree(args.depth)?,
        GenKind::Tightness => {
            gen_tightness_family(args.base_owners, args.extra_levels, args.items_per_owner)?
        }
    };
    phases.mark("generate_ms");
    write_edge_csv(&args.out, &graph, None)?;
    phases.apply(&mut manifest);
    write_json_atomic(&manifest_path(&args.out), &manifest.finalize())?;
    phases.mark("write_ms");
    println!(
        "wrote {}: {} owners, {} items, {} edges",
        args.out.display(),
        graph.num_owners(),
        graph.num_items(),
        graph.num_edges()
    );
    Ok(ExitCode::SUCCESS)
}

/// Sidecar manifest path for CSV artifacts: `<stem>.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn mapping_path(out: &Path) -> PathBuf {
    out.with_extension("mapping.json")
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    /// Largest-residual-owner greedy (guaranteed within a constant factor).
    Greedy,
    /// Uniformly random residual-owner baseline.
    Random,
    /// Exact search over all partitions (at most 12 items).
    Bruteforce,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Greedy => "greedy",
            MethodArg::Random => "random",
            MethodArg::Bruteforce => "bruteforce",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    /// Squared block size (comparison count).
    Comparison,
    /// Block size minus one (elicited within-block comparisons).
    SizeFocused,
    /// Block size to the --alpha power.
    Power,
}

impl ObjectiveArg {
    fn build(self, alpha: f64) -> SizeObjective {
        match self {
            ObjectiveArg::Comparison => SizeObjective::Comparison,
            ObjectiveArg::SizeFocused => SizeObjective::SizeFocused,
            ObjectiveArg::Power => SizeObjective::Power { alpha },
        }
    }
}

#[derive(Args)]
struct PartitionArgs {
    /// Edge-list CSV (header: owner_id,item_id).
    edges: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Greedy)]
    method: MethodArg,
    /// Common-owner count every multi-item block must reach.
    #[arg(long, value_name = "L", default_value_t = 1)]
    strong: usize,
    /// Objective maximized by bruteforce and reported first.
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Comparison)]
    objective: ObjectiveArg,
    /// Exponent for --objective power.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Seed for --method random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output partition JSON.
    #[arg(long, default_value = "partition.json")]
    out: PathBuf,
}

fn cmd_partition(args: PartitionArgs, manifest_only: bool, timings: bool) -> Result<ExitCode> {
    let mut phases = Phases::new(timings);
    let objective = args.objective.build(args.alpha);
    let config = json!({
        "edges": args.edges,
        "method": args.method.name(),
        "strong": args.strong,
        "objective": objective,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("partition", config, VERSION);
    manifest.digest_input(&args.edges)?;
    manifest.set_seed(args.seed);
    if manifest_only {
        print_manifest(&manifest.finalize())?;
        return Ok(ExitCode::SUCCESS);
    }
    let loaded = read_edge_csv(&args.edges)?;
    let g = &loaded.graph;
    phases.mark("load_ms");
    let partition = match args.method {
        MethodArg::Greedy => greedy_partition_l(g, args.strong, DEFAULT_REDUCTION_BUDGET)?,
        MethodArg::Random => {
            if args.strong == 1 {
                random_partition(g, args.seed)
            } else {
                let reduced = reduce_l_to_1(g, args.strong, DEFAULT_REDUCTION_BUDGET)?;
                let derived = random_partition(&reduced.graph, args.seed);
                Partition::new(g, derived.blocks().to_vec())?
            }
        }
        MethodArg::Bruteforce => brute_force_optimal(g, &objective, args.strong)?,
    };
    phases.mark("partition_ms");
    phases.apply(&mut manifest);
    let file = partition_to_file(
        &partition,
        args.method.name(),
        Some(args.strong),
        &objective,
        Some(manifest.finalize()),
    );
    write_json_atomic(&args.out, &file)?;
    if let Some(mapping) = &loaded.mapping {
        write_json_atomic(&mapping_path(&args.out), mapping)?;
        eprintln!(
            "note: input used string ids; dense-id mapping written to {}",
            mapping_path(&args.out).display()
        );
    }
    phases.mark("write_ms");
    let mut sizes: Vec<usize> = partition.blocks().iter().map(|b| b.len()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let objectives: Vec<String> = file
        .objectives
        .iter()
        .map(|o| format!("{}={}", o.name, o.value))
        .collect();
    println!(
        "wrote {}: {} blocks (sizes {:?}), {}",
        args.out.display(),
        partition.num_blocks(),
        sizes,
        objectives.join(", ")
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MechanismArg {
    /// Per-block credential-weighted averaging over common owners.
    Partition,
    /// Unweighted per-owner averaging (manipulable; kept as a baseline).
    Naive,
    /// Credential-weighted averaging of full-ranking fits (requires every
    /// owner to rank all items).
    Complete,
}

impl MechanismArg {
    fn name(self) -> &'static str {
        match self {
            MechanismArg::Partition => "partition",
            MechanismArg::Naive => "naive",
            MechanismArg::Complete => "complete",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InlineMethodArg {
    Greedy,
    Random,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Edge-list CSV (owner_id,item_id).
    #[arg(long)]
    edges: PathBuf,
    /// Observed scores CSV (item_id,score).
    #[arg(long)]
    scores: PathBuf,
    /// Owner rankings JSON: [{"owner_id": ..., "ranking": [...]}].
    #[arg(long)]
    reports: PathBuf,
    /// Partition JSON; when absent one is built in-process.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Method for the in-process partition.
    #[arg(long, value_enum, default_value_t = InlineMethodArg::Greedy)]
    partition_method: InlineMethodArg,
    #[arg(long, value_enum, default_value_t = MechanismArg::Partition)]
    mechanism: MechanismArg,
    /// Per-owner credential weights, comma separated (default uniform).
    #[arg(long, value_delimiter = ',')]
    credentials: Option<Vec<f64>>,
    /// Seed for filling missing rankings (and the random partition).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Do not fill missing rankings: owners without reports are excluded,
    /// and blocks with no reporting owner pass raw scores through.
    #[arg(long)]
    no_fill: bool,
    /// Output CSV (item_id,raw,adjusted); a manifest JSON is written
    /// alongside.
    #[arg(long, default_value = "adjusted.csv")]
    out: PathBuf,
}

fn cmd_calibrate(args: CalibrateArgs, manifest_only: bool, timings: bool) -> Result<ExitCode> {
    let mut phases = Phases::new(timings);
    let config = json!({
        "edges": args.edges,
        "scores": args.scores,
        "reports": args.reports,
        "partition": args.partition,
        "partition_method": format!("{:?}", args.partition_method).to_lowercase(),
        "mechanism": args.mechanism.name(),
        "credentials": args.credentials,
        "seed": args.seed,
        "no_fill": args.no_fill,
    });
    let mut manifest = RunManifest::new("calibrate", config, VERSION);
    manifest.digest_input(&args.edges)?;
    manifest.digest_input(&args.scores)?;
    manifest.digest_input(&args.reports)?;
    if let Some(p) = &args.partition {
        manifest.digest_input(p)?;
    }
    manifest.set_seed(args.seed);
    if manifest_only {
        print_manifest(&manifest.finalize())?;
        return Ok(ExitCode::SUCCESS);
    }

    let loaded = read_edge_csv(&args.edges)?;
    let g = &loaded.graph;
    let mapping = loaded.mapping.as_ref();
    let y = read_score_csv(&args.scores, g.num_items(), mapping)?;
    let entries = read_reports_json(&args.reports, g, mapping)?;
    phases.mark("load_ms");

    let policy = if args.no_fill {
        FillPolicy::Reject
    } else {
        FillPolicy::Seeded(args.seed)
    };
    let mut profile = ReportProfile::new(policy);
    let mut reported: BTreeSet<usize> = BTreeSet::new();
    for (owner, ranking) in &entries {
        profile.insert(*owner, ranking.clone());
        reported.insert(*owner);
    }

    let base_cred = match &args.credentials {
        Some(alpha) => OwnerCredentials::new(alpha.clone())?,
        None => OwnerCredentials::uniform(g.num_owners()),
    };
    // Without fill, owners who stayed silent are excluded by zeroing their
    // credential; blocks whose owners are all silent pass raw through.
    let cred = if args.no_fill {
        let mut alpha = base_cred.values().to_vec();
        for (owner, value) in alpha.iter_mut().enumerate() {
            if !reported.contains(&owner) && *value > 0.0 {
                if !entries.is_empty() {
                    eprintln!("note: owner {owner} has no ranking; excluded from calibration");
                }
                *value = 0.0;
            }
        }
        OwnerCredentials::new(alpha)?
    } else {
        base_cred
    };

    let mut used: BTreeSet<usize> = BTreeSet::new();
    let adjusted = if args.no_fill && entries.is_empty() {
        eprintln!("note: no rankings given; scores pass through unchanged");
        y.clone()
    } else {
        match args.mechanism {
            MechanismArg::Partition => {
                let partition = match &args.partition {
                    Some(path) => read_partition_json(path, g)?,
                    None => match args.partition_method {
                        InlineMethodArg::Greedy => {
                            greedy_partition_l(g, 1, DEFAULT_REDUCTION_BUDGET)?
                        }
                        InlineMethodArg::Random => random_partition(g, args.seed),
                    },
                };
                let detail = calibrate_with_partition_detailed(g, &partition, &y, &profile, &cred)?;
                let mut calibrated_blocks = 0usize;
                for outcome in &detail.blocks {
                    if let BlockStatus::Calibrated { owners } = &outcome.status {
                        calibrated_blocks += 1;
                        used.extend(owners.iter().copied());
                    }
                }
                println!(
                    "calibrated {} of {} blocks",
                    calibrated_blocks,
                    detail.blocks.len()
                );
                detail.scores
            }
            MechanismArg::Naive => {
                used.extend((0..g.num_owners()).filter(|&j| !g.items_of(j).is_empty()));
                naive_ownership_average(g, &y, &profile)?
            }
            MechanismArg::Complete => {
                used.extend((0..g.num_owners()).filter(|&j| cred.alpha(j) > 0.0));
                calibrate_complete_overlap(&y, &profile, &cred)?
            }
        }
    };
    for owner in &reported {
        if !used.contains(owner) {
            eprintln!(
                "warning: ranking from owner {owner} was not used (the mechanism commits to \
                 the blocks it announced)"
            );
        }
    }
    phases.mark("calibrate_ms");

    write_calibration_csv(&args.out, &y, &adjusted, mapping)?;
    phases.apply(&mut manifest);
    write_json_atomic(&manifest_path(&args.out), &manifest.finalize())?;
    phases.mark("write_ms");
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AuditArgs {
    /// Audit fixture JSON (graph, scores, noise, utilities, mechanism).
    #[arg(long)]
    config: PathBuf,
    /// Override the fixture's mechanism: complete, naive, or partition.
    #[arg(long)]
    mechanism: Option<String>,
    /// Include the full per-ranking utility table per owner.
    #[arg(long)]
    full_table: bool,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_audit(args: AuditArgs, manifest_only: bool, timings: bool) -> Result<ExitCode> {
    let mut phases = Phases::new(timings);
    let config = json!({
        "config": args.config,
        "mechanism": args.mechanism,
        "full_table": args.full_table,
    });
    let mut manifest = RunManifest::new("audit", config, VERSION);
    manifest.digest_input(&args.config)?;
    if manifest_only {
        print_manifest(&manifest.finalize())?;
        return Ok(ExitCode::SUCCESS);
    }
    let spec = read_audit_spec(&args.config)?;
    phases.mark("load_ms");
    let run = run_audit_spec(&spec, args.mechanism.as_deref())
        .with_context(|| format!("auditing {}", args.config.display()))?;
    phases.mark("audit_ms");
    phases.apply(&mut manifest);
    let file = audit_to_file(&run, spec.tolerance, args.full_table, Some(manifest.finalize()));
    for result in &run.results {
        println!(
            "owner {}: truthful_is_best={} gap={:.9}",
            result.owner, result.truthful_is_best, result.gap
        );
    }
    match &args.out {
        Some(path) => {
            write_json_atomic(path, &file)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&file)?),
    }
    if run.all_truthful {
        println!("mechanism {}: no profitable deviation found", run.mechanism);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "mechanism {}: profitable deviation exists",
            run.mechanism
        );
        Ok(ExitCode::from(AUDIT_FAILURE_EXIT))
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    /// Conference-scale calibration study (per-method MSE and accuracy).
    Conference,
    /// Ternary-tree block-size/noise trade-off sweep.
    Tree,
    /// Greedy-versus-random partition objective benchmark.
    Benchmark,
}

/// Tree-study parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TreeStudyConfig {
    depth: usize,
    sigma_list: Vec<f64>,
    perception_list: Vec<f64>,
    trials: usize,
    seed: u64,
}

impl Default for TreeStudyConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            sigma_list: vec![0.5, 1.0, 2.0],
            perception_list: vec![0.0, 0.5, 1.0, 2.0],
            trials: 20,
            seed: 0,
        }
    }
}

/// Benchmark-study parameters (conference graph, both objectives).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchmarkStudyConfig {
    items: usize,
    owners: usize,
    exponent: f64,
    /// Adds a power objective with this exponent next to the built-ins.
    power_alpha: Option<f64>,
    seed: u64,
}

impl Default for BenchmarkStudyConfig {
    fn default() -> Self {
        Self {
            items: 100,
            owners: 300,
            exponent: 2.5,
            power_alpha: None,
            seed: 0,
        }
    }
}

enum StudyPlan {
    Conference(ExperimentConfig),
    Tree(TreeStudyConfig),
    Benchmark(BenchmarkStudyConfig),
}

#[derive(Deserialize)]
struct StudyProbe {
    #[serde(default)]
    study: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in study: conference, tree, or benchmark.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<PresetArg>,
    /// Study config file, TOML primary, JSON accepted; its `study` key
    /// picks the study (default conference).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation-noise sigma override (repeatable; the tree study takes
    /// the whole list, others the first value).
    #[arg(long = "sigma", value_name = "SIGMA")]
    sigma: Vec<f64>,
    /// Ranking perception-noise sd override (repeatable, as --sigma).
    #[arg(long = "perception", value_name = "SD")]
    perception: Vec<f64>,
    /// Tree depth override.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Item-count override (conference graph or benchmark).
    #[arg(long)]
    items: Option<usize>,
    /// Owner-count override (conference graph or benchmark).
    #[arg(long)]
    owners: Option<usize>,
    /// Directory receiving report.json and trials.csv.
    #[arg(long, default_value = "sim-out")]
    out_dir: PathBuf,
}

fn load_study(args: &SimulateArgs) -> Result<StudyPlan> {
    if let Some(preset) = args.preset {
        return Ok(match preset {
            PresetArg::Conference => StudyPlan::Conference(ExperimentConfig::default()),
            PresetArg::Tree => StudyPlan::Tree(TreeStudyConfig::default()),
            PresetArg::Benchmark => StudyPlan::Benchmark(BenchmarkStudyConfig::default()),
        });
    }
    let Some(path) = &args.config else {
        bail!("choose a study with --preset or --config");
    };
    let probe: StudyProbe = read_config_file(path)?;
    let mut value: serde_json::Value = read_config_file(path)?;
    if let Some(map) = value.as_object_mut() {
        map.remove("study");
    }
    let study = probe.study.as_deref().unwrap_or("conference");
    let parse_context = || format!("in {}", path.display());
    Ok(match study {
        "conference" => StudyPlan::Conference(
            serde_json::from_value(value).with_context(parse_context)?,
        ),
        "tree" => StudyPlan::Tree(serde_json::from_value(value).with_context(parse_context)?),
        "benchmark" => {
            StudyPlan::Benchmark(serde_json::from_value(value).with_context(parse_context)?)
        }
        other => bail!(
            "unknown study {other:?} in {}; use conference, tree, or benchmark",
            path.display()
        ),
    })
}

fn apply_overrides(plan: &mut StudyPlan, args: &SimulateArgs) -> Result<()> {
    match plan {
        StudyPlan::Conference(cfg) => {
            if let Some(&sigma) = args.sigma.first() {
                cfg.noise_sigma = sigma;
            }
            if let Some(&sd) = args.perception.first() {
                cfg.perception_sd = Some(sd);
            }
            if let Some(trials) = args.trials {
                cfg.trials = trials;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if args.items.is_some() || args.owners.is_some() {
                match &mut cfg.graph {
                    GraphSpec::Conference {
                        num_items,
                        num_owners,
                        ..
                    } => {
                        if let Some(items) = args.items {
                            *num_items = items;
                        }
                        if let Some(owners) = args.owners {
                            *num_owners = owners;
                        }
                    }
                    _ => bail!("--items/--owners apply only to conference-source graphs"),
                }
            }
            if args.depth.is_some() {
                bail!("--depth applies only to tree studies");
            }
        }
        StudyPlan::Tree(cfg) => {
            if !args.sigma.is_empty() {
                cfg.sigma_list = args.sigma.clone();
            }
            if !args.perception.is_empty() {
                cfg.perception_list = args.perception.clone();
            }
            if let Some(depth) = args.depth {
                cfg.depth = depth;
            }
            if let Some(trials) = args.trials {
                cfg.trials = trials;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if args.items.is_some() || args.owners.is_some() {
                bail!("--items/--owners do not apply to the tree study (size is 3^depth)");
            }
        }
        StudyPlan::Benchmark(cfg) => {
            if let Some(items) = args.items {
                cfg.items = items;
            }
            if let Some(owners) = args.owners {
                cfg.owners = owners;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if args.depth.is_some() || args.trials.is_some() {
                bail!("--depth/--trials do not apply to the benchmark study");
            }
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, manifest_only: bool, timings: bool) -> Result<ExitCode> {
    let mut phases = Phases::new(timings);
    let mut plan = load_study(&args)?;
    apply_overrides(&mut plan, &args)?;
    let (study_name, config_echo, seed) = match &plan {
        StudyPlan::Conference(cfg) => (
            "conference",
            serde_json::to_value(cfg)?,
            cfg.seed,
        ),
        StudyPlan::Tree(cfg) => ("tree", serde_json::to_value(cfg)?, cfg.seed),
        StudyPlan::Benchmark(cfg) => ("benchmark", serde_json::to_value(cfg)?, cfg.seed),
    };
    let mut manifest = RunManifest::new(
        "simulate",
        json!({"study": study_name, "config": config_echo}),
        VERSION,
    );
    if let Some(path) = &args.config {
        manifest.digest_input(path)?;
    }
    manifest.set_seed(seed);
    if manifest_only {
        print_manifest(&manifest.finalize())?;
        return Ok(ExitCode::SUCCESS);
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let report_path = args.out_dir.join("report.json");
    let csv_path = args.out_dir.join("trials.csv");
    phases.mark("load_ms");

    match plan {
        StudyPlan::Conference(cfg) => {
            let report = run_conference_study(&cfg)?;
            phases.mark("simulate_ms");
            phases.apply(&mut manifest);
            for (method, stat) in &report.mse_per_method {
                let pct = report.pct_change_vs_baseline.get(method);
                match pct {
                    Some(p) => println!(
                        "{method}: mse {:.4} ± {:.4}, change vs baseline {:+.1}% ± {:.1}%",
                        stat.mean,
                        stat.std_error,
                        100.0 * p.mean,
                        100.0 * p.std_error
                    ),
                    None => println!("{method}: mse {:.4} ± {:.4}", stat.mean, stat.std_error),
                }
            }
            let file = MetricsFile {
                report,
                manifest: Some(manifest.finalize()),
            };
            write_json_atomic(&report_path, &file)?;
            write_atomic(&csv_path, &metrics_csv_bytes(&file.report)?)?;
        }
        StudyPlan::Tree(cfg) => {
            let report = run_tree_tradeoff(
                cfg.depth,
                &cfg.sigma_list,
                &cfg.perception_list,
                cfg.trials,
                cfg.seed,
            )?;
            phases.mark("simulate_ms");
            phases.apply(&mut manifest);
            for &sigma in &cfg.sigma_list {
                for &sd in &cfg.perception_list {
                    if let Some(level) = report.argmin_level(sigma, sd) {
                        println!(
                            "sigma {sigma}, perception sd {sd}: best level {level}"
                        );
                    }
                }
            }
            let file = TradeoffFile {
                report,
                manifest: Some(manifest.finalize()),
            };
            write_json_atomic(&report_path, &file)?;
            write_atomic(&csv_path, &tradeoff_csv_bytes(&file.report)?)?;
        }
        StudyPlan::Benchmark(cfg) => {
            let g = gen_random_conference(
                cfg.items,
                cfg.owners,
                DegreeLaw::PowerLaw {
                    exponent: cfg.exponent,
                },
                cfg.seed,
            )?;
            let mut objectives = vec![SizeObjective::Comparison, SizeObjective::SizeFocused];
            if let Some(alpha) = cfg.power_alpha {
                objectives.push(SizeObjective::Power { alpha });
            }
            let reports = run_partition_benchmark(&g, &objectives, cfg.seed)?;
            phases.mark("simulate_ms");
            phases.apply(&mut manifest);
            for r in &reports {
                println!(
                    "{} under {}: {}",
                    r.method, r.objective_name, r.objective_value
                );
            }
            let file = BenchmarkFile {
                reports,
                manifest: Some(manifest.finalize()),
            };
            write_json_atomic(&report_path, &file)?;
            write_atomic(&csv_path, &benchmark_csv_bytes(&file.reports)?)?;
        }
    }
    phases.mark("write_ms");
    println!(
        "wrote {} and {}",
        report_path.display(),
        csv_path.display()
    );
    Ok(ExitCode::SUCCESS)
}
