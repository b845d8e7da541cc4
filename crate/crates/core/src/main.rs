// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use regionsel::clustering::{ClusterError, ClusteringParams};
use regionsel::memory::{EventRecord, MemoryError, MemoryParams, Policy};
use regionsel::predictor::{train, LabeledExample, PredictorError, PredictorModel, TrainConfig};
use regionsel::sim::eval::score_log;
use regionsel::sim::{
    gen_synthetic, ground_truth_regions, grid_revisit_route, load_sequence, run_exploration, run_navigation,
    run_report, save_sequence, Exploration, GtThresholds, Layout, NavigationConfig, PredictorSource, RegionPairing,
    RunReport, SessionMode, SimError, SyntheticSpec,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(name = "regionsel", version, about = "Region-based working-memory preselection for topological SLAM")]
struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic sequence (and optionally a second-session route).
    GenSynthetic {
        #[arg(long)]
        layout: Option<Layout>,
        #[arg(long)]
        frames: Option<usize>,
        /// Grid blocks revisited by a second session, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        revisit: Vec<usize>,
    },
    /// Map and cluster a sequence; writes map.json, clusters.csv, dataset.jsonl.
    Explore {
        #[arg(long)]
        seq: PathBuf,
    },
    /// Train the region predictor; writes model.bin and loss.csv.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Navigate with memory management; writes events-<policy>.jsonl and report-<policy>.json.
    Replay {
        #[arg(long)]
        map: Option<PathBuf>,
        /// Second-session sequence; relocalize instead of replaying the map.
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use ground-truth regions instead of the model.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        policy: Option<Policy>,
        /// Run the region and the baseline policy side by side.
        #[arg(long)]
        sweep: bool,
        /// Record per-update latency (latency-<policy>.csv and report stats).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        pairing: Option<PathBuf>,
    },
    /// Score an event log; writes eval.json.
    Eval {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        pairing: Option<PathBuf>,
    },
    /// Emit CSV tables for cluster maps, latency against map size and detections.
    PlotData {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        events: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        latency: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainSection {
    hidden: usize,
    /// Seed of the weight initialization.
    model_seed: u64,
    #[serde(flatten)]
    config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            model_seed: 1,
            config: TrainConfig {
                epochs: 300,
                step_size: 0.5,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MemorySection {
    n_wm: usize,
    m_stm: usize,
    k1: usize,
    k2_frac: f64,
    tau_loop: f64,
    policy: Policy,
    loop_window: Option<usize>,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            n_wm: 50,
            m_stm: 10,
            k1: 2,
            k2_frac: 0.25,
            tau_loop: 0.85,
            policy: Policy::Region,
            loop_window: None,
        }
    }
}

impl MemorySection {
    fn params(&self, policy: Policy) -> Result<MemoryParams, MemoryError> {
        let p = MemoryParams::new(self.n_wm, self.m_stm, self.k1, self.k2_frac, self.tau_loop, policy)?;
        Ok(match self.loop_window {
            Some(w) => p.with_loop_window(w),
            None => p,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EmaSection {
    alpha: f64,
}

impl Default for EmaSection {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    synthetic: SyntheticSpec,
    clustering: ClusteringParams,
    train: TrainSection,
    memory: MemorySection,
    gt: GtThresholds,
    ema: EmaSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            // sized for 1 m node spacing
            clustering: ClusteringParams {
                r_max: 300.0,
                ..ClusteringParams::default()
            },
            train: TrainSection::default(),
            memory: MemorySection::default(),
            gt: GtThresholds::default(),
            ema: EmaSection::default(),
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_error(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        err: err.into(),
    }
}

fn data_error(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_DATA,
        err: err.into(),
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::InvalidParams(_)
            | SimError::Memory(MemoryError::Constraint { .. } | MemoryError::InvalidParams(_))
            | SimError::Predictor(PredictorError::InvalidConfig(_))
            | SimError::Cluster(ClusterError::InvalidParams(_)) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Failure { code, err: e.into() }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn load_config(cli: &Cli) -> CmdResult<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(config_error)?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(config_error)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synthetic.seed = seed;
        cfg.train.config.seed = seed;
        cfg.train.model_seed = seed;
    }
    cfg.clustering.validate().map_err(config_error)?;
    cfg.train.config.validate().map_err(config_error)?;
    cfg.gt.validate()?;
    cfg.synthetic.validate()?;
    cfg.memory.params(cfg.memory.policy).map_err(config_error)?;
    if !(cfg.ema.alpha > 0.0 && cfg.ema.alpha <= 1.0) {
        return Err(config_error(anyhow!("ema.alpha must lie in (0, 1]")));
    }
    Ok(cfg)
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(data_error)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(data_error)?;
    writeln!(out).and_then(|_| out.flush()).map_err(data_error)
}

fn cmd_gen_synthetic(cfg: &RunConfig, out: &Path, layout: Option<Layout>, frames: Option<usize>, revisit: &[usize]) -> CmdResult {
    let mut spec = cfg.synthetic.clone();
    if let Some(l) = layout {
        spec.layout = l;
    }
    if let Some(n) = frames {
        spec.n_frames = n;
    }
    let (world, seq) = gen_synthetic(&spec)?;
    save_sequence(&seq, &out.join("synthetic.jsonl"))?;
    if !revisit.is_empty() {
        if spec.layout != Layout::Grid {
            return Err(config_error(anyhow!("--revisit needs the grid layout")));
        }
        let route = grid_revisit_route(&spec, revisit, 10.0);
        let session = world.render(&route, "session2", spec.dt, spec.noise_sigma, spec.seed + 1);
        save_sequence(&session, &out.join("session2.jsonl"))?;
    }
    println!("wrote {} frames to {}", seq.len(), out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    node_id: usize,
    region: usize,
    feature: Vec<f64>,
}

fn cmd_explore(cfg: &RunConfig, out: &Path, seq: &Path) -> CmdResult {
    let frames = load_sequence(seq)?;
    let ex = run_exploration(&frames, &cfg.clustering, &cfg.gt)?;
    ex.save(&out.join("map.json"))?;
    let mut csv = create(&out.join("clusters.csv"))?;
    ex.regions.write_csv(&ex.graph, &mut csv).map_err(data_error)?;
    csv.flush().map_err(data_error)?;
    let mut data = create(&out.join("dataset.jsonl"))?;
    for (node_id, ex) in ex.dataset().into_iter().enumerate() {
        let line = DatasetLine {
            node_id,
            region: ex.region,
            feature: ex.feature,
        };
        serde_json::to_writer(&mut data, &line).map_err(data_error)?;
        writeln!(data).map_err(data_error)?;
    }
    data.flush().map_err(data_error)?;
    println!("{} nodes, {} regions, {} revisit links", ex.len(), ex.n_regions(), ex.loop_edges.len());
    Ok(())
}

fn load_dataset(path: &Path) -> CmdResult<Vec<LabeledExample>> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(data_error)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data_error)?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DatasetLine = serde_json::from_str(&line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))
            .map_err(data_error)?;
        out.push(LabeledExample {
            feature: d.feature,
            region: d.region,
        });
    }
    if out.is_empty() {
        return Err(data_error(anyhow!("{}: empty dataset", path.display())));
    }
    Ok(out)
}

fn cmd_train(cfg: &RunConfig, out: &Path, dataset: Option<PathBuf>) -> CmdResult {
    let path = dataset.unwrap_or_else(|| out.join("dataset.jsonl"));
    let data = load_dataset(&path)?;
    let d_in = data[0].feature.len();
    let n_regions = data.iter().map(|e| e.region).max().unwrap_or(0) + 1;
    let init = PredictorModel::new(d_in, cfg.train.hidden, n_regions, cfg.train.model_seed)
        .map_err(config_error)?;
    let (model, history) = train(&init, &data, &cfg.train.config).map_err(|e| match e {
        PredictorError::InvalidConfig(_) => config_error(e),
        other => data_error(other),
    })?;
    model.save(&out.join("model.bin")).map_err(data_error)?;
    let mut csv = create(&out.join("loss.csv"))?;
    writeln!(csv, "epoch,loss").map_err(data_error)?;
    for (e, l) in history.iter().enumerate() {
        writeln!(csv, "{e},{l}").map_err(data_error)?;
    }
    csv.flush().map_err(data_error)?;
    println!("trained on {} examples, final loss {:.6}", data.len(), history.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn check_report(r: &RunReport) -> CmdResult {
    if r.top3 < r.top1 || r.loops_detected > r.loops_total || r.reloc_performed > r.reloc_total {
        return Err(Failure {
            code: EXIT_INVARIANT,
            err: anyhow!("report invariant violated: {r:?}"),
        });
    }
    Ok(())
}

struct ReplayArgs {
    map: Option<PathBuf>,
    seq: Option<PathBuf>,
    model: Option<PathBuf>,
    oracle: bool,
    policy: Option<Policy>,
    sweep: bool,
    timing: bool,
    pairing: Option<PathBuf>,
}

fn policy_name(p: Policy) -> &'static str {
    match p {
        Policy::Region => "region",
        Policy::Baseline => "baseline",
    }
}

fn cmd_replay(cfg: &RunConfig, out: &Path, args: ReplayArgs) -> CmdResult {
    let exploration = Exploration::load(&args.map.unwrap_or_else(|| out.join("map.json")))?;
    let (frames, mode) = match &args.seq {
        Some(path) => (load_sequence(path)?, SessionMode::Relocalize),
        None => (exploration.frames(), SessionMode::Replay),
    };
    let model = match (&args.model, args.oracle) {
        (_, true) => None,
        (Some(path), false) => Some(PredictorModel::load(path).map_err(data_error)?),
        (None, false) => return Err(config_error(anyhow!("replay needs --model or --oracle"))),
    };
    let source = match &model {
        Some(m) => PredictorSource::Model(m),
        None => PredictorSource::Oracle,
    };
    let pairing = args.pairing.as_deref().map(RegionPairing::load).transpose()?;
    let policies = if args.sweep {
        vec![Policy::Region, Policy::Baseline]
    } else {
        vec![args.policy.unwrap_or(cfg.memory.policy)]
    };
    let configs = policies
        .iter()
        .map(|&p| {
            Ok(NavigationConfig {
                memory: cfg.memory.params(p).map_err(config_error)?,
                ema_alpha: cfg.ema.alpha,
                timing: args.timing,
            })
        })
        .collect::<CmdResult<Vec<_>>>()?;

    // independent runs; each owns its memory state
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(|| run_navigation(&frames, &exploration, source, c, mode)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("navigation thread panicked"))
            .collect::<Vec<_>>()
    });

    let echo = serde_json::to_value(cfg).map_err(data_error)?;
    for ((policy, nav), c) in policies.iter().zip(runs).zip(&configs) {
        let nav = nav?;
        let name = policy_name(*policy);
        let mut events = create(&out.join(format!("events-{name}.jsonl")))?;
        for ev in &nav.events {
            serde_json::to_writer(&mut events, &EventRecord::from(ev)).map_err(data_error)?;
            writeln!(events).map_err(data_error)?;
        }
        events.flush().map_err(data_error)?;
        if c.timing {
            let mut csv = create(&out.join(format!("latency-{name}.csv")))?;
            writeln!(csv, "step,map_size,latency_us").map_err(data_error)?;
            for (i, (ns, size)) in nav.latencies_ns.iter().zip(&nav.map_sizes).enumerate() {
                writeln!(csv, "{},{size},{:.3}", i + 1, *ns as f64 / 1e3).map_err(data_error)?;
            }
            csv.flush().map_err(data_error)?;
        }
        let mut report = run_report(&nav, &exploration, &frames, mode, *policy, source.name(), pairing.as_ref());
        report.config = Some(echo.clone());
        check_report(&report)?;
        write_json(&out.join(format!("report-{name}.json")), &report)?;
        println!(
            "{name}: loops {}/{}, relocalizations {}/{}, top1 {:.3}, top3 {:.3}",
            report.loops_detected,
            report.loops_total,
            report.reloc_performed,
            report.reloc_total,
            report.top1,
            report.top3
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    mode: SessionMode,
    frames: usize,
    top1: f64,
    top3: f64,
    topk_evaluated: usize,
    topk_excluded: usize,
    loops_total: usize,
    loops_detected: usize,
    reloc_total: usize,
    reloc_performed: usize,
}

fn load_events(path: &Path) -> CmdResult<Vec<EventRecord>> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(data_error)?;
    let mut log = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data_error)?;
        if line.trim().is_empty() {
            continue;
        }
        log.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}: line {}", path.display(), i + 1))
                .map_err(data_error)?,
        );
    }
    Ok(log)
}

fn cmd_eval(out: &Path, events: &Path, map: Option<PathBuf>, seq: Option<PathBuf>, pairing: Option<PathBuf>) -> CmdResult {
    let log = load_events(events)?;
    let exploration = Exploration::load(&map.unwrap_or_else(|| out.join("map.json")))?;
    let (frames, mode) = match &seq {
        Some(path) => (load_sequence(path)?, SessionMode::Relocalize),
        None => (exploration.frames(), SessionMode::Replay),
    };
    if log.len() != frames.len() {
        return Err(data_error(anyhow!(
            "{} log records for {} frames",
            log.len(),
            frames.len()
        )));
    }
    let pairing = pairing.as_deref().map(RegionPairing::load).transpose()?;
    let truth = ground_truth_regions(&exploration, &frames, mode);
    let (top1, top3, loops, reloc) = score_log(&log, &exploration, &frames, &truth, mode, pairing.as_ref());
    let report = EvalReport {
        mode,
        frames: frames.len(),
        top1: top1.fraction,
        top3: top3.fraction,
        topk_evaluated: top3.evaluated,
        topk_excluded: top3.excluded,
        loops_total: loops.total,
        loops_detected: loops.detected,
        reloc_total: reloc.total,
        reloc_performed: reloc.detected,
    };
    write_json(&out.join("eval.json"), &report)?;
    println!(
        "loops {}/{}, relocalizations {}/{}, top1 {:.3}, top3 {:.3}",
        report.loops_detected, report.loops_total, report.reloc_performed, report.reloc_total, report.top1, report.top3
    );
    Ok(())
}

/// Map-size bucket width of the latency table.
const SIZE_BIN: usize = 500;

fn cmd_plot_data(out: &Path, map: Option<PathBuf>, events: &[PathBuf], latency: &[PathBuf], reports: &[PathBuf]) -> CmdResult {
    if let Some(map) = map {
        let ex = Exploration::load(&map)?;
        let mut csv = create(&out.join("plot_clusters.csv"))?;
        ex.regions.write_csv(&ex.graph, &mut csv).map_err(data_error)?;
        csv.flush().map_err(data_error)?;
    }

    let mut csv = create(&out.join("plot_events.csv"))?;
    writeln!(csv, "source,step,node_id,wm_size,loop_closed,retrieved_u1,retrieved_u3,transferred").map_err(data_error)?;
    for path in events {
        let src = path.display();
        for r in load_events(path)? {
            writeln!(
                csv,
                "{src},{},{},{},{},{},{},{}",
                r.step,
                r.node_id,
                r.wm_size,
                u8::from(r.loop_closed),
                r.retrieved_u1.len(),
                r.retrieved_u3.len(),
                r.transferred.len()
            )
            .map_err(data_error)?;
        }
    }
    csv.flush().map_err(data_error)?;

    let mut csv = create(&out.join("plot_latency.csv"))?;
    writeln!(csv, "source,map_size_from,map_size_to,frames,mean_us").map_err(data_error)?;
    for path in latency {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(data_error)?;
        let mut bins: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let parsed = (cols.len() == 3)
                .then(|| Some((cols[1].parse::<usize>().ok()?, cols[2].parse::<f64>().ok()?)))
                .flatten();
            let (size, us) = parsed.ok_or_else(|| data_error(anyhow!("{}: bad line {}", path.display(), i + 1)))?;
            let e = bins.entry(size / SIZE_BIN).or_default();
            e.0 += 1;
            e.1 += us;
        }
        for (bin, (n, sum)) in bins {
            writeln!(
                csv,
                "{},{},{},{n},{:.3}",
                path.display(),
                bin * SIZE_BIN,
                (bin + 1) * SIZE_BIN,
                sum / n as f64
            )
            .map_err(data_error)?;
        }
    }
    csv.flush().map_err(data_error)?;

    let mut csv = create(&out.join("plot_detections.csv"))?;
    writeln!(csv, "source,mode,policy,predictor,loops_detected,loops_total,reloc_performed,reloc_total,top1,top3")
        .map_err(data_error)?;
    for path in reports {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(data_error)?;
        let r: RunReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(data_error)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            path.display(),
            serde_json::to_value(r.mode).map_err(data_error)?.as_str().unwrap_or_default(),
            policy_name(r.policy),
            r.predictor,
            r.loops_detected,
            r.loops_total,
            r.reloc_performed,
            r.reloc_total,
            r.top1,
            r.top3
        )
        .map_err(data_error)?;
    }
    csv.flush().map_err(data_error)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(data_error)?;
    match cli.command {
        Command::GenSynthetic { layout, frames, revisit } => cmd_gen_synthetic(&cfg, &out, layout, frames, &revisit),
        Command::Explore { seq } => cmd_explore(&cfg, &out, &seq),
        Command::Train { dataset } => cmd_train(&cfg, &out, dataset),
        Command::Replay {
            map,
            seq,
            model,
            oracle,
            policy,
            sweep,
            timing,
            pairing,
        } => cmd_replay(
            &cfg,
            &out,
            ReplayArgs {
                map,
                seq,
                model,
                oracle,
                policy,
                sweep,
                timing,
                pairing,
            },
        ),
        Command::Eval {
            events,
            map,
            seq,
            pairing,
        } => cmd_eval(&out, &events, map, seq, pairing),
        Command::PlotData {
            map,
            events,
            latency,
            reports,
        } => cmd_plot_data(&out, map, &events, &latency, &reports),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
