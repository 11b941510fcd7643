mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use oa_core::blackbox::{optimize_shaped, OptimizerConfig};
use oa_core::harness::{
    execute_attack, random_permutation, run_kn_oa_on, write_csv, write_json, write_table, Attack, DatasetSource,
    Epsilon, Execution, ExperimentConfig, PermutationMode,
};
use oa_core::oracle::{save_db, OracleServer, RemoteOracle, ServerConfig};
use oa_core::{
    compute_src, mean_rank, rank, AttackResult, AttackSpec, CandidateId, Permutation, RankingList, RankingOracle,
    VisibleRange,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "order-attack", version, about = "Order attacks on ranking systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack a single query, locally or against a running server.
    Attack(AttackArgs),
    /// Run the (k, N) protocol over many trials.
    Experiment(ExperimentArgs),
    /// Write the configured embedding database to a file.
    GenData(GenDataArgs),
    /// Serve the configured database over HTTP.
    Serve(ServeArgs),
    /// Time the SRC metric for several k.
    BenchSrc(BenchArgs),
    /// Resolve a config and print it.
    Validate(ConfigArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file, applied over the defaults (and over --preset).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in preset, e.g. table1-smoke.
    #[arg(long)]
    preset: Option<String>,
    /// Override a key, e.g. --set whitebox.xi=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = config::resolve(self.config.as_deref(), self.preset.as_deref(), &self.sets)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// rand, beta, pso, nes, spsa, whitebox or none.
    #[arg(long)]
    optimizer: Option<Attack>,
    /// L∞ budget as a fraction ("4/255") or decimal.
    #[arg(long)]
    epsilon: Option<Epsilon>,
    /// Query budget.
    #[arg(long)]
    q: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// Visible range: a number or "unbounded".
    #[arg(long)]
    n: Option<VisibleRange>,
    /// Index into the held-out queries.
    #[arg(long, default_value_t = 0)]
    query_index: usize,
    /// Desired order as one-based candidate positions, e.g. 3,1,2. Default follows the config.
    #[arg(long, value_delimiter = ',')]
    permutation: Option<Vec<usize>>,
    /// Remote oracle URL; attacks the local database when absent.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, env = "ORDER_ATTACK_TOKEN", default_value = "anonymous", hide_env_values = true)]
    token: String,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for report.json and trials.csv.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Most results any response may carry.
    #[arg(long, default_value = "50")]
    n: VisibleRange,
    /// Queries per token per UTC day; 0 means unlimited.
    #[arg(long, default_value_t = 500)]
    daily_limit: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10, 25, 50])]
    k: Vec<usize>,
    /// Timed calls per k.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct AttackReport<'a> {
    config: &'a ExperimentConfig,
    endpoint: Option<&'a str>,
    query_index: usize,
    candidates: &'a [CandidateId],
    permutation: &'a Permutation,
    desired_order: Vec<CandidateId>,
    /// Local ranking of the final perturbed query.
    final_ranking: &'a RankingList,
    result: &'a AttackResult,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Attack(a) => attack(a),
        Command::Experiment(a) => experiment(a),
        Command::GenData(a) => gen_data(a),
        Command::Serve(a) => serve(a),
        Command::BenchSrc(a) => bench_src(a),
        Command::Validate(a) => validate(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn attack(args: AttackArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(a) = args.optimizer {
        cfg.attack = a;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    if let Some(q) = args.q {
        cfg.query_budget = q;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(n) = args.n {
        cfg.visible_range = n;
    }
    cfg.trials = 1;
    cfg.validate()?;

    let dataset = cfg.dataset.load()?;
    if args.query_index >= dataset.query_pool_len() {
        bail!("query index {} out of range (pool has {})", args.query_index, dataset.query_pool_len());
    }
    let q = dataset.query(args.query_index)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let permutation = match &args.permutation {
        Some(p) => Permutation::from_one_based(p)?,
        None => match cfg.permutation {
            PermutationMode::Random => random_permutation(cfg.k, &mut rng),
            PermutationMode::Identity => Permutation::identity(cfg.k),
        },
    };
    if permutation.len() != cfg.k {
        bail!("permutation has {} entries but k = {}", permutation.len(), cfg.k);
    }
    let attack_seed: u64 = rng.gen();

    let eps = cfg.epsilon.value();
    let build_spec = |clean: &RankingList| -> Result<AttackSpec> {
        if clean.len() < cfg.k {
            bail!("the clean ranking has only {} entries, k = {}", clean.len(), cfg.k);
        }
        Ok(AttackSpec::new(clean.top(cfg.k).to_vec(), permutation.clone(), cfg.visible_range, eps, cfg.query_budget)?
            .with_margin(cfg.whitebox.margin_gamma)
            .with_xi(cfg.whitebox.xi))
    };

    let (spec, result, final_ranking) = match &args.endpoint {
        None => {
            let clean = rank(&dataset.model, &dataset.db, &q, cfg.visible_range)?;
            let spec = build_spec(&clean)?;
            let result = execute_attack(&dataset, &cfg, &q, &spec, &clean, attack_seed)?;
            let after = rank(&dataset.model, &dataset.db, &q.perturbed(&result.perturbation), cfg.visible_range)?;
            (spec, result, after)
        }
        Some(endpoint) => {
            let VisibleRange::Top(n) = cfg.visible_range else {
                bail!("a remote attack needs a finite visible range (--n)");
            };
            // one extra query fetches the clean ranking that defines the candidates
            let client = RemoteOracle::new(endpoint.as_str(), args.token.as_str(), n, cfg.query_budget + 1);
            let clean = client.query(&q)?;
            let spec = build_spec(&clean)?;
            let result = match cfg.attack {
                Attack::Whitebox => bail!("the white-box attack needs the local model, drop --endpoint"),
                Attack::None => execute_attack(&dataset, &cfg, &q, &spec, &clean, attack_seed)?,
                Attack::Blackbox(kind) => {
                    let opt = OptimizerConfig {
                        kind,
                        seed: attack_seed,
                        ..cfg.optimizer.clone()
                    };
                    optimize_shaped(&client, &q, dataset.shape, &spec, &opt)?
                }
            };
            // the server's answer for the final query is not re-requested; the
            // local model gives the same list when both load the same data
            let after = rank(&dataset.model, &dataset.db, &q.perturbed(&result.perturbation), cfg.visible_range)?;
            (spec, result, after)
        }
    };

    let report = AttackReport {
        config: &cfg,
        endpoint: args.endpoint.as_deref(),
        query_index: args.query_index,
        candidates: spec.candidates(),
        permutation: spec.permutation(),
        desired_order: spec.desired_order(),
        final_ranking: &final_ranking,
        result: &result,
    };
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    if cfg.visible_range.is_unbounded() {
        log::info!("mean rank {:?}", mean_rank(&final_ranking, spec.candidates()));
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    match args.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(1) => cfg.execution = Execution::Sequential,
        Some(n) => {
            cfg.execution = Execution::Parallel;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
        }
        None => {}
    }
    cfg.validate()?;
    let dataset = cfg.dataset.load()?;
    let report = run_kn_oa_on(&dataset, &cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let json = args.out.join("report.json");
    let csv = args.out.join("trials.csv");
    write_json(&report, BufWriter::new(File::create(&json)?))?;
    write_csv(&report, BufWriter::new(File::create(&csv)?))?;
    write_table(&report, io::stdout().lock())?;
    eprintln!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let source = match (&cfg.dataset, args.config.seed) {
        (DatasetSource::Synthetic(p), Some(seed)) => {
            let mut p = p.clone();
            p.seed = seed;
            DatasetSource::Synthetic(p)
        }
        (d, _) => d.clone(),
    };
    let dataset = source.load()?;
    save_db(&dataset.db, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "wrote {} items of dimension {} to {}",
        dataset.db.len(),
        dataset.db.dim(),
        args.out.display()
    );
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = cfg.dataset.load()?;
    let server = OracleServer::serve(
        Arc::new(dataset.model),
        Arc::new(dataset.db),
        &args.bind,
        ServerConfig {
            visible_range: args.n,
            daily_limit: (args.daily_limit > 0).then_some(args.daily_limit),
            workers: args.workers,
        },
    )?;
    println!("{}", server.endpoint());
    io::stdout().flush()?;
    server.join();
    Ok(())
}

fn bench_src(args: BenchArgs) -> Result<()> {
    if args.reps == 0 {
        bail!("--reps must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = io::stdout().lock();
    writeln!(out, "k,reps,median_ns")?;
    for &k in &args.k {
        if k < 2 {
            bail!("k must be at least 2, got {k}");
        }
        let candidates: Vec<CandidateId> = (0..k).map(|i| CandidateId::new(format!("c{i}"))).collect();
        let permutation = random_permutation(k, &mut rng);
        // the candidates shuffled among as many distractors, with a tail cut off
        let mut entries = candidates.clone();
        entries.extend((0..k).map(|i| CandidateId::new(format!("x{i}"))));
        rand::seq::SliceRandom::shuffle(entries.as_mut_slice(), &mut rng);
        entries.truncate(2 * k - k / 5);
        let ranking = RankingList::new(entries)?;
        let mut times: Vec<u128> = (0..args.reps)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(compute_src(&candidates, &permutation, std::hint::black_box(&ranking)).ok());
                start.elapsed().as_nanos()
            })
            .collect();
        times.sort_unstable();
        writeln!(out, "{k},{},{}", args.reps, times[times.len() / 2])?;
    }
    Ok(())
}

fn validate(args: ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    cfg.validate()?;
    print!("{}", config::to_toml(&cfg)?);
    Ok(())
}
