mod settings;

use std::fs::{self, File};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use dppmix::data::{
    self, generate_synthetic, load_baskets, load_baskets_with_catalog, write_labels, SynthConfig,
};
use dppmix::eval::{evaluate, make_eval_instances, ChainScorer, EvalConfig, UnseenPolicy};
use dppmix::predict::{predict_next_item, rank_candidates, PredictionRequest};
use dppmix::rng::{stream, Phase};
use dppmix::sghmc::{load_chain, run_sampler_with, save_chain};
use dppmix::{Catalog, Format, SamplerConfig};

use settings::{Settings, SAMPLER_KEYS};

#[derive(Parser)]
#[command(
    name = "dppmix",
    version,
    about = "Bayesian mixtures of low-rank DPPs for basket completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a mixture with SGHMC and write the sample chain.
    Train(TrainArgs),
    /// Score held-out items of test baskets against a chain.
    Evaluate(EvalArgs),
    /// Rank next-item candidates for a partial basket.
    Predict(PredictArgs),
    /// Generate a synthetic dataset from block-separated DPP components.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training baskets.
    #[arg(long)]
    data: Option<PathBuf>,
    /// basket-per-line or pair-list.
    #[arg(long)]
    format: Option<String>,
    /// Chain file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train fraction; splits --data and writes <out>.train.txt and <out>.test.txt.
    #[arg(long)]
    split: Option<f64>,
    /// Test baskets whose items join the catalog (they are not trained on).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Mixture components.
    #[arg(long)]
    w: Option<usize>,
    /// Trait dimension; defaults to the largest training basket.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    leapfrog: Option<usize>,
    /// Samples kept in the chain.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Sweeps per kept sample.
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    parallel: Option<bool>,
    /// Sweeps between progress lines.
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chain written by `train`.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Test baskets; every id must be in the chain's catalog.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training baskets, for the popularity weights.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Report prefix; writes <out>.txt and <out>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k_list: Option<String>,
    #[arg(long)]
    beta_list: Option<String>,
    /// Overrides the chain's burn-in.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Seed for choosing held-out items; defaults to the chain's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// count-as-one or error, for held-out items never seen in training.
    #[arg(long)]
    unseen: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Number of candidates to print.
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Observed item ids (space- or comma-separated).
    #[arg(required = true)]
    items: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Generating components.
    #[arg(long)]
    w: Option<usize>,
    /// Number of baskets.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    min_size: Option<usize>,
    /// Defaults to K.
    #[arg(long)]
    max_size: Option<usize>,
    /// Dataset file (basket-per-line).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label file; defaults to <out>.labels.txt.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

/// Exits with status 2 and the subcommand's usage, as clap does.
fn missing(subcommand: &str, key: &str) -> ! {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd
        .find_subcommand_mut(subcommand)
        .expect("known subcommand");
    sub.error(
        ErrorKind::MissingRequiredArgument,
        format!("--{key} is required (flag or config file)"),
    )
    .exit()
}

fn require(settings: &Settings, subcommand: &str, key: &str) -> PathBuf {
    match settings.raw(key) {
        Some(v) => PathBuf::from(v),
        None => missing(subcommand, key),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn format_of(settings: &Settings) -> Result<Format> {
    Ok(settings
        .raw("format")
        .unwrap_or("basket-per-line")
        .parse()?)
}

fn train(args: TrainArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_deref())?.with_flags([
        ("data", p(&args.data)),
        ("format", s(&args.format)),
        ("out", p(&args.out)),
        ("split", s(&args.split)),
        ("test", p(&args.test)),
        ("w", s(&args.w)),
        ("k", s(&args.k)),
        ("eta", s(&args.eta)),
        ("beta", s(&args.beta)),
        ("minibatch", s(&args.minibatch)),
        ("leapfrog", s(&args.leapfrog)),
        ("samples", s(&args.samples)),
        ("burn-in", s(&args.burn_in)),
        ("thinning", s(&args.thinning)),
        ("seed", s(&args.seed)),
        ("alpha", s(&args.alpha)),
        ("a0", s(&args.a0)),
        ("b0", s(&args.b0)),
        ("init-scale", s(&args.init_scale)),
        ("parallel", s(&args.parallel)),
        ("log-every", s(&args.log_every)),
    ]);
    let mut allowed = vec!["data", "format", "out", "split", "test", "log-every"];
    allowed.extend(SAMPLER_KEYS);
    settings.check_keys(&allowed)?;
    let data_path = require(&settings, "train", "data");
    let format = format_of(&settings)?;
    let out = PathBuf::from(settings.raw("out").unwrap_or("chain.bin"));
    let log_every = settings.get_or("log-every", 10usize)?.max(1);

    let mut dataset = load_baskets(&data_path, format)?;
    if let Some(test) = settings.raw("test") {
        let file = File::open(test).with_context(|| format!("opening {test}"))?;
        data::parse_baskets(
            BufReader::new(file),
            test,
            format,
            &mut dataset.catalog,
            true,
        )?;
    }
    eprint!("{}", dataset.summary());
    let seed = settings.get_or("seed", 0u64)?;
    if let Some(fraction) = settings.get::<f64>("split")? {
        let (train_set, test_set) =
            data::split(&dataset, fraction, &mut stream(seed, Phase::Split, 0, 0))?;
        train_set.write_baskets(with_suffix(&out, ".train.txt"))?;
        test_set.write_baskets(with_suffix(&out, ".test.txt"))?;
        eprintln!(
            "split: {} train / {} test baskets",
            train_set.len(),
            test_set.len()
        );
        dataset = train_set;
    }

    let k = settings.get_or("k", dataset.max_basket_size())?;
    let mut config = SamplerConfig::new(k);
    for (key, value) in settings.sampler_pairs() {
        config.set(key, value)?;
    }
    if settings.raw("burn-in").is_none() {
        // keep the default 1800-of-2000 proportion
        config.burn_in = config.total_samples * 9 / 10;
    }
    config.validate()?;
    let config = config.resolved();

    let log_path = with_suffix(&out, ".log");
    let mut log =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    for line in config.to_kv_text().lines() {
        writeln!(log, "# {line}")?;
    }
    let start = Instant::now();
    let total_sweeps = config.total_samples * config.thinning;
    let mut log_error = None;
    let chain = run_sampler_with(&dataset, &config, |stats| {
        if stats.sweep % log_every == 0 || stats.sweep + 1 == total_sweeps {
            let line = format!(
                "sweep {} minibatch_loglik {:.3} occupied {} elapsed {:.2}s",
                stats.sweep,
                stats.minibatch_log_likelihood,
                stats.occupied,
                start.elapsed().as_secs_f64()
            );
            eprintln!("{line}");
            if let Err(e) = writeln!(log, "{line}") {
                log_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    save_chain(&chain, &out)?;
    println!("wrote {} samples to {}", chain.len(), out.display());
    Ok(())
}

fn evaluate_cmd(args: EvalArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_deref())?.with_flags([
        ("chain", p(&args.chain)),
        ("data", p(&args.data)),
        ("train", p(&args.train)),
        ("format", s(&args.format)),
        ("out", p(&args.out)),
        ("k-list", s(&args.k_list)),
        ("beta-list", s(&args.beta_list)),
        ("burn-in", s(&args.burn_in)),
        ("seed", s(&args.seed)),
        ("unseen", s(&args.unseen)),
    ]);
    settings.check_keys(&[
        "chain",
        "data",
        "train",
        "format",
        "out",
        "k-list",
        "beta-list",
        "burn-in",
        "seed",
        "unseen",
    ])?;
    let chain_path = require(&settings, "evaluate", "chain");
    let data_path = require(&settings, "evaluate", "data");
    let format = format_of(&settings)?;
    let out = PathBuf::from(settings.raw("out").unwrap_or("report"));

    let chain = load_chain(&chain_path)?;
    let catalog = Catalog::from_ids(chain.catalog.iter().cloned())?;
    let test = load_baskets_with_catalog(&data_path, format, &catalog)?;
    let train_counts = match settings.raw("train") {
        Some(path) => load_baskets_with_catalog(path, format, &catalog)?.item_counts(),
        None => vec![0; catalog.len()],
    };
    let defaults = EvalConfig::default();
    let config = EvalConfig {
        k_list: settings.list("k-list")?.unwrap_or(defaults.k_list),
        beta_list: settings.list("beta-list")?.unwrap_or(defaults.beta_list),
        unseen_policy: match settings.raw("unseen").unwrap_or("count-as-one") {
            "count-as-one" => UnseenPolicy::CountAsOne,
            "error" => UnseenPolicy::Error,
            other => bail!("unknown unseen policy `{other}` (count-as-one or error)"),
        },
    };
    config.validate()?;
    let burn_in = settings.get_or("burn-in", chain.config.burn_in)?;
    let seed = settings.get_or("seed", chain.config.seed)?;

    let instances = make_eval_instances(&test.baskets, &mut stream(seed, Phase::Eval, 0, 0))?;
    let scorer = ChainScorer {
        chain: &chain,
        burn_in: Some(burn_in),
    };
    let mut report = evaluate(&instances, &scorer, &train_counts, &config)?;

    let join = |xs: &[String]| xs.join(",");
    let mut echo: Vec<(String, String)> = chain
        .config
        .to_kv_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (format!("sampler.{k}"), v.to_owned()))
        .collect();
    echo.extend([
        ("chain".into(), chain_path.display().to_string()),
        ("data".into(), data_path.display().to_string()),
        (
            "train".into(),
            settings.raw("train").unwrap_or("").to_owned(),
        ),
        (
            "k-list".into(),
            join(
                &config
                    .k_list
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>(),
            ),
        ),
        (
            "beta-list".into(),
            join(
                &config
                    .beta_list
                    .iter()
                    .map(|b| format!("{b:?}"))
                    .collect::<Vec<_>>(),
            ),
        ),
        ("burn-in".into(), burn_in.to_string()),
        ("seed".into(), seed.to_string()),
        ("unseen".into(), format!("{:?}", config.unseen_policy)),
    ]);
    report.config_echo = echo;

    let text_path = with_suffix(&out, ".txt");
    let csv_path = with_suffix(&out, ".csv");
    fs::write(&text_path, report.to_kv_text())
        .with_context(|| format!("writing {}", text_path.display()))?;
    fs::write(&csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;

    println!("instances  {}", report.num_instances);
    println!("MPR        {:.3}", report.mpr);
    println!();
    print!("{:>4}  {:>9}", "k", "precision");
    for beta in &config.beta_list {
        print!("  {:>10}", format!("pw[b={beta}]"));
    }
    println!();
    for (i, (k, prec)) in report.precision_at.iter().enumerate() {
        print!("{k:>4}  {prec:>9.4}");
        let row = &report.pop_weighted_precision_at
            [i * config.beta_list.len()..(i + 1) * config.beta_list.len()];
        for (_, _, v) in row {
            print!("  {v:>10.4}");
        }
        println!();
    }
    if report.unseen_held_out > 0 {
        println!(
            "note: {} held-out items never occur in training; weighted as count 1",
            report.unseen_held_out
        );
    }
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_deref())?.with_flags([
        ("chain", p(&args.chain)),
        ("top-n", s(&args.top_n)),
        ("burn-in", s(&args.burn_in)),
    ]);
    settings.check_keys(&["chain", "top-n", "burn-in"])?;
    let chain_path = require(&settings, "predict", "chain");
    let top_n = settings.get_or("top-n", 10usize)?;
    let chain = load_chain(&chain_path)?;
    let catalog = Catalog::from_ids(chain.catalog.iter().cloned())?;
    let ids: Vec<&str> = args
        .items
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let basket = catalog.resolve(ids)?;
    let mut request = PredictionRequest::new(basket.clone());
    request.burn_in = settings.get("burn-in")?;
    let scores = predict_next_item(&chain, &request)?;
    for (item, prob) in rank_candidates(&scores, &basket).into_iter().take(top_n) {
        println!("{}\t{prob:.6}", catalog.id(item));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let settings = Settings::load(args.config.as_deref())?.with_flags([
        ("m", s(&args.m)),
        ("k", s(&args.k)),
        ("w", s(&args.w)),
        ("n", s(&args.n)),
        ("min-size", s(&args.min_size)),
        ("max-size", s(&args.max_size)),
        ("out", p(&args.out)),
        ("labels", p(&args.labels)),
        ("seed", s(&args.seed)),
    ]);
    settings.check_keys(&[
        "m", "k", "w", "n", "min-size", "max-size", "out", "labels", "seed",
    ])?;
    let out = require(&settings, "synth", "out");
    let num_traits = settings.get_or("k", 5usize)?;
    let config = SynthConfig {
        num_items: settings.get_or("m", 30)?,
        num_traits,
        num_components: settings.get_or("w", 1)?,
        num_baskets: settings.get_or("n", 1000)?,
        min_size: settings.get_or("min-size", 2)?,
        max_size: settings.get_or("max-size", num_traits)?,
    };
    let seed = settings.get_or("seed", 0u64)?;
    let (dataset, labels) = generate_synthetic(&config, &mut stream(seed, Phase::Synth, 0, 0))?;
    let labels_path = settings
        .raw("labels")
        .map(PathBuf::from)
        .unwrap_or_else(|| with_suffix(&out, ".labels.txt"));
    dataset.write_baskets(&out)?;
    write_labels(&labels, &labels_path)?;
    print!("{}", dataset.summary());
    println!("wrote {} and {}", out.display(), labels_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
