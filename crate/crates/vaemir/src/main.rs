use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vaemir::dataset::{read_bags, write_bags};
use vaemir::error::{Error, Result};
use vaemir::eval::{build_splits, roc_auc, run_experiment, sweep_k, ExperimentConfig};
use vaemir::mir::Method;
use vaemir::regressor::RegressorTrainConfig;
use vaemir::synth::{generate, SynthConfig};
use vaemir::vae::{train_vae, VaeTrainConfig};
use vaemir::{Bag, VaeModel};

#[derive(Parser)]
#[command(name = "vaemir", version, about = "Bag-level yield prediction with VAE-based multiple instance regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic contaminated-bag dataset (JSONL + ground-truth sidecar)
    Generate(GenerateArgs),
    /// Train a VAE on all instances of a dataset and write the model JSON
    TrainVae(TrainVaeArgs),
    /// Score every instance with a trained VAE (CSV, plus ROC-AUC when flags exist)
    Score(ScoreArgs),
    /// Run the expanding-window evaluation for one or more methods
    Eval(EvalArgs),
    /// Sweep the VAEMIR k parameter and report per-year curves
    SweepK(SweepKArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Bags per year
    #[arg(long, default_value_t = 50)]
    bags_per_year: usize,
    /// Year range, inclusive, as start:end (e.g. 2008:2015)
    #[arg(long, default_value = "2008:2015")]
    years: String,
    /// Instances per bag
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Fraction of instances contaminated, in [0, 1)
    #[arg(long, default_value_t = 0.2)]
    contamination: f64,
    /// Crop fraction of a contaminated instance, in (0, 1]
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
    #[arg(long, default_value_t = 0.75)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    year_drift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path; the ground truth goes to <out>.truth.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainVaeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "64,32")]
    hidden: String,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict training to a year range start:end
    #[arg(long)]
    train_years: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of instance,mean,prime,cluster,vaemir
    #[arg(long)]
    methods: String,
    /// Prototype size for vaemir
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    first_test_year: i32,
    /// Number of repetitions; seeds default to 1..=repeats
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Explicit seed list, comma separated (overrides --repeats)
    #[arg(long)]
    seeds: Option<String>,
    /// Output prefix; writes <out>.csv and <out>.json
    #[arg(long)]
    out: PathBuf,
    /// Train the VAE on train + test instances (transductive reading)
    #[arg(long, default_value_t = false)]
    transductive: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 200)]
    vae_epochs: usize,
    #[arg(long, default_value_t = 300)]
    reg_epochs: usize,
    /// Epochs for instance-level fits (defaults to --reg-epochs)
    #[arg(long)]
    instance_epochs: Option<usize>,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 20)]
    prime_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepKArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated k values
    #[arg(long)]
    k_values: String,
    #[arg(long)]
    first_test_year: i32,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    vae_epochs: usize,
    #[arg(long, default_value_t = 300)]
    reg_epochs: usize,
}

fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("year range '{s}' is not start:end")))?;
    let start: i32 = a
        .parse()
        .map_err(|_| Error::Config(format!("bad year '{a}'")))?;
    let end: i32 = b
        .parse()
        .map_err(|_| Error::Config(format!("bad year '{b}'")))?;
    Ok((start, end))
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} '{p}'")))
        })
        .collect()
}

fn parse_seed_list(seeds: &Option<String>, repeats: usize) -> Result<Vec<u64>> {
    match seeds {
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed '{p}'")))
            })
            .collect(),
        None => {
            if repeats == 0 {
                return Err(Error::Config("repeats must be >= 1".into()));
            }
            Ok((1..=repeats as u64).collect())
        }
    }
}

/// Write a file through a temp sibling so failures never leave partial output.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let (year_start, year_end) = parse_year_range(&args.years)?;
    let cfg = SynthConfig {
        n_bags_per_year: args.bags_per_year,
        year_start,
        year_end,
        instances_per_bag: args.n,
        feature_dim: args.dim,
        contamination_rate: args.contamination,
        mixing_fraction: args.alpha,
        noise_sigma: args.noise_sigma,
        year_drift: args.year_drift,
        seed: args.seed,
    };
    let (bags, truth): (Vec<Bag>, _) = generate(&cfg)?;
    write_bags(&args.out, &bags)?;
    let truth_path = sidecar_path(&args.out);
    let mut truth_json = serde_json::to_string(&truth)?;
    truth_json.push('\n');
    write_atomic(&truth_path, &truth_json)?;
    println!(
        "wrote {} bags to {} (flag rate {:.4}), ground truth to {}",
        bags.len(),
        args.out.display(),
        truth.n_flagged as f64 / truth.n_instances as f64,
        truth_path.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".truth.json");
    out.with_file_name(name)
}

fn cmd_train_vae(args: &TrainVaeArgs) -> Result<()> {
    let cfg = VaeTrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        latent_dim: args.latent_dim,
        hidden_dims: parse_usize_list(&args.hidden, "hidden dim")?,
        learning_rate: args.lr,
        seed: args.seed,
    };
    cfg.validate()?;
    let mut bags: Vec<Bag> = read_bags(&args.data)?;
    if let Some(range) = &args.train_years {
        let (start, end) = parse_year_range(range)?;
        bags.retain(|b| (start..=end).contains(&b.year));
        if bags.is_empty() {
            return Err(Error::Data(format!("no bags in year range {range}")));
        }
    }
    let instances: Vec<Vec<f64>> = bags
        .iter()
        .flat_map(|b| b.instances.iter().cloned())
        .collect();
    let (model, trace) = train_vae(&instances, &cfg)?;
    let mut json = model.to_json()?;
    json.push('\n');
    write_atomic(&args.out, &json)?;
    println!(
        "trained on {} instances; final epoch loss {}; model written to {}",
        instances.len(),
        trace.last().unwrap(),
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let bags: Vec<Bag> = read_bags(&args.data)?;
    let model = VaeModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    if bags[0].feature_dim() != model.feature_dim() {
        return Err(Error::dimension(
            "model vs dataset feature dim",
            model.feature_dim(),
            bags[0].feature_dim(),
        ));
    }
    let has_flags = bags.iter().all(|b| b.anomaly_flags.is_some());
    let mut csv = String::from(if has_flags {
        "bag_id,instance_index,score,flag\n"
    } else {
        "bag_id,instance_index,score\n"
    });
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for bag in &bags {
        for (i, inst) in bag.instances.iter().enumerate() {
            let s = model.anomaly_score(inst)?;
            if has_flags {
                let f = bag.anomaly_flags.as_ref().unwrap()[i];
                csv.push_str(&format!("{},{},{},{}\n", bag.bag_id, i, s, f));
                scores.push(s);
                flags.push(f);
            } else {
                csv.push_str(&format!("{},{},{}\n", bag.bag_id, i, s));
            }
        }
    }
    write_atomic(&args.out, &csv)?;
    let total: usize = bags.iter().map(|b| b.n_instances()).sum();
    println!("scored {total} instances to {}", args.out.display());
    if has_flags {
        println!("roc_auc {}", roc_auc(&scores, &flags)?);
    }
    Ok(())
}

fn experiment_config(args: &EvalArgs) -> ExperimentConfig {
    ExperimentConfig {
        vae: VaeTrainConfig {
            epochs: args.vae_epochs,
            seed: args.seed,
            ..VaeTrainConfig::default()
        },
        regressor: RegressorTrainConfig {
            epochs: args.reg_epochs,
            seed: args.seed,
            ..RegressorTrainConfig::default()
        },
        instance_epochs: args.instance_epochs,
        prime_max_iters: args.prime_iters,
        n_clusters: args.clusters,
        k: args.k,
        transductive: args.transductive,
        threads: args.threads,
        ..Default::default()
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<_>>()?;
    if methods.contains(&Method::Vaemir) && args.k.is_none() {
        return Err(Error::Config("--methods vaemir requires --k".into()));
    }
    let seeds = parse_seed_list(&args.seeds, args.repeats)?;
    let bags: Vec<Bag> = read_bags(&args.data)?;
    let years: Vec<i32> = bags.iter().map(|b| b.year).collect();
    let plan = build_splits(&years, args.first_test_year)?;
    let cfg = experiment_config(args);
    let report = run_experiment(&bags, &methods, &plan, &seeds, &cfg)?;

    let csv_path = args.out.with_extension("csv");
    write_atomic(&csv_path, &report.to_csv())?;
    let mut summary = serde_json::to_string_pretty(&report.summaries())?;
    summary.push('\n');
    let json_path = args.out.with_extension("json");
    write_atomic(&json_path, &summary)?;

    for s in report.summaries() {
        println!(
            "{}: average rmse {:.4}, average r2 {:.4}",
            s.method, s.average_rmse, s.average_r2
        );
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_sweep_k(args: &SweepKArgs) -> Result<()> {
    let k_values = parse_usize_list(&args.k_values, "k")?;
    let seeds = parse_seed_list(&args.seeds, args.repeats)?;
    let bags: Vec<Bag> = read_bags(&args.data)?;
    let years: Vec<i32> = bags.iter().map(|b| b.year).collect();
    let plan = build_splits(&years, args.first_test_year)?;
    let cfg = ExperimentConfig {
        vae: VaeTrainConfig {
            epochs: args.vae_epochs,
            ..VaeTrainConfig::default()
        },
        regressor: RegressorTrainConfig {
            epochs: args.reg_epochs,
            ..RegressorTrainConfig::default()
        },
        ..Default::default()
    };
    let sweep = sweep_k(&bags, &plan, &k_values, &seeds, &cfg)?;
    write_atomic(&args.out, &sweep.to_csv())?;
    for (year, k) in sweep.best_k_per_year() {
        println!("best k for {year}: {k}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::TrainVae(a) => cmd_train_vae(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepK(a) => cmd_sweep_k(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, bad flags are usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
