use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rise::config::TrainConfig;
use rise::data::{self, Corpus, Split, SyntheticSpec, TargetQuantizer};
use rise::encoders::EncoderKind;
use rise::error::RiseError;
use rise::eval;
use rise::rise::{InstanceKind, Objective, RiseModel};
use rise::train::{self, Checkpoint};

/// Recursive input and state estimation for univariate time series with
/// missing data: synthetic data generation, training, evaluation, and
/// instance-by-encoder comparison grids.
#[derive(Parser)]
#[command(name = "rise", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus CSV from a key=value spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one instance/encoder combination and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// simple|zerofill|fwdfill|rits-i|gru-d
        #[arg(long)]
        instance: String,
        /// id|ffw|xfmr|bin|gru
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a data file and write a report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write an error breakdown by rounded time gap to this CSV.
        #[arg(long)]
        lags: Option<PathBuf>,
    },
    /// Train every listed instance x encoder combination and write a CSV.
    Grid {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated instance names.
        #[arg(long)]
        instances: String,
        /// Comma-separated encoder names.
        #[arg(long)]
        encoders: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &PathBuf) -> rise::Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn load_split_corpus(path: &PathBuf, tc: &TrainConfig) -> rise::Result<Corpus> {
    let mut corpus = data::load_csv(path)?;
    corpus.split(tc.split, tc.train_frac, tc.val_frac)?;
    Ok(corpus)
}

fn cmd_generate(spec: &PathBuf, out: &PathBuf) -> rise::Result<()> {
    let spec = SyntheticSpec::from_text(&read_text(spec)?)?;
    let corpus = data::generate_synthetic(&spec)?;
    data::write_csv(&corpus, out)?;
    println!("wrote {} series to {}", corpus.series.len(), out.display());
    Ok(())
}

fn cmd_train(
    data: &PathBuf,
    instance: &str,
    encoder: &str,
    config: &PathBuf,
    out: &PathBuf,
) -> rise::Result<()> {
    let tc = TrainConfig::from_text(&read_text(config)?)?;
    let instance = InstanceKind::parse(instance)?;
    let encoder = EncoderKind::parse(encoder)?;
    let corpus = load_split_corpus(data, &tc)?;
    let stats = corpus.train_stats()?;
    let xav = corpus.x_av_table()?;
    let quantizer = match tc.objective {
        Objective::Classification => Some(TargetQuantizer::fit(
            &corpus.observed_values(Split::Train),
            tc.n_classes,
        )?),
        Objective::Regression => None,
    };
    let mut best: Option<(f64, f64, train::Fitted, RiseModel)> = None;
    for &lambda in &tc.l2 {
        let mut model = RiseModel::new(tc.rise_config(instance, encoder), &stats, tc.seed)?;
        if tc.l2.len() > 1 {
            println!("# l2={lambda}");
        }
        let mut stdout = std::io::stdout();
        let fitted = train::fit(
            &mut model,
            &corpus,
            &xav,
            quantizer.as_ref(),
            &tc,
            lambda,
            Some(&mut stdout),
        )?;
        let better = best.as_ref().map_or(true, |(m, _, _, _)| fitted.best_mdape < *m);
        if better {
            best = Some((fitted.best_mdape, lambda, fitted, model));
        }
    }
    let (val_mdape, lambda, fitted, model) = best.expect("l2 list validated nonempty");
    let ckpt = Checkpoint::from_fit(&model, &fitted, quantizer.as_ref(), &xav, tc.min_prior);
    ckpt.save(out)?;
    println!(
        "saved {} (l2={lambda}, val_mdape={val_mdape:.4}, val_mape={:.4})",
        out.display(),
        fitted.best_mape
    );
    Ok(())
}

fn cmd_evaluate(
    data: &PathBuf,
    ckpt: &PathBuf,
    report: &PathBuf,
    lags: Option<&PathBuf>,
) -> rise::Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let mut corpus = data::load_csv(data)?;
    // every series in the file is scored
    for s in corpus.series.iter_mut() {
        s.split = Some(Split::Test);
    }
    let model = ckpt.model(false);
    let xav = ckpt.xav();
    let result = eval::evaluate_model(
        &model,
        ckpt.quantizer.as_ref(),
        &corpus,
        Split::Test,
        &xav,
        ckpt.min_prior,
    )?;
    let text = format!(
        "mdape,mape,n,zero_excluded\n{:.4},{:.4},{},{}\n",
        result.mdape, result.mape, result.n, result.n_zero_excluded
    );
    std::fs::write(report, &text)?;
    if let Some(path) = lags {
        let mut lag_text = String::from("lag,n,mdape,mape\n");
        for b in eval::lag_breakdown(&result) {
            lag_text.push_str(&format!("{},{},{:.4},{:.4}\n", b.lag, b.n, b.mdape, b.mape));
        }
        std::fs::write(path, &lag_text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_grid(
    data: &PathBuf,
    instances: &str,
    encoders: &str,
    config: &PathBuf,
    out: &PathBuf,
) -> rise::Result<()> {
    let tc = TrainConfig::from_text(&read_text(config)?)?;
    let instances: Vec<InstanceKind> = instances
        .split(',')
        .map(|s| InstanceKind::parse(s.trim()))
        .collect::<rise::Result<_>>()?;
    let encoders: Vec<EncoderKind> = encoders
        .split(',')
        .map(|s| EncoderKind::parse(s.trim()))
        .collect::<rise::Result<_>>()?;
    if instances.is_empty() || encoders.is_empty() {
        return Err(RiseError::Config("need at least one instance and one encoder".into()));
    }
    let corpus = load_split_corpus(data, &tc)?;
    let mut stderr = std::io::stderr();
    let rows = eval::run_grid(&corpus, &tc, &instances, &encoders, Some(&mut stderr))?;
    eval::write_grid_csv(&rows, out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> rise::Result<()> {
    match &cli.command {
        Command::Generate { spec, out } => cmd_generate(spec, out),
        Command::Train { data, instance, encoder, config, out } => {
            cmd_train(data, instance, encoder, config, out)
        }
        Command::Evaluate { data, ckpt, report, lags } => {
            cmd_evaluate(data, ckpt, report, lags.as_ref())
        }
        Command::Grid { data, instances, encoders, config, out } => {
            cmd_grid(data, instances, encoders, config, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are successes, not usage errors
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            match e {
                RiseError::Divergence { .. } => ExitCode::from(3),
                RiseError::Ingestion { .. } | RiseError::Csv(_) | RiseError::Io(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
