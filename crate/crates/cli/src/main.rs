use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ood_baseline::abnormality::AbnormalityModule;
use ood_baseline::harness::{
    emit_report, obtain_model, prepare_data, run_experiment, run_ingest, train_abmod,
    ExperimentConfig, Overrides, ReportDocument, ReportFormat, Task,
};
use ood_baseline::nn::save_mlp;
use ood_baseline::scores::ScoreKind;
use ood_baseline::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "ood-baseline", version, about = "Softmax-baseline error and out-of-distribution detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier (and the abnormality module for abmod configs) and save checkpoints.
    Train(RunArgs),
    /// Success/error detection on the test set.
    ErrDetect(RunArgs),
    /// In-distribution test set against each configured OOD source.
    OodDetect(RunArgs),
    /// Softmax baseline against the abnormality module on the same OOD sources.
    Abmod(RunArgs),
    /// Evaluate externally produced scores or logits from a JSONL file.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). Relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `reports`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats to write.
    #[arg(long, value_delimiter = ',', default_values = ["json", "md", "csv"])]
    format: Vec<FormatArg>,
}

#[derive(Args)]
struct IngestArgs {
    /// JSONL file of score or logits records.
    file: PathBuf,
    /// Score applied to logits records.
    #[arg(long, value_enum, default_value = "max-prob")]
    score: ScoreArg,
    /// Row name in the report.
    #[arg(long, default_value = "External")]
    name: String,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["json", "md", "csv"])]
    format: Vec<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Md,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Md => ReportFormat::Markdown,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    MaxProb,
    KlFromUniform,
    NegEntropy,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::MaxProb => ScoreKind::MaxProb,
            ScoreArg::KlFromUniform => ScoreKind::KlFromUniform,
            ScoreArg::NegEntropy => ScoreKind::NegEntropy,
        }
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: EXIT_USAGE, error }
}

fn data(error: Error) -> Failure {
    let code = match error {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    };
    Failure { code, error }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn load(args: &RunArgs, task: Option<Task>) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let overrides = Overrides {
        task,
        seed: args.seed,
        output: args.out.as_deref().map(absolute),
    };
    let config = ExperimentConfig::load(&args.config, &overrides).map_err(usage)?;
    let out = match &config.output {
        Some(p) => config.resolve(p),
        None => absolute(Path::new("reports")),
    };
    Ok((config, out))
}

fn write_report(doc: &ReportDocument, out: &Path, formats: &[FormatArg]) -> Result<(), Failure> {
    let formats: Vec<ReportFormat> = formats.iter().map(|&f| f.into()).collect();
    for path in emit_report(doc, out, "report", &formats).map_err(data)? {
        eprintln!("wrote {}", path.display());
    }
    print!("{}", doc.to_markdown());
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| data(e.into()))?;
    std::fs::write(path, text + "\n").map_err(|e| data(Error::io(path, e)))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn train(args: &RunArgs) -> Result<(), Failure> {
    let (config, out) = load(args, None)?;
    let prepared = prepare_data(&config).map_err(data)?;
    std::fs::create_dir_all(&out).map_err(|e| data(Error::io(&out, e)))?;
    let model_path = out.join("model.json");
    if config.task == Task::Abmod {
        let run = train_abmod(&config, &prepared).map_err(data)?;
        save_mlp(&run.model, &model_path).map_err(data)?;
        eprintln!("wrote {}", model_path.display());
        if let Some(log) = &run.training_log {
            write_json(&out.join("training.json"), log)?;
        }
        let module: &AbnormalityModule = &run.module;
        let module_path = out.join("abmod.json");
        module.save(&module_path).map_err(data)?;
        eprintln!("wrote {}", module_path.display());
        write_json(&out.join("scorer.json"), &run.scorer_log)?;
    } else {
        let (model, log) = obtain_model(&config, &prepared).map_err(data)?;
        save_mlp(&model, &model_path).map_err(data)?;
        eprintln!("wrote {}", model_path.display());
        if let Some(log) = &log {
            write_json(&out.join("training.json"), log)?;
        }
    }
    Ok(())
}

fn experiment(args: &RunArgs, task: Task) -> Result<(), Failure> {
    let (config, out) = load(args, Some(task))?;
    let doc = run_experiment(&config).map_err(data)?;
    write_report(&doc, &out, &args.format)
}

fn ingest(args: &IngestArgs) -> Result<(), Failure> {
    let doc = run_ingest(&args.file, args.score.into(), &args.name).map_err(data)?;
    write_report(&doc, &absolute(&args.out), &args.format)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::ErrDetect(a) => experiment(a, Task::ErrorDetection),
        Command::OodDetect(a) => experiment(a, Task::OodDetection),
        Command::Abmod(a) => experiment(a, Task::Abmod),
        Command::Ingest(a) => ingest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
