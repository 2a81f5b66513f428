use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use attnguide::analysis::{bias_report, collect, fix_accounting, Element, CORRECTED_THRESHOLD};
use attnguide::code::{parse_corpus, read_corpus, write_corpus};
use attnguide::harness::{
    eval_items, gen_corpus, run_experiment, selftest, sweep, CorpusParams, ExperimentSpec, HarnessError, SweepAxis,
};
use attnguide::model::{read_checkpoint, write_checkpoint, Task};
use attnguide::subtok::Vocab;

#[derive(Parser)]
#[command(name = "attnguide", version, about = "Syntax-guided attention training and attention-bias analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Cloze,
    Clone,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Lambda,
    Alpha0,
    Fraction,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic JSONL corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train baseline and guided models and analyse both.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        patterns: Option<String>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Run the bias analysis of a trained model over a corpus.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, default_value_t = 4)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one experiment per grid point of an axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in gradient and statistics checks.
    Selftest,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Cloze => Task::Cloze,
        TaskArg::Clone => Task::Clone,
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Validation)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(Failure::Validation)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save_model(path: &Path, model: &attnguide::model::GuidedModel) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    write(path, buf)
}

fn cmd_train(spec: ExperimentSpec, out: &Path) -> Result<(), Failure> {
    spec.validate()?;
    let run = run_experiment(&spec)?;
    fs::create_dir_all(out).context("creating output directory")?;
    write(&out.join("spec.json"), serde_json::to_string_pretty(&spec).context("spec")?)?;
    let mut summary = Vec::new();
    for f in &run.folds {
        let dir = out.join(format!("fold{}", f.fold));
        save_model(&dir.join("model.sglm"), &f.guided.model)?;
        save_model(&dir.join("baseline.sglm"), &f.baseline.model)?;
        write(&dir.join("vocab.txt"), f.vocab.to_text())?;
        write(&dir.join("train_log.csv"), f.guided.log.to_csv())?;
        write(&dir.join("baseline_log.csv"), f.baseline.log.to_csv())?;
        write(&dir.join("report.json"), f.guided.report.to_json())?;
        write(&dir.join("baseline_report.json"), f.baseline.report.to_json())?;
        for (name, csv) in f.guided.report.plot_csvs() {
            write(&dir.join("plots").join(name), csv)?;
        }
        summary.push(serde_json::json!({
            "fold": f.fold,
            "train_size": f.train_size,
            "eval_size": f.eval_size,
            "baseline_accuracy": f.baseline.accuracy,
            "guided_accuracy": f.guided.accuracy,
            "baseline_metrics": f.baseline.metrics,
            "guided_metrics": f.guided.metrics,
            "fixes": f.guided.report.fixes,
        }));
        println!(
            "fold {}: baseline accuracy {:.4}, guided accuracy {:.4}",
            f.fold, f.baseline.accuracy, f.guided.accuracy
        );
    }
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).context("summary")?)?;
    Ok(())
}

fn model_dir(dir: &Path) -> PathBuf {
    if dir.join("model.sglm").exists() {
        dir.to_path_buf()
    } else {
        dir.join("fold0")
    }
}

fn saved_task(model_dir: &Path) -> Option<Task> {
    [model_dir.join("spec.json"), model_dir.join("../spec.json")]
        .iter()
        .find_map(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<ExperimentSpec>(&t).ok())
        .map(|s| s.task)
}

fn cmd_analyze(
    model: &Path,
    corpus: &Path,
    out: &Path,
    task: Option<TaskArg>,
    probes: usize,
    seed: u64,
) -> Result<(), Failure> {
    let dir = model_dir(model);
    let open = |p: PathBuf| fs::File::open(&p).with_context(|| format!("opening {}", p.display()));
    let guided = read_checkpoint(BufReader::new(open(dir.join("model.sglm")).map_err(Failure::Validation)?))
        .context("reading model")?;
    let vocab_text = fs::read_to_string(dir.join("vocab.txt"))
        .context("reading vocab")
        .map_err(Failure::Validation)?;
    let vocab = Vocab::from_text(&vocab_text).context("parsing vocab")?;
    let records = read_corpus(BufReader::new(open(corpus.to_path_buf()).map_err(Failure::Validation)?))
        .context("reading corpus")
        .map_err(Failure::Validation)?;
    let units = parse_corpus(&records).context("parsing corpus").map_err(Failure::Validation)?;
    let task = task.map(task_of).or_else(|| saved_task(&dir)).unwrap_or(Task::Cloze);
    let items = eval_items(task, &units, &vocab, guided.config.max_len, probes.max(1), seed);
    let recs = collect(&guided, &items).context("analysing guided model")?;
    let mut report = bias_report(&recs, &Element::all(), CORRECTED_THRESHOLD);
    let baseline_path = dir.join("baseline.sglm");
    if baseline_path.exists() {
        let baseline = read_checkpoint(BufReader::new(open(baseline_path)?)).context("reading baseline")?;
        let base = collect(&baseline, &items).context("analysing baseline model")?;
        let c = |r: &[attnguide::analysis::AttentionRecord]| r.iter().map(|x| x.correct).collect::<Vec<_>>();
        report.fixes = Some(fix_accounting(&c(&base), &c(&recs), &vec![true; recs.len()]));
    }
    write(out, report.to_json())?;
    let plot_dir = out.parent().unwrap_or(Path::new("."));
    for (name, csv) in report.plot_csvs() {
        write(&plot_dir.join(name), csv)?;
    }
    println!(
        "{} instances, accuracy {}",
        report.num_instances,
        report.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::GenCorpus { out, num, seed } => {
            let recs = gen_corpus(&CorpusParams { num_snippets: num, seed });
            let mut buf = Vec::new();
            write_corpus(&mut buf, &recs).context("serializing corpus")?;
            write(&out, buf)?;
            println!("wrote {num} snippets to {}", out.display());
        }
        Cmd::Train {
            task,
            config,
            out,
            alpha0,
            lambda,
            patterns,
            train_fraction,
        } => {
            let mut spec = load_spec(&config)?;
            spec.task = task_of(task);
            if let Some(a) = alpha0 {
                spec.hyper.alpha0 = a;
            }
            if let Some(l) = lambda {
                spec.hyper.lambda = l;
            }
            if let Some(p) = patterns {
                spec.hyper.patterns = p;
            }
            if let Some(f) = train_fraction {
                spec.train_fraction = f;
            }
            cmd_train(spec, &out)?;
        }
        Cmd::Analyze {
            model,
            corpus,
            out,
            task,
            probes,
            seed,
        } => cmd_analyze(&model, &corpus, &out, task, probes, seed)?,
        Cmd::Sweep { axis, config, out } => {
            let spec = load_spec(&config)?;
            spec.validate()?;
            let axis = match axis {
                AxisArg::Lambda => SweepAxis::Lambda,
                AxisArg::Alpha0 => SweepAxis::Alpha0,
                AxisArg::Fraction => SweepAxis::Fraction,
            };
            let table = sweep(&spec, axis, None)?;
            write(&out.join(format!("sweep_{axis}.csv")), table.to_csv())?;
            write(
                &out.join(format!("sweep_{axis}.json")),
                serde_json::to_string_pretty(&table).context("sweep table")?,
            )?;
            print!("{}", table.to_csv());
        }
        Cmd::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(Failure::Runtime(anyhow::anyhow!("selftest failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
