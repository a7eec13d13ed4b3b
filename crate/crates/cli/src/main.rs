//! `fimse` — command-line entry point wiring the library together.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 I/O or transport
//! error. Logging level comes from `FIMSE_LOG` (error|warn|info|debug);
//! everything else is flags. A run manifest is written alongside every
//! file artifact.

mod manifest;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fimse_core::bench::{make_tasks, InfillTask, Level, TaskOptions};
use fimse_core::formats::FormatMode;
use fimse_core::heal::{build_trie, demo_case, heal_generate, HealError, PlanScorer};
use fimse_core::infer::{
    evaluate_sampled, EvalReport, Generator, GeneratorConfig, HttpGenerator, MixGenerator,
    OracleGenerator, TruncatingOracleGenerator,
};
use fimse_core::labdemo::{train, CollisionDataset, LabError, SoftmaxModel};
use fimse_core::pipeline::{
    read_documents, transform_corpus, write_samples, DocFilter, ExtensionAllowlist, PipelineConfig,
    PipelineError,
};
use fimse_core::text_split::Document;
use fimse_core::tok::{load_vocabulary, Scheme, TokError, TokenizerHandle};

#[derive(Debug)]
enum CliError {
    Validation(String),
    Io(String),
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) | CliError::Transport(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Transport(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TokError> for CliError {
    fn from(e: TokError) -> Self {
        match e {
            TokError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<fimse_core::infer::InferError> for CliError {
    fn from(e: fimse_core::infer::InferError) -> Self {
        use fimse_core::infer::{GeneratorError, InferError};
        match e {
            InferError::Generator(g) => match g {
                GeneratorError::Transport(m) => CliError::Transport(m),
                GeneratorError::Endpoint { status, body } => {
                    CliError::Transport(format!("endpoint returned {status}: {body}"))
                }
                GeneratorError::BadResponse(m) => CliError::Transport(m),
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fimse",
    version,
    about = "Infilling training-data toolkit",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transform a document corpus into training samples
    Transform(TransformArgs),
    /// Generate infilling benchmark tasks from source documents
    BenchBuild(BenchBuildArgs),
    /// Run a generator over benchmark tasks and score it
    Evaluate(EvaluateArgs),
    /// Trace the bundled token-healing scenarios
    HealDemo(HealDemoArgs),
    /// Train the conflicting-label toy model and dump its trajectory
    LabelDemo(LabelDemoArgs),
    /// Validate a vocabulary file and print a summary
    VocabCheck(VocabCheckArgs),
}

#[derive(Debug, Args, Serialize)]
struct TransformArgs {
    /// Input documents, one JSON record {"id", "text"} per line
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output path for the sample records
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Vocabulary file
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
    /// Probability of applying an infilling transform per document
    #[arg(long = "fim-rate", value_name = "F")]
    fim_rate: f64,
    /// Transform formats, comma separated (e.g. FIMSE_PSM,FIM_PSM)
    #[arg(long, value_name = "M[,M...]", value_delimiter = ',', required = true)]
    mode: Vec<String>,
    /// Relative weights matching --mode (defaults to equal)
    #[arg(long = "mode-weights", value_name = "W[,W...]", value_delimiter = ',')]
    mode_weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples longer than this are dropped
    #[arg(long = "max-tokens", value_name = "N", default_value_t = 4096)]
    max_tokens: usize,
    /// Also mask the loss on the constraint-line tokens
    #[arg(long = "mask-lf-loss")]
    mask_lf_loss: bool,
    /// Keep only documents whose id ends in one of these extensions
    #[arg(
        long = "ext-allowlist",
        value_name = "EXT[,EXT...]",
        value_delimiter = ','
    )]
    ext_allowlist: Option<Vec<String>>,
    /// Worker threads (defaults to available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct BenchBuildArgs {
    /// Source documents, one JSON record {"id", "text"} per line
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// single_line | multi_line | random_span
    #[arg(long, value_name = "L")]
    level: String,
    /// Tasks to draw per source document
    #[arg(long, value_name = "N")]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Let blank-only lines be single-line targets
    #[arg(long = "include-blank-lines")]
    include_blank_lines: bool,
    /// Longest multi-line span, in lines
    #[arg(long = "max-span-lines", value_name = "N", default_value_t = 8)]
    max_span_lines: usize,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Task records produced by bench-build
    #[arg(long, value_name = "PATH")]
    tasks: PathBuf,
    /// Prompt format for the evaluation
    #[arg(long, value_name = "M")]
    mode: String,
    /// oracle | truncating | mix:P | http:URL
    #[arg(long, value_name = "G")]
    generator: String,
    /// Vocabulary file used to assemble prompts
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long = "max-new-tokens", value_name = "N", default_value_t = 256)]
    max_new_tokens: usize,
    /// Generations per task; above 1 an unbiased pass@1 estimate is reported
    #[arg(long = "samples-per-task", value_name = "K", default_value_t = 1)]
    samples_per_task: u32,
    /// Width of the constraint-length buckets
    #[arg(long = "bucket-width", value_name = "W", default_value_t = 8)]
    bucket_width: usize,
    /// Regenerations allowed after a failed post check
    #[arg(long, default_value_t = 0)]
    retries: u32,
    /// Request timeout toward an HTTP generator, in seconds
    #[arg(long = "timeout-secs", value_name = "S", default_value_t = 60)]
    timeout_secs: u64,
    /// Transport-level retries toward an HTTP generator
    #[arg(long = "transport-retries", value_name = "N", default_value_t = 0)]
    transport_retries: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Worker threads (defaults to available cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct HealDemoArgs {
    /// Vocabulary file holding the scenario tokens
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
    /// sort | delim
    #[arg(long, value_name = "CASE")]
    case: String,
    /// Tokens to roll back before constrained re-decoding
    #[arg(long, value_name = "N", default_value_t = 1)]
    rollback: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct LabelDemoArgs {
    /// Number of classes
    #[arg(long)]
    n: usize,
    /// Number of conflicting labels
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Output path for the trajectory table (CSV: step,p_1..p_n,loss)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct VocabCheckArgs {
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    // die quietly when a downstream pipe closes (e.g. `fimse ... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FIMSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            // clap renders the synopsis with the error
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transform(args) => run_transform(args),
        Command::BenchBuild(args) => run_bench_build(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::HealDemo(args) => run_heal_demo(args),
        Command::LabelDemo(args) => run_label_demo(args),
        Command::VocabCheck(args) => run_vocab_check(args),
    }
}

fn open_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_tokenizer(path: &Path) -> Result<TokenizerHandle, CliError> {
    let vocab = load_vocabulary(path).map_err(|e| match e {
        TokError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    Ok(TokenizerHandle::new(vocab, Scheme::ReferenceSubword))
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let n = workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if n == 0 {
        return Err(CliError::Validation(
            "--workers must be at least 1".to_string(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn parse_mode(tag: &str) -> Result<FormatMode, CliError> {
    tag.parse::<FormatMode>()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn run_transform(args: TransformArgs) -> Result<(), CliError> {
    let modes = args
        .mode
        .iter()
        .map(|m| parse_mode(m))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = match &args.mode_weights {
        Some(w) if w.len() != modes.len() => {
            return Err(CliError::Validation(format!(
                "--mode-weights lists {} weights for {} modes",
                w.len(),
                modes.len()
            )))
        }
        Some(w) => w.clone(),
        None => vec![1.0; modes.len()],
    };
    let cfg = PipelineConfig {
        fim_rate: args.fim_rate,
        mode_weights: modes.into_iter().zip(weights).collect(),
        seed: args.seed,
        max_sample_tokens: args.max_tokens,
        mask_lf_loss: args.mask_lf_loss,
    };
    cfg.validate()?;
    let tokenizer = load_tokenizer(&args.vocab)?;
    let input = open_file(&args.input)?;
    let allow = args
        .ext_allowlist
        .as_ref()
        .map(|exts| ExtensionAllowlist::new(exts.iter()));
    let predicate = allow.as_ref().map(|a| {
        let f = move |d: &Document| a.allows(d);
        Box::new(f) as Box<dyn Fn(&Document) -> bool + Sync>
    });
    let pool = worker_pool(args.workers)?;
    let (samples, report) = pool.install(|| {
        transform_corpus(
            read_documents(BufReader::new(input)),
            &cfg,
            &tokenizer,
            predicate.as_deref().map(|f| f as DocFilter<'_>),
        )
    })?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    write_samples(&mut out, &samples)?;
    out.flush()?;
    manifest::write_manifest(
        &args.out,
        "transform",
        &args,
        &[args.input.as_path(), args.vocab.as_path()],
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn run_bench_build(args: BenchBuildArgs) -> Result<(), CliError> {
    let level: Level = args
        .level
        .parse()
        .map_err(|e: fimse_core::bench::BenchError| CliError::Validation(e.to_string()))?;
    if args.count == 0 {
        return Err(CliError::Validation(
            "--count must be at least 1".to_string(),
        ));
    }
    let opts = TaskOptions {
        include_blank_lines: args.include_blank_lines,
        max_span_lines: args.max_span_lines,
    };
    let input = open_file(&args.input)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    let mut sources = 0u64;
    let mut tasks_out = 0u64;
    for record in read_documents(BufReader::new(input)) {
        match record? {
            fimse_core::pipeline::DocRecord::Doc(doc) => {
                sources += 1;
                let mut rng = fimse_core::pipeline::per_doc_rng(args.seed, &doc.id);
                for task in make_tasks(&doc, level, &mut rng, args.count, &opts) {
                    serde_json::to_writer(&mut out, &task)
                        .map_err(|e| CliError::Io(e.to_string()))?;
                    out.write_all(b"\n")?;
                    tasks_out += 1;
                }
            }
            fimse_core::pipeline::DocRecord::Malformed { line_no, error } => {
                return Err(CliError::Validation(format!(
                    "malformed source record at line {line_no}: {error}"
                )))
            }
        }
    }
    out.flush()?;
    manifest::write_manifest(&args.out, "bench-build", &args, &[args.input.as_path()])?;
    println!("{{\"sources\": {sources}, \"tasks\": {tasks_out}}}");
    Ok(())
}

fn read_tasks(path: &Path) -> Result<Vec<InfillTask>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut tasks = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: InfillTask = serde_json::from_str(line).map_err(|e| {
            CliError::Validation(format!("malformed task record at line {}: {e}", i + 1))
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}

fn make_generator(
    spec: &str,
    seed: u64,
    args: &EvaluateArgs,
) -> Result<Box<dyn Generator>, CliError> {
    if spec == "oracle" {
        return Ok(Box::new(OracleGenerator));
    }
    if spec == "truncating" {
        return Ok(Box::new(TruncatingOracleGenerator));
    }
    if let Some(p) = spec.strip_prefix("mix:") {
        let p: f64 = p
            .parse()
            .map_err(|_| CliError::Validation(format!("bad mix probability {p:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Validation(format!(
                "mix probability must lie in [0, 1], got {p}"
            )));
        }
        return Ok(Box::new(MixGenerator::new(p, seed)));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        let gen = HttpGenerator::with_timeout(
            url,
            Duration::from_secs(args.timeout_secs),
            args.transport_retries,
        )
        .map_err(|e| CliError::Transport(e.to_string()))?;
        return Ok(Box::new(gen));
    }
    Err(CliError::Validation(format!(
        "unknown generator {spec:?} (expected oracle|truncating|mix:P|http:URL)"
    )))
}

fn print_report(report: &EvalReport, bucket_width: usize) {
    println!("generations: {}", report.total);
    println!("pcp_rate: {:.4}", report.pcp_rate);
    println!("exact_match_rate: {:.4}", report.exact_match_rate);
    if let Some(p1) = report.pass_at_1 {
        println!("pass@1: {p1:.4}");
    }
    println!("verdicts:");
    for (v, n) in &report.verdicts {
        println!("  {v}: {n}");
    }
    println!("constraint-length buckets (width {bucket_width}):");
    println!(
        "  {:>12} {:>8} {:>8} {:>8}",
        "lf_chars", "count", "pcp", "exact"
    );
    for (k, b) in &report.buckets {
        let lo = *k as usize * bucket_width;
        let hi = lo + bucket_width;
        println!(
            "  {:>12} {:>8} {:>8.3} {:>8.3}",
            format!("[{lo},{hi})"),
            b.count,
            b.pcp_rate,
            b.exact_match_rate
        );
    }
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mode = parse_mode(&args.mode)?;
    let tokenizer = load_tokenizer(&args.vocab)?;
    let tasks = read_tasks(&args.tasks)?;
    let generator = make_generator(&args.generator, args.seed, &args)?;
    let mut cfg = GeneratorConfig::for_tokenizer(&tokenizer);
    cfg.max_new_tokens = args.max_new_tokens;
    cfg.temperature = args.temperature;
    cfg.retries = args.retries;
    let pool = worker_pool(args.workers)?;
    let report = pool.install(|| {
        evaluate_sampled(
            &tasks,
            mode,
            generator.as_ref(),
            &cfg,
            &tokenizer,
            args.bucket_width,
            args.samples_per_task,
        )
    })?;
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&args.out, body + "\n")?;
    manifest::write_manifest(
        &args.out,
        "evaluate",
        &args,
        &[args.tasks.as_path(), args.vocab.as_path()],
    )?;
    print_report(&report, args.bucket_width);
    Ok(())
}

fn run_heal_demo(args: HealDemoArgs) -> Result<(), CliError> {
    let tokenizer = load_tokenizer(&args.vocab)?;
    let case = demo_case(&args.case).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown case {:?} (expected sort|delim)",
            args.case
        ))
    })?;
    if args.rollback == 0 {
        return Err(CliError::Validation(
            "--rollback must be at least 1".to_string(),
        ));
    }
    let trie = build_trie(tokenizer.vocab());
    let cfg = GeneratorConfig::for_tokenizer(&tokenizer);
    let prompt = tokenizer.encode(case.prompt_text)?;
    let scorer = PlanScorer::from_strings(tokenizer.vocab(), case.plan, cfg.stop_on)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let show = |ids: &[fimse_core::tok::TokenId]| -> Vec<String> {
        ids.iter()
            .map(|&id| format!("{:?}", tokenizer.vocab().token_str(id).unwrap_or("<?>")))
            .collect()
    };
    println!("case: {}", case.name);
    println!("prompt: {:?}", case.prompt_text);
    println!("prompt tokens: [{}]", show(&prompt).join(", "));
    let keep = prompt.len().saturating_sub(args.rollback);
    println!(
        "rollback {}: [{}] (tail {:?})",
        args.rollback,
        show(&prompt[keep..]).join(", "),
        tokenizer.decode(&prompt[keep..])?
    );
    match heal_generate(&prompt, args.rollback, &scorer, &trie, &tokenizer, &cfg) {
        Ok(healed) => {
            let text = format!(
                "{}{}",
                tokenizer.decode(&prompt[..keep])?,
                tokenizer.decode(&healed)?
            );
            println!("healed tokens: [{}]", show(&healed).join(", "));
            println!("final text: {text:?}");
            println!("label:      {:?}", case.label);
            let verdict = if text == case.label {
                "healed"
            } else {
                "diverged"
            };
            println!("verdict: {verdict}");
        }
        Err(HealError::DeadEnd { tail }) => {
            println!("verdict: dead_end (no admissible token for tail {tail:?})");
        }
        Err(e) => return Err(CliError::Validation(e.to_string())),
    }
    Ok(())
}

fn run_label_demo(args: LabelDemoArgs) -> Result<(), CliError> {
    let ds =
        CollisionDataset::new(args.n, args.m).map_err(|e| CliError::Validation(e.to_string()))?;
    let model = SoftmaxModel::new(args.n, args.steps).with_learning_rate(args.lr);
    let trajectory = match train(&ds, &model) {
        Ok(t) => t,
        Err(LabError::Diverged { window, .. }) => {
            return Err(CliError::Validation(format!(
                "training diverged (loss rose for {window} consecutive steps); lower --lr"
            )))
        }
        Err(e) => return Err(CliError::Validation(e.to_string())),
    };
    let mut out = BufWriter::new(File::create(&args.out)?);
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((1..=args.n).map(|i| format!("p_{i}")))
        .chain(std::iter::once("loss".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for p in &trajectory {
        let row: Vec<String> = std::iter::once(p.step.to_string())
            .chain(p.probs.iter().map(|v| format!("{v}")))
            .chain(std::iter::once(format!("{}", p.loss)))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    manifest::write_manifest(&args.out, "label-demo", &args, &[])?;
    let last = trajectory.last().expect("trajectory is never empty");
    println!(
        "final step {}: loss {:.6}, conflicting-class probabilities {:?}",
        last.step,
        last.loss,
        &last.probs[..args.m]
    );
    Ok(())
}

fn run_vocab_check(args: VocabCheckArgs) -> Result<(), CliError> {
    let vocab = load_vocabulary(&args.vocab)?;
    println!("tokens: {}", vocab.len());
    println!("merges: {}", vocab.merges().len());
    println!("special:");
    for (s, id) in vocab.specials() {
        println!("  {} -> {} ({})", s.name(), id, s.marker());
    }
    println!("ok");
    Ok(())
}
