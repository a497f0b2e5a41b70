use std::fmt::Write as _;
use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use constrained_attention::corpus::{AlignmentSet, AttentionMatrix, Corpus, DataError};
use constrained_attention::fertility::{
    assign_fertilities, build_guided_table, FertilityError, FertilityStrategy, FertilityTable,
};
use constrained_attention::io::{
    parse_score_lines, read_input, read_vector_arg, write_session, IoError, ProjectOutput,
};
use constrained_attention::metrics::{
    coverage_penalty, drop_score, rep_score, MetricsError, RepParams, DEFAULT_COVERAGE_EPS,
};
use constrained_attention::oracles::{
    certificate_suite, forward_suite_with, gradient_suite_with, oracle_forward, Differentiable,
    OracleError, OracleReport, SuiteConfig,
};
use constrained_attention::session::{run_session, SessionError};
use constrained_attention::{
    BoundVector, InputGrads, Projection, ScoreVector, Transform, TransformError,
};

/// Sparse and constrained attention transformations.
#[derive(Debug, Parser)]
#[command(name = "cattn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project one score vector and print the attention and certificate.
    Project(ProjectArgs),
    /// Run a fertility-bounded session over JSON-lines score vectors.
    Session(SessionArgs),
    /// Build fertility tables.
    #[command(subcommand)]
    Fertility(FertilityCommand),
    /// Coverage metrics, printed with two decimals.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Check forward passes against brute-force oracles and backward passes
    /// against finite differences.
    Gradcheck(GradcheckArgs),
    /// Solve one projection by exhaustive enumeration (J <= 12).
    Oracle(ProjectArgs),
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    transform: Transform,
    /// File, `-` for stdin, or the numbers themselves.
    #[arg(long)]
    scores: String,
    /// Upper bounds, same forms as --scores; `inf` for unbounded.
    #[arg(long)]
    bounds: Option<String>,
}

#[derive(Debug, Args)]
struct SessionArgs {
    /// JSON-lines file (or `-`), one score vector of length J+1 per step.
    #[arg(long)]
    scores: String,
    /// `constant:F` or `table:FILE`.
    #[arg(long)]
    fertility: String,
    /// Source sentence tokens, needed for `table:` fertilities.
    #[arg(long)]
    source: Option<String>,
    /// Fertility for tokens missing from the table.
    #[arg(long, default_value_t = 1.0)]
    unk_fertility: f64,
    #[arg(long)]
    transform: Transform,
    /// Exhaustion coefficient c (0 when omitted).
    #[arg(long, default_value_t = 0.0)]
    exhaustion: f64,
}

#[derive(Debug, Subcommand)]
enum FertilityCommand {
    /// Maximum aligned count per source word type.
    Guided {
        #[arg(long)]
        src: String,
        #[arg(long)]
        align: String,
        #[arg(long, default_value_t = 0.0)]
        add: f64,
        /// Output file; stdout when omitted.
        #[arg(short = 'o', long)]
        output: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum MetricsCommand {
    Rep {
        #[arg(long)]
        hyp: String,
        #[arg(long = "ref")]
        reference: String,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        l1: f64,
        #[arg(long, default_value_t = 2.0)]
        l2: f64,
    },
    Drop {
        #[arg(long)]
        src: String,
        #[arg(long)]
        ref_align: String,
        #[arg(long)]
        hyp_align: String,
    },
    Covpen {
        /// JSON array of attention rows.
        #[arg(long)]
        att: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = DEFAULT_COVERAGE_EPS)]
        eps: f64,
    },
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    transform: Transform,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    jmax: usize,
    /// Shift the first score before the forward pass (negative control).
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Check(String),
    Usage(String),
    Infeasible(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m)
            | Failure::Usage(m)
            | Failure::Infeasible(m)
            | Failure::Mismatch(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<TransformError> for Failure {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::Infeasible { .. } => Failure::Infeasible(e.to_string()),
            TransformError::LengthMismatch { .. } => Failure::Mismatch(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Transform(t) => t.into(),
            SessionError::LengthMismatch { .. } => Failure::Mismatch(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<FertilityError> for Failure {
    fn from(e: FertilityError) -> Self {
        match e {
            FertilityError::SentenceCountMismatch { .. }
            | FertilityError::LengthMismatch { .. } => Failure::Mismatch(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Mismatch(e.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Transform(t) => t.into(),
            OracleError::TooLarge(_) => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Project(args) => cmd_project(&args, false),
        Command::Oracle(args) => cmd_project(&args, true),
        Command::Session(args) => cmd_session(&args),
        Command::Fertility(cmd) => cmd_fertility(&cmd),
        Command::Metrics(cmd) => cmd_metrics(&cmd),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn cmd_project(args: &ProjectArgs, brute_force: bool) -> Result<String, Failure> {
    let z = ScoreVector::new(read_vector_arg(&args.scores)?)?;
    let u = match &args.bounds {
        Some(b) => BoundVector::new(read_vector_arg(b)?)?,
        None if args.transform.is_constrained() => {
            return Err(Failure::Usage(format!(
                "--bounds is required for {}\n\nUsage: cattn project --transform {} --scores <SCORES> --bounds <BOUNDS>",
                args.transform, args.transform
            )))
        }
        None => BoundVector::unbounded(z.len()),
    };
    if u.len() != z.len() {
        return Err(TransformError::LengthMismatch {
            scores: z.len(),
            bounds: u.len(),
        }
        .into());
    }

    let out = if brute_force {
        ProjectOutput {
            transform: args.transform,
            attention: oracle_forward(args.transform, &z, &u)?.into_vec(),
            certificate: None,
        }
    } else {
        let bounds = args.transform.is_constrained().then_some(&u);
        let p = args.transform.forward(&z, bounds)?;
        ProjectOutput {
            transform: args.transform,
            attention: p.weights.into_vec(),
            certificate: p.certificate,
        }
    };
    Ok(out.to_json() + "\n")
}

fn cmd_session(args: &SessionArgs) -> Result<String, Failure> {
    let scores = parse_score_lines(&read_input(&args.scores)?)?;
    let width = scores.first().map_or(0, Vec::len);
    if let Some((t, row)) = scores.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Failure::Mismatch(format!(
            "step {}: {} scores, the first step has {width}",
            t + 1,
            row.len()
        )));
    }

    let fertility = match args.fertility.split_once(':') {
        Some(("constant", value)) => {
            let value: f64 = value
                .parse()
                .map_err(|_| Failure::Usage(format!("bad constant fertility '{value}'")))?;
            let n = match &args.source {
                Some(src) => source_tokens(src)?.len(),
                None if width > 0 => width - 1,
                None => 0,
            };
            let tokens = vec![""; n];
            assign_fertilities(FertilityStrategy::Constant(value), &tokens, None)?
        }
        Some(("table", path)) => {
            let src = args
                .source
                .as_ref()
                .ok_or_else(|| Failure::Usage("table fertilities need --source".into()))?;
            let tokens = source_tokens(src)?;
            let table = FertilityTable::parse_tsv(&read_input(path)?, args.unk_fertility, 0.0)?;
            assign_fertilities(FertilityStrategy::Predicted, &tokens, Some(&table))?
        }
        _ => {
            return Err(Failure::Usage(format!(
                "--fertility must be constant:F or table:FILE, got '{}'",
                args.fertility
            )))
        }
    };
    if !scores.is_empty() && fertility.len() != width {
        return Err(Failure::Mismatch(format!(
            "{} source positions plus sink, but score vectors have {width} entries",
            fertility.len() - 1
        )));
    }
    if !args.transform.is_constrained() {
        eprintln!("warning: {} ignores fertility bounds", args.transform);
    }

    let run = run_session(fertility, &scores, args.transform, args.exhaustion)?;
    Ok(write_session(&run))
}

fn source_tokens(arg: &str) -> Result<Vec<String>, Failure> {
    let text = if arg == "-" || std::path::Path::new(arg).is_file() {
        read_input(arg)?
    } else {
        arg.to_owned()
    };
    let corpus = Corpus::parse(&text);
    match corpus.sentences() {
        [] => Ok(Vec::new()),
        [one] => Ok(one.clone()),
        many => Err(Failure::Usage(format!(
            "--source must hold one sentence, found {}",
            many.len()
        ))),
    }
}

fn cmd_fertility(cmd: &FertilityCommand) -> Result<String, Failure> {
    let FertilityCommand::Guided {
        src,
        align,
        add,
        output,
    } = cmd;
    let source = Corpus::parse(&read_input(src)?);
    let alignments = AlignmentSet::parse(&read_input(align)?)?;
    let table = build_guided_table(&source, &alignments, *add)?;
    let tsv = table.to_tsv();
    match output {
        Some(path) => {
            fs::write(path, tsv).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            Ok(String::new())
        }
        None => Ok(tsv),
    }
}

fn cmd_metrics(cmd: &MetricsCommand) -> Result<String, Failure> {
    let score = match cmd {
        MetricsCommand::Rep {
            hyp,
            reference,
            n,
            l1,
            l2,
        } => {
            let params = RepParams {
                n: *n,
                ngram_weight: *l1,
                repeat_weight: *l2,
            };
            rep_score(
                &Corpus::parse(&read_input(hyp)?),
                &Corpus::parse(&read_input(reference)?),
                &params,
            )?
        }
        MetricsCommand::Drop {
            src,
            ref_align,
            hyp_align,
        } => drop_score(
            &Corpus::parse(&read_input(src)?),
            &AlignmentSet::parse(&read_input(ref_align)?)?,
            &AlignmentSet::parse(&read_input(hyp_align)?)?,
        )?,
        MetricsCommand::Covpen { att, beta, eps } => {
            coverage_penalty(&AttentionMatrix::from_json(&read_input(att)?)?, *beta, *eps)?
        }
    };
    Ok(format_score(score))
}

fn format_score(score: f64) -> String {
    let s = format!("{score:.2}");
    if s == "-0.00" {
        "0.00\n".to_owned()
    } else {
        s + "\n"
    }
}

/// Runs the wrapped transform on scores with the first entry shifted, so
/// its output disagrees with the oracle.
struct Faulty {
    inner: Transform,
    delta: f64,
}

impl Differentiable for Faulty {
    fn forward(&self, z: &ScoreVector, u: &BoundVector) -> Result<Projection, TransformError> {
        let mut shifted = z.to_vec();
        shifted[0] += self.delta;
        Differentiable::forward(&self.inner, &ScoreVector::new(shifted)?, u)
    }

    fn backward(&self, p: &Projection, d_alpha: &[f64]) -> Result<InputGrads, TransformError> {
        Differentiable::backward(&self.inner, p, d_alpha)
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<String, Failure> {
    let cfg = SuiteConfig {
        trials: args.trials,
        jmax: args.jmax.max(1),
        seed: args.seed,
    };
    let (forward, gradient) = match args.inject_fault {
        Some(delta) => {
            let imp = Faulty {
                inner: args.transform,
                delta,
            };
            (
                forward_suite_with(args.transform, &imp, &cfg)?,
                gradient_suite_with(args.transform, &imp, &cfg),
            )
        }
        None => (
            forward_suite_with(args.transform, &args.transform, &cfg)?,
            gradient_suite_with(args.transform, &args.transform, &cfg),
        ),
    };
    let violations = certificate_suite(args.transform, &cfg)?;

    let mut out = String::new();
    writeln!(out, "transform: {}", args.transform).unwrap();
    writeln!(out, "seed: {}", args.seed).unwrap();
    writeln!(out, "trials: {}", args.trials).unwrap();
    writeln!(out, "jmax: {}", cfg.jmax).unwrap();
    let mut ok = report_line(&mut out, "forward", &forward);
    match &gradient {
        Ok(r) => ok &= report_line(&mut out, "gradient", r),
        Err(e) => {
            writeln!(out, "gradient: ERROR {e}").unwrap();
            ok = false;
        }
    }
    writeln!(
        out,
        "certificates: violations={} {}",
        violations.len(),
        verdict(violations.is_empty())
    )
    .unwrap();
    ok &= violations.is_empty();
    writeln!(out, "result: {}", verdict(ok)).unwrap();

    if ok {
        return Ok(out);
    }
    for failure in forward
        .failures
        .iter()
        .chain(gradient.iter().flat_map(|r| &r.failures))
        .take(1)
    {
        writeln!(out, "failing instance: {}", failure.input).unwrap();
    }
    for v in violations.iter().take(1) {
        writeln!(out, "certificate violation: {v}").unwrap();
    }
    print!("{out}");
    Err(Failure::Check("gradcheck failed".into()))
}

fn report_line(out: &mut String, name: &str, r: &OracleReport) -> bool {
    writeln!(
        out,
        "{name}: instances={} max_abs_error={:e} tolerance={:e} {}",
        r.instances,
        r.max_abs_error,
        r.tolerance,
        verdict(r.passed())
    )
    .unwrap();
    r.passed()
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
