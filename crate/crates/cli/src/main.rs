//! `diffdp`: smoothed DTW alignment, smoothed Viterbi tagging, gradient
//! checks and path enumeration from the command line.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 input error, 3 resource cap.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffdp::dag_dp::dp_grad;
use diffdp::dtw::{dtw_grad, hard_dtw, squared_euclidean_costs};
use diffdp::gradcheck::{run_gradcheck, GradcheckConfig};
use diffdp::io::{format_float, format_matrix_csv, read_matrix_csv, read_text, write_text};
use diffdp::oracle::{enumerate_paths_capped, path_probabilities, DEFAULT_PATH_CAP};
use diffdp::viterbi::{state_marginals, viterbi_grad};
use diffdp::{CostMatrix, Dag, Error, Matrix, PotentialTensor, RegKind, Regularizer};

#[derive(Parser, Debug)]
#[command(name = "diffdp", version, about = "Differentiable dynamic programming tools")]
struct Cli {
    #[command(flatten)]
    shared: Shared,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Regularizer of the smoothed max.
    #[arg(long, global = true, default_value = "entropy")]
    reg: RegKind,

    /// Regularization strength, must be positive.
    #[arg(long, global = true, default_value_t = 1.0)]
    gamma: f64,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed of the random instances.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Soft DTW alignment between two time series or from a cost matrix.
    Align(AlignArgs),
    /// Smoothed Viterbi state marginals from a potential tensor.
    Tag(TagArgs),
    /// Finite-difference and brute-force checks on random instances.
    Gradcheck(GradcheckArgs),
    /// Enumerate the paths of a small DAG with their probabilities.
    Paths(PathsArgs),
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// First series, one observation per row.
    #[arg(long, requires = "b", conflicts_with = "cost")]
    a: Option<PathBuf>,

    /// Second series, same number of columns as the first.
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,

    /// Precomputed cost matrix.
    #[arg(long, required_unless_present = "a")]
    cost: Option<PathBuf>,

    /// Skip one header line in every CSV input.
    #[arg(long)]
    header: bool,

    /// Also compute the unregularized alignment.
    #[arg(long)]
    hard: bool,

    /// Where to write the hard alignment; standard output when absent.
    #[arg(long, requires = "hard")]
    hard_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TagArgs {
    /// Potential tensor JSON with fields `T`, `S` and `theta`.
    potentials: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Instance sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    sizes: Vec<usize>,

    /// Random instances per size and regularizer.
    #[arg(long, default_value_t = 10)]
    trials: usize,

    /// Regularizers to check, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "entropy,l2")]
    regs: Vec<RegKind>,
}

#[derive(Args, Debug)]
struct PathsArgs {
    /// DAG JSON with `n_nodes` and 1-based `[child, parent, weight]` edges.
    dag: PathBuf,

    /// Refuse DAGs with more paths than this.
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    cap: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::PathCapExceeded { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let reg = Regularizer::new(cli.shared.reg, cli.shared.gamma)?;
    match &cli.command {
        Command::Align(args) => align(args, &reg, cli.shared.out.as_deref()),
        Command::Tag(args) => tag(args, &reg, cli.shared.out.as_deref()),
        Command::Gradcheck(args) => gradcheck(args, &cli.shared),
        Command::Paths(args) => paths(args, &reg, cli.shared.out.as_deref()),
    }
}

/// Writes to `path`, or prints when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn align(args: &AlignArgs, reg: &Regularizer, out: Option<&Path>) -> Result<ExitCode, Error> {
    let costs = match (&args.a, &args.b, &args.cost) {
        (Some(a), Some(b), _) => {
            let a = read_matrix_csv(a, args.header)?;
            let b = read_matrix_csv(b, args.header)?;
            squared_euclidean_costs(&a, &b)?
        }
        (_, _, Some(c)) => CostMatrix::new(read_matrix_csv(c, args.header)?)?,
        _ => return Err(Error::Domain("need --a and --b, or --cost".to_string())),
    };
    let g = dtw_grad(&costs, reg);
    println!("value {}", format_float(g.value));
    emit(out, &format_matrix_csv(&g.alignment))?;
    if args.hard {
        let (value, y) = hard_dtw(&costs);
        println!("hard value {}", format_float(value));
        emit(args.hard_out.as_deref(), &format_matrix_csv(&y))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn tag(args: &TagArgs, reg: &Regularizer, out: Option<&Path>) -> Result<ExitCode, Error> {
    let text = read_text(&args.potentials)?;
    let theta = PotentialTensor::from_json(&text).map_err(|e| Error::Io {
        path: args.potentials.display().to_string(),
        message: e.to_string(),
    })?;
    let g = viterbi_grad(&theta, reg);
    println!("value {}", format_float(g.value));
    emit(out, &format_matrix_csv(&state_marginals(&g.marginals)))?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: &GradcheckArgs, shared: &Shared) -> Result<ExitCode, Error> {
    let regs = args
        .regs
        .iter()
        .map(|&k| Regularizer::new(k, shared.gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let config = GradcheckConfig {
        seed: shared.seed,
        sizes: args.sizes.clone(),
        trials: args.trials,
        regs,
    };
    let report = run_gradcheck(&config)?;
    emit(shared.out.as_deref(), &report.render())?;
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn paths(args: &PathsArgs, reg: &Regularizer, out: Option<&Path>) -> Result<ExitCode, Error> {
    let text = read_text(&args.dag)?;
    let dag = Dag::from_json(&text).map_err(|e| Error::Io {
        path: args.dag.display().to_string(),
        message: e.to_string(),
    })?;
    let set = enumerate_paths_capped(&dag, args.cap)?;
    let g = dp_grad(&dag, reg);
    let probs = path_probabilities(&set, &g.transitions);
    let scores = set.scores(&dag);

    let mut text = format!("value {}\npaths {}\n", format_float(g.value), set.len());
    for k in 0..set.len() {
        let nodes: Vec<String> = set.nodes(&dag, k).iter().map(|n| (n + 1).to_string()).collect();
        text.push_str(&format!(
            "{} score {} probability {}\n",
            nodes.join("-"),
            format_float(scores[k]),
            format_float(probs[k])
        ));
    }
    // Row i, column j holds the expected use of edge j -> i.
    let n = dag.n_nodes();
    let mut e = Matrix::zeros(n, n);
    for (edge, &v) in g.expected.edges.iter().enumerate() {
        e.set(dag.child(edge), dag.parent(edge), v);
    }
    text.push_str("expected path\n");
    text.push_str(&format_matrix_csv(&e));
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}
