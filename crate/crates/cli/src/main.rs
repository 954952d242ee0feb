use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use redistill::normalizer::{naive_sequence, Mode};
use redistill::problem::{generate, read_problems, Problem, SuiteConfig};
use redistill::search::{synthesize, SynthesisError, SynthesisOptions, SynthesisResult};
use redistill::simulator::{verify, VerificationReport};
use redistill::{parse_mesh, parse_type, DistType, Mesh};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "redistill",
    version,
    about = "Synthesize memory-bounded redistributions of sharded arrays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a program for one redistribution.
    Synth(SynthArgs),
    /// Generate a random problem suite as JSON lines.
    Gen(GenArgs),
    /// Synthesize every problem in a JSON-lines file and compare with the naive program.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// Per-device element bound (default: larger endpoint local size).
    #[arg(long)]
    memory_bound: Option<u64>,
    /// Forbid partitioning along axes neither endpoint uses.
    #[arg(long)]
    no_over_partition: bool,
}

impl SearchFlags {
    fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            memory_bound: self.memory_bound,
            over_partition_cap: self.no_over_partition.then_some(0),
            ..SynthesisOptions::default()
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    mesh: String,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// Print the plan as JSON.
    #[arg(long)]
    json: bool,
    /// Check the plan by simulation.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = 4)]
    bytes_per_element: u64,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Up to 2^16 elements, small enough to simulate.
    Desk,
    /// 64 MB to 800 MB arrays.
    Large,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 6)]
    max_rank: usize,
    #[arg(long, default_value_t = 3)]
    axes: usize,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    min_elements: Option<u64>,
    #[arg(long)]
    max_elements: Option<u64>,
    #[arg(long, default_value_t = 4)]
    bytes_per_element: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON-lines problem file.
    file: std::path::PathBuf,
    /// Also check every plan by simulation.
    #[arg(long)]
    verify: bool,
    /// Print one JSON object per problem instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    search: SearchFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Gen(a) => gen(a),
        Command::Bench(a) => bench(a),
    };
    ExitCode::from(code)
}

fn exit_code(e: &SynthesisError) -> u8 {
    match e {
        SynthesisError::InvalidRedistribution { .. }
        | SynthesisError::IllFormed(_)
        | SynthesisError::Overflow
        | SynthesisError::BoundTooSmall { .. }
        | SynthesisError::NoPath => EXIT_INVALID,
        SynthesisError::TooLarge(_) | SynthesisError::Internal(_) => EXIT_INTERNAL,
    }
}

fn parse_inputs(a: &SynthArgs) -> Result<(Mesh, DistType, DistType), String> {
    let mesh = parse_mesh(&a.mesh).map_err(|e| format!("--mesh: {e}"))?;
    let from = parse_type(&a.from).map_err(|e| format!("--from: {e}"))?;
    let to = parse_type(&a.to).map_err(|e| format!("--to: {e}"))?;
    Ok((mesh, from, to))
}

fn naive_cost(p: &Problem) -> Option<(u64, u64)> {
    let s = naive_sequence(&p.mesh, &p.source, &p.target, Mode::Strong).ok()?;
    let c = s.cost();
    Some((c.total, c.height))
}

fn render(r: &SynthesisResult) -> String {
    let rec = r.record();
    let mut out = String::new();
    let _ = writeln!(out, "{}", rec.mesh);
    let _ = writeln!(out, "{}", rec.source);
    for (k, s) in rec.steps.iter().enumerate() {
        let op = r.plan.steps[k].op.merged(&r.splits);
        let _ = writeln!(out, "  --{op}--> {}    cost {}", s.after, s.cost);
    }
    let permute = match r.final_permute {
        Some(k) => format!("step {}", k + 1),
        None => "none".into(),
    };
    let _ = writeln!(
        out,
        "cost {}  height {}  bound {}  permute {}",
        rec.cost.total, rec.height, r.bound, permute
    );
    out
}

fn synth(a: SynthArgs) -> u8 {
    let (mesh, from, to) = match parse_inputs(&a) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let result = match synthesize(&mesh, &from, &to, &a.search.options()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let report = a.verify.then(|| verify(&result.plan));
    let problem = Problem {
        mesh,
        source: from,
        target: to,
        bytes_per_element: a.bytes_per_element,
    };
    let bytes = result.cost() * a.bytes_per_element;
    if a.json {
        let mut v = json!({
            "plan": result.record(),
            "final_permute": result.final_permute,
            "bound": result.bound,
            "bytes_per_device": bytes,
            "naive_cost": naive_cost(&problem).map(|c| c.0),
        });
        if let Some(r) = &report {
            v["verification"] = serde_json::to_value(r).expect("report serializes");
        }
        println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    } else {
        print!("{}", render(&result));
        println!("bytes per device {bytes}");
        if let Some(r) = &report {
            print_report(r);
        }
    }
    match report {
        Some(r) if !r.ok() => EXIT_VERIFY,
        _ => 0,
    }
}

fn print_report(r: &VerificationReport) {
    println!(
        "verification: {}  measured height {}  bound {}  moved {:?}  model {:?}",
        if r.ok() { "ok" } else { "FAILED" },
        r.measured_height,
        r.bound,
        r.per_step_moved,
        r.model_counts
    );
    for f in &r.failures {
        println!("  {f}");
    }
}

fn gen(a: GenArgs) -> u8 {
    let mut config = match a.preset {
        Preset::Desk => SuiteConfig::desk(a.count, a.seed),
        Preset::Large => SuiteConfig::large(a.count, a.seed),
    };
    config.axes = a.axes;
    config.max_rank = a.max_rank;
    config.bytes_per_element = a.bytes_per_element;
    if let Some(m) = a.min_elements {
        config.min_elements = m;
    }
    if let Some(m) = a.max_elements {
        config.max_elements = m;
    }
    if config.axes == 0 || config.max_rank == 0 || config.min_elements > config.max_elements {
        eprintln!("error: need at least one axis, rank >= 1 and min-elements <= max-elements");
        return EXIT_INVALID;
    }
    for p in generate(&config) {
        println!("{}", p.to_json_line());
    }
    0
}

struct Row {
    line: usize,
    outcome: Result<Measured, String>,
}

struct Measured {
    cost: u64,
    naive: u64,
    height: u64,
    naive_height: u64,
    permutes: usize,
    seconds: f64,
    verified: Option<bool>,
}

fn run_one(p: &Problem, options: &SynthesisOptions, check: bool) -> Result<Measured, String> {
    let start = Instant::now();
    let r = synthesize(&p.mesh, &p.source, &p.target, options).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let (naive, naive_height) = naive_cost(p).ok_or("naive program failed")?;
    Ok(Measured {
        cost: r.cost(),
        naive,
        height: r.height(),
        naive_height,
        permutes: r.plan.permute_count(),
        seconds,
        verified: check.then(|| verify(&r.plan).ok()),
    })
}

fn ratio(m: &Measured) -> Option<f64> {
    match (m.cost, m.naive) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        (c, n) => Some(c as f64 / n as f64),
    }
}

fn bench(a: BenchArgs) -> u8 {
    let text = match std::fs::read_to_string(&a.file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", a.file.display());
            return EXIT_INVALID;
        }
    };
    let options = a.search.options();
    let rows: Vec<Row> = read_problems(&text)
        .into_par_iter()
        .map(|(line, p)| Row {
            line,
            outcome: p
                .map_err(|e| e.to_string())
                .and_then(|p| run_one(&p, &options, a.verify)),
        })
        .collect();

    let mut times = Vec::new();
    let mut log_ratio = 0.0;
    let mut ratios = 0usize;
    let mut failed = 0usize;
    let mut unverified = 0usize;
    if !a.json {
        println!(
            "{:>5} {:>12} {:>12} {:>7} {:>10} {:>10} {:>4} {:>9} status",
            "line", "cost", "naive", "ratio", "height", "naive_h", "perm", "ms"
        );
    }
    for row in &rows {
        match &row.outcome {
            Ok(m) => {
                times.push(m.seconds);
                let r = ratio(m);
                if let Some(r) = r.filter(|r| *r > 0.0) {
                    log_ratio += r.ln();
                    ratios += 1;
                }
                let status = match m.verified {
                    Some(true) => "verified",
                    Some(false) => {
                        unverified += 1;
                        "VERIFY-FAILED"
                    }
                    None => "ok",
                };
                if a.json {
                    println!(
                        "{}",
                        json!({"line": row.line, "cost": m.cost, "naive_cost": m.naive, "ratio": r,
                               "height": m.height, "naive_height": m.naive_height, "permutes": m.permutes,
                               "seconds": m.seconds, "status": status})
                    );
                } else {
                    let r = r.map_or("-".to_string(), |r| format!("{r:.3}"));
                    println!(
                        "{:>5} {:>12} {:>12} {:>7} {:>10} {:>10} {:>4} {:>9.2} {}",
                        row.line,
                        m.cost,
                        m.naive,
                        r,
                        m.height,
                        m.naive_height,
                        m.permutes,
                        m.seconds * 1e3,
                        status
                    );
                }
            }
            Err(e) => {
                failed += 1;
                if a.json {
                    println!("{}", json!({"line": row.line, "error": e}));
                } else {
                    println!("{:>5} error: {e}", row.line);
                }
            }
        }
    }
    times.sort_by(|x, y| x.total_cmp(y));
    let median = times.get(times.len() / 2).copied().unwrap_or(0.0);
    let geomean = if ratios > 0 {
        (log_ratio / ratios as f64).exp()
    } else {
        1.0
    };
    let summary = format!(
        "problems {}  failed {}  geomean cost ratio {:.4}  median synthesis {:.2} ms",
        rows.len(),
        failed + unverified,
        geomean,
        median * 1e3
    );
    if a.json {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    if unverified > 0 {
        EXIT_VERIFY
    } else if failed > 0 {
        EXIT_INTERNAL
    } else {
        0
    }
}
