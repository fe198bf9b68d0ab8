use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fekansa::bench::{self, CaseSpec, Example, Method};
use fekansa::timestep::{write_trace_csv, TimeConfig};
use fekansa::Error;

#[derive(Parser)]
#[command(name = "fekansa", version, about = "FEM and RBF collocation benchmarks on manufactured solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single case and write its table row, result and mesh.
    Run {
        #[arg(long)]
        example: String,
        #[arg(long)]
        method: String,
        /// Mesh size label, e.g. 0.25 or 1/4.
        #[arg(long, value_parser = parse_fraction)]
        dh: f64,
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tf: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        fixed_c: Option<f64>,
        #[arg(long)]
        tps_beta: Option<u32>,
        /// Absolute guard on |exact| in the maximum relative error.
        #[arg(long)]
        mre_floor: Option<f64>,
        /// Record the RMSE after every time step.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every case of a JSON config file.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a log-log trend line through two columns of a CSV file.
    Trend {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn build_case(
    example: &str,
    method: &str,
    dh: f64,
    random: bool,
    seed: u64,
    tf: Option<f64>,
    dt: Option<f64>,
    fixed_c: Option<f64>,
    tps_beta: Option<u32>,
    mre_floor: Option<f64>,
    trace: bool,
) -> fekansa::Result<CaseSpec> {
    let example: Example = example.parse()?;
    let method: Method = method.parse()?;
    let mut case = CaseSpec::new(example, method, dh);
    case.random_nodes = random;
    case.seed = seed;
    if tf.is_some() || dt.is_some() {
        let d = example.default_time().unwrap_or(TimeConfig { dt: 0.01, tf: 1.0 });
        case.time = Some(TimeConfig::new(dt.unwrap_or(d.dt), tf.unwrap_or(d.tf))?);
    }
    case.fixed_c = fixed_c;
    if let Some(b) = tps_beta {
        case.tps_beta = b;
    }
    if let Some(f) = mre_floor {
        case.mre_floor = f;
    }
    case.trace = trace;
    case.validate()?;
    Ok(case)
}

fn run_one(case: &CaseSpec, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let geometry = bench::build_geometry(case)?;
    fs::write(out.join("mesh.json"), serde_json::to_string(&geometry.to_json())?)?;
    let row = bench::run_on_geometry(case, &geometry)?;
    bench::write_table(&out.join(format!("{}.csv", case.example)), &[&row])?;
    fs::write(out.join("result.json"), serde_json::to_string_pretty(&row)?)?;
    if !row.trace.is_empty() {
        write_trace_csv(&out.join("trace.csv"), &row.trace)?;
    }
    if let Some(opt) = &row.optimization {
        opt.write_trace_csv(&out.join("shape_search.csv"))?;
    }
    for f in &row.fields {
        let r = &f.report;
        println!(
            "{} {}: LSE {} RMSE {} MRE {} CN {} RT {:.2}s{}",
            case.label(),
            f.field.id(),
            bench::sci4(r.lse),
            bench::sci4(r.rmse),
            bench::sci4(r.mre),
            bench::sci4(r.condition_number),
            r.runtime_s,
            r.shape_parameter.map_or(String::new(), |c| format!(" c {c:.4}")),
        );
    }
    Ok(())
}

fn trend(input: &Path, x: &str, y: &str) -> anyhow::Result<()> {
    let mut rdr = csv::Reader::from_path(input)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidCase(format!("no column '{name}' in {}", input.display())))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| parse_fraction(&rec[i]).map_err(|e| Error::InvalidCase(format!("{}: {e}", &rec[i])));
        pts.push((get(ix)?, get(iy)?));
    }
    let fit = bench::fit_trend(&pts)?;
    println!("slope {:.4} intercept {:.4}", fit.slope, fit.intercept);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::ConfigParse { .. }
            | Error::InvalidCase(_)
            | Error::InvalidTimeConfig(_)
            | Error::NonConformingSpacing { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_),
        ) => 2,
        Some(_) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<csv::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            example,
            method,
            dh,
            random,
            seed,
            tf,
            dt,
            fixed_c,
            tps_beta,
            mre_floor,
            trace,
            out,
        } => build_case(&example, &method, dh, random, seed, tf, dt, fixed_c, tps_beta, mre_floor, trace)
            .map_err(anyhow::Error::from)
            .and_then(|case| run_one(&case, &out)),
        Command::Suite { config, out } => bench::run_suite(&config, &out)
            .map_err(anyhow::Error::from)
            .map(|rep| {
                for t in &rep.tables {
                    println!("wrote {}", t.display());
                }
                println!("wrote {}", rep.bundle.display());
            }),
        Command::Trend { input, x, y } => trend(&input, &x, &y),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
