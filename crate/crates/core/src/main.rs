use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splitset::cli_io::{
    ci_report, fit_report, parse_bandwidth, parse_scenarios, read_sample_csv, to_json, upper_quantiles,
    upper_quantiles_tsv, CiRequest, FitRequest, ModelSpec, NuisanceArg,
};
use splitset::confidence::Method;
use splitset::glm::LinkSpec;
use splitset::limit_process::{default_levels, Dist, ProcessSpec, QuantileTable};
use splitset::sim::{reproduce_table, run_coverage_experiment, REPORT_HEADER};
use splitset::{Error, Result};

#[derive(Parser)]
#[command(name = "splitset", version, about = "Split-point inference for stump and two-phase regression models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a working model to a CSV file with columns x,y.
    Fit {
        input: PathBuf,
        /// `stump` or `poly:kl,ku`.
        #[arg(long, default_value = "stump")]
        model: String,
        #[arg(long, default_value = "identity")]
        link: String,
        #[arg(long, default_value_t = 1)]
        min_side: usize,
        /// `cv` or `fixed:h`, used for the reported nuisance estimates.
        #[arg(long, default_value = "cv")]
        bandwidth: String,
    },
    /// Confidence set for the split point.
    Ci {
        input: PathBuf,
        #[arg(long, default_value = "rss2")]
        method: String,
        #[arg(long, default_value = "stump")]
        model: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Block exponent for subsampling, block size round(n^gamma).
        #[arg(long, default_value_t = 0.6)]
        gamma: f64,
        #[arg(long, default_value_t = 1000)]
        subsamples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `auto` or `values:density,cdf,fprime,sigma2`.
        #[arg(long, default_value = "auto")]
        nuisance: String,
        #[arg(long, default_value = "cv")]
        bandwidth: String,
        #[arg(long, default_value = "identity")]
        link: String,
        #[arg(long, default_value_t = 1)]
        min_side: usize,
    },
    /// Run the coverage experiments described by a scenario file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// One row per scenario with coverage and length columns per method.
        #[arg(long)]
        wide: bool,
    },
    /// Print or regenerate the limit-process quantile tables.
    Quantiles {
        /// `chernoff` or `maxq1`; both when omitted.
        #[arg(long)]
        dist: Option<String>,
        /// Comma-separated upper-tail probabilities to look up.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long = "T")]
        half_width: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulate instead of using the embedded tables.
        #[arg(long)]
        regenerate: bool,
        /// Output file, or directory when both tables are written.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit {
            input,
            model,
            link,
            min_side,
            bandwidth,
        } => {
            let req = FitRequest {
                model: parse::<ModelSpec>(&model)?,
                link: parse::<LinkSpec>(&link)?,
                min_side,
                options: parse_bandwidth(&bandwidth)?,
            };
            let sample = read_sample_csv(&input)?;
            let report = fit_report(&sample, &req)?;
            write_output(None, &(to_json(&report)? + "\n"))
        }
        Command::Ci {
            input,
            method,
            model,
            alpha,
            gamma,
            subsamples,
            seed,
            nuisance,
            bandwidth,
            link,
            min_side,
        } => {
            let req = CiRequest {
                model: parse::<ModelSpec>(&model)?,
                method: parse::<Method>(&method)?,
                alpha,
                gamma,
                subsamples,
                seed,
                min_side,
                nuisance: parse::<NuisanceArg>(&nuisance)?,
                options: parse_bandwidth(&bandwidth)?,
                link: parse::<LinkSpec>(&link)?,
            };
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            let sample = read_sample_csv(&input)?;
            let report = ci_report(&sample, &req)?;
            write_output(None, &(to_json(&report)? + "\n"))
        }
        Command::Simulate { config, out, wide } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
            let scenarios = parse_scenarios(&text)?;
            let tsv = if wide {
                reproduce_table(&scenarios).to_tsv()
            } else {
                let mut tsv = format!("{REPORT_HEADER}\n");
                for sc in &scenarios {
                    let report = run_coverage_experiment(sc)?;
                    tsv.extend(report.to_tsv().lines().skip(1).map(|l| format!("{l}\n")));
                }
                tsv
            };
            write_output(out.as_deref(), &tsv)
        }
        Command::Quantiles {
            dist,
            levels,
            reps,
            half_width,
            h,
            seed,
            regenerate,
            out,
        } => {
            let dists = match dist {
                Some(d) => vec![parse::<Dist>(&d)?],
                None => vec![Dist::ChernoffArgmax, Dist::MaxQ1],
            };
            let tables: Vec<QuantileTable> = if regenerate {
                let mut spec = ProcessSpec::standard();
                spec.reps = reps.unwrap_or(spec.reps);
                spec.half_width = half_width.unwrap_or(spec.half_width);
                spec.step = h.unwrap_or(spec.step);
                spec.seed = seed.unwrap_or(spec.seed);
                let (chernoff, maxq1) = QuantileTable::simulate_standard(&spec, &default_levels())?;
                dists
                    .iter()
                    .map(|d| match d {
                        Dist::ChernoffArgmax => chernoff.clone(),
                        Dist::MaxQ1 => maxq1.clone(),
                    })
                    .collect()
            } else {
                if reps.is_some() || half_width.is_some() || h.is_some() || seed.is_some() {
                    return Err(Error::InvalidInput(
                        "--reps, --T, --h and --seed apply only with --regenerate".into(),
                    ));
                }
                dists.iter().map(|&d| QuantileTable::embedded(d)).collect()
            };
            if let Some(levels) = levels {
                let mut text = String::new();
                for t in &tables {
                    if tables.len() > 1 {
                        text.push_str(&format!("# dist={}\n", t.dist.name()));
                    }
                    text.push_str(&upper_quantiles_tsv(&upper_quantiles(t, &levels)?));
                }
                return write_output(out.as_deref(), &text);
            }
            match (out, tables.len()) {
                (Some(dir), n) if n > 1 => {
                    fs::create_dir_all(&dir)?;
                    for t in &tables {
                        let path = dir.join(format!("{}.tsv", t.dist.name()));
                        write_output(Some(&path), &t.to_tsv())?;
                    }
                    Ok(())
                }
                (out, _) => {
                    let text: String = tables.iter().map(|t| t.to_tsv()).collect();
                    write_output(out.as_deref(), &text)
                }
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SPLITSET_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidInput(format!("SPLITSET_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {msg}", e.code());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads() {
        return fail(&e);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
