use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use elsem::constraints::{SideInfoKind, SideInfoSpec};
use elsem::el::{solve_dual, verify_lemma_bounds, BoundCheck, SolverOptions};
use elsem::fit::{fit_el_from, fit_plain, side_constraints, DiscrepancyKind};
use elsem::sem::{DataMatrix, SemSpec};
use elsem::sim::{render_replications, render_report, run_study, McConfig, McReport, ReportFormat};
use elsem::Error;

/// Empirical-likelihood weighted estimation for structural equation models.
#[derive(Debug, Parser)]
#[command(name = "elsem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run Monte Carlo scenarios and write report.csv and replications.csv.
    Simulate {
        /// JSON file holding one scenario object or an array of them.
        #[arg(long)]
        config: PathBuf,
        /// Override the number of replications of every scenario.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Format of the report printed to stdout; markdown also writes report.md.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Fit the two-equation model to a data file, plain and EL-weighted.
    Fit {
        /// CSV with columns y1, y2, x1, x2.
        #[arg(long)]
        data: PathBuf,
        /// Scenario JSON supplying the model options and side information.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        side: Option<Side>,
        /// Cosine basis size for independence side information.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Print feasibility diagnostics and bound checks for the EL constraint.
    ElDiag {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        side: Side,
        #[arg(long)]
        m: Option<usize>,
        /// Known marginal medians, comma separated.
        #[arg(long, value_delimiter = ',')]
        medians: Option<Vec<f64>>,
        /// Optional scenario JSON for model options and medians.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Side {
    Independence,
    Medians,
}

const EXIT_DEGENERATE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate { config, reps, seed, out, format, threads } => {
            simulate(&config, reps, seed, &out, format, threads)
        }
        Command::Fit { data, spec, side, m } => fit(&data, &spec, side, m),
        Command::ElDiag { data, side, m, medians, spec } => el_diag(&data, side, m, medians, spec.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::StudyDegenerate { .. } => EXIT_DEGENERATE,
                Error::Config(_) => EXIT_CONFIG,
                _ => 1,
            })
        }
    }
}

fn read_configs(path: &Path) -> elsem::Result<Vec<McConfig>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    McConfig::from_json(&text)
}

fn simulate(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    format: Format,
    threads: usize,
) -> elsem::Result<()> {
    let mut configs = read_configs(config)?;
    for cfg in &mut configs {
        if let Some(r) = reps {
            cfg.reps = r;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
    }
    let mut report = McReport::default();
    let mut replications = String::new();
    for cfg in &configs {
        let study = run_study(cfg, threads)?;
        eprintln!("{}: {} replications, {} skipped", cfg.scenario_label(), cfg.reps, study.skipped);
        let reps_csv = render_replications(&study);
        if replications.is_empty() {
            replications = reps_csv;
        } else {
            replications.extend(reps_csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
        report.extend(study.report);
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), render_report(&report, ReportFormat::Csv))?;
    fs::write(out.join("replications.csv"), replications)?;
    match format {
        Format::Csv => print!("{}", render_report(&report, ReportFormat::Csv)),
        Format::Markdown => {
            let md = render_report(&report, ReportFormat::Markdown);
            fs::write(out.join("report.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(())
}

fn side_from(
    cfg: Option<&McConfig>,
    side: Side,
    m: Option<usize>,
    medians: Option<Vec<f64>>,
) -> elsem::Result<SideInfoSpec> {
    let base = cfg.map(|c| c.side_info());
    let mut spec = match (side, base) {
        (Side::Independence, Some(b)) if b.kind == SideInfoKind::Independence => b,
        (Side::Medians, Some(b)) if b.kind == SideInfoKind::Medians => b,
        (Side::Independence, _) => SideInfoSpec::independence(1),
        (Side::Medians, _) => {
            let known = cfg.map(|c| c.x_dist.medians());
            SideInfoSpec { kind: SideInfoKind::Medians, medians: known, ..SideInfoSpec::independence(1) }
        }
    };
    if let Some(m) = m {
        spec.m = m;
    }
    if medians.is_some() {
        spec.medians = medians;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn fit(data: &Path, spec_path: &Path, side: Option<Side>, m: Option<usize>) -> elsem::Result<()> {
    let cfg = read_configs(spec_path)?.into_iter().next().ok_or_else(|| Error::Config("empty config".into()))?;
    let data = DataMatrix::read_csv_path(data)?;
    let spec = cfg.spec();
    let side = match side {
        Some(s) => side_from(Some(&cfg), s, m, None)?,
        None => {
            let mut s = cfg.side_info();
            if let Some(m) = m {
                s.m = m;
            }
            s
        }
    };
    let stage1 = fit_plain(&data, &spec, &cfg.discrepancy)?;
    println!("plain estimator (n = {})", data.n());
    print!("{}", stage1.render_text(&spec, Some(data.n())));
    let el = fit_el_from(&data, &spec, &cfg.discrepancy, &side, stage1)?;
    println!();
    println!("EL-weighted estimator ({:?} side information)", side.kind);
    print!("{}", el.render_text(&spec, Some(data.n())));
    Ok(())
}

fn check_line(name: &str, c: &BoundCheck) -> String {
    format!("  {name:<28} {:>12.4e} <= {:<12.4e} {}", c.lhs, c.rhs, if c.holds { "holds" } else { "FAILS" })
}

fn el_diag(
    data: &Path,
    side: Side,
    m: Option<usize>,
    medians: Option<Vec<f64>>,
    spec_path: Option<&Path>,
) -> elsem::Result<()> {
    let cfg = match spec_path {
        Some(p) => Some(read_configs(p)?.into_iter().next().ok_or_else(|| Error::Config("empty config".into()))?),
        None => None,
    };
    let side = side_from(cfg.as_ref(), side, m, medians)?;
    let data = DataMatrix::read_csv_path(data)?;
    let spec = cfg.as_ref().map_or_else(|| SemSpec::two_equation(false), |c| c.spec());
    let kind = cfg.as_ref().map_or(DiscrepancyKind::Ml, |c| c.discrepancy.clone());
    let theta = fit_plain(&data, &spec, &kind)?.theta_hat;
    let u = side_constraints(&data, &spec, &theta, &side)?;
    let d = elsem::el::diagnostics(&u);
    println!("constraint matrix: n = {}, m = {}", u.n(), u.m());
    println!("  |mean row|                 {:.6e}", d.x_bar_norm);
    println!("  max row norm x*            {:.6e}", d.x_star);
    println!("  lambda_min                 {:.6e}", d.lambda_n);
    println!("  lambda_max                 {:.6e}", d.big_lambda_n);
    println!("  existence condition        {}", d.owen_condition);
    println!("  multiplier bound           {:.6e}", d.zeta_bound);
    match solve_dual(&u, &SolverOptions::default()) {
        Ok(sol) => {
            println!(
                "dual solution: |zeta| = {:.6e}, {} Newton steps, stationarity {:.3e}",
                sol.zeta.norm(),
                sol.iterations,
                sol.stationarity
            );
            println!("  log EL ratio               {:.6e}", sol.log_el_ratio());
            let r = verify_lemma_bounds(&sol, &u);
            println!("bound checks:");
            println!("{}", check_line("|zeta|", &r.zeta_norm));
            println!("{}", check_line("|zeta| x*", &r.zeta_times_x_star));
            println!("{}", check_line("zeta' S zeta", &r.quadratic_form));
            println!("{}", check_line("|zeta - S^-1 mean|^2", &r.linearization));
            if !r.owen_condition {
                println!("  (existence condition false: bounds are not guaranteed)");
            }
        }
        Err(e) => println!("dual solution: {e}"),
    }
    Ok(())
}
