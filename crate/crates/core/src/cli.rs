//! `kerr-distill run | sweep | verify`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::analytics::{self, ClosedForms, Formulas, GridPoint, VerifyGrid, VERIFY_TOLERANCE};
use crate::protocols::{self, Disposition, Protocol, ProtocolParams, SimulatedRun};
use crate::state::Coefficients;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CSV_HEADER: &str = "gamma,F,N,P_total_analytic,P_total_sim,F_out";

#[derive(Debug, Parser)]
#[command(
    name = "kerr-distill",
    version,
    about = "Exact simulator and closed-form calculator for QND entanglement distillation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and print its report.
    Run(RunArgs),
    /// Sweep gamma over a grid and write CSV.
    Sweep(SweepArgs),
    /// Check closed forms against enumeration over a grid.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "bitflip")]
    pub protocol: Protocol,
    #[arg(long, default_value_t = FRAC_1_SQRT_2)]
    pub gamma: f64,
    #[arg(long = "f", default_value_t = 0.8)]
    pub fidelity: f64,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    #[arg(long, default_value_t = 2)]
    pub parties: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print every branch of every round.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "bitflip")]
    pub protocol: Protocol,
    #[arg(long = "f", default_value_t = 0.8)]
    pub fidelity: f64,
    #[arg(long, default_value_t = protocols::DEFAULT_MAX_ROUNDS)]
    pub rounds: usize,
    #[arg(long, default_value_t = 2)]
    pub parties: usize,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 91)]
    pub steps: usize,
    /// CSV destination; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Restrict to one protocol.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Largest N checked; every N from 1 up is verified.
    #[arg(long, default_value_t = 4)]
    pub rounds: usize,
    /// Restrict GHZ runs to one party count.
    #[arg(long)]
    pub parties: Option<usize>,
    /// Replace the default gamma list with a linear grid.
    #[arg(long, requires = "steps")]
    pub gamma_min: Option<f64>,
    #[arg(long, requires = "steps")]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Restrict to one fidelity.
    #[arg(long = "f")]
    pub fidelity: Option<f64>,
}

/// Validated parameters of one `run` invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub gamma: f64,
    pub fidelity: f64,
    pub rounds: usize,
    pub parties: usize,
    pub trace: bool,
}

impl RunConfig {
    pub fn params(&self) -> Result<ProtocolParams, String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("--gamma must lie in [0, 1], got {}", self.gamma));
        }
        let parties = match self.protocol {
            Protocol::Ghz => self.parties,
            _ => 2,
        };
        let c = Coefficients::from_real_gamma(self.gamma).map_err(|e| e.to_string())?;
        ProtocolParams::new(c, self.fidelity, self.rounds, parties).map_err(|e| match e {
            crate::DistillError::InvalidProbability(f) => {
                format!("--f must lie in [0, 1], got {f}")
            }
            crate::DistillError::InvalidRound(r) => {
                format!(
                    "--rounds must lie in 1..={}, got {r}",
                    protocols::MAX_ROUNDS
                )
            }
            crate::DistillError::InvalidParties(n) => {
                format!(
                    "--parties must lie in 2..={}, got {n}",
                    protocols::MAX_PARTIES
                )
            }
            other => other.to_string(),
        })
    }
}

/// Fixed-point with 10 significant digits, e.g. `0.3400000000`, `1.000000000`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0.000000000".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let significant = |s: &str| {
        s.chars()
            .filter(char::is_ascii_digit)
            .skip_while(|&c| c == '0')
            .count()
    };
    let exp = x.abs().log10().floor() as i32;
    let mut precision = (9 - exp).max(0) as usize;
    let mut s = format!("{x:.precision$}");
    // log10 can land on the wrong side of a power of ten, and rounding can
    // carry into a new leading digit.
    while significant(&s) > 10 && precision > 0 {
        precision -= 1;
        s = format!("{x:.precision$}");
    }
    while significant(&s) < 10 {
        precision += 1;
        s = format!("{x:.precision$}");
    }
    s
}

fn fmt_classes(b: &protocols::BranchOutcome) -> String {
    b.shift_classes
        .iter()
        .map(|(p, c)| format!("{p}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_pms(b: &protocols::BranchOutcome) -> String {
    if b.pm_results.is_empty() {
        return "-".to_string();
    }
    b.pm_results
        .iter()
        .map(|(m, r)| format!("{m}:{r}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text report for one configuration; byte-identical for identical input.
pub fn cmd_run(config: &RunConfig) -> Result<String, String> {
    let params = config.params()?;
    let run = protocols::simulate(config.protocol, &params).map_err(|e| e.to_string())?;
    let report = analytics::compare(&run, &ClosedForms).map_err(|e| e.to_string())?;
    let mut out = String::new();
    render_header(&mut out, &run);
    if config.trace {
        render_trace(&mut out, &run).map_err(|e| e.to_string())?;
    }
    render_summary(&mut out, &report);
    Ok(out)
}

fn render_header(out: &mut String, run: &SimulatedRun) {
    let p = &run.params;
    let _ = writeln!(out, "protocol {}", run.protocol);
    let _ = writeln!(out, "gamma    {}", fmt_sig(p.coefficients.gamma().re));
    let _ = writeln!(out, "delta    {}", fmt_sig(p.coefficients.delta().re));
    let _ = writeln!(out, "F        {}", fmt_sig(p.fidelity));
    let _ = writeln!(out, "rounds   {}", p.max_rounds);
    if run.protocol == Protocol::Ghz {
        let _ = writeln!(out, "parties  {}", p.parties);
    }
}

fn render_trace(out: &mut String, run: &SimulatedRun) -> crate::Result<()> {
    let parties = match run.protocol {
        Protocol::Ghz => run.params.parties,
        _ => 2,
    };
    let target = protocols::target_state(run.protocol, parties)?;
    for record in &run.rounds {
        let _ = writeln!(out);
        let _ = writeln!(out, "round {}", record.round);
        if record.frontier.is_empty() {
            let _ = writeln!(out, "  (nothing left to recycle)");
        }
        for (e, (entry, branches)) in record.frontier.iter().zip(&record.branches).enumerate() {
            let _ = writeln!(out, "  input {} reach={}", e + 1, fmt_sig(entry.reach));
            for b in branches {
                let fidelity = match b.disposition {
                    Disposition::Success => {
                        format!(" F={}", fmt_sig(b.post.fidelity_against(&target)?))
                    }
                    _ => String::new(),
                };
                let _ = writeln!(
                    out,
                    "    [{}] [{}] p={} P={} {}{}",
                    fmt_classes(b),
                    fmt_pms(b),
                    fmt_sig(b.probability),
                    fmt_sig(entry.reach * b.probability),
                    b.disposition,
                    fidelity
                );
            }
        }
    }
    Ok(())
}

fn render_summary(out: &mut String, report: &analytics::IterationReport) {
    let _ = writeln!(out);
    let _ = writeln!(out, "round P_analytic P_simulated reach conditional");
    for r in &report.per_round {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            r.round,
            fmt_sig(r.analytic),
            fmt_sig(r.simulated),
            fmt_sig(r.reach_simulated),
            fmt_sig(r.conditional_simulated)
        );
    }
    let _ = writeln!(
        out,
        "total {} {}",
        fmt_sig(report.cumulative.0),
        fmt_sig(report.cumulative.1)
    );
    let simulated = report
        .output_fidelity
        .1
        .map(fmt_sig)
        .unwrap_or_else(|| "n/a".to_string());
    let _ = writeln!(
        out,
        "F_out {} {}",
        fmt_sig(report.output_fidelity.0),
        simulated
    );
    let _ = writeln!(out, "max_abs_gap {:.3e}", report.max_abs_gap);
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub fidelity: f64,
    pub rounds: usize,
    pub p_total_analytic: f64,
    pub p_total_sim: f64,
    /// Simulated output fidelity, or the closed form where nothing succeeded.
    pub f_out: f64,
}

/// `steps` evenly spaced points from `min` to `max` inclusive.
pub fn linear_grid(min: f64, max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    max
                } else {
                    min + (max - min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

/// One row per `(γ, N)` with `N = 1..=rounds`, ordered by `N` then `γ`.
pub fn sweep_rows(
    protocol: Protocol,
    fidelity: f64,
    rounds: usize,
    parties: usize,
    gammas: &[f64],
) -> Result<Vec<SweepRow>, String> {
    let mut by_round: BTreeMap<usize, Vec<SweepRow>> = BTreeMap::new();
    for &gamma in gammas {
        let config = RunConfig {
            protocol,
            gamma,
            fidelity,
            rounds,
            parties,
            trace: false,
        };
        let params = config.params()?;
        let run = protocols::simulate(protocol, &params).map_err(|e| e.to_string())?;
        let report = analytics::compare(&run, &ClosedForms).map_err(|e| e.to_string())?;
        let (mut analytic, mut simulated) = (0.0, 0.0);
        for (n, r) in report.per_round.iter().enumerate() {
            analytic += r.analytic;
            simulated += r.simulated;
            by_round.entry(n + 1).or_default().push(SweepRow {
                gamma,
                fidelity,
                rounds: n + 1,
                p_total_analytic: analytic,
                p_total_sim: simulated,
                f_out: run
                    .output_fidelity_through(n + 1)
                    .unwrap_or(report.output_fidelity.0),
            });
        }
    }
    Ok(by_round.into_values().flatten().collect())
}

pub fn write_csv(rows: &[SweepRow], w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_sig(r.gamma),
            fmt_sig(r.fidelity),
            r.rounds,
            fmt_sig(r.p_total_analytic),
            fmt_sig(r.p_total_sim),
            fmt_sig(r.f_out)
        )?;
    }
    Ok(())
}

fn open_output<'a>(
    path: &Option<PathBuf>,
    stdout: &'a mut dyn Write,
) -> Result<Box<dyn Write + 'a>, String> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => Ok(Box::new(stdout)),
    }
}

/// Verifies `grid` against `forms`, prints a summary and returns the exit code.
pub fn cmd_verify(grid: &VerifyGrid, forms: &dyn Formulas, out: &mut dyn Write) -> io::Result<i32> {
    if grid.point_count() == 0 {
        writeln!(out, "warning: empty verification grid, nothing checked")?;
        return Ok(EXIT_OK);
    }
    let points = match analytics::verify_grid(grid, forms) {
        Ok(p) => p,
        Err(e) => {
            writeln!(out, "error: {e}")?;
            return Ok(EXIT_USAGE);
        }
    };

    let mut groups: BTreeMap<(Protocol, usize), Vec<&GridPoint>> = BTreeMap::new();
    for p in &points {
        groups.entry((p.protocol, p.parties)).or_default().push(p);
    }
    writeln!(out, "protocol parties points failed max_abs_gap")?;
    for ((protocol, parties), pts) in &groups {
        let failed = pts.iter().filter(|p| !p.passed).count();
        let gap = pts.iter().map(|p| p.max_abs_gap).fold(0.0, f64::max);
        writeln!(out, "{protocol} {parties} {} {failed} {gap:.3e}", pts.len())?;
    }

    let failures: Vec<&GridPoint> = points.iter().filter(|p| !p.passed).collect();
    let worst = points.iter().map(|p| p.max_abs_gap).fold(0.0, f64::max);
    if failures.is_empty() {
        writeln!(
            out,
            "PASS {} points, max_abs_gap {worst:.3e} <= {VERIFY_TOLERANCE:.0e}",
            points.len()
        )?;
        Ok(EXIT_OK)
    } else {
        for p in &failures {
            writeln!(
                out,
                "FAIL {} parties={} gamma={} F={} N={} gap={:.3e}",
                p.protocol,
                p.parties,
                fmt_sig(p.gamma),
                fmt_sig(p.fidelity),
                p.rounds,
                p.max_abs_gap
            )?;
        }
        writeln!(
            out,
            "FAIL {} of {} points above {VERIFY_TOLERANCE:.0e}",
            failures.len(),
            points.len()
        )?;
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn verify_grid_from(args: &VerifyArgs) -> Result<VerifyGrid, String> {
    let mut grid = VerifyGrid::default();
    if args.rounds > protocols::MAX_ROUNDS {
        return Err(format!(
            "--rounds must be at most {}",
            protocols::MAX_ROUNDS
        ));
    }
    grid.max_rounds = args.rounds;
    if let Some(p) = args.protocol {
        grid.protocols = vec![p];
    }
    if let Some(n) = args.parties {
        if !(2..=protocols::MAX_PARTIES).contains(&n) {
            return Err(format!(
                "--parties must lie in 2..={}",
                protocols::MAX_PARTIES
            ));
        }
        grid.ghz_parties = vec![n];
    }
    if let Some(f) = args.fidelity {
        if !(0.0..=1.0).contains(&f) {
            return Err(format!("--f must lie in [0, 1], got {f}"));
        }
        grid.fidelities = vec![f];
    }
    if let Some(steps) = args.steps {
        let min = args.gamma_min.unwrap_or(0.0);
        let max = args.gamma_max.unwrap_or(1.0);
        if !(0.0 <= min && min <= max && max <= 1.0) {
            return Err(format!(
                "gamma grid [{min}, {max}] must satisfy 0 <= min <= max <= 1"
            ));
        }
        grid.gammas = linear_grid(min, max, steps);
    }
    Ok(grid)
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Run(a) => run_cmd(a, stdout),
        Command::Sweep(a) => sweep_cmd(a, stdout),
        Command::Verify(a) => match verify_grid_from(&a) {
            Ok(grid) => cmd_verify(&grid, &ClosedForms, stdout).map_err(|e| e.to_string()),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn run_cmd(a: RunArgs, stdout: &mut dyn Write) -> Result<i32, String> {
    let config = RunConfig {
        protocol: a.protocol,
        gamma: a.gamma,
        fidelity: a.fidelity,
        rounds: a.rounds,
        parties: a.parties,
        trace: a.trace,
    };
    let report = cmd_run(&config)?;
    let mut w = open_output(&a.out, stdout)?;
    w.write_all(report.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn sweep_cmd(a: SweepArgs, stdout: &mut dyn Write) -> Result<i32, String> {
    if !(0.0 <= a.gamma_min && a.gamma_min < a.gamma_max && a.gamma_max <= 1.0) {
        return Err(format!(
            "gamma grid [{}, {}] must satisfy 0 <= min < max <= 1",
            a.gamma_min, a.gamma_max
        ));
    }
    if a.steps < 2 {
        return Err(format!("--steps must be at least 2, got {}", a.steps));
    }
    let gammas = linear_grid(a.gamma_min, a.gamma_max, a.steps);
    let rows = sweep_rows(a.protocol, a.fidelity, a.rounds, a.parties, &gammas)?;
    let mut w = open_output(&a.out, stdout)?;
    write_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.34), "0.3400000000");
        assert_eq!(fmt_sig(0.65875), "0.6587500000");
        assert_eq!(fmt_sig(1.0), "1.000000000");
        assert_eq!(fmt_sig(0.0), "0.000000000");
        assert_eq!(fmt_sig(16.0 / 17.0), "0.9411764706");
        assert_eq!(fmt_sig(0.99999999999), "1.000000000");
        assert_eq!(fmt_sig(1000.0), "1000.000000");
        assert_eq!(fmt_sig(1.5e-5), "0.00001500000000");
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linear_grid(0.2, 0.4, 0), Vec::<f64>::new());
        assert_eq!(linear_grid(0.9, 1.0, 2), vec![0.9, 1.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn run_report_values() {
        let config = RunConfig {
            protocol: Protocol::BitFlip,
            gamma: 0.7071,
            fidelity: 0.8,
            rounds: 1,
            parties: 2,
            trace: true,
        };
        let text = cmd_run(&config).unwrap();
        let total: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("total "))
            .and_then(|l| l.split(' ').next())
            .unwrap()
            .parse()
            .unwrap();
        assert!((total - 0.34).abs() < 1e-4, "{text}");
        assert!(text.contains("F_out 0.9411764706 0.9411764706"), "{text}");
        assert_eq!(text, cmd_run(&config).unwrap());
    }

    #[test]
    fn run_config_rejects_out_of_range() {
        let mut config = RunConfig {
            protocol: Protocol::BitFlip,
            gamma: 1.5,
            fidelity: 0.8,
            rounds: 1,
            parties: 2,
            trace: false,
        };
        assert!(config.params().is_err());
        config.gamma = 0.5;
        config.rounds = 0;
        assert!(config.params().is_err());
        config.rounds = 1;
        config.protocol = Protocol::Ghz;
        config.parties = 1;
        assert!(config.params().is_err());
    }

    #[test]
    fn sweep_row_order() {
        let rows = sweep_rows(Protocol::BitFlip, 0.8, 3, 2, &[0.2, 0.5, 0.9]).unwrap();
        assert_eq!(rows.len(), 9);
        let keys: Vec<_> = rows
            .iter()
            .map(|r| (r.rounds, (r.gamma * 10.0) as i32))
            .collect();
        assert_eq!(
            keys,
            vec![
                (1, 2),
                (1, 5),
                (1, 9),
                (2, 2),
                (2, 5),
                (2, 9),
                (3, 2),
                (3, 5),
                (3, 9)
            ]
        );
    }
}
