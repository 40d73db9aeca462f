use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stiffkit::analysis::{analyze, check_discrete, AnalysisOptions};
use stiffkit::conditioning::{ConditioningReport, DichotomyReport, Matching};
use stiffkit::csvio::{fmt_f64, read_mesh, write_history, write_mesh, write_sweep};
use stiffkit::goldens::{bless, verify_goldens};
use stiffkit::integrate::{Mesh, Method};
use stiffkit::linalg::Norm;
use stiffkit::meshsel::select_mesh;
use stiffkit::problem::{build_problem, Problem, ProblemSpec};
use stiffkit::suite::{load_case, run_sweep, CASES};
use stiffkit::Error;

const EXIT_STIFF: u8 = 10;
const EXIT_ILL_CONDITIONED: u8 = 11;
const EXIT_NOT_REPRESENTED: u8 = 12;

#[derive(Parser)]
#[command(name = "stiffkit", version, about = "Conditioning parameters and stiffness ratios of ODE problems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Inf,
    #[value(name = "2")]
    Two,
}

#[derive(Args)]
struct Global {
    /// Vector norm used for kappa and gamma.
    #[arg(long, global = true, value_enum, default_value = "inf")]
    norm: NormArg,
    /// Stiffness threshold on sigma.
    #[arg(long, global = true, default_value_t = 1e3)]
    threshold: f64,
    /// Seed of the random perturbation directions.
    #[arg(long, global = true, env = "STIFFKIT_SEED", default_value_t = 42)]
    seed: u64,
    /// Number of random perturbation directions.
    #[arg(long, global = true, default_value_t = 32)]
    directions: usize,
    /// Relative tolerance of the nominal and variational integrations.
    #[arg(long, global = true, default_value_t = 1e-8)]
    rtol: f64,
}

impl Global {
    fn options(&self) -> AnalysisOptions {
        let mut o = AnalysisOptions::default();
        o.conditioning.norm = match self.norm {
            NormArg::Inf => Norm::Inf,
            NormArg::Two => Norm::Two,
        };
        o.conditioning.threshold = self.threshold;
        o.conditioning.seed = self.seed;
        o.conditioning.random_directions = self.directions;
        o.rtol = self.rtol;
        o.variational_rtol = self.rtol;
        o
    }
}

#[derive(Args)]
struct Source {
    /// Problem file (TOML).
    file: Option<PathBuf>,
    /// Built-in problem name (see `list-problems`).
    #[arg(long, conflicts_with = "file")]
    builtin: Option<String>,
    /// Parameter override, `name=value`.
    #[arg(short = 'p', long = "param", value_parser = parse_kv)]
    params: Vec<(String, f64)>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v = v.trim().parse().map_err(|_| format!("not a number: '{v}'"))?;
    Ok((k.trim().to_string(), v))
}

impl Source {
    fn problem(&self) -> Result<Problem, Error> {
        let mut spec = match (&self.file, &self.builtin) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
                ProblemSpec::from_toml(&text)?
            }
            (None, Some(name)) => ProblemSpec::builtin(name),
            (None, None) => return Err(Error::Spec("give a problem file or --builtin NAME".into())),
        };
        let shortcuts = [("lambda", self.lambda), ("T", self.t_end), ("eps", self.eps), ("mu", self.mu)];
        for (k, v) in shortcuts.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))) {
            spec.params.insert(k, v);
        }
        spec.params.extend(self.params.iter().cloned());
        build_problem(&spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Conditioning parameters and stiffness ratio of one problem.
    #[command(allow_negative_numbers = true)]
    Analyze {
        #[command(flatten)]
        source: Source,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Runs a benchmark case over its parameter grid and writes CSV.
    #[command(allow_negative_numbers = true)]
    Sweep {
        case: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// `a:b` for powers of ten from a to b, or a comma separated list.
        #[arg(long)]
        grid: Option<String>,
        /// Worker threads for independent points.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compares discrete and continuous conditioning parameters.
    #[command(allow_negative_numbers = true)]
    CheckDiscrete {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        method: Method,
        /// Uniform mesh with this many intervals.
        #[arg(long, conflicts_with = "mesh")]
        n: Option<usize>,
        /// Mesh file, one node per line.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        tol_factor: f64,
    },
    /// Refines a BVP mesh until the discrete parameters match.
    #[command(allow_negative_numbers = true)]
    MeshSelect {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 64, conflicts_with = "mesh")]
        n: usize,
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        tol_factor: f64,
        #[arg(long, default_value_t = 10)]
        max_rounds: usize,
        /// Final mesh output.
        #[arg(short, long, default_value = "mesh.txt")]
        output: PathBuf,
        #[arg(long, default_value = "history.csv")]
        history: PathBuf,
    },
    /// Lists the built-in problems.
    ListProblems,
    /// Re-runs the golden recipes and compares with the stored CSVs.
    VerifyGoldens {
        #[arg(long, default_value = "goldens")]
        dir: PathBuf,
        /// Regenerate the CSVs instead of comparing.
        #[arg(long)]
        bless: bool,
        /// Where regenerated CSVs go; defaults to `--dir`.
        #[arg(long, requires = "bless")]
        out: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Error> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::Domain(format!("bad grid value '{t}'")))
    };
    if let Some((a, b)) = s.split_once(':') {
        let (a, b) = (num(a)?, num(b)?);
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Domain("a decade range needs positive ends".into()));
        }
        let (ka, kb) = (a.log10().round() as i32, b.log10().round() as i32);
        let step = if kb >= ka { 1 } else { -1 };
        let mut out = Vec::new();
        let mut k = ka;
        loop {
            out.push(10f64.powi(k));
            if k == kb {
                break;
            }
            k += step;
        }
        Ok(out)
    } else {
        s.split(',').map(num).collect()
    }
}

fn vec_str(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn print_dichotomy(out: &mut impl Write, d: &DichotomyReport) -> io::Result<()> {
    let v = match d.verdict {
        Matching::Matched => "matched",
        Matching::Mismatched => "mismatched",
        Matching::Indeterminate => "indeterminate",
    };
    writeln!(
        out,
        "dichotomy     {v} ({} decaying, {} growing; {} initial, {} final conditions{})",
        d.decaying,
        d.growing,
        d.rank_b0,
        d.rank_b1,
        if d.frozen { "; frozen Jacobian" } else { "" }
    )?;
    if let Some(w) = &d.warning {
        writeln!(out, "warning       {w}")?;
    }
    Ok(())
}

fn print_report(out: &mut impl Write, p: &Problem, r: &ConditioningReport) -> io::Result<()> {
    let kind = match p.kind {
        stiffkit::problem::ProblemKind::Ivp => "ivp",
        stiffkit::problem::ProblemKind::Bvp => "bvp",
    };
    writeln!(out, "problem       {} ({kind}, m = {}, T = {})", p.name, p.dim, r.t_end)?;
    writeln!(out, "kappa         {:.6e}", r.kappa)?;
    writeln!(out, "gamma         {:.6e}", r.gamma)?;
    writeln!(out, "sigma         {:.6e}", r.sigma)?;
    writeln!(out, "T*            {:.6e}", r.transient_time)?;
    writeln!(out, "eta*          {}", vec_str(&r.eta_star))?;
    writeln!(out, "bounds        kappa <= {:.3e}, gamma <= {:.3e}", r.kappa_bound, r.gamma_bound)?;
    writeln!(out, "stiff         {}", yes(r.flags.stiff))?;
    writeln!(out, "ill-cond.     {}", yes(r.flags.ill_conditioned))?;
    if r.flags.oscillatory_variant_used {
        writeln!(out, "oscillatory   modulus-based gamma")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let opts = cli.global.options();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Analyze { source, json } => {
            let p = source.problem()?;
            let a = analyze(&p, &opts)?;
            if json {
                let text = serde_json::to_string_pretty(&(&a.report, &a.dichotomy)).map_err(|e| Error::Spec(e.to_string()))?;
                writeln!(out, "{text}")?;
            } else {
                print_report(&mut out, &p, &a.report)?;
                print_dichotomy(&mut out, &a.dichotomy)?;
            }
            let f = a.report.flags;
            Ok(if f.ill_conditioned {
                ExitCode::from(EXIT_ILL_CONDITIONED)
            } else if f.stiff {
                ExitCode::from(EXIT_STIFF)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Sweep { case, output, grid, jobs } => {
            if let Some(k) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build_global()
                    .map_err(|e| Error::Domain(e.to_string()))?;
            }
            let case = load_case(&case)?;
            let grid = grid.as_deref().map(parse_grid).transpose()?;
            let table = run_sweep(&case, grid.as_deref(), &opts);
            match output {
                Some(path) => write_sweep(&table, fs::File::create(path)?)?,
                None => write_sweep(&table, &mut out)?,
            }
            if let Some(slope) = table.scaling_slope().filter(|_| case.expected_scaling.is_some()) {
                eprintln!("slope of log sigma vs log(1/{}): {slope:.4}", case.sweep_param);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckDiscrete {
            source,
            method,
            n,
            mesh,
            tol_factor,
        } => {
            let p = source.problem()?;
            let mesh = match (n, mesh) {
                (_, Some(path)) => read_mesh(&fs::read_to_string(path)?)?,
                (Some(n), None) => Mesh::uniform(p.t_end, n)?,
                (None, None) => return Err(Error::Domain("give --n or --mesh".into())),
            };
            let c = check_discrete(&p, method, &mesh, tol_factor, &opts)?;
            writeln!(out, "method        {} (N = {})", c.method, c.intervals)?;
            writeln!(out, "kappa_c       {:.6e}", c.continuous.kappa)?;
            writeln!(out, "gamma_c       {:.6e}", c.continuous.gamma)?;
            writeln!(out, "kappa_d       {:.6e}", c.discrete.kappa)?;
            writeln!(out, "gamma_d       {:.6e}", c.discrete.gamma)?;
            writeln!(out, "sigma_d       {:.6e}", c.discrete.sigma)?;
            writeln!(out, "wr1 (kappa)   {}", if c.verdict.wr1 { "pass" } else { "fail" })?;
            writeln!(out, "wr2 (gamma)   {}", if c.verdict.wr2 { "pass" } else { "fail" })?;
            writeln!(out, "machine prec. {}", yes(c.discrete.machine_precision_reached))?;
            print_dichotomy(&mut out, &c.dichotomy)?;
            Ok(if c.verdict.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_REPRESENTED)
            })
        }
        Command::MeshSelect {
            source,
            n,
            mesh,
            tol_factor,
            max_rounds,
            output,
            history,
        } => {
            let p = source.problem()?;
            let initial = match mesh {
                Some(path) => read_mesh(&fs::read_to_string(path)?)?,
                None => Mesh::uniform(p.t_end, n)?,
            };
            let sel = select_mesh(&p, &initial, tol_factor, max_rounds, &opts)?;
            write_mesh(&sel.mesh, fs::File::create(&output)?)?;
            write_history(&sel, fs::File::create(&history)?)?;
            for r in &sel.history {
                writeln!(
                    out,
                    "round {:>2}  N = {:>6}  kappa_d {:.4e}  gamma_d {:.4e}  {}",
                    r.round,
                    r.intervals,
                    r.kappa_d,
                    r.gamma_d,
                    if r.verdict.pass() { "pass" } else { "fail" }
                )?;
            }
            writeln!(out, "converged     {}", yes(sel.converged))?;
            writeln!(out, "intervals     {}", sel.mesh.intervals())?;
            Ok(if sel.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_REPRESENTED)
            })
        }
        Command::ListProblems => {
            for name in CASES {
                let c = load_case(name)?;
                let grid: Vec<String> = c.grid.iter().map(|&g| fmt_f64(g)).collect();
                let params: Vec<String> = c.problem.params.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))).collect();
                writeln!(out, "{name:<16} {}", c.description)?;
                writeln!(out, "{:<16} params: {}", "", params.join(" "))?;
                if !c.sweep_param.is_empty() {
                    writeln!(out, "{:<16} sweep {}: {}", "", c.sweep_param, grid.join(" "))?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyGoldens { dir, bless: regen, out: target } => {
            if regen {
                let target = target.unwrap_or_else(|| dir.clone());
                for f in bless(&dir, &target, &opts)? {
                    writeln!(out, "wrote {}", Path::new(&target).join(f).display())?;
                }
                return Ok(ExitCode::SUCCESS);
            }
            let report = verify_goldens(&dir, &opts)?;
            write!(out, "{report}")?;
            Ok(if report.pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decade_ranges_run_either_way() {
        assert_eq!(parse_grid("1e-1:1e-3").unwrap(), vec![1e-1, 1e-2, 1e-3]);
        assert_eq!(parse_grid("1:100").unwrap(), vec![1.0, 10.0, 100.0]);
        assert_eq!(parse_grid("1, 2,5").unwrap(), vec![1.0, 2.0, 5.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a,1").is_err());
    }

    #[test]
    fn params_are_name_value_pairs() {
        assert_eq!(parse_kv("eps=1e-3").unwrap(), ("eps".into(), 1e-3));
        assert!(parse_kv("eps").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
