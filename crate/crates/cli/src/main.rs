use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use secidx::data_index::DataIndexer;
use secidx::hankel::{build_blocks, is_persistently_exciting, HankelBlocks};
use secidx::io::{load_system, load_trajectory, save_system, save_trajectory, Column, Report, ReportMeta};
use secidx::linsys::{
    build_platoon, generate_excitation, random_excitation, random_system, simulate_attacked, PlatoonConfig,
};
use secidx::{model_index, AttackSignal, ComponentLayout, Error, IndexResult, LtiSystem, Trajectory};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

/// Relative bound on constraint residuals and replayed output.
const VERIFY_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "secidx", version, about = "Model-based and data-driven security indices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Relative rank tolerance (default 1e-7).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads for the set searches.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (a directory for `generate`); stdout when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    /// Overwrite existing output.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a plant and write `system.json` and `data.csv` to the output directory.
    Generate(GenerateArgs),
    /// Check the input for persistency of excitation of order `n + 2L`.
    PeCheck(DataArgs),
    /// Model-based index from a system file.
    Delta(ModelArgs),
    /// Data-driven index by exhaustive search.
    Rho(SearchArgs),
    /// Greedy upper bound on the data-driven index.
    RhoBound(SearchArgs),
    /// All three indices side by side.
    Compare(CompareArgs),
    /// Build the data witness for one component set and check it.
    VerifyAttack(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Platoon with this many vehicles.
    #[arg(long, conflicts_with = "random")]
    platoon: Option<usize>,
    /// Random plant with `--n`, `--m`, `--p`.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    /// Protected sensors recorded in the system file.
    #[arg(long, default_value_t = 0)]
    nu: usize,
    #[arg(long, default_value_t = 0.7)]
    density: f64,
    /// Number of samples.
    #[arg(long = "N", default_value_t = 200)]
    n_samples: usize,
    /// Window length the data must support (PE order `n + 2L`).
    #[arg(long = "L", default_value_t = 10)]
    l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Trajectory CSV with header `k,u1..um,y1..yp`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "L")]
    l: usize,
    /// System file; supplies `ν` and enables the model index.
    #[arg(long)]
    system: Option<PathBuf>,
    /// Protected sensors (the last `ν` outputs); ignored when `--system` is given.
    #[arg(long)]
    nu: Option<usize>,
    /// State dimension bound for the PE order; estimated from the data when absent.
    #[arg(long = "n-hat")]
    n_hat: Option<usize>,
    /// Recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Selection {
    /// Largest component set examined.
    #[arg(long = "max-card")]
    max_card: Option<usize>,
    /// Restrict to these components (e.g. `u_1,y_3`).
    #[arg(long, value_delimiter = ',')]
    component: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    system: PathBuf,
    #[command(flatten)]
    select: Selection,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    select: Selection,
    /// Directory for plot-ready `index.csv` and `time.csv`.
    #[arg(long)]
    figures: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Attacked components, e.g. `u_5,y_9,y_10`.
    #[arg(long, value_delimiter = ',', required = true)]
    gamma: Vec<String>,
    /// Component that must be active.
    #[arg(long)]
    component: String,
    /// Tamper with one coefficient vector by this fraction of its largest entry (negative control).
    #[arg(long)]
    perturb: Option<f64>,
    /// Witness horizon `K`.
    #[arg(long)]
    horizon: Option<usize>,
}

/// Ways a run can end, mapped to exit codes.
enum Failure {
    Error(String),
    Check(String),
    NotExciting(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Error(_) | Failure::Check(_) => 1,
            Failure::NotExciting(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Error(m) | Failure::Check(m) | Failure::NotExciting(m) | Failure::Infeasible(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPersistentlyExciting { .. } => Failure::NotExciting(e.to_string()),
            Error::Infeasible(_) => Failure::Infeasible(e.to_string()),
            _ => Failure::Error(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Error(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors exit 1 so that 2 stays reserved for excitation failures
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("secidx: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if let Some(tol) = g.tol {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Failure::Error(format!("--tol must lie in (0, 1), got {tol}")));
        }
        secidx::linalg::set_rank_tolerance(Some(tol));
    }
    if let Some(threads) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Error(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate(a) => generate(g, a),
        Command::PeCheck(a) => pe_check(g, a),
        Command::Delta(a) => delta(g, a),
        Command::Rho(a) => search(g, a, &[Column::Rho]),
        Command::RhoBound(a) => search(g, a, &[Column::RhoUpper]),
        Command::Compare(a) => search(g, &a.search, &[Column::Delta, Column::Rho, Column::RhoUpper]),
        Command::VerifyAttack(a) => verify(g, a),
    }
}

fn check_fresh(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(Failure::Error(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

/// Writes `text` to `--output` or stdout.
fn emit(g: &Global, text: &str) -> Outcome {
    match &g.output {
        Some(path) => {
            check_fresh(path, g.force)?;
            fs::write(path, text)?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn generate(g: &Global, a: &GenerateArgs) -> Outcome {
    let dir = g
        .output
        .as_ref()
        .ok_or_else(|| Failure::Error("generate needs --output <dir>".into()))?;
    let (sys_path, data_path) = (dir.join("system.json"), dir.join("data.csv"));
    check_fresh(&sys_path, g.force)?;
    check_fresh(&data_path, g.force)?;
    let (sys, nu, ex) = match (a.platoon, a.random) {
        (Some(vehicles), false) => {
            let cfg = PlatoonConfig {
                n_vehicles: vehicles,
                n_samples: a.n_samples,
                seed: a.seed,
                ..Default::default()
            };
            let (sys, _) = build_platoon(&cfg)?;
            let ex = generate_excitation(&sys, &cfg, sys.n() + 2 * a.l)?;
            (sys, 0, ex)
        }
        (None, true) => {
            let sys = random_system(a.n, a.m, a.p, a.density, a.seed)?;
            ComponentLayout::for_system(&sys, a.nu)?;
            let ex = random_excitation(&sys, a.n_samples, a.n + 2 * a.l, a.seed)?;
            (sys, a.nu, ex)
        }
        _ => return Err(Failure::Error("choose exactly one of --platoon <vehicles> or --random".into())),
    };
    fs::create_dir_all(dir)?;
    save_system(&sys, nu, &sys_path)?;
    save_trajectory(&ex.trajectory, &data_path)?;
    let summary = json!({
        "system": sys_path,
        "data": data_path,
        "n": sys.n(), "m": sys.m(), "p": sys.p(), "nu": nu,
        "n_samples": ex.trajectory.len(),
        "pe_order": ex.pe.needed / sys.m().max(1),
        "pe_rank": ex.pe.rank,
        "seed": ex.seed,
        "attempts": ex.attempts,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain JSON"));
    Ok(())
}

/// Loaded data with its layout and PE verdict.
struct Loaded {
    sys: Option<LtiSystem>,
    layout: ComponentLayout,
    traj: Trajectory,
    blocks: HankelBlocks,
    n_hat: usize,
    n_hat_estimated: bool,
    pe_order: usize,
    pe_rank: usize,
    pe_ok: bool,
}

fn load(a: &DataArgs) -> Outcome<Loaded> {
    let traj = load_trajectory(&a.data)?;
    let (sys, layout) = match &a.system {
        Some(path) => {
            let (sys, layout) = load_system(path)?;
            if sys.m() != traj.m() || sys.p() != traj.p() {
                return Err(Failure::Error(format!(
                    "system has {} inputs / {} outputs, data has {} / {}",
                    sys.m(),
                    sys.p(),
                    traj.m(),
                    traj.p()
                )));
            }
            (Some(sys), layout)
        }
        None => (None, ComponentLayout::new(traj.m(), traj.p(), a.nu.unwrap_or(0))?),
    };
    let blocks = build_blocks(&traj, a.l, &layout)?;
    let (n_hat, n_hat_estimated) = match (a.n_hat, &sys) {
        (Some(n), _) => (n, false),
        (None, Some(s)) => (s.n(), false),
        (None, None) => (secidx::data_index::DataModel::new(&blocks)?.state_dim_estimate(), true),
    };
    let pe_order = n_hat + 2 * a.l;
    let pe = is_persistently_exciting(&traj.u, pe_order);
    Ok(Loaded {
        sys,
        layout,
        traj,
        blocks,
        n_hat,
        n_hat_estimated,
        pe_order,
        pe_rank: pe.rank,
        pe_ok: pe.exciting,
    })
}

fn require_pe(d: &Loaded, force: bool) -> Outcome {
    if d.pe_ok {
        return Ok(());
    }
    if force {
        log::warn!("input is not persistently exciting of order {}; continuing because of --force", d.pe_order);
        return Ok(());
    }
    Err(Failure::NotExciting(format!(
        "input is not persistently exciting of order {} (Hankel rank {} < {}); collect more samples",
        d.pe_order,
        d.pe_rank,
        d.traj.m() * d.pe_order
    )))
}

fn pe_check(g: &Global, a: &DataArgs) -> Outcome {
    let d = load(a)?;
    let report = json!({
        "n_samples": d.traj.len(),
        "L": a.l,
        "n_hat": d.n_hat,
        "n_hat_estimated": d.n_hat_estimated,
        "order": d.pe_order,
        "rank": d.pe_rank,
        "needed": d.traj.m() * d.pe_order,
        "exciting": d.pe_ok,
    });
    emit(g, &serde_json::to_string_pretty(&report).expect("plain JSON"))?;
    require_pe(&d, false)
}

fn components(layout: &ComponentLayout, labels: &[String]) -> Outcome<Vec<usize>> {
    if labels.is_empty() {
        return Ok(layout.components().collect());
    }
    labels.iter().map(|l| layout.parse_label(l).map_err(Failure::from)).collect()
}

fn render(g: &Global, report: &Report) -> Outcome<String> {
    Ok(match g.format {
        Format::Json => report.to_json()?,
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv writer emits UTF-8")
        }
    })
}

fn write_figures(dir: &Path, report: &Report, force: bool) -> Outcome {
    fs::create_dir_all(dir)?;
    let (index, time) = (dir.join("index.csv"), dir.join("time.csv"));
    check_fresh(&index, force)?;
    check_fresh(&time, force)?;
    report.write_index_figure(File::create(index)?)?;
    report.write_time_figure(File::create(time)?)?;
    Ok(())
}

fn meta(g: &Global, max_card: Option<usize>, seed: Option<u64>) -> ReportMeta {
    ReportMeta {
        tolerance: g.tol,
        max_card,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        ..Default::default()
    }
}

fn delta(g: &Global, a: &ModelArgs) -> Outcome {
    let (sys, layout) = load_system(&a.system)?;
    let mut report = Report::for_layout(&layout, meta(g, a.select.max_card, None));
    for i in components(&layout, &a.select.component)? {
        report.set(&layout, Column::Delta, &model_index::delta(&sys, &layout, i, a.select.max_card)?);
    }
    emit(g, &render(g, &report)?)
}

fn search(g: &Global, a: &SearchArgs, columns: &[Column]) -> Outcome {
    let d = load(&a.data)?;
    require_pe(&d, g.force)?;
    let sys = match (columns.contains(&Column::Delta), &d.sys) {
        (true, None) => return Err(Failure::Error("compare needs --system for the model index".into())),
        (_, s) => s.as_ref(),
    };
    let mut m = meta(g, a.select.max_card, a.data.seed);
    m.n_samples = d.traj.len();
    m.l = a.data.l;
    m.d = d.blocks.d;
    m.pe_order = d.pe_order;
    m.pe_rank = d.pe_rank;
    m.pe_ok = d.pe_ok;
    let mut report = Report::for_layout(&d.layout, m);
    let selected = components(&d.layout, &a.select.component)?;
    let indexer = DataIndexer::new(&d.blocks)?.with_cache();
    let mut mismatches = Vec::new();
    for &i in &selected {
        let mut values = Vec::new();
        for &col in columns {
            let res: IndexResult = match col {
                Column::Delta => model_index::delta(sys.expect("checked above"), &d.layout, i, a.select.max_card)?,
                Column::Rho => indexer.rho(i, a.select.max_card)?,
                Column::RhoUpper => indexer.rho_upper(i)?,
            };
            values.push(res.value);
            report.set(&d.layout, col, &res);
        }
        if let [delta, rho, upper] = values[..] {
            if rho.le(&upper) == Some(false) {
                mismatches.push(format!("{}: rho {rho} exceeds bound {upper}", d.layout.label(i)));
            }
            // capped values only count when the cap already separates them
            if delta.le(&rho) == Some(false) || rho.le(&delta) == Some(false) {
                mismatches.push(format!("{}: delta {delta} differs from rho {rho}", d.layout.label(i)));
            }
        }
    }
    if let Some(dir) = &a.figures {
        write_figures(dir, &report, g.force)?;
    }
    emit(g, &render(g, &report)?)?;
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(mismatches.join("; ")))
    }
}

/// Attack encoded by a coefficient sequence, rebuilt from the raw data windows.
fn attack_from_coefficients(blocks: &HankelBlocks, g: &DMatrix<f64>) -> Outcome<AttackSignal> {
    let layout = &blocks.layout;
    let (m, p, l) = (layout.m(), layout.p(), blocks.l);
    let windows = blocks.stacked() * g;
    let horizon = g.ncols() - 1;
    let steps = horizon + l;
    let mut a = DMatrix::zeros(m + p, steps);
    for t in 0..steps {
        let (k, lag) = if t <= horizon { (t, l) } else { (horizon, l + t - horizon) };
        for c in 0..m {
            a[(c, t)] = windows[(lag * m + c, k)];
        }
        for s in 0..layout.unprotected() {
            a[(layout.attack_column(m + s)?, t)] = -windows[(2 * l * m + lag * p + s, k)];
        }
    }
    Ok(AttackSignal::new(a, layout)?)
}

fn replay_ratio(sys: &LtiSystem, layout: &ComponentLayout, att: &AttackSignal) -> Outcome<f64> {
    let steps = att.len();
    let y = simulate_attacked(sys, layout, &DVector::zeros(sys.n()), &DMatrix::zeros(sys.m(), steps), att)?;
    Ok(y.amax() / att.norm_inf().max(f64::MIN_POSITIVE))
}

fn verify(g: &Global, a: &VerifyArgs) -> Outcome {
    let d = load(&a.data)?;
    require_pe(&d, g.force)?;
    let i = d.layout.parse_label(&a.component)?;
    let gamma = components(&d.layout, &a.gamma)?;
    if !gamma.contains(&i) {
        return Err(Failure::Error(format!("{} is not in --gamma", a.component)));
    }
    let mut w = DataIndexer::new(&d.blocks)?.witness(&gamma, i, a.horizon)?;
    if let Some(eps) = a.perturb {
        // tamper with one coefficient vector in the middle of the sequence
        let k = w.g.ncols() / 2;
        let size = eps * w.g.amax();
        w.g[(0, k)] += size;
    }
    let res = w.residuals(&d.blocks)?;
    let label = |js: &[usize]| js.iter().map(|&j| d.layout.label(j)).collect::<Vec<_>>();
    let mut report = json!({
        "gamma": label(&w.gamma.gamma),
        "component": d.layout.label(i),
        "horizon": w.horizon(),
        "active_step": w.active_step,
        "perturbed": a.perturb,
        "residuals": {
            "anchor": res.anchor,
            "shift": res.shift,
            "protected": res.protected,
            "outside": res.outside,
            "active": res.active,
        },
        "max_residual": res.max_violation(),
    });
    let mut ok = res.max_violation() <= VERIFY_TOLERANCE && res.active > VERIFY_TOLERANCE;
    if let Some(sys) = &d.sys {
        let attack = attack_from_coefficients(&d.blocks, &w.g)?;
        let replay = replay_ratio(sys, &d.layout, &attack)?;
        report["support"] = json!(label(&attack.support));
        report["replay_relative_output"] = json!(replay);
        ok &= replay <= VERIFY_TOLERANCE;
    }
    report["verified"] = json!(ok);
    emit(g, &serde_json::to_string_pretty(&report).expect("plain JSON"))?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "witness failed verification (max residual {:.3e})",
            res.max_violation()
        )))
    }
}
