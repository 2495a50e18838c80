use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use hdffm::bench::{self, BenchSpec};
use hdffm::estimate::{fit_factors, goodness_of_fit};
use hdffm::fbasis::mortality::{ingest_mortality, read_mortality_csv, EVAL_AGES};
use hdffm::fbasis::{build_bspline, BSplineBasis};
use hdffm::forecast::{cf_forecast, rolling_origin, tnh_forecast, ForecastConfig, Method, RollingScore};
use hdffm::io::{self, FitFile, ForecastFile, Manifest, SeriesForecast, TraceFile, TruthFile};
use hdffm::select::{abc_select_r, select_r_fixed, AbcConfig, PenaltyKind};
use hdffm::simulate::{gen_dgp, DgpConfig};
use hdffm::{Error, Panel, Result};

/// Factor models for panels of scalar and functional time series.
#[derive(Parser)]
#[command(name = "hdffm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a simulated panel and its ground truth.
    Simulate {
        /// DGP configuration (JSON); omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the replication seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth output (factors, loadings, AR coefficients).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit k factors by principal components.
    Estimate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select the number of factors.
    SelectR {
        #[arg(long)]
        panel: PathBuf,
        /// Fixed tuning constant; without it the permutation procedure picks c.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, default_value = "IC2a")]
        penalty: PenaltyKind,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Selection trace (JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Variance profile (CSV).
        #[arg(long)]
        variance_csv: Option<PathBuf>,
    },
    /// Run a Monte Carlo grid and write per-replication errors.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Keep existing rows and compute only the missing ones.
        #[arg(long)]
        resume: bool,
    },
    /// Forecast a panel or a mortality table.
    Forecast {
        /// Panel JSON or scalar CSV.
        #[arg(long, conflicts_with = "mortality", required_unless_present = "mortality")]
        panel: Option<PathBuf>,
        /// Mortality CSV (prefecture_id, year, sex, age, rate).
        #[arg(long)]
        mortality: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::Tnh)]
        method: MethodArg,
        /// Forecast horizons; repeat or separate by commas.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        horizon: Vec<usize>,
        /// Principal components per series for the componentwise method.
        #[arg(long, default_value_t = 6)]
        n_components: usize,
        #[arg(long, default_value_t = 5)]
        p_max: usize,
        #[arg(long, default_value = "IC2a")]
        penalty: PenaltyKind,
        /// Use this many factors instead of selecting.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First training length for rolling-origin evaluation
        /// (default 26 for mortality input, none for panels).
        #[arg(long)]
        first_origin: Option<usize>,
        /// Basis dimension for mortality curves.
        #[arg(long, default_value_t = 9)]
        basis_dim: usize,
        /// Forecast output (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// MAFE/MSFE table (CSV).
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Tnh,
    Cf,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Tnh => "tnh",
            MethodArg::Cf => "cf",
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HDFFM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidInput(format!("HDFFM_THREADS must be a positive integer, got {v:?}")))?;
        // Ignore a pool that is already initialised.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, seed, out, truth } => cmd_simulate(config.as_deref(), seed, &out, truth.as_deref()),
        Command::Estimate { panel, k, out } => cmd_estimate(&panel, k, out.as_deref()),
        Command::SelectR { panel, c, penalty, k_max, seed, trace, variance_csv } => {
            cmd_select_r(&panel, c, penalty, k_max, seed, trace.as_deref(), variance_csv.as_deref())
        }
        Command::Bench { spec, resume } => cmd_bench(&spec, resume),
        Command::Forecast {
            panel,
            mortality,
            method,
            horizon,
            n_components,
            p_max,
            penalty,
            r,
            seed,
            first_origin,
            basis_dim,
            out,
            table,
        } => {
            if horizon.is_empty() || horizon.contains(&0) {
                return Err(Error::InvalidInput("forecast horizons must be >= 1".into()));
            }
            let opts = ForecastOpts { method, horizons: horizon, n_components, p_max, penalty, r, seed };
            match (panel, mortality) {
                (Some(p), None) => cmd_forecast_panel(&p, &opts, first_origin, out.as_deref(), table.as_deref()),
                (None, Some(m)) => {
                    cmd_forecast_mortality(&m, &opts, first_origin.unwrap_or(26), basis_dim, out.as_deref(), table.as_deref())
                }
                _ => Err(Error::InvalidInput("give exactly one of --panel and --mortality".into())),
            }
        }
    }
}

fn cmd_simulate(config: Option<&Path>, seed: Option<u64>, out: &Path, truth: Option<&Path>) -> Result<()> {
    let mut cfg: DgpConfig = match config {
        Some(p) => io::read_json(p)?,
        None => DgpConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (panel, gt) = gen_dgp(&cfg)?;
    let manifest = Manifest::new("simulate").with("config", &cfg);
    io::write_panel(out, &panel, Some(manifest.clone()))?;
    if let Some(t) = truth {
        io::write_json(t, &TruthFile::from_truth(&gt, manifest.clone()))?;
    }
    println!("{}", serde_json::to_string(&manifest)?);
    Ok(())
}

fn cmd_estimate(panel_path: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    let (panel, input_manifest) = read_panel_with_manifest(panel_path)?;
    let fit = fit_factors(&panel, k)?;
    let v = goodness_of_fit(&panel, k)?;
    println!("k = {k}");
    println!("V(k) = {v:e}");
    for (l, lam) in fit.lambda_hat.iter().enumerate() {
        println!("lambda_hat[{}] = {lam:e}", l + 1);
    }
    if let Some(o) = out {
        let manifest = Manifest::new("estimate")
            .with("panel", panel_path)
            .with("k", k)
            .with("input_manifest", input_manifest);
        io::write_json(o, &FitFile::from_fit(&fit, v, manifest))?;
    }
    Ok(())
}

fn read_panel_with_manifest(path: &Path) -> Result<(Panel, Option<Manifest>)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok((io::read_panel(path)?, None));
    }
    let file: io::PanelFile = io::read_json(path)?;
    Ok((file.to_panel()?, file.manifest))
}

fn cmd_select_r(
    panel_path: &Path,
    c: Option<f64>,
    penalty: PenaltyKind,
    k_max: usize,
    seed: u64,
    trace_path: Option<&Path>,
    variance_path: Option<&Path>,
) -> Result<()> {
    let panel = io::read_panel(panel_path)?;
    let manifest = Manifest::new("select-r")
        .with("panel", panel_path)
        .with("penalty", penalty)
        .with("k_max", k_max)
        .with("c", c)
        .with("seed", seed);
    match c {
        Some(c) => {
            if trace_path.is_some() || variance_path.is_some() {
                return Err(Error::InvalidInput("a fixed --c produces no selection trace".into()));
            }
            println!("{}", select_r_fixed(&panel, c, penalty, k_max)?);
        }
        None => {
            let cfg = AbcConfig { k_max, ..AbcConfig::reference(panel.n(), panel.t(), seed) };
            let (r, trace) = abc_select_r(&panel, &cfg, penalty)?;
            if let Some(v) = variance_path {
                fs::write(v, manifest.csv_comment() + &trace.variance_csv()?)?;
            }
            if let Some(t) = trace_path {
                io::write_json(t, &TraceFile { r_hat: r, trace, manifest })?;
            }
            println!("{r}");
        }
    }
    Ok(())
}

fn cmd_bench(spec_path: &Path, resume: bool) -> Result<()> {
    let mut spec: BenchSpec = io::read_json(spec_path)?;
    if spec.output.is_relative() {
        if let Some(dir) = spec_path.parent() {
            spec.output = dir.join(&spec.output);
        }
    }
    let written = bench::write_bench(&spec, resume)?;
    println!("wrote {written} rows to {}", spec.output.display());
    if spec.selection.is_some() {
        let rows = bench::run_selection(&spec)?;
        let path = spec.output.with_extension("selection.csv");
        fs::write(&path, bench::selection_csv(&spec, &rows))?;
        println!("dgp,N,T,replications,under,over");
        for s in bench::summarize_selection(&rows, DgpConfig::default().n_factors) {
            println!("{},{},{},{},{},{}", s.dgp, s.n, s.t, s.replications, s.under, s.over);
        }
    }
    Ok(())
}

struct ForecastOpts {
    method: MethodArg,
    horizons: Vec<usize>,
    n_components: usize,
    p_max: usize,
    penalty: PenaltyKind,
    r: Option<usize>,
    seed: u64,
}

impl ForecastOpts {
    fn config(&self, h: usize) -> ForecastConfig {
        ForecastConfig {
            horizon: h,
            p_max: self.p_max,
            abc: None,
            abc_seed: self.seed,
            penalty: self.penalty,
            fixed_r: self.r,
        }
    }

    fn method(&self) -> Method {
        match self.method {
            MethodArg::Tnh => Method::Tnh,
            MethodArg::Cf => Method::Cf { n_components: self.n_components },
        }
    }

    fn manifest(&self, input: &Path, first_origin: Option<usize>) -> Manifest {
        Manifest::new("forecast")
            .with("input", input)
            .with("method", self.method.name())
            .with("horizons", &self.horizons)
            .with("n_components", self.n_components)
            .with("p_max", self.p_max)
            .with("penalty", self.penalty)
            .with("r", self.r)
            .with("seed", self.seed)
            .with("first_origin", first_origin)
    }

    /// End-of-sample forecast for horizon `h`.
    fn forecast(&self, panel: &Panel, h: usize) -> Result<(Vec<DVector<f64>>, Option<usize>)> {
        match self.method {
            MethodArg::Tnh => {
                let f = tnh_forecast(panel, &self.config(h))?;
                Ok((f.forecast, Some(f.r_hat)))
            }
            MethodArg::Cf => Ok((cf_forecast(panel, h, self.n_components, self.p_max)?, None)),
        }
    }
}

struct TableRow {
    label: String,
    score: RollingScore,
}

fn write_table(path: Option<&Path>, manifest: &Manifest, method: &str, rows: &[TableRow]) -> Result<()> {
    let mut text = String::from("label,method,h,origins,mafe,msfe\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{:e},{:e}\n",
            r.label, method, r.score.h, r.score.origins, r.score.mafe, r.score.msfe
        ));
    }
    print!("{text}");
    if let Some(p) = path {
        fs::write(p, manifest.csv_comment() + &text)?;
    }
    Ok(())
}

fn cmd_forecast_panel(
    path: &Path,
    opts: &ForecastOpts,
    first_origin: Option<usize>,
    out: Option<&Path>,
    table: Option<&Path>,
) -> Result<()> {
    let panel = io::read_panel(path)?;
    let manifest = opts.manifest(path, first_origin);
    let mut files = Vec::new();
    for &h in &opts.horizons {
        let (fc, r_hat) = opts.forecast(&panel, h)?;
        files.push(ForecastFile {
            method: opts.method.name().into(),
            horizon: h,
            r_hat,
            label: None,
            forecasts: fc
                .iter()
                .enumerate()
                .map(|(i, c)| SeriesForecast { series: i, coefficients: c.iter().copied().collect(), grid_values: None })
                .collect(),
            manifest: manifest.clone(),
        });
    }
    if let Some(o) = out {
        io::write_json(o, &files)?;
    }
    if let Some(first) = first_origin {
        let rows = opts
            .horizons
            .iter()
            .map(|&h| {
                let score = rolling_origin(
                    &panel,
                    opts.method(),
                    &opts.config(h),
                    first,
                    |_, c| c.iter().copied().collect(),
                    |i, t| panel.coeff(i, t),
                )?;
                Ok(TableRow { label: "panel".into(), score })
            })
            .collect::<Result<Vec<_>>>()?;
        write_table(table, &manifest, opts.method.name(), &rows)?;
    } else {
        for f in &files {
            println!("h = {}: forecast of {} series written", f.horizon, f.forecasts.len());
        }
    }
    Ok(())
}

fn grid_values(basis: &BSplineBasis, coeffs: &DVector<f64>) -> Vec<f64> {
    (0..EVAL_AGES).map(|a| basis.evaluate(coeffs.as_slice(), a as f64)).collect()
}

fn cmd_forecast_mortality(
    path: &Path,
    opts: &ForecastOpts,
    first_origin: usize,
    basis_dim: usize,
    out: Option<&Path>,
    table: Option<&Path>,
) -> Result<()> {
    let records = read_mortality_csv(fs::File::open(path)?)?;
    let basis = build_bspline((0.0, 95.0), basis_dim, 4)?;
    let panels = ingest_mortality(&records, &basis)?;
    let manifest = opts.manifest(path, Some(first_origin)).with("basis_dim", basis_dim);
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for mp in &panels {
        for &h in &opts.horizons {
            let (fc, r_hat) = opts.forecast(&mp.panel, h)?;
            files.push(ForecastFile {
                method: opts.method.name().into(),
                horizon: h,
                r_hat,
                label: Some(mp.sex.clone()),
                forecasts: fc
                    .iter()
                    .enumerate()
                    .map(|(i, c)| SeriesForecast {
                        series: i,
                        coefficients: c.iter().copied().collect(),
                        grid_values: Some(grid_values(&basis, c)),
                    })
                    .collect(),
                manifest: manifest.clone(),
            });
            let score = rolling_origin(
                &mp.panel,
                opts.method(),
                &opts.config(h),
                first_origin,
                |_, c| grid_values(&basis, c),
                |i, t| mp.eval_values(i, t),
            )?;
            rows.push(TableRow { label: mp.sex.clone(), score });
        }
    }
    if let Some(o) = out {
        io::write_json(o, &files)?;
    }
    write_table(table, &manifest, opts.method.name(), &rows)
}
