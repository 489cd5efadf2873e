//! `cochlea`: fit, train, build tables, simulate and analyze.
//!
//! Exit codes: 0 ok, 2 bad input or configuration, 3 numerical failure,
//! 4 acceptance failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{builder::PossibleValuesParser, Args, Parser, Subcommand, ValueEnum};

use cochlea_tl::filter::{fit_filter, write_diagnostics_csv, FitDiagnostics, PoleFilter};
use cochlea_tl::harness::acceptance::{run_acceptance, AcceptanceConfig};
use cochlea_tl::harness::analysis::{q10, sliding_gaussian_response, GrowthCurve};
use cochlea_tl::harness::experiments::{click_spectrum_db, tone_level_db, Runner, Variant};
use cochlea_tl::harness::io::{read_traces, write_traces, RunManifest, TraceFormat};
use cochlea_tl::harness::stimulus::{StimulusKind, StimulusSpec};
use cochlea_tl::lut::{build_lut, verify_lut, FilterLut};
use cochlea_tl::params::omega_bm_of;
use cochlea_tl::rbf::{train_rbf, RbfNet, TrainConfig, WkbTargets};
use cochlea_tl::tl::{TlConfig, TlModel};
use cochlea_tl::wkb::beta_target;
use cochlea_tl::{Error, ModelParams};

#[derive(Parser)]
#[command(name = "cochlea", version, about = "Nonlinear cochlear transmission-line toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit all-pole correction filters to WKB targets.
    Fit(FitArgs),
    /// Train the correction network.
    Train(TrainArgs),
    /// Build, verify or inspect a filter table.
    Lut {
        #[command(subcommand)]
        command: LutCommand,
    },
    /// Run a tone, chirp or click through the line.
    Sim(SimArgs),
    /// Analyze saved runs.
    Analyze(AnalyzeArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model parameter file (TOML).
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<ModelParams, Error> {
        match &self.params {
            Some(p) => ModelParams::load(p),
            None => Ok(ModelParams::default()),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Characteristic frequencies to fit (Hz).
    #[arg(long = "cf", default_values_t = [20000.0])]
    cf_hz: Vec<f64>,
    /// Feedback strengths to fit; defaults to G_min, G_ref and G_max.
    #[arg(long = "g")]
    g: Vec<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    stage1_steps: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    /// Network file to write (JSON).
    #[arg(long, default_value = "net.json")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum LutCommand {
    /// Evaluate a trained network on every section and G step.
    Build {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value = "filters.blut")]
        out: PathBuf,
    },
    /// Check the checksum, DC gain and stability of a table.
    Verify {
        #[arg(long)]
        lut: PathBuf,
    },
    /// Print a table's header, or one entry.
    Inspect {
        #[arg(long)]
        lut: PathBuf,
        #[arg(long)]
        section: Option<usize>,
        /// G step index.
        #[arg(long, default_value_t = 0)]
        g_index: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    V1d,
    Vstar,
}

#[derive(Clone, Copy, ValueEnum)]
enum StimulusArg {
    Tone,
    Chirp,
    Click,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    model: ModelArgs,
    /// Transmission-line configuration (TOML).
    #[arg(long)]
    tl_config: Option<PathBuf>,
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tone")]
    stimulus: StimulusArg,
    /// dB SPL (RMS for tones and chirps, peak for clicks).
    #[arg(long, default_value_t = 60.0)]
    level: f64,
    #[arg(long, default_value_t = 20000.0)]
    freq: f64,
    #[arg(long, default_value_t = 5000.0)]
    f_start: f64,
    #[arg(long, default_value_t = 30000.0)]
    f_end: f64,
    /// Seconds.
    #[arg(long, default_value_t = 0.03)]
    duration: f64,
    /// Sections to record; defaults to the calibration place.
    #[arg(long, value_delimiter = ',')]
    record: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    decimation: usize,
    /// Filter update period in base steps.
    #[arg(long, value_parser = PossibleValuesParser::new(["1", "6", "12"]))]
    update_period: Option<String>,
    /// Recorded in the manifest; simulation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directories written by `sim`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Recorded section to analyze; defaults to the first.
    #[arg(long)]
    section: Option<usize>,
    /// Gaussian window width for chirps (s).
    #[arg(long, default_value_t = 2e-3)]
    sigma: f64,
    /// Frequency points for chirp responses.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Reuse a trained network instead of training one.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scratch directory; a temporary one when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Numerical(String),
    Acceptance(Vec<u8>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Train(a) => train(a),
        Command::Lut { command } => lut(command),
        Command::Sim(a) => sim(a),
        Command::Analyze(a) => analyze(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Acceptance(ids)) => {
            eprintln!("acceptance failed: criteria {ids:?}");
            ExitCode::from(4)
        }
    }
}

fn fit(a: FitArgs) -> CliResult {
    let p = a.model.load()?;
    let gs = if a.g.is_empty() {
        vec![p.g_min, p.g_ref, p.g_max]
    } else {
        a.g.clone()
    };
    let mut filters: Vec<PoleFilter> = Vec::new();
    let mut diags: Vec<FitDiagnostics> = Vec::new();
    for &cf in &a.cf_hz {
        let omega_bm = omega_bm_of(2.0 * std::f64::consts::PI * cf);
        for &g in &gs {
            let beta = beta_target(omega_bm, g, &p)?;
            let (f, d) = fit_filter(&beta, omega_bm, g, &p)?;
            println!(
                "cf {cf:.0} Hz G {g:.3}: cost {:.4e}, max |z| {:.4}, {} iterations",
                d.cost, d.max_pole_radius, d.iterations
            );
            filters.push(f);
            diags.push(d);
        }
    }
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let fpath = a.out.join("filters.json");
    let json = serde_json::to_string_pretty(&filters).map_err(|e| Failure::Numerical(e.to_string()))?;
    fs::write(&fpath, json).map_err(io_err(&fpath))?;
    let dpath = a.out.join("fit_diagnostics.csv");
    let file = fs::File::create(&dpath).map_err(io_err(&dpath))?;
    write_diagnostics_csv(file, &diags).map_err(io_err(&dpath))?;
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let p = a.model.load()?;
    let mut cfg = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(s) = a.stage1_steps {
        cfg.stage1_steps = s;
    }
    if let Some(s) = a.stage2_steps {
        cfg.stage2_steps = s;
    }
    let (net, report) = train_rbf(&WkbTargets { params: &p }, &p, &cfg)?;
    fs::write(&a.out, net.to_json()).map_err(io_err(&a.out))?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "seed {}: stage-1 loss {:.4e}, stage-2 cost {:.4e}; wrote {}",
        a.seed,
        last(&report.stage1_loss),
        last(&report.stage2_cost),
        a.out.display()
    );
    Ok(())
}

fn lut(cmd: LutCommand) -> CliResult {
    match cmd {
        LutCommand::Build { model, net, out } => {
            let p = model.load()?;
            let text = fs::read_to_string(&net).map_err(io_err(&net))?;
            let lut = build_lut(&RbfNet::from_json(&text)?, &p)?;
            lut.write(&out)?;
            println!(
                "{} sections x {} G steps, order {}, crc {:08x}; wrote {}",
                lut.n_sections,
                lut.n_g,
                lut.k,
                lut.checksum(),
                out.display()
            );
            Ok(())
        }
        LutCommand::Verify { lut } => {
            let table = FilterLut::read(&lut)?;
            let r = verify_lut(&table);
            println!("entries            {}", r.entries);
            println!("crc                {:08x}", r.checksum);
            println!("max |beta(0) - 1|  {:.3e}", r.max_dc_error);
            println!("max pole radius    {:.6}", r.max_pole_radius);
            println!("unstable entries   {}", r.unstable.len());
            println!("max adjacent step  {:.3} dB", r.max_adjacent_peak_db);
            if r.ok() {
                Ok(())
            } else {
                Err(Failure::Numerical("table fails the DC or stability check".into()))
            }
        }
        LutCommand::Inspect { lut, section, g_index } => {
            let t = FilterLut::read(&lut)?;
            println!(
                "sections {} G steps {} order {} G range [{}, {}] crc {:08x}",
                t.n_sections,
                t.n_g,
                t.k,
                t.g_min,
                t.g_max,
                t.checksum()
            );
            if let Some(n) = section {
                if n >= t.n_sections || g_index >= t.n_g {
                    return Err(Failure::Config(format!("entry ({n}, {g_index}) outside the table")));
                }
                let (b, eps) = t.coefficients(n, g_index);
                println!("section {n} G {:.4}: eps {eps}", t.g_value(g_index));
                for (j, x) in b.iter().enumerate() {
                    println!("b[{}] {x}", j + 1);
                }
            }
            Ok(())
        }
    }
}

fn sim(a: SimArgs) -> CliResult {
    let p = a.model.load()?;
    let tl = match &a.tl_config {
        Some(path) => TlConfig::load(path)?,
        None => TlConfig::default(),
    };
    let spec = match a.stimulus {
        StimulusArg::Tone => StimulusSpec::tone(a.freq, a.level, a.duration, p.fs),
        StimulusArg::Chirp => StimulusSpec::chirp(a.f_start, a.f_end, a.level, a.duration, p.fs),
        StimulusArg::Click => StimulusSpec::click(a.level, a.duration, p.fs),
    };
    spec.validate()?;
    if a.decimation == 0 {
        return Err(Failure::Config("decimation must be at least 1".into()));
    }
    let model = TlModel::new(p.clone(), tl.clone())?;
    let (variant, table) = match (a.mode, &a.lut) {
        (Mode::V1d, _) => (Variant::V1d, None),
        (Mode::Vstar, Some(path)) => (Variant::Vstar, Some(FilterLut::read(path)?)),
        (Mode::Vstar, None) => return Err(Failure::Config("--mode vstar needs --lut".into())),
    };
    let mut runner = Runner::new(&model, variant, table.as_ref())?;
    if let Some(u) = &a.update_period {
        runner = runner.with_update_period(u.parse().expect("restricted by the parser"));
    }
    let record = if a.record.is_empty() {
        vec![runner.cf_section()]
    } else {
        a.record.clone()
    };
    let opts = runner.options(record).with_decimation(a.decimation);
    let traces = model.simulate(&spec.generate()?, &opts)?;

    let format = match a.format {
        FormatArg::Csv => TraceFormat::Csv,
        FormatArg::Bin => TraceFormat::Bin,
    };
    let path = write_traces(&a.out, "trace", &traces, format)?;
    let name = match variant {
        Variant::V1d => "v1d",
        Variant::Vstar => "vstar",
    };
    let mut manifest = RunManifest::new(name, spec, p, tl, runner.update_period);
    manifest.decimation = a.decimation;
    manifest.seed = a.seed;
    manifest.lut_checksum = table.as_ref().map(|t| format!("{:08x}", t.checksum()));
    manifest.add_file(&path)?;
    manifest.write(&a.out.join("manifest.json"))?;
    let c = runner.calibration;
    println!(
        "{name}: knees {:.2}/{:.2} dB re 1 m/s at {:.0} Hz (section {}); {} samples x {} sections, max {} substeps; wrote {}",
        c.v_knee1_db,
        c.v_knee2_db,
        c.cf_hz,
        c.section,
        traces.len(),
        traces.sections.len(),
        traces.max_substeps,
        path.display()
    );
    Ok(())
}

struct Run {
    manifest: RunManifest,
    v: Vec<f64>,
}

fn load_run(dir: &Path, section: Option<usize>) -> Result<Run, Failure> {
    let manifest = RunManifest::read(&dir.join("manifest.json"))?;
    let file = manifest
        .files
        .first()
        .ok_or_else(|| Failure::Config(format!("{}: manifest lists no trace file", dir.display())))?;
    let tr = read_traces(&dir.join(&file.name))?;
    let row = match section {
        Some(n) => tr
            .row(n)
            .ok_or_else(|| Failure::Config(format!("section {n} was not recorded in {}", dir.display())))?,
        None => 0,
    };
    let v = tr
        .v
        .into_iter()
        .nth(row)
        .ok_or_else(|| Failure::Config(format!("{}: empty trace", dir.display())))?;
    Ok(Run { manifest, v })
}

/// Stimulus description at the trace's sampling rate.
fn trace_spec(m: &RunManifest) -> StimulusSpec {
    StimulusSpec {
        fs: m.trace_fs(),
        ..m.stimulus.clone()
    }
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let runs = a
        .runs
        .iter()
        .map(|d| load_run(d, a.section))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::new();
    let kinds: Vec<&StimulusKind> = runs.iter().map(|r| &r.manifest.stimulus.kind).collect();
    if kinds.iter().all(|k| matches!(k, StimulusKind::Tone { .. })) {
        let mut rows: Vec<(f64, f64)> = runs
            .iter()
            .map(|r| Ok((r.manifest.stimulus.level_db, tone_level_db(&r.v, &trace_spec(&r.manifest))?)))
            .collect::<Result<_, Error>>()?;
        rows.sort_by(|x, y| x.0.total_cmp(&y.0));
        out.push_str("level_db,response_db,gain_db\n");
        for (l, d) in &rows {
            out.push_str(&format!("{l},{d},{}\n", d - l));
        }
        if rows.len() >= 4 {
            let curve = GrowthCurve {
                levels_db: rows.iter().map(|r| r.0).collect(),
                response_db: rows.iter().map(|r| r.1).collect(),
            };
            let a_slope = runs[0].manifest.params.a;
            match curve.analyze((1.0 + a_slope) / 2.0, None) {
                Ok(g) => out.push_str(&format!(
                    "# low slope {:.3}, mid slope {:.3}, compressive {:.1}-{:.1} dB ({:.1} dB span), compression {:.1} dB\n",
                    g.low_slope,
                    g.mid_slope,
                    g.compression_start_db,
                    g.compression_end_db,
                    g.span_db(),
                    g.compression_db
                )),
                Err(e) => out.push_str(&format!("# no compressive region found: {e}\n")),
            }
        }
    } else if runs.len() == 1 {
        let r = &runs[0];
        let spec = trace_spec(&r.manifest);
        match spec.kind {
            StimulusKind::Chirp { f_start_hz, f_end_hz } => {
                // keep the ±3σ window inside the trace
                let edge = 3.0 * a.sigma + 1.0 / spec.fs;
                let rate = (f_end_hz - f_start_hz) / spec.duration_s;
                let (lo, hi) = (f_start_hz + rate * edge, f_end_hz - rate * edge);
                if a.points < 3 || (hi - lo) * rate <= 0.0 {
                    return Err(Failure::Config("chirp too short for the analysis window".into()));
                }
                let freqs: Vec<f64> = (0..a.points)
                    .map(|i| lo + (hi - lo) * i as f64 / (a.points - 1) as f64)
                    .collect();
                let resp = sliding_gaussian_response(&r.v, spec.fs, &spec, a.sigma, &freqs)?;
                let q = q10(&resp.freqs_hz, &resp.mag_db)?;
                out.push_str("freq_hz,re_snd_db,re_max_db\n");
                for ((f, d), m) in resp.freqs_hz.iter().zip(&resp.mag_db).zip(resp.re_max()) {
                    out.push_str(&format!("{f},{d},{m}\n"));
                }
                out.push_str(&format!(
                    "# Q10 {:.3} at {:.0} Hz (flanks {:.0}-{:.0} Hz){}\n",
                    q.q,
                    q.f_peak,
                    q.f_lo,
                    q.f_hi,
                    if q.partial { ", partial" } else { "" }
                ));
            }
            StimulusKind::Click { .. } => {
                let p = spec.pressure();
                let v: Vec<f64> = r.v.iter().map(|x| x / p).collect();
                let (f, db) = click_spectrum_db(&v, spec.fs);
                out.push_str("freq_hz,re_pa_db\n");
                for (f, d) in f.iter().zip(&db) {
                    out.push_str(&format!("{f},{d}\n"));
                }
            }
            StimulusKind::Tone { .. } => unreachable!("handled above"),
        }
    } else {
        return Err(Failure::Config("several runs can only be analyzed together when all are tones".into()));
    }
    match &a.out {
        Some(path) => fs::write(path, out).map_err(io_err(path)),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Failure::Config(e.to_string())),
    }
}

fn verify(a: VerifyArgs) -> CliResult {
    let scratch = match &a.out {
        Some(p) => {
            fs::create_dir_all(p).map_err(io_err(p))?;
            p.clone()
        }
        None => std::env::temp_dir().join(format!("cochlea-verify-{}", std::process::id())),
    };
    let mut cfg = AcceptanceConfig::new(scratch.clone());
    cfg.train.seed = a.seed;
    if let Some(path) = &a.net {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        cfg.net = Some(RbfNet::from_json(&text)?);
    }
    let results = run_acceptance(&cfg, |r| println!("{r}"));
    if a.out.is_none() {
        let _ = fs::remove_dir_all(&scratch);
    }
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(failed))
    }
}
