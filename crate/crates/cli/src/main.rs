use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crossview::bench::run_bench;
use crossview::container::write_atomic;
use crossview::dataset::{load_dataset, save_dataset, synth_crossview, FeatureFormat, SynthConfig, Warp};
use crossview::eval::{run_protocol, Method, MultiShotPolicy, ProtocolOptions};
use crossview::kernels::KernelChoice;
use crossview::kissme::KissmeOptions;
use crossview::kxqda::{kxqda_fit, KxqdaOptions};
use crossview::selftest::{run_selftest, Fault, SelftestOptions};
use crossview::xqda::{xqda_fit, XqdaOptions, DEFAULT_RIDGE};
use crossview::{Error, ErrorKind, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(name = "crossview", version, about = "Cross-view metric learning: KISSME, XQDA and kernel XQDA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-view dataset.
    Synth(SynthArgs),
    /// Fit a model on a dataset directory and save it.
    Train(TrainArgs),
    /// Run the repeated half-split protocol and report CMC accuracy.
    Eval(EvalArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
    /// Time xqda_fit against kxqda_fit over a grid of sizes.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print only errors.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classes: Option<usize>,
    /// Samples per class in each view.
    #[arg(long)]
    per_view: Option<usize>,
    #[arg(long)]
    per_view_x: Option<usize>,
    #[arg(long)]
    per_view_z: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// none, affine or quadratic.
    #[arg(long)]
    warp: Option<String>,
    #[arg(long)]
    warp_strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Gallery-only identities added to view Z.
    #[arg(long)]
    distractors: Option<usize>,
    /// csv or bin.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// kissme, xqda or kxqda.
    #[arg(long)]
    method: Option<String>,
    /// linear, rbf or poly.
    #[arg(long)]
    kernel: Option<String>,
    /// RBF gamma or `auto`.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    offset: Option<f64>,
    /// Polynomial scale or `auto` (1/d).
    #[arg(long)]
    scale: Option<String>,
    /// k-XQDA ridge on Λ_S.
    #[arg(long)]
    lambda: Option<f64>,
    /// XQDA / KISSME ridge, relative to the scatter trace.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    max_b: Option<usize>,
    /// KISSME PCA dimension.
    #[arg(long)]
    pca_dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    method: MethodArgs,
    /// Dataset directory (x.csv|bin, z.csv|bin, labels_x.csv, labels_z.csv).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Query from view Z, search view X.
    #[arg(long)]
    swap_views: bool,
    /// Gallery images per identity: min, mean or none (rank every image).
    #[arg(long)]
    multishot: Option<String>,
}

#[derive(Args)]
struct SelftestArgs {
    #[command(flatten)]
    common: Common,
    /// Run the fast subset.
    #[arg(long)]
    quick: bool,
    /// Plant a known fault (flip-e) to confirm the checks catch it.
    #[arg(long)]
    fault: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated input dimensions.
    #[arg(long)]
    dims: Option<String>,
    /// Comma-separated training set sizes n+m.
    #[arg(long)]
    sizes: Option<String>,
    /// Timed repetitions per cell (median is reported).
    #[arg(long)]
    reps: Option<usize>,
}

/// Settings resolved from flags over an optional config file over defaults.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
                let key = k.trim().replace('_', "-");
                if !allowed.contains(&key.as_str()) {
                    return Err(Error::Config(format!(
                        "{}:{}: unknown key {key:?}; allowed: {}",
                        path.display(),
                        i + 1,
                        allowed.join(", ")
                    )));
                }
                file.insert(key, v.trim().to_string());
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag, then file, then `default`.
    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(s.parse::<T>().map_err(|e| Error::Config(format!("{key}={s}: {e}")))?),
                None => default,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key, flag, Some(default))?.expect("default supplied"))
    }

    fn needed<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key, flag, None)?
            .ok_or_else(|| Error::Config(format!("--{key} is required (flag or config file)")))
    }

    fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.require(key, flag.then_some(true), false)
    }

    fn echo(&self) -> serde_json::Value {
        json!(self.resolved)
    }
}

const COMMON_KEYS: [&str; 2] = ["seed", "out"];
const METHOD_KEYS: [&str; 10] = [
    "method", "kernel", "gamma", "degree", "offset", "scale", "lambda", "ridge", "max-b", "pca-dim",
];

fn keys(extra: &[&'static str], with_method: bool) -> Vec<&'static str> {
    let mut k: Vec<&str> = COMMON_KEYS.to_vec();
    if with_method {
        k.extend(METHOD_KEYS);
    }
    k.extend(extra);
    k
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn say(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }
}

fn parse_format(s: &str) -> Result<FeatureFormat> {
    match s {
        "csv" => Ok(FeatureFormat::Csv),
        "bin" | "binary" => Ok(FeatureFormat::Binary),
        _ => Err(Error::Config(format!("format must be csv or bin, got {s:?}"))),
    }
}

fn cmd_synth(a: SynthArgs, ctx: &Ctx) -> Result<()> {
    let allowed = keys(
        &["classes", "per-view", "per-view-x", "per-view-z", "dim", "warp", "warp-strength", "noise", "distractors", "format"],
        false,
    );
    let mut s = Settings::load(a.common.config.as_deref(), &allowed)?;
    let d = SynthConfig::default();
    let seed = s.require("seed", a.common.seed, 0)?;
    let out: PathBuf = s.needed("out", a.common.out.map(|p| p.display().to_string()))?.into();
    let per_view = s.get("per-view", a.per_view, None)?;
    let cfg = SynthConfig {
        classes: s.require("classes", a.classes, d.classes)?,
        per_class_x: s.require("per-view-x", a.per_view_x, per_view.unwrap_or(d.per_class_x))?,
        per_class_z: s.require("per-view-z", a.per_view_z, per_view.unwrap_or(d.per_class_z))?,
        dim: s.require("dim", a.dim, d.dim)?,
        warp: s.require::<String>("warp", a.warp, "none".into())?.parse::<Warp>()?,
        warp_strength: s.require("warp-strength", a.warp_strength, d.warp_strength)?,
        noise: s.require("noise", a.noise, d.noise)?,
        distractors: s.require("distractors", a.distractors, d.distractors)?,
    };
    let format = parse_format(&s.require::<String>("format", a.format, "csv".into())?)?;
    let ds = synth_crossview(&cfg, seed)?;
    let files = save_dataset(&ds, &out, format)?;
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = json!({
        "command": "synth",
        "seed": seed,
        "config": s.echo(),
        "classes": ds.classes(),
        "dim": ds.dim(),
        "n": ds.n(),
        "m": ds.m(),
        "files": {
            "x": name(&files.x),
            "z": name(&files.z),
            "labels_x": name(&files.labels_x),
            "labels_z": name(&files.labels_z),
        },
    });
    let path = out.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    ctx.say(format!(
        "wrote {} (n={}, m={}, d={}, classes={})",
        out.display(),
        ds.n(),
        ds.m(),
        ds.dim(),
        ds.classes()
    ));
    Ok(())
}

fn parse_auto(key: &str, v: Option<String>) -> Result<Option<f64>> {
    match v.as_deref() {
        None | Some("auto") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{key} must be a number or auto, got {s:?}"))),
    }
}

fn resolve_method(a: MethodArgs, s: &mut Settings, default_method: &str) -> Result<Method> {
    let method = s.require::<String>("method", a.method, default_method.into())?;
    let max_b = s.get("max-b", a.max_b, None)?;
    match method.as_str() {
        "kissme" => Ok(Method::Kissme(KissmeOptions {
            ridge: s.require("ridge", a.ridge, DEFAULT_RIDGE)?,
            pca_dim: s.get("pca-dim", a.pca_dim, None)?,
            ..Default::default()
        })),
        "xqda" => Ok(Method::Xqda(XqdaOptions {
            ridge: s.require("ridge", a.ridge, DEFAULT_RIDGE)?,
            max_b,
            memory_limit: None,
        })),
        "kxqda" => {
            let kernel = match s.require::<String>("kernel", a.kernel, "rbf".into())?.as_str() {
                "linear" => KernelChoice::Linear,
                "rbf" => KernelChoice::Rbf {
                    gamma: parse_auto("gamma", s.get("gamma", a.gamma, None)?)?,
                },
                "poly" | "polynomial" => KernelChoice::Polynomial {
                    degree: s.require("degree", a.degree, 2)?,
                    offset: s.require("offset", a.offset, 1.0)?,
                    scale: parse_auto("scale", s.get("scale", a.scale, None)?)?,
                },
                k => return Err(Error::Config(format!("kernel must be linear, rbf or poly, got {k:?}"))),
            };
            Ok(Method::Kxqda {
                kernel,
                options: KxqdaOptions {
                    lambda: s.require("lambda", a.lambda, DEFAULT_RIDGE)?,
                    max_b,
                },
            })
        }
        m => Err(Error::Config(format!("method must be kissme, xqda or kxqda, got {m:?}"))),
    }
}

fn cmd_train(a: TrainArgs, ctx: &Ctx) -> Result<()> {
    let mut s = Settings::load(a.common.config.as_deref(), &keys(&["data"], true))?;
    let seed = s.require("seed", a.common.seed, 0)?;
    let data: PathBuf = s.needed("data", a.data.map(|p| p.display().to_string()))?.into();
    let out: PathBuf = s.needed("out", a.common.out.map(|p| p.display().to_string()))?.into();
    let method = resolve_method(a.method, &mut s, "kxqda")?;
    if let Method::Kissme(_) = method {
        return Err(Error::Config("train saves xqda and kxqda models; use eval for kissme".into()));
    }
    let ds = load_dataset(&data)?;
    match method {
        Method::Xqda(o) => {
            let m = xqda_fit(&ds, &o)?;
            m.save(&out)?;
            ctx.say(format!(
                "xqda: d={} b={} ({:?}) in {:.3}s -> {}",
                m.dim(),
                m.b(),
                m.rule,
                m.timings.total_secs,
                out.display()
            ));
        }
        Method::Kxqda { kernel, options } => {
            let spec = kernel.resolve(&ds, seed)?;
            let m = kxqda_fit(&ds, &spec, &options)?;
            m.save(&out)?;
            ctx.say(format!(
                "kxqda: {spec} n+m={} b={} ({:?}) in {:.3}s -> {}",
                ds.n() + ds.m(),
                m.b(),
                m.rule,
                m.timings.total_secs,
                out.display()
            ));
        }
        Method::Kissme(_) => unreachable!(),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, ctx: &Ctx) -> Result<()> {
    let mut s = Settings::load(
        a.common.config.as_deref(),
        &keys(&["data", "trials", "swap-views", "multishot"], true),
    )?;
    let seed = s.require("seed", a.common.seed, 0)?;
    let data: PathBuf = s.needed("data", a.data.map(|p| p.display().to_string()))?.into();
    let out = s.get("out", a.common.out.map(|p| p.display().to_string()), None)?;
    let method = resolve_method(a.method, &mut s, "kxqda")?;
    let opts = ProtocolOptions {
        trials: s.require("trials", a.trials, 10)?,
        seed,
        swap_views: s.flag("swap-views", a.swap_views)?,
        multishot: match s.require::<String>("multishot", a.multishot, "min".into())?.as_str() {
            "none" => None,
            p => Some(p.parse::<MultiShotPolicy>()?),
        },
    };
    let ds = load_dataset(&data)?;
    let report = run_protocol(&ds, &method, &opts)?;
    ctx.say(report.rank_table(&[1, 5, 10, 20]));
    if report.failed_trials > 0 {
        eprintln!("warning: {} of {} trials failed", report.failed_trials, opts.trials);
    }
    if let Some(out) = out {
        let dir = PathBuf::from(out);
        let mut full = serde_json::to_value(&report).expect("report serializes");
        full["config"] = s.echo();
        write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&full).unwrap().as_bytes())?;
        report.write_csv(&dir.join("cmc.csv"))?;
        ctx.say(format!("wrote {}", dir.display()));
    }
    Ok(())
}

/// Returns whether every check passed.
fn cmd_selftest(a: SelftestArgs, ctx: &Ctx) -> Result<bool> {
    let mut s = Settings::load(a.common.config.as_deref(), &keys(&["quick", "fault"], false))?;
    let opts = SelftestOptions {
        quick: s.flag("quick", a.quick)?,
        seed: s.require("seed", a.common.seed, 0)?,
        fault: s.get::<String>("fault", a.fault, None)?.map(|f| f.parse::<Fault>()).transpose()?,
    };
    let out = s.get("out", a.common.out.map(|p| p.display().to_string()), None)?;
    let report = run_selftest(&opts);
    for c in &report.checks {
        if !c.passed || !ctx.quiet {
            println!("{}", c.line());
        }
    }
    ctx.say(format!("{}/{} checks passed", report.checks.len() - report.failures(), report.checks.len()));
    if let Some(out) = out {
        let body = json!({ "config": s.echo(), "passed": report.passed(), "checks": report.checks });
        write_atomic(Path::new(&out), serde_json::to_string_pretty(&body).unwrap().as_bytes())?;
    }
    Ok(report.passed())
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("{key}: cannot parse {t:?}"))))
        .collect()
}

fn cmd_bench(a: BenchArgs, ctx: &Ctx) -> Result<()> {
    let mut s = Settings::load(a.common.config.as_deref(), &keys(&["dims", "sizes", "reps"], false))?;
    let seed = s.require("seed", a.common.seed, 0)?;
    let dims = parse_list("dims", &s.require::<String>("dims", a.dims, "1000,5000".into())?)?;
    let sizes = parse_list("sizes", &s.require::<String>("sizes", a.sizes, "200".into())?)?;
    let reps = s.require("reps", a.reps, 5)?;
    let out = s.get("out", a.common.out.map(|p| p.display().to_string()), None)?;
    let report = run_bench(&dims, &sizes, reps, seed)?;
    let secs = |v: Option<f64>| v.map_or("-".to_string(), |t| format!("{t:.4}"));
    ctx.say(format!("{:>8} {:>6} {:>10} {:>10} {:>8}  faster", "d", "n+m", "xqda s", "kxqda s", "ratio"));
    for c in &report.cells {
        let faster = match c.kxqda_faster() {
            Some(true) => "kxqda".to_string(),
            Some(false) => "xqda".to_string(),
            None => c.xqda_error.clone().or(c.kxqda_error.clone()).unwrap_or_default(),
        };
        ctx.say(format!(
            "{:>8} {:>6} {:>10} {:>10} {:>8}  {faster}",
            c.dim,
            c.n + c.m,
            secs(c.xqda_secs),
            secs(c.kxqda_secs),
            c.ratio.map_or("-".to_string(), |r| format!("{r:.2}")),
        ));
    }
    if let Some(out) = out {
        let body = json!({ "config": s.echo(), "report": report });
        write_atomic(Path::new(&out), serde_json::to_string_pretty(&body).unwrap().as_bytes())?;
    }
    Ok(())
}

fn exit_for(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let quiet = match &cli.command {
        Command::Synth(a) => a.common.quiet,
        Command::Train(a) => a.common.quiet,
        Command::Eval(a) => a.common.quiet,
        Command::Selftest(a) => a.common.quiet,
        Command::Bench(a) => a.common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "warn" }))
        .init();
    let ctx = Ctx { quiet };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, &ctx),
        Command::Train(a) => cmd_train(a, &ctx),
        Command::Eval(a) => cmd_eval(a, &ctx),
        Command::Bench(a) => cmd_bench(a, &ctx),
        Command::Selftest(a) => match cmd_selftest(a, &ctx) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_SELFTEST),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
