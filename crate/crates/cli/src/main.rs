use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use vspec::canonical_product::{ClosedForm, GeneratingFunction, TruncationPolicy};
use vspec::contour::Rect;
use vspec::finite_section;
use vspec::krein_diag::{self, lp_forecast, RemovabilityReport, Verdict};
use vspec::model_funcs::ModelEvaluator;
use vspec::nustar::{fit_weight_law, NuStar, NuStarConfig};
use vspec::perturb_synth::{synthesize, synthesize_smooth, Gate, MassPolicy, PerturbationData, SmoothSpec};
use vspec::spectra::{generate, FamilySpec, Side, Spectrum};
use vspec::tails::{TailOrder, WeightLaw};

const SUBCOMMANDS: [&str; 6] = ["spectrum", "diagnose", "synthesize", "verify", "sweep", "nustar"];

#[derive(Parser, Debug)]
#[command(name = "vspec", version, about = "Removability of discrete real spectra", args_override_self = true)]
struct Cli {
    /// JSON file whose keys mirror the long flags; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Omit the `meta` field (creation time, version) from JSON outputs.
    #[arg(long, global = true)]
    no_meta: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a spectrum and write it as JSON.
    Spectrum(SpectrumArgs),
    /// Krein-series verdict with the term table.
    Diagnose(DiagnoseArgs),
    /// Build perturbation data annihilating the spectrum.
    Synthesize(SynthArgs),
    /// Zero counting of beta and finite-section collapse.
    Verify(VerifyArgs),
    /// Verdicts over a family parameter grid.
    Sweep(SweepArgs),
    /// Run the reweighting construction.
    Nustar(NuStarArgs),
}

#[derive(Args, Debug, Clone)]
struct FamilyArgs {
    /// two_sided_power, one_sided_power, squares, shifted_progression, livsic, integers_punctured, near_pairs, custom
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    n0: Option<u32>,
    /// Extra point for two_sided_power and integers_punctured, or `none`.
    #[arg(long)]
    t0: Option<String>,
    /// Base family of near_pairs.
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Points materialized per side.
    #[arg(long, default_value_t = 2000)]
    count: usize,
    /// Explicit points, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    custom: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone)]
struct ProductArgs {
    #[arg(long, value_enum, default_value_t = OrderArg::Exact)]
    tail_order: OrderArg,
    /// Use the closed-form product when the family has one.
    #[arg(long)]
    closed_form: bool,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    fam: FamilyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    spectrum: PathBuf,
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::SeriesFit)]
    method: MethodArg,
    /// Exit with 3 on an inconclusive verdict.
    #[arg(long)]
    strict: bool,
    /// Term table `n,t_n,A_prime,k_n,partial_sum`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Verdict JSON; printed to stdout when absent.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    spectrum: PathBuf,
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long, value_enum, default_value_t = MassArg::Unit)]
    masses: MassArg,
    /// Smooth synthesis with exponents alpha1 alpha2 and growth gamma.
    #[arg(long, num_args = 3, value_names = ["ALPHA1", "ALPHA2", "GAMMA"])]
    smooth: Option<Vec<f64>>,
    /// Rescale the smooth vectors so that their unweighted sums diverge.
    #[arg(long)]
    rescale: bool,
    /// Proceed when the spectrum is not judged removable.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    pert: PathBuf,
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Largest section size; the collapse profile uses N/8, N/4, N/2, N.
    #[arg(long = "N", default_value_t = 200)]
    n: usize,
    /// Explicit section sizes, overriding the default ladder.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sizes: Option<Vec<usize>>,
    /// `auto` or `x0,x1,y0,y1`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    rect: String,
    /// Zeros of beta_N are counted in `|z| <= window`.
    #[arg(long, default_value_t = 10.0)]
    window: f64,
    /// Radii from dense eigenvalues, or bracketed from the complement remainder.
    #[arg(long, value_enum, default_value_t = RadiusArg::Dense)]
    radius: RadiusArg,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    collapse: Option<PathBuf>,
    /// Boundary samples `x,y,re_beta,im_beta,phase`.
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    fam: FamilyArgs,
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NuStarArgs {
    #[arg(long)]
    pert: PathBuf,
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long, default_value_t = 4)]
    steps: usize,
    #[arg(long, default_value_t = 0.0)]
    r0: f64,
    /// Constant initial weight instead of `|c_n|`.
    #[arg(long)]
    nu: Option<f64>,
    /// Outermost weights used for the tail law fit.
    #[arg(long, default_value_t = 32)]
    fit_last: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum OrderArg {
    None,
    First,
    Second,
    Exact,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    SeriesFit,
    Forecast,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum MassArg {
    Unit,
    AbsC,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Winding,
    Finsec,
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum RadiusArg {
    Dense,
    Complement,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Fail {
    code: u8,
    err: anyhow::Error,
}

impl Fail {
    fn usage(err: impl Into<anyhow::Error>) -> Self {
        Fail { code: 1, err: err.into() }
    }
}

impl From<vspec::Error> for Fail {
    fn from(e: vspec::Error) -> Self {
        let usage = e.is_usage() || matches!(e, vspec::Error::Refused(_));
        Fail { code: if usage { 1 } else { 2 }, err: e.into() }
    }
}

impl From<anyhow::Error> for Fail {
    fn from(err: anyhow::Error) -> Self {
        Fail { code: 1, err }
    }
}

type Res<T> = Result<T, Fail>;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("VS_NUM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("VS_NUM_THREADS = {v:?}"))?;
        if n == 0 {
            return Err(anyhow!("VS_NUM_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Splices the flags of a `--config` file right after the subcommand, so that flags given on
/// the command line, which come later, override them. A `command` key names the subcommand
/// when the command line has none.
fn expand_config(args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(mut obj) = value else {
        return Err(anyhow!("config {path} must hold a JSON object"));
    };
    let command = obj.remove("command");
    let mut flags = Vec::new();
    for (key, v) in obj {
        let flag = if key == "N" { "--N".to_string() } else { format!("--{}", key.replace('_', "-")) };
        match v {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                flags.push(flag);
                flags.extend(items.iter().map(scalar_arg).collect::<anyhow::Result<Vec<_>>>()?);
            }
            other => {
                flags.push(flag);
                flags.push(scalar_arg(&other)?);
            }
        }
    }
    let mut out = args;
    let pos = match out.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) {
        Some(p) => p,
        None => {
            let name = command
                .as_ref()
                .and_then(Value::as_str)
                .ok_or_else(|| anyhow!("no subcommand on the command line or in the config"))?;
            // after the global flags that precede it
            let mut i = 1;
            while i < out.len() {
                match out[i].as_str() {
                    "--config" => i += 2,
                    a if a == "--no-meta" || a.starts_with("--config=") => i += 1,
                    _ => break,
                }
            }
            let i = i.min(out.len());
            out.insert(i, name.to_string());
            i
        }
    };
    out.splice(pos + 1..pos + 1, flags);
    Ok(out)
}

fn scalar_arg(v: &Value) -> anyhow::Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(anyhow!("config values must be scalars or arrays of scalars, got {v}")),
    }
}

fn run(cli: Cli) -> Res<u8> {
    let meta = !cli.no_meta;
    match cli.cmd {
        Cmd::Spectrum(a) => cmd_spectrum(a, meta),
        Cmd::Diagnose(a) => cmd_diagnose(a, meta),
        Cmd::Synthesize(a) => cmd_synthesize(a, meta),
        Cmd::Verify(a) => cmd_verify(a, meta),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Nustar(a) => cmd_nustar(a, meta),
    }
}

// ---- families ----

fn number(s: &str, name: &str) -> Res<f64> {
    s.trim().parse().map_err(|_| Fail::usage(anyhow!("--{name}: not a number: {s:?}")))
}

/// Builds the `{"family", "params"}` value that the library deserializes.
fn family_value(tag: &str, f: &FamilyArgs, over: Option<(&str, f64)>) -> Res<Value> {
    let get = |name: &str, raw: &Option<String>| -> Res<Option<f64>> {
        match over {
            Some((n, v)) if n == name => Ok(Some(v)),
            _ => raw.as_deref().map(|s| number(s, name)).transpose(),
        }
    };
    let need = |name: &str, raw: &Option<String>| -> Res<f64> {
        get(name, raw)?.ok_or_else(|| Fail::usage(anyhow!("family {tag} needs --{name}")))
    };
    let t0 = || -> Res<Option<Value>> {
        match f.t0.as_deref() {
            None => Ok(None),
            Some("none") => Ok(Some(Value::Null)),
            Some(s) => Ok(Some(json!(number(s, "t0")?))),
        }
    };
    let mut p = Map::new();
    match tag {
        "two_sided_power" => {
            p.insert("gamma".into(), json!(need("gamma", &f.gamma)?));
            if let Some(v) = t0()? {
                p.insert("t0".into(), v);
            }
        }
        "one_sided_power" => {
            p.insert("gamma".into(), json!(need("gamma", &f.gamma)?));
        }
        "squares" => {
            p.insert("n0".into(), json!(f.n0.unwrap_or(1)));
        }
        "shifted_progression" => {
            p.insert("a".into(), json!(need("a", &f.a)?));
        }
        "livsic" => {
            p.insert("c".into(), json!(get("c", &f.c)?.unwrap_or(1.0)));
        }
        "integers_punctured" => {
            if let Some(v) = t0()? {
                p.insert("t0".into(), v);
            }
        }
        "near_pairs" => {
            let base = f.base.as_deref().unwrap_or("integers_punctured");
            if base == "near_pairs" || base == "custom" {
                return Err(Fail::usage(anyhow!("--base {base} is not allowed")));
            }
            p.insert("base".into(), family_value(base, f, over)?);
            if let Some(q) = f.q {
                p.insert("q".into(), json!(q));
            }
            if let Some(n) = f.pairs {
                p.insert("pairs".into(), json!(n));
            }
        }
        "custom" => {
            let v = f.custom.clone().ok_or_else(|| Fail::usage(anyhow!("family custom needs --custom")))?;
            p.insert("values".into(), json!(v));
        }
        other => return Err(Fail::usage(anyhow!("unknown family {other:?}"))),
    }
    Ok(json!({ "family": tag, "params": p }))
}

fn family_spec(f: &FamilyArgs, over: Option<(&str, f64)>) -> Res<FamilySpec<f64>> {
    let tag = match (&f.family, &f.custom) {
        (Some(t), _) => t.as_str(),
        (None, Some(_)) => "custom",
        (None, None) => return Err(Fail::usage(anyhow!("give --family or --custom"))),
    };
    let mut v = family_value(tag, f, over)?;
    v.as_object_mut().unwrap().insert("count".into(), json!(f.count));
    serde_json::from_value(v).map_err(|e| Fail::usage(anyhow!("family parameters: {e}")))
}

fn product(s: Arc<Spectrum<f64>>, p: &ProductArgs) -> Res<GeneratingFunction<f64>> {
    let closed = p.closed_form && s.family.as_ref().and_then(ClosedForm::for_family).is_some();
    if closed {
        return Ok(GeneratingFunction::closed_form(s)?);
    }
    let order = match p.tail_order {
        OrderArg::None => TailOrder::None,
        OrderArg::First => TailOrder::First,
        OrderArg::Second => TailOrder::Second,
        OrderArg::Exact => TailOrder::Exact,
    };
    Ok(GeneratingFunction::new(s, TruncationPolicy { order, pairing: true })?)
}

// ---- io ----

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_spectrum(path: &Path) -> Res<Arc<Spectrum<f64>>> {
    let s: Spectrum<f64> = read_json(path)?;
    s.validate()?;
    Ok(Arc::new(s))
}

fn read_pert(path: &Path) -> Res<PerturbationData<f64>> {
    let mut d: PerturbationData<f64> = read_json(path)?;
    d.validate()?;
    Ok(d)
}

fn with_meta<S: Serialize>(v: &S, meta: bool) -> Res<Value> {
    let mut v = serde_json::to_value(v).context("serializing output")?;
    if meta {
        if let Value::Object(m) = &mut v {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            m.insert("meta".into(), json!({ "tool": "vspec", "version": env!("CARGO_PKG_VERSION"), "created_unix": secs }));
        }
    }
    Ok(v)
}

fn write_json(path: Option<&Path>, v: &Value) -> Res<()> {
    let text = serde_json::to_string_pretty(v).context("serializing output")?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn csv_writer(path: &Path, header: &[&str]) -> Res<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(header).context("writing csv header")?;
    Ok(w)
}

fn finish_csv(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Res<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Rejects a run whose paths coincide.
fn distinct(paths: &[Option<&Path>]) -> Res<()> {
    let mut seen = HashSet::new();
    for p in paths.iter().flatten() {
        if !seen.insert(p.to_path_buf()) {
            return Err(Fail::usage(anyhow!("path {} is used twice", p.display())));
        }
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

// ---- subcommands ----

fn cmd_spectrum(a: SpectrumArgs, meta: bool) -> Res<u8> {
    let s = generate(&family_spec(&a.fam, None)?)?;
    write_json(a.out.as_deref(), &with_meta(&s, meta)?)?;
    if a.out.is_some() {
        println!("{} points, family {}", s.len(), s.family.as_ref().map(|f| f.tag()).unwrap_or("none"));
    }
    Ok(0)
}

fn diagnose_report(s: Arc<Spectrum<f64>>, p: &ProductArgs, m: MethodArg) -> Res<RemovabilityReport<f64>> {
    match m {
        MethodArg::SeriesFit => Ok(krein_diag::verdict(&product(s, p)?)?),
        MethodArg::Forecast => Ok(krein_diag::verdict_by_forecast(&s)?),
    }
}

fn cmd_diagnose(a: DiagnoseArgs, meta: bool) -> Res<u8> {
    distinct(&[Some(&a.spectrum), a.csv.as_deref(), a.json.as_deref()])?;
    let s = read_spectrum(&a.spectrum)?;
    let r = diagnose_report(s.clone(), &a.product, a.method)?;
    if let Some(path) = &a.csv {
        let terms = if r.terms.is_empty() { krein_diag::krein_terms(&product(s, &a.product)?)? } else { r.terms.clone() };
        let mut w = csv_writer(path, &["n", "t_n", "A_prime", "k_n", "partial_sum"])?;
        for (i, t) in terms.iter().enumerate() {
            w.write_record([(i + 1).to_string(), fmt(t.t), fmt(t.a_prime()), fmt(t.k()), fmt(t.partial_sum())]).context("writing csv")?;
        }
        finish_csv(w, path)?;
    }
    let mut out = r.clone();
    out.terms.clear();
    write_json(a.json.as_deref(), &with_meta(&out, meta)?)?;
    if a.json.is_some() {
        println!("verdict {:?} (confidence {:.3}, method {:?})", r.verdict, r.confidence, r.method);
    }
    Ok(if a.strict && r.verdict == Verdict::Inconclusive { 3 } else { 0 })
}

fn cmd_synthesize(a: SynthArgs, meta: bool) -> Res<u8> {
    distinct(&[Some(&a.spectrum), Some(&a.out)])?;
    let s = read_spectrum(&a.spectrum)?;
    let g = product(s, &a.product)?;
    let gate = if a.force { Gate::Force } else { Gate::RequireRemovable };
    let d = match &a.smooth {
        Some(v) => synthesize_smooth(&g, SmoothSpec { alpha1: v[0], alpha2: v[1], gamma: v[2], rescale: a.rescale }, gate)?,
        None => {
            if a.rescale {
                return Err(Fail::usage(anyhow!("--rescale needs --smooth")));
            }
            let masses = match a.masses {
                MassArg::Unit => MassPolicy::Unit,
                MassArg::AbsC => MassPolicy::AbsC,
            };
            synthesize(&g, masses, gate)?
        }
    };
    write_json(Some(&a.out), &with_meta(&d, meta)?)?;
    println!("{} nodes, {} underflowed", d.c.len(), d.flags.underflow.len());
    Ok(0)
}

fn parse_rect(s: &str) -> Res<Option<Rect<f64>>> {
    if s == "auto" {
        return Ok(None);
    }
    let v: Vec<f64> = s.split(',').map(|x| number(x, "rect")).collect::<Res<_>>()?;
    if v.len() != 4 {
        return Err(Fail::usage(anyhow!("--rect needs auto or x0,x1,y0,y1")));
    }
    Ok(Some(Rect::new(v[0], v[1], v[2], v[3])?))
}

fn cmd_verify(a: VerifyArgs, meta: bool) -> Res<u8> {
    distinct(&[Some(&a.pert), a.json.as_deref(), a.collapse.as_deref(), a.samples.as_deref()])?;
    let rect = parse_rect(&a.rect)?;
    let d = Arc::new(read_pert(&a.pert)?);
    let g = Arc::new(product(d.spectrum.clone(), &a.product)?);
    let mut out = Map::new();
    if a.mode != ModeArg::Finsec {
        let m = ModelEvaluator::new(d.clone(), g.clone())?;
        let r = rect.unwrap_or_else(|| m.default_rect());
        let report = m.count_zeros(Some(r), a.samples.is_some()).map_err(|e| {
            let code = if e.is_usage() { 1 } else { 2 };
            Fail { code, err: anyhow!("contour failed on box [{}, {}] x [{}, {}]: {e}", r.x0, r.x1, r.y0, r.y1) }
        })?;
        if let Some(path) = &a.samples {
            let mut w = csv_writer(path, &["x", "y", "re_beta", "im_beta", "phase"])?;
            for s in &report.samples {
                w.write_record([fmt(s.x), fmt(s.y), fmt(s.re), fmt(s.im), fmt(s.phase)]).context("writing csv")?;
            }
            finish_csv(w, path)?;
        }
        println!("zeros={} winding={} poles={} box=[{}, {}]x[{}, {}]", report.zeros, report.winding, report.poles, r.x0, r.x1, r.y0, r.y1);
        let mut v = serde_json::to_value(&report).context("serializing report")?;
        if let Value::Object(m) = &mut v {
            m.remove("samples");
        }
        out.insert("winding".into(), v);
    }
    if a.mode != ModeArg::Winding {
        let ns = match &a.sizes {
            Some(v) => v.clone(),
            None => {
                let mut v: Vec<usize> = [8, 4, 2, 1].iter().map(|k| a.n / k).filter(|&n| n > 0).collect();
                v.dedup();
                v
            }
        };
        if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Fail::usage(anyhow!("section sizes must be nonempty and increasing")));
        }
        let rows: Vec<(usize, f64, usize)> = match a.radius {
            RadiusArg::Dense => finite_section::collapse_profile(&*d, &ns, a.window)?
                .into_iter()
                .map(|r| (r.n, r.spectral_radius, r.n_zeros_in_window))
                .collect(),
            RadiusArg::Complement => ns
                .par_iter()
                .map(|&n| finite_section::complement_radius(&*d, &g, n, a.window).map(|b| (b.n, b.mid(), b.n_zeros_in_window)))
                .collect::<Result<_, _>>()?,
        };
        if let Some(path) = &a.collapse {
            let mut w = csv_writer(path, &["N", "spectral_radius", "n_zeros_in_window"])?;
            for (n, r, z) in &rows {
                w.write_record([n.to_string(), fmt(*r), z.to_string()]).context("writing csv")?;
            }
            finish_csv(w, path)?;
        }
        let decreasing = rows.windows(2).all(|w| w[1].1 < w[0].1);
        let radii: Vec<String> = rows.iter().map(|r| format!("{}:{:.4e}", r.0, r.1)).collect();
        println!("radii {} ({})", radii.join(" "), if decreasing { "decreasing" } else { "not decreasing" });
        let table: Vec<Value> = rows.iter().map(|(n, r, z)| json!({ "N": n, "spectral_radius": r, "n_zeros_in_window": z })).collect();
        out.insert("collapse".into(), json!(table));
        out.insert("decreasing".into(), json!(decreasing));
    }
    write_json(a.json.as_deref(), &with_meta(&Value::Object(out), meta)?)?;
    Ok(0)
}

/// Parses `a:b:step` into an inclusive grid.
fn parse_grid(s: &str) -> Res<Vec<f64>> {
    let parts: Vec<f64> = s.split(':').map(|x| number(x, "grid")).collect::<Res<_>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err(Fail::usage(anyhow!("grid {s:?} is not a:b:step")));
    };
    if !(lo < hi && step > 0.0) {
        return Err(Fail::usage(anyhow!("grid {s:?} needs a < b and step > 0")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).map(|x| (x * 1e12).round() / 1e12).collect())
}

fn cmd_sweep(a: SweepArgs) -> Res<u8> {
    let f = &a.fam;
    let ranged: Vec<(&str, &String)> = [("gamma", &f.gamma), ("a", &f.a), ("c", &f.c)]
        .into_iter()
        .filter_map(|(n, v)| v.as_ref().filter(|s| s.contains(':')).map(|s| (n, s)))
        .collect();
    let [(name, grid)] = ranged[..] else {
        return Err(Fail::usage(anyhow!("exactly one of --gamma, --a, --c must be a grid a:b:step")));
    };
    let grid = parse_grid(grid)?;
    let rows: Vec<Res<(f64, RemovabilityReport<f64>, Option<(f64, f64)>)>> = grid
        .par_iter()
        .map(|&x| {
            let spec = family_spec(f, Some((name, x)))?;
            let s = Arc::new(generate(&spec)?);
            let fc = spec.family.growth_data().and_then(|(rm, dm, rp, dp)| lp_forecast(rm, rp, dm, dp).ok());
            let r = krein_diag::verdict(&product(s, &a.product)?)?;
            Ok((x, r, fc.map(|f| (f.u_minus, f.u_plus))))
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }
    let header = ["param", "verdict", "confidence", "u_minus", "u_plus"];
    let record = |(x, r, u): &(f64, RemovabilityReport<f64>, Option<(f64, f64)>)| {
        let (um, up) = u.map(|(m, p)| (fmt(m), fmt(p))).unwrap_or_default();
        [x.to_string(), format!("{:?}", r.verdict), format!("{:.4}", r.confidence), um, up]
    };
    match &a.out {
        Some(path) => {
            let mut w = csv_writer(path, &header)?;
            for row in &table {
                w.write_record(record(row)).context("writing csv")?;
            }
            finish_csv(w, path)?;
            for (x, r, _) in &table {
                println!("{name}={x} {:?}", r.verdict);
            }
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(header).context("writing csv")?;
            for row in &table {
                w.write_record(record(row)).context("writing csv")?;
            }
            w.flush().context("writing csv")?;
        }
    }
    Ok(0)
}

fn cmd_nustar(a: NuStarArgs, meta: bool) -> Res<u8> {
    distinct(&[Some(&a.pert), a.out.as_deref()])?;
    let d = read_pert(&a.pert)?;
    let s = d.spectrum.clone();
    let g = Arc::new(product(s.clone(), &a.product)?);
    let (nu, laws) = match a.nu {
        Some(v) => {
            let law = |side| s.tail.law(side).map(|_| WeightLaw::constant(vspec::C::new(v, 0.0)));
            (vec![v; s.len()], (law(Side::Negative), law(Side::Positive)))
        }
        None => {
            let nu: Vec<f64> = d.c.iter().map(|c| c.norm()).collect();
            let fit = |side| fit_weight_law(&s, &nu, side, a.fit_last);
            let laws = (fit(Side::Negative), fit(Side::Positive));
            (nu, laws)
        }
    };
    let mut ns = NuStar::init(g, nu, laws, a.r0, NuStarConfig::default())?;
    ns.run(a.steps)?;
    for st in ns.steps() {
        println!(
            "k={} t={} tau={:.6e} growth={:.4} {:?} {}",
            st.k,
            st.t,
            st.tau,
            st.growth_norm,
            st.case,
            if st.all_ok() { "ok" } else { "FAILED CHECKS" }
        );
    }
    write_json(a.out.as_deref(), &with_meta(&ns.state(), meta)?)?;
    Ok(if ns.steps().iter().all(|s| s.all_ok()) { 0 } else { 2 })
}
