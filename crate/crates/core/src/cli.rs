//! Command line driver.
//!
//! ```text
//! structa translate prog.la            LA source to rules
//! structa infer prog.stur              rules plus inferred structures
//! structa optimize prog.stur           inlined and simplified rules
//! structa codegen prog.stur            C kernels
//! structa check prog.stur --size n=8   properties and loop nests vs the interpreter
//! structa bench pr2 --size n=64        CSV of operation counts and time
//! structa run prog.stur --out dir      tensor files, kernel source and manifests
//! ```
//!
//! Exit status is 0 on success, 1 for diagnostics (bad input, failed
//! checks) and 2 for internal errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus;
use crate::error::{Error, Result};
use crate::frontend::parse_la;
use crate::interp::*;
use crate::ir::{Kind, Program, Rule};
use crate::loopgen::{build_program, render, run_kernel, ElemType, KernelOptions, KernelUnit};
use crate::optimizer::optimize_program;
use crate::pipeline::{self, compile, default_sizes, infer, random_inputs};
use crate::textio;

#[derive(Parser, Debug)]
#[command(name = "structa", version, about = "Structured tensor algebra compiler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Translate a structured linear algebra file to rules.
    Translate(Io),
    /// Infer unique sets and redundancy maps.
    Infer(Io),
    /// Inline intermediates and simplify.
    Optimize(Io),
    /// Emit C kernels.
    Codegen(Io),
    /// Check structure properties and loop nests on random inputs.
    Check(Io),
    /// Operation counts and timings as CSV. KERNEL is a corpus id
    /// (`lr`, `pr2`, `pr3`, `M2`, `ttm-diag-plane`, `ttm`, ...) or a file.
    Bench {
        kernel: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Write random inputs, oracle outputs, kernel source and one harness
    /// manifest per kernel into the `--out` directory.
    Run(Io),
}

#[derive(Args, Debug)]
pub struct Io {
    pub input: PathBuf,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Args, Debug, Clone)]
pub struct Opts {
    /// Size binding `name=value`; repeatable.
    #[arg(long = "size", value_parser = parse_binding)]
    pub sizes: Vec<(String, i64)>,
    #[arg(long, value_enum, default_value_t = Mode::Int)]
    pub mode: Mode,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output file (directory for `run`); standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Int,
    Float,
}

impl Mode {
    pub fn elem(self) -> ElemType {
        match self {
            Mode::Int => ElemType::Int,
            Mode::Float => ElemType::Float,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Int => "int",
            Mode::Float => "float",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emit {
    Stur,
    Kernel,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Structured,
    Naive,
}

impl Variant {
    fn options(self) -> KernelOptions {
        KernelOptions { structured: self == Variant::Structured, ..KernelOptions::default() }
    }

    fn name(self) -> &'static str {
        match self {
            Variant::Structured => "structured",
            Variant::Naive => "naive",
        }
    }
}

pub fn parse_binding(s: &str) -> std::result::Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v = v.trim().parse::<i64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Outcome of a subcommand: its text output and whether it succeeded.
pub struct Outcome {
    pub text: String,
    pub ok: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, ok: true }
    }
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Substitution(_) | Error::InferenceOrder(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs, prints and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(out)) => {
            print!("{}", out.text);
            i32::from(!out.ok)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => 2,
    }
}

/// Runs a parsed command. Output goes to `--out` when given (except for
/// `run`, whose summary is returned).
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let (out, opts) = match &cli.command {
        Command::Translate(io) => (cmd_translate(io)?, &io.opts),
        Command::Infer(io) => (cmd_infer(io)?, &io.opts),
        Command::Optimize(io) => (cmd_optimize(io)?, &io.opts),
        Command::Codegen(io) => (Outcome::ok(codegen(&read_program(&io.input)?, &io.opts)?), &io.opts),
        Command::Check(io) => (cmd_check(io)?, &io.opts),
        Command::Bench { kernel, opts } => (Outcome::ok(cmd_bench(kernel, opts)?), opts),
        Command::Run(io) => return cmd_run(io),
    };
    match &opts.out {
        Some(path) => {
            std::fs::write(path, &out.text)?;
            Ok(Outcome { text: String::new(), ok: out.ok })
        }
        None => Ok(out),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

pub fn read_program(path: &Path) -> Result<Program> {
    textio::parse(&read(path)?)
}

fn emit(p: &Program, opts: &Opts) -> Result<String> {
    match opts.emit {
        Some(Emit::Kernel) => codegen(p, opts),
        _ => Ok(textio::print(p)),
    }
}

fn with_rules(p: &Program, rules: impl IntoIterator<Item = Rule>) -> Program {
    let mut out = p.clone();
    let extra: Vec<Rule> = rules.into_iter().collect();
    out.rules.splice(0..0, extra);
    out
}

fn cmd_translate(io: &Io) -> Result<Outcome> {
    let t = parse_la(&read(&io.input)?)?.translate()?;
    let rules = t.structures.values().flat_map(|s| {
        let mut v = vec![s.unique.clone()];
        if !s.redundancy.body.is_empty() {
            v.push(s.redundancy.clone());
        }
        v
    });
    let p = with_rules(&t.program, rules);
    Ok(Outcome::ok(emit(&p, &io.opts)?))
}

fn cmd_infer(io: &Io) -> Result<Outcome> {
    let p = read_program(&io.input)?;
    let ctx = infer(&p)?;
    if io.opts.emit == Some(Emit::Kernel) {
        return Ok(Outcome::ok(codegen(&p, &io.opts)?));
    }
    let mut text = String::new();
    for name in p.inputs() {
        if p.rule(&name, Kind::Unique).is_none() {
            let _ = writeln!(text, "# {name}: no structure given, taken as dense");
        }
    }
    text.push_str(&textio::print(&p));
    text.push_str("# inferred\n");
    for r in &p.rules {
        if r.head.kind != Kind::Plain {
            continue;
        }
        if let Some(s) = ctx.get(&r.head.tensor) {
            let _ = writeln!(text, "{}", s.unique);
            if !s.redundancy.body.is_empty() {
                let _ = writeln!(text, "{}", s.redundancy);
            }
        }
    }
    Ok(Outcome::ok(text))
}

fn cmd_optimize(io: &Io) -> Result<Outcome> {
    let p = read_program(&io.input)?;
    let keep: BTreeSet<String> = p.outputs().into_iter().chain(p.inputs()).collect();
    let (q, _) = optimize_program(&p, &keep)?;
    Ok(Outcome::ok(emit(&q, &io.opts)?))
}

pub fn codegen(p: &Program, opts: &Opts) -> Result<String> {
    let variant = opts.variant.unwrap_or(Variant::Structured);
    let c = compile(p, variant.options())?;
    Ok(render(&c.kernels, opts.mode.elem()))
}

fn sizes_for(p: &Program, opts: &Opts) -> Result<Sizes> {
    let given: Sizes = opts.sizes.iter().cloned().collect();
    for s in &p.sizes {
        if !given.contains_key(s) {
            return Err(Error::UnboundSize(s.clone()));
        }
    }
    Ok(default_sizes(p, 0, &given))
}

fn cmd_check(io: &Io) -> Result<Outcome> {
    let p = read_program(&io.input)?;
    let sizes = sizes_for(&p, &io.opts)?;
    let c = compile(&p, KernelOptions::default())?;
    let report = match io.opts.mode {
        Mode::Int => pipeline::check::<i64>(&c, &sizes, io.opts.seed)?,
        Mode::Float => pipeline::check::<f64>(&c, &sizes, io.opts.seed)?,
    };
    Ok(Outcome { text: report.to_string(), ok: report.passed() })
}

/// Programs named by a bench id: a group, a corpus id or a file.
fn bench_programs(id: &str) -> Result<Vec<(String, Program)>> {
    let ids: Vec<&str> = match id {
        "lr" => vec!["M1"],
        "pr2" => vec!["M1", "M2", "M3"],
        "pr3" => vec!["M1", "M2", "M3", "M4", "M5", "M6"],
        _ => vec![id],
    };
    let mut out = Vec::new();
    for i in ids {
        match corpus::find(i) {
            Ok(e) => out.push((e.id.clone(), e.program()?)),
            Err(_) if Path::new(i).exists() => out.push((i.to_string(), read_program(Path::new(i))?)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "kernel,variant,n,mults,adds,iters,nanos";

fn bench_rows<S: Scalar>(id: &str, p: &Program, opts: &Opts, text: &mut String) -> Result<()> {
    let given: Sizes = opts.sizes.iter().cloned().collect();
    let n = given.get("n").copied().or_else(|| given.values().next().copied()).unwrap_or(16);
    if n == 0 {
        return Ok(());
    }
    let probe = corpus::find(id).map(|e| e.sizes(n)).unwrap_or_default();
    let sizes = default_sizes(p, n, &probe.into_iter().chain(given).collect());
    let ctx = infer(p)?;
    let inputs = random_inputs::<S>(p, &ctx, &sizes, opts.seed)?;
    let variants = match opts.variant {
        Some(v) => vec![v],
        None => vec![Variant::Structured, Variant::Naive],
    };
    for v in variants {
        let kernels: Vec<KernelUnit> = build_program(p, &ctx, v.options())?;
        let mut total = OpCounter::default();
        let start = Instant::now();
        for k in &kernels {
            let (_, c) = run_kernel(k, &sizes, &inputs)?;
            total += c;
        }
        let nanos = start.elapsed().as_nanos();
        let _ = writeln!(text, "{id},{},{n},{},{},{},{nanos}", v.name(), total.mults, total.adds, total.iters);
    }
    Ok(())
}

fn cmd_bench(id: &str, opts: &Opts) -> Result<String> {
    let mut text = format!("{CSV_HEADER}\n");
    for (name, p) in bench_programs(id)? {
        match opts.mode {
            Mode::Int => bench_rows::<i64>(&name, &p, opts, &mut text)?,
            Mode::Float => bench_rows::<f64>(&name, &p, opts, &mut text)?,
        }
    }
    Ok(text)
}

/// Harness manifest: a flat `key=value` file naming the kernel source,
/// its entry points, the tensor files and the size bindings. Paths are
/// relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub source: PathBuf,
    pub compute: String,
    pub reconstruct: String,
    pub inputs: Vec<PathBuf>,
    /// In kernel parameter order.
    pub sizes: Vec<(String, i64)>,
    pub output: PathBuf,
    pub mode: Mode,
    /// Oracle output to compare against.
    pub expected: Option<PathBuf>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" ");
        let sizes = self.sizes.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        let mut s = format!(
            "source={}\ncompute={}\nreconstruct={}\ninputs={}\nsizes={}\noutput={}\nmode={}\n",
            self.source.display(),
            self.compute,
            self.reconstruct,
            paths(&self.inputs),
            sizes,
            self.output.display(),
            self.mode.name()
        );
        if let Some(e) = &self.expected {
            let _ = writeln!(s, "expected={}", e.display());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let bad = |m: String| Error::Usage(format!("manifest: {m}"));
        let mut kv = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let sizes = get("sizes")?
            .split_whitespace()
            .map(|b| parse_binding(b).map_err(&bad))
            .collect::<Result<Vec<_>>>()?;
        let mode = match get("mode")?.as_str() {
            "int" => Mode::Int,
            "float" => Mode::Float,
            m => return Err(bad(format!("unknown mode `{m}`"))),
        };
        Ok(Manifest {
            source: get("source")?.into(),
            compute: get("compute")?,
            reconstruct: get("reconstruct")?,
            inputs: get("inputs")?.split_whitespace().map(PathBuf::from).collect(),
            sizes,
            output: get("output")?.into(),
            mode,
            expected: kv.get("expected").map(PathBuf::from),
        })
    }
}

fn cmd_run(io: &Io) -> Result<Outcome> {
    match io.opts.mode {
        Mode::Int => run_typed::<i64>(io),
        Mode::Float => run_typed::<f64>(io),
    }
}

fn run_typed<S: Scalar>(io: &Io) -> Result<Outcome> {
    let dir = io.opts.out.clone().ok_or_else(|| Error::Usage("run needs --out DIR".into()))?;
    std::fs::create_dir_all(&dir)?;
    let p = read_program(&io.input)?;
    let sizes = sizes_for(&p, &io.opts)?;
    let variant = io.opts.variant.unwrap_or(Variant::Structured);
    let c = compile(&p, variant.options())?;
    let inputs = random_inputs::<S>(&p, &c.ctx, &sizes, io.opts.seed)?;
    let values = eval_program(&p, &sizes, &inputs)?;
    for (name, t) in &inputs {
        std::fs::write(dir.join(format!("{name}.tensor")), write_tensor(name, t))?;
    }
    std::fs::write(dir.join("kernel.c"), render(&c.kernels, io.opts.mode.elem()))?;
    let mut text = String::new();
    let mut ok = true;
    for k in &c.kernels {
        let want = values.get(&k.name).ok_or_else(|| Error::MissingInput(k.name.clone()))?;
        std::fs::write(dir.join(format!("{}.expected.tensor", k.name)), write_tensor(&k.name, want))?;
        let m = Manifest {
            source: "kernel.c".into(),
            compute: format!("{}_compute", crate::loopgen::c_ident(&k.name)),
            reconstruct: format!("{}_reconstruct", crate::loopgen::c_ident(&k.name)),
            inputs: k.inputs.iter().map(|t| PathBuf::from(format!("{}.tensor", t.name))).collect(),
            sizes: k.sizes.iter().map(|s| (s.clone(), sizes[s])).collect(),
            output: format!("{}.out.tensor", k.name).into(),
            mode: io.opts.mode,
            expected: Some(format!("{}.expected.tensor", k.name).into()),
        };
        std::fs::write(dir.join(format!("{}.manifest", k.name)), m.render())?;
        let (got, _) = run_kernel(k, &sizes, &inputs)?;
        let same = pipeline::first_difference(want, &got).is_none();
        ok &= same;
        let _ = writeln!(text, "{} loops {}", k.name, if same { "ok" } else { "FAIL" });
    }
    Ok(Outcome { text, ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_parse() {
        assert_eq!(parse_binding("n=64"), Ok(("n".to_string(), 64)));
        assert!(parse_binding("n").is_err());
        assert!(parse_binding("n=x").is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let m = Manifest {
            source: "kernel.c".into(),
            compute: "y_compute".into(),
            reconstruct: "y_reconstruct".into(),
            inputs: vec!["x.tensor".into()],
            sizes: vec![("n".into(), 8)],
            output: "y.out.tensor".into(),
            mode: Mode::Int,
            expected: Some("y.expected.tensor".into()),
        };
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
        assert!(Manifest::parse("source=k.c\n").is_err());
    }

    #[test]
    fn zero_size_bench_has_only_a_header() {
        let opts = Opts { sizes: vec![("n".into(), 0)], mode: Mode::Int, seed: 1, out: None, emit: None, variant: None };
        assert_eq!(cmd_bench("M1", &opts).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
