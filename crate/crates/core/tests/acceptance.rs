//! Acceptance suite. Runs every primary criterion at its tolerance and
//! prints one line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::Rng;
use structa::corpus;
use structa::frontend::{classify_structure, parse_la, StructureTag};
use structa::inference::infer_program;
use structa::interp::*;
use structa::ir::{check_well_formed, IndexExpr, Kind, Rule, StructureInfo};
use structa::loopgen::{build_program, count_set, run_kernel, KernelOptions};
use structa::optimizer::{canonicalize, canonicalize_rule, inline_program, optimize_rule, simplify_rule};
use structa::pipeline::{self, compile, default_sizes};
use structa::textio::{parse, parse_body};

type Outcome = Result<String, String>;

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn unique_count(id: &str, n: i64) -> Result<u64, String> {
    let entry = e(corpus::find(id))?;
    let p = e(entry.program())?;
    let ctx = e(pipeline::infer(&p))?;
    let info = ctx.get(id).ok_or("no structure")?;
    e(count_set(&info.unique, &p.dims, &entry.sizes(n)))
}

fn pr2_count() -> Outcome {
    let n = 4;
    let counts: Vec<u64> = ["M1", "M2", "M3"].iter().map(|id| unique_count(id, n)).collect::<Result<_, _>>()?;
    let oracle = [binom(n as u64 + 1, 2), binom(n as u64 + 2, 3), binom(n as u64 + 3, 4)];
    ensure(counts == oracle, || format!("counts {counts:?}, closed form {oracle:?}"))?;
    let total: u64 = counts.iter().sum();
    ensure(total == 65, || format!("total {total}"))?;
    Ok(format!("{} + {} + {} = {total}", counts[0], counts[1], counts[2]))
}

fn kron_cost() -> Outcome {
    let src = "@size n m\n@input A(n, n)\n@input B(m, m)\n@struct A = D\n@struct B = D\nE = A kron B\n";
    let t = e(e(parse_la(src))?.translate())?;
    let ctx = e(infer_program(&t.program, &t.structures))?;
    let tag = classify_structure(ctx.get("E").ok_or("no structure for E")?);
    ensure(tag == StructureTag::D, || format!("classified {tag}"))?;
    let sizes: Sizes = [("n".to_string(), 16), ("m".to_string(), 16)].into();
    let mut rng = pipeline::rng(11);
    let mut inputs = BTreeMap::new();
    for (name, info) in &t.structures {
        inputs.insert(name.clone(), random_structured::<i64, _>(&e(structure_sets(info, &sizes))?, 9, &mut rng));
    }
    let want = e(eval_program(&t.program, &sizes, &inputs))?;
    let mut mults = Vec::new();
    for structured in [true, false] {
        let ks = e(build_program(&t.program, &ctx, KernelOptions { hoist: true, structured }))?;
        let mut m = 0;
        for k in &ks {
            let (got, ops) = e(run_kernel(k, &sizes, &inputs))?;
            ensure(pipeline::first_difference(&want[&k.name], &got).is_none(), || format!("{} differs", k.name))?;
            m += ops.mults;
        }
        mults.push(m);
    }
    ensure(mults == [256, 65536], || format!("mults {mults:?}"))?;
    Ok(format!("structured {} naive {} class D", mults[0], mults[1]))
}

fn info(t: &str, dims: &[&str], u: &str, r: &str, sizes: &[&str]) -> Result<StructureInfo, String> {
    let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    let dims = dims.iter().map(|d| IndexExpr::sym(*d)).collect();
    Ok(StructureInfo::from_bodies(t, dims, e(parse_body(u, &sizes))?, e(parse_body(r, &sizes))?))
}

fn golden(
    src: &str,
    inputs: Vec<(&str, StructureInfo)>,
    target: &str,
    kind: Kind,
    expected: &str,
) -> Result<(), String> {
    let p = e(parse(src))?;
    let inputs = inputs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let ctx = e(infer_program(&p, &inputs))?;
    let s = ctx.get(target).ok_or("no structure")?;
    let got = if kind == Kind::Unique { &s.unique } else { &s.redundancy };
    let want = optimize_rule(&Rule::new(got.head.clone(), e(parse_body(expected, &p.sizes))?)).body;
    let got = canonicalize(&got.body);
    ensure(got == want, || format!("{target}: got {got}, want {want}"))
}

fn goldens() -> Outcome {
    let sym = "(0 <= j < i < n) * (i' = j) * (j' = i)";
    golden(
        "@size n\n@dim M(n, n)\n@dim N(n, n)\nA(i, j) := M(i, j) * N(i, j)\n",
        vec![
            ("M", info("M", &["n", "n"], "(0 <= i <= j < n)", "0", &["n"])?),
            ("N", info("N", &["n", "n"], "(0 <= i <= j < n)", sym, &["n"])?),
        ],
        "A",
        Kind::Unique,
        "(0 <= i <= j < n)",
    )?;
    golden(
        "@size m n r\n@dim M(m, n)\n@dim N(n, n)\nA(i, j) := M(i, k) * N(k, j)\n",
        vec![
            ("M", info("M", &["m", "n"], "(i = r) * (0 <= j < n)", "0", &["m", "n", "r"])?),
            ("N", info("N", &["n", "n"], "(i = j) * (0 <= i < n)", "0", &["n"])?),
        ],
        "A",
        Kind::Unique,
        "(i = r) * (0 <= j < n)",
    )?;
    golden(
        "@size m\n@dim M(m, m, m)\n@dim N(m)\nB(i, j, k) := M(i, j, k) * N(k)\nA(i, j) := B(i, j, k)\n",
        vec![(
            "M",
            info("M", &["m", "m", "m"], "(i = j) * (j = k) * (0 <= i < m) * (0 <= j < m) * (0 <= k < m)", "0", &["m"])?,
        )],
        "A",
        Kind::Unique,
        "(i = j) * (0 <= i < m)",
    )?;
    let d = ["d1", "d2", "d3", "d4", "d5"];
    golden(
        "@size d1 d2 d3 d4 d5\n@dim M(d1, d2, d3)\n@dim V(d4, d5)\nT(x1, x2, x3, x4, x5) := M(x1, x2, x3) * V(x4, x5)\n",
        vec![
            ("M", info("M", &d[..3], "(i > j) * (0 <= i < d1) * (0 <= j < d2) * (0 <= k < d3)", "0", &d)?),
            (
                "V",
                info(
                    "V",
                    &d[3..],
                    "(i <= j) * (0 <= i < d4) * (0 <= j < d5)",
                    "(i > j) * (0 <= i < d4) * (0 <= j < d5) * (i' = j) * (j' = i)",
                    &d,
                )?,
            ),
        ],
        "T",
        Kind::Redundancy,
        "(x1 > x2) * (0 <= x1 < d1) * (0 <= x2 < d2) * (0 <= x3 < d3) * \
         (x4 > x5) * (0 <= x4 < d4) * (0 <= x5 < d5) * (x4' = x5) * (x5' = x4) * \
         (x1' = x1) * (x2' = x2) * (x3' = x3)",
    )?;
    Ok("UHS, RMD, DTTV, outer-product T_R".into())
}

fn properties() -> Outcome {
    let mut checked = 0;
    for entry in corpus::structures() {
        let p = e(entry.program())?;
        let c = e(compile(&p, KernelOptions::default()))?;
        for n in [3, 8] {
            let sizes = entry.sizes(n);
            for seed in 0..20 {
                let inputs = e(pipeline::random_inputs::<i64>(&p, &c.ctx, &sizes, seed))?;
                let values = e(eval_program(&p, &sizes, &inputs))?;
                for (name, info) in &c.ctx.structures {
                    let Some(v) = values.get(name).or_else(|| inputs.get(name)) else { continue };
                    let r = e(check_properties(name, info, &sizes, v))?;
                    ensure(r.all_passed(), || format!("{} n={n} seed={seed}: {r}", entry.id))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{} structures, {checked} checks", corpus::structures().len()))
}

fn loop_equivalence() -> Outcome {
    let mut runs = 0;
    for entry in corpus::kernels() {
        let p = e(entry.program())?;
        let c = e(compile(&p, KernelOptions::default()))?;
        for (n, seed) in [(8, 1), (16, 2)] {
            let r = e(pipeline::check::<i64>(&c, &entry.sizes(n), seed))?;
            ensure(r.kernels.iter().all(|k| k.1), || format!("{} n={n}: {r}", entry.id))?;
            runs += 1;
        }
    }
    Ok(format!("{} kernels, {runs} runs", corpus::kernels().len()))
}

fn ratios() -> Outcome {
    let n = 256u64;
    let m2 = unique_count("M2", n as i64)?;
    let m3 = unique_count("M3", n as i64)?;
    ensure(m2 == binom(n + 2, 3), || format!("M2 unique {m2}"))?;
    ensure(m3 == binom(n + 3, 4), || format!("M3 unique {m3}"))?;
    let r2 = (n.pow(3) - m2) as f64 / m2 as f64;
    let r3 = (n.pow(4) - m3) as f64 / m3 as f64;
    ensure((r2 - 4.93).abs() < 0.005, || format!("M2 ratio {r2:.3}"))?;
    ensure((21.0..=24.0).contains(&r3), || format!("M3 ratio {r3:.3}"))?;
    Ok(format!("M2 {r2:.3} M3 {r3:.3}"))
}

fn classification() -> Outcome {
    let suite = corpus::classification_suite();
    for c in &suite {
        let (tag, _) = e(pipeline::classify_la(&c.source, c.output))?;
        ensure(tag == c.expected, || format!("{}: {tag}, want {}", c.id, c.expected))?;
    }
    Ok(format!("{} conclusions", suite.len()))
}

/// A random program over a vector `a` and matrices `b`, `c`: one
/// intermediate `T` read by the output `O`, with comparisons mixed in.
fn random_program<R: Rng>(rng: &mut R) -> String {
    let vars = ["i", "j", "k"];
    let pick = |rng: &mut R| vars[rng.gen_range(0..3)];
    let cmp = |rng: &mut R, x: &str, y: &str| {
        let ops = ["<", "<=", "=", "!=", ">", ">="];
        let op = ops[rng.gen_range(0..ops.len())];
        match rng.gen_range(0..4) {
            0 => format!("({x} {op} {y})"),
            1 => format!("({x} {op} {})", rng.gen_range(0..4)),
            2 => format!("({x} + {y} {op} n)"),
            _ => format!("({x} {op} {y} + 1)"),
        }
    };
    let product = |rng: &mut R, extra: Option<&str>| {
        let mut fs = Vec::new();
        if let Some(t) = extra {
            fs.push(format!("{t}({}, {})", pick(rng), pick(rng)));
        }
        for _ in 0..rng.gen_range(1..3) {
            fs.push(match rng.gen_range(0..3) {
                0 => format!("a({})", pick(rng)),
                1 => format!("b({}, {})", pick(rng), pick(rng)),
                _ => format!("c({}, {})", pick(rng), pick(rng)),
            });
        }
        let reads = fs.concat();
        for _ in 0..rng.gen_range(0..3) {
            let (x, y) = (pick(rng), pick(rng));
            fs.push(cmp(rng, x, y));
        }
        // a variable outside the head needs a read to range over
        if fs.concat().contains('k') && !reads.contains('k') {
            fs.push("a(k)".into());
        }
        fs.join(" * ")
    };
    let body = |rng: &mut R, extra: Option<&str>| {
        (0..rng.gen_range(1..3)).map(|_| product(rng, extra)).collect::<Vec<_>>().join(" + ")
    };
    let t = body(rng, None);
    let o = body(rng, Some("T"));
    format!("@size n\n@dim a(n)\n@dim b(n, n)\n@dim c(n, n)\n@dim T(n, n)\n@dim O(n, n)\nT(i, j) := {t}\nO(i, j) := {o}\n")
}

fn optimizer_soundness() -> Outcome {
    let mut rng = pipeline::rng(2024);
    let (mut done, mut tries) = (0, 0);
    while done < 500 {
        tries += 1;
        ensure(tries < 5000, || "generator rarely produces well-formed programs".into())?;
        let src = random_program(&mut rng);
        let Ok(p) = parse(&src) else { continue };
        if !check_well_formed(&p).is_empty() {
            continue;
        }
        let keep: BTreeSet<String> = p.outputs().into_iter().collect();
        let mut q = e(inline_program(&p, &keep))?;
        for r in &mut q.rules {
            *r = canonicalize_rule(&simplify_rule(r));
        }
        let n = rng.gen_range(1..=6);
        let sizes = default_sizes(&p, n, &Sizes::new());
        let inputs: BTreeMap<String, DenseTensor<i64>> = p
            .inputs()
            .into_iter()
            .map(|t| {
                let dims = e(eval_dims(&p.dims[&t], &sizes))?;
                Ok((t, random_tensor(dims, 9, &mut rng)))
            })
            .collect::<Result<_, String>>()?;
        let before = e(eval_program(&p, &sizes, &inputs))?;
        let after = e(eval_program(&q, &sizes, &inputs))?;
        for o in &keep {
            ensure(before.get(o) == after.get(o), || format!("{o} differs for\n{src}\nafter:\n{q:?}"))?;
        }
        done += 1;
    }
    Ok(format!("{done} programs"))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 8] = [
        ("pr2-distinct-count", 1, pr2_count),
        ("diagonal-kronecker-cost", 1, kron_cost),
        ("structure-goldens", 1, goldens),
        ("soundness-properties", 30, properties),
        ("loop-ir-equivalence", 60, loop_equivalence),
        ("redundancy-ratios", 5, ratios),
        ("classification-suite", 1, classification),
        ("optimizer-soundness", 60, optimizer_soundness),
    ];
    let mut failed = Vec::new();
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let r = f();
        let took = start.elapsed();
        let r = r.and_then(|m| {
            if took <= Duration::from_secs(limit) {
                Ok(m)
            } else {
                Err(format!("{m}, took {took:.2?} over {limit} s"))
            }
        });
        match r {
            Ok(m) => println!("PASS {name} ({took:.2?}): {m}"),
            Err(m) => {
                println!("FAIL {name} ({took:.2?}): {m}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
