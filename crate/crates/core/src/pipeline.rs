//! End-to-end helpers: inference, kernel construction, classification and
//! the random differential check used by the CLI and the test suites.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::frontend::{classify_structure, parse_la, StructureTag};
use crate::inference::{infer_program, InferenceContext};
use crate::interp::*;
use crate::ir::{check_well_formed, Kind, Program, StructureInfo};
use crate::loopgen::{build_program, run_kernel, KernelOptions, KernelUnit};

/// Range of the random integers used for inputs.
pub const VALUE_RANGE: i64 = 9;

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// A program with its inferred structures and kernels.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub program: Program,
    pub ctx: InferenceContext,
    pub kernels: Vec<KernelUnit>,
}

pub fn infer(p: &Program) -> Result<InferenceContext> {
    let diags = check_well_formed(p);
    if !diags.is_empty() {
        return Err(Error::Diagnostics(diags));
    }
    infer_program(p, &BTreeMap::new())
}

pub fn compile(p: &Program, opts: KernelOptions) -> Result<Compiled> {
    let ctx = infer(p)?;
    let kernels = build_program(p, &ctx, opts)?;
    Ok(Compiled { program: p.clone(), ctx, kernels })
}

/// Translates an LA source and classifies the structure inferred for
/// `output`.
pub fn classify_la(source: &str, output: &str) -> Result<(StructureTag, StructureInfo)> {
    let t = parse_la(source)?.translate()?;
    let ctx = infer_program(&t.program, &t.structures)?;
    let info = ctx.get(output).ok_or_else(|| Error::InferenceOrder(output.to_string()))?.clone();
    Ok((classify_structure(&info), info))
}

/// Random inputs respecting the structures inferred for them.
pub fn random_inputs<S: Scalar>(p: &Program, ctx: &InferenceContext, sizes: &Sizes, seed: u64) -> Result<BTreeMap<String, DenseTensor<S>>> {
    let mut rng = rng(seed);
    let mut out = BTreeMap::new();
    for name in p.inputs() {
        let t = match ctx.get(&name) {
            Some(info) if p.rule(&name, Kind::Unique).is_some() => {
                random_structured(&structure_sets(info, sizes)?, VALUE_RANGE, &mut rng)
            }
            _ => {
                let dims = p.dims.get(&name).ok_or_else(|| Error::MissingInput(name.clone()))?;
                random_tensor(eval_dims(dims, sizes)?, VALUE_RANGE, &mut rng)
            }
        };
        out.insert(name, t);
    }
    Ok(out)
}

/// Outcome of [`check`].
#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub properties: Vec<PropertyReport>,
    /// Kernel name, whether the loop nests reproduced the interpreter, and
    /// the first differing position.
    pub kernels: Vec<(String, bool, Option<Vec<i64>>)>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyReport::all_passed) && self.kernels.iter().all(|k| k.1)
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.properties {
            write!(f, "{p}")?;
        }
        for (k, ok, w) in &self.kernels {
            write!(f, "{k} loops {}", if *ok { "ok" } else { "FAIL" })?;
            if let Some(w) = w {
                write!(f, " at {w:?}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn close<S: Scalar>(a: S, b: S) -> bool {
    if S::MODE == "int" {
        return a == b;
    }
    let (a, b) = (a.to_f64().unwrap_or(f64::NAN), b.to_f64().unwrap_or(f64::NAN));
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

/// First position where two tensors differ, if any.
pub fn first_difference<S: Scalar>(a: &DenseTensor<S>, b: &DenseTensor<S>) -> Option<Vec<i64>> {
    if a.dims != b.dims {
        return Some(Vec::new());
    }
    a.indices().zip(a.data.iter().zip(&b.data)).find(|(_, (x, y))| !close(**x, **y)).map(|(i, _)| i)
}

/// Properties for every tensor with a known structure, and loop nests
/// against the interpreter for every kernel, on one random input set.
pub fn check<S: Scalar>(c: &Compiled, sizes: &Sizes, seed: u64) -> Result<CheckReport> {
    let inputs = random_inputs::<S>(&c.program, &c.ctx, sizes, seed)?;
    let values = eval_program(&c.program, sizes, &inputs)?;
    let mut report = CheckReport::default();
    for (name, info) in &c.ctx.structures {
        let Some(v) = values.get(name).or_else(|| inputs.get(name)) else { continue };
        report.properties.push(check_properties(name, info, sizes, v)?);
    }
    for k in &c.kernels {
        let (got, _) = run_kernel(k, sizes, &inputs)?;
        let want = values.get(&k.name).ok_or_else(|| Error::MissingInput(k.name.clone()))?;
        let w = first_difference(want, &got);
        report.kernels.push((k.name.clone(), w.is_none(), w));
    }
    Ok(report)
}

/// Every size constant of `p` bound to `n`, overridden by `given`.
pub fn default_sizes(p: &Program, n: i64, given: &Sizes) -> Sizes {
    let mut s: Sizes = p.sizes.iter().map(|k| (k.clone(), n)).collect();
    s.extend(given.iter().map(|(k, v)| (k.clone(), *v)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::parse;

    #[test]
    fn outer_product_checks_clean() {
        let p = parse("@size n\n@dim x(n)\n@dim y(n, n)\ny(i, j) := x(i) * x(j)\n").unwrap();
        let c = compile(&p, KernelOptions::default()).unwrap();
        let sizes = default_sizes(&p, 6, &Sizes::new());
        let r = check::<i64>(&c, &sizes, 1).unwrap();
        assert!(r.passed(), "{r}");
        assert!(check::<f64>(&c, &sizes, 2).unwrap().passed());
    }

    #[test]
    fn classification_of_a_diagonal_product() {
        let src = "@size n\n@input A(n, n)\n@input B(n, n)\n@struct A = D\n@struct B = D\nE = A . B\n";
        assert_eq!(classify_la(src, "E").unwrap().0, StructureTag::D);
    }

    #[test]
    fn differences_are_located() {
        let a = DenseTensor::<i64>::zeros(vec![2, 2]);
        let mut b = a.clone();
        b.set(&[1, 0], 3);
        assert_eq!(first_difference(&a, &b), Some(vec![1, 0]));
        assert_eq!(first_difference(&a, &a), None);
    }
}
