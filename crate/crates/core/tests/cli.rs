use std::path::Path;
use std::process::{Command, Output};

use structa::cli::{Manifest, CSV_HEADER};
use structa::interp::{read_tensor, DenseTensor};

const OUTER: &str = "@size n\n@dim x(n)\n@dim y(n, n)\ny(i, j) := x(i) * x(j)\n";
const M2: &str = "@size n\n@dim f(n)\n@dim M2(n, n * n)\nM2(i, c) := f(i) * f(j) * f(k) * (c = j * n + k)\n";
const DIAG_LA: &str = "@size n\n@input A(n, n)\n@input B(n, n)\n@struct A = D\n@struct B = D\nE = A . B\n";

fn structa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structa")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "outer.stur", OUTER);
    let bad = write(dir.path(), "bad.stur", "y(i := x(i)\n");
    assert_eq!(structa(&["infer", &good]).status.code(), Some(0));
    assert_eq!(structa(&["infer", &bad]).status.code(), Some(1));
    assert_eq!(structa(&["infer", "/nonexistent/file.stur"]).status.code(), Some(1));
    assert_eq!(structa(&["check", &good]).status.code(), Some(1), "unbound size");
    assert_eq!(structa(&["check", &good, "--size", "n=5"]).status.code(), Some(0));
    assert_eq!(structa(&["bench", "no-such-kernel"]).status.code(), Some(1));
    assert_eq!(structa(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn translate_then_codegen_matches_direct_emission() {
    let dir = tempfile::tempdir().unwrap();
    let la = write(dir.path(), "e.la", DIAG_LA);
    let rules = stdout(&structa(&["translate", &la]));
    let stur = write(dir.path(), "e.stur", &rules);
    let two_step = structa(&["codegen", &stur]);
    let direct = structa(&["translate", &la, "--emit", "kernel"]);
    assert!(two_step.status.success() && direct.status.success());
    assert_eq!(two_step.stdout, direct.stdout);
    assert_eq!(structa(&["codegen", &stur]).stdout, two_step.stdout, "codegen is deterministic");
}

#[test]
fn infer_reports_structures() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "outer.stur", OUTER);
    let text = stdout(&structa(&["infer", &good]));
    assert!(text.contains("# x: no structure given, taken as dense"), "{text}");
    let inferred = text.split("# inferred\n").nth(1).unwrap();
    assert!(inferred.contains("y:U(i,j) := (0 <= i <= j < n)"), "{inferred}");
    assert!(inferred.contains("y:R(i,j,i',j')"), "{inferred}");
}

#[test]
fn bench_csv() {
    let o = structa(&["bench", "ttm-diag-plane", "--size", "n=16", "--variant", "structured"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["ttm-diag-plane", "structured", "16"]);
    assert_eq!(row[3], (16 * 16 * 16).to_string());
    assert!(lines.next().is_none());

    let pr2 = stdout(&structa(&["bench", "pr2", "--size", "n=4"]));
    let iters: Vec<(String, u64)> = pr2
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (format!("{}/{}", f[0], f[1]), f[5].parse().unwrap())
        })
        .collect();
    let structured: u64 = iters.iter().filter(|(k, _)| k.ends_with("/structured")).map(|x| x.1).sum();
    let naive: u64 = iters.iter().filter(|(k, _)| k.ends_with("/naive")).map(|x| x.1).sum();
    assert_eq!((structured, naive), (65, 16 + 64 + 256));
}

#[test]
fn run_writes_harness_files() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "m2.stur", M2);
    let out = dir.path().join("job");
    let o = structa(&["run", &src, "--size", "n=5", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::parse(&std::fs::read_to_string(out.join("M2.manifest")).unwrap()).unwrap();
    assert_eq!(m.compute, "M2_compute");
    assert_eq!(m.reconstruct, "M2_reconstruct");
    assert_eq!(m.sizes, [("n".to_string(), 5)]);
    assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    for p in m.inputs.iter().chain([&m.source, m.expected.as_ref().unwrap()]) {
        assert!(out.join(p).exists(), "{}", p.display());
    }
    let (name, f) = read_tensor::<i64>(&std::fs::read_to_string(out.join("f.tensor")).unwrap()).unwrap();
    assert_eq!((name.as_str(), f.dims.as_slice()), ("f", &[5usize][..]));
    let (_, e) = read_tensor::<i64>(&std::fs::read_to_string(out.join("M2.expected.tensor")).unwrap()).unwrap();
    assert_eq!(e.get(&[1, 2 * 5 + 3]), f.get(&[1]) * f.get(&[2]) * f.get(&[3]));
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

const DRIVER: &str = r#"
#include <stdio.h>
#include <stdint.h>
#include <stdlib.h>
void M2_compute(const int64_t *f, int64_t *M2, int64_t n);
void M2_reconstruct(int64_t *M2, int64_t n);
int main(int argc, char **argv) {
    FILE *in = fopen(argv[1], "r");
    char name[64];
    long order, n;
    if (fscanf(in, "%63s %ld %ld", name, &order, &n) != 3) return 1;
    int64_t *f = malloc(sizeof(int64_t) * n);
    for (long i = 0; i < n; ++i) if (fscanf(in, "%ld", &f[i]) != 1) return 1;
    int64_t *out = malloc(sizeof(int64_t) * n * n * n);
    M2_compute(f, out, n);
    M2_reconstruct(out, n);
    printf("M2 2 %ld %ld\n", n, n * n);
    for (long i = 0; i < n * n * n; ++i) printf("%ld%c", (long)out[i], (i + 1) % (n * n) ? ' ' : '\n');
    return 0;
}
"#;

#[test]
fn emitted_kernel_compiles_and_matches_the_oracle() {
    if !have_cc() {
        eprintln!("cc not found, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "m2.stur", M2);
    let job = dir.path().join("job");
    assert!(structa(&["run", &src, "--size", "n=7", "--out", job.to_str().unwrap()]).status.success());
    let driver = write(&job, "driver.c", DRIVER);
    let exe = job.join("m2");
    let cc = Command::new("cc")
        .args(["-O1", "-o", exe.to_str().unwrap(), job.join("kernel.c").to_str().unwrap(), &driver])
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).arg(job.join("f.tensor")).output().unwrap();
    assert!(run.status.success());
    let (_, got) = read_tensor::<i64>(&stdout(&run)).unwrap();
    let (_, want): (_, DenseTensor<i64>) =
        read_tensor(&std::fs::read_to_string(job.join("M2.expected.tensor")).unwrap()).unwrap();
    assert_eq!(got, want);
}
