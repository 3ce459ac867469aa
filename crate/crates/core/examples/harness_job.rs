//! Writes a kernel harness job: inputs, oracle output, C source and one
//! manifest per kernel, the same files `structa run` produces.

use structa::cli::main_with_args;

fn main() {
    let dir = std::env::temp_dir().join("structa-harness-job");
    let src = dir.join("outer.stur");
    std::fs::create_dir_all(&dir).expect("temp dir");
    std::fs::write(&src, "@size n\n@dim x(n)\n@dim y(n, n)\ny(i, j) := x(i) * x(j)\n").expect("write");
    let code = main_with_args(["structa", "run", src.to_str().unwrap(), "--size", "n=6", "--out", dir.to_str().unwrap()]);
    println!("{}", std::fs::read_to_string(dir.join("y.manifest")).expect("manifest"));
    std::process::exit(code);
}
