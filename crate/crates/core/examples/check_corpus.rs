//! Checks the structure properties and the loop nests of every corpus
//! kernel against the dense interpreter.

use structa::corpus;
use structa::loopgen::KernelOptions;
use structa::pipeline::{check, compile};

fn main() -> structa::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    for e in corpus::kernels() {
        let c = compile(&e.program()?, KernelOptions::default())?;
        let r = check::<i64>(&c, &e.sizes(n), 7)?;
        println!("{:<18} {}", e.id, if r.passed() { "ok" } else { "FAIL" });
    }
    Ok(())
}
