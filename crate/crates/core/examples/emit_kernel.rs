//! Emits C for the degree-2 covariance term, structured and naive.

use structa::corpus;
use structa::loopgen::{render, ElemType, KernelOptions};
use structa::pipeline::compile;

fn main() -> structa::Result<()> {
    let p = corpus::find("M2")?.program()?;
    for structured in [true, false] {
        let c = compile(&p, KernelOptions { hoist: true, structured })?;
        println!("// structured = {structured}\n{}", render(&c.kernels, ElemType::Float));
    }
    Ok(())
}
