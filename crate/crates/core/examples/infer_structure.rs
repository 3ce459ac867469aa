//! Infers the unique set and redundancy map of a self outer product.

use structa::pipeline::infer;
use structa::textio::parse;

fn main() -> structa::Result<()> {
    let p = parse("@size n\n@dim x(n)\n@dim y(n, n)\ny(i, j) := x(i) * x(j)\n")?;
    let ctx = infer(&p)?;
    let y = ctx.get("y").expect("inferred");
    println!("{}\n{}", y.unique, y.redundancy);
    Ok(())
}
