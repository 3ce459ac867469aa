//! Translates a structured linear algebra expression into rules and
//! classifies the structure inferred for the result.

use structa::pipeline::classify_la;
use structa::textio::print;

fn main() -> structa::Result<()> {
    let src = "@size n\n@input A(n, n)\n@input B(n, n)\n@struct A = C(2)\n@struct B = R(2)\nE = A . B\n";
    let t = structa::frontend::parse_la(src)?.translate()?;
    print!("{}", print(&t.program));
    let (tag, info) = classify_la(src, "E")?;
    println!("{}\nE is {tag}", info.unique);
    Ok(())
}
