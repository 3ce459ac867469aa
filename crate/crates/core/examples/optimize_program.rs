//! Inlines an intermediate tensor and simplifies the result.

use std::collections::BTreeSet;

use structa::optimizer::optimize_program;
use structa::textio::{parse, print};

fn main() -> structa::Result<()> {
    let p = parse(
        "@size n\n@dim x(n)\n@dim T(n, n)\n@dim O(n, n)\n\
         T(i, j) := x(i) * x(j) * (i <= j)\n\
         O(i, j) := T(i, j) * (0 <= i < n) * (i < j)\n",
    )?;
    let keep: BTreeSet<String> = ["O".to_string()].into();
    let (q, rounds) = optimize_program(&p, &keep)?;
    print!("{}", print(&q));
    println!("# {rounds} rounds");
    Ok(())
}
