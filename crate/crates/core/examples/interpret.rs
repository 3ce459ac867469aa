//! Evaluates a program with the dense interpreter and writes the result
//! in the tensor exchange format.

use std::collections::BTreeMap;

use structa::interp::{eval_program, random_tensor, read_tensor, write_tensor, Sizes};
use structa::pipeline::rng;
use structa::textio::parse;

fn main() -> structa::Result<()> {
    let p = parse("@size n\n@dim A(n, n)\n@dim x(n)\n@dim y(n)\ny(i) := A(i, j) * x(j)\n")?;
    let sizes: Sizes = [("n".to_string(), 3)].into();
    let mut g = rng(1);
    let inputs = BTreeMap::from([
        ("A".to_string(), random_tensor::<i64, _>(vec![3, 3], 5, &mut g)),
        ("x".to_string(), random_tensor::<i64, _>(vec![3], 5, &mut g)),
    ]);
    let out = eval_program(&p, &sizes, &inputs)?;
    let text = write_tensor("y", &out["y"]);
    print!("{}{text}", write_tensor("A", &inputs["A"]));
    assert_eq!(read_tensor::<i64>(&text)?.1, out["y"]);
    Ok(())
}
