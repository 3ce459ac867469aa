//! Distinct-element counts of the covariance terms and their redundancy
//! ratios, counted over the inferred unique sets.

use structa::corpus;
use structa::loopgen::count_set;
use structa::pipeline::infer;

fn main() -> structa::Result<()> {
    for n in [4, 64, 256] {
        for e in corpus::covariance() {
            let p = e.program()?;
            let ctx = infer(&p)?;
            let unique = count_set(&ctx.get(&e.id).expect("inferred").unique, &p.dims, &e.sizes(n))?;
            let total: u64 = p.dims[&e.id].iter().map(|d| d.eval_sizes(&e.sizes(n)).unwrap_or(0) as u64).product();
            println!("n={n:<4} {}: unique {unique:>10} of {total:>12}, ratio {:.2}", e.id, (total - unique) as f64 / unique as f64);
        }
    }
    Ok(())
}
