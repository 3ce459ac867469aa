use std::collections::BTreeMap;

use structa::corpus;
use structa::loopgen::{render, run_kernel, ElemType, KernelOptions};
use structa::pipeline::{compile, first_difference, random_inputs};

fn guards(id: &str) -> Vec<String> {
    let p = corpus::find(id).unwrap().program().unwrap();
    let c = compile(&p, KernelOptions::default()).unwrap();
    c.kernels
        .iter()
        .flat_map(|k| k.compute.iter().chain(&k.reconstruct))
        .flat_map(|n| n.loop_guards().map(|g| g.to_string()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn covariance_and_table1_nests_have_no_guards_inside_loops() {
    for e in corpus::covariance().iter().chain(&corpus::table1()).chain([&corpus::outer()]) {
        assert_eq!(guards(&e.id), Vec::<String>::new(), "{}", e.id);
    }
}

#[test]
fn outer_product_nest_is_triangular() {
    let p = corpus::outer().program().unwrap();
    let c = compile(&p, KernelOptions::default()).unwrap();
    let k = &c.kernels[0];
    assert_eq!(k.compute.len(), 1);
    assert_eq!(k.compute[0].loop_vars(), ["i", "j"]);
    let text = render(&c.kernels, ElemType::Int);
    assert!(text.contains("for (int64_t j = i; j < n; ++j)"), "{text}");
}

#[test]
fn hoisting_and_variant_do_not_change_results() {
    for e in corpus::kernels() {
        let p = e.program().unwrap();
        let sizes = e.sizes(6);
        let base = compile(&p, KernelOptions::default()).unwrap();
        let inputs = random_inputs::<i64>(&p, &base.ctx, &sizes, 5).unwrap();
        let outs = |opts: KernelOptions| -> BTreeMap<String, _> {
            let c = compile(&p, opts).unwrap();
            c.kernels.iter().map(|k| (k.name.clone(), run_kernel(k, &sizes, &inputs).unwrap().0)).collect()
        };
        let want = outs(KernelOptions::default());
        for opts in [
            KernelOptions { hoist: false, structured: true },
            KernelOptions { hoist: true, structured: false },
            KernelOptions { hoist: false, structured: false },
        ] {
            for (name, got) in outs(opts) {
                assert_eq!(first_difference(&want[&name], &got), None, "{} {name} {opts:?}", e.id);
            }
        }
    }
}

#[test]
fn structured_kernels_do_less_work() {
    for e in corpus::covariance().iter().chain(&corpus::table1()) {
        let p = e.program().unwrap();
        let sizes = e.sizes(8);
        let inputs = random_inputs::<i64>(&p, &compile(&p, KernelOptions::default()).unwrap().ctx, &sizes, 1).unwrap();
        let mults = |structured| {
            let c = compile(&p, KernelOptions { hoist: true, structured }).unwrap();
            c.kernels.iter().map(|k| run_kernel(k, &sizes, &inputs).unwrap().1.mults).sum::<u64>()
        };
        assert!(mults(true) < mults(false), "{}", e.id);
    }
}

#[test]
fn rendering_is_deterministic() {
    for e in corpus::kernels() {
        let p = e.program().unwrap();
        let a = render(&compile(&p, KernelOptions::default()).unwrap().kernels, ElemType::Float);
        let b = render(&compile(&p, KernelOptions::default()).unwrap().kernels, ElemType::Float);
        assert_eq!(a, b, "{}", e.id);
        assert!(a.contains("double"), "{}", e.id);
    }
}
