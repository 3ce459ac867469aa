use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::sample::select;
use structa::frontend::{instantiate_structure, StructureTag};
use structa::inference::infer_program;
use structa::interp::*;
use structa::ir::{IndexExpr, Kind, StructureInfo};
use structa::optimizer::{canonicalize, optimize_rule};
use structa::pipeline::rng;
use structa::textio::{parse, parse_rule, print};

const CMP_OPS: [&str; 6] = ["<", "<=", "=", "!=", ">", ">="];

fn comparison(vars: &[&'static str]) -> impl Strategy<Value = String> {
    let var = select(vars.to_vec());
    let mut atoms = vars.to_vec();
    atoms.extend(["n", "0", "1", "2"]);
    let rhs = prop_oneof![
        select(atoms).prop_map(str::to_string),
        (select(vec!["i", "j"]), 1..3i64).prop_map(|(v, c)| format!("{v} + {c}")),
        select(vec!["n - 1", "j * 2", "n / 2"]).prop_map(str::to_string),
    ];
    (var, select(CMP_OPS.to_vec()), rhs).prop_map(|(v, op, r)| format!("({v} {op} {r})"))
}

fn access() -> impl Strategy<Value = String> {
    let v = || select(vec!["i", "j", "k"]);
    prop_oneof![
        v().prop_map(|a| format!("a({a})")),
        (v(), v()).prop_map(|(x, y)| format!("b({x}, {y})")),
    ]
}

fn product() -> impl Strategy<Value = String> {
    (prop::collection::vec(access(), 1..3), prop::collection::vec(comparison(&["i", "j", "k"]), 0..4)).prop_map(|(a, c)| {
        let mut fs = a;
        let reads = fs.concat();
        fs.extend(c);
        for v in ['i', 'j', 'k'] {
            let all = fs.concat();
            if (v != 'k' || all.contains(v)) && !reads.contains(v) {
                fs.push(format!("a({v})"));
            }
        }
        fs.join(" * ")
    })
}

fn program() -> impl Strategy<Value = String> {
    prop::collection::vec(product(), 1..3).prop_map(|ps| {
        format!("@size n\n@dim a(n)\n@dim b(n, n)\n@dim O(n, n)\nO(i, j) := {}\n", ps.join(" + "))
    })
}

fn set_rule() -> impl Strategy<Value = String> {
    let product = prop::collection::vec(comparison(&["i", "j"]), 1..5).prop_map(|c| c.join(" * "));
    prop::collection::vec(product, 1..3).prop_map(|ps| format!("S:U(i, j) := {}", ps.join(" + ")))
}

fn tag() -> impl Strategy<Value = StructureTag> {
    use StructureTag::*;
    select(vec![Z, G, D, S, UpperTriangular, Row(IndexExpr::Const(1)), Col(IndexExpr::Const(2))])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn printing_round_trips(src in program()) {
        let p = parse(&src).unwrap();
        prop_assert_eq!(parse(&print(&p)).unwrap(), p);
    }

    #[test]
    fn canonicalize_is_idempotent(src in program()) {
        let p = parse(&src).unwrap();
        let once = canonicalize(&p.rules[0].body);
        prop_assert_eq!(canonicalize(&once), once);
    }

    #[test]
    fn set_optimization_keeps_the_set(src in set_rule(), n in 1..6i64) {
        let sizes = vec!["n".to_string()];
        let r = parse_rule(&src, &sizes).unwrap();
        let dims = [n as usize, n as usize];
        let sizes: Sizes = [("n".to_string(), n)].into();
        let before = eval_set(&r, Some(&dims), &sizes).unwrap();
        let after = eval_set(&optimize_rule(&r), Some(&dims), &sizes).unwrap();
        prop_assert_eq!(before, after, "{}", src);
    }

    #[test]
    fn value_optimization_keeps_the_tensor(src in program(), n in 1..6i64, seed in 0..1000u64) {
        let p = parse(&src).unwrap();
        let mut q = p.clone();
        q.rules[0] = optimize_rule(&q.rules[0]);
        let sizes: Sizes = [("n".to_string(), n)].into();
        let mut g = rng(seed);
        let inputs: BTreeMap<String, DenseTensor<i64>> = [
            ("a".to_string(), random_tensor(vec![n as usize], 9, &mut g)),
            ("b".to_string(), random_tensor(vec![n as usize; 2], 9, &mut g)),
        ].into();
        prop_assert_eq!(eval_program(&p, &sizes, &inputs).unwrap(), eval_program(&q, &sizes, &inputs).unwrap());
    }

    #[test]
    fn inferred_structures_are_sound(
        ta in tag(),
        tb in tag(),
        body in select(vec![
            "A(i, j) * B(i, j)",
            "A(i, k) * B(k, j)",
            "A(i, j) + B(i, j)",
            "A(i, j) * B(j, i)",
            "A(i, j) * A(i, j)",
            "A(j, i)",
            "A(i, k) * B(j, k)",
        ]),
        n in 3..6i64,
        seed in 0..1000u64,
    ) {
        let src = format!("@size n\n@dim A(n, n)\n@dim B(n, n)\n@dim E(n, n)\nE(i, j) := {body}\n");
        let p = parse(&src).unwrap();
        let dims = vec![IndexExpr::sym("n"); 2];
        let given: BTreeMap<String, StructureInfo> = [
            ("A".to_string(), instantiate_structure("A", &ta, &dims).unwrap()),
            ("B".to_string(), instantiate_structure("B", &tb, &dims).unwrap()),
        ].into();
        let ctx = infer_program(&p, &given).unwrap();
        let sizes: Sizes = [("n".to_string(), n)].into();
        let mut g = rng(seed);
        let mut inputs = BTreeMap::new();
        for (name, info) in &given {
            inputs.insert(name.clone(), random_structured::<i64, _>(&structure_sets(info, &sizes).unwrap(), 9, &mut g));
        }
        let values = eval_program(&p, &sizes, &inputs).unwrap();
        let r = check_properties("E", ctx.get("E").unwrap(), &sizes, &values["E"]).unwrap();
        prop_assert!(r.all_passed(), "{} with A={} B={}: {}", body, ta, tb, r);
        prop_assert_eq!(ctx.get("E").unwrap().unique.head.kind, Kind::Unique);
    }
}
