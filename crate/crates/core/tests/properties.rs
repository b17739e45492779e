mod common;

use std::collections::HashMap;

use almost_poisson::bracket::{invert, jacobiizer};
use almost_poisson::cli::format_g17;
use almost_poisson::expr::Expr;
use almost_poisson::field::PhasePoint;
use almost_poisson::tensor::{canonical_poisson, ExprTensorField, Variance};
use proptest::prelude::*;

fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..50).prop_map(|n| format!("{}", n as f64 / 4.0)),
        prop::sample::select(vec!["x", "y", "z"]).prop_map(String::from),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}*{b}")),
            (inner.clone(), 1u8..4).prop_map(|(a, n)| format!("({a})^{n}")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (prop::sample::select(vec!["sin", "cos", "exp"]), inner).prop_map(|(f, a)| format!("{f}({a})")),
        ]
    })
}

fn bindings(x: f64, y: f64, z: f64) -> HashMap<String, f64> {
    [("x", x), ("y", y), ("z", z)].iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn display_then_parse_is_identity(src in expr_source()) {
        let e = Expr::parse(&src).unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(&again, &e, "printed as {}", e);
    }

    #[test]
    fn differentiation_is_linear(
        a in expr_source(),
        b in expr_source(),
        c in -3.0..3.0f64,
        x in -1.0..1.0f64,
        y in -1.0..1.0f64,
        z in -1.0..1.0f64,
    ) {
        let (ea, eb) = (Expr::parse(&a).unwrap(), Expr::parse(&b).unwrap());
        let combo = Expr::num(c) * ea.clone() + eb.clone();
        let env = bindings(x, y, z);
        let eval = |e: &Expr| e.differentiate("x").evaluate(&env);
        let (l, ra, rb) = (eval(&combo), eval(&ea), eval(&eb));
        // overflow is reported as a domain error; the property is about finite values
        prop_assume!(l.is_ok() && ra.is_ok() && rb.is_ok());
        let (lhs, rhs) = (l.unwrap(), c * ra.unwrap() + rb.unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn derivative_matches_central_difference(src in expr_source(), x in -1.0..1.0f64) {
        let e = Expr::parse(&src).unwrap();
        let h = 1e-5;
        let at = |t: f64| e.evaluate(&bindings(t, 0.3, -0.7));
        let d = e.differentiate("x").evaluate(&bindings(x, 0.3, -0.7));
        prop_assume!(d.is_ok() && at(x + h).is_ok() && at(x - h).is_ok());
        let (d, fp, fm) = (d.unwrap(), at(x + h).unwrap(), at(x - h).unwrap());
        let fd = (fp - fm) / (2.0 * h);
        prop_assume!(d.abs() < 1e3);
        // truncation plus cancellation in the difference quotient
        let roundoff = 4.0 * f64::EPSILON * fp.abs().max(fm.abs()) / h;
        prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()) + roundoff, "{} vs {}", d, fd);
    }

    #[test]
    fn invert_twice_is_identity(entries in prop::collection::vec(-1.0..1.0f64, 15), x in -1.0..1.0f64) {
        // canonical plus a small perturbation stays nondegenerate
        let base = canonical_poisson(3);
        let mut k = 0;
        let mut upper = vec![vec![Expr::num(0.0); 6]; 6];
        for i in 0..6 {
            for j in i + 1..6 {
                upper[i][j] = Expr::num(base[(i, j)] + 0.2 * entries[k]) + Expr::num(0.1) * Expr::var("a");
                k += 1;
            }
        }
        let vars = ["a", "b", "c", "d", "e", "f"];
        let t = ExprTensorField::new(Variance::Contravariant, &vars, |i, j| upper[i][j].clone()).unwrap();
        let pt = PhasePoint::new(vec![x, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let inv = invert(&t, &pt).unwrap();
        let back = almost_poisson::tensor::invert_antisymmetric(&inv).unwrap();
        let direct = almost_poisson::tensor::AntisymTensorField::components(&t, pt.as_slice()).unwrap();
        prop_assert!((back - &direct).amax() <= 1e-12);
        prop_assert!((&inv + inv.transpose()).amax() == 0.0);
    }

    #[test]
    fn jacobiizer_is_totally_antisymmetric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let zero = nalgebra::DMatrix::zeros(4, 4);
        let (j, _) = common::random_tensor(&mut rng, Variance::Contravariant, &zero, 1.0);
        let x = common::random_point(&mut rng, 4);
        prop_assert!(jacobiizer(&j, &x).unwrap().antisymmetry_defect() <= 1e-12);
    }

    #[test]
    fn g17_round_trips(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = format_g17(x);
        prop_assert_eq!(s.parse::<f64>().unwrap(), x);
        prop_assert!(!s.contains(','));
    }
}
