mod common;

use almost_poisson::bracket::{
    bracket, decompose, ham_vector_field, invert, jacobiizer, symplecticizer, theorem23_residual,
};
use almost_poisson::error::Error;
use almost_poisson::expr::Expr;
use almost_poisson::field::{coordinate, ExprField, PhasePoint, ScalarField};
use almost_poisson::tensor::{
    canonical_poisson, AntisymTensorField, ConstantTensor, ExprTensorField, Variance,
};
use common::*;
use nalgebra::DMatrix;

/// Symbolic `[f, g]` for a tensor given by expression entries.
fn symbolic_bracket(j: &DMatrix<Expr>, f: &Expr, g: &Expr) -> Expr {
    let mut sum = Expr::num(0.0);
    for i in 0..4 {
        for k in 0..4 {
            if j[(i, k)].is_zero() {
                continue;
            }
            sum = sum + j[(i, k)].clone() * f.differentiate(VARS[i]) * g.differentiate(VARS[k]);
        }
    }
    sum
}

#[test]
fn jacobiizer_contracts_to_the_cyclic_double_bracket() {
    // [f,[g,h]] + cyclic = −J^{kij} ∂_k f ∂_i g ∂_j h
    let mut rng = rng(11);
    let zero = DMatrix::zeros(4, 4);
    for _ in 0..20 {
        let (j, entries) = random_tensor(&mut rng, Variance::Contravariant, &zero, 1.0);
        let fields: Vec<ExprField> = (0..3).map(|_| random_field(&mut rng, 4)).collect();
        let x = random_point(&mut rng, 4);
        let e: Vec<&Expr> = fields.iter().map(|f| f.expr()).collect();
        let mut cyclic = 0.0;
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            let inner = ExprField::new(symbolic_bracket(&entries, e[b], e[c]), &VARS).unwrap();
            cyclic += bracket(&j, &fields[a], &inner, &x).unwrap();
        }
        let jac = jacobiizer(&j, &x).unwrap();
        let grads: Vec<_> = fields.iter().map(|f| f.gradient(x.as_slice()).unwrap()).collect();
        let mut contracted = 0.0;
        for k in 0..4 {
            for i in 0..4 {
                for l in 0..4 {
                    contracted += jac.get(k, i, l) * grads[0][k] * grads[1][i] * grads[2][l];
                }
            }
        }
        assert!((cyclic + contracted).abs() <= 1e-9 * (1.0 + cyclic.abs()), "{cyclic} vs {contracted}");
    }
}

#[test]
fn coordinate_brackets_recover_the_tensor() {
    let mut rng = rng(12);
    let (j, _) = random_tensor(&mut rng, Variance::Contravariant, &DMatrix::zeros(4, 4), 1.0);
    let x = random_point(&mut rng, 4);
    let jm = j.components(x.as_slice()).unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let v = bracket(&j, &coordinate(4, a), &coordinate(4, b), &x).unwrap();
            assert_eq!(v, jm[(a, b)]);
        }
    }
}

#[test]
fn so3_tensor_is_poisson_and_odd() {
    let names = ["x", "y", "z", "w"];
    // so(3) on the first three coordinates, w a Casimir direction
    let t = ExprTensorField::new(Variance::Contravariant, &names, |i, j| match (i, j) {
        (0, 1) => Expr::var("z"),
        (0, 2) => -Expr::var("y"),
        (1, 2) => Expr::var("x"),
        _ => Expr::num(0.0),
    })
    .unwrap();
    let x = PhasePoint::new(vec![0.3, -1.2, 0.7, 2.0]).unwrap();
    assert!(jacobiizer(&t, &x).unwrap().max_abs() <= 1e-15);
    assert!(matches!(invert(&t, &x), Err(Error::Degenerate { .. })));
    let three = ExprTensorField::new(Variance::Contravariant, &names[..3], |_, _| Expr::var("x")).unwrap();
    let y = PhasePoint::new(vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(invert(&three, &y), Err(Error::OddDimension(3))));
}

#[test]
fn variance_is_enforced() {
    let x = PhasePoint::new(vec![0.0; 4]).unwrap();
    let form = ConstantTensor::canonical_form(2);
    let poisson = ConstantTensor::canonical_poisson(2);
    assert!(matches!(jacobiizer(&form, &x), Err(Error::WrongVariance { .. })));
    assert!(matches!(symplecticizer(&poisson, &x), Err(Error::WrongVariance { .. })));
    assert!(matches!(theorem23_residual(&form, &x), Err(Error::WrongVariance { .. })));
    let small = PhasePoint::new(vec![0.0; 2]).unwrap();
    assert!(matches!(jacobiizer(&poisson, &small), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn decomposing_against_itself_leaves_nothing() {
    let x = PhasePoint::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let k = decompose(ConstantTensor::canonical_poisson(2), ConstantTensor::canonical_poisson(2)).unwrap();
    assert_eq!(k.components(x.as_slice()).unwrap(), DMatrix::zeros(4, 4));
}

#[test]
fn canonical_vector_field_is_hamiltons_equations() {
    // H = (p^2 + q^2)/2 gives q̇ = p, ṗ = −q
    let h = ExprField::parse("(p^2 + q^2)/2", &["q", "p"]).unwrap();
    let x = PhasePoint::new(vec![0.7, -0.2]).unwrap();
    let j = ConstantTensor::new(Variance::Contravariant, canonical_poisson(1)).unwrap();
    let v = ham_vector_field(&j, &h, &x).unwrap();
    assert_eq!(v.components().as_slice(), &[-0.2, -0.7]);
}
