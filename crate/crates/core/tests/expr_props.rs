use proptest::prelude::*;
use stiffkit::expr::{differentiate, parse, Ast, BinOp, Func, Scope, Var};

fn scope() -> Scope {
    Scope::new(2, ["mu"])
}

fn leaf() -> impl Strategy<Value = Ast> {
    prop_oneof![
        (0u32..40).prop_map(|k| Ast::Const(k as f64 / 8.0)),
        Just(Ast::Var(Var::T)),
        Just(Ast::Var(Var::State(0))),
        Just(Ast::Var(Var::State(1))),
        Just(Ast::Var(Var::Param(0))),
    ]
}

/// Trees built from operations that are smooth on all of R.
fn smooth_tree() -> impl Strategy<Value = Ast> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Ast::bin(BinOp::Add, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Ast::bin(BinOp::Sub, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Ast::bin(BinOp::Mul, a, b)),
            (inner.clone(), 2i32..4).prop_map(|(a, k)| Ast::bin(BinOp::Pow, a, Ast::Const(k as f64))),
            inner.clone().prop_map(Ast::neg),
            (inner, prop::sample::select(vec![Func::Sin, Func::Cos, Func::Tanh, Func::Sinh]))
                .prop_map(|(a, f)| Ast::call(f, a)),
        ]
    })
}

/// Any tree, including operations with restricted domains.
fn any_tree() -> impl Strategy<Value = Ast> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]))
                .prop_map(|(a, b, op)| Ast::bin(op, a, b)),
            inner.clone().prop_map(Ast::neg),
            (inner, prop::sample::select(Func::ALL.to_vec())).prop_map(|(a, f)| Ast::call(f, a)),
        ]
    })
}

/// Fourth-order central difference in one coordinate.
fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-3;
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

proptest! {
    #[test]
    fn derivative_matches_finite_differences(
        ast in smooth_tree(),
        t in -1.0..1.0f64,
        y1 in -1.0..1.0f64,
        y2 in -1.0..1.0f64,
        mu in -1.0..1.0f64,
    ) {
        for (wrt, x) in [(Var::T, t), (Var::State(0), y1), (Var::State(1), y2)] {
            let d = differentiate(&ast, wrt).eval(t, &[y1, y2], &[mu]);
            let fd = central(
                |s| match wrt {
                    Var::T => ast.eval(s, &[y1, y2], &[mu]),
                    Var::State(0) => ast.eval(t, &[s, y2], &[mu]),
                    _ => ast.eval(t, &[y1, s], &[mu]),
                },
                x,
            );
            let scale = 1.0 + d.abs().max(ast.eval(t, &[y1, y2], &[mu]).abs());
            prop_assert!((d - fd).abs() <= 1e-6 * scale, "{wrt:?}: {d} vs {fd} for {}", ast.display(&scope()));
        }
    }

    #[test]
    fn printing_then_parsing_gives_the_same_tree(ast in any_tree()) {
        let s = scope();
        let printed = ast.display(&s).to_string();
        let back = parse(&printed, &s).unwrap();
        prop_assert_eq!(back, ast, "{}", printed);
    }

    #[test]
    fn parameters_enter_through_the_scope(mu in -5.0..5.0f64, y in -5.0..5.0f64) {
        let e = parse("mu*sinh(mu*y1)", &Scope::new(1, ["mu"])).unwrap();
        prop_assert_eq!(e.eval(0.0, &[y], &[mu]), mu * (mu * y).sinh());
    }
}
