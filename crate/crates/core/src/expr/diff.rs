use super::{Ast, BinOp, Func, Var};

/// Exact symbolic derivative of `ast` with respect to `wrt`, simplified.
pub fn differentiate(ast: &Ast, wrt: Var) -> Ast {
    simplify(&d(ast, wrt))
}

fn d(ast: &Ast, wrt: Var) -> Ast {
    use Ast::*;
    match ast {
        Const(_) => Const(0.0),
        Var(v) => Const(if *v == wrt { 1.0 } else { 0.0 }),
        Neg(a) => Ast::neg(d(a, wrt)),
        Binary(op, a, b) => {
            let (da, db) = (d(a, wrt), d(b, wrt));
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => Ast::bin(BinOp::Add, da, db),
                BinOp::Sub => Ast::bin(BinOp::Sub, da, db),
                BinOp::Mul => Ast::bin(
                    BinOp::Add,
                    Ast::bin(BinOp::Mul, da, b.clone()),
                    Ast::bin(BinOp::Mul, a, db),
                ),
                BinOp::Div => Ast::bin(
                    BinOp::Div,
                    Ast::bin(
                        BinOp::Sub,
                        Ast::bin(BinOp::Mul, da, b.clone()),
                        Ast::bin(BinOp::Mul, a, db),
                    ),
                    Ast::bin(BinOp::Pow, b, Const(2.0)),
                ),
                BinOp::Pow => {
                    if !b.depends_on(wrt) {
                        // c * a^(c-1) * a'
                        Ast::bin(
                            BinOp::Mul,
                            Ast::bin(
                                BinOp::Mul,
                                b.clone(),
                                Ast::bin(BinOp::Pow, a, Ast::bin(BinOp::Sub, b, Const(1.0))),
                            ),
                            da,
                        )
                    } else {
                        // a^b * (b' log a + b a'/a)
                        Ast::bin(
                            BinOp::Mul,
                            Ast::bin(BinOp::Pow, a.clone(), b.clone()),
                            Ast::bin(
                                BinOp::Add,
                                Ast::bin(BinOp::Mul, db, Ast::call(Func::Log, a.clone())),
                                Ast::bin(BinOp::Div, Ast::bin(BinOp::Mul, b, da), a),
                            ),
                        )
                    }
                }
            }
        }
        Call(f, a) => {
            let inner = (**a).clone();
            let outer = match f {
                Func::Sin => Ast::call(Func::Cos, inner),
                Func::Cos => Ast::neg(Ast::call(Func::Sin, inner)),
                Func::Tan => Ast::bin(
                    BinOp::Div,
                    Const(1.0),
                    Ast::bin(BinOp::Pow, Ast::call(Func::Cos, inner), Const(2.0)),
                ),
                Func::Exp => Ast::call(Func::Exp, inner),
                Func::Log => Ast::bin(BinOp::Div, Const(1.0), inner),
                Func::Sqrt => Ast::bin(
                    BinOp::Div,
                    Const(0.5),
                    Ast::call(Func::Sqrt, inner),
                ),
                Func::Sinh => Ast::call(Func::Cosh, inner),
                Func::Cosh => Ast::call(Func::Sinh, inner),
                Func::Tanh => Ast::bin(
                    BinOp::Sub,
                    Const(1.0),
                    Ast::bin(BinOp::Pow, Ast::call(Func::Tanh, inner), Const(2.0)),
                ),
                // sign(u) = u/|u|
                Func::Abs => Ast::bin(BinOp::Div, inner.clone(), Ast::call(Func::Abs, inner)),
            };
            Ast::bin(BinOp::Mul, outer, d(a, wrt))
        }
    }
}

/// Folds constants and removes additive/multiplicative identities.
/// Never changes the value of a finite evaluation.
pub fn simplify(ast: &Ast) -> Ast {
    use Ast::*;
    match ast {
        Const(_) | Var(_) => ast.clone(),
        Neg(a) => match simplify(a) {
            Const(c) => Const(-c),
            Neg(inner) => *inner,
            s => Ast::neg(s),
        },
        Call(f, a) => match simplify(a) {
            Const(c) => Const(f.apply(c)),
            s => Ast::call(*f, s),
        },
        Binary(op, a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            if let (Const(x), Const(y)) = (&a, &b) {
                return Const(Ast::bin(*op, Const(*x), Const(*y)).eval(0.0, &[], &[]));
            }
            match op {
                BinOp::Add if a.is_const(0.0) => b,
                BinOp::Add | BinOp::Sub if b.is_const(0.0) => a,
                BinOp::Sub if a.is_const(0.0) => simplify(&Ast::neg(b)),
                BinOp::Mul if a.is_const(0.0) || b.is_const(0.0) => Const(0.0),
                BinOp::Mul if a.is_const(1.0) => b,
                BinOp::Mul | BinOp::Div if b.is_const(1.0) => a,
                BinOp::Div if a.is_const(0.0) => Const(0.0),
                BinOp::Pow if b.is_const(1.0) => a,
                BinOp::Pow if b.is_const(0.0) => Const(1.0),
                _ => Ast::bin(*op, a, b),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};

    #[test]
    fn exp_derivative_at_zero() {
        let s = Scope::new(1, Vec::<String>::new());
        let e = parse("exp(y1)", &s).unwrap();
        let de = differentiate(&e, Var::State(0));
        assert_eq!(de.eval(0.0, &[0.0], &[]), 1.0);
    }

    #[test]
    fn van_der_pol_second_component() {
        let s = Scope::new(2, ["mu"]);
        let e = parse("-y1 + mu*y2*(1-y1^2)", &s).unwrap();
        let de = differentiate(&e, Var::State(1));
        assert_eq!(de.display(&s).to_string(), "mu*(1 - y1^2)");
        let mu = 7.0;
        let y = [0.3, -1.2];
        assert!((de.eval(0.0, &y, &[mu]) - mu * (1.0 - 0.09)).abs() < 1e-14);
    }

    #[test]
    fn independent_variable_gives_zero() {
        let s = Scope::new(2, Vec::<String>::new());
        let e = parse("y2", &s).unwrap();
        assert_eq!(differentiate(&e, Var::State(0)), Ast::Const(0.0));
    }

    #[test]
    fn chain_rule_through_sinh() {
        let s = Scope::new(1, ["mu"]);
        let e = parse("mu*sinh(mu*y1)", &s).unwrap();
        let de = differentiate(&e, Var::State(0));
        let (mu, y) = (3.0_f64, 0.2_f64);
        let expect = mu * mu * (mu * y).cosh();
        assert!((de.eval(0.0, &[y], &[mu]) - expect).abs() < 1e-12);
    }

    #[test]
    fn variable_exponent() {
        let s = Scope::new(2, Vec::<String>::new());
        let e = parse("y1^y2", &s).unwrap();
        let de = differentiate(&e, Var::State(1));
        let (a, b) = (1.7_f64, 0.6_f64);
        assert!((de.eval(0.0, &[a, b], &[]) - a.powf(b) * a.ln()).abs() < 1e-13);
    }

    #[test]
    fn time_derivative() {
        let s = Scope::new(1, Vec::<String>::new());
        let e = parse("t*sin(t) + y1", &s).unwrap();
        let de = differentiate(&e, Var::T);
        let t = 0.4_f64;
        assert!((de.eval(t, &[5.0], &[]) - (t.sin() + t * t.cos())).abs() < 1e-15);
    }
}
