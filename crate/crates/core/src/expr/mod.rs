//! Arithmetic expression language for right-hand sides in problem files.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus and associates to the right, so
//! `-y1^2` is `-(y1^2)` and `2^3^2` is `2^(3^2)`. Identifiers are `t`,
//! the state components `y1..ym`, named parameters, and the constant `pi`
//! (unless a parameter shadows it). Functions: sin, cos, tan, exp, log,
//! sqrt, sinh, cosh, tanh, abs.

mod diff;
mod parse;

use std::fmt;

pub use diff::{differentiate, simplify};
pub use parse::{parse, ParseError};

/// Names visible to an expression: the state dimension and parameter names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scope {
    pub dim: usize,
    pub params: Vec<String>,
}

impl Scope {
    pub fn new(dim: usize, params: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            dim,
            params: params.into_iter().map(Into::into).collect(),
        }
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// Zero-based state index (`y1` is `State(0)`).
    State(usize),
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Abs,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Sinh,
        Func::Cosh,
        Func::Tanh,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(Var),
    Neg(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

impl Ast {
    pub fn constant(c: f64) -> Ast {
        Ast::Const(c)
    }

    pub fn bin(op: BinOp, a: Ast, b: Ast) -> Ast {
        Ast::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn neg(a: Ast) -> Ast {
        Ast::Neg(Box::new(a))
    }

    pub fn call(f: Func, a: Ast) -> Ast {
        Ast::Call(f, Box::new(a))
    }

    /// Evaluates in IEEE double precision. Non-finite intermediate values
    /// propagate; `(-8)^(1/3)` is NaN.
    pub fn eval(&self, t: f64, y: &[f64], params: &[f64]) -> f64 {
        match self {
            Ast::Const(c) => *c,
            Ast::Var(Var::T) => t,
            Ast::Var(Var::State(i)) => y[*i],
            Ast::Var(Var::Param(i)) => params[*i],
            Ast::Neg(a) => -a.eval(t, y, params),
            Ast::Binary(op, a, b) => {
                let x = a.eval(t, y, params);
                let z = b.eval(t, y, params);
                match op {
                    BinOp::Add => x + z,
                    BinOp::Sub => x - z,
                    BinOp::Mul => x * z,
                    BinOp::Div => x / z,
                    BinOp::Pow => pow(x, z),
                }
            }
            Ast::Call(f, a) => f.apply(a.eval(t, y, params)),
        }
    }

    pub fn is_const(&self, value: f64) -> bool {
        matches!(self, Ast::Const(c) if *c == value)
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Ast::Const(_) => false,
            Ast::Var(w) => *w == v,
            Ast::Neg(a) | Ast::Call(_, a) => a.depends_on(v),
            Ast::Binary(_, a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    /// Printable form under `scope`. `parse(display)` reproduces the tree.
    pub fn display<'a>(&'a self, scope: &'a Scope) -> Display<'a> {
        Display { ast: self, scope }
    }
}

fn pow(x: f64, z: f64) -> f64 {
    if z.fract() == 0.0 && z.abs() <= i32::MAX as f64 {
        x.powi(z as i32)
    } else {
        x.powf(z)
    }
}

pub struct Display<'a> {
    ast: &'a Ast,
    scope: &'a Scope,
}

// Precedence levels used by the printer.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(ast: &Ast) -> u8 {
    match ast {
        Ast::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_ATOM,
        Ast::Const(_) | Ast::Var(_) | Ast::Call(..) => PREC_ATOM,
        Ast::Neg(_) => PREC_UNARY,
        Ast::Binary(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
        Ast::Binary(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
        Ast::Binary(BinOp::Pow, ..) => PREC_POW,
    }
}

impl Display<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, ast: &Ast) -> fmt::Result {
        match ast {
            Ast::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Ast::Var(Var::T) => f.write_str("t"),
            Ast::Var(Var::State(i)) => write!(f, "y{}", i + 1),
            Ast::Var(Var::Param(i)) => f.write_str(&self.scope.params[*i]),
            Ast::Neg(a) => {
                f.write_str("-")?;
                // "-2" would re-parse as a folded constant
                self.wrap(f, a, precedence(a) < PREC_UNARY || matches!(**a, Ast::Const(_)))
            }
            Ast::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(f, a)?;
                f.write_str(")")
            }
            Ast::Binary(BinOp::Pow, a, b) => {
                self.wrap(f, a, precedence(a) <= PREC_POW)?;
                f.write_str("^")?;
                self.wrap(f, b, precedence(b) < PREC_UNARY)
            }
            Ast::Binary(op, a, b) => {
                let p = precedence(ast);
                self.wrap(f, a, precedence(a) < p)?;
                f.write_str(match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => unreachable!(),
                })?;
                // left associative: a right operand of equal precedence needs parentheses
                self.wrap(f, b, precedence(b) <= p)
            }
        }
    }

    fn wrap(&self, f: &mut fmt::Formatter<'_>, ast: &Ast, parens: bool) -> fmt::Result {
        if parens {
            f.write_str("(")?;
            self.write(f, ast)?;
            f.write_str(")")
        } else {
            self.write(f, ast)
        }
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.ast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope() -> Scope {
        Scope::new(3, ["mu"])
    }

    #[test]
    fn eval_examples() {
        let s = Scope::new(1, Vec::<String>::new());
        let e = parse("sin(t)+y1^2", &s).unwrap();
        assert_eq!(e.eval(0.0, &[2.0], &[]), 4.0);

        let s = Scope::new(1, ["mu"]);
        let e = parse("mu*sinh(mu*y1)", &s).unwrap();
        assert_eq!(e.eval(0.3, &[0.0], &[1.0]), 0.0);

        let s = Scope::new(2, Vec::<String>::new());
        let e = parse("exp(y1)*y2", &s).unwrap();
        assert_eq!(e.eval(0.0, &[0.0, 3.0], &[]), 3.0);
    }

    #[test]
    fn negative_base_fractional_power_is_nan() {
        let s = Scope::new(1, Vec::<String>::new());
        let e = parse("y1^0.5", &s).unwrap();
        assert!(e.eval(0.0, &[-4.0], &[]).is_nan());
        let e = parse("y1^3", &s).unwrap();
        assert_eq!(e.eval(0.0, &[-2.0], &[]), -8.0);
    }

    #[test]
    fn display_round_trips_tricky_shapes() {
        let s = scope();
        for src in [
            "-y1^2",
            "(-y1)^2",
            "2^3^2",
            "(2^3)^2",
            "y1 - (y2 - y3)",
            "y1/(y2*y3)",
            "y1^-y2",
            "-(y1 + y2)*mu",
            "sin(-t)/-2",
            "pi*t",
        ] {
            let a = parse(src, &s).unwrap();
            let printed = a.display(&s).to_string();
            let b = parse(&printed, &s).unwrap();
            assert_eq!(a, b, "{src} -> {printed}");
        }
    }

    #[test]
    fn precedence_of_power_over_negation() {
        let s = scope();
        let a = parse("-y1^2", &s).unwrap();
        assert_eq!(a.eval(0.0, &[3.0, 0.0, 0.0], &[0.0]), -9.0);
        let a = parse("2^3^2", &s).unwrap();
        assert_eq!(a.eval(0.0, &[0.0; 3], &[0.0]), 512.0);
        let a = parse("8/4/2", &s).unwrap();
        assert_eq!(a.eval(0.0, &[0.0; 3], &[0.0]), 1.0);
    }
}
