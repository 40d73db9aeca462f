use std::fmt;

use super::{Ast, BinOp, Func, Scope, Var};

/// Parse failure with the byte offset into the source and its line/column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(src: &str, offset: usize, message: impl Into<String>) -> Self {
        let before = &src[..offset.min(src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Self {
            offset,
            line,
            col,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer {
            src,
            toks: Vec::new(),
        };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => i += 1,
                b'0'..=b'9' | b'.' => i = lx.number(i)?,
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                        i += 1;
                    }
                    lx.toks.push((Tok::Ident(src[start..i].to_string()), start));
                }
                b'+' | b'-' | b'*' | b'/' | b'^' => {
                    lx.toks.push((Tok::Op(c as char), i));
                    i += 1;
                }
                b'(' => {
                    lx.toks.push((Tok::LParen, i));
                    i += 1;
                }
                b')' => {
                    lx.toks.push((Tok::RParen, i));
                    i += 1;
                }
                b',' => {
                    lx.toks.push((Tok::Comma, i));
                    i += 1;
                }
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(ParseError::new(src, i, format!("unexpected character '{ch}'")));
                }
            }
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }

    fn number(&mut self, start: usize) -> Result<usize, ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = start;
        let mut digits = 0;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
            digits += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            return Err(ParseError::new(self.src, start, "malformed number"));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let exp_start = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j == exp_start {
                return Err(ParseError::new(self.src, i, "malformed exponent"));
            }
            i = j;
        }
        let text = &self.src[start..i];
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(self.src, start, format!("malformed number '{text}'")))?;
        self.toks.push((Tok::Num(value), start));
        Ok(i)
    }
}

struct Parser<'a> {
    src: &'a str,
    scope: &'a Scope,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

/// Parses `src` against `scope`, resolving every identifier.
pub fn parse(src: &str, scope: &Scope) -> Result<Ast, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::new(src, 0, "empty expression"));
    }
    let toks = Lexer::run(src)?;
    let mut p = Parser {
        src,
        scope,
        toks,
        pos: 0,
    };
    let ast = p.expr()?;
    match p.peek() {
        Tok::End => Ok(ast),
        Tok::RParen => Err(p.error("unbalanced ')'")),
        _ => Err(p.error("unexpected token")),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> ParseError {
        let msg = if matches!(self.peek(), Tok::End) {
            format!("{msg}: unexpected end of input")
        } else {
            msg.to_string()
        };
        ParseError::new(self.src, self.offset(), msg)
    }

    fn expr(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Ast::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Ast::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                // a bare literal folds into a negative constant
                if let Tok::Num(n) = *self.peek() {
                    if !matches!(self.peek_at(1), Tok::Op('^')) {
                        self.bump();
                        return Ok(Ast::Const(-n));
                    }
                }
                Ok(Ast::neg(self.unary()?))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Ast, ParseError> {
        let base = self.primary()?;
        if matches!(self.peek(), Tok::Op('^')) {
            self.bump();
            let exp = self.unary()?;
            Ok(Ast::bin(BinOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Ast, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Ast::Const(n))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if !matches!(self.peek(), Tok::RParen) {
                    return Err(self.error("expected ')'"));
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if matches!(self.peek(), Tok::LParen) {
                    self.call(&name, at)
                } else {
                    self.variable(&name, at)
                }
            }
            Tok::End => Err(self.error("expected operand")),
            Tok::RParen => Err(self.error("unbalanced ')'")),
            _ => Err(self.error("expected operand")),
        }
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Ast, ParseError> {
        let func = Func::from_name(name)
            .ok_or_else(|| ParseError::new(self.src, at, format!("unknown function '{name}'")))?;
        self.bump(); // '('
        let mut args = vec![self.expr()?];
        while matches!(self.peek(), Tok::Comma) {
            self.bump();
            args.push(self.expr()?);
        }
        if !matches!(self.peek(), Tok::RParen) {
            return Err(self.error("expected ')'"));
        }
        self.bump();
        if args.len() != 1 {
            return Err(ParseError::new(
                self.src,
                at,
                format!("function '{name}' takes 1 argument, got {}", args.len()),
            ));
        }
        Ok(Ast::call(func, args.pop().unwrap()))
    }

    fn variable(&self, name: &str, at: usize) -> Result<Ast, ParseError> {
        if let Some(i) = self.scope.param_index(name) {
            return Ok(Ast::Var(Var::Param(i)));
        }
        if name == "t" {
            return Ok(Ast::Var(Var::T));
        }
        if name == "pi" {
            return Ok(Ast::Const(std::f64::consts::PI));
        }
        if let Some(idx) = name.strip_prefix('y').and_then(|d| d.parse::<usize>().ok()) {
            if idx >= 1 && idx <= self.scope.dim && !name[1..].starts_with('0') {
                return Ok(Ast::Var(Var::State(idx - 1)));
            }
            return Err(ParseError::new(
                self.src,
                at,
                format!("state variable '{name}' out of range for dimension {}", self.scope.dim),
            ));
        }
        if Func::from_name(name).is_some() {
            return Err(ParseError::new(self.src, at, format!("function '{name}' needs an argument")));
        }
        Err(ParseError::new(self.src, at, format!("unknown identifier '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope() -> Scope {
        Scope::new(3, ["mu", "eps"])
    }

    #[test]
    fn robertson_component() {
        let a = parse("-0.04*y1 + 1e4*y2*y3", &scope()).unwrap();
        let v = a.eval(0.0, &[1.0, 2e-5, 0.5], &[0.0, 0.0]);
        assert!((v - (-0.04 + 1e4 * 2e-5 * 0.5)).abs() < 1e-15);
        let a = parse("-.04*y1", &scope()).unwrap();
        assert_eq!(a.eval(0.0, &[1.0, 0.0, 0.0], &[0.0, 0.0]), -0.04);
    }

    #[test]
    fn variable_node() {
        assert_eq!(parse("t", &scope()).unwrap(), Ast::Var(Var::T));
        assert_eq!(parse(" y2 ", &scope()).unwrap(), Ast::Var(Var::State(1)));
        assert_eq!(parse("eps", &scope()).unwrap(), Ast::Var(Var::Param(1)));
    }

    #[test]
    fn unterminated_call_reports_offset() {
        let e = parse("sin(", &scope()).unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(e.to_string().starts_with("1:5: "), "{e}");
    }

    #[test]
    fn error_cases_carry_offsets() {
        let e = parse("y1 + foo(t)", &scope()).unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(e.message.contains("unknown function"));

        let e = parse("y1 + z", &scope()).unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(e.message.contains("unknown identifier"));

        let e = parse("y4", &scope()).unwrap_err();
        assert_eq!(e.offset, 0);

        let e = parse("(y1 + y2", &scope()).unwrap_err();
        assert_eq!(e.offset, 8);

        let e = parse("y1 + y2)", &scope()).unwrap_err();
        assert_eq!(e.offset, 7);
        assert!(e.message.contains("unbalanced"));

        let e = parse("sin(t, y1)", &scope()).unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(e.message.contains("argument"));

        let e = parse("y1 $ 2", &scope()).unwrap_err();
        assert_eq!(e.offset, 3);

        let e = parse("1e+", &scope()).unwrap_err();
        assert_eq!(e.offset, 1);

        assert!(parse("   ", &scope()).is_err());
    }

    #[test]
    fn line_and_column_on_multiline_source() {
        let e = parse("y1 +\n  bogus", &scope()).unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        assert_eq!(e.to_string(), "2:3: unknown identifier 'bogus'");
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse("y1*y2+mu", &scope()).unwrap();
        let b = parse("  y1 *\ty2 +\n mu ", &scope()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_shadows_pi() {
        let s = Scope::new(1, ["pi"]);
        assert_eq!(parse("pi", &s).unwrap(), Ast::Var(Var::Param(0)));
        let s = Scope::new(1, Vec::<String>::new());
        assert_eq!(parse("pi", &s).unwrap(), Ast::Const(std::f64::consts::PI));
    }
}
