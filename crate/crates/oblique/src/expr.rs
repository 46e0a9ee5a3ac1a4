//! Closed expression grammar for coefficient and boundary data.
//!
//! Supported: numeric literals, the variables `x1 x2 xi1 xi2`, the constant
//! `pi`, `+ - * /`, integer powers via `^`, unary minus, and the functions
//! `sin cos sqrt exp` with arbitrary composition. The grammar is closed under
//! differentiation, so profile derivatives are exact rather than finite
//! differences.

use std::fmt;

use thiserror::Error;

/// Variables the grammar knows about. `x1, x2` are macroscopic coordinates,
/// `xi1, xi2` the fast (cell) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X1,
    X2,
    Xi1,
    Xi2,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::Xi1 => "xi1",
            Var::Xi2 => "xi2",
        }
    }
}

/// Point at which an expression is evaluated. Unused variables default to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    pub x1: f64,
    pub x2: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl Env {
    pub fn x1(x1: f64) -> Self {
        Env { x1, ..Env::default() }
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::X1 => self.x1,
            Var::X2 => self.x2,
            Var::Xi1 => self.xi1,
            Var::Xi2 => self.xi2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer power; the exponent is fixed at parse time so the grammar
    /// stays closed under differentiation.
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sqrt(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut p = Parser::new(src);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e.simplified())
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn eval(&self, env: &Env) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => env.get(*v),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Div(a, b) => a.eval(env) / b.eval(env),
            Expr::Pow(a, n) => a.eval(env).powi(*n),
            Expr::Neg(a) => -a.eval(env),
            Expr::Sin(a) => a.eval(env).sin(),
            Expr::Cos(a) => a.eval(env).cos(),
            Expr::Sqrt(a) => a.eval(env).sqrt(),
            Expr::Exp(a) => a.eval(env).exp(),
        }
    }

    /// Exact partial derivative with respect to `v`.
    pub fn derivative(&self, v: Var) -> Expr {
        let d = |e: &Expr| e.derivative(v);
        let raw = match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(w) => Expr::Num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => Expr::Add(Box::new(d(a)), Box::new(d(b))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(d(a)), Box::new(d(b))),
            Expr::Mul(a, b) => Expr::Add(
                Box::new(Expr::Mul(Box::new(d(a)), b.clone())),
                Box::new(Expr::Mul(a.clone(), Box::new(d(b)))),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(Expr::Sub(
                    Box::new(Expr::Mul(Box::new(d(a)), b.clone())),
                    Box::new(Expr::Mul(a.clone(), Box::new(d(b)))),
                )),
                Box::new(Expr::Pow(b.clone(), 2)),
            ),
            Expr::Pow(a, n) => Expr::Mul(
                Box::new(Expr::Mul(
                    Box::new(Expr::Num(f64::from(*n))),
                    Box::new(Expr::Pow(a.clone(), n - 1)),
                )),
                Box::new(d(a)),
            ),
            Expr::Neg(a) => Expr::Neg(Box::new(d(a))),
            Expr::Sin(a) => Expr::Mul(Box::new(Expr::Cos(a.clone())), Box::new(d(a))),
            Expr::Cos(a) => Expr::Neg(Box::new(Expr::Mul(
                Box::new(Expr::Sin(a.clone())),
                Box::new(d(a)),
            ))),
            Expr::Sqrt(a) => Expr::Div(
                Box::new(d(a)),
                Box::new(Expr::Mul(
                    Box::new(Expr::Num(2.0)),
                    Box::new(Expr::Sqrt(a.clone())),
                )),
            ),
            Expr::Exp(a) => Expr::Mul(Box::new(Expr::Exp(a.clone())), Box::new(d(a))),
        };
        raw.simplified()
    }

    /// Replaces every occurrence of `v` by `rep`.
    pub fn substitute(&self, v: Var, rep: &Expr) -> Expr {
        let s = |e: &Expr| Box::new(e.substitute(v, rep));
        let raw = match self {
            Expr::Num(c) => Expr::Num(*c),
            Expr::Var(w) => {
                if *w == v {
                    rep.clone()
                } else {
                    Expr::Var(*w)
                }
            }
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Pow(a, n) => Expr::Pow(s(a), *n),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Sin(a) => Expr::Sin(s(a)),
            Expr::Cos(a) => Expr::Cos(s(a)),
            Expr::Sqrt(a) => Expr::Sqrt(s(a)),
            Expr::Exp(a) => Expr::Exp(s(a)),
        };
        raw.simplified()
    }

    /// Binds `v := value`, leaving the other variables free.
    pub fn bind(&self, v: Var, value: f64) -> Expr {
        self.substitute(v, &Expr::Num(value))
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Sqrt(a)
            | Expr::Exp(a) => a.depends_on(v),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Constant folding and unit/zero identities. Keeps derivative trees small;
    /// never changes the value at any point where the original is finite.
    fn simplified(self) -> Expr {
        match self {
            Expr::Add(a, b) => match (a.simplified(), b.simplified()) {
                (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
                (Expr::Num(z), e) | (e, Expr::Num(z)) if z == 0.0 => e,
                (a, b) => Expr::Add(Box::new(a), Box::new(b)),
            },
            Expr::Sub(a, b) => match (a.simplified(), b.simplified()) {
                (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
                (e, Expr::Num(z)) if z == 0.0 => e,
                (Expr::Num(z), e) if z == 0.0 => Expr::Neg(Box::new(e)),
                (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
            },
            Expr::Mul(a, b) => match (a.simplified(), b.simplified()) {
                (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
                (Expr::Num(z), _) | (_, Expr::Num(z)) if z == 0.0 => Expr::Num(0.0),
                (Expr::Num(o), e) | (e, Expr::Num(o)) if o == 1.0 => e,
                (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
            },
            Expr::Div(a, b) => match (a.simplified(), b.simplified()) {
                (Expr::Num(x), Expr::Num(y)) if y != 0.0 => Expr::Num(x / y),
                (e, Expr::Num(o)) if o == 1.0 => e,
                (a, b) => Expr::Div(Box::new(a), Box::new(b)),
            },
            Expr::Pow(a, n) => match (a.simplified(), n) {
                (_, 0) => Expr::Num(1.0),
                (e, 1) => e,
                (Expr::Num(x), n) => Expr::Num(x.powi(n)),
                (a, n) => Expr::Pow(Box::new(a), n),
            },
            Expr::Neg(a) => match a.simplified() {
                Expr::Num(x) => Expr::Num(-x),
                Expr::Neg(inner) => *inner,
                e => Expr::Neg(Box::new(e)),
            },
            Expr::Sin(a) => match a.simplified() {
                Expr::Num(x) => Expr::Num(x.sin()),
                e => Expr::Sin(Box::new(e)),
            },
            Expr::Cos(a) => match a.simplified() {
                Expr::Num(x) => Expr::Num(x.cos()),
                e => Expr::Cos(Box::new(e)),
            },
            Expr::Sqrt(a) => match a.simplified() {
                Expr::Num(x) if x >= 0.0 => Expr::Num(x.sqrt()),
                e => Expr::Sqrt(Box::new(e)),
            },
            Expr::Exp(a) => match a.simplified() {
                Expr::Num(x) => Expr::Num(x.exp()),
                e => Expr::Exp(Box::new(e)),
            },
            other => other,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { bytes: src.as_bytes(), pos: 0 }
    }

    fn err(&self, msg: &str) -> ParseError {
        ParseError { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let n = self.int_exponent()?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn int_exponent(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        let paren = self.eat(b'(');
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("exponent must be an integer literal"));
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let mag: i32 = digits
            .parse()
            .map_err(|_| self.err("exponent out of range"))?;
        if paren && !self.eat(b')') {
            return Err(self.err("expected ')' after exponent"));
        }
        Ok(if neg { -mag } else { mag })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.err("expected number, variable, function, or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|&d| d.is_ascii_digit() || d == b'+' || d == b'-')
            {
                self.pos += 2;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                break;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ParseError { pos: start, msg: format!("bad number literal '{text}'") })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match name {
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "x1" => Ok(Expr::Var(Var::X1)),
            "x2" => Ok(Expr::Var(Var::X2)),
            "xi1" => Ok(Expr::Var(Var::Xi1)),
            "xi2" => Ok(Expr::Var(Var::Xi2)),
            "sin" | "cos" | "sqrt" | "exp" => {
                if !self.eat(b'(') {
                    return Err(self.err("expected '(' after function name"));
                }
                let arg = Box::new(self.expr()?);
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(match name {
                    "sin" => Expr::Sin(arg),
                    "cos" => Expr::Cos(arg),
                    "sqrt" => Expr::Sqrt(arg),
                    _ => Expr::Exp(arg),
                })
            }
            _ => Err(ParseError {
                pos: start,
                msg: format!("unknown identifier '{name}' (variables: x1 x2 xi1 xi2)"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, env: Env) -> f64 {
        Expr::parse(src).unwrap().eval(&env)
    }

    #[test]
    fn arithmetic_and_precedence() {
        let env = Env::default();
        assert_eq!(ev("1 + 2*3", env), 7.0);
        assert_eq!(ev("(1 + 2)*3", env), 9.0);
        assert_eq!(ev("2^3", env), 8.0);
        assert_eq!(ev("-2^2", env), -4.0);
        assert_eq!(ev("2^(-1)", env), 0.5);
        assert_eq!(ev("6/4", env), 1.5);
        assert_eq!(ev("1 - 2 - 3", env), -4.0);
    }

    #[test]
    fn variables_and_functions() {
        let env = Env { x1: 0.25, x2: 2.0, xi1: 0.5, xi2: 0.0 };
        assert!((ev("sin(2*pi*x1)", env) - 1.0).abs() < 1e-15);
        assert_eq!(ev("sqrt(x2*x2)", env), 2.0);
        assert!((ev("cos(2*pi*xi1)", env) + 1.0).abs() < 1e-15);
        assert_eq!(ev("exp(0*x1)", env), 1.0);
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(ev("1e-2 + 1.5E+1", Env::default()), 15.01);
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = Expr::parse("1 + bogus").unwrap_err();
        assert_eq!(e.pos, 4);
        assert!(Expr::parse("sin(x1").is_err());
        assert!(Expr::parse("x1^x2").is_err());
        assert!(Expr::parse("1 + ").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let cases = [
            "x1^3 - 2*x1 + 1",
            "sin(2*pi*x1)*cos(x1)",
            "sqrt(1 + x1^2)",
            "exp(-x1^2)/(2 + sin(x1))",
            "0.1*(1 - cos(2*pi*x1))",
        ];
        for src in cases {
            let f = Expr::parse(src).unwrap();
            let df = f.derivative(Var::X1);
            for k in 0..7 {
                let x = -0.9 + 0.3 * f64::from(k);
                let h = 1e-6;
                let num = (f.eval(&Env::x1(x + h)) - f.eval(&Env::x1(x - h))) / (2.0 * h);
                let ana = df.eval(&Env::x1(x));
                assert!(
                    (num - ana).abs() < 1e-8 * (1.0 + ana.abs()),
                    "{src} at {x}: {num} vs {ana}"
                );
            }
        }
    }

    #[test]
    fn substitute_binds_cell_variable() {
        // f1(x1, xi1) with x1 frozen and xi1 renamed to x1 for strip reuse.
        let f1 = Expr::parse("(1 + cos(pi*x1))*0.1*(1 - cos(2*pi*xi1))").unwrap();
        let frozen = f1.bind(Var::X1, 0.0).substitute(Var::Xi1, &Expr::var(Var::X1));
        let v = frozen.eval(&Env::x1(0.5));
        assert!((v - 0.2 * 2.0).abs() < 1e-15);
        assert!(!frozen.depends_on(Var::Xi1));
    }

    #[test]
    fn simplification_is_value_preserving() {
        let f = Expr::parse("0*x1 + 1*sin(x1) + x1^0 - 0").unwrap();
        let env = Env::x1(0.3);
        assert!((f.eval(&env) - (0.3f64.sin() + 1.0)).abs() < 1e-15);
    }
}
