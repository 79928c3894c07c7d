//! Arithmetic expressions over chart coordinates.
//!
//! The grammar is deliberately small: coordinates `x1..xn`, numeric
//! literals, `pi`, the operators `+ - * / ^` with usual precedence
//! (`^` binds tightest and associates right), unary minus, parentheses,
//! and the functions `sin cos exp log sqrt`. Parsing reports byte offsets
//! so config errors point at the offending character.

use std::fmt;
use thiserror::Error;

use super::jet::Jet;

/// Unary function names admitted in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index (source text `x1` is `Coord(0)`).
    Coord(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {0}: {1}")]
    Syntax(usize, String),
    #[error("unknown identifier `{1}` at byte {0}")]
    UnknownIdentifier(usize, String),
}

/// Anything the evaluator can compute with.
pub trait Scalar: Copy {
    fn from_f64(v: f64) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, e: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn pow_general(self, e: Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, e: i32) -> Self {
        f64::powi(self, e)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn pow_general(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    fn add(self, o: Self) -> Self {
        Jet::add(self, o)
    }
    fn sub(self, o: Self) -> Self {
        Jet::sub(self, o)
    }
    fn mul(self, o: Self) -> Self {
        Jet::mul(self, o)
    }
    fn div(self, o: Self) -> Self {
        Jet::div(self, o)
    }
    fn neg(self) -> Self {
        Jet::neg(self)
    }
    fn sin(self) -> Self {
        Jet::sin(self)
    }
    fn cos(self) -> Self {
        Jet::cos(self)
    }
    fn exp(self) -> Self {
        Jet::exp(self)
    }
    fn ln(self) -> Self {
        Jet::ln(self)
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn powi(self, e: i32) -> Self {
        Jet::powi(self, e)
    }
    fn powf(self, p: f64) -> Self {
        Jet::powf(self, p)
    }
    fn pow_general(self, e: Self) -> Self {
        // No closed recurrence for jet^jet; go through exp/log.
        self.ln().mul(e).exp()
    }
}

impl Expr {
    /// Parse an expression from source text.
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(ParseError::Syntax(p.pos, "unexpected trailing input".into()));
        }
        Ok(e)
    }

    /// Largest coordinate index mentioned, if any.
    pub fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Coord(i) => Some(*i),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => match (a.max_coord(), b.max_coord()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
            Expr::Neg(a) | Expr::Call(_, a) => a.max_coord(),
        }
    }

    /// Evaluate over any scalar type (plain numbers or jets).
    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Expr::Const(v) => T::from_f64(*v),
            Expr::Coord(i) => x[*i],
            Expr::Add(a, b) => a.eval(x).add(b.eval(x)),
            Expr::Sub(a, b) => a.eval(x).sub(b.eval(x)),
            Expr::Mul(a, b) => a.eval(x).mul(b.eval(x)),
            Expr::Div(a, b) => a.eval(x).div(b.eval(x)),
            Expr::Pow(a, b) => {
                let base = a.eval(x);
                // Integer literal exponents use the powi path so that
                // negative bases (x1^2 with x1 < 0) stay well defined.
                if let Expr::Const(p) = **b {
                    if p.fract() == 0.0 && p.abs() <= 64.0 {
                        return base.powi(p as i32);
                    }
                    return base.powf(p);
                }
                base.pow_general(b.eval(x))
            }
            Expr::Neg(a) => a.eval(x).neg(),
            Expr::Call(f, a) => {
                let v = a.eval(x);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, rhs: bool) -> fmt::Result {
        let me = self.precedence();
        // Subtraction and division need parens on an equal-precedence right
        // operand; powers are right-associative so the mirror rule applies.
        let need = me < parent || (me == parent && rhs && me != 4) || (me == parent && !rhs && me == 4);
        if need {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(v) => write!(f, "{}", v)?,
            Expr::Coord(i) => write!(f, "x{}", i + 1)?,
            Expr::Add(a, b) => {
                a.fmt_prec(f, me, false)?;
                write!(f, " + ")?;
                b.fmt_prec(f, me, true)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, me, false)?;
                write!(f, " - ")?;
                b.fmt_prec(f, me, true)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, me, false)?;
                write!(f, "*")?;
                b.fmt_prec(f, me, true)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, me, false)?;
                write!(f, "/")?;
                b.fmt_prec(f, me, true)?;
            }
            Expr::Pow(a, b) => {
                a.fmt_prec(f, me, false)?;
                write!(f, "^")?;
                b.fmt_prec(f, me, true)?;
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, me, true)?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0, false)?;
                write!(f, ")")?;
            }
        }
        if need {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// Convenience constructors for building trees in code.
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }
    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::Pow(Box::new(a), Box::new(b))
    }
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }
    pub fn call(fun: Func, a: Expr) -> Expr {
        Expr::Call(fun, Box::new(a))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    lhs = Expr::mul(lhs, self.factor()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    lhs = Expr::div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            self.skip_ws();
            return Ok(Expr::neg(self.factor()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            // Right associative; the exponent may carry a unary minus.
            let exp = self.factor()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            None => Err(ParseError::Syntax(start, "expected an operand".into())),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(ParseError::Syntax(self.pos, "expected `)`".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(ParseError::Syntax(
                start,
                format!("unexpected character `{}`", c as char),
            )),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                // exponent part, optionally signed
                let mut look = self.pos + 1;
                if matches!(self.src.get(look), Some(b'+') | Some(b'-')) {
                    look += 1;
                }
                if matches!(self.src.get(look), Some(d) if d.is_ascii_digit()) {
                    self.pos = look + 1;
                    while matches!(self.peek(), Some(d) if d.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
                break;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError::Syntax(start, format!("bad numeric literal `{}`", text)))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 {
                    return Ok(Expr::Coord(k - 1));
                }
            }
        }
        if name == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        let func = match name.as_str() {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        };
        let Some(func) = func else {
            return Err(ParseError::UnknownIdentifier(start, name));
        };
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return Err(ParseError::Syntax(self.pos, format!("expected `(` after `{}`", name)));
        }
        self.pos += 1;
        let arg = self.expr()?;
        self.skip_ws();
        if self.peek() != Some(b')') {
            return Err(ParseError::Syntax(self.pos, "expected `)`".into()));
        }
        self.pos += 1;
        Ok(Expr::call(func, arg))
    }
}
