//! A small arithmetic expression language for field and source specifications.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x1`, `x2` (position), `t` (solution value) and `z1`, `z2`
//! (gradient components). `pi` is a constant.

use crate::error::{Error, Result};

/// Evaluation environment for an [`Expr`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vars {
    pub x: [f64; 2],
    pub t: f64,
    pub z: [f64; 2],
}

impl Vars {
    pub fn at(x: [f64; 2]) -> Self {
        Vars { x, ..Default::default() }
    }

    fn slot(&self, v: Var) -> f64 {
        match v {
            Var::X1 => self.x[0],
            Var::X2 => self.x[1],
            Var::T => self.t,
            Var::Z1 => self.z[0],
            Var::Z2 => self.z[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X1,
    X2,
    T,
    Z1,
    Z2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Log,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "log" | "ln" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, v: &Vars) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Var(var) => v.slot(*var),
            Node::Neg(a) => -a.eval(v),
            Node::Add(a, b) => a.eval(v) + b.eval(v),
            Node::Sub(a, b) => a.eval(v) - b.eval(v),
            Node::Mul(a, b) => a.eval(v) * b.eval(v),
            Node::Div(a, b) => a.eval(v) / b.eval(v),
            Node::Pow(a, b) => a.eval(v).powf(b.eval(v)),
            Node::Call(f, args) => {
                let a0 = args[0].eval(v);
                match f {
                    Func::Sin => a0.sin(),
                    Func::Cos => a0.cos(),
                    Func::Exp => a0.exp(),
                    Func::Abs => a0.abs(),
                    Func::Sqrt => a0.sqrt(),
                    Func::Log => a0.ln(),
                    Func::Min => args[1..].iter().fold(a0, |m, a| m.min(a.eval(v))),
                    Func::Max => args[1..].iter().fold(a0, |m, a| m.max(a.eval(v))),
                }
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) => a.uses(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses(var) || b.uses(var)
            }
            Node::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(Error::Expr {
                column: tok.column,
                message: format!("unexpected token {:?}", tok.kind),
            });
        }
        Ok(Expr { source: source.to_string(), root })
    }

    pub fn eval(&self, vars: &Vars) -> f64 {
        self.root.eval(vars)
    }

    pub fn eval_at(&self, x: [f64; 2]) -> f64 {
        self.root.eval(&Vars::at(x))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression reads `t`, `z1` or `z2`.
    pub fn depends_on_solution(&self) -> bool {
        self.root.uses(Var::T) || self.depends_on_gradient()
    }

    pub fn depends_on_gradient(&self) -> bool {
        self.root.uses(Var::Z1) || self.root.uses(Var::Z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| Error::Expr {
                column,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token { kind: TokKind::Num(value), column });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(chars[start..i].iter().collect()), column });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
            '·' => TokKind::Op('*'),
            '−' => TokKind::Op('-'),
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ',' => TokKind::Comma,
            _ => {
                return Err(Error::Expr { column, message: format!("unexpected character '{c}'") });
            }
        };
        out.push(Token { kind, column });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.column)
            .or_else(|| self.tokens.last().map(|t| t.column + 1))
            .unwrap_or(1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expr { column: self.column(), message: message.into() })
    }

    fn expect(&mut self, kind: TokKind) -> Result<()> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {kind:?}"))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(TokKind::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(TokKind::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(TokKind::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(TokKind::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(&TokKind::Op('^')) {
            self.pos += 1;
            // right associative, and binds tighter than a leading minus
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(TokKind::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(TokKind::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(TokKind::RParen)?;
                Ok(inner)
            }
            Some(TokKind::Ident(name)) => {
                let column = self.column();
                self.pos += 1;
                if self.peek() == Some(&TokKind::LParen) {
                    let Some(f) = Func::lookup(&name) else {
                        return Err(Error::Expr { column, message: format!("unknown function '{name}'") });
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&TokKind::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokKind::RParen)?;
                    let arity_ok = if f.variadic() { args.len() >= 2 } else { args.len() == 1 };
                    if !arity_ok {
                        return Err(Error::Expr {
                            column,
                            message: format!("wrong number of arguments for '{name}'"),
                        });
                    }
                    return Ok(Node::Call(f, args));
                }
                let var = match name.as_str() {
                    "x1" | "x" => Var::X1,
                    "x2" | "y" => Var::X2,
                    "t" | "u" => Var::T,
                    "z1" => Var::Z1,
                    "z2" => Var::Z2,
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    _ => {
                        return Err(Error::Expr { column, message: format!("unknown identifier '{name}'") });
                    }
                };
                Ok(Node::Var(var))
            }
            Some(other) => self.err(format!("unexpected token {other:?}")),
            None => self.err("unexpected end of expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: [f64; 2]) -> f64 {
        Expr::parse(s).unwrap().eval_at(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", [0.0, 0.0]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", [0.0, 0.0]), 512.0);
        assert_eq!(ev("-2 ^ 2", [0.0, 0.0]), -4.0);
        assert_eq!(ev("(1 + 2) * 3", [0.0, 0.0]), 9.0);
        assert_eq!(ev("8 / 2 / 2", [0.0, 0.0]), 2.0);
        assert_eq!(ev("2^-1", [0.0, 0.0]), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        assert!((ev("1.5 + 0.2*x1", [1.0, 0.0]) - 1.7).abs() < 1e-15);
        assert!((ev("sin(pi*x1)*sin(pi*x2)", [0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(ev("max(x1, x2, 0.7)", [0.2, 0.3]), 0.7);
        assert_eq!(ev("min(x1, x2)", [0.2, 0.3]), 0.2);
        assert_eq!(ev("abs(-3) + exp(0) + cos(0)", [0.0, 0.0]), 5.0);
        assert_eq!(ev("1e-3 * 2E2", [0.0, 0.0]), 0.2);
    }

    #[test]
    fn solution_dependence() {
        let e = Expr::parse("x1 + t").unwrap();
        assert!(e.depends_on_solution());
        assert!(!e.depends_on_gradient());
        let e = Expr::parse("0.1*z1").unwrap();
        assert!(e.depends_on_gradient());
        let vars = Vars { x: [0.0, 0.0], t: 0.0, z: [3.0, 0.0] };
        assert!((e.eval(&vars) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("1 + foo") {
            Err(Error::Expr { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("sin(1, 2)").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("1 $ 2").is_err());
        assert!(Expr::parse("").is_err());
    }
}
