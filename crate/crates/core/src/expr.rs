//! Small arithmetic-expression language for coefficient configs.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?            right associative, binds tighter than unary minus
//! atom    := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names: `s` (time), `x1..xn` (state), `u1..um` (control), constants `pi` and `e`.
//! When the state (control) dimension is one, `x` (`u`) is accepted for `x1` (`u1`).
//! Functions: `arctan` (alias `atan`), `exp`, `log` (natural), `sin`, `cos`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var {
    Time,
    State(usize),
    Control(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Arctan,
    Exp,
    Log,
    Sin,
    Cos,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Arctan => v.atan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
        }
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
    Call(Func, Box<Node>),
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct Scope {
    pub state_dim: usize,
    pub control_dim: usize,
    pub allow_time: bool,
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, scope: Scope) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            scope,
        };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input in `{source}`"
            )));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, s: f64, x: &[f64], u: &[f64]) -> f64 {
        eval(&self.root, s, x, u)
    }
}

fn eval(node: &Node, s: f64, x: &[f64], u: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(Var::Time) => s,
        Node::Var(Var::State(i)) => x[*i],
        Node::Var(Var::Control(j)) => u[*j],
        Node::Neg(a) => -eval(a, s, x, u),
        Node::Add(a, b) => eval(a, s, x, u) + eval(b, s, x, u),
        Node::Sub(a, b) => eval(a, s, x, u) - eval(b, s, x, u),
        Node::Mul(a, b) => eval(a, s, x, u) * eval(b, s, x, u),
        Node::Div(a, b) => eval(a, s, x, u) / eval(b, s, x, u),
        Node::Pow(a, b) => {
            let base = eval(a, s, x, u);
            let exponent = eval(b, s, x, u);
            if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
                base.powi(exponent as i32)
            } else {
                base.powf(exponent)
            }
        }
        Node::Call(f, a) => f.apply(eval(a, s, x, u)),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent suffix: 1e-3, 2.5E+2
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Expression(format!("bad number `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Name(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expression(format!(
                "unexpected character `{c}` in `{src}`"
            )));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    scope: Scope,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
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
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
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
        if let Some(Token::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(Error::Expression("missing `)`".into())),
                }
            }
            Some(Token::Name(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    let func = match name.as_str() {
                        "arctan" | "atan" => Func::Arctan,
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        _ => return Err(Error::Expression(format!("unknown function `{name}`"))),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Token::RParen) => Ok(Node::Call(func, Box::new(arg))),
                        _ => Err(Error::Expression(format!("missing `)` after {name}("))),
                    }
                } else {
                    self.variable(&name)
                }
            }
            Some(t) => Err(Error::Expression(format!("unexpected token {t:?}"))),
            None => Err(Error::Expression("unexpected end of expression".into())),
        }
    }

    fn variable(&self, name: &str) -> Result<Node> {
        let scope = self.scope;
        match name {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "e" => return Ok(Node::Num(std::f64::consts::E)),
            "s" if scope.allow_time => return Ok(Node::Var(Var::Time)),
            "x" if scope.state_dim == 1 => return Ok(Node::Var(Var::State(0))),
            "u" if scope.control_dim == 1 => return Ok(Node::Var(Var::Control(0))),
            _ => {}
        }
        let indexed = |prefix: char, dim: usize| -> Option<usize> {
            let rest = name.strip_prefix(prefix)?;
            let k: usize = rest.parse().ok()?;
            (k >= 1 && k <= dim).then(|| k - 1)
        };
        if let Some(i) = indexed('x', scope.state_dim) {
            return Ok(Node::Var(Var::State(i)));
        }
        if let Some(j) = indexed('u', scope.control_dim) {
            return Ok(Node::Var(Var::Control(j)));
        }
        Err(Error::Expression(format!("unknown or out-of-scope variable `{name}`")))
    }
}
