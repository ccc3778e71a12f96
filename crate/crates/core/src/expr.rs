//! A small arithmetic expression language for analytic source terms and
//! coefficient fields.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin`, `cos`, `exp`. Constants: `pi`, `e`. Variables are
//! named at parse time (`x1, x2` for sources, `y1, y2` for cell fields).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64; 2]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Add(a, b) => a.eval(vars) + b.eval(vars),
            Node::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Node::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Node::Div(a, b) => a.eval(vars) / b.eval(vars),
            Node::Pow(a, b) => a.eval(vars).powf(b.eval(vars)),
            Node::Sin(a) => a.eval(vars).sin(),
            Node::Cos(a) => a.eval(vars).cos(),
            Node::Exp(a) => a.eval(vars).exp(),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Node::Const(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => a.is_constant(),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }
}

/// Variable naming scheme an expression is parsed against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variables {
    /// Macroscopic coordinates `x1, x2`.
    Macro,
    /// Cell coordinates `y1, y2`.
    Cell,
}

impl Variables {
    fn names(self) -> [&'static str; 2] {
        match self {
            Variables::Macro => ["x1", "x2"],
            Variables::Cell => ["y1", "y2"],
        }
    }
}

/// A parsed scalar expression in two variables.
#[derive(Clone, Debug)]
pub struct Expr {
    source: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Expr {
    pub fn parse(source: &str, vars: Variables) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            vars: vars.names(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(Error::Expression {
                column: tok.column,
                message: format!("unexpected trailing token {:?}", tok.kind),
            });
        }
        Ok(Expr {
            source: source.trim().to_string(),
            root,
        })
    }

    pub fn constant(value: f64) -> Self {
        Expr {
            source: format!("{value:?}"),
            root: Node::Const(value),
        }
    }

    #[inline]
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.root.eval(&p)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression does not reference any variable.
    pub fn is_constant(&self) -> bool {
        self.root.is_constant()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Serde adapter for macroscopic source strings (`x1`, `x2`).
pub mod macro_vars {
    use super::*;

    pub fn serialize<S: Serializer>(e: &Expr, s: S) -> std::result::Result<S::Ok, S::Error> {
        e.source.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Expr, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s, Variables::Macro).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for cell-coordinate expressions (`y1`, `y2`).
pub mod cell_vars {
    use super::*;

    pub fn serialize<S: Serializer>(e: &Expr, s: S) -> std::result::Result<S::Ok, S::Error> {
        e.source.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Expr, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s, Variables::Cell).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        let kind = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => TokenKind::Plus,
            // accept the unicode minus and multiplication signs too
            '-' | '\u{2212}' => TokenKind::Minus,
            '*' | '\u{00d7}' => TokenKind::Star,
            '/' | '\u{00f7}' => TokenKind::Slash,
            '^' => TokenKind::Caret,
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
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
                let value = text.parse::<f64>().map_err(|_| Error::Expression {
                    column,
                    message: format!("invalid number `{text}`"),
                })?;
                out.push(Token {
                    kind: TokenKind::Number(value),
                    column,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(chars[start..i].iter().collect()),
                    column,
                });
                continue;
            }
            other => {
                return Err(Error::Expression {
                    column,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token { kind, column });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: [&'static str; 2],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.column + 1)
    }

    fn expect(&mut self, kind: TokenKind) -> Result<()> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(Error::Expression {
                column: t.column,
                message: format!("expected {kind:?}, found {:?}", t.kind),
            }),
            None => Err(Error::Expression {
                column: self.end_column(),
                message: format!("expected {kind:?}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokenKind::Plus => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                TokenKind::Minus => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(t) = self.peek() {
            match t.kind {
                TokenKind::Star => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                TokenKind::Slash => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Token {
            kind: TokenKind::Minus,
            ..
        }) = self.peek()
        {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token {
            kind: TokenKind::Caret,
            ..
        }) = self.peek()
        {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some(tok) = self.peek() else {
            return Err(Error::Expression {
                column: self.end_column(),
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match &tok.kind {
            TokenKind::Number(v) => Ok(Node::Const(*v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                let func: Option<fn(Box<Node>) -> Node> = match name.as_str() {
                    "sin" => Some(Node::Sin),
                    "cos" => Some(Node::Cos),
                    "exp" => Some(Node::Exp),
                    _ => None,
                };
                if let Some(func) = func {
                    self.expect(TokenKind::LParen)?;
                    let arg = self.expr()?;
                    self.expect(TokenKind::RParen)?;
                    return Ok(func(Box::new(arg)));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    n if n == self.vars[0] => Ok(Node::Var(0)),
                    n if n == self.vars[1] => Ok(Node::Var(1)),
                    n => Err(Error::Expression {
                        column: tok.column,
                        message: format!(
                            "unknown identifier `{n}` (variables are {} and {})",
                            self.vars[0], self.vars[1]
                        ),
                    }),
                }
            }
            other => Err(Error::Expression {
                column: tok.column,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}
