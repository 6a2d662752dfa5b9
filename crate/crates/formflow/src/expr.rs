//! Scalar expressions: parsing, pointwise evaluation, and symbolic
//! differentiation.
//!
//! Every coefficient function in the rest of the crate (form coefficients,
//! PDE residuals, Hamiltonians) is an [`Expression`]. Expressions are
//! immutable trees behind `Arc`, so cloning is cheap and sharing across
//! threads is safe.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("singular evaluation: {0}")]
    Singular(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(String),
    Add(Arc<Ast>, Arc<Ast>),
    Sub(Arc<Ast>, Arc<Ast>),
    Mul(Arc<Ast>, Arc<Ast>),
    Div(Arc<Ast>, Arc<Ast>),
    Pow(Arc<Ast>, Arc<Ast>),
    Neg(Arc<Ast>),
    Call(Func, Arc<Ast>),
}

/// An immutable scalar expression over named coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    ast: Arc<Ast>,
    free: Vec<String>,
}

// ---------------------------------------------------------------------------
// smart constructors: constant folding plus zero/one elimination only
// ---------------------------------------------------------------------------

fn is_const(a: &Ast, v: f64) -> bool {
    matches!(a, Ast::Const(c) if *c == v)
}

fn add(a: Arc<Ast>, b: Arc<Ast>) -> Arc<Ast> {
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&*a, &*b) {
        return Arc::new(Ast::Const(x + y));
    }
    Arc::new(Ast::Add(a, b))
}

fn sub(a: Arc<Ast>, b: Arc<Ast>) -> Arc<Ast> {
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return neg(b);
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&*a, &*b) {
        return Arc::new(Ast::Const(x - y));
    }
    Arc::new(Ast::Sub(a, b))
}

fn mul(a: Arc<Ast>, b: Arc<Ast>) -> Arc<Ast> {
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return Arc::new(Ast::Const(0.0));
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&*a, &*b) {
        return Arc::new(Ast::Const(x * y));
    }
    Arc::new(Ast::Mul(a, b))
}

fn div(a: Arc<Ast>, b: Arc<Ast>) -> Arc<Ast> {
    if is_const(&a, 0.0) {
        return Arc::new(Ast::Const(0.0));
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&*a, &*b) {
        if *y != 0.0 {
            return Arc::new(Ast::Const(x / y));
        }
    }
    Arc::new(Ast::Div(a, b))
}

fn pow(a: Arc<Ast>, b: Arc<Ast>) -> Arc<Ast> {
    if is_const(&b, 0.0) {
        return Arc::new(Ast::Const(1.0));
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if let (Ast::Const(x), Ast::Const(y)) = (&*a, &*b) {
        let v = x.powf(*y);
        if v.is_finite() {
            return Arc::new(Ast::Const(v));
        }
    }
    Arc::new(Ast::Pow(a, b))
}

fn neg(a: Arc<Ast>) -> Arc<Ast> {
    match &*a {
        Ast::Const(c) => Arc::new(Ast::Const(-c)),
        Ast::Neg(inner) => inner.clone(),
        _ => Arc::new(Ast::Neg(a)),
    }
}

fn call(f: Func, a: Arc<Ast>) -> Arc<Ast> {
    if let Ast::Const(c) = &*a {
        let v = match f {
            Func::Sin => Some(c.sin()),
            Func::Cos => Some(c.cos()),
            Func::Exp => Some(c.exp()),
            Func::Ln => (*c > 0.0).then(|| c.ln()),
            Func::Sqrt => (*c >= 0.0).then(|| c.sqrt()),
        };
        if let Some(v) = v {
            if v.is_finite() {
                return Arc::new(Ast::Const(v));
            }
        }
    }
    Arc::new(Ast::Call(f, a))
}

fn collect_vars(ast: &Ast, out: &mut Vec<String>) {
    match ast {
        Ast::Const(_) => {}
        Ast::Var(v) => {
            if !out.iter().any(|x| x == v) {
                out.push(v.clone());
            }
        }
        Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) | Ast::Pow(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        Ast::Neg(a) | Ast::Call(_, a) => collect_vars(a, out),
    }
}

impl Expression {
    fn from_ast(ast: Arc<Ast>) -> Expression {
        let mut free = Vec::new();
        collect_vars(&ast, &mut free);
        free.sort();
        Expression { ast, free }
    }

    pub fn constant(v: f64) -> Expression {
        Expression::from_ast(Arc::new(Ast::Const(v)))
    }

    pub fn zero() -> Expression {
        Expression::constant(0.0)
    }

    pub fn one() -> Expression {
        Expression::constant(1.0)
    }

    pub fn var(name: &str) -> Expression {
        Expression::from_ast(Arc::new(Ast::Var(name.to_string())))
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Sorted set of identifiers appearing in the tree.
    pub fn free_variables(&self) -> &[String] {
        &self.free
    }

    /// True when the tree is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        is_const(&self.ast, 0.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match &*self.ast {
            Ast::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<Expression, ExprError> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0, len: text.len() };
        let ast = p.parse_expr()?;
        if let Some(tok) = p.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected token `{}`", tok.kind.describe()),
            });
        }
        Ok(Expression::from_ast(ast))
    }

    pub fn evaluate(&self, point: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let v = eval_ast(&self.ast, point)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Singular("non-finite result".to_string()))
        }
    }

    /// Exact symbolic derivative with respect to `var`.
    pub fn differentiate(&self, var: &str) -> Expression {
        Expression::from_ast(diff_ast(&self.ast, var))
    }

    /// Replace each mapped variable by the corresponding expression tree.
    pub fn substitute(&self, map: &HashMap<String, Expression>) -> Expression {
        Expression::from_ast(subst_ast(&self.ast, map))
    }

    pub fn add(&self, other: &Expression) -> Expression {
        Expression::from_ast(add(self.ast.clone(), other.ast.clone()))
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        Expression::from_ast(sub(self.ast.clone(), other.ast.clone()))
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        Expression::from_ast(mul(self.ast.clone(), other.ast.clone()))
    }

    pub fn div(&self, other: &Expression) -> Expression {
        Expression::from_ast(div(self.ast.clone(), other.ast.clone()))
    }

    pub fn pow(&self, other: &Expression) -> Expression {
        Expression::from_ast(pow(self.ast.clone(), other.ast.clone()))
    }

    pub fn neg(&self) -> Expression {
        Expression::from_ast(neg(self.ast.clone()))
    }

    pub fn scale(&self, c: f64) -> Expression {
        self.mul(&Expression::constant(c))
    }
}

fn eval_ast(ast: &Ast, point: &HashMap<String, f64>) -> Result<f64, ExprError> {
    match ast {
        Ast::Const(c) => Ok(*c),
        Ast::Var(v) => point
            .get(v)
            .copied()
            .ok_or_else(|| ExprError::UnboundVariable(v.clone())),
        Ast::Add(a, b) => Ok(eval_ast(a, point)? + eval_ast(b, point)?),
        Ast::Sub(a, b) => Ok(eval_ast(a, point)? - eval_ast(b, point)?),
        Ast::Mul(a, b) => Ok(eval_ast(a, point)? * eval_ast(b, point)?),
        Ast::Div(a, b) => {
            let d = eval_ast(b, point)?;
            if d == 0.0 {
                return Err(ExprError::Singular("division by zero".to_string()));
            }
            Ok(eval_ast(a, point)? / d)
        }
        Ast::Pow(a, b) => {
            let base = eval_ast(a, point)?;
            let exp = eval_ast(b, point)?;
            let v = base.powf(exp);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ExprError::Singular(format!("{base}^{exp} is not finite")))
            }
        }
        Ast::Neg(a) => Ok(-eval_ast(a, point)?),
        Ast::Call(f, a) => {
            let x = eval_ast(a, point)?;
            match f {
                Func::Sin => Ok(x.sin()),
                Func::Cos => Ok(x.cos()),
                Func::Exp => {
                    let v = x.exp();
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(ExprError::Singular("exp overflow".to_string()))
                    }
                }
                Func::Ln => {
                    if x <= 0.0 {
                        Err(ExprError::Singular(format!("ln of non-positive value {x}")))
                    } else {
                        Ok(x.ln())
                    }
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        Err(ExprError::Singular(format!("sqrt of negative value {x}")))
                    } else {
                        Ok(x.sqrt())
                    }
                }
            }
        }
    }
}

fn diff_ast(ast: &Ast, var: &str) -> Arc<Ast> {
    match ast {
        Ast::Const(_) => Arc::new(Ast::Const(0.0)),
        Ast::Var(v) => Arc::new(Ast::Const(if v == var { 1.0 } else { 0.0 })),
        Ast::Add(a, b) => add(diff_ast(a, var), diff_ast(b, var)),
        Ast::Sub(a, b) => sub(diff_ast(a, var), diff_ast(b, var)),
        Ast::Mul(a, b) => add(
            mul(diff_ast(a, var), b.clone()),
            mul(a.clone(), diff_ast(b, var)),
        ),
        Ast::Div(a, b) => div(
            sub(
                mul(diff_ast(a, var), b.clone()),
                mul(a.clone(), diff_ast(b, var)),
            ),
            pow(b.clone(), Arc::new(Ast::Const(2.0))),
        ),
        Ast::Pow(a, b) => {
            let da = diff_ast(a, var);
            let db = diff_ast(b, var);
            if let Ast::Const(c) = &**b {
                // power rule for constant exponents, avoids ln(a)
                return mul(
                    mul(
                        Arc::new(Ast::Const(*c)),
                        pow(a.clone(), Arc::new(Ast::Const(c - 1.0))),
                    ),
                    da,
                );
            }
            // a^b * (b' ln a + b a'/a)
            mul(
                pow(a.clone(), b.clone()),
                add(
                    mul(db, call(Func::Ln, a.clone())),
                    mul(b.clone(), div(da, a.clone())),
                ),
            )
        }
        Ast::Neg(a) => neg(diff_ast(a, var)),
        Ast::Call(f, a) => {
            let da = diff_ast(a, var);
            match f {
                Func::Sin => mul(call(Func::Cos, a.clone()), da),
                Func::Cos => neg(mul(call(Func::Sin, a.clone()), da)),
                Func::Exp => mul(call(Func::Exp, a.clone()), da),
                Func::Ln => div(da, a.clone()),
                Func::Sqrt => div(
                    da,
                    mul(Arc::new(Ast::Const(2.0)), call(Func::Sqrt, a.clone())),
                ),
            }
        }
    }
}

fn subst_ast(ast: &Ast, map: &HashMap<String, Expression>) -> Arc<Ast> {
    match ast {
        Ast::Const(c) => Arc::new(Ast::Const(*c)),
        Ast::Var(v) => match map.get(v) {
            Some(e) => e.ast.clone(),
            None => Arc::new(Ast::Var(v.clone())),
        },
        Ast::Add(a, b) => add(subst_ast(a, map), subst_ast(b, map)),
        Ast::Sub(a, b) => sub(subst_ast(a, map), subst_ast(b, map)),
        Ast::Mul(a, b) => mul(subst_ast(a, map), subst_ast(b, map)),
        Ast::Div(a, b) => div(subst_ast(a, map), subst_ast(b, map)),
        Ast::Pow(a, b) => pow(subst_ast(a, map), subst_ast(b, map)),
        Ast::Neg(a) => neg(subst_ast(a, map)),
        Ast::Call(f, a) => call(*f, subst_ast(a, map)),
    }
}

// ---------------------------------------------------------------------------
// printing (round-trips through parse)
// ---------------------------------------------------------------------------

/// Precedence levels: 1 add/sub, 2 mul/div, 3 unary minus, 4 power, 5 atoms.
fn prec(ast: &Ast) -> u8 {
    match ast {
        Ast::Add(..) | Ast::Sub(..) => 1,
        Ast::Mul(..) | Ast::Div(..) => 2,
        Ast::Neg(..) => 3,
        Ast::Const(c) if *c < 0.0 => 3,
        Ast::Pow(..) => 4,
        _ => 5,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Ast, min: u8) -> fmt::Result {
    if prec(child) < min {
        write!(f, "(")?;
        write_ast(f, child)?;
        write!(f, ")")
    } else {
        write_ast(f, child)
    }
}

fn write_ast(f: &mut fmt::Formatter<'_>, ast: &Ast) -> fmt::Result {
    match ast {
        Ast::Const(c) => write!(f, "{c}"),
        Ast::Var(v) => write!(f, "{v}"),
        Ast::Add(a, b) => {
            write_child(f, a, 1)?;
            write!(f, " + ")?;
            write_child(f, b, 2)
        }
        Ast::Sub(a, b) => {
            write_child(f, a, 1)?;
            write!(f, " - ")?;
            write_child(f, b, 2)
        }
        Ast::Mul(a, b) => {
            write_child(f, a, 2)?;
            write!(f, "*")?;
            write_child(f, b, 3)
        }
        Ast::Div(a, b) => {
            write_child(f, a, 2)?;
            write!(f, "/")?;
            write_child(f, b, 3)
        }
        Ast::Pow(a, b) => {
            write_child(f, a, 5)?;
            write!(f, "^")?;
            write_child(f, b, 3)
        }
        Ast::Neg(a) => {
            write!(f, "-")?;
            write_child(f, a, 4)
        }
        Ast::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_ast(f, a)?;
            write!(f, ")")
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_ast(f, &self.ast)
    }
}

// ---------------------------------------------------------------------------
// lexer + recursive-descent parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("{v}"),
            TokenKind::Ident(s) => s.clone(),
            TokenKind::Plus => "+".to_string(),
            TokenKind::Minus => "-".to_string(),
            TokenKind::Star => "*".to_string(),
            TokenKind::Slash => "/".to_string(),
            TokenKind::Caret => "^".to_string(),
            TokenKind::LParen => "(".to_string(),
            TokenKind::RParen => ")".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                tokens.push(Token { kind: TokenKind::Plus, offset: i });
                i += 1;
            }
            b'-' => {
                tokens.push(Token { kind: TokenKind::Minus, offset: i });
                i += 1;
            }
            b'*' => {
                tokens.push(Token { kind: TokenKind::Star, offset: i });
                i += 1;
            }
            b'/' => {
                tokens.push(Token { kind: TokenKind::Slash, offset: i });
                i += 1;
            }
            b'^' => {
                tokens.push(Token { kind: TokenKind::Caret, offset: i });
                i += 1;
            }
            b'(' => {
                tokens.push(Token { kind: TokenKind::LParen, offset: i });
                i += 1;
            }
            b')' => {
                tokens.push(Token { kind: TokenKind::RParen, offset: i });
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let v: f64 = text[start..i].parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("invalid number literal `{}`", &text[start..i]),
                })?;
                tokens.push(Token { kind: TokenKind::Num(v), offset: start });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", &text[i..].chars().next().unwrap()),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: &str) -> ExprError {
        let offset = self.peek().map(|t| t.offset).unwrap_or(self.len);
        ExprError::Syntax { offset, message: message.to_string() }
    }

    // expr := term (('+'|'-') term)*
    fn parse_expr(&mut self) -> Result<Arc<Ast>, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek().map(|t| t.kind.clone()) {
                Some(TokenKind::Plus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Arc::new(Ast::Add(lhs, rhs));
                }
                Some(TokenKind::Minus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Arc::new(Ast::Sub(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn parse_term(&mut self) -> Result<Arc<Ast>, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek().map(|t| t.kind.clone()) {
                Some(TokenKind::Star) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Arc::new(Ast::Mul(lhs, rhs));
                }
                Some(TokenKind::Slash) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Arc::new(Ast::Div(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := '-' unary | power
    fn parse_unary(&mut self) -> Result<Arc<Ast>, ExprError> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Minus)) {
            self.bump();
            let inner = self.parse_unary()?;
            return Ok(Arc::new(Ast::Neg(inner)));
        }
        self.parse_power()
    }

    // power := atom ('^' unary)?   (right associative, signed exponent allowed)
    fn parse_power(&mut self) -> Result<Arc<Ast>, ExprError> {
        let base = self.parse_atom()?;
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Caret)) {
            self.bump();
            let exp = self.parse_unary()?;
            return Ok(Arc::new(Ast::Pow(base, exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Arc<Ast>, ExprError> {
        let tok = match self.peek().cloned() {
            Some(t) => t,
            None => return Err(self.err_here("expected expression")),
        };
        match tok.kind {
            TokenKind::Num(v) => {
                self.bump();
                Ok(Arc::new(Ast::Const(v)))
            }
            TokenKind::Ident(name) => {
                self.bump();
                if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::LParen)) {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownFunction {
                        name: name.clone(),
                        offset: tok.offset,
                    })?;
                    self.bump(); // (
                    let arg = self.parse_expr()?;
                    match self.bump() {
                        Some(Token { kind: TokenKind::RParen, .. }) => {
                            Ok(Arc::new(Ast::Call(func, arg)))
                        }
                        _ => {
                            self.pos = self.pos.saturating_sub(1);
                            Err(self.err_here("expected `)`"))
                        }
                    }
                } else {
                    Ok(Arc::new(Ast::Var(name)))
                }
            }
            TokenKind::LParen => {
                self.bump();
                let inner = self.parse_expr()?;
                match self.bump() {
                    Some(Token { kind: TokenKind::RParen, .. }) => Ok(inner),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        Err(self.err_here("expected `)`"))
                    }
                }
            }
            _ => Err(ExprError::Syntax {
                offset: tok.offset,
                message: "expected expression".to_string(),
            }),
        }
    }
}
