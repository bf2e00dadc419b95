//! The remote query language: AST, canonical rendering and parsing.
//!
//! A query describes a value per event. `From("ds")` denotes the current
//! event of dataset `ds`; stages chain with `|>`:
//!
//! ```text
//! From("mc.zee") |> Get("Electrons") |> Where(p0 => Abs(p0.eta) < 2.4) |> Select(p0 => p0.pt / 1000.0)
//! ```
//!
//! Stages are `Get("C")`, `Where(x => pred)`, `Select(x => expr)` and the
//! aggregates `Count()`, `First()`, `Sum()`, `Min()`, `Max()`, `Any()`,
//! `All()`. Member access is `x.leaf` or `x["leaf"]`. Operators, loosest
//! first: `||`, `&&`, `== !=`, `< > <= >=`, `+ -`, `* /`, prefix `-`, then
//! postfix `.`, `[..]` and `|>`. `Abs`, `Sqrt`, `Sin`, `Cos` and `Atan2` are
//! built in; other calls name declared functions. Rendering names lambda
//! parameters `p<depth>`, so equal programs render to identical text.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::jagged::Scalar;
use crate::ops::{AggregateOp, BinaryOp, UnaryOp};

use super::QueryError;

#[derive(Debug, Clone, PartialEq)]
pub enum QExpr {
    From(String),
    Var(String),
    Lit(Scalar),
    Member(Box<QExpr>, String),
    Unary(UnaryOp, Box<QExpr>),
    Binary(BinaryOp, Box<QExpr>, Box<QExpr>),
    Call(String, Vec<QExpr>),
    Chain(Box<QExpr>, Stage),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Get(String),
    Where(Lambda),
    Select(Lambda),
    Agg(AggregateOp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda {
    pub param: String,
    pub body: Box<QExpr>,
}

impl Lambda {
    pub fn new(param: impl Into<String>, body: QExpr) -> Self {
        Lambda { param: param.into(), body: Box::new(body) }
    }
}

impl QExpr {
    pub fn member(self, name: &str) -> QExpr {
        QExpr::Member(Box::new(self), name.to_string())
    }

    pub fn chain(self, stage: Stage) -> QExpr {
        QExpr::Chain(Box::new(self), stage)
    }

    /// Canonical text. Variables not bound by a lambda keep their names.
    pub fn render(&self) -> String {
        let mut s = String::new();
        render(self, 0, &mut HashMap::new(), &mut s);
        s
    }

    /// Whether `From` or a variable outside `allowed` occurs free.
    pub fn references_outside(&self, allowed: &[&str]) -> bool {
        match self {
            QExpr::From(_) => true,
            QExpr::Var(v) => !allowed.contains(&v.as_str()),
            QExpr::Lit(_) => false,
            QExpr::Member(x, _) | QExpr::Unary(_, x) => x.references_outside(allowed),
            QExpr::Binary(_, a, b) => a.references_outside(allowed) || b.references_outside(allowed),
            QExpr::Call(_, args) => args.iter().any(|a| a.references_outside(allowed)),
            QExpr::Chain(x, stage) => {
                x.references_outside(allowed)
                    || match stage {
                        Stage::Where(l) | Stage::Select(l) => {
                            let mut inner = allowed.to_vec();
                            inner.push(&l.param);
                            l.body.references_outside(&inner)
                        }
                        _ => false,
                    }
            }
        }
    }

    /// Replaces free occurrences of variable `from` with `to`.
    pub fn substitute(&self, from: &str, to: &QExpr) -> QExpr {
        let sub = |x: &QExpr| Box::new(x.substitute(from, to));
        match self {
            QExpr::Var(v) if v == from => to.clone(),
            QExpr::From(_) | QExpr::Var(_) | QExpr::Lit(_) => self.clone(),
            QExpr::Member(x, n) => QExpr::Member(sub(x), n.clone()),
            QExpr::Unary(op, x) => QExpr::Unary(*op, sub(x)),
            QExpr::Binary(op, a, b) => QExpr::Binary(*op, sub(a), sub(b)),
            QExpr::Call(f, args) => QExpr::Call(f.clone(), args.iter().map(|a| a.substitute(from, to)).collect()),
            QExpr::Chain(x, stage) => {
                let stage = match stage {
                    Stage::Where(l) if l.param != from => {
                        Stage::Where(Lambda::new(&l.param, l.body.substitute(from, to)))
                    }
                    Stage::Select(l) if l.param != from => {
                        Stage::Select(Lambda::new(&l.param, l.body.substitute(from, to)))
                    }
                    s => s.clone(),
                };
                QExpr::Chain(sub(x), stage)
            }
        }
    }
}

fn binary_prec(op: BinaryOp) -> u8 {
    match op {
        BinaryOp::Or => 1,
        BinaryOp::And => 2,
        BinaryOp::Eq | BinaryOp::Ne => 3,
        BinaryOp::Lt | BinaryOp::Gt | BinaryOp::Le | BinaryOp::Ge => 4,
        BinaryOp::Add | BinaryOp::Sub => 5,
        BinaryOp::Mul | BinaryOp::Div => 6,
        BinaryOp::Atan2 => 8,
    }
}

fn prec(e: &QExpr) -> u8 {
    match e {
        QExpr::Binary(op, _, _) => binary_prec(*op),
        QExpr::Unary(UnaryOp::Neg, _) => 7,
        QExpr::Lit(Scalar::Float(x)) if x.is_sign_negative() => 7,
        QExpr::Lit(Scalar::Int(x)) if *x < 0 => 7,
        _ => 8,
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

const KEYWORDS: [&str; 2] = ["true", "false"];

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn render_lit(v: &Scalar) -> String {
    match v {
        Scalar::Float(x) => format!("{x:?}"),
        Scalar::Int(x) => x.to_string(),
        Scalar::Bool(b) => b.to_string(),
    }
}

fn render(e: &QExpr, depth: u32, scope: &mut HashMap<String, Vec<String>>, out: &mut String) {
    let child = |c: &QExpr, min: u8, scope: &mut HashMap<String, Vec<String>>, out: &mut String| {
        if prec(c) < min {
            out.push('(');
            render(c, depth, scope, out);
            out.push(')');
        } else {
            render(c, depth, scope, out);
        }
    };
    match e {
        QExpr::From(ds) => {
            let _ = write!(out, "From({})", quote(ds));
        }
        QExpr::Var(v) => match scope.get(v).and_then(|s| s.last()) {
            Some(name) => out.push_str(name),
            None => out.push_str(v),
        },
        QExpr::Lit(v) => out.push_str(&render_lit(v)),
        QExpr::Member(x, name) => {
            child(x, 8, scope, out);
            if is_ident(name) {
                let _ = write!(out, ".{name}");
            } else {
                let _ = write!(out, "[{}]", quote(name));
            }
        }
        QExpr::Unary(UnaryOp::Neg, x) => {
            out.push_str("-(");
            render(x, depth, scope, out);
            out.push(')');
        }
        QExpr::Unary(op, x) => {
            let _ = write!(out, "{}(", op.function_name());
            render(x, depth, scope, out);
            out.push(')');
        }
        QExpr::Binary(BinaryOp::Atan2, a, b) => {
            out.push_str("Atan2(");
            render(a, depth, scope, out);
            out.push_str(", ");
            render(b, depth, scope, out);
            out.push(')');
        }
        QExpr::Binary(op, a, b) => {
            let p = binary_prec(*op);
            child(a, p, scope, out);
            let _ = write!(out, " {} ", op.symbol());
            child(b, p + 1, scope, out);
        }
        QExpr::Call(f, args) => {
            let _ = write!(out, "{f}(");
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render(a, depth, scope, out);
            }
            out.push(')');
        }
        QExpr::Chain(x, stage) => {
            child(x, 8, scope, out);
            out.push_str(" |> ");
            let lambda = |kw: &str, l: &Lambda, scope: &mut HashMap<String, Vec<String>>, out: &mut String| {
                let name = format!("p{depth}");
                let _ = write!(out, "{kw}({name} => ");
                scope.entry(l.param.clone()).or_default().push(name);
                render(&l.body, depth + 1, scope, out);
                scope.get_mut(&l.param).unwrap().pop();
                out.push(')');
            };
            match stage {
                Stage::Get(c) => {
                    let _ = write!(out, "Get({})", quote(c));
                }
                Stage::Where(l) => lambda("Where", l, scope, out),
                Stage::Select(l) => lambda("Select", l, scope, out),
                Stage::Agg(op) => {
                    let _ = write!(out, "{}()", op.name());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    Sym(&'static str),
}

const SYMBOLS: [&str; 21] =
    ["|>", "=>", "&&", "||", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "(", ")", "[", "]", ".", ",", "!"];

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut toks = Vec::new();
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((start, Tok::Ident(text[start..i].to_string())));
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && (bytes[i + 1] as char).is_ascii_digit() {
                i += 1;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            toks.push((start, Tok::Num(text[start..i].to_string())));
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                let Some(ch) = text[i..].chars().next() else {
                    return Err(QueryError::Parse { pos: start, msg: "unterminated string".into() });
                };
                i += ch.len_utf8();
                match ch {
                    '"' => break,
                    '\\' => {
                        let Some(esc) = text[i..].chars().next() else {
                            return Err(QueryError::Parse { pos: i, msg: "unterminated escape".into() });
                        };
                        i += esc.len_utf8();
                        s.push(match esc {
                            'n' => '\n',
                            '"' => '"',
                            '\\' => '\\',
                            other => {
                                return Err(QueryError::Parse { pos: i, msg: format!("unknown escape \\{other}") })
                            }
                        });
                    }
                    ch => s.push(ch),
                }
            }
            toks.push((start, Tok::Str(s)));
        } else {
            let sym = SYMBOLS.iter().find(|s| text[i..].starts_with(*s));
            match sym {
                Some(s) => {
                    i += s.len();
                    toks.push((start, Tok::Sym(s)));
                }
                None => return Err(QueryError::Parse { pos: start, msg: format!("unexpected character {c:?}") }),
            }
        }
    }
    Ok(toks)
}

/// Parses query text into an AST.
pub fn parse_query(text: &str) -> Result<QExpr, QueryError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    let e = p.expr(1)?;
    if p.pos < p.toks.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn error(&self, msg: &str) -> QueryError {
        let pos = self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end);
        let found = match self.peek() {
            Some(Tok::Ident(s)) | Some(Tok::Num(s)) => format!(" at `{s}`"),
            Some(Tok::Str(s)) => format!(" at {}", quote(s)),
            Some(Tok::Sym(s)) => format!(" at `{s}`"),
            None => " at end of input".into(),
        };
        QueryError::Parse { pos, msg: format!("{msg}{found}") }
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), QueryError> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{sym}`")))
        }
    }

    fn string(&mut self) -> Result<String, QueryError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected a string literal")),
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected an identifier")),
        }
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        let Some(Tok::Sym(s)) = self.peek() else { return None };
        Some(match *s {
            "||" => BinaryOp::Or,
            "&&" => BinaryOp::And,
            "==" => BinaryOp::Eq,
            "!=" => BinaryOp::Ne,
            "<" => BinaryOp::Lt,
            ">" => BinaryOp::Gt,
            "<=" => BinaryOp::Le,
            ">=" => BinaryOp::Ge,
            "+" => BinaryOp::Add,
            "-" => BinaryOp::Sub,
            "*" => BinaryOp::Mul,
            "/" => BinaryOp::Div,
            _ => return None,
        })
    }

    fn expr(&mut self, min: u8) -> Result<QExpr, QueryError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binary_op() {
            let p = binary_prec(op);
            if p < min {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(p + 1)?;
            lhs = QExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<QExpr, QueryError> {
        if self.eat("-") {
            if let Some(Tok::Num(n)) = self.peek() {
                let n = format!("-{n}");
                self.pos += 1;
                let lit = self.number(&n)?;
                return self.postfix(lit);
            }
            let x = self.unary()?;
            return Ok(QExpr::Unary(UnaryOp::Neg, Box::new(x)));
        }
        let p = self.primary()?;
        self.postfix(p)
    }

    fn number(&self, n: &str) -> Result<QExpr, QueryError> {
        let is_float = n.contains(['.', 'e', 'E']);
        let v = if is_float {
            n.parse::<f64>().ok().filter(|x| x.is_finite()).map(Scalar::Float)
        } else {
            n.parse::<i64>().ok().map(Scalar::Int)
        };
        v.map(QExpr::Lit).ok_or_else(|| self.error(&format!("invalid number `{n}`")))
    }

    fn primary(&mut self) -> Result<QExpr, QueryError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("expected an expression"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(n) => self.number(&n),
            Tok::Sym("(") => {
                let e = self.expr(1)?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(id) => match id.as_str() {
                "true" => Ok(QExpr::Lit(Scalar::Bool(true))),
                "false" => Ok(QExpr::Lit(Scalar::Bool(false))),
                "From" => {
                    self.expect("(")?;
                    let ds = self.string()?;
                    self.expect(")")?;
                    Ok(QExpr::From(ds))
                }
                _ if self.eat("(") => {
                    let mut args = Vec::new();
                    if !self.eat(")") {
                        loop {
                            args.push(self.expr(1)?);
                            if self.eat(")") {
                                break;
                            }
                            self.expect(",")?;
                        }
                    }
                    Ok(call(id, args))
                }
                _ => Ok(QExpr::Var(id)),
            },
            _ => {
                self.pos -= 1;
                Err(self.error("expected an expression"))
            }
        }
    }

    fn postfix(&mut self, mut e: QExpr) -> Result<QExpr, QueryError> {
        loop {
            if self.eat(".") {
                let name = self.ident()?;
                e = e.member(&name);
            } else if self.eat("[") {
                let name = self.string()?;
                self.expect("]")?;
                e = e.member(&name);
            } else if self.eat("|>") {
                let stage = self.stage()?;
                e = e.chain(stage);
            } else {
                return Ok(e);
            }
        }
    }

    fn stage(&mut self) -> Result<Stage, QueryError> {
        let kw = self.ident()?;
        self.expect("(")?;
        let stage = match kw.as_str() {
            "Get" => Stage::Get(self.string()?),
            "Where" | "Select" => {
                let param = self.ident()?;
                self.expect("=>")?;
                let body = self.expr(1)?;
                let l = Lambda::new(param, body);
                if kw == "Where" {
                    Stage::Where(l)
                } else {
                    Stage::Select(l)
                }
            }
            other => match AggregateOp::from_name(other) {
                Some(op) => Stage::Agg(op),
                None => {
                    self.pos -= 2;
                    return Err(self.error("unknown stage"));
                }
            },
        };
        self.expect(")")?;
        Ok(stage)
    }
}

fn call(name: String, mut args: Vec<QExpr>) -> QExpr {
    if args.len() == 1 {
        if let Some(op) = UnaryOp::from_function_name(&name) {
            return QExpr::Unary(op, Box::new(args.pop().unwrap()));
        }
    }
    if args.len() == 2 && name == "Atan2" {
        let b = args.pop().unwrap();
        let a = args.pop().unwrap();
        return QExpr::Binary(BinaryOp::Atan2, Box::new(a), Box::new(b));
    }
    QExpr::Call(name, args)
}
