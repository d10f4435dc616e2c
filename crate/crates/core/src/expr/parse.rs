//! Recursive-descent parser for the `.sa` problem language.
//!
//! ```text
//! problem   := decl* objective constraint*
//! decl      := "vars" ident+ ";"
//! objective := ("minimize"|"maximize") expr ";"
//! constraint:= expr (">="|"=="|"<=") expr ";" | "box" ident "in" "[" num "," num "]" ";"
//! expr      := term (("+"|"-") term)*
//! term      := factor (("*"|"/") factor)*
//! factor    := num | ident | "(" expr ")" | factor "^" posint
//!            | "abs(" expr ")" | "min(" expr "," expr ")" | "max(" expr "," expr ")"
//!            | "root(" expr "," posint ")" | "sqrt(" expr ")"
//! ```
//!
//! `#` starts a comment that runs to the end of the line. A leading `-` is
//! accepted as negation in front of any factor. Without a `vars` declaration
//! the variables are the free identifiers in order of first appearance.

use super::{Expr, ExprError, ExprPool, Interval, VarBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Relation {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
}

/// `lhs - rhs` related to zero.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: Expr,
    pub relation: Relation,
}

/// A parsed optimization problem.
#[derive(Debug)]
pub struct Problem {
    pub names: Vec<String>,
    pub pool: ExprPool,
    pub sense: Sense,
    pub objective: Expr,
    pub constraints: Vec<Constraint>,
    /// Declared `box` bounds; undeclared coordinates are unbounded.
    pub bounds: VarBox,
}

impl Problem {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }
}

const KEYWORDS: &[&str] = &[
    "vars", "minimize", "maximize", "box", "in", "abs", "min", "max", "root", "sqrt",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut integral = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integral = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                line,
                col: start_col,
                msg: format!("malformed number `{s}`"),
            })?;
            col += i - start;
            out.push(Token { tok: Tok::Num(v, integral), line, col: start_col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                col: start_col,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym = match two.as_str() {
            ">=" => Some(">="),
            "<=" => Some("<="),
            "==" => Some("=="),
            _ => None,
        };
        if let Some(s) = sym {
            i += 2;
            col += 2;
            out.push(Token { tok: Tok::Sym(s), line, col: start_col });
            continue;
        }
        let s = match c {
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '^' => "^",
            '(' => "(",
            ')' => ")",
            ',' => ",",
            ';' => ";",
            '[' => "[",
            ']' => "]",
            _ => {
                return Err(ExprError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        i += 1;
        col += 1;
        out.push(Token { tok: Tok::Sym(s), line, col: start_col });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    names: &'a [String],
    pool: &'a mut ExprPool,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, t: &Token, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == kw)
    }

    fn expect(&mut self, s: &str) -> Result<(), ExprError> {
        if self.is_sym(s) {
            self.next();
            Ok(())
        } else {
            let t = self.peek().clone();
            self.err(&t, format!("expected `{s}`, found {}", describe(&t.tok)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            if self.is_sym("+") {
                self.next();
                let r = self.term()?;
                acc = self.pool.add(&acc, &r);
            } else if self.is_sym("-") {
                self.next();
                let r = self.term()?;
                acc = self.pool.sub(&acc, &r);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.factor()?;
        loop {
            if self.is_sym("*") {
                self.next();
                let r = self.factor()?;
                acc = self.pool.mul(&acc, &r);
            } else if self.is_sym("/") {
                self.next();
                let r = self.factor()?;
                acc = self.pool.div(&acc, &r);
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if self.is_sym("-") {
            self.next();
            let f = self.factor()?;
            return Ok(self.pool.neg(&f));
        }
        let mut base = self.primary()?;
        while self.is_sym("^") {
            self.next();
            let (k, _) = self.integer()?;
            base = self.pool.pow(&base, k);
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<(u32, Token), ExprError> {
        let t = self.next();
        match t.tok {
            Tok::Num(v, true) if v <= u32::MAX as f64 => Ok((v as u32, t)),
            _ => self.err(&t, format!("expected an integer, found {}", describe(&t.tok))),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v, _) => Ok(self.pool.constant(*v)),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "abs" => {
                    self.expect("(")?;
                    let e = self.expr()?;
                    self.expect(")")?;
                    Ok(self.pool.abs(&e))
                }
                "sqrt" => {
                    self.expect("(")?;
                    let e = self.expr()?;
                    self.expect(")")?;
                    Ok(self.pool.root(&e, 2))
                }
                "min" | "max" => {
                    self.expect("(")?;
                    let a = self.expr()?;
                    self.expect(",")?;
                    let b = self.expr()?;
                    self.expect(")")?;
                    Ok(if name == "min" {
                        self.pool.min(&a, &b)
                    } else {
                        self.pool.max(&a, &b)
                    })
                }
                "root" => {
                    self.expect("(")?;
                    let e = self.expr()?;
                    self.expect(",")?;
                    let (q, qt) = self.integer()?;
                    if q < 1 {
                        return Err(ExprError::BadRootIndex {
                            line: qt.line,
                            col: qt.col,
                        });
                    }
                    self.expect(")")?;
                    Ok(self.pool.root(&e, q))
                }
                _ => match self.names.iter().position(|n| n == name) {
                    Some(i) => Ok(self.pool.var(i)),
                    None => Err(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        line: t.line,
                        col: t.col,
                    }),
                },
            },
            other => self.err(&t, format!("expected an expression, found {}", describe(other))),
        }
    }

    fn signed_number(&mut self) -> Result<f64, ExprError> {
        let neg = if self.is_sym("-") {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        match t.tok {
            Tok::Num(v, _) => Ok(if neg { -v } else { v }),
            _ => self.err(&t, format!("expected a number, found {}", describe(&t.tok))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v, _) => format!("number `{v}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a single expression over the given variable names into `pool`.
pub fn parse_expr(text: &str, names: &[String], pool: &mut ExprPool) -> Result<Expr, ExprError> {
    assert_eq!(names.len(), pool.n_vars());
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, names, pool };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return p.err(&t, format!("unexpected {} after expression", describe(&t.tok)));
    }
    Ok(e)
}

/// Parses a complete problem file.
pub fn parse_problem(text: &str) -> Result<Problem, ExprError> {
    let toks = lex(text)?;

    // variable declarations
    let mut pos = 0;
    let mut names: Vec<String> = Vec::new();
    let mut declared = false;
    while matches!(&toks[pos].tok, Tok::Ident(k) if k == "vars") {
        declared = true;
        pos += 1;
        loop {
            let t = &toks[pos];
            match &t.tok {
                Tok::Ident(n) if !KEYWORDS.contains(&n.as_str()) => {
                    if names.contains(n) {
                        return Err(ExprError::Syntax {
                            line: t.line,
                            col: t.col,
                            msg: format!("variable `{n}` declared twice"),
                        });
                    }
                    names.push(n.clone());
                    pos += 1;
                }
                Tok::Sym(";") => {
                    pos += 1;
                    break;
                }
                other => {
                    return Err(ExprError::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: format!("expected a variable name or `;`, found {}", describe(other)),
                    })
                }
            }
        }
    }
    if !declared {
        for t in &toks[pos..] {
            if let Tok::Ident(n) = &t.tok {
                if !KEYWORDS.contains(&n.as_str()) && !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
    }

    let mut pool = ExprPool::new(names.len());
    let mut bounds = VarBox::unbounded(names.len());
    let mut p = Parser { toks, pos, names: &names, pool: &mut pool };

    let t = p.next();
    let sense = match &t.tok {
        Tok::Ident(k) if k == "minimize" => Sense::Minimize,
        Tok::Ident(k) if k == "maximize" => Sense::Maximize,
        other => {
            return p.err(&t, format!("expected `minimize` or `maximize`, found {}", describe(other)))
        }
    };
    let objective = p.expr()?;
    p.expect(";")?;

    let mut constraints = Vec::new();
    while p.peek().tok != Tok::Eof {
        if p.is_kw("box") {
            p.next();
            let t = p.next();
            let var = match &t.tok {
                Tok::Ident(n) => match p.names.iter().position(|m| m == n) {
                    Some(i) => i,
                    None => {
                        return Err(ExprError::UnknownIdentifier {
                            name: n.clone(),
                            line: t.line,
                            col: t.col,
                        })
                    }
                },
                other => return p.err(&t, format!("expected a variable, found {}", describe(other))),
            };
            if !p.is_kw("in") {
                let t = p.peek().clone();
                return p.err(&t, "expected `in`");
            }
            p.next();
            p.expect("[")?;
            let lo = p.signed_number()?;
            p.expect(",")?;
            let hi_tok = p.peek().clone();
            let hi = p.signed_number()?;
            p.expect("]")?;
            p.expect(";")?;
            if lo > hi {
                return p.err(&hi_tok, format!("empty box [{lo}, {hi}]"));
            }
            bounds.bounds[var] = Interval::new(lo, hi);
            continue;
        }
        let lhs = p.expr()?;
        let t = p.next();
        let relation = match t.tok {
            Tok::Sym(">=") => Relation::Ge,
            Tok::Sym("<=") => Relation::Le,
            Tok::Sym("==") => Relation::Eq,
            ref other => {
                return p.err(&t, format!("expected `>=`, `<=` or `==`, found {}", describe(other)))
            }
        };
        let rhs = p.expr()?;
        p.expect(";")?;
        let expr = p.pool.sub(&lhs, &rhs);
        constraints.push(Constraint { expr, relation });
    }

    Ok(Problem {
        names,
        pool,
        sense,
        objective,
        constraints,
        bounds,
    })
}
