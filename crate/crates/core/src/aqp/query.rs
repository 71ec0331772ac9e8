//! Aggregate query language.
//!
//! ```text
//! SELECT [ident, ...,] AGG(ident | *) FROM ident
//!     [WHERE or-expr] [GROUP BY ident, ...]
//! or-expr  = and-expr (OR and-expr)*
//! and-expr = cmp (AND cmp)*
//! cmp      = ident op literal | "(" or-expr ")"
//! ```
//!
//! Keywords are case-insensitive. Identifiers may be double-quoted; string
//! literals are single-quoted, and a bare word on the right of a comparison
//! is read as a string.

use std::fmt;

use crate::error::{Error, Result};
use crate::relation::AttributeSchema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Avg,
    Sum,
    Count,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Avg => "AVG",
            Aggregate::Sum => "SUM",
            Aggregate::Count => "COUNT",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn holds<T: PartialOrd + ?Sized>(self, a: &T, b: &T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(v) => write!(f, "{v}"),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    Cmp { attribute: String, op: CmpOp, value: Literal },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Cmp { attribute, op, value } => write!(f, "{} {op} {value}", Ident(attribute)),
            Predicate::Or(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            Predicate::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    match p {
                        Predicate::Or(_) => write!(f, "({p})")?,
                        _ => write!(f, "{p}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

/// A parsed query, not yet checked against a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryAst {
    /// Plain attributes listed before the aggregate.
    pub select: Vec<String>,
    pub aggregate: Aggregate,
    /// `None` for `COUNT(*)`; a `COUNT(x)` argument is discarded.
    pub measure: Option<String>,
    pub table: String,
    pub filter: Option<Predicate>,
    pub group_by: Vec<String>,
}

struct Ident<'a>(&'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        let plain = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            && Keyword::from_word(s).is_none();
        if plain {
            f.write_str(s)
        } else {
            write!(f, "\"{}\"", s.replace('"', "\"\""))
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[String]) -> fmt::Result {
    for (i, s) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{}", Ident(s))?;
    }
    Ok(())
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        if !self.select.is_empty() {
            write_list(f, &self.select)?;
            f.write_str(", ")?;
        }
        match &self.measure {
            Some(m) => write!(f, "{}({})", self.aggregate, Ident(m))?,
            None => write!(f, "{}(*)", self.aggregate)?,
        }
        write!(f, " FROM {}", Ident(&self.table))?;
        if let Some(p) = &self.filter {
            write!(f, " WHERE {p}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            write_list(f, &self.group_by)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Keyword {
    Select,
    From,
    Where,
    Group,
    By,
    And,
    Or,
    Avg,
    Sum,
    Count,
}

impl Keyword {
    fn from_word(w: &str) -> Option<Self> {
        Some(match w.to_ascii_uppercase().as_str() {
            "SELECT" => Keyword::Select,
            "FROM" => Keyword::From,
            "WHERE" => Keyword::Where,
            "GROUP" => Keyword::Group,
            "BY" => Keyword::By,
            "AND" => Keyword::And,
            "OR" => Keyword::Or,
            "AVG" => Keyword::Avg,
            "SUM" => Keyword::Sum,
            "COUNT" => Keyword::Count,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Kw(Keyword),
    Ident(String),
    Number(f64),
    Str(String),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
    Star,
    Eof,
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::Syntax { offset, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'*' => {
                i += 1;
                Tok::Star
            }
            b'=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 2;
                Tok::Op(CmpOp::Ne)
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    Tok::Op(CmpOp::Le)
                }
                Some(b'>') => {
                    i += 2;
                    Tok::Op(CmpOp::Ne)
                }
                _ => {
                    i += 1;
                    Tok::Op(CmpOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Op(CmpOp::Ge)
                } else {
                    i += 1;
                    Tok::Op(CmpOp::Gt)
                }
            }
            b'\'' | b'"' => {
                let quote = c;
                let mut s = Vec::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(syntax(start, "unterminated quoted text")),
                        Some(&b) if b == quote => {
                            if bytes.get(i + 1) == Some(&quote) {
                                s.push(quote);
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(&b) => {
                            s.push(b);
                            i += 1;
                        }
                    }
                }
                let s = String::from_utf8(s).map_err(|_| syntax(start, "invalid UTF-8"))?;
                if quote == b'"' {
                    Tok::Ident(s)
                } else {
                    Tok::Str(s)
                }
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                i += 1;
                while i < bytes.len() {
                    let b = bytes[i];
                    let exp_sign = (b == b'-' || b == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let t = &text[start..i];
                Tok::Number(t.parse().map_err(|_| syntax(start, format!("invalid number `{t}`")))?)
            }
            _ if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || matches!(bytes[i], b'_' | b'.') || bytes[i] >= 0x80) {
                    i += 1;
                }
                let w = &text[start..i];
                match Keyword::from_word(w) {
                    Some(k) => Tok::Kw(k),
                    None => Tok::Ident(w.to_string()),
                }
            }
            _ => return Err(syntax(start, format!("unexpected character `{}`", c as char))),
        };
        out.push((start, tok));
    }
    out.push((text.len(), Tok::Eof));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(syntax(self.offset(), "expected attribute name")),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>> {
        let mut v = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            v.push(self.ident()?);
        }
        Ok(v)
    }

    fn query(&mut self) -> Result<QueryAst> {
        self.expect(Tok::Kw(Keyword::Select), "SELECT")?;
        let mut select = Vec::new();
        let aggregate = loop {
            match self.peek().clone() {
                Tok::Kw(Keyword::Avg) => break Aggregate::Avg,
                Tok::Kw(Keyword::Sum) => break Aggregate::Sum,
                Tok::Kw(Keyword::Count) => break Aggregate::Count,
                Tok::Ident(s) => {
                    self.bump();
                    select.push(s);
                    self.expect(Tok::Comma, "','")?;
                }
                _ => return Err(syntax(self.offset(), "expected attribute or aggregate")),
            }
        };
        self.bump();
        self.expect(Tok::LParen, "'('")?;
        let arg_at = self.offset();
        let measure = match self.bump() {
            Tok::Star if aggregate == Aggregate::Count => None,
            Tok::Star => return Err(syntax(arg_at, format!("{aggregate} needs an attribute"))),
            Tok::Ident(m) => Some(m),
            _ => return Err(syntax(arg_at, "expected attribute or '*'")),
        };
        self.expect(Tok::RParen, "')'")?;
        let measure = if aggregate == Aggregate::Count { None } else { measure };
        self.expect(Tok::Kw(Keyword::From), "FROM")?;
        let table = self.ident()?;
        let filter = if self.eat(&Tok::Kw(Keyword::Where)) { Some(self.or_expr()?) } else { None };
        let group_by = if self.eat(&Tok::Kw(Keyword::Group)) {
            self.expect(Tok::Kw(Keyword::By), "BY")?;
            self.ident_list()?
        } else {
            Vec::new()
        };
        if *self.peek() != Tok::Eof {
            return Err(syntax(self.offset(), "unexpected trailing input"));
        }
        Ok(QueryAst { select, aggregate, measure, table, filter, group_by })
    }

    fn or_expr(&mut self) -> Result<Predicate> {
        let mut parts = Vec::new();
        loop {
            match self.and_expr()? {
                Predicate::Or(inner) => parts.extend(inner),
                p => parts.push(p),
            }
            if !self.eat(&Tok::Kw(Keyword::Or)) {
                break;
            }
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Or(parts) })
    }

    fn and_expr(&mut self) -> Result<Predicate> {
        let mut parts = Vec::new();
        loop {
            match self.cmp()? {
                Predicate::And(inner) => parts.extend(inner),
                p => parts.push(p),
            }
            if !self.eat(&Tok::Kw(Keyword::And)) {
                break;
            }
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::And(parts) })
    }

    fn cmp(&mut self) -> Result<Predicate> {
        if self.eat(&Tok::LParen) {
            let p = self.or_expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(p);
        }
        let attribute = self.ident()?;
        let op = match self.bump() {
            Tok::Op(op) => op,
            _ => return Err(syntax(self.toks[self.pos.saturating_sub(1)].0, "expected comparison operator")),
        };
        let at = self.offset();
        let value = match self.bump() {
            Tok::Number(v) => Literal::Number(v),
            Tok::Str(s) | Tok::Ident(s) => Literal::Text(s),
            _ => return Err(syntax(at, "expected literal")),
        };
        Ok(Predicate::Cmp { attribute, op, value })
    }
}

/// Parses query text; attribute names are checked later by [`QueryAst::bind`].
pub fn parse_query(text: &str) -> Result<QueryAst> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    p.query()
}

impl std::str::FromStr for QueryAst {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_query(s)
    }
}

/// A filter compiled to per-attribute membership masks over domain indices.
#[derive(Clone, Debug, PartialEq)]
pub enum Filter {
    True,
    In { attribute: usize, allowed: Vec<bool> },
    And(Vec<Filter>),
    Or(Vec<Filter>),
}

impl Filter {
    pub fn matches(&self, row: &[u32]) -> bool {
        match self {
            Filter::True => true,
            Filter::In { attribute, allowed } => allowed[row[*attribute] as usize],
            Filter::And(ps) => ps.iter().all(|p| p.matches(row)),
            Filter::Or(ps) => ps.iter().any(|p| p.matches(row)),
        }
    }
}

/// A query resolved against a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundQuery {
    pub aggregate: Aggregate,
    pub measure: Option<usize>,
    /// Numeric value of each domain index of the measure attribute.
    pub measure_values: Vec<f64>,
    pub filter: Filter,
    pub group_by: Vec<usize>,
}

impl BoundQuery {
    pub fn group_key(&self, row: &[u32]) -> Vec<u32> {
        self.group_by.iter().map(|&a| row[a]).collect()
    }

    /// Measure of a row; 1 for `COUNT`.
    pub fn measure_of(&self, row: &[u32]) -> f64 {
        match self.measure {
            Some(a) => self.measure_values[row[a] as usize],
            None => 1.0,
        }
    }
}

fn lookup(schema: &[AttributeSchema], name: &str) -> Result<usize> {
    schema
        .iter()
        .position(|a| a.name == name)
        .or_else(|| schema.iter().position(|a| a.name.eq_ignore_ascii_case(name)))
        .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
}

fn compile(schema: &[AttributeSchema], p: &Predicate) -> Result<Filter> {
    Ok(match p {
        Predicate::And(ps) => Filter::And(ps.iter().map(|p| compile(schema, p)).collect::<Result<_>>()?),
        Predicate::Or(ps) => Filter::Or(ps.iter().map(|p| compile(schema, p)).collect::<Result<_>>()?),
        Predicate::Cmp { attribute, op, value } => {
            let a = lookup(schema, attribute)?;
            let attr = &schema[a];
            let n = attr.domain_size() as u32;
            let number = match value {
                Literal::Number(v) => Some(*v),
                Literal::Text(s) if attr.is_numeric() => Some(s.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("`{}` is numeric; cannot compare with '{s}'", attr.name))
                })?),
                Literal::Text(_) => None,
            };
            let allowed = match (number, value) {
                (Some(c), _) => {
                    let values: Vec<Option<f64>> = (0..n).map(|i| attr.numeric_value(i)).collect();
                    let ordering = !matches!(op, CmpOp::Eq | CmpOp::Ne);
                    if ordering && values.iter().any(Option::is_none) {
                        return Err(Error::InvalidArgument(format!(
                            "`{}` has non-numeric values; only = and != apply",
                            attr.name
                        )));
                    }
                    values
                        .into_iter()
                        .map(|v| match v {
                            Some(v) => op.holds(&v, &c),
                            None => *op == CmpOp::Ne,
                        })
                        .collect()
                }
                (None, Literal::Text(s)) => match op {
                    CmpOp::Eq | CmpOp::Ne => (0..n).map(|i| op.holds(attr.label(i).as_str(), s.as_str())).collect(),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "ordering comparison on `{}` needs a numeric constant",
                            attr.name
                        )))
                    }
                },
                (None, Literal::Number(_)) => unreachable!(),
            };
            Filter::In { attribute: a, allowed }
        }
    })
}

impl QueryAst {
    /// Resolves attribute names and compiles the filter.
    pub fn bind(&self, schema: &[AttributeSchema]) -> Result<BoundQuery> {
        let group_by = self.group_by.iter().map(|g| lookup(schema, g)).collect::<Result<Vec<_>>>()?;
        for s in &self.select {
            let a = lookup(schema, s)?;
            if !group_by.contains(&a) {
                return Err(Error::InvalidArgument(format!("selected attribute `{s}` is not in GROUP BY")));
            }
        }
        let (measure, measure_values) = match &self.measure {
            Some(m) => {
                let a = lookup(schema, m)?;
                let attr = &schema[a];
                let values = (0..attr.domain_size() as u32)
                    .map(|i| attr.numeric_value(i))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::NonNumericMeasure(attr.name.clone()))?;
                (Some(a), values)
            }
            None => (None, Vec::new()),
        };
        let filter = match &self.filter {
            Some(p) => compile(schema, p)?,
            None => Filter::True,
        };
        Ok(BoundQuery { aggregate: self.aggregate, measure, measure_values, filter, group_by })
    }
}
