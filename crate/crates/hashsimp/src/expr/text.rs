//! Text format: `name(arg, arg, ...)` calls, `x_<i>` variables, and decimal
//! constants with at least one fractional digit. Printing and parsing
//! round-trip exactly for finite constants.

use super::{ExpressionTree, Node, OpKind};
use thiserror::Error;

pub(crate) fn node_to_text(node: &Node) -> String {
    match node {
        Node::Constant(v) => format_constant(*v),
        Node::Variable(i) => format!("x_{i}"),
        Node::Op(kind, children) => {
            let args: Vec<String> = children.iter().map(node_to_text).collect();
            format!("{}({})", kind.name(), args.join(", "))
        }
    }
}

// Shortest decimal that parses back to the same f64, forced to carry a
// fractional digit so constants are never mistaken for integers.
fn format_constant(v: f64) -> String {
    let s = format!("{v}");
    if s.bytes().all(|b| b == b'-' || b.is_ascii_digit()) {
        format!("{s}.0")
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown operator `{name}` at byte {pos}")]
    UnknownOperator { name: String, pos: usize },
    #[error("`{op}` expects {expected} arguments, found {found} (at byte {pos})")]
    WrongArity {
        op: String,
        expected: String,
        found: usize,
        pos: usize,
    },
    #[error("unexpected `{found}` at byte {pos}")]
    Unexpected { found: String, pos: usize },
    #[error("invalid number at byte {pos}")]
    InvalidNumber { pos: usize },
    #[error("invalid variable index at byte {pos}")]
    InvalidVariable { pos: usize },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("trailing input at byte {pos}")]
    Trailing { pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            b'0'..=b'9' | b'-' | b'+' | b'.' => {
                let start = i;
                if b == b'-' || b == b'+' {
                    i += 1;
                }
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i == digits_start {
                    return Err(ParseError::InvalidNumber { pos: start });
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
                        i += 1;
                    }
                    let exp_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == exp_start {
                        return Err(ParseError::InvalidNumber { pos: start });
                    }
                }
                let value: f64 = src[start..i]
                    .parse()
                    .map_err(|_| ParseError::InvalidNumber { pos: start })?;
                toks.push((Tok::Number(value), start));
            }
            _ => {
                return Err(ParseError::Unexpected {
                    found: (b as char).to_string(),
                    pos: i,
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.i)
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let t = self
            .toks
            .get(self.i)
            .cloned()
            .ok_or(ParseError::UnexpectedEnd)?;
        self.i += 1;
        Ok(t)
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        match self.next()? {
            (Tok::Number(v), _) => Ok(Node::Constant(v)),
            (Tok::Ident(name), pos) => self.ident(name, pos),
            (tok, pos) => Err(ParseError::Unexpected {
                found: describe(&tok),
                pos,
            }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Node, ParseError> {
        if let Some(rest) = name.strip_prefix("x_") {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let index = rest
                    .parse()
                    .map_err(|_| ParseError::InvalidVariable { pos })?;
                return Ok(Node::Variable(index));
            }
        }
        let kind = OpKind::from_name(&name).ok_or(ParseError::UnknownOperator {
            name: name.clone(),
            pos,
        })?;
        match self.next()? {
            (Tok::LParen, _) => {}
            (tok, p) => {
                return Err(ParseError::Unexpected {
                    found: describe(&tok),
                    pos: p,
                })
            }
        }
        let mut args = vec![self.expr()?];
        loop {
            match self.next()? {
                (Tok::Comma, _) => args.push(self.expr()?),
                (Tok::RParen, _) => break,
                (tok, p) => {
                    return Err(ParseError::Unexpected {
                        found: describe(&tok),
                        pos: p,
                    })
                }
            }
        }
        if !kind.accepts_arity(args.len()) {
            return Err(ParseError::WrongArity {
                op: name,
                expected: match kind.arity() {
                    super::Arity::Fixed(k) => k.to_string(),
                    super::Arity::Variadic => "at least 2".to_string(),
                },
                found: args.len(),
                pos,
            });
        }
        Ok(Node::Op(kind, args))
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => s.clone(),
        Tok::Number(v) => format!("{v}"),
        Tok::LParen => "(".to_string(),
        Tok::RParen => ")".to_string(),
        Tok::Comma => ",".to_string(),
    }
}

/// Parses the text format back into a tree.
pub fn parse(src: &str) -> Result<ExpressionTree, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    let root = p.expr()?;
    if let Some((_, pos)) = p.peek() {
        return Err(ParseError::Trailing { pos: *pos });
    }
    Ok(ExpressionTree::new(root))
}
