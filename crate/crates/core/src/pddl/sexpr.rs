//! Minimal s-expression reader for PDDL sources.
//!
//! Symbols are lowercased on read (PDDL identifiers are case-insensitive) and
//! `;` starts a comment that runs to the end of the line.

use super::PddlError;

/// Source position, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Symbol(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Symbol(_, p) | Sexp::List(_, p) => *p,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Sexp::Symbol(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items, _) => Some(items),
            Sexp::Symbol(..) => None,
        }
    }

    /// Head symbol of a list, if any.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|l| l.first()).and_then(Sexp::as_symbol)
    }
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl Reader<'_> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn skip_trivia(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == ';' {
                while let Some(&c) = self.chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Option<Sexp>, PddlError> {
        self.skip_trivia();
        let pos = self.pos();
        match self.chars.peek().copied() {
            None => Ok(None),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.chars.peek() {
                        None => {
                            return Err(PddlError::syntax(pos, "unclosed parenthesis"));
                        }
                        Some(')') => {
                            self.bump();
                            return Ok(Some(Sexp::List(items, pos)));
                        }
                        Some(_) => {
                            if let Some(item) = self.read()? {
                                items.push(item);
                            }
                        }
                    }
                }
            }
            Some(')') => Err(PddlError::syntax(pos, "unexpected ')'")),
            Some(_) => {
                let mut sym = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    sym.extend(c.to_lowercase());
                    self.bump();
                }
                Ok(Some(Sexp::Symbol(sym, pos)))
            }
        }
    }
}

/// Reads exactly one top-level expression; trailing non-comment input is an error.
pub fn parse_one(text: &str) -> Result<Sexp, PddlError> {
    let mut reader = Reader { chars: text.chars().peekable(), line: 1, col: 1 };
    let first = reader
        .read()?
        .ok_or_else(|| PddlError::syntax(reader.pos(), "empty input"))?;
    reader.skip_trivia();
    if reader.chars.peek().is_some() {
        return Err(PddlError::syntax(reader.pos(), "trailing input after top-level form"));
    }
    Ok(first)
}
