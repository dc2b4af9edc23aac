//! Model formulas: `resp ~ term (+ term)*`.
//!
//! A term is a bare covariate name (linear effect), `s(x, k=INT)` for a smooth of
//! `x`, or `sz(x, f, k=INT)` for per-level smooth deviations of `x` by factor `f`.
//! The literal `1` names the intercept, which is always present anyway.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis size used when `k=` is omitted.
pub const DEFAULT_BASIS_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    Linear {
        name: String,
    },
    Smooth {
        var: String,
        k: usize,
    },
    FactorSmooth {
        var: String,
        factor: String,
        k: usize,
    },
}

impl Term {
    /// Variables this term reads, numeric first.
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Linear { name } => vec![name],
            Term::Smooth { var, .. } => vec![var],
            Term::FactorSmooth { var, factor, .. } => vec![var, factor],
        }
    }

    pub fn label(&self) -> String {
        match self {
            Term::Linear { name } => name.clone(),
            Term::Smooth { var, .. } => format!("s({var})"),
            Term::FactorSmooth { var, factor, .. } => format!("sz({var},{factor})"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Linear { name } => write!(f, "{name}"),
            Term::Smooth { var, k } => write!(f, "s({var}, k={k})"),
            Term::FactorSmooth { var, factor, k } => write!(f, "sz({var}, {factor}, k={k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<Term>,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(String),
    Tilde,
    Plus,
    LParen,
    RParen,
    Comma,
    Eq,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("name {s:?}"),
            Tok::Int(s) => format!("number {s}"),
            Tok::Tilde => "'~'".into(),
            Tok::Plus => "'+'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Eq => "'='".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Formula {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        let single = match c {
            '~' => Some(Tok::Tilde),
            '+' => Some(Tok::Plus),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            out.push((i, t));
            chars.next();
        } else if c.is_whitespace() {
            chars.next();
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&(_, d)) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                s.push(d);
                chars.next();
            }
            out.push((i, Tok::Int(s)));
        } else if c.is_ascii_alphabetic() || c == '_' || c == '.' {
            let mut s = String::new();
            while let Some(&(_, d)) = chars.peek() {
                if !(d.is_ascii_alphanumeric() || d == '_' || d == '.') {
                    break;
                }
                s.push(d);
                chars.next();
            }
            out.push((i, Tok::Ident(s)));
        } else {
            return Err(err(i, format!("unexpected character {c:?}")));
        }
    }
    out.push((text.len(), Tok::End));
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

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(err(
                self.offset(),
                format!(
                    "expected {}, found {}",
                    want.describe(),
                    self.peek().describe()
                ),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.bump() {
            (_, Tok::Ident(s)) => Ok(s),
            (at, t) => Err(err(at, format!("expected {what}, found {}", t.describe()))),
        }
    }

    fn formula(&mut self) -> Result<ModelSpec> {
        let response = self.ident("response name")?;
        self.expect(Tok::Tilde)?;
        let mut terms: Vec<Term> = Vec::new();
        loop {
            let at = self.offset();
            if let Some(t) = self.term()? {
                if terms.contains(&t) {
                    return Err(err(at, format!("duplicate term {t}")));
                }
                if t.variables().contains(&response.as_str()) {
                    return Err(err(
                        at,
                        format!("response {response:?} used as a covariate"),
                    ));
                }
                terms.push(t);
            }
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                }
                Tok::End => break,
                t => {
                    return Err(err(
                        self.offset(),
                        format!("expected '+' or end of input, found {}", t.describe()),
                    ))
                }
            }
        }
        Ok(ModelSpec { response, terms })
    }

    /// `None` for the intercept literal.
    fn term(&mut self) -> Result<Option<Term>> {
        let (at, tok) = self.bump();
        let name = match tok {
            Tok::Int(s) if s == "1" => return Ok(None),
            Tok::Ident(s) => s,
            t => return Err(err(at, format!("expected a term, found {}", t.describe()))),
        };
        if *self.peek() != Tok::LParen {
            return Ok(Some(Term::Linear { name }));
        }
        self.bump();
        let term = match name.as_str() {
            "s" => {
                let var = self.ident("covariate name")?;
                let k = self.basis_size()?;
                Term::Smooth { var, k }
            }
            "sz" => {
                let var = self.ident("covariate name")?;
                self.expect(Tok::Comma)?;
                let factor = self.ident("factor name")?;
                let k = self.basis_size()?;
                Term::FactorSmooth { var, factor, k }
            }
            other => return Err(err(at, format!("unknown term constructor {other:?}"))),
        };
        self.expect(Tok::RParen)?;
        Ok(Some(term))
    }

    /// Optional trailing `, k=INT`.
    fn basis_size(&mut self) -> Result<usize> {
        if *self.peek() != Tok::Comma {
            return Ok(DEFAULT_BASIS_SIZE);
        }
        self.bump();
        let (at, key) = self.bump();
        if key != Tok::Ident("k".into()) {
            return Err(err(at, format!("expected 'k', found {}", key.describe())));
        }
        self.expect(Tok::Eq)?;
        match self.bump() {
            (at, Tok::Int(s)) => {
                let k: usize = s
                    .parse()
                    .map_err(|_| err(at, format!("basis size {s} is too large")))?;
                if k < 3 {
                    return Err(err(at, format!("basis size k={k} must be at least 3")));
                }
                Ok(k)
            }
            (at, t) => Err(err(
                at,
                format!("expected an integer, found {}", t.describe()),
            )),
        }
    }
}

pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    p.formula()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(e: Error) -> usize {
        match e {
            Error::Formula { offset, .. } => offset,
            other => panic!("expected formula error, got {other:?}"),
        }
    }

    #[test]
    fn single_smooth() {
        let spec = parse_formula("iStage ~ s(doy, k=25)").unwrap();
        assert_eq!(spec.response, "iStage");
        assert_eq!(
            spec.terms,
            vec![Term::Smooth {
                var: "doy".into(),
                k: 25
            }]
        );
    }

    #[test]
    fn smooth_plus_factor_smooth() {
        let spec = parse_formula("iStage ~ s(doy, k=25) + sz(doy, Site, k=25)").unwrap();
        assert_eq!(
            spec.terms,
            vec![
                Term::Smooth {
                    var: "doy".into(),
                    k: 25
                },
                Term::FactorSmooth {
                    var: "doy".into(),
                    factor: "Site".into(),
                    k: 25
                }
            ]
        );
    }

    #[test]
    fn whitespace_and_defaults() {
        let spec = parse_formula("y~x+s( t )+sz(t,g,k = 7)").unwrap();
        assert_eq!(spec.terms[0], Term::Linear { name: "x".into() });
        assert_eq!(
            spec.terms[1],
            Term::Smooth {
                var: "t".into(),
                k: DEFAULT_BASIS_SIZE
            }
        );
        assert_eq!(spec.to_string(), "y ~ x + s(t, k=10) + sz(t, g, k=7)");
        assert!(parse_formula("y ~ 1").unwrap().terms.is_empty());
    }

    #[test]
    fn double_plus_points_at_second_plus() {
        let text = "y ~ x + + s(x)";
        let e = parse_formula(text).unwrap_err();
        assert_eq!(offset_of(e), text.rfind('+').unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_formula("y ~ s(x, k=2)").is_err());
        assert!(parse_formula("y ~ te(x, z)").is_err());
        assert!(parse_formula("y ~ s(x) + s(x)").is_err());
        assert!(parse_formula("y ~ y").is_err());
        assert!(parse_formula("~ x").is_err());
        assert!(parse_formula("y x").is_err());
        assert!(parse_formula("y ~ s(x, k=99999999999999999999999)").is_err());
        assert!(parse_formula("y ~ s(x").is_err());
        assert!(parse_formula("").is_err());
        assert_eq!(offset_of(parse_formula("y ~ x $").unwrap_err()), 6);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn ident() -> impl Strategy<Value = String> {
            "[a-zA-Z_][a-zA-Z0-9_.]{0,6}".prop_filter("reserved", |s| s != "s" && s != "sz")
        }

        fn term() -> impl Strategy<Value = Term> {
            prop_oneof![
                ident().prop_map(|name| Term::Linear { name }),
                (ident(), 3usize..60).prop_map(|(var, k)| Term::Smooth { var, k }),
                (ident(), ident(), 3usize..60).prop_map(|(var, factor, k)| Term::FactorSmooth {
                    var,
                    factor,
                    k
                }),
            ]
        }

        proptest! {
            #[test]
            fn never_panics(s in any::<String>()) {
                let _ = parse_formula(&s);
            }

            #[test]
            fn never_panics_on_formula_like(s in "[a-z ~+(),=0-9sz]{0,30}") {
                let _ = parse_formula(&s);
            }

            #[test]
            fn print_parse_fixed_point(terms in proptest::collection::vec(term(), 0..5)) {
                let mut uniq: Vec<Term> = Vec::new();
                for t in terms {
                    if !uniq.contains(&t) && !t.variables().contains(&"resp") {
                        uniq.push(t);
                    }
                }
                let spec = ModelSpec { response: "resp".into(), terms: uniq };
                let again = parse_formula(&spec.to_string()).unwrap();
                prop_assert_eq!(again, spec);
            }
        }
    }
}
