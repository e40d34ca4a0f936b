//! The action-script language.
//!
//! A script is a short list of primitives, one per line or separated by
//! `;`. Both `mine dirt` and `mine('dirt')` spellings are accepted;
//! identifiers are case-folded. `#` and `//` start comments. The grammar
//! is documented in `docs/dsl.md`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::items;

pub const MAX_PRIMITIVES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Mine,
    Craft,
    Smelt,
    Place,
    WaitUntilDay,
    Explore,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Mine,
        Verb::Craft,
        Verb::Smelt,
        Verb::Place,
        Verb::WaitUntilDay,
        Verb::Explore,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Verb::Mine => "mine",
            Verb::Craft => "craft",
            Verb::Smelt => "smelt",
            Verb::Place => "place",
            Verb::WaitUntilDay => "wait_until_day",
            Verb::Explore => "explore",
        }
    }

    fn from_keyword(word: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.keyword() == word)
    }

    /// Inclusive argument-count bounds. Extra `craft` arguments are
    /// ingredient hints and are ignored by the interpreter.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Verb::Mine | Verb::Smelt | Verb::Place => (1, 1),
            Verb::Craft => (1, 3),
            Verb::WaitUntilDay | Verb::Explore => (0, 0),
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Primitive {
    pub verb: Verb,
    pub args: Vec<String>,
}

impl Primitive {
    pub fn new(verb: Verb, args: &[&str]) -> Self {
        Self {
            verb,
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn target(&self) -> Option<&str> {
        self.args.first().map(String::as_str)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb.keyword())?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub primitives: Vec<Primitive>,
    pub source_text: String,
}

impl ActionScript {
    /// One line per primitive in canonical spelling.
    pub fn canonical(&self) -> String {
        self.primitives
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Short human gloss, e.g. `mine dirt; craft stick`.
    pub fn gloss(&self) -> String {
        self.primitives
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("script contains no primitives")]
    Empty,
    #[error("unknown verb \"{found}\" (expected one of mine, craft, smelt, place, wait_until_day, explore)")]
    UnknownVerb { found: String },
    #[error("{verb} takes {expected} argument(s), found {found}")]
    Arity {
        verb: Verb,
        expected: String,
        found: usize,
    },
    #[error("script has {count} primitives, at most {max} allowed")]
    TooLong { count: usize, max: usize },
    #[error("unknown item or resource \"{found}\"")]
    UnknownItem { found: String },
    #[error("expected {expected}, found {found}")]
    Unexpected { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Open,
    Close,
    Comma,
    Quote,
    Other(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("\"{s}\""),
            Tok::Open => "\"(\"".into(),
            Tok::Close => "\")\"".into(),
            Tok::Comma => "\",\"".into(),
            Tok::Quote => "quote".into(),
            Tok::Other(c) => format!("\"{c}\""),
        }
    }
}

fn is_quote(c: char) -> bool {
    matches!(
        c,
        '\'' | '"' | '`' | '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}'
    )
}

/// Tokens of one statement with their 1-based columns.
fn tokenize(text: &str, start_column: usize) -> Vec<(usize, Tok)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = start_column + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
            out.push((col, Tok::Ident(word)));
        } else {
            out.push((
                col,
                match c {
                    '(' => Tok::Open,
                    ')' => Tok::Close,
                    ',' => Tok::Comma,
                    q if is_quote(q) => Tok::Quote,
                    other => Tok::Other(other),
                },
            ));
            i += 1;
        }
    }
    out
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")]
        .into_iter()
        .flatten()
        .min();
    match cut {
        Some(idx) => &line[..idx],
        None => line,
    }
}

fn parse_statement(
    tokens: &[(usize, Tok)],
    line: usize,
    end_column: usize,
) -> Result<Primitive, ParseError> {
    let err = |column: usize, kind: ParseErrorKind| ParseError { line, column, kind };
    let (verb_col, verb_word) = match &tokens[0] {
        (c, Tok::Ident(w)) => (*c, w.clone()),
        (c, t) => {
            return Err(err(
                *c,
                ParseErrorKind::Unexpected {
                    expected: "a verb".into(),
                    found: t.describe(),
                },
            ))
        }
    };
    let verb = Verb::from_keyword(&verb_word)
        .ok_or_else(|| err(verb_col, ParseErrorKind::UnknownVerb { found: verb_word }))?;

    let mut args: Vec<(usize, String)> = Vec::new();
    let rest = &tokens[1..];
    if matches!(rest.first(), Some((_, Tok::Open))) {
        // Call form: verb ( [arg {, arg}] )
        let mut i = 1;
        let mut expect_arg = true;
        loop {
            let Some((col, tok)) = rest.get(i) else {
                return Err(err(
                    end_column,
                    ParseErrorKind::Unexpected {
                        expected: "\")\"".into(),
                        found: "end of line".into(),
                    },
                ));
            };
            match tok {
                Tok::Quote => {}
                Tok::Ident(w) if expect_arg => {
                    args.push((*col, w.clone()));
                    expect_arg = false;
                }
                Tok::Comma if !expect_arg => expect_arg = true,
                Tok::Close if !expect_arg || args.is_empty() => {
                    i += 1;
                    break;
                }
                other => {
                    let expected = if expect_arg {
                        "an argument"
                    } else {
                        "\",\" or \")\""
                    };
                    return Err(err(
                        *col,
                        ParseErrorKind::Unexpected {
                            expected: expected.into(),
                            found: other.describe(),
                        },
                    ));
                }
            }
            i += 1;
        }
        if let Some((col, tok)) = rest.get(i) {
            return Err(err(
                *col,
                ParseErrorKind::Unexpected {
                    expected: "end of statement".into(),
                    found: tok.describe(),
                },
            ));
        }
    } else {
        for (col, tok) in rest {
            match tok {
                Tok::Quote | Tok::Comma => {}
                Tok::Ident(w) => args.push((*col, w.clone())),
                other => {
                    return Err(err(
                        *col,
                        ParseErrorKind::Unexpected {
                            expected: "an argument".into(),
                            found: other.describe(),
                        },
                    ))
                }
            }
        }
    }

    let (lo, hi) = verb.arity();
    if args.len() < lo || args.len() > hi {
        let expected = if lo == hi {
            lo.to_string()
        } else {
            format!("{lo} to {hi}")
        };
        return Err(err(
            verb_col,
            ParseErrorKind::Arity {
                verb,
                expected,
                found: args.len(),
            },
        ));
    }
    for (col, arg) in &args {
        if !items::is_known(arg) {
            return Err(err(
                *col,
                ParseErrorKind::UnknownItem { found: arg.clone() },
            ));
        }
    }
    Ok(Primitive {
        verb,
        args: args.into_iter().map(|(_, a)| a).collect(),
    })
}

pub fn parse_script(source: &str) -> Result<ActionScript, ParseError> {
    let mut primitives = Vec::new();
    for (line_idx, raw_line) in source.lines().enumerate() {
        let line_no = line_idx + 1;
        if raw_line.trim_start().starts_with("```") {
            continue;
        }
        let line = strip_comment(raw_line);
        let mut offset = 0;
        for segment in line.split(';') {
            let column = line[..offset].chars().count() + 1;
            offset += segment.len() + 1;
            let tokens = tokenize(segment, column);
            if tokens.is_empty() {
                continue;
            }
            let end_column = column + segment.chars().count();
            primitives.push(parse_statement(&tokens, line_no, end_column)?);
            if primitives.len() > MAX_PRIMITIVES {
                return Err(ParseError {
                    line: line_no,
                    column,
                    kind: ParseErrorKind::TooLong {
                        count: count_statements(source),
                        max: MAX_PRIMITIVES,
                    },
                });
            }
        }
    }
    if primitives.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            kind: ParseErrorKind::Empty,
        });
    }
    Ok(ActionScript {
        primitives,
        source_text: source.to_string(),
    })
}

fn count_statements(source: &str) -> usize {
    source
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .flat_map(|l| {
            strip_comment(l)
                .split(';')
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.trim().is_empty())
        .count()
}

/// A compact EBNF reminder included in action prompts.
pub const GRAMMAR_REMINDER: &str = "\
Action script grammar (at most 8 primitives, one per line):
  mine <resource> | craft <item> | smelt <item> | place <station> | wait_until_day | explore
Resources: dirt, sand, oak_log, dark_oak_log (or wood_log for any log), stone, iron_ore.
Put the script in a fenced code block.";
