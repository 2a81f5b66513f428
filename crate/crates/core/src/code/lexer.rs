//! Hand-written lexer for the supported Java subset.
//!
//! Supported lexical forms: identifiers and keywords, decimal integer and
//! floating literals, double-quoted string literals, the usual Java operators
//! and separators, `//` and `/* */` comments. Anything else is rejected with
//! the byte offset at which lexing stopped.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::CodeError;

/// Lexical category of a source token.
///
/// The first eight variants are the studied syntax classes. `NumLiteral` is an
/// internal ninth class so that classification stays total on numeric
/// literals; no guiding pattern ever selects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SyntaxClass {
    Identifier,
    Modifier,
    Operator,
    DataType,
    Separator,
    Keyword,
    StringLit,
    BooleanLit,
    NumLiteral,
}

impl SyntaxClass {
    /// The eight classes analysed for attention bias, in report order.
    pub const STUDIED: [SyntaxClass; 8] = [
        SyntaxClass::Identifier,
        SyntaxClass::Modifier,
        SyntaxClass::Operator,
        SyntaxClass::DataType,
        SyntaxClass::Separator,
        SyntaxClass::Keyword,
        SyntaxClass::StringLit,
        SyntaxClass::BooleanLit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntaxClass::Identifier => "identifier",
            SyntaxClass::Modifier => "modifier",
            SyntaxClass::Operator => "operator",
            SyntaxClass::DataType => "datatype",
            SyntaxClass::Separator => "separator",
            SyntaxClass::Keyword => "keyword",
            SyntaxClass::StringLit => "string",
            SyntaxClass::BooleanLit => "boolean",
            SyntaxClass::NumLiteral => "number",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::STUDIED
            .iter()
            .copied()
            .chain(std::iter::once(SyntaxClass::NumLiteral))
            .find(|c| c.name() == name)
    }

    pub fn is_studied(self) -> bool {
        self != SyntaxClass::NumLiteral
    }
}

impl fmt::Display for SyntaxClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceToken {
    pub lexeme: String,
    /// Half-open byte offsets into the snippet.
    pub byte_span: Range<usize>,
    pub syntax_class: SyntaxClass,
    pub index: usize,
}

const MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "transient",
    "volatile",
    "strictfp",
];

// Primitive types only; `void` is a keyword and `String` an identifier.
const DATA_TYPES: &[&str] = &[
    "boolean", "byte", "char", "short", "int", "long", "float", "double",
];

const KEYWORDS: &[&str] = &[
    "break",
    "case",
    "catch",
    "class",
    "continue",
    "default",
    "do",
    "else",
    "extends",
    "for",
    "if",
    "implements",
    "import",
    "instanceof",
    "interface",
    "new",
    "null",
    "package",
    "return",
    "super",
    "switch",
    "this",
    "throw",
    "throws",
    "try",
    "void",
    "while",
];

const BOOLEANS: &[&str] = &["true", "false"];

// Longest first so that greedy matching picks `>>=` over `>>` over `>`.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "=", "+", "-", "*", "/", "%", "<", ">",
    "!", "~", "?", ":", "&", "|", "^",
];

const SEPARATORS: &[char] = &[';', ',', '(', ')', '{', '}', '[', ']', '.'];

/// Classifies a word-shaped lexeme (identifier or reserved word).
pub fn classify_word(word: &str) -> SyntaxClass {
    if MODIFIERS.contains(&word) {
        SyntaxClass::Modifier
    } else if DATA_TYPES.contains(&word) {
        SyntaxClass::DataType
    } else if BOOLEANS.contains(&word) {
        SyntaxClass::BooleanLit
    } else if KEYWORDS.contains(&word) {
        SyntaxClass::Keyword
    } else {
        SyntaxClass::Identifier
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<SourceToken>,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, byte_offset: usize) -> Option<char> {
        self.src.get(self.pos + byte_offset..)?.chars().next()
    }

    fn push(&mut self, start: usize, class: SyntaxClass) {
        let index = self.tokens.len();
        self.tokens.push(SourceToken {
            lexeme: self.src[start..self.pos].to_string(),
            byte_span: start..self.pos,
            syntax_class: class,
            index,
        });
    }

    fn skip_trivia(&mut self) -> Result<(), CodeError> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => self.pos += c.len_utf8(),
                Some('/') if self.peek_at(1) == Some('/') => {
                    match self.src[self.pos..].find('\n') {
                        Some(off) => self.pos += off + 1,
                        None => self.pos = self.src.len(),
                    }
                }
                Some('/') if self.peek_at(1) == Some('*') => {
                    let start = self.pos;
                    match self.src[self.pos + 2..].find("*/") {
                        Some(off) => self.pos += off + 4,
                        None => return Err(CodeError::UnsupportedConstruct { offset: start }),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn word(&mut self) {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !is_ident_continue(c) {
                break;
            }
            self.pos += 1;
        }
        let class = classify_word(&self.src[start..self.pos]);
        self.push(start, class);
    }

    fn number(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            while matches!(lx.peek(), Some(c) if c.is_ascii_digit()) {
                lx.pos += 1;
            }
        };
        digits(self);
        if self.peek() == Some('.') && matches!(self.peek_at(1), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some('L' | 'l' | 'f' | 'F' | 'd' | 'D')) {
            self.pos += 1;
        }
        // `3abc` is not a Java token.
        if matches!(self.peek(), Some(c) if is_ident_continue(c)) {
            return Err(CodeError::UnsupportedConstruct { offset: self.pos });
        }
        self.push(start, SyntaxClass::NumLiteral);
        Ok(())
    }

    fn string(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        self.pos += 1;
        loop {
            match self.peek() {
                None | Some('\n') => return Err(CodeError::UnsupportedConstruct { offset: start }),
                Some('"') => {
                    self.pos += 1;
                    break;
                }
                Some('\\') => {
                    let esc = self.peek_at(1);
                    match esc {
                        Some('n' | 't' | 'r' | '"' | '\'' | '\\' | '0' | 'b' | 'f') => {
                            self.pos += 2
                        }
                        _ => return Err(CodeError::UnsupportedConstruct { offset: self.pos }),
                    }
                }
                Some(c) => self.pos += c.len_utf8(),
            }
        }
        self.push(start, SyntaxClass::StringLit);
        Ok(())
    }

    fn punct(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        let rest = &self.src[self.pos..];
        if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            self.pos += op.len();
            self.push(start, SyntaxClass::Operator);
            return Ok(());
        }
        match self.peek() {
            Some(c) if SEPARATORS.contains(&c) => {
                self.pos += 1;
                self.push(start, SyntaxClass::Separator);
                Ok(())
            }
            _ => Err(CodeError::UnsupportedConstruct { offset: start }),
        }
    }

    fn run(mut self) -> Result<Vec<SourceToken>, CodeError> {
        loop {
            self.skip_trivia()?;
            let Some(c) = self.peek() else {
                return Ok(self.tokens);
            };
            if is_ident_start(c) {
                self.word();
            } else if c.is_ascii_digit() {
                self.number()?;
            } else if c == '"' {
                self.string()?;
            } else {
                self.punct()?;
            }
        }
    }
}

/// Lexes `raw` into a classified token stream. Comments and whitespace are
/// dropped.
pub fn lex(raw: &str) -> Result<Vec<SourceToken>, CodeError> {
    Lexer {
        src: raw,
        pos: 0,
        tokens: Vec::new(),
    }
    .run()
}
