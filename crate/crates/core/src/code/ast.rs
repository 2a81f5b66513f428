//! Recursive-descent statement recognizer over the lexed token stream.
//!
//! Grammar (tokens, not characters):
//!
//! ```text
//! unit      := item*
//! item      := class | method | stmt
//! class     := MODIFIER* 'class' IDENT ('extends' IDENT)? '{' (method | field)* '}'
//! method    := MODIFIER* type IDENT '(' ... ')' ('throws' IDENT (',' IDENT)*)? (block | ';')
//! type      := (DATATYPE | 'void' | IDENT) ('[' ']')*
//! stmt      := block | if | while | return | ';' | simple
//! block     := '{' stmt* '}'
//! if        := 'if' '(' ... ')' stmt ('else' stmt)?
//! while     := 'while' '(' ... ')' stmt
//! return    := 'return' ... ';'
//! simple    := ... ';'
//! ```
//!
//! `...` is any delimiter-balanced token run. Expressions are not parsed;
//! only the statement skeleton matters for span extraction.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::lexer::{SourceToken, SyntaxClass};
use super::CodeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AstKind {
    MethodSignature,
    IfElse,
    While,
    Return,
}

impl AstKind {
    pub const ALL: [AstKind; 4] = [
        AstKind::MethodSignature,
        AstKind::IfElse,
        AstKind::While,
        AstKind::Return,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AstKind::MethodSignature => "method_signature",
            AstKind::IfElse => "if_else",
            AstKind::While => "while",
            AstKind::Return => "return",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AstKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstSpan {
    pub kind: AstKind,
    /// Half-open range of token indices.
    pub token_range: Range<usize>,
}

struct Recognizer<'a> {
    toks: &'a [SourceToken],
    pos: usize,
    spans: Vec<AstSpan>,
    // Number of currently open spans per kind. A statement nested inside an
    // open span of its own kind is folded into the outer span.
    open: [usize; 4],
}

impl<'a> Recognizer<'a> {
    fn at(&self, i: usize) -> Option<&'a SourceToken> {
        self.toks.get(i)
    }

    fn is(&self, i: usize, lexeme: &str) -> bool {
        self.at(i).is_some_and(|t| t.lexeme == lexeme)
    }

    fn class_at(&self, i: usize) -> Option<SyntaxClass> {
        self.at(i).map(|t| t.syntax_class)
    }

    fn expect(&mut self, lexeme: &str) -> Result<(), CodeError> {
        if self.is(self.pos, lexeme) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CodeError::MalformedStatement { index: self.pos })
        }
    }

    fn open_span(&mut self, kind: AstKind) -> Option<usize> {
        self.open[kind.slot()] += 1;
        (self.open[kind.slot()] == 1).then_some(self.spans.len())
    }

    fn close_span(&mut self, kind: AstKind, slot: Option<usize>, start: usize) {
        self.open[kind.slot()] -= 1;
        if let Some(slot) = slot {
            self.spans.insert(
                slot,
                AstSpan {
                    kind,
                    token_range: start..self.pos,
                },
            );
        }
    }

    /// Consumes a balanced run up to (and including) the first `terminator`
    /// found at nesting depth zero.
    fn skip_balanced_until(&mut self, terminator: &str) -> Result<(), CodeError> {
        let mut stack: Vec<&str> = Vec::new();
        loop {
            let Some(tok) = self.at(self.pos) else {
                return Err(CodeError::MalformedStatement { index: self.pos });
            };
            let lx = tok.lexeme.as_str();
            if stack.is_empty() && lx == terminator {
                self.pos += 1;
                return Ok(());
            }
            match lx {
                "(" => stack.push(")"),
                "[" => stack.push("]"),
                "{" => stack.push("}"),
                ")" | "]" | "}" => {
                    if stack.pop() != Some(lx) {
                        return Err(CodeError::MalformedStatement { index: self.pos });
                    }
                }
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn paren_group(&mut self) -> Result<(), CodeError> {
        self.expect("(")?;
        self.skip_balanced_until(")")
    }

    /// Length of a `type IDENT (` prefix starting at `i`, after modifiers.
    fn method_head_len(&self, mut i: usize) -> Option<usize> {
        let start = i;
        while self.class_at(i) == Some(SyntaxClass::Modifier) {
            i += 1;
        }
        match self.at(i) {
            Some(t)
                if matches!(t.syntax_class, SyntaxClass::DataType | SyntaxClass::Identifier)
                    || t.lexeme == "void" =>
            {
                i += 1
            }
            _ => return None,
        }
        while self.is(i, "[") && self.is(i + 1, "]") {
            i += 2;
        }
        if self.class_at(i) != Some(SyntaxClass::Identifier) || !self.is(i + 1, "(") {
            return None;
        }
        Some(i + 1 - start)
    }

    fn is_class_decl(&self, mut i: usize) -> bool {
        while self.class_at(i) == Some(SyntaxClass::Modifier) {
            i += 1;
        }
        self.is(i, "class")
    }

    fn unit(&mut self) -> Result<(), CodeError> {
        while self.pos < self.toks.len() {
            self.item()?;
        }
        Ok(())
    }

    fn item(&mut self) -> Result<(), CodeError> {
        if self.is_class_decl(self.pos) {
            self.class_decl()
        } else if let Some(head) = self.method_head_len(self.pos) {
            self.method(head)
        } else {
            self.stmt()
        }
    }

    fn class_decl(&mut self) -> Result<(), CodeError> {
        while self.class_at(self.pos) == Some(SyntaxClass::Modifier) {
            self.pos += 1;
        }
        self.expect("class")?;
        self.ident()?;
        if self.is(self.pos, "extends") {
            self.pos += 1;
            self.ident()?;
        }
        self.expect("{")?;
        while !self.is(self.pos, "}") {
            if self.pos >= self.toks.len() {
                return Err(CodeError::MalformedStatement { index: self.pos });
            }
            match self.method_head_len(self.pos) {
                Some(head) => self.method(head)?,
                None => self.skip_balanced_until(";")?,
            }
        }
        self.pos += 1;
        Ok(())
    }

    fn ident(&mut self) -> Result<(), CodeError> {
        if self.class_at(self.pos) == Some(SyntaxClass::Identifier) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CodeError::MalformedStatement { index: self.pos })
        }
    }

    fn method(&mut self, head_len: usize) -> Result<(), CodeError> {
        let start = self.pos;
        let slot = self.open_span(AstKind::MethodSignature);
        self.pos += head_len + 1;
        self.skip_balanced_until(")")?;
        self.close_span(AstKind::MethodSignature, slot, start);
        if self.is(self.pos, "throws") {
            self.pos += 1;
            self.ident()?;
            while self.is(self.pos, ",") {
                self.pos += 1;
                self.ident()?;
            }
        }
        if self.is(self.pos, ";") {
            self.pos += 1;
            Ok(())
        } else {
            self.block()
        }
    }

    fn block(&mut self) -> Result<(), CodeError> {
        self.expect("{")?;
        loop {
            match self.at(self.pos) {
                None => return Err(CodeError::MalformedStatement { index: self.pos }),
                Some(t) if t.lexeme == "}" => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(_) => self.stmt()?,
            }
        }
    }

    fn stmt(&mut self) -> Result<(), CodeError> {
        let Some(tok) = self.at(self.pos) else {
            return Err(CodeError::MalformedStatement { index: self.pos });
        };
        match tok.lexeme.as_str() {
            "{" => self.block(),
            ";" => {
                self.pos += 1;
                Ok(())
            }
            "if" => self.if_stmt(),
            "while" => self.while_stmt(),
            "return" => self.return_stmt(),
            ")" | "]" | "}" | "else" => Err(CodeError::MalformedStatement { index: self.pos }),
            "for" | "do" | "switch" | "try" | "catch" | "case" | "class" | "import"
            | "package" | "interface" => {
                Err(CodeError::UnsupportedStatement { index: self.pos })
            }
            _ => self.skip_balanced_until(";"),
        }
    }

    fn if_stmt(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        let slot = self.open_span(AstKind::IfElse);
        self.pos += 1;
        self.paren_group()?;
        self.stmt()?;
        if self.is(self.pos, "else") {
            self.pos += 1;
            self.stmt()?;
        }
        self.close_span(AstKind::IfElse, slot, start);
        Ok(())
    }

    fn while_stmt(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        let slot = self.open_span(AstKind::While);
        self.pos += 1;
        self.paren_group()?;
        self.stmt()?;
        self.close_span(AstKind::While, slot, start);
        Ok(())
    }

    fn return_stmt(&mut self) -> Result<(), CodeError> {
        let start = self.pos;
        let slot = self.open_span(AstKind::Return);
        self.pos += 1;
        self.skip_balanced_until(";")?;
        self.close_span(AstKind::Return, slot, start);
        Ok(())
    }
}

/// Extracts method-signature, if-else, while and return spans, ordered by
/// start index (outer spans before the spans they contain).
pub fn extract_ast_spans(tokens: &[SourceToken]) -> Result<Vec<AstSpan>, CodeError> {
    let mut r = Recognizer {
        toks: tokens,
        pos: 0,
        spans: Vec::new(),
        open: [0; 4],
    };
    r.unit()?;
    Ok(r.spans)
}
