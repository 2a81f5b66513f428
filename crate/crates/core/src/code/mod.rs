//! Java-subset source model: classified tokens and statement spans.

mod ast;
mod lexer;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{extract_ast_spans, AstKind, AstSpan};
pub use lexer::{classify_word, lex, SourceToken, SyntaxClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("unsupported construct at byte offset {offset}")]
    UnsupportedConstruct { offset: usize },
    #[error("malformed statement at token {index}")]
    MalformedStatement { index: usize },
    #[error("statement outside the supported subset at token {index}")]
    UnsupportedStatement { index: usize },
}

/// A parsed snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeUnit {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<SourceToken>,
    pub ast_spans: Vec<AstSpan>,
}

impl CodeUnit {
    /// Token indices covered by at least one span of `kind`.
    pub fn tokens_in(&self, kind: AstKind) -> Vec<bool> {
        let mut mask = vec![false; self.tokens.len()];
        for span in self.ast_spans.iter().filter(|s| s.kind == kind) {
            for m in &mut mask[span.token_range.clone()] {
                *m = true;
            }
        }
        mask
    }

    /// Joins two units into one token stream, as used for paired inputs.
    /// Token indices and spans of `second` are shifted past `first`.
    pub fn concat(first: &CodeUnit, second: &CodeUnit) -> CodeUnit {
        let offset = first.tokens.len();
        let byte_offset = first.raw.len() + 1;
        let mut tokens = first.tokens.clone();
        tokens.extend(second.tokens.iter().map(|t| SourceToken {
            lexeme: t.lexeme.clone(),
            byte_span: t.byte_span.start + byte_offset..t.byte_span.end + byte_offset,
            syntax_class: t.syntax_class,
            index: t.index + offset,
        }));
        let mut ast_spans = first.ast_spans.clone();
        ast_spans.extend(second.ast_spans.iter().map(|s| AstSpan {
            kind: s.kind,
            token_range: s.token_range.start + offset..s.token_range.end + offset,
        }));
        CodeUnit {
            id: pair_id(&first.id, &second.id),
            raw: format!("{}\n{}", first.raw, second.raw),
            tokens,
            ast_spans,
        }
    }
}

pub fn pair_id(first: &str, second: &str) -> String {
    format!("{first}|{second}")
}

pub fn parse(id: &str, raw: &str) -> Result<CodeUnit, CodeError> {
    let tokens = lex(raw)?;
    let ast_spans = extract_ast_spans(&tokens)?;
    Ok(CodeUnit {
        id: id.to_string(),
        raw: raw.to_string(),
        tokens,
        ast_spans,
    })
}

/// One line of a JSON-lines corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub code: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("snippet {id}: {source}")]
    Parse { id: String, source: CodeError },
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(mut writer: impl Write, records: &[CorpusRecord]) -> std::io::Result<()> {
    for rec in records {
        let line = serde_json::to_string(rec).expect("corpus record serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_corpus(records: &[CorpusRecord]) -> Result<Vec<CodeUnit>, CorpusError> {
    crate::exec::map(records, |r| {
        parse(&r.id, &r.code).map_err(|source| CorpusError::Parse {
            id: r.id.clone(),
            source,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_compositions() {
        let u = parse("a", "return x ;").unwrap();
        assert_eq!(u.tokens.len(), 3);
        assert_eq!(u.ast_spans.len(), 1);
        assert_eq!(u.ast_spans[0].kind, AstKind::Return);

        let u = parse("b", "").unwrap();
        assert!(u.tokens.is_empty() && u.ast_spans.is_empty());

        let u = parse("c", "sum = num1 + num2 ;").unwrap();
        assert_eq!(u.tokens.len(), 6);
        assert!(u.ast_spans.is_empty());
    }

    #[test]
    fn errors_propagate() {
        assert!(matches!(
            parse("x", "a = `b`;"),
            Err(CodeError::UnsupportedConstruct { offset: 4 })
        ));
        assert!(matches!(
            parse("x", "if (a) {"),
            Err(CodeError::MalformedStatement { .. })
        ));
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let recs = vec![
            CorpusRecord {
                id: "s0".into(),
                code: "int x = 1 ;".into(),
            },
            CorpusRecord {
                id: "s1".into(),
                code: "String s = \"a\\\"b\" ;".into(),
            },
        ];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        assert_eq!(read_corpus(&buf[..]).unwrap(), recs);
        assert_eq!(parse_corpus(&recs).unwrap().len(), 2);
    }

    #[test]
    fn concat_shifts_indices() {
        let a = parse("a", "return x ;").unwrap();
        let b = parse("b", "if (y) return z ;").unwrap();
        let ab = CodeUnit::concat(&a, &b);
        assert_eq!(ab.id, "a|b");
        assert_eq!(ab.tokens.len(), 3 + 7);
        assert!(ab.tokens.iter().enumerate().all(|(i, t)| t.index == i));
        assert_eq!(ab.ast_spans[1].token_range, 3..10);
        assert_eq!(ab.ast_spans[2].token_range, 7..10);
        for t in &ab.tokens {
            assert_eq!(&ab.raw[t.byte_span.clone()], t.lexeme);
        }
    }
}
