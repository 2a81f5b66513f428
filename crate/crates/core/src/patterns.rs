//! Guiding target matrices and the head-to-pattern assignment.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::code::{AstKind, CodeUnit, SyntaxClass};
use crate::subtok::{AlignedSequence, CLS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatternError {
    #[error("sequence {seq} was not encoded from unit {unit}")]
    SequenceUnitMismatch { seq: String, unit: String },
    #[error("invalid pattern spec: {0}")]
    InvalidSpec(String),
    #[error("guided fraction must be one of 1/4, 1/2, 3/4, 1; got {0}")]
    InvalidLambda(f64),
    #[error("at least one pattern spec is required")]
    EmptySpecs,
    #[error("malformed pattern csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlobalPos {
    First,
    Cls,
    Sep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalDir {
    Next,
    Prev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternSpec {
    Syntax(SyntaxClass),
    Ast(AstKind),
    Global(GlobalPos),
    Local(LocalDir),
}

/// Syntax classes that have a guiding pattern, in pattern-list order.
pub const GUIDED_CLASSES: [SyntaxClass; 7] = [
    SyntaxClass::Modifier,
    SyntaxClass::Separator,
    SyntaxClass::Keyword,
    SyntaxClass::Identifier,
    SyntaxClass::DataType,
    SyntaxClass::Operator,
    SyntaxClass::StringLit,
];

/// AST kinds that have a guiding pattern. `While` is analysed but not guided.
pub const GUIDED_AST: [AstKind; 3] = [AstKind::MethodSignature, AstKind::IfElse, AstKind::Return];

impl PatternSpec {
    pub fn validate(self) -> Result<Self, PatternError> {
        match self {
            PatternSpec::Syntax(c) if !GUIDED_CLASSES.contains(&c) => {
                Err(PatternError::InvalidSpec(format!("no syntax pattern for {c}")))
            }
            PatternSpec::Ast(k) if !GUIDED_AST.contains(&k) => {
                Err(PatternError::InvalidSpec(format!("no AST pattern for {k}")))
            }
            ok => Ok(ok),
        }
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternSpec::Syntax(c) => write!(f, "syntax:{c}"),
            PatternSpec::Ast(k) => write!(f, "ast:{k}"),
            PatternSpec::Global(GlobalPos::First) => f.write_str("global:first"),
            PatternSpec::Global(GlobalPos::Cls) => f.write_str("global:cls"),
            PatternSpec::Global(GlobalPos::Sep) => f.write_str("global:sep"),
            PatternSpec::Local(LocalDir::Next) => f.write_str("local:next"),
            PatternSpec::Local(LocalDir::Prev) => f.write_str("local:prev"),
        }
    }
}

impl FromStr for PatternSpec {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PatternError::InvalidSpec(s.to_string());
        let (group, name) = s.split_once(':').ok_or_else(bad)?;
        let spec = match group {
            "syntax" => PatternSpec::Syntax(SyntaxClass::from_name(name).ok_or_else(bad)?),
            "ast" => PatternSpec::Ast(AstKind::from_name(name).ok_or_else(bad)?),
            "global" => PatternSpec::Global(match name {
                "first" => GlobalPos::First,
                "cls" => GlobalPos::Cls,
                "sep" => GlobalPos::Sep,
                _ => return Err(bad()),
            }),
            "local" => PatternSpec::Local(match name {
                "next" => LocalDir::Next,
                "prev" => LocalDir::Prev,
                _ => return Err(bad()),
            }),
            _ => return Err(bad()),
        };
        spec.validate()
    }
}

/// Expands a pattern group name (`syntax`, `ast`, `global`, `local`) or a
/// single `group:name` spec.
pub fn pattern_group(name: &str) -> Result<Vec<PatternSpec>, PatternError> {
    Ok(match name {
        "syntax" => GUIDED_CLASSES.iter().map(|&c| PatternSpec::Syntax(c)).collect(),
        "ast" => GUIDED_AST.iter().map(|&k| PatternSpec::Ast(k)).collect(),
        "global" => vec![
            PatternSpec::Global(GlobalPos::First),
            PatternSpec::Global(GlobalPos::Cls),
            PatternSpec::Global(GlobalPos::Sep),
        ],
        "local" => vec![
            PatternSpec::Local(LocalDir::Next),
            PatternSpec::Local(LocalDir::Prev),
        ],
        other => vec![other.parse()?],
    })
}

/// Parses a comma-separated list such as `syntax,ast`.
pub fn parse_pattern_list(list: &str) -> Result<Vec<PatternSpec>, PatternError> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        out.extend(pattern_group(part)?);
    }
    if out.is_empty() {
        return Err(PatternError::EmptySpecs);
    }
    Ok(out)
}

/// An `n x n` guiding target. Included rows are probability distributions;
/// excluded rows and pad columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    pub spec: PatternSpec,
    pub unit_id: String,
    pub n: usize,
    pub real_len: usize,
    pub values: Vec<f64>,
    pub row_included: Vec<bool>,
}

impl PatternMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n..(row + 1) * self.n]
    }

    pub fn included_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.row_included
            .iter()
            .enumerate()
            .filter(|(_, inc)| **inc)
            .map(|(r, _)| r)
    }

    pub fn any_included(&self) -> bool {
        self.row_included.iter().any(|&b| b)
    }

    fn empty(spec: PatternSpec, seq: &AlignedSequence) -> Self {
        let n = seq.len();
        Self {
            spec,
            unit_id: seq.unit_id.clone(),
            n,
            real_len: seq.real_len,
            values: vec![0.0; n * n],
            row_included: vec![false; n],
        }
    }

    /// Header line `spec,unit_id,n`, then `n` rows of `n` values.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{},{}\n", self.spec, self.unit_id, self.n);
        for r in 0..self.n {
            let row: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Reads a dump written by [`to_csv`](Self::to_csv). Row inclusion is
    /// recovered as "row has any non-zero entry"; `real_len` as one past the
    /// last row or column holding mass.
    pub fn from_csv(text: &str) -> Result<Self, PatternError> {
        let err = |m: &str| PatternError::Csv(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("missing header"))?;
        let (spec, rest) = header.split_once(',').ok_or_else(|| err("bad header"))?;
        let (unit_id, n) = rest.rsplit_once(',').ok_or_else(|| err("bad header"))?;
        let spec: PatternSpec = spec.parse()?;
        let n: usize = n.parse().map_err(|_| err("bad n"))?;
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| err("missing row"))?;
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let row = row.map_err(|_| err("bad value"))?;
            if row.len() != n {
                return Err(err("row width"));
            }
            values.extend(row);
        }
        let row_included: Vec<bool> = (0..n)
            .map(|r| values[r * n..(r + 1) * n].iter().any(|&v| v != 0.0))
            .collect();
        let real_len = (0..n)
            .filter(|&i| row_included[i] || (0..n).any(|r| values[r * n + i] != 0.0))
            .max()
            .map_or(0, |i| i + 1);
        Ok(Self {
            spec,
            unit_id: unit_id.to_string(),
            n,
            real_len,
            values,
            row_included,
        })
    }
}

fn column_pattern(spec: PatternSpec, seq: &AlignedSequence, cols: &[usize]) -> PatternMatrix {
    let mut m = PatternMatrix::empty(spec, seq);
    if cols.is_empty() {
        return m;
    }
    let w = 1.0 / cols.len() as f64;
    for r in 0..seq.real_len {
        m.row_included[r] = true;
        for &c in cols {
            m.values[r * m.n + c] = w;
        }
    }
    m
}

/// Builds the target matrix for `spec` over `seq`, which must have been
/// encoded from `unit`.
pub fn build_pattern(
    seq: &AlignedSequence,
    unit: &CodeUnit,
    spec: PatternSpec,
) -> Result<PatternMatrix, PatternError> {
    if seq.unit_id != unit.id || seq.num_source_tokens != unit.tokens.len() {
        return Err(PatternError::SequenceUnitMismatch {
            seq: seq.unit_id.clone(),
            unit: unit.id.clone(),
        });
    }
    let spec = spec.validate()?;
    let aligned = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..seq.real_len)
            .filter(|&p| seq.alignment[p].is_some_and(pred))
            .collect()
    };
    Ok(match spec {
        PatternSpec::Syntax(class) => {
            let cols = aligned(&|src| unit.tokens[src].syntax_class == class);
            column_pattern(spec, seq, &cols)
        }
        PatternSpec::Ast(kind) => {
            let member = unit.tokens_in(kind);
            let cols = aligned(&|src| member[src]);
            column_pattern(spec, seq, &cols)
        }
        PatternSpec::Global(GlobalPos::First) => column_pattern(spec, seq, &[0]),
        PatternSpec::Global(GlobalPos::Cls) => {
            let cols: Vec<usize> = seq.ids[..seq.real_len]
                .iter()
                .position(|&id| id == CLS)
                .into_iter()
                .collect();
            column_pattern(spec, seq, &cols)
        }
        PatternSpec::Global(GlobalPos::Sep) => {
            let cols: Vec<usize> = seq.sep_pos.into_iter().collect();
            column_pattern(spec, seq, &cols)
        }
        PatternSpec::Local(dir) => {
            let mut m = PatternMatrix::empty(spec, seq);
            for r in 0..seq.real_len {
                let target = match dir {
                    LocalDir::Next => (r + 1 < seq.real_len).then_some(r + 1),
                    LocalDir::Prev => r.checked_sub(1),
                };
                if let Some(c) = target {
                    m.row_included[r] = true;
                    m.values[r * m.n + c] = 1.0;
                }
            }
            m
        }
    })
}

/// Which pattern, if any, guides each head. The assignment depends on the
/// head index only and is shared by every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAssignment {
    pub num_layers: usize,
    pub heads_per_layer: usize,
    per_head: Vec<Option<PatternSpec>>,
}

impl HeadAssignment {
    pub fn none(num_layers: usize, heads_per_layer: usize) -> Self {
        Self {
            num_layers,
            heads_per_layer,
            per_head: vec![None; heads_per_layer],
        }
    }

    pub fn from_per_head(num_layers: usize, per_head: Vec<Option<PatternSpec>>) -> Self {
        Self {
            num_layers,
            heads_per_layer: per_head.len(),
            per_head,
        }
    }

    pub fn spec(&self, layer: usize, head: usize) -> Option<PatternSpec> {
        assert!(layer < self.num_layers, "layer {layer} out of range");
        self.per_head[head]
    }

    pub fn per_head(&self) -> &[Option<PatternSpec>] {
        &self.per_head
    }

    pub fn num_guided_heads(&self) -> usize {
        self.per_head.iter().filter(|s| s.is_some()).count()
    }

    /// All guided `(layer, head)` pairs, layer-major.
    pub fn guided(&self) -> Vec<(usize, usize, PatternSpec)> {
        (0..self.num_layers)
            .flat_map(|l| {
                self.per_head
                    .iter()
                    .enumerate()
                    .filter_map(move |(h, s)| s.map(|s| (l, h, s)))
            })
            .collect()
    }
}

pub const LAMBDA_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Guides the first `floor(lambda * heads_per_layer)` heads of every layer;
/// guided head `j` gets `specs[j % specs.len()]`.
pub fn assign_heads(
    num_layers: usize,
    heads_per_layer: usize,
    lambda: f64,
    specs: &[PatternSpec],
) -> Result<HeadAssignment, PatternError> {
    if !LAMBDA_GRID.iter().any(|g| (g - lambda).abs() < 1e-9) {
        return Err(PatternError::InvalidLambda(lambda));
    }
    if specs.is_empty() {
        return Err(PatternError::EmptySpecs);
    }
    for s in specs {
        s.validate()?;
    }
    let guided = (lambda * heads_per_layer as f64 + 1e-9).floor() as usize;
    let per_head = (0..heads_per_layer)
        .map(|j| (j < guided).then(|| specs[j % specs.len()]))
        .collect();
    Ok(HeadAssignment {
        num_layers,
        heads_per_layer,
        per_head,
    })
}
