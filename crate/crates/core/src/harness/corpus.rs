//! Seeded grammar for short Java-subset snippets.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{parse, CodeUnit, CorpusRecord, SyntaxClass};

const VARS: &[&str] = &[
    "a", "b", "c", "i", "j", "n", "x", "y", "sum", "max", "min", "val", "tmp", "cnt", "idx", "res", "len", "key",
];
const METHODS: &[&str] = &["get", "add", "calc", "run", "find", "size", "next", "sort"];
const NUM_TYPES: &[&str] = &["int", "long", "double", "float", "short", "byte", "char"];
const MODIFIERS: &[&str] = &["public", "private", "protected", "static", "final"];
const ARITH: &[&str] = &["+", "-", "*", "/", "%"];
const CMP: &[&str] = &["<", ">", "<=", ">=", "==", "!="];
const WORDS: &[&str] = &["\"ok\"", "\"done\"", "\"id\"", "\"err\"", "\"x\""];

/// Snippets longer than this many source tokens are redrawn.
pub const MAX_SNIPPET_TOKENS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub num_snippets: usize,
    pub seed: u64,
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    out: Vec<String>,
}

impl Gen<'_> {
    fn push(&mut self, parts: &[&str]) {
        self.out.extend(parts.iter().map(|s| s.to_string()));
    }

    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool.choose(self.rng).expect("non-empty pool")
    }

    fn atom(&mut self) {
        match self.rng.random_range(0..10) {
            0..=5 => {
                let v = self.pick(VARS);
                self.push(&[v]);
            }
            6..=8 => {
                let n = self.rng.random_range(0..100).to_string();
                self.out.push(n);
            }
            _ => {
                let m = self.pick(METHODS);
                let v = self.pick(VARS);
                self.push(&[m, "(", v, ")"]);
            }
        }
    }

    fn expr(&mut self) {
        self.atom();
        if self.rng.random_bool(0.6) {
            let op = self.pick(ARITH);
            self.push(&[op]);
            self.atom();
        }
    }

    fn cond(&mut self) {
        match self.rng.random_range(0..8) {
            0 => {
                let b = if self.rng.random_bool(0.5) { "true" } else { "false" };
                self.push(&[b]);
            }
            1 => {
                let v = self.pick(VARS);
                let w = self.pick(VARS);
                self.push(&["!", v, "&&", w, ">", "0"]);
            }
            _ => {
                let v = self.pick(VARS);
                let op = self.pick(CMP);
                self.push(&[v, op]);
                self.atom();
            }
        }
    }

    fn decl(&mut self) {
        match self.rng.random_range(0..6) {
            0 => {
                let v = self.pick(VARS);
                let lit = if self.rng.random_bool(0.5) { "true" } else { "false" };
                self.push(&["boolean", v, "=", lit, ";"]);
            }
            1 => {
                let v = self.pick(VARS);
                let w = self.pick(WORDS);
                self.push(&["String", v, "=", w, ";"]);
            }
            _ => {
                let t = self.pick(NUM_TYPES);
                let v = self.pick(VARS);
                self.push(&[t, v, "="]);
                self.expr();
                self.push(&[";"]);
            }
        }
    }

    fn simple(&mut self) {
        match self.rng.random_range(0..7) {
            0 | 1 => self.decl(),
            2 | 3 => {
                let v = self.pick(VARS);
                self.push(&[v, "="]);
                self.expr();
                self.push(&[";"]);
            }
            4 => {
                let v = self.pick(VARS);
                let op = if self.rng.random_bool(0.5) { "++" } else { "--" };
                self.push(&[v, op, ";"]);
            }
            5 => {
                let v = self.pick(VARS);
                let op = self.pick(&["+=", "-=", "*="]);
                self.push(&[v, op]);
                self.atom();
                self.push(&[";"]);
            }
            _ => {
                let m = self.pick(METHODS);
                let v = self.pick(VARS);
                let w = self.pick(VARS);
                self.push(&[m, "(", v, ",", w, ")", ";"]);
            }
        }
    }

    fn ret(&mut self) {
        self.push(&["return"]);
        self.expr();
        self.push(&[";"]);
    }

    fn stmt(&mut self, depth: usize) {
        let roll = self.rng.random_range(0..10);
        match roll {
            0..=1 if depth == 0 => {
                self.push(&["if", "("]);
                self.cond();
                self.push(&[")", "{"]);
                self.stmt(depth + 1);
                self.push(&["}"]);
                if self.rng.random_bool(0.6) {
                    self.push(&["else", "{"]);
                    if self.rng.random_bool(0.5) {
                        self.ret();
                    } else {
                        self.stmt(depth + 1);
                    }
                    self.push(&["}"]);
                }
            }
            2 if depth == 0 => {
                self.push(&["while", "("]);
                self.cond();
                self.push(&[")", "{"]);
                self.stmt(depth + 1);
                self.push(&["}"]);
            }
            3 => self.ret(),
            _ => self.simple(),
        }
    }

    fn method(&mut self) {
        let nmods = self.rng.random_range(1..=2);
        let mut mods: Vec<&str> = MODIFIERS.choose_multiple(self.rng, nmods).copied().collect();
        mods.sort_by_key(|m| MODIFIERS.iter().position(|x| x == m));
        if mods.contains(&"private") && mods.contains(&"protected") {
            mods.retain(|m| *m != "protected");
        }
        self.push(&mods);
        let void = self.rng.random_bool(0.25);
        let ret_type = if void { "void" } else { self.pick(&["int", "long", "double", "boolean"]) };
        let name = self.pick(METHODS);
        self.push(&[ret_type, name, "("]);
        for k in 0..self.rng.random_range(0..=2) {
            if k > 0 {
                self.push(&[","]);
            }
            let t = self.pick(NUM_TYPES);
            let v = self.pick(VARS);
            self.push(&[t, v]);
        }
        self.push(&[")", "{"]);
        for _ in 0..self.rng.random_range(1..=2) {
            self.stmt(0);
        }
        if !void {
            self.ret();
        }
        self.push(&["}"]);
    }

    fn snippet(&mut self) {
        if self.rng.random_bool(0.4) {
            self.method();
        } else {
            for _ in 0..self.rng.random_range(2..=4) {
                self.stmt(0);
            }
        }
    }
}

fn draw(rng: &mut ChaCha8Rng) -> String {
    loop {
        let mut g = Gen { rng, out: Vec::new() };
        g.snippet();
        if g.out.len() <= MAX_SNIPPET_TOKENS {
            return g.out.join(" ");
        }
    }
}

/// `params.num_snippets` snippets, identical for identical seeds. Every
/// snippet parses.
pub fn gen_corpus(params: &CorpusParams) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.num_snippets)
        .map(|i| CorpusRecord {
            id: format!("s{}_{i:05}", params.seed),
            code: draw(&mut rng),
        })
        .collect()
}

/// Consistently renames the local variables of `unit` with a random
/// permutation of the variable pool. Method names and type names are kept.
pub fn alpha_rename(unit: &CodeUnit, id: &str, rng: &mut ChaCha8Rng) -> CodeUnit {
    let mut perm: Vec<&str> = VARS.to_vec();
    perm.shuffle(rng);
    let code = unit
        .tokens
        .iter()
        .map(|t| match VARS.iter().position(|v| *v == t.lexeme) {
            Some(k) if t.syntax_class == SyntaxClass::Identifier => perm[k],
            _ => t.lexeme.as_str(),
        })
        .collect::<Vec<_>>()
        .join(" ");
    parse(id, &code).expect("renaming keeps the snippet well formed")
}
