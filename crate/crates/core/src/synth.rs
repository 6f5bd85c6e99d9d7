//! Seeded generator of a labeled MiniLang corpus with three structurally
//! distinct program families: nested-loop sorts, while-loop accumulations
//! and recursive functions. Identifiers, constants and a few optional
//! statements vary within a family.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::Ast;
use crate::error::Result;
use crate::minilang::parse_minilang;

pub const CLASS_NAMES: [&str; 3] = ["sort", "accumulate", "recursive"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthProgram {
    pub source_id: String,
    pub class: usize,
    pub method_name: String,
    pub source: String,
}

impl SynthProgram {
    pub fn parse(&self) -> Result<Ast> {
        parse_minilang(&self.source, &self.source_id)
    }
}

const ARRAYS: &[&str] = &["arr", "values", "data", "items", "xs", "nums", "buf", "list"];
const COUNTS: &[&str] = &["n", "len", "size", "count", "m", "total"];
const INDICES: &[&str] = &["i", "j", "k", "p", "q", "r", "idx", "pos"];
const TEMPS: &[&str] = &["tmp", "t", "swap", "hold", "aux", "old"];
const ACCS: &[&str] = &["sum", "acc", "result", "res", "s", "agg"];

const SORT_NAMES: &[&str] = &["bubbleSort", "sortArray", "sortValues", "orderItems", "sort_list", "sortInPlace"];
const ACC_NAMES: &[&str] = &["sumArray", "totalValues", "accumulateItems", "sum_list", "computeTotal", "addAll"];
const REC_NAMES: &[&str] = &["factorial", "computeFactorial", "fib", "recurse_product", "countDown", "powerOf"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("nonempty pool")
}

/// Two distinct picks from the same pool.
fn pick2<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> (&'a str, &'a str) {
    let mut two = xs.choose_multiple(rng, 2);
    (two.next().expect("pool >= 2"), two.next().expect("pool >= 2"))
}

// Every family shares the signature shapes `int|void name(int[] a, int n)`,
// so only the body structure tells the families apart.
fn return_type<R: Rng>(rng: &mut R) -> &'static str {
    if rng.gen_bool(0.5) {
        "int"
    } else {
        "void"
    }
}

fn sort_program<R: Rng>(rng: &mut R) -> (String, String) {
    let name = pick(rng, SORT_NAMES);
    let ret = return_type(rng);
    let a = pick(rng, ARRAYS);
    let n = pick(rng, COUNTS);
    let (i, j) = pick2(rng, INDICES);
    let t = pick(rng, TEMPS);
    let cmp = if rng.gen_bool(0.5) { ">" } else { "<" };
    let inner_bound = if rng.gen_bool(0.5) {
        format!("{n} - {i} - 1")
    } else {
        format!("{n} - 1")
    };
    let mut body = format!(
        "{ret} {name}(int[] {a}, int {n}) {{\n  for (int {i} = 0; {i} < {n}; {i}++) {{\n    for (int {j} = 0; {j} < {inner_bound}; {j}++) {{\n      if ({a}[{j}] {cmp} {a}[{j} + 1]) {{\n        int {t} = {a}[{j}];\n        {a}[{j}] = {a}[{j} + 1];\n        {a}[{j} + 1] = {t};\n      }}\n    }}\n  }}\n"
    );
    if ret == "int" {
        body.push_str(&format!("  return {a}[0];\n"));
    } else if rng.gen_bool(0.3) {
        body.push_str("  return;\n");
    }
    body.push_str("}\n");
    (name.to_string(), body)
}

fn accumulate_program<R: Rng>(rng: &mut R) -> (String, String) {
    let name = pick(rng, ACC_NAMES);
    let ret = return_type(rng);
    let a = pick(rng, ARRAYS);
    let n = pick(rng, COUNTS);
    let i = pick(rng, INDICES);
    let s = pick(rng, ACCS);
    let init = rng.gen_range(0..5);
    let k = rng.gen_range(1..10);
    let update = match rng.gen_range(0..3) {
        0 => format!("{s} = {s} + {a}[{i}];"),
        1 => format!("{s} += {a}[{i}] * {k};"),
        _ => format!("{s} = {s} + {a}[{i}] * {k};"),
    };
    let step = if rng.gen_bool(0.5) {
        format!("{i} = {i} + 1;")
    } else {
        format!("{i} += 1;")
    };
    let loop_body = if rng.gen_bool(0.3) {
        format!("    if ({a}[{i}] > {k}) {{\n      {update}\n    }}\n    {step}\n")
    } else {
        format!("    {update}\n    {step}\n")
    };
    let finish = if ret == "int" {
        format!("  return {s};\n")
    } else {
        format!("  {a}[0] = {s};\n")
    };
    let body = format!(
        "{ret} {name}(int[] {a}, int {n}) {{\n  int {s} = {init};\n  int {i} = 0;\n  while ({i} < {n}) {{\n{loop_body}  }}\n{finish}}}\n"
    );
    (name.to_string(), body)
}

fn recursive_program<R: Rng>(rng: &mut R) -> (String, String) {
    let name = pick(rng, REC_NAMES);
    let ret = return_type(rng);
    let a = pick(rng, ARRAYS);
    let n = pick(rng, COUNTS);
    let base = rng.gen_range(0..3);
    let braced = rng.gen_bool(0.5);
    let base_value = if ret == "int" { format!(" {a}[0]") } else { String::new() };
    let guard = if braced {
        format!("  if ({n} <= {base}) {{\n    return{base_value};\n  }}\n")
    } else {
        format!("  if ({n} <= {base}) return{base_value};\n")
    };
    let op = if rng.gen_bool(0.5) { "+" } else { "*" };
    let rest = if ret == "int" {
        match rng.gen_range(0..2) {
            0 => format!("  return {a}[{n} - 1] {op} {name}({a}, {n} - 1);\n"),
            _ => format!("  return {name}({a}, {n} - 1) {op} {name}({a}, {n} - 2);\n"),
        }
    } else {
        format!("  {a}[{n} - 1] = {a}[{n} - 1] {op} {a}[{n} - 2];\n  {name}({a}, {n} - 1);\n")
    };
    let body = format!("{ret} {name}(int[] {a}, int {n}) {{\n{guard}{rest}}}\n");
    (name.to_string(), body)
}

/// `per_class` programs of each family, interleaved by class, with ids
/// `{class}_{index}`.
pub fn synthetic_corpus(per_class: usize, seed: u64) -> Vec<SynthProgram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * CLASS_NAMES.len());
    for idx in 0..per_class {
        for (class, family) in CLASS_NAMES.iter().enumerate() {
            let (method_name, source) = match class {
                0 => sort_program(&mut rng),
                1 => accumulate_program(&mut rng),
                _ => recursive_program(&mut rng),
            };
            out.push(SynthProgram {
                source_id: format!("{family}_{idx:03}"),
                class,
                method_name,
                source,
            });
        }
    }
    out
}

/// Consistently renames every identifier in `ast` to a fresh name drawn
/// from `seed`. Equal names map to equal names.
pub fn alpha_rename(ast: &Ast, seed: u64) -> Ast {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let mut next = 0usize;
    ast.rename_identifiers(|old| {
        map.entry(old.to_string())
            .or_insert_with(|| {
                next += 1;
                format!("v{}_{}", rng.gen_range(0..1000), next)
            })
            .clone()
    })
}
