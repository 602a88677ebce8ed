//! Random straight-line Python programs over ints, strings and lists.
//!
//! Statements are type-directed so every generated program runs without
//! raising. Lists are aliased and mutated in place on purpose: a fork must
//! copy them deeply.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARIABLES: [&str; 5] = ["a", "b", "c", "d", "e"];

/// Expression whose repr captures every generated variable.
pub fn state_probe() -> String {
    let names: Vec<String> = VARIABLES.iter().map(|v| format!("'{v}'")).collect();
    format!(
        "{{k: globals()[k] for k in ({},) if k in globals()}}",
        names.join(", ")
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Str,
    List,
}

#[derive(Debug, Clone, Default)]
pub struct TypeEnv(BTreeMap<&'static str, Ty>);

impl TypeEnv {
    fn of(&self, ty: Ty) -> Vec<&'static str> {
        self.0.iter().filter(|(_, t)| **t == ty).map(|(n, _)| *n).collect()
    }
}

const WORDS: [&str; 6] = ["ab", "fork", "x", "main", "zz", "canvas"];

fn int_atom(rng: &mut ChaCha8Rng, env: &TypeEnv) -> String {
    let ints = env.of(Ty::Int);
    if !ints.is_empty() && rng.random_bool(0.6) {
        (*ints.choose(rng).unwrap()).to_owned()
    } else {
        rng.random_range(-20..=20).to_string()
    }
}

fn statement(rng: &mut ChaCha8Rng, env: &mut TypeEnv) -> String {
    loop {
        let target = *VARIABLES.choose(rng).unwrap();
        let ints = env.of(Ty::Int);
        let strs = env.of(Ty::Str);
        let lists = env.of(Ty::List);
        let (line, ty) = match rng.random_range(0..11) {
            0 => (format!("{target} = {}", rng.random_range(-50..=50)), Some(Ty::Int)),
            1 => {
                let op = ["+", "-", "*"].choose(rng).unwrap();
                (
                    format!("{target} = {} {op} {}", int_atom(rng, env), int_atom(rng, env)),
                    Some(Ty::Int),
                )
            }
            2 => (format!("{target} = '{}'", WORDS.choose(rng).unwrap()), Some(Ty::Str)),
            3 if !strs.is_empty() => (
                format!("{target} = {} + '{}'", strs.choose(rng).unwrap(), WORDS.choose(rng).unwrap()),
                Some(Ty::Str),
            ),
            4 if !ints.is_empty() => (format!("{target} = str({})", ints.choose(rng).unwrap()), Some(Ty::Str)),
            5 if !strs.is_empty() || !lists.is_empty() => {
                let pool: Vec<&str> = strs.iter().chain(lists.iter()).copied().collect();
                (format!("{target} = len({})", pool.choose(rng).unwrap()), Some(Ty::Int))
            }
            6 => {
                let n = rng.random_range(0..4);
                let items: Vec<String> = (0..n).map(|_| int_atom(rng, env)).collect();
                (format!("{target} = [{}]", items.join(", ")), Some(Ty::List))
            }
            7 if !lists.is_empty() => {
                // in-place mutation, type unchanged
                let l = lists.choose(rng).unwrap();
                (format!("{l}.append({})", int_atom(rng, env)), None)
            }
            8 if !lists.is_empty() => (
                format!("{target} = {} + [{}]", lists.choose(rng).unwrap(), int_atom(rng, env)),
                Some(Ty::List),
            ),
            9 if !lists.is_empty() => {
                // alias: later appends through either name are visible via both
                (format!("{target} = {}", lists.choose(rng).unwrap()), Some(Ty::List))
            }
            10 if !ints.is_empty() => {
                let v = ints.choose(rng).unwrap();
                return format!("{v} += {}", rng.random_range(1..5));
            }
            _ => continue,
        };
        if let Some(ty) = ty {
            env.0.insert(target, ty);
        }
        return line;
    }
}

pub fn program(rng: &mut ChaCha8Rng, env: &mut TypeEnv, len: usize) -> Vec<String> {
    (0..len).map(|_| statement(rng, env)).collect()
}

/// A shared prefix `A` and two continuations `B` and `C` that are each valid
/// after `A`.
#[derive(Debug, Clone)]
pub struct Triple {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub c: Vec<String>,
}

pub fn triple(seed: u64) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = TypeEnv::default();
    let len_a = rng.random_range(1..=6);
    let a = program(&mut rng, &mut env, len_a);
    let mut env_b = env.clone();
    let len_b = rng.random_range(1..=5);
    let b = program(&mut rng, &mut env_b, len_b);
    let mut env_c = env;
    let len_c = rng.random_range(1..=5);
    let c = program(&mut rng, &mut env_c, len_c);
    Triple { a, b, c }
}

/// A program cut in two at a random point, `P` then `Q`. `Q` ends with an
/// expression statement so its result repr is observable.
pub fn split(seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = TypeEnv::default();
    let len = rng.random_range(2..=10);
    let mut full = program(&mut rng, &mut env, len);
    let cut = rng.random_range(1..full.len());
    let mut q = full.split_off(cut);
    let vars: Vec<&str> = env.0.keys().copied().collect();
    let tail = match vars.choose(&mut rng) {
        Some(v) if rng.random_bool(0.5) => (*v).to_owned(),
        _ => state_probe(),
    };
    q.push(tail);
    (full, q)
}

pub fn join(lines: &[String]) -> String {
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(triple(7).a, triple(7).a);
        assert_eq!(split(3), split(3));
    }

    #[test]
    fn split_is_nonempty() {
        for seed in 0..50 {
            let (p, q) = split(seed);
            assert!(!p.is_empty());
            assert!(q.len() >= 2);
        }
    }
}
