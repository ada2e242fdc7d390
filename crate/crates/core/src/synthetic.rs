//! A small templated review corpus with every quadruple type.
//!
//! Used by tests, the acceptance suite and the book. Sentences are drawn from
//! fixed templates over fixed word lists, so any split generated with a
//! different seed shares the vocabulary but not (in general) the sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Example, LabelVocab, Quadruple, Sentiment, Span};

pub const CATEGORIES: [&str; 4] = ["AMBIENCE#GENERAL", "FOOD#QUALITY", "RESTAURANT#PRICES", "SERVICE#GENERAL"];
const AMBIENCE: usize = 0;
const FOOD: usize = 1;
const PRICES: usize = 2;
const SERVICE: usize = 3;

const FOODS: [&str; 5] = ["pizza", "pasta", "sushi", "soup", "bread"];
const STAFF: [&str; 3] = ["waiters", "staff", "servers"];
const GOOD: [&str; 4] = ["great", "delicious", "excellent", "fresh"];
const BAD: [&str; 3] = ["awful", "bland", "stale"];
const FRIENDLY: [&str; 2] = ["friendly", "helpful"];
const RUDE: [&str; 2] = ["rude", "slow"];

pub fn vocab() -> LabelVocab {
    LabelVocab::new(CATEGORIES).expect("distinct categories")
}

fn pick<'a>(rng: &mut impl Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

fn example(words: Vec<&str>, gold: Vec<Quadruple>) -> Example {
    Example::new(words.into_iter().map(str::to_owned).collect(), gold).expect("template is valid")
}

fn one(i: usize) -> Span {
    Span::explicit(i, i)
}

fn sentence(template: usize, rng: &mut impl Rng) -> Example {
    use Sentiment::*;
    match template {
        // EA&EO
        0 => {
            let (f, positive) = (pick(rng, &FOODS), rng.gen_bool(0.5));
            let adj = if positive { pick(rng, &GOOD) } else { pick(rng, &BAD) };
            let s = if positive { Positive } else { Negative };
            example(vec!["the", f, "was", adj], vec![Quadruple::new(one(1), one(3), FOOD, s)])
        }
        // two EA&EO pairs in one sentence
        1 => {
            let (f, g, st) = (pick(rng, &FOODS), pick(rng, &GOOD), pick(rng, &STAFF));
            let r = pick(rng, &RUDE);
            example(
                vec!["the", f, "was", g, "but", "the", st, "were", r],
                vec![
                    Quadruple::new(one(1), one(3), FOOD, Positive),
                    Quadruple::new(one(6), one(8), SERVICE, Negative),
                ],
            )
        }
        // EA&EO with a two-word aspect
        2 => {
            let fr = pick(rng, &FRIENDLY);
            example(
                vec!["the", "wait", "staff", "is", fr],
                vec![Quadruple::new(Span::explicit(1, 2), one(4), SERVICE, Positive)],
            )
        }
        // IA&EO
        3 => {
            let (adj, s) = if rng.gen_bool(0.5) { ("cheap", Positive) } else { ("overpriced", Negative) };
            example(vec!["it", "is", adj], vec![Quadruple::new(Span::ImplicitAspect, one(2), PRICES, s)])
        }
        // EA&IO
        4 => {
            let f = pick(rng, &FOODS);
            example(
                vec!["we", "ordered", "the", f, "twice"],
                vec![Quadruple::new(one(3), Span::ImplicitOpinion, FOOD, Positive)],
            )
        }
        // IA&IO
        5 => {
            if rng.gen_bool(0.5) {
                example(
                    vec!["we", "will", "come", "back"],
                    vec![Quadruple::new(Span::ImplicitAspect, Span::ImplicitOpinion, AMBIENCE, Positive)],
                )
            } else {
                example(
                    vec!["never", "going", "there", "again"],
                    vec![Quadruple::new(Span::ImplicitAspect, Span::ImplicitOpinion, AMBIENCE, Negative)],
                )
            }
        }
        // no quadruple
        _ => example(vec!["we", "went", "on", "friday"], vec![]),
    }
}

const TEMPLATES: usize = 7;

/// `n` sentences; templates cycle so that every type is present once `n >= 7`.
pub fn corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sentence(i % TEMPLATES, &mut rng)).collect()
}
