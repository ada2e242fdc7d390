//! Extended BIOES tagging over aspects and opinions.
//!
//! | id | tag |
//! |----|-----|
//! | 0  | B-A |
//! | 1  | I-A |
//! | 2  | E-A |
//! | 3  | S-A |
//! | 4  | B-O |
//! | 5  | I-O |
//! | 6  | E-O |
//! | 7  | S-O |
//! | 8  | O   |
//!
//! A tag sequence covers the words of a sentence plus the two appended implicit
//! slots, which always carry `O` on the gold side.

use std::collections::BTreeSet;
use std::fmt;

use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    AspectBegin = 0,
    AspectInside = 1,
    AspectEnd = 2,
    AspectSingle = 3,
    OpinionBegin = 4,
    OpinionInside = 5,
    OpinionEnd = 6,
    OpinionSingle = 7,
    Outside = 8,
}

pub const NUM_TAGS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Aspect,
    Opinion,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [
        Tag::AspectBegin,
        Tag::AspectInside,
        Tag::AspectEnd,
        Tag::AspectSingle,
        Tag::OpinionBegin,
        Tag::OpinionInside,
        Tag::OpinionEnd,
        Tag::OpinionSingle,
        Tag::Outside,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Tag> {
        Tag::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        ["B-A", "I-A", "E-A", "S-A", "B-O", "I-O", "E-O", "S-O", "O"][self.id()]
    }

    fn with_role(role: Role, position: usize) -> Tag {
        let base = match role {
            Role::Aspect => 0,
            Role::Opinion => 4,
        };
        Tag::ALL[base + position]
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tags for `n_words + 2` positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        ids.iter()
            .map(|&i| Tag::from_id(i).ok_or_else(|| Error::Tagging(format!("tag id {i} out of range"))))
            .collect::<Result<Vec<_>>>()
            .map(TagSequence)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn explicit_bounds(spans: &[Span]) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = spans
        .iter()
        .filter_map(|s| match *s {
            Span::Explicit { start, end } => Some((start, end)),
            _ => None,
        })
        .collect();
    bounds.sort_unstable();
    bounds.dedup();
    bounds
}

fn write_role(tags: &mut [Tag], bounds: &[(usize, usize)], role: Role) {
    for &(start, end) in bounds {
        if start == end {
            tags[start] = Tag::with_role(role, 3);
        } else {
            tags[start] = Tag::with_role(role, 0);
            for t in &mut tags[start + 1..end] {
                *t = Tag::with_role(role, 1);
            }
            tags[end] = Tag::with_role(role, 2);
        }
    }
}

fn check_role(bounds: &[(usize, usize)], n_words: usize, role: Role) -> Result<()> {
    for &(start, end) in bounds {
        if start > end || end >= n_words {
            return Err(Error::Tagging(format!(
                "{role:?} span {start}..={end} outside {n_words} words"
            )));
        }
    }
    for w in bounds.windows(2) {
        if w[1].0 <= w[0].1 {
            return Err(Error::Tagging(format!(
                "overlapping {role:?} spans {}..={} and {}..={}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    Ok(())
}

/// Gold-side tags for a sentence of `n_words` words.
///
/// Implicit spans are ignored. An opinion that shares a word with an aspect is
/// left untagged; see [`tag_conflicts`].
pub fn encode_tags(n_words: usize, aspects: &[Span], opinions: &[Span]) -> Result<TagSequence> {
    let aspect_bounds = explicit_bounds(aspects);
    let opinion_bounds = explicit_bounds(opinions);
    check_role(&aspect_bounds, n_words, Role::Aspect)?;
    check_role(&opinion_bounds, n_words, Role::Opinion)?;

    let mut tags = vec![Tag::Outside; n_words + 2];
    write_role(&mut tags, &aspect_bounds, Role::Aspect);
    let free: Vec<(usize, usize)> = opinion_bounds
        .into_iter()
        .filter(|&(s, e)| tags[s..=e].iter().all(|&t| t == Tag::Outside))
        .collect();
    write_role(&mut tags, &free, Role::Opinion);
    Ok(TagSequence(tags))
}

/// Aspect/opinion pairs that share at least one word.
pub fn tag_conflicts(aspects: &[Span], opinions: &[Span]) -> Vec<(Span, Span)> {
    let mut out = Vec::new();
    for a in aspects {
        for o in opinions {
            if a.overlaps(o) && !out.contains(&(*a, *o)) {
                out.push((*a, *o));
            }
        }
    }
    out
}

/// Keeps a maximal non-overlapping subset of explicit spans, earliest start
/// first and longer spans winning ties. Returns `(kept, dropped)`.
pub fn resolve_overlaps(spans: &[Span]) -> (Vec<Span>, Vec<Span>) {
    let mut sorted: Vec<Span> = spans.iter().copied().filter(|s| !s.is_implicit()).collect();
    sorted.sort_by_key(|s| match *s {
        Span::Explicit { start, end } => (start, usize::MAX - end),
        _ => unreachable!(),
    });
    sorted.dedup();
    let mut kept: Vec<Span> = Vec::new();
    let mut dropped = Vec::new();
    for s in sorted {
        if kept.iter().any(|k| k.overlaps(&s)) {
            dropped.push(s);
        } else {
            kept.push(s);
        }
    }
    (kept, dropped)
}

fn decode_role(tags: &[Tag], role: Role) -> Vec<Span> {
    let begin = Tag::with_role(role, 0);
    let inside = Tag::with_role(role, 1);
    let end = Tag::with_role(role, 2);
    let single = Tag::with_role(role, 3);

    let mut spans = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let t = tags[i];
        if t == single {
            spans.push(Span::explicit(i, i));
            i += 1;
        } else if t == begin {
            let mut j = i + 1;
            while j < tags.len() && tags[j] == inside {
                j += 1;
            }
            if j < tags.len() && tags[j] == end {
                spans.push(Span::explicit(i, j));
                i = j + 1;
            } else {
                // fragment; resume at whatever broke it
                i = j;
            }
        } else {
            i += 1;
        }
    }
    spans
}

/// Decodes aspects and opinions from a predicted tag sequence.
///
/// Only well-formed `S` and `B I* E` patterns are kept. The last two positions
/// are the implicit slots and are never decoded as words; the implicit aspect
/// and opinion are always part of the result.
pub fn decode_tags(tags: &TagSequence) -> (BTreeSet<Span>, BTreeSet<Span>) {
    let words = &tags.0[..tags.0.len().saturating_sub(2)];
    let mut aspects: BTreeSet<Span> = decode_role(words, Role::Aspect).into_iter().collect();
    let mut opinions: BTreeSet<Span> = decode_role(words, Role::Opinion).into_iter().collect();
    aspects.insert(Span::ImplicitAspect);
    opinions.insert(Span::ImplicitOpinion);
    (aspects, opinions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Tag::*;

    fn seq(tags: &[Tag]) -> TagSequence {
        TagSequence(tags.to_vec())
    }

    #[test]
    fn encodes_multiword_and_single() {
        let t = encode_tags(5, &[Span::explicit(0, 2)], &[Span::explicit(4, 4)]).unwrap();
        assert_eq!(
            t,
            seq(&[AspectBegin, AspectInside, AspectEnd, Outside, OpinionSingle, Outside, Outside])
        );

        let t = encode_tags(3, &[], &[]).unwrap();
        assert_eq!(t, seq(&[Outside; 5]));

        let t = encode_tags(4, &[Span::explicit(0, 0), Span::explicit(2, 3)], &[]).unwrap();
        assert_eq!(t, seq(&[AspectSingle, Outside, AspectBegin, AspectEnd, Outside, Outside]));
    }

    #[test]
    fn same_role_overlap_is_an_error() {
        assert!(encode_tags(5, &[Span::explicit(0, 2), Span::explicit(2, 3)], &[]).is_err());
        assert!(encode_tags(5, &[], &[Span::explicit(1, 1), Span::explicit(0, 4)]).is_err());
        assert!(encode_tags(3, &[Span::explicit(2, 3)], &[]).is_err());
    }

    #[test]
    fn aspect_wins_cross_role_overlap() {
        let a = [Span::explicit(0, 1)];
        let o = [Span::explicit(1, 2)];
        let t = encode_tags(3, &a, &o).unwrap();
        assert_eq!(t, seq(&[AspectBegin, AspectEnd, Outside, Outside, Outside]));
        assert_eq!(tag_conflicts(&a, &o), vec![(a[0], o[0])]);
    }

    #[test]
    fn implicit_spans_are_ignored_when_encoding() {
        let t = encode_tags(2, &[Span::ImplicitAspect], &[Span::ImplicitOpinion, Span::explicit(1, 1)]).unwrap();
        assert_eq!(t, seq(&[Outside, OpinionSingle, Outside, Outside]));
    }

    #[test]
    fn decodes_with_implicit_always_added() {
        let (a, o) = decode_tags(&seq(&[
            AspectBegin,
            AspectInside,
            AspectEnd,
            Outside,
            OpinionSingle,
            Outside,
            Outside,
        ]));
        assert_eq!(a, [Span::explicit(0, 2), Span::ImplicitAspect].into_iter().collect());
        assert_eq!(o, [Span::explicit(4, 4), Span::ImplicitOpinion].into_iter().collect());
    }

    #[test]
    fn fragments_dropped() {
        let (a, o) = decode_tags(&seq(&[AspectInside, AspectEnd, Outside, Outside]));
        assert_eq!(a, [Span::ImplicitAspect].into_iter().collect());
        assert_eq!(o, [Span::ImplicitOpinion].into_iter().collect());

        // B B I E: the first B is a fragment
        let (a, _) = decode_tags(&seq(&[AspectBegin, AspectBegin, AspectInside, AspectEnd, Outside, Outside]));
        assert_eq!(a, [Span::explicit(1, 3), Span::ImplicitAspect].into_iter().collect());

        // role crossing: B-A E-O
        let (a, o) = decode_tags(&seq(&[AspectBegin, OpinionEnd, Outside, Outside]));
        assert_eq!(a.len(), 1);
        assert_eq!(o.len(), 1);

        let (a, o) = decode_tags(&seq(&[Outside; 6]));
        assert_eq!((a.len(), o.len()), (1, 1));
    }

    #[test]
    fn implicit_slots_never_decode_as_words() {
        let (a, o) = decode_tags(&seq(&[Outside, AspectSingle, OpinionSingle]));
        assert_eq!(a, [Span::ImplicitAspect].into_iter().collect());
        assert_eq!(o, [Span::ImplicitOpinion].into_iter().collect());
    }

    #[test]
    fn overlap_resolution_prefers_longer() {
        let (kept, dropped) = resolve_overlaps(&[Span::explicit(1, 2), Span::explicit(0, 2), Span::explicit(3, 3)]);
        assert_eq!(kept, vec![Span::explicit(0, 2), Span::explicit(3, 3)]);
        assert_eq!(dropped, vec![Span::explicit(1, 2)]);
    }

    proptest! {
        #[test]
        fn decoded_spans_are_in_range_and_disjoint(ids in proptest::collection::vec(0usize..NUM_TAGS, 2..40)) {
            let t = TagSequence::from_ids(&ids).unwrap();
            let n_words = ids.len() - 2;
            let (a, o) = decode_tags(&t);
            for spans in [&a, &o] {
                let explicit: Vec<_> = spans.iter().filter(|s| !s.is_implicit()).collect();
                for s in &explicit {
                    if let Span::Explicit { start, end } = **s {
                        prop_assert!(start <= end && end < n_words);
                    }
                }
                for (i, x) in explicit.iter().enumerate() {
                    for y in &explicit[i + 1..] {
                        prop_assert!(!x.overlaps(y));
                    }
                }
            }
            prop_assert!(a.contains(&Span::ImplicitAspect) && !a.contains(&Span::ImplicitOpinion));
            prop_assert!(o.contains(&Span::ImplicitOpinion) && !o.contains(&Span::ImplicitAspect));
            prop_assert_eq!(decode_tags(&t), (a, o));
        }
    }
}
