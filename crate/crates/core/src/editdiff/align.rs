use super::EditError;
use crate::corpus::TokenId;

/// Token alignment between an original response and its edit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// Matched `(original_index, edited_index)` pairs, strictly increasing in
    /// both coordinates.
    pub matched: Vec<(usize, usize)>,
    /// Original positions not covered by `matched` (changed in the original).
    pub u1_original: Vec<usize>,
    /// Edited positions not covered by `matched` (changed in the edit).
    pub u1_edited: Vec<usize>,
}

impl Alignment {
    pub fn is_unchanged(&self) -> bool {
        self.u1_original.is_empty() && self.u1_edited.is_empty()
    }

    fn from_matched(matched: Vec<(usize, usize)>, len_a: usize, len_b: usize) -> Self {
        let mut in_a = vec![false; len_a];
        let mut in_b = vec![false; len_b];
        for (i, j) in &matched {
            in_a[*i] = true;
            in_b[*j] = true;
        }
        let u1 = |flags: Vec<bool>| flags.iter().enumerate().filter(|(_, m)| !**m).map(|(i, _)| i).collect();
        Alignment { matched, u1_original: u1(in_a), u1_edited: u1(in_b) }
    }
}

/// Score of a partial matching: more matches is better, then less total
/// positional displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Score {
    count: u32,
    displacement: u32,
}

impl Score {
    const ZERO: Score = Score { count: 0, displacement: 0 };

    fn better_than(self, other: Score) -> bool {
        self.count > other.count || (self.count == other.count && self.displacement < other.displacement)
    }
}

/// Maximum-cardinality monotone matching of equal tokens.
///
/// Among all longest common subsequence matchings this picks the one with the
/// least total displacement `Σ|i - j|`, then the lexicographically smallest
/// pair sequence (leftmost in the original first). The displacement criterion
/// makes an in-place substitution edit align positionally whenever the
/// positional matching is maximal.
pub fn align(original: &[TokenId], edited: &[TokenId]) -> Result<Alignment, EditError> {
    if original.is_empty() || edited.is_empty() {
        return Err(EditError::EmptySequence);
    }
    Ok(align_unchecked(original, edited))
}

pub(crate) fn align_unchecked<S: PartialEq>(a: &[S], b: &[S]) -> Alignment {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // best[i * w + j]: optimal score for the suffixes a[i..], b[j..].
    let mut best = vec![Score::ZERO; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let mut s = best[(i + 1) * w + j];
            let skip_b = best[i * w + j + 1];
            if skip_b.better_than(s) {
                s = skip_b;
            }
            if a[i] == b[j] {
                let rest = best[(i + 1) * w + j + 1];
                let take = Score { count: rest.count + 1, displacement: rest.displacement + i.abs_diff(j) as u32 };
                if take.better_than(s) {
                    s = take;
                }
            }
            best[i * w + j] = s;
        }
    }

    let mut matched = Vec::with_capacity(best[0].count as usize);
    let (mut i, mut j) = (0, 0);
    'outer: while best[i * w + j].count > 0 {
        let target = best[i * w + j];
        for o in i..n {
            for e in j..m {
                if a[o] != b[e] {
                    continue;
                }
                let rest = best[(o + 1) * w + e + 1];
                let via = Score { count: rest.count + 1, displacement: rest.displacement + o.abs_diff(e) as u32 };
                if via == target {
                    matched.push((o, e));
                    i = o + 1;
                    j = e + 1;
                    continue 'outer;
                }
            }
        }
        unreachable!("optimal score is always realised by some first pair");
    }
    Alignment::from_matched(matched, n, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|x| TokenId(*x)).collect()
    }

    /// Every monotone matching of equal tokens, by exhaustive recursion.
    fn all_matchings(a: &[u8], b: &[u8]) -> Vec<Vec<(usize, usize)>> {
        fn rec(a: &[u8], b: &[u8], i: usize, j: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            out.push(cur.clone());
            for o in i..a.len() {
                for e in j..b.len() {
                    if a[o] == b[e] {
                        cur.push((o, e));
                        rec(a, b, o + 1, e + 1, cur, out);
                        cur.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        rec(a, b, 0, 0, &mut Vec::new(), &mut out);
        out
    }

    /// Brute-force reference for the full tie-breaking rule.
    fn brute_force(a: &[u8], b: &[u8]) -> Vec<(usize, usize)> {
        let disp = |m: &Vec<(usize, usize)>| m.iter().map(|(i, j)| i.abs_diff(*j)).sum::<usize>();
        let all = all_matchings(a, b);
        let max = all.iter().map(Vec::len).max().unwrap();
        let mut best: Vec<_> = all.into_iter().filter(|m| m.len() == max).collect();
        let min_disp = best.iter().map(disp).min().unwrap();
        best.retain(|m| disp(m) == min_disp);
        best.sort();
        best.swap_remove(0)
    }

    #[test]
    fn identity_alignment() {
        let x = ids(&[1, 2, 3]);
        let al = align(&x, &x).unwrap();
        assert_eq!(al.matched, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(al.is_unchanged());
    }

    #[test]
    fn substitution_alignment() {
        let al = align(&ids(&[1, 15, 3]), &ids(&[1, 7, 3])).unwrap();
        assert_eq!(al.matched, vec![(0, 0), (2, 2)]);
        assert_eq!(al.u1_original, vec![1]);
        assert_eq!(al.u1_edited, vec![1]);
    }

    #[test]
    fn insertion_alignment_matches_brute_force() {
        let al = align(&ids(&[1, 3]), &ids(&[1, 2, 3])).unwrap();
        assert_eq!(al.matched, vec![(0, 0), (1, 2)]);
        assert_eq!(brute_force(&[1, 3], &[1, 2, 3]), al.matched);
        assert!(al.u1_original.is_empty());
        assert_eq!(al.u1_edited, vec![1]);
    }

    #[test]
    fn substitution_with_a_repeated_token_stays_positional() {
        // [x, y] -> [y, y]: leftmost-only tie-breaking would match (1, 0).
        let al = align(&ids(&[5, 6]), &ids(&[6, 6])).unwrap();
        assert_eq!(al.matched, vec![(1, 1)]);
        assert_eq!(al.u1_original, vec![0]);
        assert_eq!(al.u1_edited, vec![0]);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert_eq!(align(&[], &ids(&[1])), Err(EditError::EmptySequence));
        assert_eq!(align(&ids(&[1]), &[]), Err(EditError::EmptySequence));
    }

    #[test]
    fn exhaustive_small_alphabet_matches_brute_force() {
        let mut seqs: Vec<Vec<u8>> = Vec::new();
        for len in 1..=4u32 {
            for code in 0..3usize.pow(len) {
                let mut c = code;
                seqs.push((0..len).map(|_| { let d = (c % 3) as u8; c /= 3; d }).collect());
            }
        }
        for a in &seqs {
            for b in &seqs {
                assert_eq!(align_unchecked(a, b).matched, brute_force(a, b), "{a:?} vs {b:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn alignment_invariants(a in prop::collection::vec(0u8..4, 1..9), b in prop::collection::vec(0u8..4, 1..9)) {
            let al = align_unchecked(&a, &b);
            for w in al.matched.windows(2) {
                prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
            }
            for (i, j) in &al.matched {
                prop_assert_eq!(a[*i], b[*j]);
            }
            prop_assert_eq!(al.matched.len() + al.u1_original.len(), a.len());
            prop_assert_eq!(al.matched.len() + al.u1_edited.len(), b.len());
            let rev = align_unchecked(&b, &a);
            prop_assert_eq!(rev.matched.len(), al.matched.len());
            prop_assert_eq!(rev.u1_original.len(), al.u1_edited.len());
        }

        #[test]
        fn brute_force_agreement(a in prop::collection::vec(0u8..3, 1..6), b in prop::collection::vec(0u8..3, 1..6)) {
            prop_assert_eq!(align_unchecked(&a, &b).matched, brute_force(&a, &b));
        }

        #[test]
        fn unique_optimum_is_transpose_symmetric(a in prop::collection::vec(0u8..6, 1..8), b in prop::collection::vec(0u8..6, 1..8)) {
            let all = all_matchings(&a, &b);
            let max = all.iter().map(Vec::len).max().unwrap();
            prop_assume!(all.iter().filter(|m| m.len() == max).count() == 1);
            let fwd = align_unchecked(&a, &b).matched;
            let back: Vec<_> = align_unchecked(&b, &a).matched.into_iter().map(|(i, j)| (j, i)).collect();
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn fresh_substitutions_align_positionally(
            base in prop::collection::vec(0u8..5, 1..12),
            flips in prop::collection::vec(any::<bool>(), 12),
        ) {
            // Substituted tokens (10, 20) never occur on the other side.
            let mut orig = base.clone();
            let mut edit = base.clone();
            let mut k = 0;
            for i in 0..base.len() {
                if flips[i] {
                    orig[i] = 10;
                    edit[i] = 20;
                    k += 1;
                }
            }
            let al = align_unchecked(&orig, &edit);
            prop_assert_eq!(al.u1_original.len(), k);
            prop_assert_eq!(al.u1_edited.len(), k);
            prop_assert!(al.matched.iter().all(|(i, j)| i == j));
            prop_assert_eq!(al.u1_original, al.u1_edited);
        }
    }
}
