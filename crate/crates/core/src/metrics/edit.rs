//! Levenshtein alignment with operation counts, and the CER/WER rates built on it.

use serde::{Deserialize, Serialize};

/// Operation counts of a minimal-cost alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub correct: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `S + D + C`, the reference length.
    pub fn reference_len(&self) -> usize {
        self.substitutions + self.deletions + self.correct
    }

    /// `S + I + C`, the hypothesis length.
    pub fn hypothesis_len(&self) -> usize {
        self.substitutions + self.insertions + self.correct
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;

    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            correct: self.correct + o.correct,
        }
    }
}

/// Unit-cost alignment of `hypothesis` against `reference`.
///
/// Backtrace ties prefer the diagonal (match or substitution), then
/// insertion, then deletion.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let cols = m + 1;
    let mut d = vec![0usize; (n + 1) * cols];
    for i in 0..=n {
        d[i * cols] = i;
    }
    for (j, v) in d.iter_mut().enumerate().take(m + 1) {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * cols + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * cols + j] + 1;
            let ins = d[i * cols + j - 1] + 1;
            d[i * cols + j] = sub.min(del).min(ins);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * cols + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[(i - 1) * cols + j - 1] + usize::from(!same) == here {
                if same {
                    counts.correct += 1;
                } else {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * cols + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

/// Character-level edit counts of two strings.
pub fn char_edit_counts(reference: &str, hypothesis: &str) -> EditCounts {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    edit_counts(&r, &h)
}

/// `(S + D + I) / (S + D + C)`; `None` for an empty reference. May exceed 1.
pub fn cer(counts: &EditCounts) -> Option<f64> {
    let denom = counts.reference_len();
    (denom > 0).then(|| counts.distance() as f64 / denom as f64)
}

/// Word error rate over region-paired words.
///
/// Each region holds one word and is recognized in both images, so the
/// alignment is fixed: no word insertions or deletions, and the rate is the
/// fraction of mismatched pairs. `None` for an empty list.
pub fn wer<S: AsRef<str>>(pairs: &[(S, S)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let wrong = pairs.iter().filter(|(r, h)| r.as_ref() != h.as_ref()).count();
    Some(wrong as f64 / pairs.len() as f64)
}

/// Word-level counts for region-paired words (`D = I = 0`).
pub fn word_edit_counts<S: AsRef<str>>(pairs: &[(S, S)]) -> EditCounts {
    let wrong = pairs.iter().filter(|(r, h)| r.as_ref() != h.as_ref()).count();
    EditCounts { substitutions: wrong, deletions: 0, insertions: 0, correct: pairs.len() - wrong }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain recursive edit distance, memoized; independent of the DP above.
    fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let v = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], &b[1..], memo).min(go(&a[1..], b, memo)).min(go(a, &b[1..], memo))
            };
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut Default::default())
    }

    #[test]
    fn identity() {
        assert_eq!(char_edit_counts("abc", "abc"), EditCounts { correct: 3, ..Default::default() });
    }

    #[test]
    fn kitten_sitting() {
        let c = char_edit_counts("kitten", "sitting");
        assert_eq!(oracle_distance(b"kitten", b"sitting"), 3);
        assert_eq!(c, EditCounts { substitutions: 2, deletions: 0, insertions: 1, correct: 4 });
    }

    #[test]
    fn single_deletion_and_empty() {
        assert_eq!(char_edit_counts("a", ""), EditCounts { deletions: 1, ..Default::default() });
        assert_eq!(char_edit_counts("", "ab"), EditCounts { insertions: 2, ..Default::default() });
        assert_eq!(char_edit_counts("", ""), EditCounts::default());
    }

    #[test]
    fn cer_cases() {
        assert_eq!(cer(&EditCounts { correct: 5, ..Default::default() }), Some(0.0));
        let helo = char_edit_counts("hello", "helo");
        assert_eq!(helo, EditCounts { substitutions: 0, deletions: 1, insertions: 0, correct: 4 });
        assert_eq!(cer(&helo), Some(0.2));
        assert_eq!(cer(&EditCounts { insertions: 5, correct: 1, ..Default::default() }), Some(5.0));
        assert_eq!(cer(&char_edit_counts("", "abc")), None);
    }

    #[test]
    fn wer_cases() {
        let pairs: Vec<(String, String)> =
            (0..10).map(|i| (format!("W{i}"), if i < 3 { "X".to_string() } else { format!("W{i}") })).collect();
        assert_eq!(wer(&pairs), Some(0.3));
        assert_eq!(wer(&[("A", "A"), ("B", "B")]), Some(0.0));
        assert_eq!(wer(&[("A", "B"), ("B", "")]), Some(1.0));
        assert_eq!(wer::<&str>(&[]), None);
        let c = word_edit_counts(&pairs);
        assert_eq!((c.deletions, c.insertions, c.substitutions, c.correct), (0, 0, 3, 7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn counts_identities(a in proptest::collection::vec(0u8..4, 0..=10), b in proptest::collection::vec(0u8..4, 0..=10)) {
            let c = edit_counts(&a, &b);
            prop_assert_eq!(c.reference_len(), a.len());
            prop_assert_eq!(c.hypothesis_len(), b.len());
            prop_assert_eq!(c.distance(), oracle_distance(&a, &b));
        }
    }
}
