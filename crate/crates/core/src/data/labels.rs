//! SNOMED-CT code to class-index mapping, with equivalence groups
//! (codes scored as the same diagnosis share a class index).
//!
//! The scored sets ship as checked-in config files — `label_map_2021.csv`
//! (26 classes over 30 codes, four equivalent pairs) and
//! `label_map_2020.csv` (27 independent classes) under the crate's `data/`
//! directory — and are embedded here as defaults. The map file is data,
//! not code: one `code,index,group` triple per line, `#` comments allowed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{DataError, DataResult};

/// Ordered code -> class-index mapping.
#[derive(Debug, Clone)]
pub struct LabelMap {
    n_classes: usize,
    /// code -> (class index, group tag), insertion-ordered by file line.
    entries: Vec<(String, usize, String)>,
    by_code: BTreeMap<String, usize>,
    /// One representative group tag per class index.
    class_tags: Vec<String>,
}

impl LabelMap {
    /// Parse the `code,index,group` format. Validates that class indices
    /// are exactly `0..n_classes-1`, that codes are unique, and that an
    /// equivalence group never spans two class indices.
    pub fn parse(text: &str) -> DataResult<LabelMap> {
        let mut entries = Vec::new();
        let mut by_code = BTreeMap::new();
        let mut group_index: BTreeMap<String, usize> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (code, index, group) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(i), Some(g), None) if !c.is_empty() && !g.is_empty() => (c, i, g),
                _ => {
                    return Err(DataError::BadMap(format!(
                        "line {}: expected \"code,index,group\"",
                        lineno + 1
                    )))
                }
            };
            let index: usize = index.parse().map_err(|_| {
                DataError::BadMap(format!("line {}: bad class index {index:?}", lineno + 1))
            })?;
            if by_code.insert(code.to_string(), index).is_some() {
                return Err(DataError::BadMap(format!(
                    "line {}: duplicate code {code:?}",
                    lineno + 1
                )));
            }
            if let Some(&prev) = group_index.get(group) {
                if prev != index {
                    return Err(DataError::BadMap(format!(
                        "line {}: group {group:?} spans class indices {prev} and {index}",
                        lineno + 1
                    )));
                }
            } else {
                group_index.insert(group.to_string(), index);
            }
            entries.push((code.to_string(), index, group.to_string()));
        }
        if entries.is_empty() {
            return Err(DataError::BadMap("empty map".into()));
        }
        let indices: BTreeSet<usize> = entries.iter().map(|e| e.1).collect();
        let n_classes = indices.len();
        if *indices.iter().next_back().unwrap() != n_classes - 1 {
            return Err(DataError::BadMap(format!(
                "class indices must cover 0..{} with no gaps",
                n_classes - 1
            )));
        }
        let mut class_tags = vec![String::new(); n_classes];
        for (_, index, group) in &entries {
            if class_tags[*index].is_empty() {
                class_tags[*index] = group.clone();
            }
        }
        Ok(LabelMap {
            n_classes,
            entries,
            by_code,
            class_tags,
        })
    }

    pub fn load(path: &Path) -> DataResult<LabelMap> {
        LabelMap::parse(&std::fs::read_to_string(path)?)
    }

    /// The 2021 scored set: 26 classes over 30 codes.
    pub fn challenge_2021() -> LabelMap {
        LabelMap::parse(include_str!("../../data/label_map_2021.csv"))
            .expect("embedded 2021 map is valid")
    }

    /// The 2020 scored set: 27 independent classes.
    pub fn challenge_2020() -> LabelMap {
        LabelMap::parse(include_str!("../../data/label_map_2020.csv"))
            .expect("embedded 2020 map is valid")
    }

    /// Identity map for synthetic corpora: codes `SYN000..` mapping to
    /// classes `0..n_classes`.
    pub fn synthetic(n_classes: usize) -> LabelMap {
        let text: String = (0..n_classes)
            .map(|c| format!("SYN{c:03},{c},SYN{c:03}\n"))
            .collect();
        LabelMap::parse(&text).expect("generated map is valid")
    }

    /// Render in the same `code,index,group` format `parse` accepts.
    pub fn serialize(&self) -> String {
        let mut out = String::from("# SNOMED-CT code, class index, equivalence group\n");
        for (code, index, group) in &self.entries {
            out.push_str(&format!("{code},{index},{group}\n"));
        }
        out
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    /// Number of codes (>= n_classes when equivalence groups exist).
    pub fn n_codes(&self) -> usize {
        self.entries.len()
    }

    /// Short human-readable tag for a class index.
    pub fn class_tag(&self, index: usize) -> &str {
        &self.class_tags[index]
    }

    /// Equivalence groups that actually merge more than one code.
    pub fn merged_groups(&self) -> Vec<(String, Vec<String>)> {
        let mut by_group: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (code, _, group) in &self.entries {
            by_group.entry(group).or_default().push(code.clone());
        }
        by_group
            .into_iter()
            .filter(|(_, codes)| codes.len() > 1)
            .map(|(g, codes)| (g.to_string(), codes))
            .collect()
    }
}

/// Multi-hot target vector: 1 at the class index of every mapped code.
/// Unmapped codes are ignored; equivalent codes collapse onto one class,
/// so the result is idempotent and order-independent in `dx_codes`.
pub fn label_vector<'a, I>(dx_codes: I, map: &LabelMap) -> Vec<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut v = vec![0.0; map.n_classes];
    for code in dx_codes {
        if let Some(idx) = map.index_of(code.trim()) {
            v[idx] = 1.0;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn challenge_2021_map_shape() {
        let map = LabelMap::challenge_2021();
        assert_eq!(map.n_classes(), 26);
        assert_eq!(map.n_codes(), 30);
        let merged = map.merged_groups();
        assert_eq!(merged.len(), 4, "four equivalent pairs: {merged:?}");
        for (_, codes) in &merged {
            assert_eq!(codes.len(), 2);
        }
        // Spot checks against the scored set.
        assert_eq!(map.index_of("426783006"), map.index_of("426783006")); // sinus rhythm present
        assert!(map.index_of("426783006").is_some());
        // Equivalent pairs land on the same class.
        assert_eq!(map.index_of("713427006"), map.index_of("59118001")); // complete RBBB == RBBB
        assert_eq!(map.index_of("284470004"), map.index_of("63593006")); // PAC == SVPB
        assert_eq!(map.index_of("427172004"), map.index_of("17338001")); // PVC == VPB
        assert_eq!(map.index_of("733534002"), map.index_of("164909002")); // complete LBBB == LBBB
    }

    #[test]
    fn challenge_2020_map_shape() {
        let map = LabelMap::challenge_2020();
        assert_eq!(map.n_classes(), 27);
        assert_eq!(map.n_codes(), 27);
        assert!(map.merged_groups().is_empty());
        assert!(map.index_of("426783006").is_some());
    }

    #[test]
    fn parse_rejects_bad_maps() {
        assert!(LabelMap::parse("").is_err());
        assert!(LabelMap::parse("a,0").is_err()); // missing group
        assert!(LabelMap::parse("a,0,g\na,1,h").is_err()); // duplicate code
        assert!(LabelMap::parse("a,0,g\nb,2,h").is_err()); // gap in indices
        assert!(LabelMap::parse("a,0,g\nb,1,g").is_err()); // group spans classes
        assert!(LabelMap::parse("a,x,g").is_err()); // bad index
        // Comments and blank lines are fine.
        let map = LabelMap::parse("# hi\n\na,0,g\nb,1,h\n").unwrap();
        assert_eq!(map.n_classes(), 2);
    }

    #[test]
    fn serialize_roundtrip() {
        let map = LabelMap::challenge_2021();
        let back = LabelMap::parse(&map.serialize()).unwrap();
        assert_eq!(back.n_classes(), map.n_classes());
        assert_eq!(back.n_codes(), map.n_codes());
        for (code, index, _) in &map.entries {
            assert_eq!(back.index_of(code), Some(*index));
        }
    }

    #[test]
    fn label_vector_examples() {
        let map = LabelMap::parse("a,0,g\nb,1,h\nb2,1,h\nc,2,i\n").unwrap();
        assert_eq!(label_vector([].into_iter(), &map), vec![0.0, 0.0, 0.0]);
        assert_eq!(label_vector(["a"], &map), vec![1.0, 0.0, 0.0]);
        // Unmapped codes ignored.
        assert_eq!(label_vector(["zzz"], &map), vec![0.0, 0.0, 0.0]);
        // Two codes in one equivalence group -> a single 1.
        assert_eq!(label_vector(["b", "b2"], &map), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn synthetic_map_is_identity() {
        let map = LabelMap::synthetic(4);
        assert_eq!(map.n_classes(), 4);
        for c in 0..4 {
            assert_eq!(map.index_of(&format!("SYN{c:03}")), Some(c));
        }
    }

    proptest! {
        /// label_vector is idempotent and order-independent.
        #[test]
        fn label_vector_set_semantics(perm in proptest::sample::subsequence(
            vec!["a", "b", "b2", "c", "zzz", "b", "a"], 0..7)) {
            let map = LabelMap::parse("a,0,g\nb,1,h\nb2,1,h\nc,2,i\n").unwrap();
            let v1 = label_vector(perm.iter().copied(), &map);
            let mut rev = perm.clone();
            rev.reverse();
            let v2 = label_vector(rev.iter().copied(), &map);
            prop_assert_eq!(&v1, &v2);
            // Feeding the doubled list changes nothing.
            let doubled: Vec<&str> = perm.iter().chain(perm.iter()).copied().collect();
            prop_assert_eq!(&v1, &label_vector(doubled, &map));
        }
    }
}
