//! Phone inventories, label reductions and the majority baseline.
//!
//! An inventory is loaded from a plain table with one phone per line:
//! `phone  reduced48  sound_class  [review]`. The bundled TIMIT table
//! (`data/timit60.tsv`) covers the 60 labels used for frame classification.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const TIMIT60_TABLE: &str = include_str!("../data/timit60.tsv");

/// The six coarse sound classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SoundClass {
    Affricates,
    Fricatives,
    Nasals,
    SemivowelsGlides,
    Stops,
    Vowels,
}

impl SoundClass {
    pub const ALL: [SoundClass; 6] = [
        SoundClass::Affricates,
        SoundClass::Fricatives,
        SoundClass::Nasals,
        SoundClass::SemivowelsGlides,
        SoundClass::Stops,
        SoundClass::Vowels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SoundClass::Affricates => "affricates",
            SoundClass::Fricatives => "fricatives",
            SoundClass::Nasals => "nasals",
            SoundClass::SemivowelsGlides => "semivowels/glides",
            SoundClass::Stops => "stops",
            SoundClass::Vowels => "vowels",
        }
    }
}

impl fmt::Display for SoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SoundClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SoundClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "sound class",
                name: s.to_string(),
            })
    }
}

/// Which label set a frame dataset is annotated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Full,
    Reduced48,
    SoundClass,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scheme::Full),
            "reduced48" => Ok(Scheme::Reduced48),
            "sound_class" => Ok(Scheme::SoundClass),
            _ => Err(Error::Unknown {
                kind: "reduction scheme",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Full => "full",
            Scheme::Reduced48 => "reduced48",
            Scheme::SoundClass => "sound_class",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneEntry {
    pub phone: String,
    pub reduced48: String,
    pub class: SoundClass,
    /// Row whose class assignment is conventional rather than documented.
    #[serde(default)]
    pub review: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneInventory {
    entries: Vec<PhoneEntry>,
}

impl PhoneInventory {
    pub fn new(entries: Vec<PhoneEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("phone inventory".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if seen.insert(e.phone.clone(), i).is_some() {
                return Err(invalid(format!("duplicate phone {:?}", e.phone)));
            }
        }
        Ok(PhoneInventory { entries })
    }

    /// The 60-label TIMIT inventory.
    pub fn timit() -> Self {
        Self::parse_table(TIMIT60_TABLE).expect("bundled TIMIT table is valid")
    }

    pub fn parse_table(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 3 || cols.len() > 4 {
                return Err(invalid(format!(
                    "phone table line {}: expected 3 or 4 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let review = match cols.get(3) {
                None => false,
                Some(&"review") => true,
                Some(other) => {
                    return Err(invalid(format!(
                        "phone table line {}: unknown flag {other:?}",
                        lineno + 1
                    )))
                }
            };
            entries.push(PhoneEntry {
                phone: cols[0].to_string(),
                reduced48: cols[1].to_string(),
                class: cols[2].parse()?,
                review,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_table(&std::fs::read_to_string(path)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("# phone\treduced48\tsound_class\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}", e.phone, e.reduced48, e.class));
            if e.review {
                out.push_str("\treview");
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PhoneEntry] {
        &self.entries
    }

    pub fn phones(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.phone.as_str())
    }

    pub fn index_of(&self, phone: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.phone == phone)
    }

    pub fn phone(&self, idx: usize) -> &str {
        &self.entries[idx].phone
    }

    pub fn class_of(&self, idx: usize) -> SoundClass {
        self.entries[idx].class
    }

    /// Maps a phone name to its label under `scheme`.
    pub fn reduce(&self, phone: &str, scheme: Scheme) -> Result<String> {
        let e = self
            .entries
            .iter()
            .find(|e| e.phone == phone)
            .ok_or_else(|| Error::Unknown {
                kind: "phone",
                name: phone.to_string(),
            })?;
        Ok(match scheme {
            Scheme::Full => e.phone.clone(),
            Scheme::Reduced48 => e.reduced48.clone(),
            Scheme::SoundClass => e.class.name().to_string(),
        })
    }

    /// Ordered label names under `scheme`: inventory order for phones and
    /// folded phones (first occurrence), canonical order for sound classes.
    pub fn labels(&self, scheme: Scheme) -> Vec<String> {
        match scheme {
            Scheme::Full => self.entries.iter().map(|e| e.phone.clone()).collect(),
            Scheme::Reduced48 => {
                let mut out: Vec<String> = Vec::new();
                for e in &self.entries {
                    if !out.contains(&e.reduced48) {
                        out.push(e.reduced48.clone());
                    }
                }
                out
            }
            Scheme::SoundClass => SoundClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    /// Phone index → label index under `scheme`, for every phone.
    pub fn label_map(&self, scheme: Scheme) -> Vec<usize> {
        let labels = self.labels(scheme);
        self.entries
            .iter()
            .map(|e| {
                let name = match scheme {
                    Scheme::Full => &e.phone,
                    Scheme::Reduced48 => &e.reduced48,
                    Scheme::SoundClass => return e.class as usize,
                };
                labels.iter().position(|l| l == name).expect("label present")
            })
            .collect()
    }
}

/// Most frequent label and its relative frequency. Ties go to the
/// lexicographically first label name.
pub fn majority_baseline(labels: &[usize], names: &[String]) -> Result<(usize, f64)> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("majority baseline over no frames".into()));
    }
    let mut counts = vec![0usize; names.len()];
    for &l in labels {
        if l >= names.len() {
            return Err(invalid(format!("label {l} outside {} names", names.len())));
        }
        counts[l] += 1;
    }
    let best = (0..names.len())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then_with(|| names[b].cmp(&names[a])))
        .expect("non-empty");
    Ok((best, counts[best] as f64 / labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timit_table_has_sixty_phones_and_48_folds() {
        let inv = PhoneInventory::timit();
        assert_eq!(inv.len(), 60);
        assert!(inv.index_of("h#").is_none());
        assert_eq!(inv.labels(Scheme::Reduced48).len(), 48);
        assert_eq!(inv.labels(Scheme::SoundClass).len(), 6);
    }

    #[test]
    fn full_scheme_is_identity() {
        let inv = PhoneInventory::timit();
        for p in inv.phones() {
            assert_eq!(inv.reduce(p, Scheme::Full).unwrap(), p);
        }
    }

    #[test]
    fn affricates_and_fricatives() {
        let inv = PhoneInventory::timit();
        assert_eq!(inv.reduce("jh", Scheme::SoundClass).unwrap(), "affricates");
        assert_eq!(inv.reduce("ch", Scheme::SoundClass).unwrap(), "affricates");
        assert_eq!(inv.reduce("s", Scheme::SoundClass).unwrap(), "fricatives");
        assert!(matches!(
            inv.reduce("xx", Scheme::Full),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn folded_phones_share_a_sound_class() {
        let inv = PhoneInventory::timit();
        let mut class_of_fold: BTreeMap<&str, SoundClass> = BTreeMap::new();
        for e in inv.entries() {
            let c = *class_of_fold.entry(&e.reduced48).or_insert(e.class);
            assert_eq!(c, e.class, "{} folds into {} across classes", e.phone, e.reduced48);
        }
    }

    #[test]
    fn table_round_trips() {
        let inv = PhoneInventory::timit();
        assert_eq!(PhoneInventory::parse_table(&inv.to_table()).unwrap(), inv);
    }

    #[test]
    fn majority_examples() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(majority_baseline(&[2, 2, 2], &names).unwrap(), (2, 1.0));
        let (l, acc) = majority_baseline(&[0, 0, 0, 1, 2], &names).unwrap();
        assert_eq!(l, 0);
        assert!((acc - 0.6).abs() < 1e-15);
        // tie between "b" and "c" goes to "b"
        assert_eq!(majority_baseline(&[2, 1], &names).unwrap().0, 1);
        assert!(majority_baseline(&[], &names).is_err());
    }
}
