//! Source-dataset label rules.

use std::collections::BTreeMap;

use super::record::{LabelSet, Rhythm, Superclass};
use crate::error::{Error, Result};

/// The eleven Chapman-Shaoxing rhythm codes with their groups.
pub const CHAPMAN_RHYTHMS: [(&str, Rhythm); 11] = [
    ("atrial fibrillation", Rhythm::Afib),
    ("atrial flutter", Rhythm::Afib),
    ("supraventricular tachycardia", Rhythm::Gsvt),
    ("atrial tachycardia", Rhythm::Gsvt),
    ("av node re-entrant tachycardia", Rhythm::Gsvt),
    ("av re-entrant tachycardia", Rhythm::Gsvt),
    ("sinus-to-atrial wandering rhythm", Rhythm::Gsvt),
    ("sinus tachycardia", Rhythm::Gsvt),
    ("sinus bradycardia", Rhythm::Sb),
    ("sinus rhythm", Rhythm::Sr),
    ("sinus irregularity", Rhythm::Sr),
];

/// Dataset acronyms for the rhythm codes.
const CHAPMAN_ACRONYMS: [(&str, &str); 11] = [
    ("afib", "atrial fibrillation"),
    ("af", "atrial flutter"),
    ("svt", "supraventricular tachycardia"),
    ("at", "atrial tachycardia"),
    ("avnrt", "av node re-entrant tachycardia"),
    ("avrt", "av re-entrant tachycardia"),
    ("saawr", "sinus-to-atrial wandering rhythm"),
    ("st", "sinus tachycardia"),
    ("sb", "sinus bradycardia"),
    ("sr", "sinus rhythm"),
    ("si", "sinus irregularity"),
];

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

/// Alternative spellings mapped onto canonical rhythm codes.
#[derive(Debug, Clone)]
pub struct AliasTable {
    aliases: BTreeMap<String, String>,
}

impl Default for AliasTable {
    fn default() -> Self {
        let mut aliases = BTreeMap::new();
        for (a, c) in CHAPMAN_ACRONYMS {
            aliases.insert(a.to_string(), c.to_string());
        }
        aliases.insert("sinus to atrial wandering rhythm".into(), "sinus-to-atrial wandering rhythm".into());
        aliases.insert("atrial fibrillation/flutter".into(), "atrial fibrillation".into());
        AliasTable { aliases }
    }
}

impl AliasTable {
    /// Reads `alias = canonical code` lines on top of the defaults; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = AliasTable::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (alias, code) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("alias line {}: expected 'alias = code'", n + 1)))?;
            let code = normalize(code);
            if !CHAPMAN_RHYTHMS.iter().any(|(c, _)| *c == code) {
                return Err(Error::Config(format!("alias line {}: '{code}' is not a rhythm code", n + 1)));
            }
            table.aliases.insert(normalize(alias), code);
        }
        Ok(table)
    }

    pub fn insert(&mut self, alias: &str, code: &str) {
        self.aliases.insert(normalize(alias), normalize(code));
    }

    pub fn map_chapman(&self, raw: &str) -> Result<Rhythm> {
        let key = normalize(raw);
        let key = self.aliases.get(&key).cloned().unwrap_or(key);
        CHAPMAN_RHYTHMS
            .iter()
            .find(|(c, _)| *c == key)
            .map(|&(_, r)| r)
            .ok_or_else(|| {
                Error::Mapping(format!(
                    "unknown Chapman rhythm '{raw}'; valid codes: {}",
                    CHAPMAN_RHYTHMS.map(|(c, _)| c).join(", ")
                ))
            })
    }
}

/// Four-group rhythm class of a Chapman-Shaoxing rhythm code.
pub fn map_chapman_rhythm(raw_rhythm: &str) -> Result<Rhythm> {
    AliasTable::default().map_chapman(raw_rhythm)
}

/// Statements that leave a MIMIC-IV-ECG report normal when accompanied by
/// "sinus rhythm".
pub const MIMIC_NORMAL_STATEMENTS: [&str; 2] = ["sinus rhythm", "normal ecg"];

/// Normal only when "sinus rhythm" is documented and nothing else beyond a
/// normal-ECG statement is. Borderline findings count as abnormal.
pub fn map_mimic_binary(report_labels: &[impl AsRef<str>]) -> Result<LabelSet> {
    let labels: Vec<String> = report_labels
        .iter()
        .map(|l| normalize(l.as_ref()))
        .filter(|l| !l.is_empty())
        .collect();
    if labels.is_empty() {
        return Err(Error::Mapping("MIMIC report has no statements".into()));
    }
    let sinus = labels.iter().any(|l| l == "sinus rhythm");
    let only_normal = labels.iter().all(|l| MIMIC_NORMAL_STATEMENTS.contains(&l.as_str()));
    Ok(LabelSet::Binary {
        abnormal: !(sinus && only_normal),
    })
}

/// Union of the superclasses attached to a record's SCP statements.
pub fn map_ptbxl_superclass(scp_statements: &[(impl AsRef<str>, impl AsRef<str>)]) -> Result<LabelSet> {
    let mut classes = Vec::new();
    for (code, sup) in scp_statements {
        let c: Superclass = sup.as_ref().parse().map_err(|_| {
            Error::Mapping(format!(
                "statement '{}' tagged with unknown superclass '{}'",
                code.as_ref(),
                sup.as_ref()
            ))
        })?;
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    if classes.is_empty() {
        return Err(Error::Mapping("record has no superclass statements".into()));
    }
    LabelSet::multilabel(&classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chapman_groups() {
        assert_eq!(map_chapman_rhythm("Atrial Flutter").unwrap(), Rhythm::Afib);
        assert_eq!(map_chapman_rhythm("sinus irregularity").unwrap(), Rhythm::Sr);
        assert_eq!(map_chapman_rhythm("SB").unwrap(), Rhythm::Sb);
        assert!(matches!(map_chapman_rhythm("ventricular tachycardia"), Err(Error::Mapping(_))));
    }

    #[test]
    fn custom_aliases() {
        let t = AliasTable::parse("# local spelling\nA-Fib = atrial fibrillation\n").unwrap();
        assert_eq!(t.map_chapman("a-fib").unwrap(), Rhythm::Afib);
        assert!(AliasTable::parse("x = not a code").is_err());
        assert!(AliasTable::parse("garbage").is_err());
    }

    #[test]
    fn mimic_rules() {
        let normal = LabelSet::Binary { abnormal: false };
        let abnormal = LabelSet::Binary { abnormal: true };
        assert_eq!(map_mimic_binary(&["sinus rhythm"]).unwrap(), normal);
        assert_eq!(map_mimic_binary(&["Sinus rhythm", "Normal ECG"]).unwrap(), normal);
        assert_eq!(map_mimic_binary(&["sinus rhythm", "left bundle branch block"]).unwrap(), abnormal);
        assert_eq!(map_mimic_binary(&["borderline ecg", "sinus rhythm"]).unwrap(), abnormal);
        assert_eq!(map_mimic_binary(&["normal ecg"]).unwrap(), abnormal);
        assert!(map_mimic_binary(&[] as &[&str]).is_err());
    }

    #[test]
    fn ptbxl_union() {
        let l = map_ptbxl_superclass(&[("IMI", "MI"), ("ISCAL", "STTC"), ("ILMI", "MI")]).unwrap();
        assert_eq!(l, LabelSet::multilabel(&[Superclass::Mi, Superclass::Sttc]).unwrap());
        assert!(map_ptbxl_superclass(&[] as &[(&str, &str)]).is_err());
        assert!(map_ptbxl_superclass(&[("X", "FOO")]).is_err());
    }
}
