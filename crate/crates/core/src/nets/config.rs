//! `key=value` configuration files for the three networks.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::kernels::DisparityLevelSet;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(Config, "line {}: expected key=value, got {line:?}", no + 1);
            };
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!(Config, "line {}: duplicate key {key}", no + 1);
            }
        }
        Ok(Self(map))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.0
            .get(key)
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("cannot parse {key}={s}")))
            })
            .transpose()
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => bail!(Config, "unknown key {k}"),
            None => Ok(()),
        }
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in self.iter() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Levels written as `lo..hi` (inclusive) or a comma list.
pub fn parse_levels(s: &str) -> Result<DisparityLevelSet> {
    let bad = || Error::Config(format!("cannot parse disparity levels {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        return DisparityLevelSet::range(lo, hi);
    }
    let levels = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<Vec<i64>>>()?;
    DisparityLevelSet::new(levels)
}

pub fn format_levels(levels: &DisparityLevelSet) -> String {
    let l = levels.levels();
    let contiguous = l.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && l.len() > 1 {
        format!("{}..{}", levels.min(), levels.max())
    } else {
        l.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        let kv = KeyValues::parse("# c\nang_res = 5\n\nchannels=16\n").unwrap();
        assert_eq!(kv.require::<usize>("ang_res").unwrap(), 5);
        assert_eq!(kv.get::<usize>("missing").unwrap(), None);
        assert!(kv.require::<usize>("missing").is_err());
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
        assert!(kv.reject_unknown(&["ang_res"]).is_err());
    }

    #[test]
    fn malformed_lines() {
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        let kv = KeyValues::parse("a=x").unwrap();
        assert!(kv.get::<usize>("a").is_err());
    }

    #[test]
    fn level_syntax() {
        assert_eq!(parse_levels("-4..4").unwrap(), DisparityLevelSet::default());
        assert_eq!(parse_levels("-1, 0, 2").unwrap().levels(), &[-1, 0, 2]);
        assert!(parse_levels("2,1").is_err());
        assert_eq!(format_levels(&DisparityLevelSet::default()), "-4..4");
        assert_eq!(format_levels(&parse_levels("-1,0,2").unwrap()), "-1,0,2");
    }
}
