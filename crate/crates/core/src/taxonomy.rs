//! Region taxonomies.
//!
//! A taxonomy is data: an ordered list of region names plus groups of region
//! indices that random compositions must draw from a single source. Indices
//! `0..N` name regions; channel `N` is the background.
//!
//! The plain-text format is one `key = value` per line:
//!
//! ```text
//! # comment
//! name = toy
//! regions = face, eye_l, eye_r, mouth, hair
//! symmetry = eye_l, eye_r
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Maximum region count; labels are stored as `u8` with the background at `N`.
pub const MAX_REGIONS: usize = 254;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTaxonomy {
    name: String,
    region_names: Vec<String>,
    symmetry_groups: Vec<Vec<usize>>,
}

impl RegionTaxonomy {
    pub fn new(
        name: impl Into<String>,
        region_names: Vec<String>,
        symmetry_groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Taxonomy("empty taxonomy name".into()));
        }
        if region_names.is_empty() || region_names.len() > MAX_REGIONS {
            return Err(Error::Taxonomy(format!(
                "region count {} outside 1..={MAX_REGIONS}",
                region_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &region_names {
            if r.is_empty() || r.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::Taxonomy(format!("invalid region name `{r}`")));
            }
            if !seen.insert(r.as_str()) {
                return Err(Error::Taxonomy(format!("duplicate region `{r}`")));
            }
        }
        let mut used = BTreeSet::new();
        for g in &symmetry_groups {
            if g.len() < 2 {
                return Err(Error::Taxonomy("symmetry group needs at least two regions".into()));
            }
            for &i in g {
                if i >= region_names.len() {
                    return Err(Error::Taxonomy(format!("symmetry index {i} out of range")));
                }
                if !used.insert(i) {
                    return Err(Error::Taxonomy(format!(
                        "region `{}` appears in more than one symmetry group",
                        region_names[i]
                    )));
                }
            }
        }
        Ok(Self {
            name,
            region_names,
            symmetry_groups,
        })
    }

    /// Builds a taxonomy from names, resolving groups by region name.
    pub fn from_names(name: &str, regions: &[&str], groups: &[&[&str]]) -> Result<Self> {
        let names: Vec<String> = regions.iter().map(|s| s.to_string()).collect();
        let mut resolved = Vec::new();
        for g in groups {
            let idx = g
                .iter()
                .map(|n| {
                    names
                        .iter()
                        .position(|r| r == n)
                        .ok_or_else(|| Error::Taxonomy(format!("unknown region `{n}` in group")))
                })
                .collect::<Result<Vec<_>>>()?;
            resolved.push(idx);
        }
        Self::new(name, names, resolved)
    }

    /// Five-region procedural domain used for desk-scale training.
    pub fn toy() -> Self {
        Self::from_names(
            "toy",
            &["face", "eye_l", "eye_r", "mouth", "hair"],
            &[&["eye_l", "eye_r"]],
        )
        .expect("valid built-in taxonomy")
    }

    /// Fifteen face meta-types grouped from the usual 18 face-parsing labels.
    pub fn face() -> Self {
        Self::from_names(
            "face",
            &[
                "skin", "nose", "glasses", "eye_l", "eye_r", "brow_l", "brow_r", "ear_l", "ear_r",
                "mouth", "hair", "hat", "earring", "neck", "cloth",
            ],
            &[&["eye_l", "eye_r"], &["brow_l", "brow_r"], &["ear_l", "ear_r"]],
        )
        .expect("valid built-in taxonomy")
    }

    /// Facade classes; windows, cornices and sills are drawn together.
    pub fn building() -> Self {
        Self::from_names(
            "building",
            &[
                "facade", "molding", "cornice", "pillar", "window", "door", "sill", "blind",
                "balcony", "shop", "deco",
            ],
            &[&["window", "cornice", "sill"]],
        )
        .expect("valid built-in taxonomy")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "face" => Some(Self::face()),
            "building" => Some(Self::building()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of regions `N` (excluding background).
    pub fn len(&self) -> usize {
        self.region_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_names.is_empty()
    }

    pub fn background_index(&self) -> usize {
        self.region_names.len()
    }

    /// `N + 1`: one channel per region plus background.
    pub fn channels(&self) -> usize {
        self.region_names.len() + 1
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn region_name(&self, i: usize) -> Option<&str> {
        self.region_names.get(i).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.region_names.iter().position(|r| r == name)
    }

    pub fn symmetry_groups(&self) -> &[Vec<usize>] {
        &self.symmetry_groups
    }

    pub fn group_of(&self, i: usize) -> Option<&[usize]> {
        self.symmetry_groups
            .iter()
            .find(|g| g.contains(&i))
            .map(Vec::as_slice)
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.len() {
            Ok(())
        } else {
            Err(Error::Taxonomy(format!(
                "region index {i} out of range for `{}` (N = {})",
                self.name,
                self.len()
            )))
        }
    }

    /// Left/right partner of `i` for horizontal flips: two-member groups
    /// whose names end in `_l` and `_r`.
    pub fn mirror_of(&self, i: usize) -> usize {
        for g in &self.symmetry_groups {
            if let [a, b] = g[..] {
                let (na, nb) = (&self.region_names[a], &self.region_names[b]);
                let paired = |x: &str, y: &str| {
                    x.strip_suffix("_l").is_some_and(|s| y.strip_suffix("_r") == Some(s))
                };
                if paired(na, nb) || paired(nb, na) {
                    if i == a {
                        return b;
                    }
                    if i == b {
                        return a;
                    }
                }
            }
        }
        i
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut regions: Option<Vec<String>> = None;
        let mut groups: Vec<Vec<String>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Taxonomy(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let list = || -> Vec<String> {
                value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            };
            match key.trim() {
                "name" => name = Some(value.trim().to_string()),
                "regions" => regions = Some(list()),
                "symmetry" => groups.push(list()),
                other => {
                    return Err(Error::Taxonomy(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        let name = name.ok_or_else(|| Error::Taxonomy("missing `name`".into()))?;
        let regions = regions.ok_or_else(|| Error::Taxonomy("missing `regions`".into()))?;
        let group_refs: Vec<Vec<&str>> = groups
            .iter()
            .map(|g| g.iter().map(String::as_str).collect())
            .collect();
        let group_slices: Vec<&[&str]> = group_refs.iter().map(Vec::as_slice).collect();
        let region_refs: Vec<&str> = regions.iter().map(String::as_str).collect();
        Self::from_names(&name, &region_refs, &group_slices)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = format!("name = {}\nregions = {}\n", self.name, self.region_names.join(", "));
        for g in &self.symmetry_groups {
            let names: Vec<&str> = g.iter().map(|&i| self.region_names[i].as_str()).collect();
            let _ = writeln!(s, "symmetry = {}", names.join(", "));
        }
        s
    }
}
