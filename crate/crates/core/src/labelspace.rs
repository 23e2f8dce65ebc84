//! Label schemas for the cancer-only (CM) and unified (UM) label spaces, plus
//! the named region groups that drive composite Dice scores and error maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LabelId = u16;

pub const BACKGROUND: LabelId = 0;

/// Default number of healthy structures in the unified label space.
pub const DEFAULT_HEALTHY_LABELS: usize = 53;

const DEFAULT_CORTICAL: usize = 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "CM", alias = "cm")]
    Cm,
    #[serde(rename = "UM", alias = "um")]
    Um,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CM" => Ok(ModelKind::Cm),
            "UM" => Ok(ModelKind::Um),
            other => Err(Error::Usage(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Names a region group may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    WholeTumor,
    TumorCore,
    EnhancingTumor,
    TumorAll,
    Cortical,
    Subcortical,
    WholeBrain,
}

/// How a group's Dice score is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupReduction {
    /// Dice of the union mask of all member labels.
    Union,
    /// Unweighted mean of the per-label Dice scores.
    LabelMean,
}

impl GroupName {
    pub const ALL: [GroupName; 7] = [
        GroupName::WholeTumor,
        GroupName::TumorCore,
        GroupName::EnhancingTumor,
        GroupName::TumorAll,
        GroupName::Cortical,
        GroupName::Subcortical,
        GroupName::WholeBrain,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupName::WholeTumor => "whole_tumor",
            GroupName::TumorCore => "tumor_core",
            GroupName::EnhancingTumor => "enhancing_tumor",
            GroupName::TumorAll => "tumor_all",
            GroupName::Cortical => "cortical",
            GroupName::Subcortical => "subcortical",
            GroupName::WholeBrain => "whole_brain",
        }
    }

    pub fn reduction(&self) -> GroupReduction {
        match self {
            GroupName::Cortical | GroupName::Subcortical | GroupName::WholeBrain => {
                GroupReduction::LabelMean
            }
            _ => GroupReduction::Union,
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupName::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown region group '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: LabelId,
    pub name: String,
}

/// Label id/name table with named region groups.
///
/// Label 0 is background: it is always valid and never a group member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct LabelSchema {
    schema_id: String,
    entries: Vec<LabelEntry>,
    groups: BTreeMap<GroupName, BTreeSet<LabelId>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SchemaDoc {
    schema_id: String,
    entries: Vec<LabelEntry>,
    groups: BTreeMap<GroupName, BTreeSet<LabelId>>,
}

impl TryFrom<SchemaDoc> for LabelSchema {
    type Error = Error;

    fn try_from(doc: SchemaDoc) -> Result<Self> {
        LabelSchema::new(doc.schema_id, doc.entries, doc.groups)
    }
}

impl From<LabelSchema> for SchemaDoc {
    fn from(s: LabelSchema) -> Self {
        SchemaDoc {
            schema_id: s.schema_id,
            entries: s.entries,
            groups: s.groups,
        }
    }
}

impl LabelSchema {
    pub fn new(
        schema_id: impl Into<String>,
        entries: Vec<LabelEntry>,
        groups: BTreeMap<GroupName, BTreeSet<LabelId>>,
    ) -> Result<Self> {
        let schema_id = schema_id.into();
        let mut entries = entries;
        entries.sort_by_key(|e| e.id);
        for pair in entries.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Schema(format!("duplicate label id {}", pair[0].id)));
            }
        }
        if entries.first().map(|e| e.id) != Some(BACKGROUND) {
            entries.insert(
                0,
                LabelEntry {
                    id: BACKGROUND,
                    name: "background".into(),
                },
            );
        }
        let ids: BTreeSet<LabelId> = entries.iter().map(|e| e.id).collect();
        for (name, members) in &groups {
            if members.is_empty() {
                return Err(Error::Schema(format!("group '{name}' has no members")));
            }
            if members.contains(&BACKGROUND) {
                return Err(Error::Schema(format!("group '{name}' contains background")));
            }
            if let Some(bad) = members.iter().find(|m| !ids.contains(m)) {
                return Err(Error::Schema(format!(
                    "group '{name}' references undeclared label {bad}"
                )));
            }
        }
        Ok(LabelSchema {
            schema_id,
            entries,
            groups,
        })
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    /// All entries, background first, sorted by id.
    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn groups(&self) -> &BTreeMap<GroupName, BTreeSet<LabelId>> {
        &self.groups
    }

    pub fn contains(&self, label: LabelId) -> bool {
        self.entries.binary_search_by_key(&label, |e| e.id).is_ok()
    }

    pub fn name_of(&self, label: LabelId) -> Option<&str> {
        self.entries
            .binary_search_by_key(&label, |e| e.id)
            .ok()
            .map(|i| self.entries[i].name.as_str())
    }

    /// Number of segmentation classes, background included.
    pub fn class_count(&self) -> usize {
        self.entries.len()
    }

    /// Position of `label` in the class axis of network outputs.
    pub fn class_of(&self, label: LabelId) -> Option<usize> {
        self.entries.binary_search_by_key(&label, |e| e.id).ok()
    }

    pub fn label_of(&self, class: usize) -> LabelId {
        self.entries[class].id
    }

    pub fn foreground_labels(&self) -> BTreeSet<LabelId> {
        self.entries
            .iter()
            .map(|e| e.id)
            .filter(|&id| id != BACKGROUND)
            .collect()
    }

    pub fn has_group(&self, name: GroupName) -> bool {
        self.groups.contains_key(&name)
    }

    pub fn group(&self, name: GroupName) -> Result<&BTreeSet<LabelId>> {
        self.groups.get(&name).ok_or_else(|| {
            Error::Schema(format!(
                "group '{name}' is not defined by schema '{}'",
                self.schema_id
            ))
        })
    }

    pub fn resolve_group(&self, name: &str) -> Result<BTreeSet<LabelId>> {
        let group: GroupName = name.parse()?;
        self.group(group).cloned()
    }

    /// The combined tumor label set: `whole_tumor` if declared, else `tumor_all`.
    pub fn tumor_labels(&self) -> Result<&BTreeSet<LabelId>> {
        self.group(GroupName::WholeTumor)
            .or_else(|_| self.group(GroupName::TumorAll))
            .map_err(|_| {
                Error::Schema(format!(
                    "schema '{}' declares neither whole_tumor nor tumor_all",
                    self.schema_id
                ))
            })
    }

    /// Whether the schema splits the tumor into necrotic / edema / enhancing.
    pub fn has_tumor_subregions(&self) -> bool {
        self.has_group(GroupName::WholeTumor)
            && self.has_group(GroupName::TumorCore)
            && self.has_group(GroupName::EnhancingTumor)
    }

    /// (necrotic core, edema, enhancing) labels derived from the nested groups.
    pub fn tumor_subregions(&self) -> Result<TumorSubregions> {
        let wt = self.group(GroupName::WholeTumor)?;
        let tc = self.group(GroupName::TumorCore)?;
        let et = self.group(GroupName::EnhancingTumor)?;
        let pick = |set: BTreeSet<LabelId>, what: &str| {
            set.into_iter()
                .next()
                .ok_or_else(|| Error::Schema(format!("no label left for the {what} region")))
        };
        Ok(TumorSubregions {
            necrotic: pick(tc.difference(et).copied().collect(), "necrotic core")?,
            edema: pick(wt.difference(tc).copied().collect(), "edema")?,
            enhancing: pick(et.clone(), "enhancing")?,
        })
    }

    /// Groups worth reporting for this schema, in display order.
    pub fn report_groups(&self) -> Vec<GroupName> {
        GroupName::ALL
            .into_iter()
            .filter(|g| self.groups.contains_key(g))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TumorSubregions {
    pub necrotic: LabelId,
    pub edema: LabelId,
    pub enhancing: LabelId,
}

pub fn builtin_schema(kind: ModelKind) -> LabelSchema {
    match kind {
        ModelKind::Cm => cm_schema(),
        ModelKind::Um => um_schema(DEFAULT_HEALTHY_LABELS).expect("default UM schema is valid"),
    }
}

fn cm_schema() -> LabelSchema {
    let entries = vec![
        entry(1, "necrotic_core"),
        entry(2, "edema"),
        entry(3, "enhancing_tumor"),
    ];
    let groups = BTreeMap::from([
        (GroupName::WholeTumor, BTreeSet::from([1, 2, 3])),
        (GroupName::TumorCore, BTreeSet::from([1, 3])),
        (GroupName::EnhancingTumor, BTreeSet::from([3])),
    ]);
    LabelSchema::new("cm", entries, groups).expect("CM schema is valid")
}

/// Unified schema with `healthy` structure labels (ids `1..=healthy`) and one
/// tumor label (`healthy + 1`). Healthy labels split into cortical and
/// subcortical groups in a 31:22 ratio.
pub fn um_schema(healthy: usize) -> Result<LabelSchema> {
    if healthy < 2 {
        return Err(Error::Config(format!(
            "unified schema needs at least 2 healthy labels, got {healthy}"
        )));
    }
    if healthy + 1 > usize::from(LabelId::MAX) {
        return Err(Error::Config(format!(
            "{healthy} healthy labels do not fit in u16"
        )));
    }
    let cortical = ((healthy * DEFAULT_CORTICAL) as f64 / DEFAULT_HEALTHY_LABELS as f64)
        .round()
        .clamp(1.0, (healthy - 1) as f64) as usize;
    let mut entries = Vec::with_capacity(healthy + 1);
    let mut cortical_set = BTreeSet::new();
    let mut subcortical_set = BTreeSet::new();
    for i in 1..=healthy {
        let id = i as LabelId;
        if i <= cortical {
            entries.push(entry(id, &format!("cortical_{i:02}")));
            cortical_set.insert(id);
        } else {
            entries.push(entry(id, &format!("subcortical_{:02}", i - cortical)));
            subcortical_set.insert(id);
        }
    }
    let tumor = (healthy + 1) as LabelId;
    entries.push(entry(tumor, "tumor"));
    let whole_brain = cortical_set.union(&subcortical_set).copied().collect();
    let groups = BTreeMap::from([
        (GroupName::Cortical, cortical_set),
        (GroupName::Subcortical, subcortical_set),
        (GroupName::WholeBrain, whole_brain),
        (GroupName::TumorAll, BTreeSet::from([tumor])),
    ]);
    let id = if healthy == DEFAULT_HEALTHY_LABELS {
        "um".to_string()
    } else {
        format!("um{healthy}")
    };
    LabelSchema::new(id, entries, groups)
}

fn entry(id: LabelId, name: &str) -> LabelEntry {
    LabelEntry {
        id,
        name: name.to_string(),
    }
}
