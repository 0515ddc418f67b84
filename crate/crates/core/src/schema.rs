//! Landmark definitions and the facial landmark semantic group (FLSG) registry.
//!
//! Every dataset definition splits its landmarks into the same ordered list of
//! semantic groups. The decoder produces one token per group; a dataset's heads
//! regress that group's landmarks from it. Schemas are loaded from TOML
//! documents so a new definition needs no rebuild:
//!
//! ```toml
//! group_count = 12            # optional, defaults to 12
//!
//! [[schema]]
//! name = "pare"
//! landmark_count = 9
//! normalization = "bbox"      # or { pair = [i, j] }
//! groups = [[], [], [], [], [], [0, 1], [2, 3], [], [], [4], [5, 6, 7], [8]]
//! flip_permutation = [3, 2, 1, 0, 4, 7, 6, 5, 8]   # optional
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MdmdError, Result};

pub const DEFAULT_GROUP_COUNT: usize = 12;

/// Names of the twelve default groups, in decoder token order.
pub const DEFAULT_GROUP_NAMES: [&str; 12] = [
    "upper left contour",
    "lower left contour",
    "jaw",
    "lower right contour",
    "upper right contour",
    "left eye",
    "right eye",
    "left brow",
    "right brow",
    "nose",
    "top mouth",
    "bottom mouth",
];

/// Bundled definitions, in the order `SchemaSet::bundled` assigns dataset ids.
pub const BUNDLED: [(&str, &str); 8] = [
    ("wflw", include_str!("../schemas/wflw.toml")),
    ("lapa", include_str!("../schemas/lapa.toml")),
    ("cofw", include_str!("../schemas/cofw.toml")),
    ("300w", include_str!("../schemas/300w.toml")),
    ("animalweb", include_str!("../schemas/animalweb.toml")),
    ("artface", include_str!("../schemas/artface.toml")),
    ("cariface", include_str!("../schemas/cariface.toml")),
    ("pare", include_str!("../schemas/pare.toml")),
];

/// Ordered groups of landmark indices. Together the groups partition `0..N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlsgMap {
    groups: Vec<Vec<usize>>,
}

impl FlsgMap {
    pub fn new(groups: Vec<Vec<usize>>) -> Self {
        FlsgMap { groups }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.groups[i]
    }

    pub fn non_empty_count(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_empty()).count()
    }
}

/// How a face's NME is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Distance between two landmarks (inter-ocular or inter-pupil).
    Pair([usize; 2]),
    /// Square root of the ground-truth bounding-box area.
    Bbox,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::Pair([i, j]) => write!(f, "pair({i},{j})"),
            Normalization::Bbox => write!(f, "bbox"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub landmark_count: usize,
    #[serde(rename = "groups")]
    pub flsg_map: FlsgMap,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_permutation: Option<Vec<usize>>,
}

impl DatasetSchema {
    pub fn group_sizes(&self) -> Vec<usize> {
        group_sizes(self)
    }

    pub fn flatten_ids(&self) -> Vec<usize> {
        flatten_ids(&self.flsg_map)
    }

    /// `(group, offset)` of every canonical landmark index.
    pub fn landmark_slots(&self) -> Vec<(usize, usize)> {
        let mut slots = vec![(usize::MAX, usize::MAX); self.landmark_count];
        for (g, group) in self.flsg_map.groups().iter().enumerate() {
            for (o, &k) in group.iter().enumerate() {
                slots[k] = (g, o);
            }
        }
        slots
    }

    /// Per-landmark weights of the two-level group mean: `1 / (|non-empty| * N_group)`.
    pub fn landmark_weights(&self) -> Vec<f64> {
        let non_empty = self.flsg_map.non_empty_count() as f64;
        let mut w = vec![0.0; self.landmark_count];
        for group in self.flsg_map.groups() {
            for &k in group {
                w[k] = 1.0 / (non_empty * group.len() as f64);
            }
        }
        w
    }
}

/// Concatenation of all group index lists in group order.
pub fn flatten_ids(map: &FlsgMap) -> Vec<usize> {
    map.groups().iter().flatten().copied().collect()
}

pub fn group_sizes(schema: &DatasetSchema) -> Vec<usize> {
    schema.flsg_map.groups().iter().map(Vec::len).collect()
}

/// Checks that the groups partition `0..N`, the normalization pair is usable
/// and the flip permutation (if any) is an involution.
pub fn validate_schema(schema: &DatasetSchema) -> Result<()> {
    let name = schema.name.as_str();
    let n = schema.landmark_count;
    if n == 0 {
        return Err(MdmdError::schema(name, "landmark_count must be positive"));
    }
    let mut seen = vec![false; n];
    for (g, group) in schema.flsg_map.groups().iter().enumerate() {
        for &k in group {
            if k >= n {
                return Err(MdmdError::schema(
                    name,
                    format!("out-of-range index {k} in group {g} (landmark_count {n})"),
                ));
            }
            if seen[k] {
                return Err(MdmdError::schema(
                    name,
                    format!("duplicate index {k} (group {g})"),
                ));
            }
            seen[k] = true;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(MdmdError::schema(name, format!("missing index {k}")));
    }
    if let Normalization::Pair([i, j]) = schema.normalization {
        if i == j || i >= n || j >= n {
            return Err(MdmdError::schema(
                name,
                format!("bad normalization pair ({i}, {j})"),
            ));
        }
    }
    if let Some(perm) = &schema.flip_permutation {
        if perm.len() != n {
            return Err(MdmdError::schema(
                name,
                format!("flip_permutation has {} entries, expected {n}", perm.len()),
            ));
        }
        for (i, &p) in perm.iter().enumerate() {
            if p >= n {
                return Err(MdmdError::schema(
                    name,
                    format!("flip_permutation index {p} out of range"),
                ));
            }
            if perm[p] != i {
                return Err(MdmdError::schema(
                    name,
                    format!("flip_permutation is not an involution at index {i}"),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDocument {
    group_count: Option<usize>,
    group_names: Option<Vec<String>>,
    #[serde(default)]
    schema: Vec<DatasetSchema>,
}

/// An ordered, validated collection of schemas sharing one group count.
/// Dataset ids are positions in the set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSet {
    group_count: usize,
    group_names: Vec<String>,
    schemas: Vec<DatasetSchema>,
}

impl SchemaSet {
    pub fn new(
        schemas: Vec<DatasetSchema>,
        group_count: usize,
        group_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if schemas.is_empty() {
            return Err(MdmdError::Empty("schema set has no schemas".into()));
        }
        if group_count == 0 {
            return Err(MdmdError::Config("group_count must be positive".into()));
        }
        let group_names = match group_names {
            Some(names) if names.len() != group_count => {
                return Err(MdmdError::Config(format!(
                    "{} group names given for {group_count} groups",
                    names.len()
                )))
            }
            Some(names) => names,
            None if group_count == DEFAULT_GROUP_COUNT => {
                DEFAULT_GROUP_NAMES.iter().map(|s| s.to_string()).collect()
            }
            None => (0..group_count).map(|i| format!("group {i}")).collect(),
        };
        let mut names = BTreeSet::new();
        for s in &schemas {
            if s.flsg_map.group_count() != group_count {
                return Err(MdmdError::schema(
                    &s.name,
                    format!(
                        "has {} groups, schema set uses {group_count}",
                        s.flsg_map.group_count()
                    ),
                ));
            }
            validate_schema(s)?;
            if !names.insert(s.name.clone()) {
                return Err(MdmdError::schema(&s.name, "duplicate schema name"));
            }
        }
        Ok(SchemaSet {
            group_count,
            group_names,
            schemas,
        })
    }

    /// All eight bundled definitions.
    pub fn bundled() -> Self {
        let docs: Vec<&str> = BUNDLED.iter().map(|(_, d)| *d).collect();
        load_schema_documents(&docs).expect("bundled schemas are valid")
    }

    /// The bundled definitions with the given names, in the given order.
    pub fn bundled_subset(names: &[&str]) -> Result<Self> {
        let docs = names
            .iter()
            .map(|n| bundled_document(n).ok_or_else(|| MdmdError::UnknownSchema(n.to_string())))
            .collect::<Result<Vec<_>>>()?;
        load_schema_documents(&docs)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn schemas(&self) -> &[DatasetSchema] {
        &self.schemas
    }

    pub fn get(&self, dataset_id: usize) -> Result<&DatasetSchema> {
        self.schemas.get(dataset_id).ok_or(MdmdError::UnknownDataset {
            id: dataset_id,
            count: self.schemas.len(),
        })
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.schemas
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| MdmdError::UnknownSchema(name.to_string()))
    }

    /// Hex SHA-256 over the canonical JSON form of the set.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema set serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the semantic groups with one group per landmark, so the decoder
    /// gets one query token per landmark. `G` becomes the largest landmark count.
    pub fn per_landmark_tokens(&self) -> Result<Self> {
        let g = self.schemas.iter().map(|s| s.landmark_count).max().unwrap_or(0);
        let schemas = self
            .schemas
            .iter()
            .map(|s| {
                let mut groups: Vec<Vec<usize>> = (0..s.landmark_count).map(|k| vec![k]).collect();
                groups.resize(g, Vec::new());
                DatasetSchema {
                    flsg_map: FlsgMap::new(groups),
                    ..s.clone()
                }
            })
            .collect();
        SchemaSet::new(schemas, g, None)
    }

    /// Serializes back to the TOML document format.
    pub fn to_document(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            group_count: usize,
            group_names: &'a [String],
            schema: &'a [DatasetSchema],
        }
        toml::to_string(&Doc {
            group_count: self.group_count,
            group_names: &self.group_names,
            schema: &self.schemas,
        })
        .expect("schema set serializes")
    }
}

pub fn bundled_document(name: &str) -> Option<&'static str> {
    let lower = name.to_ascii_lowercase();
    BUNDLED.iter().find(|(n, _)| *n == lower).map(|(_, d)| *d)
}

/// Parses and validates one schema document.
pub fn load_schemas(document: &str) -> Result<SchemaSet> {
    load_schema_documents(&[document])
}

/// Parses several documents into one set; their group counts must agree.
pub fn load_schema_documents(documents: &[&str]) -> Result<SchemaSet> {
    let mut group_count = None;
    let mut group_names = None;
    let mut schemas = Vec::new();
    for text in documents {
        let doc: SchemaDocument =
            toml::from_str(text).map_err(|e| MdmdError::Parse(e.to_string().trim().to_string()))?;
        if let Some(g) = doc.group_count {
            if group_count.is_some_and(|prev| prev != g) {
                return Err(MdmdError::Config(format!(
                    "documents disagree on group_count ({} vs {g})",
                    group_count.unwrap()
                )));
            }
            group_count = Some(g);
        }
        if doc.group_names.is_some() {
            group_names = doc.group_names;
        }
        schemas.extend(doc.schema);
    }
    if schemas.is_empty() {
        return Err(MdmdError::Empty("no [[schema]] entries".into()));
    }
    let g = group_count.unwrap_or(DEFAULT_GROUP_COUNT);
    SchemaSet::new(schemas, g, group_names)
}

/// Human-readable listing: groups, sizes and the flattened id order.
pub fn describe_schema(set: &SchemaSet, name: &str) -> Result<String> {
    use std::fmt::Write;
    let schema = set.get(set.id_of(name)?)?;
    let mut out = String::new();
    let sizes = schema.group_sizes();
    writeln!(out, "name: {}", schema.name).unwrap();
    writeln!(out, "landmark_count: {}", schema.landmark_count).unwrap();
    writeln!(out, "normalization: {}", schema.normalization).unwrap();
    writeln!(out, "groups: {}", set.group_count()).unwrap();
    for (i, group) in schema.flsg_map.groups().iter().enumerate() {
        let ids = if group.is_empty() {
            "-".to_string()
        } else {
            group.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")
        };
        writeln!(out, "  [{i:2}] {:<20} size {:2}  ({ids})", set.group_names()[i], sizes[i]).unwrap();
    }
    writeln!(out, "group_sizes: {:?}", sizes).unwrap();
    writeln!(out, "size_total: {}", sizes.iter().sum::<usize>()).unwrap();
    writeln!(out, "flatten_ids: {:?}", schema.flatten_ids()).unwrap();
    writeln!(out, "flip_permutation: {}", if schema.flip_permutation.is_some() { "yes" } else { "no" }).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, groups: Vec<Vec<usize>>) -> DatasetSchema {
        DatasetSchema {
            name: "toy".into(),
            landmark_count: n,
            flsg_map: FlsgMap::new(groups),
            normalization: Normalization::Bbox,
            flip_permutation: None,
        }
    }

    fn twelve(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        groups.resize(12, Vec::new());
        groups
    }

    #[test]
    fn cofw_jaw_and_left_eye() {
        let set = SchemaSet::bundled_subset(&["cofw"]).unwrap();
        let cofw = set.get(0).unwrap();
        assert_eq!(cofw.landmark_count, 29);
        assert_eq!(cofw.flsg_map.group(2), &[28]);
        assert_eq!(cofw.flsg_map.group(5), &[8, 10, 12, 14, 16]);
        assert_eq!(set.group_names()[2], "jaw");
        assert_eq!(&cofw.flatten_ids()[..3], &[28, 8, 10]);
    }

    #[test]
    fn pare_group_sizes() {
        let set = SchemaSet::bundled_subset(&["pare"]).unwrap();
        let pare = set.get(0).unwrap();
        assert_eq!(pare.landmark_count, 9);
        assert_eq!(pare.group_sizes(), vec![0, 0, 0, 0, 0, 2, 2, 0, 0, 1, 3, 1]);
        let non_empty: Vec<usize> = pare.group_sizes().into_iter().filter(|&s| s > 0).collect();
        assert_eq!(non_empty, vec![2, 2, 1, 3, 1]);
    }

    #[test]
    fn w300_all_groups_populated() {
        let set = SchemaSet::bundled_subset(&["300w"]).unwrap();
        let sizes = set.get(0).unwrap().group_sizes();
        assert!(sizes.iter().all(|&s| s > 0));
        assert_eq!(sizes.iter().sum::<usize>(), 68);
        assert_eq!(set.get(0).unwrap().flsg_map.group(3), &[10, 11, 12]);
    }

    #[test]
    fn single_landmark_toy_is_valid() {
        let s = toy(1, twelve(vec![vec![0]]));
        let set = SchemaSet::new(vec![s], 12, None).unwrap();
        let sizes = set.get(0).unwrap().group_sizes();
        assert_eq!(sizes[0], 1);
        assert_eq!(sizes.iter().sum::<usize>(), 1);
        assert_eq!(sizes.iter().filter(|&&s| s == 0).count(), 11);
    }

    #[test]
    fn duplicate_index_is_reported() {
        let err = validate_schema(&toy(1, vec![vec![0], vec![0]])).unwrap_err();
        assert!(err.to_string().contains("duplicate index 0"), "{err}");
    }

    #[test]
    fn missing_index_is_reported() {
        let err = validate_schema(&toy(2, vec![vec![0]])).unwrap_err();
        assert!(err.to_string().contains("missing index 1"), "{err}");
    }

    #[test]
    fn out_of_range_and_bad_pair() {
        let err = validate_schema(&toy(2, vec![vec![0, 2], vec![1]])).unwrap_err();
        assert!(err.to_string().contains("out-of-range index 2"), "{err}");
        let mut s = toy(2, vec![vec![0, 1]]);
        s.normalization = Normalization::Pair([1, 1]);
        assert!(validate_schema(&s).unwrap_err().to_string().contains("bad normalization pair"));
    }

    #[test]
    fn non_involution_flip_rejected() {
        let mut s = toy(3, vec![vec![0, 1, 2]]);
        s.flip_permutation = Some(vec![1, 2, 0]);
        assert!(validate_schema(&s).is_err());
        s.flip_permutation = Some(vec![2, 1, 0]);
        validate_schema(&s).unwrap();
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_ids(&FlsgMap::new(vec![vec![2], vec![0, 1]])), vec![2, 0, 1]);
        assert_eq!(flatten_ids(&FlsgMap::new(vec![vec![], vec![5]])), vec![5]);
    }

    #[test]
    fn group_count_mismatch_rejected() {
        let s = toy(1, vec![vec![0], vec![]]);
        assert!(SchemaSet::new(vec![s], 12, None).is_err());
    }

    #[test]
    fn document_round_trip() {
        let set = SchemaSet::bundled();
        let again = load_schemas(&set.to_document()).unwrap();
        assert_eq!(set, again);
        assert_eq!(set.fingerprint(), again.fingerprint());
    }

    #[test]
    fn parse_error_and_empty_document() {
        assert!(matches!(load_schemas("[[schema]]\nname = 3"), Err(MdmdError::Parse(_))));
        assert!(matches!(load_schemas("group_count = 12"), Err(MdmdError::Empty(_))));
    }

    #[test]
    fn per_landmark_tokens_uses_one_group_per_landmark() {
        let set = SchemaSet::bundled_subset(&["pare", "cofw"]).unwrap();
        let per = set.per_landmark_tokens().unwrap();
        assert_eq!(per.group_count(), 29);
        assert_eq!(per.get(0).unwrap().flsg_map.non_empty_count(), 9);
        assert_eq!(per.get(1).unwrap().flatten_ids(), (0..29).collect::<Vec<_>>());
    }

    #[test]
    fn alternative_group_counts_load() {
        let doc = r#"
group_count = 5
[[schema]]
name = "five"
landmark_count = 3
normalization = { pair = [0, 2] }
groups = [[0], [], [1], [], [2]]
"#;
        let set = load_schemas(doc).unwrap();
        assert_eq!(set.group_count(), 5);
        assert_eq!(set.group_names()[4], "group 4");
    }
}
