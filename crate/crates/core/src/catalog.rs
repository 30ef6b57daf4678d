//! Item universe, deterministic semantic-ID codebook, and the validity trie
//! used for constrained decoding.
//!
//! Semantic IDs are assigned from the category hierarchy: token 1 encodes the
//! root category, token 2 the sub-category, and the remaining tokens encode
//! the residual index in base `C`. Hierarchically similar items therefore
//! share SID prefixes, which is the property the training machinery relies
//! on, while keeping the mapping deterministic and testable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("duplicate item id {0}")]
    DuplicateItemId(u32),
    #[error("feature vectors must share one dimension (item {item_id}: got {got}, expected {expected})")]
    FeatureDimMismatch { item_id: u32, got: usize, expected: usize },
    #[error("level count must be at least 2, got {0}")]
    LevelCountTooSmall(usize),
    #[error("catalog cannot be encoded with T={t}, C={c}: {reason}")]
    CapacityExceeded { t: usize, c: u16, reason: String },
    #[error("items {0} and {1} share the same (root, sub, residual) triple")]
    DuplicateTriple(u32, u32),
    #[error("semantic id {0:?} is not in the codebook trie")]
    InvalidSid(Vec<u16>),
    #[error("unknown item id {0}")]
    UnknownItem(u32),
    #[error("malformed {what} file: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CatalogError {
    fn from(e: std::io::Error) -> Self {
        CatalogError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: u32,
    pub root_category: u16,
    pub sub_category: u16,
    pub residual_index: u32,
    pub feature_vector: Vec<f64>,
}

/// Fixed-length token sequence identifying an item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId {
    tokens: Vec<u16>,
}

impl SemanticId {
    pub fn new(tokens: Vec<u16>) -> Self {
        SemanticId { tokens }
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Immutable item collection with id lookup.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    by_id: HashMap<u32, usize>,
    feature_dim: usize,
}

impl Catalog {
    pub fn new(items: Vec<Item>) -> Result<Self, CatalogError> {
        let feature_dim = items.first().map(|i| i.feature_vector.len()).unwrap_or(0);
        let mut by_id = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if item.feature_vector.len() != feature_dim {
                return Err(CatalogError::FeatureDimMismatch {
                    item_id: item.item_id,
                    got: item.feature_vector.len(),
                    expected: feature_dim,
                });
            }
            if by_id.insert(item.item_id, idx).is_some() {
                return Err(CatalogError::DuplicateItemId(item.item_id));
            }
        }
        Ok(Catalog { items, by_id, feature_dim })
    }

    pub fn get(&self, item_id: u32) -> Result<&Item, CatalogError> {
        self.by_id
            .get(&item_id)
            .map(|&i| &self.items[i])
            .ok_or(CatalogError::UnknownItem(item_id))
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_roots(&self) -> u16 {
        self.items.iter().map(|i| i.root_category + 1).max().unwrap_or(0)
    }

    /// Writes the line-delimited catalog schema:
    /// `item_id,c1,c2,residual,f_1 .. f_F`.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CatalogError> {
        writeln!(w, "semrec-catalog v1 F={}", self.feature_dim)?;
        for it in &self.items {
            let feats: Vec<String> = it.feature_vector.iter().map(|f| f.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                it.item_id,
                it.root_category,
                it.sub_category,
                it.residual_index,
                feats.join(" ")
            )?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, CatalogError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(CatalogError::Parse { what: "catalog", detail: "empty file".into() })??;
        if !header.starts_with("semrec-catalog v1") {
            return Err(CatalogError::Parse { what: "catalog", detail: format!("bad header: {header}") });
        }
        let mut items = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(5, ',').collect();
            if parts.len() != 5 {
                return Err(CatalogError::Parse { what: "catalog", detail: format!("bad line: {line}") });
            }
            let parse_err = |d: String| CatalogError::Parse { what: "catalog", detail: d };
            let feature_vector = parts[4]
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<f64>, _>>()?;
            items.push(Item {
                item_id: parts[0].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                root_category: parts[1].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                sub_category: parts[2].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                residual_index: parts[3].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                feature_vector,
            });
        }
        Catalog::new(items)
    }
}

/// Bidirectional SID <-> item mapping with the validity trie.
///
/// Immutable after construction; safe for concurrent read access.
#[derive(Debug, Clone)]
pub struct Codebook {
    levels: usize,
    codebook_size: u16,
    forward: BTreeMap<u32, SemanticId>,
    backward: HashMap<Vec<u16>, u32>,
    children: HashMap<Vec<u16>, BTreeSet<u16>>,
}

/// Assigns a deterministic SID to every catalog item.
///
/// Token 1 encodes the root category, token 2 the sub-category, and the
/// remaining `T-2` tokens encode the residual index in base `C`
/// (most-significant first).
pub fn assign_sids(catalog: &Catalog, levels: usize, codebook_size: u16) -> Result<Codebook, CatalogError> {
    if levels < 2 {
        return Err(CatalogError::LevelCountTooSmall(levels));
    }
    let c = codebook_size as u64;
    let residual_capacity: u64 = c.checked_pow((levels - 2) as u32).unwrap_or(u64::MAX);
    let mut forward = BTreeMap::new();
    let mut backward: HashMap<Vec<u16>, u32> = HashMap::new();
    let mut children: HashMap<Vec<u16>, BTreeSet<u16>> = HashMap::new();
    for item in catalog.items() {
        if item.root_category as u64 >= c || item.sub_category as u64 >= c {
            return Err(CatalogError::CapacityExceeded {
                t: levels,
                c: codebook_size,
                reason: format!(
                    "item {}: category ({}, {}) does not fit in codebook size {}",
                    item.item_id, item.root_category, item.sub_category, codebook_size
                ),
            });
        }
        if item.residual_index as u64 >= residual_capacity {
            return Err(CatalogError::CapacityExceeded {
                t: levels,
                c: codebook_size,
                reason: format!(
                    "item {}: residual {} exceeds capacity {} of {} trailing tokens",
                    item.item_id,
                    item.residual_index,
                    residual_capacity,
                    levels - 2
                ),
            });
        }
        let mut tokens = Vec::with_capacity(levels);
        tokens.push(item.root_category);
        tokens.push(item.sub_category);
        let mut rem = item.residual_index as u64;
        let mut tail = vec![0u16; levels - 2];
        for slot in tail.iter_mut().rev() {
            *slot = (rem % c) as u16;
            rem /= c;
        }
        tokens.extend(tail);
        if let Some(&other) = backward.get(&tokens) {
            return Err(CatalogError::DuplicateTriple(other, item.item_id));
        }
        for t in 0..levels {
            children.entry(tokens[..t].to_vec()).or_default().insert(tokens[t]);
        }
        backward.insert(tokens.clone(), item.item_id);
        forward.insert(item.item_id, SemanticId::new(tokens));
    }
    Ok(Codebook { levels, codebook_size, forward, backward, children })
}

impl Codebook {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codebook_size(&self) -> u16 {
        self.codebook_size
    }

    /// Maps a valid SID to its item id.
    pub fn map_sid(&self, sid: &SemanticId) -> Result<u32, CatalogError> {
        self.backward
            .get(sid.tokens())
            .copied()
            .ok_or_else(|| CatalogError::InvalidSid(sid.tokens().to_vec()))
    }

    pub fn sid_of(&self, item_id: u32) -> Result<&SemanticId, CatalogError> {
        self.forward.get(&item_id).ok_or(CatalogError::UnknownItem(item_id))
    }

    /// Tokens `t` such that `prefix || t` is a prefix of some valid SID.
    /// Empty for dead prefixes.
    pub fn valid_next_tokens(&self, prefix: &[u16]) -> &BTreeSet<u16> {
        static EMPTY: std::sync::OnceLock<BTreeSet<u16>> = std::sync::OnceLock::new();
        self.children
            .get(prefix)
            .unwrap_or_else(|| EMPTY.get_or_init(BTreeSet::new))
    }

    /// Iterates `(item_id, sid)` in ascending item id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &SemanticId)> {
        self.forward.iter().map(|(&id, sid)| (id, sid))
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Versioned text dump: header with T and C, then `item_id -> token list`.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CatalogError> {
        writeln!(w, "semrec-codebook v1")?;
        writeln!(w, "T={} C={}", self.levels, self.codebook_size)?;
        for (id, sid) in self.iter() {
            let toks: Vec<String> = sid.tokens().iter().map(|t| t.to_string()).collect();
            writeln!(w, "{} -> {}", id, toks.join(" "))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, CatalogError> {
        let parse_err = |d: String| CatalogError::Parse { what: "codebook", detail: d };
        let mut lines = r.lines();
        let version = lines.next().ok_or_else(|| parse_err("empty file".into()))??;
        if version.trim() != "semrec-codebook v1" {
            return Err(parse_err(format!("bad version line: {version}")));
        }
        let shape = lines.next().ok_or_else(|| parse_err("missing shape line".into()))??;
        let mut levels = None;
        let mut codebook_size = None;
        for tok in shape.split_whitespace() {
            if let Some(v) = tok.strip_prefix("T=") {
                levels = Some(v.parse::<usize>().map_err(|e| parse_err(e.to_string()))?);
            } else if let Some(v) = tok.strip_prefix("C=") {
                codebook_size = Some(v.parse::<u16>().map_err(|e| parse_err(e.to_string()))?);
            }
        }
        let levels = levels.ok_or_else(|| parse_err("missing T".into()))?;
        let codebook_size = codebook_size.ok_or_else(|| parse_err("missing C".into()))?;
        let mut forward = BTreeMap::new();
        let mut backward = HashMap::new();
        let mut children: HashMap<Vec<u16>, BTreeSet<u16>> = HashMap::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id_part, tok_part) = line
                .split_once("->")
                .ok_or_else(|| parse_err(format!("bad mapping line: {line}")))?;
            let id: u32 = id_part.trim().parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
            let tokens = tok_part
                .split_whitespace()
                .map(|t| t.parse::<u16>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<u16>, _>>()?;
            if tokens.len() != levels {
                return Err(parse_err(format!("item {id}: expected {levels} tokens")));
            }
            for t in 0..levels {
                children.entry(tokens[..t].to_vec()).or_default().insert(tokens[t]);
            }
            backward.insert(tokens.clone(), id);
            forward.insert(id, SemanticId::new(tokens));
        }
        Ok(Codebook { levels, codebook_size, forward, backward, children })
    }
}
