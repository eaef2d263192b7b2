//! Indexed container of named numeric branches.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HNF1" | u32 branch_count | index entries | data regions
//! index entry: u8 name_len | name bytes | u64 data_offset | u64 value_count
//! data region: value_count raw IEEE-754 binary64 values
//! ```
//!
//! `data_offset` is absolute. The data regions must tile the bytes after the
//! index exactly, with no gaps or overlaps, so any tampering with offsets or
//! counts is caught as [`HierError::CorruptIndex`].

use std::collections::BTreeSet;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HNF1";
pub const MAX_NAME_LEN: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierError {
    #[error("bad magic")]
    BadMagic,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("duplicate branch {0:?}")]
    DuplicateBranch(String),
    #[error("branch name {0:?} is empty or longer than 255 bytes")]
    BadName(String),
    #[error("no branch named {0:?}")]
    NoSuchBranch(String),
}

#[derive(Debug, Clone, Default)]
pub struct Branch {
    pub name: String,
    pub values: Vec<f64>,
}

impl Branch {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Branch {
            name: name.into(),
            values,
        }
    }
}

/// Bitwise equality, so NaN payloads compare equal to themselves.
impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HierFile {
    pub branches: Vec<Branch>,
}

impl HierFile {
    pub fn branch(&self, name: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.name == name)
    }
}

/// Byte size of a file holding branches with these names and value counts.
pub fn encoded_len<'a>(branches: impl IntoIterator<Item = (&'a str, usize)>) -> usize {
    let mut len = 8;
    for (name, count) in branches {
        len += 1 + name.len() + 16 + 8 * count;
    }
    len
}

pub fn write_hier_file(branches: &[Branch]) -> Result<Vec<u8>, HierError> {
    let mut seen = BTreeSet::new();
    for b in branches {
        if b.name.is_empty() || b.name.len() > MAX_NAME_LEN {
            return Err(HierError::BadName(b.name.clone()));
        }
        if !seen.insert(b.name.as_str()) {
            return Err(HierError::DuplicateBranch(b.name.clone()));
        }
    }
    let index_len: usize = 8 + branches
        .iter()
        .map(|b| 1 + b.name.len() + 16)
        .sum::<usize>();
    let total = encoded_len(branches.iter().map(|b| (b.name.as_str(), b.values.len())));
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(branches.len() as u32).to_le_bytes());
    let mut offset = index_len as u64;
    for b in branches {
        out.push(b.name.len() as u8);
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(b.values.len() as u64).to_le_bytes());
        offset += 8 * b.values.len() as u64;
    }
    for b in branches {
        for v in &b.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub name: String,
    pub data_offset: u64,
    pub value_count: u64,
}

/// Parsed and validated index table. Reading a branch through it touches
/// only that branch's data region.
#[derive(Debug, Clone)]
pub struct HierIndex {
    pub entries: Vec<IndexEntry>,
    /// Bytes occupied by magic, count and index entries.
    pub index_len: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HierError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                HierError::CorruptIndex(format!("index truncated at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, HierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl HierIndex {
    pub fn parse(bytes: &[u8]) -> Result<Self, HierError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(HierError::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut entries: Vec<IndexEntry> = Vec::new();
        let mut names = BTreeSet::new();
        for _ in 0..count {
            let name_len = cur.take(1)?[0] as usize;
            let raw = cur.take(name_len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| HierError::CorruptIndex("branch name is not UTF-8".into()))?
                .to_owned();
            if name.is_empty() {
                return Err(HierError::CorruptIndex("empty branch name".into()));
            }
            let data_offset = cur.u64()?;
            let value_count = cur.u64()?;
            if !names.insert(name.clone()) {
                return Err(HierError::DuplicateBranch(name));
            }
            entries.push(IndexEntry {
                name,
                data_offset,
                value_count,
            });
        }
        let index = HierIndex {
            entries,
            index_len: cur.pos,
        };
        index.check_regions(bytes.len())?;
        Ok(index)
    }

    fn check_regions(&self, file_len: usize) -> Result<(), HierError> {
        let mut regions = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let end = e
                .value_count
                .checked_mul(8)
                .and_then(|n| n.checked_add(e.data_offset))
                .filter(|&end| end <= file_len as u64)
                .ok_or_else(|| {
                    HierError::CorruptIndex(format!("branch {:?} extends past end of file", e.name))
                })?;
            if e.data_offset < self.index_len as u64 {
                return Err(HierError::CorruptIndex(format!(
                    "branch {:?} overlaps the index table",
                    e.name
                )));
            }
            regions.push((e.data_offset, end));
        }
        regions.sort_unstable();
        let mut expected = self.index_len as u64;
        for (start, end) in regions {
            if start != expected {
                return Err(HierError::CorruptIndex(format!(
                    "data regions do not tile the file at byte {expected}"
                )));
            }
            expected = end;
        }
        if expected != file_len as u64 {
            return Err(HierError::CorruptIndex(format!(
                "{} trailing bytes after the last data region",
                file_len as u64 - expected
            )));
        }
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Decodes one branch's values. `bytes` must be the file the index was
    /// parsed from.
    pub fn read_branch(&self, bytes: &[u8], name: &str) -> Result<Vec<f64>, HierError> {
        let e = self
            .entry(name)
            .ok_or_else(|| HierError::NoSuchBranch(name.to_owned()))?;
        let start = e.data_offset as usize;
        let region = &bytes[start..start + 8 * e.value_count as usize];
        Ok(region
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn read_hier_file(bytes: &[u8]) -> Result<HierFile, HierError> {
    let index = HierIndex::parse(bytes)?;
    let branches = index
        .entries
        .iter()
        .map(|e| {
            Ok(Branch {
                name: e.name.clone(),
                values: index.read_branch(bytes, &e.name)?,
            })
        })
        .collect::<Result<_, HierError>>()?;
    Ok(HierFile { branches })
}
