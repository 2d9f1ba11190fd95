//! Page store for replicated files and the [`FileState`] value used by
//! version stacks.
//!
//! A `FileState` is immutable. Writing a page yields a new state that records
//! only the changed page on top of the state it was derived from, so taking a
//! snapshot is an `Arc` clone no matter how large the file is.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::SiteId;

pub const DEFAULT_PAGE_SIZE: usize = 1024;

/// Deltas deeper than this are folded into a fresh base layer.
const MAX_DELTA_DEPTH: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileName(Arc<str>);

impl FileName {
    pub fn new(name: &str) -> Self {
        FileName(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FileName {
    fn from(s: &str) -> Self {
        FileName::new(s)
    }
}

/// Page contents. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Page(Arc<[u8]>);

impl Page {
    pub fn new(bytes: &[u8]) -> Self {
        Page(Arc::from(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl From<&str> for Page {
    fn from(s: &str) -> Self {
        Page::new(s.as_bytes())
    }
}

impl fmt::Debug for Page {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.text())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PageError {
    #[error("no such page {index} (file has {len} pages)")]
    NoSuchPage { index: usize, len: usize },
    #[error("write at page {index} would leave a gap (file has {len} pages)")]
    Gap { index: usize, len: usize },
    #[error("page content of {size} bytes exceeds page size {page_size}")]
    Overflow { size: usize, page_size: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("file {file} has no replica at {site}")]
    UnknownReplica { file: FileName, site: SiteId },
}

#[derive(Debug)]
struct Layer {
    parent: Option<Arc<Layer>>,
    len: usize,
    pages: BTreeMap<usize, Page>,
    depth: u32,
}

impl Layer {
    fn lookup(&self, idx: usize) -> &Page {
        let mut layer = self;
        loop {
            if let Some(p) = layer.pages.get(&idx) {
                return p;
            }
            layer = layer
                .parent
                .as_deref()
                .expect("page below file length is present in some layer");
        }
    }
}

/// A snapshot of a file's pages.
#[derive(Clone)]
pub struct FileState {
    base_version: u64,
    page_size: usize,
    top: Arc<Layer>,
}

impl FileState {
    pub fn new(base_version: u64, page_size: usize, pages: Vec<Page>) -> Self {
        let len = pages.len();
        FileState {
            base_version,
            page_size,
            top: Arc::new(Layer {
                parent: None,
                len,
                pages: pages.into_iter().enumerate().collect(),
                depth: 0,
            }),
        }
    }

    pub fn empty(page_size: usize) -> Self {
        FileState::new(0, page_size, Vec::new())
    }

    /// Independent copy of `self`. Later writes to either value cannot
    /// affect the other, since states are never mutated in place.
    pub fn snapshot(&self) -> FileState {
        self.clone()
    }

    pub fn len(&self) -> usize {
        self.top.len
    }

    pub fn is_empty(&self) -> bool {
        self.top.len == 0
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Durable version this state was derived from.
    pub fn base_version(&self) -> u64 {
        self.base_version
    }

    pub fn read_page(&self, idx: usize) -> Result<Page, PageError> {
        if idx >= self.len() {
            return Err(PageError::NoSuchPage {
                index: idx,
                len: self.len(),
            });
        }
        Ok(self.top.lookup(idx).clone())
    }

    /// Returns a state that differs from `self` only at `idx`. Writing at
    /// `idx == len` appends a page.
    pub fn write_page(&self, idx: usize, content: Page) -> Result<FileState, PageError> {
        if idx > self.len() {
            return Err(PageError::Gap {
                index: idx,
                len: self.len(),
            });
        }
        if content.bytes().len() > self.page_size {
            return Err(PageError::Overflow {
                size: content.bytes().len(),
                page_size: self.page_size,
            });
        }
        let len = self.len().max(idx + 1);
        let top = if self.top.depth >= MAX_DELTA_DEPTH {
            let mut pages: BTreeMap<usize, Page> =
                (0..self.len()).map(|i| (i, self.top.lookup(i).clone())).collect();
            pages.insert(idx, content);
            Layer {
                parent: None,
                len,
                pages,
                depth: 0,
            }
        } else {
            Layer {
                parent: Some(self.top.clone()),
                len,
                pages: BTreeMap::from([(idx, content)]),
                depth: self.top.depth + 1,
            }
        };
        Ok(FileState {
            base_version: self.base_version,
            page_size: self.page_size,
            top: Arc::new(top),
        })
    }

    pub fn pages(&self) -> impl Iterator<Item = Page> + '_ {
        (0..self.len()).map(|i| self.top.lookup(i).clone())
    }

    pub fn page_texts(&self) -> Vec<String> {
        self.pages().map(|p| p.text()).collect()
    }

    /// Number of page slots at which `self` and `other` differ, counting
    /// pages present in only one of them.
    pub fn pages_differing(&self, other: &FileState) -> usize {
        let n = self.len().max(other.len());
        (0..n)
            .filter(|&i| {
                let a = (i < self.len()).then(|| self.top.lookup(i));
                let b = (i < other.len()).then(|| other.top.lookup(i));
                a != b
            })
            .count()
    }

    /// Content digest, stable across runs and platforms.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for p in self.pages() {
            h.update((p.bytes().len() as u64).to_le_bytes());
            h.update(p.bytes());
        }
        h.finalize().into()
    }

    /// Short content id used in traces.
    pub fn version_id(&self) -> String {
        let d = self.digest();
        format!("{:02x}{:02x}{:02x}{:02x}", d[0], d[1], d[2], d[3])
    }
}

impl PartialEq for FileState {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (Arc::ptr_eq(&self.top, &other.top) || self.pages().eq(other.pages()))
    }
}

impl Eq for FileState {}

impl fmt::Debug for FileState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.page_texts()).finish()
    }
}

#[derive(Clone, Debug)]
struct DurableCopy {
    state: FileState,
    version: u64,
}

/// Committed file states, one per physical copy, plus per-site page-write
/// counters.
#[derive(Clone, Debug, Default)]
pub struct DurableStore {
    copies: BTreeMap<(FileName, SiteId), DurableCopy>,
    writes: BTreeMap<SiteId, u64>,
}

impl DurableStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs a replica. Used while loading a scenario.
    pub fn install(&mut self, file: FileName, site: SiteId, pages: Vec<Page>, page_size: usize) {
        self.copies.insert(
            (file, site),
            DurableCopy {
                state: FileState::new(1, page_size, pages),
                version: 1,
            },
        );
    }

    pub fn has_copy(&self, file: &FileName, site: SiteId) -> bool {
        self.copies.contains_key(&(file.clone(), site))
    }

    pub fn state(&self, file: &FileName, site: SiteId) -> Option<&FileState> {
        self.copies.get(&(file.clone(), site)).map(|c| &c.state)
    }

    pub fn version(&self, file: &FileName, site: SiteId) -> Option<u64> {
        self.copies.get(&(file.clone(), site)).map(|c| c.version)
    }

    /// Makes `state` the committed contents of `file` at `site`. Returns the
    /// number of page writes this cost.
    pub fn apply_committed(
        &mut self,
        file: &FileName,
        site: SiteId,
        state: &FileState,
    ) -> Result<u64, StoreError> {
        let copy = self
            .copies
            .get_mut(&(file.clone(), site))
            .ok_or_else(|| StoreError::UnknownReplica {
                file: file.clone(),
                site,
            })?;
        let written = copy.state.pages_differing(state) as u64;
        if written > 0 {
            copy.version += 1;
            copy.state = FileState::new(copy.version, state.page_size(), state.pages().collect());
        }
        *self.writes.entry(site).or_default() += written;
        Ok(written)
    }

    pub fn writes_at(&self, site: SiteId) -> u64 {
        self.writes.get(&site).copied().unwrap_or(0)
    }

    pub fn total_writes(&self) -> u64 {
        self.writes.values().sum()
    }

    pub fn copies(&self) -> impl Iterator<Item = (&FileName, SiteId, &FileState)> {
        self.copies.iter().map(|((f, s), c)| (f, *s, &c.state))
    }

    pub fn sites_of(&self, file: &FileName) -> BTreeSet<SiteId> {
        self.copies
            .keys()
            .filter(|(f, _)| f == file)
            .map(|(_, s)| *s)
            .collect()
    }

    /// Digest over every copy, for the no-early-write check.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for ((f, s), c) in &self.copies {
            h.update(f.as_str().as_bytes());
            h.update(s.0.to_le_bytes());
            h.update(c.state.digest());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pages(texts: &[&str]) -> Vec<Page> {
        texts.iter().map(|t| Page::from(*t)).collect()
    }

    #[test]
    fn snapshot_of_empty_is_independent() {
        let a = FileState::empty(8);
        let b = a.snapshot();
        let a2 = a.write_page(0, "x".into()).unwrap();
        assert!(b.is_empty());
        assert_eq!(a2.len(), 1);
    }

    #[test]
    fn snapshot_isolated_from_later_writes() {
        let f = FileState::new(1, 8, pages(&["a", "b"]));
        let snap = f.snapshot();
        let f2 = f.write_page(1, "B".into()).unwrap();
        assert_eq!(snap.read_page(1).unwrap(), Page::from("b"));
        assert_eq!(f2.read_page(1).unwrap(), Page::from("B"));
    }

    #[test]
    fn read_write_basics() {
        let f = FileState::new(1, 8, pages(&["p0", "p1"]));
        assert_eq!(f.read_page(0).unwrap(), Page::from("p0"));
        let f = f.write_page(0, "A".into()).unwrap();
        assert_eq!(f.read_page(0).unwrap(), Page::from("A"));
        let f = f.write_page(0, "B".into()).unwrap();
        assert_eq!(f.read_page(0).unwrap(), Page::from("B"));
        assert_eq!(
            f.read_page(99),
            Err(PageError::NoSuchPage { index: 99, len: 2 })
        );
        assert!(matches!(f.write_page(5, "z".into()), Err(PageError::Gap { .. })));
        let f = f.write_page(2, "C".into()).unwrap();
        assert_eq!(f.len(), 3);
        assert!(matches!(
            f.write_page(0, "123456789".into()),
            Err(PageError::Overflow { .. })
        ));
    }

    #[test]
    fn durable_counts_differing_pages() {
        let name = FileName::new("F");
        let mut store = DurableStore::new();
        store.install(name.clone(), SiteId(1), pages(&["a", "b"]), 8);
        let s = store.state(&name, SiteId(1)).unwrap().clone();
        assert_eq!(store.apply_committed(&name, SiteId(1), &s).unwrap(), 0);
        let s2 = s.write_page(1, "c".into()).unwrap();
        assert_eq!(store.apply_committed(&name, SiteId(1), &s2).unwrap(), 1);
        assert_eq!(store.writes_at(SiteId(1)), 1);
        assert_eq!(store.state(&name, SiteId(1)).unwrap(), &s2);
        assert_eq!(store.version(&name, SiteId(1)), Some(2));
        assert!(matches!(
            store.apply_committed(&name, SiteId(2), &s2),
            Err(StoreError::UnknownReplica { .. })
        ));
    }

    #[test]
    fn durable_equals_final_state_after_nested_modifications() {
        let name = FileName::new("F");
        let mut store = DurableStore::new();
        store.install(name.clone(), SiteId(1), pages(&["a", "b"]), 8);
        let s0 = store.state(&name, SiteId(1)).unwrap().clone();
        // three nested layers of modification, as a parent and two
        // generations of committed children would leave them
        let s1 = s0.write_page(0, "x".into()).unwrap();
        let s2 = s1.write_page(1, "y".into()).unwrap();
        let s3 = s2.write_page(2, "z".into()).unwrap();
        store.apply_committed(&name, SiteId(1), &s3).unwrap();
        let naive: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        assert_eq!(store.state(&name, SiteId(1)).unwrap().page_texts(), naive);
        assert_eq!(store.writes_at(SiteId(1)), 3);
    }

    #[test]
    fn deep_chains_compact_without_changing_content() {
        let mut f = FileState::new(1, 8, pages(&["0"]));
        let mut naive = vec![Page::from("0")];
        for i in 0..200usize {
            let idx = i % 3;
            let content = Page::new(format!("{i}").as_bytes());
            f = f.write_page(idx.min(f.len()), content.clone()).unwrap();
            let at = idx.min(naive.len());
            if at == naive.len() {
                naive.push(content);
            } else {
                naive[at] = content;
            }
        }
        assert!(f.pages().eq(naive.into_iter()));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Write(usize, u8),
        Snapshot,
    }

    fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
        prop::collection::vec(
            prop_oneof![
                4 => (0usize..8, any::<u8>()).prop_map(|(i, b)| Op::Write(i, b)),
                1 => Just(Op::Snapshot),
            ],
            0..50,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // Naive oracle: a plain Vec of pages, fully copied at every snapshot.
        #[test]
        fn delta_chain_matches_full_copy(ops in arb_ops()) {
            let mut state = FileState::new(1, 4, vec![]);
            let mut naive: Vec<Vec<u8>> = Vec::new();
            let mut snaps: Vec<(FileState, Vec<Vec<u8>>)> = Vec::new();
            for op in ops {
                match op {
                    Op::Write(i, b) => {
                        let content = vec![b; 1 + (b as usize % 4)];
                        let r = state.write_page(i, Page::new(&content));
                        if i > naive.len() {
                            prop_assert!(r.is_err());
                        } else {
                            state = r.unwrap();
                            if i == naive.len() { naive.push(content) } else { naive[i] = content }
                        }
                    }
                    Op::Snapshot => snaps.push((state.snapshot(), naive.clone())),
                }
            }
            let got: Vec<Vec<u8>> = state.pages().map(|p| p.bytes().to_vec()).collect();
            prop_assert_eq!(got, naive);
            for (s, n) in snaps {
                let got: Vec<Vec<u8>> = s.pages().map(|p| p.bytes().to_vec()).collect();
                prop_assert_eq!(got, n);
            }
        }
    }
}
