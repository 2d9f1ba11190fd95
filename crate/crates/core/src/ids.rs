//! Identifiers for sites, processes and transactions.
//!
//! A [`Tid`] carries its whole invocation path, root first. Every question
//! about ancestry (superior, inferior, home site, parent) is answered from
//! the value alone, without consulting any registry.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A simulated site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Process identifier. The executing site is part of the value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid {
    pub site: SiteId,
    pub serial: u32,
}

impl Pid {
    pub fn new(site: SiteId, serial: u32) -> Self {
        Pid { site, serial }
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.p{}", self.site, self.serial)
    }
}

/// One element of a transaction path: the home site of that transaction and
/// the serial its home site handed out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TidElem {
    pub site: SiteId,
    pub serial: u32,
}

/// Transaction identifier, encoded as the full path from the top-level
/// transaction down to this one.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tid {
    path: Vec<TidElem>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TidParseError {
    #[error("empty transaction id")]
    Empty,
    #[error("malformed transaction id element `{0}`")]
    Element(String),
}

impl Tid {
    /// A top-level transaction.
    pub fn root(site: SiteId, serial: u32) -> Self {
        Tid {
            path: vec![TidElem { site, serial }],
        }
    }

    /// Builds a Tid from an explicit path. Panics on an empty path.
    pub fn from_path(path: Vec<TidElem>) -> Self {
        assert!(!path.is_empty(), "a transaction path is never empty");
        Tid { path }
    }

    /// A child of `self` homed at `site`.
    pub fn child(&self, site: SiteId, serial: u32) -> Self {
        let mut path = self.path.clone();
        path.push(TidElem { site, serial });
        Tid { path }
    }

    pub fn path(&self) -> &[TidElem] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn home_site(&self) -> SiteId {
        self.path.last().expect("nonempty path").site
    }

    pub fn is_top_level(&self) -> bool {
        self.path.len() == 1
    }

    pub fn parent(&self) -> Option<Tid> {
        if self.path.len() <= 1 {
            None
        } else {
            Some(Tid {
                path: self.path[..self.path.len() - 1].to_vec(),
            })
        }
    }

    /// The top-level transaction of the entire transaction `self` belongs to.
    pub fn top(&self) -> Tid {
        Tid {
            path: self.path[..1].to_vec(),
        }
    }

    /// True iff `self` is an ancestor of `other` (reflexive).
    pub fn is_ancestor_of(&self, other: &Tid) -> bool {
        is_ancestor(self, other)
    }

    /// True iff `self` is a descendant of `other` (reflexive).
    pub fn is_descendant_of(&self, other: &Tid) -> bool {
        is_ancestor(other, self)
    }

    /// Proper ancestor.
    pub fn is_superior_of(&self, other: &Tid) -> bool {
        self.path.len() < other.path.len() && is_ancestor(self, other)
    }

    /// Proper descendant.
    pub fn is_inferior_of(&self, other: &Tid) -> bool {
        other.is_superior_of(self)
    }

    /// Home sites of all ancestors including `self`, root first.
    pub fn ancestor_sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.path.iter().map(|e| e.site)
    }

    /// Home sites of the proper superiors, root first.
    pub fn superior_sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.path[..self.path.len() - 1].iter().map(|e| e.site)
    }
}

/// True iff `a`'s path is a (possibly improper) prefix of `b`'s path.
pub fn is_ancestor(a: &Tid, b: &Tid) -> bool {
    a.path.len() <= b.path.len() && b.path[..a.path.len()] == a.path[..]
}

pub fn home_site(t: &Tid) -> SiteId {
    t.home_site()
}

pub fn parent(t: &Tid) -> Option<Tid> {
    t.parent()
}

impl fmt::Display for Tid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "s{}.t{}", e.site.0, e.serial)?;
        }
        Ok(())
    }
}

impl FromStr for Tid {
    type Err = TidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(TidParseError::Empty);
        }
        let mut path = Vec::new();
        for part in s.split('/') {
            let bad = || TidParseError::Element(part.to_string());
            let (site, serial) = part.split_once('.').ok_or_else(bad)?;
            let site = site
                .strip_prefix('s')
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)?;
            let serial = serial
                .strip_prefix('t')
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)?;
            path.push(TidElem {
                site: SiteId(site),
                serial,
            });
        }
        Ok(Tid { path })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tid(elems: &[(u32, u32)]) -> Tid {
        Tid::from_path(
            elems
                .iter()
                .map(|&(s, n)| TidElem {
                    site: SiteId(s),
                    serial: n,
                })
                .collect(),
        )
    }

    #[test]
    fn ancestry_examples() {
        assert!(is_ancestor(&tid(&[(1, 1)]), &tid(&[(1, 1)])));
        assert!(is_ancestor(&tid(&[(1, 1)]), &tid(&[(1, 1), (2, 1)])));
        assert!(!is_ancestor(&tid(&[(1, 1), (2, 1)]), &tid(&[(1, 1), (3, 1)])));
    }

    #[test]
    fn home_site_examples() {
        assert_eq!(home_site(&tid(&[(1, 1)])), SiteId(1));
        assert_eq!(home_site(&tid(&[(1, 1), (2, 1)])), SiteId(2));
        assert_eq!(home_site(&tid(&[(1, 1), (2, 1), (2, 2)])), SiteId(2));
    }

    #[test]
    fn parent_examples() {
        assert_eq!(parent(&tid(&[(1, 1), (2, 1)])), Some(tid(&[(1, 1)])));
        assert_eq!(parent(&tid(&[(1, 1)])), None);
        assert_eq!(
            parent(&tid(&[(1, 1), (2, 1), (3, 4)])),
            Some(tid(&[(1, 1), (2, 1)]))
        );
    }

    #[test]
    fn self_is_never_superior() {
        let t = tid(&[(1, 1), (2, 3)]);
        assert!(!t.is_superior_of(&t));
        assert!(!t.is_inferior_of(&t));
        assert!(t.is_ancestor_of(&t) && t.is_descendant_of(&t));
    }

    #[test]
    fn text_form() {
        let t = tid(&[(1, 1), (2, 1)]);
        assert_eq!(t.to_string(), "s1.t1/s2.t1");
        assert_eq!("s1.t1/s2.t1".parse::<Tid>().unwrap(), t);
        assert!("s1.t1/x".parse::<Tid>().is_err());
        assert_eq!("".parse::<Tid>(), Err(TidParseError::Empty));
    }

    fn arb_tid() -> impl Strategy<Value = Tid> {
        prop::collection::vec((1u32..3, 1u32..3), 1..5).prop_map(|v| tid(&v))
    }

    proptest! {
        #[test]
        fn ancestry_is_a_partial_order(a in arb_tid(), b in arb_tid(), c in arb_tid()) {
            prop_assert!(is_ancestor(&a, &a));
            if is_ancestor(&a, &b) && is_ancestor(&b, &a) {
                prop_assert_eq!(&a, &b);
            }
            if is_ancestor(&a, &b) && is_ancestor(&b, &c) {
                prop_assert!(is_ancestor(&a, &c));
            }
            prop_assert_eq!(a.is_superior_of(&b), is_ancestor(&a, &b) && a != b);
        }

        #[test]
        fn child_parent_roundtrip(a in arb_tid(), s in 1u32..5, n in 1u32..9) {
            let c = a.child(SiteId(s), n);
            prop_assert_eq!(c.parent(), Some(a.clone()));
            prop_assert_eq!(c.home_site(), SiteId(s));
            prop_assert!(a.is_superior_of(&c));
            prop_assert_eq!(c.to_string().parse::<Tid>().unwrap(), c);
        }
    }
}
