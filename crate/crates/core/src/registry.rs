//! Name-keyed registries of interchangeable strategies.
//!
//! Each strategy family (neighbor search, pair weighting, loss denominator)
//! exposes a trait; built-in implementations register a constructor under a
//! stable name, and configuration selects one at runtime.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Constructor<T> = fn() -> Box<T>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Constructor<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, ctor: Constructor<T>) -> &mut Self {
        self.entries.insert(name, ctor);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .get(name)
            .map(|ctor| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
