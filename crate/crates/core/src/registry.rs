//! Name-keyed registries of interchangeable strategies.
//!
//! Kernels, contrastive objectives, transforms and fold strategies are all
//! trait objects built from a config value by a factory registered under a
//! name. The built-in registries are populated by each module's
//! `registry()` function; callers may register additional variants.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub type Factory<T, C> = fn(&C) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, C> {
    what: &'static str,
    factories: BTreeMap<String, Factory<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(what: &'static str) -> Self {
        Registry {
            what,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any earlier entry.
    pub fn register(&mut self, name: &str, factory: Factory<T, C>) -> &mut Self {
        self.factories.insert(name.to_string(), factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, config: &C) -> Result<Box<T>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Parameter(format!(
                "unknown {} '{}' (known: {})",
                self.what,
                name,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        factory(config)
    }
}

impl<T: ?Sized, C> fmt::Debug for Registry<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("what", &self.what)
            .field("names", &self.names().collect::<Vec<_>>())
            .finish()
    }
}
