//! Name-keyed registries of interchangeable strategies (estimators, designs,
//! projections, sizing methods, sweep templates), selected at runtime.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    /// Registers `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, item: Box<T>) -> &mut Self {
        self.entries.insert(name.into(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

impl<T: ?Sized> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("kind", &self.kind).field("names", &self.names()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn hello(&self) -> String;
    }

    struct En;
    impl Greeter for En {
        fn hello(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("en", Box::new(En));
        assert_eq!(r.get("en").unwrap().hello(), "hello");
        match r.get("fr") {
            Err(Error::UnknownStrategy { kind, available, .. }) => {
                assert_eq!(kind, "greeter");
                assert_eq!(available, "en");
            }
            other => panic!("{:?}", other.map(|g| g.hello())),
        }
    }
}
