use std::collections::BTreeMap;

use sentinel_core::deviation::{EffectClass, ToolCatalog};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgSpec {
    pub key: String,
    pub required: bool,
    pub ty: ArgType,
}

/// What an argument value must look like on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Text,
    /// Non-negative integer.
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: String,
    pub args: Vec<ArgSpec>,
    pub effect: EffectClass,
}

impl ToolSpec {
    /// A spec whose arguments are all text.
    pub fn new(name: &str, effect: EffectClass, required: &[&str], optional: &[&str]) -> Self {
        let args = required
            .iter()
            .map(|k| ArgSpec { key: (*k).into(), required: true, ty: ArgType::Text })
            .chain(optional.iter().map(|k| ArgSpec { key: (*k).into(), required: false, ty: ArgType::Text }))
            .collect();
        ToolSpec { name: name.into(), args, effect }
    }

    pub fn with_arg(mut self, key: &str, required: bool, ty: ArgType) -> Self {
        self.args.retain(|a| a.key != key);
        self.args.push(ArgSpec { key: key.into(), required, ty });
        self
    }

    pub fn arg(&self, key: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.key == key)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("tool `{0}` is already registered")]
pub struct DuplicateTool(pub String);

/// The set of tools the proxy will run. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// File, patch and shell tools backed by the built-in executors.
    pub fn with_defaults() -> Self {
        use EffectClass::*;
        let mut r = Self::empty();
        for spec in [
            ToolSpec::new("read_file", Read, &["path"], &[]),
            ToolSpec::new("list_dir", Read, &[], &["path"]),
            ToolSpec::new("write_file", Write, &["path", "content"], &[]),
            ToolSpec::new("apply_patch", Write, &["patch"], &[]),
            ToolSpec::new("delete_file", Write, &["path"], &[]),
            ToolSpec::new("run_tests", Execute, &["command"], &[]).with_arg("timeout_s", false, ArgType::Count),
            ToolSpec::new("run_command", Execute, &["command"], &[]).with_arg("timeout_s", false, ArgType::Count),
            ToolSpec::new("shell", Execute, &["command"], &[]).with_arg("timeout_s", false, ArgType::Count),
        ] {
            r.register(spec).expect("default tool names are unique");
        }
        r
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), DuplicateTool> {
        if self.tools.contains_key(&spec.name) {
            return Err(DuplicateTool(spec.name));
        }
        self.tools.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Effect classes for the deviation detector, consistent with what the
    /// proxy actually does.
    pub fn catalog(&self) -> ToolCatalog {
        let mut c = ToolCatalog::empty();
        for spec in self.tools.values() {
            c.insert(spec.name.clone(), spec.effect);
        }
        c
    }
}
