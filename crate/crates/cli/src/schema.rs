//! The shipped JSON schemas, embedded so the binary validates without them on disk.

use jsonschema::{Resource, Validator};
use serde_json::Value;

use crate::Failure;

pub const CONFIG: &str = include_str!("../schemas/config.schema.json");
pub const SUITE: &str = include_str!("../schemas/suite.schema.json");

const BASE: &str = "https://alw.local/schemas/";

#[derive(Debug, Clone, Copy)]
pub enum Schema {
    Config,
    Suite,
    /// The phantom description inside a suite case.
    Spec,
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).expect("embedded schema is valid JSON")
}

fn validator(which: Schema) -> Validator {
    let root = match which {
        Schema::Config => parse(CONFIG),
        Schema::Suite => parse(SUITE),
        Schema::Spec => serde_json::json!({ "$ref": format!("{BASE}suite.schema.json#/$defs/spec") }),
    };
    let mut opts = jsonschema::options();
    for (name, text) in [("config.schema.json", CONFIG), ("suite.schema.json", SUITE)] {
        let resource = Resource::from_contents(parse(text)).expect("embedded schema is a resource");
        opts = opts.with_resource(format!("{BASE}{name}"), resource);
    }
    opts.build(&root).expect("embedded schema compiles")
}

/// Names the first violation of `which` in `doc`, prefixed by `what`.
pub fn check(which: Schema, doc: &Value, what: &str) -> Result<(), Failure> {
    match validator(which).iter_errors(doc).next() {
        None => Ok(()),
        Some(err) => {
            let at = err.instance_path.to_string();
            let at = if at.is_empty() { "top level".to_string() } else { at };
            Err(Failure::usage(format!("{what}: schema violation at {at}: {err}")))
        }
    }
}
