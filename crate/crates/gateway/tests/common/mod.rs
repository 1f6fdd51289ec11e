use serde_json::{json, Value};

/// Schema violations of `value` against one definition of the published
/// API schema.
#[allow(dead_code)]
pub fn violations(def: &str, value: &Value) -> Vec<String> {
    let text = include_str!("../../schemas/api.schema.json");
    let mut schema: Value = serde_json::from_str(text).unwrap();
    assert!(schema["$defs"].get(def).is_some(), "no schema definition `{def}`");
    schema["$ref"] = json!(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator
        .iter_errors(value)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect()
}

#[allow(dead_code)]
pub fn assert_conforms(def: &str, value: &Value) {
    let errors = violations(def, value);
    assert!(errors.is_empty(), "{def}: {errors:?}\n{value:#}");
}
