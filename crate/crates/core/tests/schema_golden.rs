//! Wire payloads compared byte-for-byte against the files in `fixtures/`.
//! Set `FAAF_BLESS=1` to rewrite them after an intentional format change.

use std::path::PathBuf;

use faaf_core::constructor::{build_fact_function, parse_schema, serialize_spec, Dialect};
use faaf_core::model::{index_facts, FormulationConfig, ResponseDomain};
use serde_json::Value;

const PONTIFF_FACT: &str = "Pope Benedict XVI became the head of the Catholic Church and sovereign of the Vatican City State on April 19, 2005.";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("FAAF_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted; rerun with FAAF_BLESS=1 if intended");
}

fn single_fact_payload(dialect: Dialect) -> String {
    let facts = index_facts([PONTIFF_FACT]).unwrap();
    let spec = build_fact_function(&facts, &FormulationConfig::new(ResponseDomain::TF, false)).unwrap();
    serialize_spec(&spec, dialect).unwrap().payload
}

#[test]
fn single_fact_json_matches_golden() {
    check_golden("single_fact.json", &single_fact_payload(Dialect::JsonTool));
}

#[test]
fn single_fact_xml_matches_golden() {
    check_golden("single_fact.xml", &single_fact_payload(Dialect::XmlTool));
}

#[test]
fn tfn_citation_payloads_match_golden() {
    let facts = index_facts(["The sky is blue.", "Water boils at 100 C at sea level.", "Cats bark"]).unwrap();
    let spec = build_fact_function(&facts, &FormulationConfig::new(ResponseDomain::TFN, true)).unwrap();
    check_golden("three_facts_tfn_cit.json", &serialize_spec(&spec, Dialect::JsonTool).unwrap().payload);
    check_golden("three_facts_tfn_cit.xml", &serialize_spec(&spec, Dialect::XmlTool).unwrap().payload);
}

#[test]
fn single_fact_json_structure() {
    let v: Value = serde_json::from_str(&single_fact_payload(Dialect::JsonTool)).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["properties", "required", "title", "type"]);
    assert_eq!(v["title"], "FactChecker");
    assert_eq!(v["type"], "object");
    assert_eq!(v["required"], serde_json::json!(["fact_0"]));
    let fact = &v["properties"]["fact_0"];
    assert_eq!(fact["enum"], serde_json::json!(["True", "False"]));
    assert_eq!(fact["type"], "string");
    assert_eq!(
        fact["description"],
        format!("It is clear from the passage that {PONTIFF_FACT} Respond by using one of the accepted Enum types.")
    );
}

#[test]
fn payloads_are_byte_stable() {
    for dialect in [Dialect::JsonTool, Dialect::XmlTool] {
        let first = single_fact_payload(dialect);
        for _ in 0..20 {
            assert_eq!(single_fact_payload(dialect), first);
        }
    }
}

#[test]
fn golden_files_read_back_under_their_grammar() {
    for (name, dialect) in [("single_fact.json", Dialect::JsonTool), ("single_fact.xml", Dialect::XmlTool)] {
        let payload = std::fs::read_to_string(fixture(name)).unwrap();
        let tree = parse_schema(&faaf_core::WireSchema { dialect, payload }).unwrap();
        assert_eq!(tree.title, "FactChecker");
        assert_eq!(tree.required, ["fact_0"]);
        assert_eq!(tree.parameters[0].enum_values.as_deref(), Some(&["True".to_string(), "False".to_string()][..]));
    }
}
