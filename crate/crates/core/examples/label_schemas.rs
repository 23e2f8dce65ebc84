//! The two builtin label schemas, their region groups, and JSON round-trip.
//!
//! cargo run --example label_schemas

use uncseg::labelspace::{builtin_schema, um_schema, LabelSchema, ModelKind};

fn main() -> uncseg::Result<()> {
    for kind in [ModelKind::Cm, ModelKind::Um] {
        let s = builtin_schema(kind);
        println!("schema '{}': {} classes", s.schema_id(), s.class_count());
        for (g, members) in s.groups() {
            println!("  {g:<16} {} labels", members.len());
        }
        println!(
            "  reported groups: {:?}",
            s.report_groups()
                .iter()
                .map(|g| g.as_str())
                .collect::<Vec<_>>()
        );
    }

    let small = um_schema(12)?;
    let json = small.to_json()?;
    assert_eq!(LabelSchema::from_json(&json)?, small);
    println!(
        "um_schema(12) serializes to {} bytes of JSON and back",
        json.len()
    );
    Ok(())
}
