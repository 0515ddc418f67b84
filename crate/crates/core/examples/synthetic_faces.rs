//! Renders a small synthetic dataset and prints its manifest header.
//!
//! ```text
//! cargo run --example synthetic_faces -- /tmp/faces pare 8
//! ```

use std::path::PathBuf;

use mdmd::data::{gen_synthetic, read_dataset};
use mdmd::schema::SchemaSet;

fn main() -> mdmd::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-faces".into()));
    let schema = args.next().unwrap_or_else(|| "pare".into());
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let schemas = SchemaSet::bundled();
    let manifest = gen_synthetic(&schemas, &schema, count, 7, &out)?;
    let ds = read_dataset(&manifest, &schemas)?;
    println!("{} faces of `{}` in {}", ds.len(), ds.header.schema, manifest.display());
    for rec in ds.records.iter().take(3) {
        let [x, y, w, h] = rec.bbox;
        println!("  {}: bbox ({x:.1}, {y:.1}, {w:.1}, {h:.1}), first landmark {:?}", rec.id, rec.landmarks[0]);
    }
    Ok(())
}
