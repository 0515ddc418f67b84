//! Prints the group map of one bundled landmark definition, or a summary
//! of all eight.
//!
//! ```text
//! cargo run --example inspect_schema -- cofw
//! ```

use mdmd::schema::{describe_schema, SchemaSet};

fn main() -> mdmd::Result<()> {
    let set = SchemaSet::bundled();
    match std::env::args().nth(1) {
        Some(name) => print!("{}", describe_schema(&set, &name)?),
        None => {
            for s in set.schemas() {
                let sizes: Vec<usize> = s.group_sizes();
                println!(
                    "{:<10} N={:<4} non-empty groups {:>2}  sizes {:?}  norm {}",
                    s.name,
                    s.landmark_count,
                    s.flsg_map.non_empty_count(),
                    sizes,
                    s.normalization
                );
            }
        }
    }
    Ok(())
}
