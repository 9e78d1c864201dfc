//! Writes the bundled case-study corpus, fixtures, config and fusion head.
//!
//! cargo run -p veracity-core --example case_study_fixtures [DIR]

use std::path::PathBuf;

use veracity_core::harness::synthetic::{case_study, write_case_study};

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study"));
    write_case_study(&case_study(), &dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
