//! Writes the fixture corpus to disk.
//!
//! Layout under the output directory (default `fixtures`):
//! `<set>/` fixture store per set, `<set>.hex` its entry code,
//! `mutants/<set>/` the same without re-entering calls, `all/` every
//! set merged, and `corpus.list` naming each entry for batch runs.

use std::path::PathBuf;

use hookwatch_core::FixtureStore;
use hookwatch_corpus::sets::{all_sets, linear_reentry_chain, mutants, FixtureSet};

fn write_set(dir: &std::path::Path, set: &FixtureSet) -> Result<(), Box<dyn std::error::Error>> {
    set.store.write(&dir.join(&set.name))?;
    std::fs::write(dir.join(format!("{}.hex", set.name)), format!("0x{}\n", hex::encode(set.entry_code())))?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fixtures"));
    std::fs::create_dir_all(&out)?;
    let mut sets = all_sets();
    sets.push(linear_reentry_chain(22, 20, true));
    let mut merged = FixtureStore::new();
    let mut list = String::from("# entry addresses of every set in all/\n");
    for set in &sets {
        write_set(&out, set)?;
        merged.merge(&set.store);
        list.push_str(&format!("{}  # {}\n", set.entry, set.name));
    }
    let bounce = sets.iter().find(|s| s.name == "bounce").expect("bounce set");
    std::fs::write(out.join("bounce_from.hex"), format!("0x{}\n", hex::encode(bounce.entry_code())))?;
    merged.write(&out.join("all"))?;
    std::fs::write(out.join("corpus.list"), list)?;
    for m in mutants() {
        write_set(&out.join("mutants"), &m)?;
    }
    println!("wrote {} sets to {}", sets.len(), out.display());
    Ok(())
}
