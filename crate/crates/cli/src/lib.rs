//! Support code for the `lastmeter` binary and its acceptance suite.

pub mod acceptance;

use std::path::PathBuf;

/// `LASTMETER_DATA_DIR`, else the workspace `data/` this crate was built from,
/// else `./data`.
pub fn default_data_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("LASTMETER_DATA_DIR") {
        return PathBuf::from(d);
    }
    let built = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    if built.is_dir() {
        built
    } else {
        PathBuf::from("data")
    }
}
