//! Drives the command-line front end in-process: simulate, then replay the
//! run from its manifest.

use traffic_density::cli::{dispatch, RunManifest, RUN_MANIFEST_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join(format!("cli_session_{}", std::process::id()));
    let first = out.join("first");
    let code = dispatch([
        "traffic-density",
        "simulate",
        "--controller",
        "ga",
        "--seed",
        "3",
        "--out",
        first.to_str().unwrap(),
    ]);
    println!("exit code {code}");

    let manifest_path = first.join(RUN_MANIFEST_FILE);
    let manifest = RunManifest::read(&manifest_path)?;
    println!("recorded config: {}", serde_json::to_string(&manifest.config)?);

    let replay = out.join("replay");
    let code = dispatch([
        "traffic-density",
        "simulate",
        "--config",
        manifest_path.to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    println!("replay exit code {code}");
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
