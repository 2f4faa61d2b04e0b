//! Final-penalty and inner-iteration sweep through the experiment layer,
//! written as CSV tables plus a JSON summary.

use consensus_scp::experiment::{resolve_output_dir, run_experiment, LoadedConfig};

const CONFIG: &str = r#"
experiment = "ablation"

[scp]
max_outer = 20
early_stop = false

[ablation]
rho_finals = [1e3, 1e6]
inner_iterations = [100, 250]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let loaded = LoadedConfig::parse(CONFIG)?;
    let bundle = run_experiment(&loaded, &loaded.config, vec![])?;
    for check in &bundle.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    let dir = resolve_output_dir(None, &loaded.config).join("ablation-example");
    bundle.write(&dir)?;
    println!("tables written to {}", dir.display());
    Ok(())
}
