#![allow(dead_code)]

use std::path::Path;

use ponlab::config::LoadedConfig;

/// Small but complete sweep config: short recordings, two training epochs.
pub fn smoke_text(out: &Path, models: &[&str], rops: &[f64], symbols: usize) -> String {
    let models: Vec<String> = models.iter().map(|m| format!("{m:?}")).collect();
    let rops: Vec<String> = rops.iter().map(|r| format!("{r:?}")).collect();
    format!(
        r#"master_seed = 11
output_dir = {out:?}
rops_dbm = [{rops}]
models = [{models}]
symbols = {symbols}

[train]
max_epochs = 2
patience = 2
batch_size = 16
learning_rate = 2e-3

[fconvnet]
d_model = 4
d_i = 4
d_ii = 4

[dnn]
widths = [32, 16]

[sato]
restarts = 2
"#,
        out = out.display().to_string(),
        rops = rops.join(", "),
        models = models.join(", "),
    )
}

pub fn smoke(out: &Path, models: &[&str], rops: &[f64], symbols: usize) -> LoadedConfig {
    LoadedConfig::from_text(smoke_text(out, models, rops, symbols)).unwrap()
}

/// CSV file without its `# config_sha256=` comment line.
pub fn body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    assert!(first.starts_with("# config_sha256="), "{first}");
    rest.to_string()
}
