use std::path::PathBuf;

use cochlea_tl::tl::TlConfig;
use cochlea_tl::ModelParams;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_files_match_the_defaults() {
    assert_eq!(ModelParams::load(config("params.toml")).unwrap(), ModelParams::default());
    assert_eq!(TlConfig::load(config("tl.toml")).unwrap(), TlConfig::default());
    let smoke = ModelParams::load(config("smoke.toml")).unwrap();
    assert_eq!(
        smoke,
        ModelParams {
            n: 250,
            ..Default::default()
        }
    );
}
