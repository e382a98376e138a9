use dualnav_core::{ConfigError, RunConfig};

#[test]
fn defaults_round_trip_through_toml() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
}

#[test]
fn overrides_apply_in_order_and_coerce_numbers() {
    let sets = ["train.lr=0.001", "train.lr=2", "model.d_model=32", "eval.ablation=-long", "bench.seeds=[4, 5]"];
    let cfg = RunConfig::load(None, &sets.map(String::from)).unwrap();
    assert_eq!(cfg.train.lr, 2.0);
    assert_eq!(cfg.model.d_model, 32);
    assert_eq!(cfg.eval.ablation, "-long");
    assert_eq!(cfg.bench.seeds, vec![4, 5]);
}

#[test]
fn unknown_keys_are_rejected_by_path() {
    let err = RunConfig::from_toml_str("[model]\nd_model = 64\nwidth = 3\n").unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey("model.width".into()));
    let err = RunConfig::from_toml_str("[optimizer]\nlr = 1\n").unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey("optimizer".into()));
    let err = RunConfig::load(None, &["train".to_string() + "=1"]).unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey("train".into()));
}

#[test]
fn sections_must_agree() {
    let err = RunConfig::load(None, &["dataset.h_max=6".to_string()]).unwrap_err();
    assert!(err.to_string().contains("model.H_max=8"), "{err}");
    let ok = RunConfig::load(None, &["dataset.h_max=6".to_string(), "model.H_max=6".to_string()]);
    assert!(ok.is_ok());
}

#[test]
fn section_errors_name_the_key() {
    let err = RunConfig::load(None, &["train.mix_ratio=1.5".to_string()]).unwrap_err();
    assert!(err.to_string().contains("mix_ratio=1.5"), "{err}");
    let err = RunConfig::load(None, &["model.d_model=\"wide\"".to_string()]).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)), "{err}");
}

#[test]
fn key_listing_covers_every_section() {
    let listing = RunConfig::key_listing();
    for section in ["world.", "episode.", "dataset.", "model.", "train.", "eval.", "bench."] {
        assert!(listing.contains(section), "{section}");
    }
    assert!(listing.contains("train.alpha = 0.25"));
}
