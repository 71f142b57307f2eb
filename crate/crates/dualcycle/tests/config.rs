use dualcycle::config::{ExperimentConfig, WorldConfig, WorldSource};
use dualcycle::harness::Experiment;
use dualcycle::Error;
use dualcycle_core::editing::BlendMode;
use dualcycle_core::maskgen::Convention;
use dualcycle_core::Condition;

fn parse(json: &str) -> Result<ExperimentConfig, serde_json::Error> {
    serde_json::from_str(json)
}

fn rejects(json: &str) {
    let cfg = parse(json).unwrap();
    let world = cfg.world.resolve().unwrap();
    let err = cfg.validate(&world).unwrap_err();
    assert!(matches!(err, Error::Config(_) | Error::Core(_)), "{json}: {err}");
}

#[test]
fn defaults_follow_the_protocol() {
    let cfg = parse("{}").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.sweep.dec_scales, vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(cfg.sweep.noise_steps, vec![85, 80, 75, 70, 60, 50]);
    assert_eq!(cfg.sweep.ks, vec![85, 80, 75, 70, 60, 50]);
    assert_eq!(cfg.trials, 15);
    assert_eq!(cfg.mask.delta, 0.5);
    assert_eq!(cfg.mask.convention, Convention::Dissimilarity);
    assert_eq!(cfg.blend_mode, BlendMode::Deterministic);
    let world = cfg.world.resolve().unwrap();
    assert_eq!(world.couplings.len(), 1);
    assert_eq!(world.couplings[0].strength, 0.95);
    assert!(Experiment::new(cfg).is_ok());
}

#[test]
fn default_world_weights_follow_the_coupling() {
    let world = WorldConfig::scarf_bias(0.95).build().unwrap();
    let w = world.weights(&Condition::parse("accessory=scarf").unwrap()).unwrap();
    let folded: f64 = world
        .components()
        .iter()
        .zip(&w)
        .filter(|(c, _)| c.attributes.get("ears") == Some("folded"))
        .map(|(_, w)| w)
        .sum();
    assert!((folded - 0.95).abs() < 1e-12);
    assert_eq!(WorldConfig::default().build().unwrap().components().len(), 12);
}

#[test]
fn documented_example_parses() {
    let dir = tempfile::tempdir().unwrap();
    let world = r#"{"couplings": [{"trigger": "accessory=scarf", "coupled": "ears=folded", "strength": 0.9}],
                    "std": 0.04, "canvas": {"height": 16, "width": 16, "channels": 3},
                    "schedule": {"steps": 100, "beta_min": 0.0001, "beta_max": 0.02, "eta": 0.1}}"#;
    std::fs::write(dir.path().join("world.json"), world).unwrap();
    let exp = r#"{
      "world": "world.json",
      "tuples": [{"id": "gray-scarf", "source": "color=gray,accessory=none,ears=pointed",
                  "c_src": "accessory=none", "c_tgt": "accessory=scarf", "off_target": ["ears"]}],
      "sweep": {"dec_scales": [1, 1.5, 2, 3, 4, 5], "noise_steps": [85, 80, 75, 70, 60, 50], "ks": [85, 80, 75, 70, 60, 50]},
      "trials": 15, "seed": 0, "enc_scale": 1.0,
      "mask": {"convention": "dissimilarity", "delta": 0.5, "min_span": 0.05, "grid": 4, "threshold": 0.5},
      "blend_mode": "deterministic", "ablation": false, "ppm": false, "output_dir": "out"
    }"#;
    let path = dir.path().join("exp.json");
    std::fs::write(&path, exp).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.world, WorldSource::Path(dir.path().join("world.json")));
    let e = Experiment::new(cfg).unwrap();
    assert_eq!(e.world.std(), 0.04);
    assert_eq!(e.world_config.couplings[0].strength, 0.9);
}

#[test]
fn inline_world_and_round_trip() {
    let cfg = parse(r#"{"world": {"couplings": []}, "mask": {"convention": "abs-similarity"}, "blend_mode": "stochastic"}"#)
        .unwrap();
    assert_eq!(cfg.mask.convention, Convention::AbsSimilarity);
    assert_eq!(cfg.blend_mode, BlendMode::Stochastic);
    assert_eq!(cfg.world, WorldSource::Inline(WorldConfig::default()));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(parse(&text).unwrap(), cfg);
}

#[test]
fn schema_errors() {
    assert!(parse(r#"{"trails": 3}"#).is_err());
    assert!(parse(r#"{"mask": {"convention": "inverse"}}"#).is_err());
    assert!(parse(r#"{"blend_mode": "soft"}"#).is_err());
    assert!(serde_json::from_str::<WorldConfig>(r#"{"colour": 1}"#).is_err());
    let missing = std::path::Path::new("/definitely/not/here.json");
    assert!(ExperimentConfig::load(missing).unwrap_err().to_string().contains("here.json"));
}

#[test]
fn invalid_values_are_rejected() {
    rejects(r#"{"sweep": {"dec_scales": []}}"#);
    rejects(r#"{"sweep": {"noise_steps": [101]}}"#);
    rejects(r#"{"sweep": {"noise_steps": [0]}}"#);
    rejects(r#"{"sweep": {"noise_steps": [40], "ks": [50]}}"#);
    rejects(r#"{"sweep": {"ks": [0, 50]}}"#);
    rejects(r#"{"trials": 0}"#);
    rejects(r#"{"mask": {"delta": 1.5}}"#);
    rejects(r#"{"mask": {"grid": 9}}"#);
    rejects(r#"{"tuples": []}"#);
    rejects(r#"{"tuples": [{"id": "a b", "source": "color=gray", "c_src": "", "c_tgt": ""}]}"#);
    rejects(
        r#"{"tuples": [{"id": "a", "source": "color=gray", "c_src": "", "c_tgt": ""},
                       {"id": "a", "source": "color=gray", "c_src": "", "c_tgt": ""}]}"#,
    );
    rejects(r#"{"tuples": [{"id": "a", "source": "color", "c_src": "", "c_tgt": ""}]}"#);
    rejects(r#"{"tuples": [{"id": "a", "source": "color=gray", "c_src": "", "c_tgt": "", "off_target": ["tail"]}]}"#);
    rejects(r#"{"world": {"canvas": {"height": 15, "width": 16, "channels": 3}}}"#);
}

#[test]
fn invalid_worlds_fail_to_build() {
    let bad_token = r#"{"couplings": [{"trigger": "accessory", "coupled": "ears=folded", "strength": 0.9}]}"#;
    let unknown_value = r#"{"attributes": [{"name": "color", "values": ["teal"]},
        {"name": "accessory", "values": ["none"]}, {"name": "ears", "values": ["pointed"]}]}"#;
    let strength = r#"{"couplings": [{"trigger": "accessory=scarf", "coupled": "ears=folded", "strength": 1.5}]}"#;
    for json in [bad_token, unknown_value, strength] {
        let w: WorldConfig = serde_json::from_str(json).unwrap();
        assert!(w.build().is_err(), "{json}");
    }
    let w: WorldConfig = serde_json::from_str(r#"{"schedule": {"beta_max": 2.0}}"#).unwrap();
    assert!(w.schedule().is_err());
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["experiment.json", "smoke.json"] {
        let cfg = dualcycle::config::ExperimentConfig::load(&dir.join(name)).unwrap();
        dualcycle::harness::Experiment::new(cfg).unwrap();
    }
    for name in ["world_biased.json", "world_unbiased.json"] {
        dualcycle::config::WorldConfig::load(&dir.join(name)).unwrap().build().unwrap();
    }
}
