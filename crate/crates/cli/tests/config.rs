use qpath::FeedbackSpec;
use qpath_cli::config::{resolve, Mode, RunConfig};
use qpath_cli::validate::{has_errors, validate, Severity};

const MODES: [Mode; 7] = [
    Mode::Simulate,
    Mode::Postselect,
    Mode::Correlate,
    Mode::Diagrams,
    Mode::Mlp,
    Mode::Portrait,
    Mode::FeedbackKz,
];

#[test]
fn presets_round_trip_through_toml() {
    for mode in MODES {
        let cfg = RunConfig::preset(mode);
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg, "{mode}:\n{text}");
        let again = resolve(&text, None).unwrap();
        assert_eq!(again.config, cfg);
        assert!(again.defaulted.is_empty(), "{mode}: {:?}", again.defaulted);
    }
}

#[test]
fn edited_values_survive_round_trip() {
    let mut cfg = RunConfig::preset(Mode::Simulate);
    cfg.params.dt = 0.1 + 0.2;
    cfg.params.delta = std::f64::consts::PI / 3.0;
    cfg.ensemble.master_seed = u64::MAX >> 1;
    cfg.fb = FeedbackSpec::DirectLinear { delta0: -1e-17, delta1: 0.123456789012345 };
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn partial_config_is_filled_from_preset() {
    let r = resolve("mode = \"simulate\"\n[ensemble]\nn_traj = 7\n[params]\ndelta = 2.0\n", None).unwrap();
    let mut expect = RunConfig::preset(Mode::Simulate);
    expect.ensemble.n_traj = 7;
    expect.params.delta = 2.0;
    assert_eq!(r.config, expect);
    assert!(r.defaulted.contains(&"params.dt".to_string()));
    assert!(r.defaulted.contains(&"ensemble.master_seed".to_string()));
    assert!(!r.defaulted.iter().any(|p| p == "ensemble.n_traj" || p == "params.delta"));
}

#[test]
fn empty_config_means_postselect_and_flag_wins() {
    assert_eq!(resolve("", None).unwrap().config, RunConfig::preset(Mode::Postselect));
    let r = resolve("mode = \"simulate\"", Some(Mode::Portrait)).unwrap();
    assert_eq!(r.config.mode, Mode::Portrait);
    assert!(r.config.portrait.is_some());
}

#[test]
fn switching_feedback_kind_replaces_the_table() {
    let r = resolve("mode = \"mlp\"\n[fb]\nkind = \"none\"\n", None).unwrap();
    assert_eq!(r.config.fb, FeedbackSpec::None);
}

#[test]
fn unknown_fields_are_rejected() {
    assert!(resolve("[params]\ntau = 1.0\n", None).is_err());
    assert!(resolve("mode = \"sideways\"", None).is_err());
}

#[test]
fn every_preset_validates() {
    for mode in MODES {
        let v = validate(&RunConfig::preset(mode));
        assert!(!has_errors(&v), "{mode}: {v:?}");
    }
    assert!(validate(&RunConfig::preset(Mode::Mlp)).is_empty());
    assert!(validate(&RunConfig::preset(Mode::Portrait)).is_empty());
}

#[test]
fn nonpositive_tolerance_is_reported_by_path() {
    for tol in [0.0, -0.02] {
        let mut cfg = RunConfig::preset(Mode::Postselect);
        cfg.selection.as_mut().unwrap().tolerance = tol;
        let v = validate(&cfg);
        assert!(v.iter().any(|x| x.path == "selection.tolerance" && x.severity == Severity::Error), "{v:?}");
    }
}

#[test]
fn efficiency_above_one_is_an_error() {
    let mut cfg = RunConfig::preset(Mode::Simulate);
    cfg.params.gamma = -0.25;
    let v = validate(&cfg);
    assert!(v.iter().any(|x| x.path == "params.gamma" && x.severity == Severity::Error), "{v:?}");
}

#[test]
fn strong_feedback_portrait_only_warns() {
    let mut cfg = RunConfig::preset(Mode::Portrait);
    cfg.fb = FeedbackSpec::DirectLinear { delta0: 0.0, delta1: 1.5 };
    let v = validate(&cfg);
    assert!(!has_errors(&v), "{v:?}");
    assert!(v.iter().any(|x| x.path == "fb.delta1" && x.severity == Severity::Warning));
}

#[test]
fn mode_specific_constraints() {
    let mut cfg = RunConfig::preset(Mode::Portrait);
    cfg.fb = FeedbackSpec::DirectLinear { delta0: 0.5, delta1: 0.8 };
    assert!(validate(&cfg).iter().any(|x| x.path == "fb.delta0"));

    let mut cfg = RunConfig::preset(Mode::Mlp);
    cfg.params.gamma = 0.1;
    assert!(validate(&cfg).iter().any(|x| x.path == "params.gamma"));

    let mut cfg = RunConfig::preset(Mode::FeedbackKz);
    cfg.params.dt = 0.01;
    assert!(validate(&cfg).iter().any(|x| x.path == "params.dt"));
    cfg.fb = FeedbackSpec::None;
    assert!(validate(&cfg).iter().any(|x| x.path == "fb"));

    let mut cfg = RunConfig::preset(Mode::Correlate);
    cfg.correlate.as_mut().unwrap().reference_times = vec![0.45];
    assert!(validate(&cfg).iter().any(|x| x.path == "correlate.reference_times[0]"));

    let mut cfg = RunConfig::preset(Mode::Diagrams);
    cfg.diagrams.as_mut().unwrap().endings[1] = "q".into();
    assert!(validate(&cfg).iter().any(|x| x.path == "diagrams.endings[1]"));
}

#[test]
fn exact_operator_with_direct_feedback_warns() {
    let mut cfg = RunConfig::preset(Mode::Simulate);
    cfg.fb = FeedbackSpec::DirectLinear { delta0: 0.0, delta1: 0.8 };
    let v = validate(&cfg);
    assert!(!has_errors(&v));
    assert!(v.iter().any(|x| x.path == "ensemble.scheme" && x.severity == Severity::Warning));
}
