use fusebench::config::{parse_config, Config, KEYS};
use proptest::prelude::*;

fn value_for(key: &'static str) -> BoxedStrategy<String> {
    match key {
        "data.img" | "data.txt" | "data.labels" => {
            "[a-z]{1,8}(/[a-z0-9_]{1,8}){0,2}\\.(feat|csv)".boxed()
        }
        "data.n_train" => (1usize..50_000).prop_map(|v| v.to_string()).boxed(),
        "head.kind" => prop::sample::select(vec!["mlp", "gmlp"])
            .prop_map(String::from)
            .boxed(),
        "head.activation" => prop::sample::select(vec!["gelu", "relu", "leaky_relu"])
            .prop_map(String::from)
            .boxed(),
        "head.dropout" => (0.0f32..0.95).prop_map(|v| v.to_string()).boxed(),
        "loss.kind" => prop::sample::select(vec!["bce", "focal", "asl"])
            .prop_map(String::from)
            .boxed(),
        "loss.gamma_pos" | "loss.gamma_neg" => (0.0f64..6.0).prop_map(|v| v.to_string()).boxed(),
        "loss.clip" => (0.0f64..0.5).prop_map(|v| v.to_string()).boxed(),
        "optim.lr" => (1e-6f64..1.0).prop_map(|v| v.to_string()).boxed(),
        "optim.ema.enabled" => any::<bool>().prop_map(|v| v.to_string()).boxed(),
        "optim.ema.alpha" => (0.0f64..0.999).prop_map(|v| v.to_string()).boxed(),
        "fusion.strategy" => {
            prop::sample::select(vec!["image_only", "text_only", "concat", "sum", "mixed"])
                .prop_map(String::from)
                .boxed()
        }
        "train.epochs" => (1usize..1000).prop_map(|v| v.to_string()).boxed(),
        "train.batch_size" => prop_oneof![
            Just("full".to_string()),
            (1usize..30_000).prop_map(|v| v.to_string())
        ]
        .boxed(),
        "train.seed" => any::<u64>().prop_map(|v| v.to_string()).boxed(),
        "eval.threshold" => (0.0f64..=1.0).prop_map(|v| v.to_string()).boxed(),
        "eval.averaging" => prop::sample::select(vec!["samples", "macro", "micro"])
            .prop_map(String::from)
            .boxed(),
        _ => unreachable!("{key}"),
    }
}

/// Keys whose values interact (class count, layer widths) are covered by
/// the fixed lines below instead.
fn free_keys() -> Vec<&'static str> {
    KEYS.iter()
        .copied()
        .filter(|k| !matches!(*k, "data.classes" | "head.layers"))
        .collect()
}

fn config_lines() -> impl Strategy<Value = Vec<(String, String)>> {
    let keys = free_keys();
    prop::collection::vec(prop::sample::select(keys), 0..30).prop_flat_map(|keys| {
        keys.into_iter()
            .map(|k| value_for(k).prop_map(move |v| (k.to_string(), v)))
            .collect::<Vec<_>>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn serialize_then_parse_is_identity(
        lines in config_lines(),
        widths in prop::sample::select(vec!["auto,2048,512,18", "768,64,18", "auto,18", "32,16,16,18"]),
    ) {
        let mut text = format!("head.layers = {widths}\n# comment\n");
        for (k, v) in &lines {
            text.push_str(&format!("{k} = {v}   # trailing\n"));
        }
        let cfg = parse_config(&text, "t").unwrap();
        let again = parse_config(&cfg.serialize(), "t").unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.serialize(), cfg.serialize());
    }
}

#[test]
fn paper_grid_values_parse() {
    let c = parse_config("head.layers = 768,2048,512,18\nloss.kind = asl\n", "t").unwrap();
    assert_eq!(c.head_template().layer_dims, vec![768, 2048, 512, 18]);
    let loss = c.loss().unwrap();
    assert_eq!(
        (loss.gamma_pos, loss.gamma_neg, loss.clip),
        (1.0, 4.0, 0.05)
    );
    assert_eq!(
        Config::default(),
        parse_config("# nothing\n\n", "t").unwrap()
    );
}

#[test]
fn unknown_keys_and_bad_values_name_their_line() {
    let err = parse_config("optim.lr = 0.1\nhead.widths = 3\n", "cfg")
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 2"), "{err}");
    let err = parse_config("\n\ntrain.epochs = 0\n", "cfg")
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 3"), "{err}");
    let err = parse_config("head.dropout = 1.0\n", "cfg")
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn shipped_best_pipeline_is_the_default_profile() {
    let text = include_str!("../../../configs/best_pipeline.conf");
    let mut cfg = parse_config(text, "best_pipeline.conf").unwrap();
    assert!(cfg.img.is_some() && cfg.txt.is_some() && cfg.labels.is_some());
    (cfg.img, cfg.txt, cfg.labels) = (None, None, None);
    assert_eq!(cfg, Config::default());
}
