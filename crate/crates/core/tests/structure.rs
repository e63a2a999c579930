use rst_core::model::{build, forward_detailed, ModelConfig, Plans};
use rst_core::{Graph, ParamSet, Tensor};

fn traced(cfg: &ModelConfig, size: usize) -> Graph<f32> {
    let ws = build::<f32>(cfg, 0).unwrap();
    let g = Graph::new().with_trace();
    let ps = ParamSet::constants(&g, &ws);
    let plans = Plans::new(cfg, size, size).unwrap();
    let x = g.constant(Tensor::full(&[3, size, size], 0.5));
    forward_detailed(&g, &x, &ps, cfg, &plans).unwrap();
    g
}

fn attention_blocks(g: &Graph<f32>, level: usize) -> usize {
    let prefix = format!("decoder.{level}.block.");
    let mut scopes: Vec<String> = g
        .trace()
        .into_iter()
        .filter(|r| r.op == "angular_bias" && r.scope.starts_with(&prefix))
        .map(|r| r.scope)
        .collect();
    scopes.dedup();
    scopes.len()
}

#[test]
fn attention_lives_only_in_the_decoder() {
    let cfg = ModelConfig::default();
    let g = traced(&cfg, 32);
    let trace = g.trace();
    for r in &trace {
        if r.op == "angular_bias" {
            assert!(r.scope.starts_with("decoder.") && r.scope.contains(".attn"), "{r:?}");
        }
        if r.scope.starts_with("encoder") {
            assert!(r.op != "softmax" && r.op != "angular_bias", "{r:?}");
        }
    }
    let counts: Vec<usize> = (0..cfg.levels).map(|l| attention_blocks(&g, l)).collect();
    assert_eq!(counts, vec![6, 6, 12]);
    for l in 0..cfg.levels {
        assert!(trace.iter().any(|r| r.scope.starts_with(&format!("encoder.{l}.block"))));
    }
}

#[test]
fn encoder_outputs_feed_one_decoder_add() {
    let cfg = ModelConfig::tiny();
    let ws = build::<f64>(&cfg, 0).unwrap();
    let g = Graph::new();
    let ps = ParamSet::track(&g, &ws);
    let plans = Plans::new(&cfg, 16, 16).unwrap();
    let x = g.constant(Tensor::full(&[3, 16, 16], 0.25));
    let out = forward_detailed(&g, &x, &ps, &cfg, &plans).unwrap();
    for l in 0..cfg.levels - 1 {
        let users = g.consumers(out.encoder[l].node().unwrap());
        let adds: Vec<_> = users.iter().filter(|r| r.scope.starts_with("decoder")).collect();
        assert_eq!(adds.len(), 1, "{users:?}");
        assert_eq!(adds[0].op, "add");
        assert_eq!(adds[0].scope, format!("decoder.{l}.skip"));
    }
}

#[test]
fn tiny_param_count_closed_form() {
    let cfg = ModelConfig::tiny();
    let (c0, c1, p) = (16usize, 32usize, 8usize);
    let ffn = |c: usize| 2 * c + 2 * c * p * (p / 2 + 1) + 4 * c * c;
    let rsas = |c: usize| 2 * c + 4 * c * c + 2 * (2 * 4 - 1) + 2 * (2 * 4 - 1);
    let dre = 4 * 486 + 27 * c0;
    let want = dre + ffn(c0) + ffn(c1) + 4 * c0 * c1 + 4 * c0 * c1 + rsas(c1) + ffn(c1) + rsas(c0) + ffn(c0) + 27 * c0;
    assert_eq!(cfg.param_count(), want);
    assert_eq!(build::<f32>(&cfg, 0).unwrap().param_count(), want);
}
