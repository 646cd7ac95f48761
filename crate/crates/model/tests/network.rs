use cogfuse_model::fusion::FusionBlock;
use cogfuse_model::{
    AuxSource, AuxStage, FusionConfig, FusionNetwork, ModelError, NetInput, SsProvider, STRATEGIES,
};
use cogfuse_tensor::{read_checkpoint, write_checkpoint, Graph, Initializer, ParamId, ParamStore, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input<T: Real>(cfg: &FusionConfig, batch: usize, seed: u64) -> NetInput<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.input_size;
    let mut fill = |shape: Vec<usize>, lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_f64(shape, &v).unwrap()
    };
    let image = fill(vec![batch, 3, s, s], 0.0, 1.0);
    let lidar = fill(vec![batch, 2, s, s], 0.0, 1.0);
    let speed = fill(vec![batch, 1], 0.0, 6.0);
    let goal = fill(vec![batch, 2], -30.0, 30.0);
    let aux = (cfg.aux_source == AuxSource::SsFeatures && cfg.ss_provider == SsProvider::GroundTruth).then(|| {
        let a = cfg.aux_input_size();
        let c = cfg.semantic_classes;
        let mut data = vec![0.0; batch * c * a * a];
        for b in 0..batch {
            for p in 0..a * a {
                data[(b * c + rng.random_range(0..c)) * a * a + p] = 1.0;
            }
        }
        Tensor::from_f64(vec![batch, c, a, a], &data).unwrap()
    });
    NetInput {
        image,
        lidar,
        speed,
        goal,
        aux,
    }
}

fn param<T: Real>(store: &ParamStore<T>, name: &str) -> ParamId {
    store.id(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

fn zero<T: Real>(store: &mut ParamStore<T>, name: &str) {
    let id = param(store, name);
    store.get_mut(id).tensor.data_mut().fill(T::zero());
}

#[test]
fn every_strategy_produces_correctly_shaped_outputs() {
    for s in &STRATEGIES {
        let cfg = FusionConfig::tiny().with_strategy(s);
        let (net, store) = FusionNetwork::build::<f32>(&cfg, 3).unwrap();
        let input = random_input::<f32>(&cfg, 2, 1);
        let mut g = Graph::new();
        let out = net.forward(&mut g, &store, &input).unwrap();
        assert_eq!(g.shape(out.waypoints), [2, 4, 2], "{}", s.name);
        assert!(g.value(out.waypoints).is_finite(), "{}", s.name);
        assert_eq!(out.has_tl(), s.head_tl, "{}", s.name);
        assert_eq!(out.has_ss(), s.head_ss, "{}", s.name);
        if s.head_tl {
            assert_eq!(g.shape(out.tl_logits().unwrap()), [2, 2]);
        } else {
            assert!(matches!(out.tl_logits(), Err(ModelError::Config(_))));
        }
        if s.head_ss {
            assert_eq!(g.shape(out.ss_logits().unwrap()), [2, cfg.semantic_classes, 64, 64]);
        } else {
            assert!(out.ss_logits().is_err());
        }
    }
}

#[test]
fn encoder_stages_follow_the_channel_schedule() {
    let cfg = FusionConfig::tiny();
    let (net, store) = FusionNetwork::build::<f32>(&cfg, 0).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[2, 3, 64, 64]));
    let stages = net.image_encoder.forward_all(&mut g, &store, x).unwrap();
    for (k, v) in stages.iter().enumerate() {
        let side = 64 >> (k + 2);
        assert_eq!(g.shape(*v), [2, cfg.block_dims[k], side, side]);
        assert!(g.value(*v).is_finite());
    }
    let bad = g.input(Tensor::zeros(&[1, 3, 32, 32]));
    assert!(matches!(
        net.image_encoder.forward_all(&mut g, &store, bad),
        Err(ModelError::Dimension(_))
    ));
}

#[test]
fn one_pixel_reaches_every_encoder_stage() {
    let cfg = FusionConfig::tiny();
    let (net, store) = FusionNetwork::build::<f64>(&cfg, 5).unwrap();
    let base = random_input::<f64>(&cfg, 1, 9).image;
    let mut poked = base.clone();
    poked.data_mut()[3 * 64 + 17] += 0.5;
    let run = |img: &Tensor<f64>| {
        let mut g = Graph::new();
        let x = g.input(img.clone());
        let st = net.image_encoder.forward_all(&mut g, &store, x).unwrap();
        st.map(|v| g.data(v).to_vec())
    };
    let (a, b) = (run(&base), run(&poked));
    for k in 0..4 {
        assert!(a[k].iter().zip(&b[k]).any(|(x, y)| x != y), "stage {k} unchanged");
    }
    assert_eq!(run(&base), a);
}

#[test]
fn aux_gradients_reach_exactly_the_selected_blocks() {
    for s in STRATEGIES.iter().filter(|s| s.aux_source != AuxSource::None) {
        let cfg = FusionConfig::tiny().with_strategy(s);
        let (net, store) = FusionNetwork::build::<f64>(&cfg, 11).unwrap();
        let input = random_input::<f64>(&cfg, 2, 4);
        let mut g = Graph::new();
        let out = net.forward(&mut g, &store, &input).unwrap();
        let m = g.mean_all(out.waypoints);
        let grads = g.backward(m).unwrap();
        let per = cfg.tokens_per_modality();
        for k in 0..4 {
            let proj = net.aux_projection(k).expect("projection exists for every block");
            let reached = grads.param(proj.w).is_some_and(|d| d.iter().any(|&v| v != 0.0));
            assert_eq!(reached, s.aux_stage.injects(k), "{} block {}", s.name, k + 1);
            // Positional rows of the auxiliary token group are live only when injected.
            let pos = grads.param(net.blocks[k].position).unwrap();
            let dim = cfg.block_dims[k];
            let aux_rows_live = pos[2 * per * dim..].iter().any(|&v| v != 0.0);
            assert_eq!(aux_rows_live, s.aux_stage.injects(k), "{} block {}", s.name, k + 1);
        }
    }
}

#[test]
fn token_count_follows_the_injection_stage() {
    let cfg = FusionConfig {
        aux_source: AuxSource::SsFeatures,
        aux_stage: AuxStage::Early,
        ..FusionConfig::full()
    };
    let per = cfg.tokens_per_modality();
    assert_eq!(per, 64);
    let counts: Vec<usize> = (0..4).map(|k| per * if cfg.aux_injected(k) { 3 } else { 2 }).collect();
    assert_eq!(counts, [192, 128, 128, 128]);
}

#[test]
fn aux_features_at_an_unselected_block_are_rejected() {
    let cfg = FusionConfig {
        aux_source: AuxSource::SsFeatures,
        aux_stage: AuxStage::Late,
        ..FusionConfig::tiny()
    };
    let mut store = ParamStore::<f32>::new();
    let block = FusionBlock::new(&mut store, &Initializer::new(0), &cfg, 0).unwrap();
    let mut g = Graph::new();
    let img = g.input(Tensor::zeros(&[1, 4, 16, 16]));
    let lid = g.input(Tensor::zeros(&[1, 4, 16, 16]));
    let aux = g.input(Tensor::zeros(&[1, 7, 32, 32]));
    let v = g.input(Tensor::zeros(&[1, 1]));
    assert!(matches!(
        block.forward(&mut g, &store, img, lid, Some(aux), v),
        Err(ModelError::Config(_))
    ));
}

fn block_io(store: &ParamStore<f64>, block: &FusionBlock, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_f64(shape.to_vec(), &v).unwrap()
    };
    let mut g = Graph::new();
    let img = g.input(rand(&[2, 4, 16, 16]));
    let lid = g.input(rand(&[2, 4, 16, 16]));
    let v = g.input(rand(&[2, 1]));
    let (a, b) = block.forward(&mut g, store, img, lid, None, v).unwrap();
    (g.data(img).to_vec(), g.data(lid).to_vec(), g.data(a).to_vec(), g.data(b).to_vec())
}

#[test]
fn zero_output_projection_makes_the_block_an_identity() {
    let cfg = FusionConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let block = FusionBlock::new(&mut store, &Initializer::new(2), &cfg, 0).unwrap();
    let t = "fusion.block0.transformer";
    for n in ["attn.wo.w", "attn.wo.b", "ff2.w", "ff2.b"] {
        zero(&mut store, &format!("{t}.{n}"));
    }
    let (img, lid, img2, lid2) = block_io(&store, &block, 1);
    assert_eq!(img, img2);
    assert_eq!(lid, lid2);
}

#[test]
fn uniform_attention_adds_a_spatially_constant_update() {
    let cfg = FusionConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let block = FusionBlock::new(&mut store, &Initializer::new(4), &cfg, 0).unwrap();
    let t = "fusion.block0.transformer";
    for n in ["attn.wq.w", "attn.wq.b", "attn.wk.w", "attn.wk.b", "attn.wv.w", "ff2.w", "ff2.b"] {
        zero(&mut store, &format!("{t}.{n}"));
    }
    let (img, _, img2, _) = block_io(&store, &block, 3);
    let plane = 16 * 16;
    let mut any_nonzero = false;
    for (inp, out) in img.chunks(plane).zip(img2.chunks(plane)) {
        let d0 = out[0] - inp[0];
        any_nonzero |= d0.abs() > 1e-9;
        for (a, b) in inp.iter().zip(out) {
            assert!(((b - a) - d0).abs() < 1e-12);
        }
    }
    assert!(any_nonzero);
}

#[test]
fn zero_delta_layer_keeps_every_waypoint_at_the_origin() {
    let cfg = FusionConfig::tiny();
    let (net, mut store) = FusionNetwork::build::<f64>(&cfg, 8).unwrap();
    zero(&mut store, "decoder.delta.w");
    zero(&mut store, "decoder.delta.b");
    let wp = net.predict(&store, &random_input(&cfg, 3, 2)).unwrap();
    assert!(wp.iter().flatten().all(|p| *p == [0.0, 0.0]));

    let b = param(&store, "decoder.delta.b");
    store.get_mut(b).tensor.data_mut().copy_from_slice(&[1.0, 0.0]);
    let wp = net.predict(&store, &random_input(&cfg, 1, 2)).unwrap();
    assert_eq!(wp[0], [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]);
}

#[test]
fn waypoints_are_the_prefix_sum_of_deltas() {
    for seed in 0..10 {
        let cfg = FusionConfig::tiny();
        let (net, store) = FusionNetwork::build::<f32>(&cfg, seed).unwrap();
        let mut g = Graph::new();
        let out = net.forward(&mut g, &store, &random_input(&cfg, 2, seed)).unwrap();
        let (w, d) = (g.data(out.waypoints), g.data(out.deltas));
        for b in 0..2 {
            let mut prev = [0.0f32; 2];
            for t in 0..4 {
                let i = (b * 4 + t) * 2;
                assert_eq!(w[i], prev[0] + d[i]);
                assert_eq!(w[i + 1], prev[1] + d[i + 1]);
                prev = [w[i], w[i + 1]];
            }
        }
    }
}

#[test]
fn goal_and_velocity_change_the_waypoints() {
    let cfg = FusionConfig::tiny();
    let (net, store) = FusionNetwork::build::<f64>(&cfg, 21).unwrap();
    let base = random_input::<f64>(&cfg, 1, 5);
    let w0 = net.predict(&store, &base).unwrap();
    let mut moved = base.clone();
    moved.goal.data_mut()[1] += 5.0;
    assert_ne!(net.predict(&store, &moved).unwrap(), w0);
    let mut faster = base.clone();
    faster.speed.data_mut()[0] += 1.0;
    assert_ne!(net.predict(&store, &faster).unwrap(), w0);
    assert_eq!(net.predict(&store, &base).unwrap(), w0);
}

#[test]
fn zero_embedding_gives_an_even_traffic_light_split() {
    let cfg = FusionConfig {
        head_tl: true,
        ..FusionConfig::tiny()
    };
    let (net, mut store) = FusionNetwork::build::<f64>(&cfg, 1).unwrap();
    for n in ["fuse.w", "fuse.b", "head_tl.hidden.b", "head_tl.out.b"] {
        zero(&mut store, n);
    }
    let mut g = Graph::new();
    let out = net.forward(&mut g, &store, &random_input(&cfg, 2, 1)).unwrap();
    let p = g.softmax(out.tl_logits().unwrap());
    for v in g.data(p) {
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn disabled_aux_path_matches_a_network_without_one() {
    let plain = FusionConfig::tiny();
    let (net, store) = FusionNetwork::build::<f32>(&plain, 6).unwrap();
    let input = random_input::<f32>(&plain, 2, 3);
    let reference = net.predict(&store, &input).unwrap();
    for s in STRATEGIES.iter().filter(|s| s.aux_source != AuxSource::None) {
        let cfg = FusionConfig {
            head_tl: false,
            head_ss: false,
            ..plain.with_strategy(s)
        };
        let (mut aux_net, aux_store) = FusionNetwork::build::<f32>(&cfg, 6).unwrap();
        aux_net.aux_enabled = false;
        let same_input = NetInput {
            aux: None,
            ..input.clone()
        };
        assert_eq!(aux_net.predict(&aux_store, &same_input).unwrap(), reference, "{}", s.name);
    }
}

#[test]
fn forward_is_deterministic_and_survives_a_checkpoint_round_trip() {
    let cfg = FusionConfig::tiny().with_strategy(cogfuse_model::strategy_by_name("early_ss_aux_head_tl").unwrap());
    let (net, store) = FusionNetwork::build::<f32>(&cfg, 13).unwrap();
    let input = random_input::<f32>(&cfg, 2, 8);
    let a = net.predict(&store, &input).unwrap();
    assert_eq!(net.predict(&store, &input).unwrap(), a);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &store).unwrap();
    let loaded = read_checkpoint(&bytes[..]).unwrap();
    let (net2, mut store2) = FusionNetwork::build::<f32>(&cfg, 99).unwrap();
    assert_ne!(net2.predict(&store2, &input).unwrap(), a);
    store2.load_from(&loaded).unwrap();
    assert_eq!(net2.predict(&store2, &input).unwrap(), a);
}

#[test]
fn malformed_inputs_are_dimension_errors() {
    let cfg = FusionConfig::tiny();
    let (net, store) = FusionNetwork::build::<f32>(&cfg, 0).unwrap();
    let mut input = random_input::<f32>(&cfg, 2, 0);
    input.goal = Tensor::zeros(&[2, 3]);
    let mut g = Graph::new();
    assert!(matches!(net.forward(&mut g, &store, &input), Err(ModelError::Dimension(_))));
    let ss = FusionConfig {
        aux_source: AuxSource::SsFeatures,
        ..cfg
    };
    let (net, store) = FusionNetwork::build::<f32>(&ss, 0).unwrap();
    let input = random_input::<f32>(&FusionConfig::tiny(), 1, 0);
    assert!(matches!(net.forward(&mut g, &store, &input), Err(ModelError::Data(_))));
}
