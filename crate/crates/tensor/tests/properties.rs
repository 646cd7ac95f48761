use cogfuse_tensor::{Graph, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(|v| v.into_iter().map(|x| x as f32).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..12, seed in matrix(4, 11, 40.0)) {
        let data: Vec<f32> = seed.iter().cycle().take(rows * cols).copied().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(vec![rows, cols], data).unwrap());
        let y = g.softmax(x);
        for row in g.data(y).chunks(cols) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(cols in 4usize..64, data in prop::collection::vec(-10.0f64..10.0, 64), shift in -100.0f64..100.0) {
        let row: Vec<f64> = data[..cols].iter().map(|v| v + shift).collect();
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        prop_assume!(var > 0.1);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![1, cols], row).unwrap());
        let y = g.layer_norm(x, None).unwrap();
        let out = g.data(y);
        let m = out.iter().sum::<f64>() / cols as f64;
        let v = out.iter().map(|o| (o - m).powi(2)).sum::<f64>() / cols as f64;
        prop_assert!(m.abs() < 1e-5);
        prop_assert!((v - 1.0).abs() < 1e-4, "variance {v} for input variance {var}");
    }

    #[test]
    fn forward_is_bit_deterministic(data in matrix(3, 8, 3.0), w in matrix(8, 8, 1.0)) {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.input(Tensor::new(vec![3, 8], data.clone()).unwrap());
            let wv = g.input(Tensor::new(vec![8, 8], w.clone()).unwrap());
            let h = g.linear(x, wv, None).unwrap();
            let h = g.layer_norm(h, None).unwrap();
            let h = g.tanh(h);
            let s = g.softmax(h);
            g.data(s).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
