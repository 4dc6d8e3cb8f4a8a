//! Independent reference computations the library is checked against.

use std::collections::BTreeMap;

use aan_core::dataset::{generate_synthetic_cohort, CohortSpec};
use aan_core::network::{predicted_class, Model, ModelConfig};

/// Plain batch-gradient-descent logistic regression with a bias term.
fn logistic_regression(x: &[Vec<f64>], y: &[u8], epochs: usize, lr: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..epochs {
        let mut g = vec![0.0; d + 1];
        for (row, &label) in x.iter().zip(y) {
            let z = w[d] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - label as f64;
            for (gi, xi) in g.iter_mut().zip(row) {
                *gi += err * xi;
            }
            g[d] += err;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * gi / x.len() as f64;
        }
    }
    w
}

fn lr_accuracy(w: &[f64], x: &[Vec<f64>], y: &[u8]) -> f64 {
    let d = w.len() - 1;
    let hits = x
        .iter()
        .zip(y)
        .filter(|(row, &label)| {
            let z = w[d] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            u8::from(z > 0.0) == label
        })
        .count();
    hits as f64 / x.len() as f64
}

#[test]
fn synthetic_cohort_is_linearly_learnable_from_bag_of_events() {
    let cohort = generate_synthetic_cohort(&CohortSpec::default(), 1).unwrap();
    assert_eq!(cohort.len(), 40);
    let vocab: BTreeMap<&str, usize> = {
        let mut words: Vec<&str> = cohort
            .iter()
            .flat_map(|c| c.events.iter().map(|e| e.event.as_str()))
            .collect();
        words.sort();
        words.dedup();
        words.into_iter().enumerate().map(|(i, w)| (w, i)).collect()
    };
    let x: Vec<Vec<f64>> = cohort
        .iter()
        .map(|c| {
            let mut v = vec![0.0; vocab.len()];
            for e in &c.events {
                v[vocab[e.event.as_str()]] += 1.0;
            }
            v
        })
        .collect();
    let y: Vec<u8> = cohort.iter().map(|c| c.risk.unwrap()).collect();
    let w = logistic_regression(&x, &y, 2000, 0.5);
    let acc = lr_accuracy(&w, &x, &y);
    assert!(acc > 0.9, "bag-of-events training accuracy {acc}");
}

/// Eight points in R^6 split by the sign of the first two coordinates' sum,
/// with a clear margin.
fn toy_set() -> (Vec<Vec<f64>>, Vec<u8>) {
    let x = vec![
        vec![1.5, 1.0, 0.3, -0.2, 0.5, 0.1],
        vec![2.0, 0.2, -0.4, 0.9, -0.3, 0.0],
        vec![0.8, 1.7, 0.1, 0.1, 0.2, -0.6],
        vec![1.2, 1.1, -0.8, -0.5, 0.7, 0.4],
        vec![-1.4, -0.9, 0.2, 0.3, -0.1, 0.5],
        vec![-0.6, -2.1, -0.3, -0.7, 0.4, -0.2],
        vec![-1.9, -0.4, 0.6, 0.2, -0.8, 0.3],
        vec![-1.0, -1.3, -0.1, 0.8, 0.0, -0.4],
    ];
    let y = vec![1, 1, 1, 1, 0, 0, 0, 0];
    (x, y)
}

fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden1: 16,
        hidden2: 8,
        epochs: 200,
        seed,
        ..ModelConfig::default()
    }
}

#[test]
fn toy_set_is_separable_by_the_reference_classifier() {
    let (x, y) = toy_set();
    let w = logistic_regression(&x, &y, 500, 0.5);
    assert_eq!(lr_accuracy(&w, &x, &y), 1.0);
}

#[test]
fn network_fits_the_separable_toy_set() {
    let (x, y) = toy_set();
    let mut model = Model::init(toy_config(0)).unwrap();
    let history = model.train(&x, &y).unwrap();
    assert_eq!(history.len(), 200);
    let preds: Vec<u8> = model
        .predict_proba(&x)
        .unwrap()
        .into_iter()
        .map(predicted_class)
        .collect();
    assert_eq!(preds, y);
}

#[test]
fn loss_decreases_for_nine_of_ten_seeds() {
    let (x, y) = toy_set();
    let decreased = (0..10)
        .filter(|&seed| {
            let mut model = Model::init(toy_config(seed)).unwrap();
            let h = model.train(&x, &y).unwrap();
            h[199] < h[0]
        })
        .count();
    assert!(decreased >= 9, "{decreased}/10");
}
