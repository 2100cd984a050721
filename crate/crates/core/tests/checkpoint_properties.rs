use std::path::PathBuf;

use mtforge::checkpoint::{
    average, finetune_select, last_k, order_checkpoints, Selected, Tensor, TensorBundle,
};
use mtforge::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_bundle(seed: u64, stream: u64, shapes: &[Vec<usize>], lo: f64, hi: f64) -> TensorBundle {
    let mut r = rng::stream(seed, stream);
    let entries = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
            (
                format!("layer{i}.weight"),
                Tensor::new(s.clone(), data).unwrap(),
            )
        })
        .collect();
    TensorBundle::new(entries).unwrap()
}

fn max_diff(a: &TensorBundle, b: &TensorBundle) -> f64 {
    a.entries()
        .iter()
        .zip(b.entries())
        .flat_map(|((_, x), (_, y))| x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn properties_on_large_bundles() {
    let shapes = vec![vec![500, 1000], vec![1000, 400], vec![100_000], vec![]];
    let bundles: Vec<TensorBundle> = (0..5)
        .map(|i| random_bundle(1, i, &shapes, -1.0, 1.0))
        .collect();
    assert!(bundles[0].num_params() >= 1_000_000);

    assert_eq!(max_diff(&average(&bundles[..1]).unwrap(), &bundles[0]), 0.0);

    let zeros = bundles[0].map(|_| 0.0);
    let twos = bundles[0].map(|_| 2.0);
    let mid = average(&[zeros, twos]).unwrap();
    assert!(mid
        .entries()
        .iter()
        .all(|(_, t)| t.data.iter().all(|&v| (v - 1.0).abs() < 1e-12)));

    let avg = average(&bundles).unwrap();
    let scaled: Vec<TensorBundle> = bundles.iter().map(|b| b.map(|v| 3.5 * v)).collect();
    assert!(max_diff(&average(&scaled).unwrap(), &avg.map(|v| 3.5 * v)) < 1e-12);

    let mut shuffled = bundles.clone();
    shuffled.shuffle(&mut rng::seeded(4));
    assert!(max_diff(&average(&shuffled).unwrap(), &avg) < 1e-12);

    for (name, t) in avg.entries() {
        let lo = bundles.iter().map(|b| b.get(name).unwrap());
        for (i, &v) in t.data.iter().enumerate() {
            let vals: Vec<f64> = lo.clone().map(|b| b.data[i]).collect();
            let (mn, mx) = vals
                .iter()
                .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            assert!(v >= mn - 1e-12 && v <= mx + 1e-12);
        }
    }
}

#[test]
fn duplicates_average_to_themselves() {
    let b = random_bundle(2, 0, &[vec![7, 3], vec![11]], -5.0, 5.0);
    let copies = vec![b.clone(); 7];
    assert!(max_diff(&average(&copies).unwrap(), &b) < 1e-12);
}

#[test]
fn incompatible_bundles_name_the_tensor() {
    let a = random_bundle(3, 0, &[vec![2, 2], vec![3]], 0.0, 1.0);
    let b = random_bundle(3, 1, &[vec![2, 2], vec![4]], 0.0, 1.0);
    let err = average(&[a, b]).unwrap_err().to_string();
    assert!(err.contains("layer1.weight"), "{err}");
}

#[test]
fn last_five_window() {
    let paths: Vec<PathBuf> = [10, 2, 7, 1, 30, 4, 5]
        .iter()
        .map(|s| PathBuf::from(format!("ckpt/checkpoint{s}.bin")))
        .collect();
    let ordered = order_checkpoints(paths);
    let names: Vec<String> = last_k(&ordered, 5)
        .unwrap()
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "checkpoint4.bin",
            "checkpoint5.bin",
            "checkpoint7.bin",
            "checkpoint10.bin",
            "checkpoint30.bin"
        ]
    );
    assert_eq!(last_k(&[1, 2, 3], 5).unwrap(), [1, 2, 3]);
    assert_eq!(last_k(&[1, 2, 3], 1).unwrap(), [3]);
    assert!(last_k::<u8>(&[], 5).is_err());
}

#[test]
fn finetune_selection_requires_strict_improvement() {
    let base = random_bundle(5, 0, &[vec![4]], 0.0, 1.0);
    let ft = random_bundle(5, 1, &[vec![4]], 0.0, 1.0);
    let (_, pick) = finetune_select(&base, &ft, |_| Ok(1.0), true).unwrap();
    assert_eq!(pick, Selected::Finetuned);
    let target = average(&[base.clone(), ft.clone()]).unwrap();
    let (chosen, pick) = finetune_select(&base, &ft, |b| Ok(-max_diff(b, &target)), true).unwrap();
    assert_eq!(pick, Selected::Averaged);
    assert_eq!(max_diff(&chosen, &target), 0.0);
    let (_, pick) = finetune_select(&ft, &ft, |b| Ok(b.entries()[0].1.data[0]), true).unwrap();
    assert_eq!(pick, Selected::Finetuned);
}

#[test]
fn container_round_trip_is_f32() {
    let b = random_bundle(6, 0, &[vec![3, 4], vec![], vec![2, 1, 2]], -1.0, 1.0);
    let back = TensorBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
    assert!(max_diff(&back, &b) < 1e-6);
    let again = TensorBundle::from_bytes(&back.to_bytes().unwrap()).unwrap();
    assert_eq!(max_diff(&again, &back), 0.0);
}
