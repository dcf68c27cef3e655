mod common;

use cim_nn::mapping::dropped_columns;
use cim_nn::network::LayerSpec;
use cim_nn::{build_network, prune_channels, FloatWeights};

#[test]
fn each_column_is_dropped_one_step_in_eight() {
    let steps = 10_000u64;
    let slots = [3usize, 2];
    let mut hits = vec![[0u32; 8]; 5];
    for step in 0..steps {
        let d = dropped_columns(42, step, &slots, 8, 1);
        let flat: Vec<&Vec<usize>> = d.iter().flatten().collect();
        assert_eq!(flat.len(), 5);
        for (s, cols) in flat.iter().enumerate() {
            assert_eq!(cols.len(), 1);
            hits[s][cols[0]] += 1;
        }
    }
    for slot in &hits {
        for &h in slot {
            let f = f64::from(h) / steps as f64;
            assert!((f - 0.125).abs() < 0.01, "frequency {f}");
        }
    }
    // Same seed and step, same mask; a different step differs somewhere.
    assert_eq!(dropped_columns(42, 7, &slots, 8, 1), dropped_columns(42, 7, &slots, 8, 1));
    assert!((0..20).any(|s| dropped_columns(42, s, &slots, 8, 1) != dropped_columns(42, 7, &slots, 8, 1)));
}

#[test]
fn pruning_keeps_the_dominant_channel() {
    let spec = build_network("vgg-mini", None).unwrap();
    let mut w = FloatWeights::init(&spec, 1).unwrap();
    let out = w.layers[2].out;
    for row in w.layers[2].w.chunks_exact_mut(out) {
        row[17] = 5.0;
    }
    let p = prune_channels(&spec, &w, 0.75).unwrap();
    let kept = p.kept[2].as_ref().unwrap();
    assert_eq!(kept.len(), out - (0.75 * out as f64) as usize);
    assert!(kept.contains(&17));
    // The next layer lost the matching input rows.
    assert_eq!(p.weights.layers[3].depth, 9 * kept.len());
    assert!(matches!(p.spec.layers[3], LayerSpec::Conv { out_channels, .. } if out_channels == kept.len()));
    // Dense layers are left alone; the flatten feeding them shrinks.
    assert!(p.kept[6].is_none() && p.kept[7].is_none());
    assert_eq!(p.weights.layers[7].depth, 256);
    assert!(prune_channels(&spec, &w, 1.0).is_err());
    assert!(prune_channels(&spec, &w, -0.1).is_err());
}

#[test]
fn ties_keep_the_lower_index() {
    let spec = common::tiny_spec();
    let mut w = FloatWeights::init(&spec, 0).unwrap();
    w.layers[0].w.fill(1.0);
    let p = prune_channels(&spec, &w, 0.5).unwrap();
    assert_eq!(p.kept[0].as_deref(), Some(&[0, 1, 2, 3][..]));
}
