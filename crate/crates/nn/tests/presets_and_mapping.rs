mod common;

use cim_core::device::{LevelScheme, RramParams, TftParams};
use cim_core::periphery::QuantConfig;
use cim_core::tile::{Tile, TileGeometry};
use cim_nn::network::Op;
use cim_nn::{build_network, map_network, FloatWeights, NnError, QuantizedNetwork, Shape};

fn template() -> Tile {
    Tile::new(TileGeometry::default(), TftParams::reference(), RramParams::reference()).unwrap()
}

#[test]
fn vgg16_shapes() {
    let spec = build_network("vgg16", None).unwrap();
    let shapes = spec.shapes().unwrap();
    // Five 2×2 pools take 32×32 down to 1×1.
    let last_conv = shapes[spec.layers.len() - 3];
    assert_eq!(last_conv, Shape::new(1, 1, 512));
    let wl = spec.weighted().unwrap();
    assert_eq!(wl.len(), 16);
    assert_eq!(wl.iter().filter(|l| l.is_conv).count(), 13);
    assert_eq!((wl[13].depth, wl[13].out), (512, 512));
    assert_eq!(wl[0].depth, 27);
    assert_eq!(*shapes.last().unwrap(), Shape::new(1, 1, 10));
}

#[test]
fn vgg_mini_shapes() {
    let spec = build_network("vgg-mini", None).unwrap();
    let wl = spec.weighted().unwrap();
    let dims: Vec<(usize, usize)> = wl.iter().map(|l| (l.depth, l.out)).collect();
    assert_eq!(
        dims,
        vec![(9, 32), (288, 32), (288, 64), (576, 64), (576, 128), (1152, 128), (3 * 3 * 128, 256), (256, 10)]
    );
    assert_eq!(spec.ops().unwrap().iter().filter(|o| matches!(o, Op::MaxPool { .. })).count(), 3);
    assert!(matches!(build_network("vgg-17", None), Err(NnError::UnknownPreset(_))));
}

#[test]
fn tile_counts_follow_the_block_formula() {
    let spec = build_network("vgg-mini", None).unwrap();
    let w = FloatWeights::init(&spec, 0).unwrap();
    let quant = QuantConfig::default();
    let net = QuantizedNetwork::new(&spec, &w, &quant).unwrap();
    let m = map_network(net, template(), LevelScheme::UniformConductance, None).unwrap();
    // A slot holds 8 rows × 8 layers of depth and 8 output columns; every
    // slot uses 2 polarities × n_slices planes.
    let planes = 2 * quant.n_slices();
    assert_eq!(planes, 4);
    let expect = |d: usize, o: usize| d.div_ceil(64) * o.div_ceil(8) * planes;
    assert_eq!(m.layers[0].n_tiles(), expect(9, 32));
    assert_eq!(m.layers[0].n_tiles(), 16);
    let wl = spec.weighted().unwrap();
    let total: usize = wl.iter().map(|l| expect(l.depth, l.out)).sum();
    assert_eq!(m.total_tiles(), total);
    // Tiles are numbered contiguously across the network.
    let mut next = 0;
    for l in &m.layers {
        for a in &l.assignments {
            assert_eq!(a.first_tile, next);
            next += a.n_planes;
        }
    }
}

#[test]
fn tile_budget_is_enforced() {
    let spec = build_network("vgg-mini", None).unwrap();
    let w = FloatWeights::init(&spec, 0).unwrap();
    let net = QuantizedNetwork::new(&spec, &w, &QuantConfig::default()).unwrap();
    let total = map_network(net.clone(), template(), LevelScheme::UniformConductance, None)
        .unwrap()
        .total_tiles();
    assert!(map_network(net.clone(), template(), LevelScheme::UniformConductance, Some(total)).is_ok());
    match map_network(net, template(), LevelScheme::UniformConductance, Some(100)) {
        Err(NnError::Capacity { required, budget, .. }) => assert_eq!((required, budget), (total, 100)),
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn vgg16_maps_without_capacity_errors() {
    let spec = build_network("vgg16", Some(Shape::new(32, 32, 1))).unwrap();
    let w = FloatWeights::zeros(&spec).unwrap();
    let net = QuantizedNetwork::new(&spec, &w, &QuantConfig::default()).unwrap();
    let m = map_network(net, template(), LevelScheme::UniformConductance, None).unwrap();
    m.check().unwrap();
    assert!(m.total_tiles() > 10_000);
}
