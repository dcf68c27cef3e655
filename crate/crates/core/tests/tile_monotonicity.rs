use cim_core::device::{program_to_level, LevelScheme, RramParams, TftParams};
use cim_core::tile::{ReadStimulus, Tile, TileGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn raising_a_selected_cell_never_lowers_its_column() {
    let rram = RramParams::reference();
    let g = TileGeometry {
        n_rows: 4,
        n_cols: 4,
        n_layers: 4,
        r_wl: 5.0,
        r_bl: 20.0,
        r_sl: 20.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..100 {
        let mut tile = Tile::new(g, TftParams::reference(), rram).unwrap();
        tile.program_levels(LevelScheme::UniformConductance, |_, _, _| rng.random_range(0..32)).unwrap();
        let layer = rng.random_range(0..4);
        let mut bits: Vec<bool> = (0..4).map(|_| rng.random()).collect();
        // Selected: gate on and row driven. A cell on an undriven row leaks
        // from the select line back into its bit line instead.
        let r = rng.random_range(0..4);
        bits[r] = true;
        let stim = ReadStimulus::single_layer(&g, layer, bits.clone());
        let before = tile.mac_with_ir_drop(&stim).unwrap();
        let c = rng.random_range(0..4);
        let old = tile.cell(r, c, layer).unwrap().level as usize;
        let new = rng.random_range(old..32);
        tile.set_cell(r, c, layer, program_to_level(&rram, new, LevelScheme::UniformConductance).unwrap())
            .unwrap();
        let after = tile.mac_with_ir_drop(&stim).unwrap();
        assert!(
            after.column_currents[c] >= before.column_currents[c],
            "trial {trial}: {} < {}",
            after.column_currents[c],
            before.column_currents[c]
        );
        for v in before.solution.bl.iter().chain(&before.solution.pillar).chain(&before.solution.sl) {
            assert!((0.0..=0.5).contains(v), "trial {trial}: node at {v}");
        }
        // With every row driven no bit line can be lifted by a neighbour, so
        // parasitics only ever remove current.
        let all = ReadStimulus::single_layer(&g, layer, vec![true; 4]);
        let ir = tile.mac_with_ir_drop(&all).unwrap().column_currents;
        let ideal = tile.ideal_mac(&all).unwrap();
        for (a, b) in ir.iter().zip(&ideal) {
            assert!(a <= b, "trial {trial}: {a:e} > {b:e}");
        }
    }
}
