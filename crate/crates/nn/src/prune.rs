//! Output-channel pruning of convolution layers by L1 norm.

use crate::error::{NnError, Result};
use crate::network::{FloatWeights, LayerParams, LayerSpec, NetworkSpec};

#[derive(Debug, Clone)]
pub struct Pruned {
    pub spec: NetworkSpec,
    pub weights: FloatWeights,
    /// Kept output channels (original indices, ascending) per weighted layer;
    /// `None` for layers that are not pruned.
    pub kept: Vec<Option<Vec<usize>>>,
}

/// Remove the `floor(ratio · out)` lowest-L1 output channels of every
/// convolution and drop the matching input rows of the next weighted layer.
/// Ties keep the lower channel index.
pub fn prune_channels(spec: &NetworkSpec, w: &FloatWeights, ratio: f64) -> Result<Pruned> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(NnError::input(format!("prune ratio {ratio} outside [0, 1)")));
    }
    w.check(spec)?;
    let wl = spec.weighted()?;
    let mut spec = spec.clone();
    let mut layers: Vec<LayerParams> = w.layers.clone();
    let mut kept = vec![None; wl.len()];
    for n in 0..wl.len() {
        if !wl[n].is_conv {
            continue;
        }
        let p = &layers[n];
        let drop = (ratio * p.out as f64).floor() as usize;
        if drop >= p.out {
            return Err(NnError::input(format!(
                "ratio {ratio} leaves no channels in weighted layer {n}"
            )));
        }
        let mut norm = vec![0.0f64; p.out];
        for row in p.w.chunks_exact(p.out) {
            for (a, &v) in norm.iter_mut().zip(row) {
                *a += f64::from(v.abs());
            }
        }
        let mut order: Vec<usize> = (0..p.out).collect();
        order.sort_by(|&a, &b| norm[b].total_cmp(&norm[a]).then(a.cmp(&b)));
        let mut keep: Vec<usize> = order[..p.out - drop].to_vec();
        keep.sort_unstable();

        let old = p.out;
        let pl = &mut layers[n];
        pl.w = pl
            .w
            .chunks_exact(old)
            .flat_map(|row| keep.iter().map(move |&c| row[c]))
            .collect();
        pl.b = keep.iter().map(|&c| pl.b[c]).collect();
        pl.out = keep.len();
        // The channel index is the fastest-varying part of the next layer's
        // rows, for convolution windows and flattened maps alike.
        let next = &mut layers[n + 1];
        let mut is_kept = vec![false; old];
        for &c in &keep {
            is_kept[c] = true;
        }
        next.w = next
            .w
            .chunks_exact(next.out)
            .enumerate()
            .filter(|(r, _)| is_kept[r % old])
            .flat_map(|(_, row)| row.iter().copied())
            .collect();
        next.depth = next.w.len() / next.out;
        match &mut spec.layers[wl[n].index] {
            LayerSpec::Conv { out_channels, .. } | LayerSpec::Pointwise { out_channels } => *out_channels = keep.len(),
            _ => unreachable!("weighted conv layer"),
        }
        kept[n] = Some(keep);
    }
    let weights = FloatWeights {
        layers,
        act_max: w.act_max.clone(),
        rescale: w.rescale.clone(),
    };
    weights.check(&spec)?;
    Ok(Pruned { spec, weights, kept })
}
