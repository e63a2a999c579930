//! Dynamic radial embedding: sector-masked offset convolutions, a softmax
//! gate across sectors, and a deformable convolution that lifts the RGB
//! image to the embedding width.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::layers::{add_channel_bias, conv};
use crate::params::ParamSet;
use crate::polar::SectorMaskSet;
use crate::scalar::Scalar;

pub const KERNEL: usize = 3;
/// Offset groups: one (Δrow, Δcol) pair per kernel tap.
pub const OFFSET_GROUPS: usize = 2 * KERNEL * KERNEL;

/// Axis the offset gate normalizes over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAxis {
    /// Softmax across sectors at every (group, pixel).
    #[default]
    Sector,
    /// Softmax across the offset groups of each sector.
    OffsetGroup,
}

#[derive(Clone, Debug)]
pub struct OffsetField<T> {
    /// Per-sector raw offsets, each G×H×W.
    pub raw: Vec<Var<T>>,
    /// Gates, N₁×G×H×W.
    pub gates: Var<T>,
    /// Gated sum over sectors, G×H×W.
    pub fused: Var<T>,
}

/// `Δp_i = conv3×3(x ⊙ mask_i)`, gated by a softmax and summed over sectors.
pub fn generate_offsets<T: Scalar>(
    g: &Graph<T>,
    x: &Var<T>,
    masks: &SectorMaskSet,
    kernels: &[Var<T>],
    biases: &[Option<Var<T>>],
    gate_axis: GateAxis,
) -> Result<OffsetField<T>> {
    if kernels.len() != masks.count {
        return Err(RstError::invalid(
            "generate_offsets",
            format!("{} sector masks but {} offset kernels", masks.count, kernels.len()),
        ));
    }
    let (_, h, w) = x.value().chw("generate_offsets")?;
    if (h, w) != (masks.height, masks.width) {
        return Err(RstError::shape("generate_offsets", x.shape(), &[masks.height, masks.width]));
    }
    let mut raw = Vec::with_capacity(masks.count);
    for (i, k) in kernels.iter().enumerate() {
        let mask = g.constant(masks.mask_tensor(i));
        let masked = g.mul(x, &mask)?;
        let bias = biases.get(i).and_then(Option::as_ref);
        raw.push(conv(g, &masked, k, bias, 1, KERNEL / 2)?);
    }
    let stacked = g.stack(&raw)?;
    let axis = match gate_axis {
        GateAxis::Sector => 0,
        GateAxis::OffsetGroup => 1,
    };
    let gates = g.softmax(&stacked, axis)?;
    let weighted = g.mul(&gates, &stacked)?;
    let fused = g.sum_axis0(&weighted)?;
    Ok(OffsetField { raw, gates, fused })
}

/// Handles for one DRE parameter set.
#[derive(Clone, Debug)]
pub struct DreParams<T> {
    pub offset_kernels: Vec<Var<T>>,
    pub offset_biases: Vec<Option<Var<T>>>,
    pub deform_kernel: Var<T>,
    pub deform_bias: Option<Var<T>>,
    pub gate_axis: GateAxis,
}

impl<T: Scalar> DreParams<T> {
    /// Reads `dre.offset.{i}.*` (or `dre.offset.shared.*`) and `dre.deform.*`.
    pub fn from_set(set: &ParamSet<T>, sectors: usize, shared: bool, gate_axis: GateAxis) -> Result<Self> {
        let name = |i: usize| {
            if shared {
                "dre.offset.shared".to_string()
            } else {
                format!("dre.offset.{i}")
            }
        };
        let mut offset_kernels = Vec::with_capacity(sectors);
        let mut offset_biases = Vec::with_capacity(sectors);
        for i in 0..sectors {
            offset_kernels.push(set.get(&format!("{}.weight", name(i)))?.clone());
            offset_biases.push(set.get_opt(&format!("{}.bias", name(i))).cloned());
        }
        Ok(Self {
            offset_kernels,
            offset_biases,
            deform_kernel: set.get("dre.deform.weight")?.clone(),
            deform_bias: set.get_opt("dre.deform.bias").cloned(),
            gate_axis,
        })
    }
}

/// Shallow feature `F_l = DConv(x, Δp)` for a 3×H×W image.
pub fn dre_forward<T: Scalar>(
    g: &Graph<T>,
    image: &Var<T>,
    masks: &SectorMaskSet,
    params: &DreParams<T>,
) -> Result<Var<T>> {
    g.scoped("dre", || {
        let offsets = generate_offsets(
            g,
            image,
            masks,
            &params.offset_kernels,
            &params.offset_biases,
            params.gate_axis,
        )?;
        let y = g.deform_conv2d(image, &offsets.fused, &params.deform_kernel)?;
        add_channel_bias(g, y, params.deform_bias.as_ref())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv2d;
    use crate::polar::{build_polar_grid, build_sector_masks};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(g: &Graph<f64>, n: usize, rng: &mut ChaCha8Rng, zero_offsets: bool) -> DreParams<f64> {
        DreParams {
            offset_kernels: (0..n)
                .map(|_| {
                    if zero_offsets {
                        g.param(Tensor::zeros(&[18, 3, 3, 3]))
                    } else {
                        g.param(Tensor::uniform(&[18, 3, 3, 3], -0.2, 0.2, rng))
                    }
                })
                .collect(),
            offset_biases: vec![None; n],
            deform_kernel: g.param(Tensor::uniform(&[4, 3, 3, 3], -0.5, 0.5, rng)),
            deform_bias: None,
            gate_axis: GateAxis::Sector,
        }
    }

    #[test]
    fn zero_kernels_give_zero_offsets_and_uniform_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::<f64>::no_grad();
        let masks = build_sector_masks(&build_polar_grid(6, 5), 4).unwrap();
        let p = params(&g, 4, &mut rng, true);
        let x = g.constant(Tensor::uniform(&[3, 6, 5], 0.0, 1.0, &mut rng));
        let off = generate_offsets(&g, &x, &masks, &p.offset_kernels, &p.offset_biases, GateAxis::Sector).unwrap();
        assert!(off.fused.value().data().iter().all(|&v| v == 0.0));
        assert!(off.gates.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_sector_is_plain_offset_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::<f64>::no_grad();
        let masks = build_sector_masks(&build_polar_grid(5, 5), 1).unwrap();
        let p = params(&g, 1, &mut rng, false);
        let x = g.constant(Tensor::uniform(&[3, 5, 5], 0.0, 1.0, &mut rng));
        let off = generate_offsets(&g, &x, &masks, &p.offset_kernels, &p.offset_biases, GateAxis::Sector).unwrap();
        let direct = conv2d(x.value(), p.offset_kernels[0].value(), 1, 1).unwrap();
        assert!(off.fused.value().max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn kernel_count_must_match_sectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::<f64>::no_grad();
        let masks = build_sector_masks(&build_polar_grid(4, 4), 4).unwrap();
        let p = params(&g, 2, &mut rng, true);
        let x = g.constant(Tensor::zeros(&[3, 4, 4]));
        assert!(generate_offsets(&g, &x, &masks, &p.offset_kernels, &p.offset_biases, GateAxis::Sector).is_err());
    }

    #[test]
    fn zero_image_embeds_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graph::<f64>::no_grad();
        let masks = build_sector_masks(&build_polar_grid(7, 9), 4).unwrap();
        let p = params(&g, 4, &mut rng, false);
        let x = g.constant(Tensor::zeros(&[3, 7, 9]));
        let y = dre_forward(&g, &x, &masks, &p).unwrap();
        assert_eq!(y.shape(), &[4, 7, 9]);
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_axis_gate_variant_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::<f64>::no_grad();
        let masks = build_sector_masks(&build_polar_grid(6, 6), 2).unwrap();
        let p = params(&g, 2, &mut rng, false);
        let x = g.constant(Tensor::uniform(&[3, 6, 6], 0.0, 1.0, &mut rng));
        let off = generate_offsets(&g, &x, &masks, &p.offset_kernels, &p.offset_biases, GateAxis::OffsetGroup).unwrap();
        // gates sum to one across the 18 groups
        let gd = off.gates.value();
        let total: f64 = (0..18).map(|k| gd.at(&[1, k, 2, 3])).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
