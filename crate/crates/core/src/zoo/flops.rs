use serde::{Deserialize, Serialize};

use super::spec::ArchitectureSpec;
use crate::error::Result;

/// How multiply-accumulates are turned into a FLOP count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsConvention {
    /// One FLOP per multiply-accumulate. This is the convention behind the
    /// commonly quoted ~313.7M figure for VGG-16 on 32×32 inputs.
    #[default]
    MultiplyAccumulate,
    /// Two FLOPs per multiply-accumulate.
    TwoPerMac,
}

impl FlopsConvention {
    fn per_mac(self) -> u64 {
        match self {
            FlopsConvention::MultiplyAccumulate => 1,
            FlopsConvention::TwoPerMac => 2,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FlopsConvention::MultiplyAccumulate => {
                "1 FLOP per multiply-accumulate; conv = k*k*C_in*H_out*W_out*C_out, fc = in*out; bias, pooling and activations excluded"
            }
            FlopsConvention::TwoPerMac => {
                "2 FLOPs per multiply-accumulate; conv = 2*k*k*C_in*H_out*W_out*C_out, fc = 2*in*out; bias, pooling and activations excluded"
            }
        }
    }
}

impl std::str::FromStr for FlopsConvention {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mac" | "multiply_accumulate" => Ok(Self::MultiplyAccumulate),
            "2mac" | "two_per_mac" => Ok(Self::TwoPerMac),
            other => Err(crate::error::Error::arg(format!("unknown FLOPs convention {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer_id: String,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub convention: FlopsConvention,
    pub header: String,
    pub per_layer: Vec<LayerFlops>,
    pub conv_total: u64,
    pub total: u64,
}

pub fn count_flops(spec: &ArchitectureSpec, convention: FlopsConvention) -> Result<FlopsReport> {
    let plan = spec.plan()?;
    let per_mac = convention.per_mac();
    let mut per_layer = Vec::new();
    let mut conv_total = 0;
    for (l, cs) in spec.conv_layers.iter().enumerate() {
        let (oh, ow) = plan.out_hw[l];
        let macs = (cs.kernel_size * cs.kernel_size * plan.in_channels[l] * oh * ow * cs.out_kernels) as u64;
        conv_total += macs * per_mac;
        per_layer.push(LayerFlops {
            layer_id: format!("conv{l}"),
            flops: macs * per_mac,
        });
    }
    let mut total = conv_total;
    for (i, &(inp, out)) in plan.fc_dims.iter().enumerate() {
        let flops = (inp * out) as u64 * per_mac;
        total += flops;
        per_layer.push(LayerFlops {
            layer_id: format!("fc{i}"),
            flops,
        });
    }
    Ok(FlopsReport {
        convention,
        header: convention.describe().to_string(),
        per_layer,
        conv_total,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::spec::{ConvSpec, InputShape};

    fn single_conv() -> ArchitectureSpec {
        ArchitectureSpec {
            name: "one".into(),
            input: InputShape {
                channels: 1,
                height: 4,
                width: 4,
            },
            conv_layers: vec![ConvSpec::same(1, 3)],
            pool_points: vec![],
            fc_layers: vec![],
            residual_pairs: vec![],
            branch_groups: vec![],
            n_classes: 2,
        }
    }

    #[test]
    fn formula_instance() {
        let r = count_flops(&single_conv(), FlopsConvention::TwoPerMac).unwrap();
        assert_eq!(r.per_layer[0].flops, 288);
        let r = count_flops(&single_conv(), FlopsConvention::MultiplyAccumulate).unwrap();
        assert_eq!(r.per_layer[0].flops, 144);
        assert_eq!(r.total, r.per_layer.iter().map(|l| l.flops).sum::<u64>());
    }

    #[test]
    fn vgg_total_by_hand() {
        // independent layer-by-layer tally of VGG-16 on 32x32
        let cfg: [(usize, usize, usize); 13] = [
            (3, 64, 32),
            (64, 64, 32),
            (64, 128, 16),
            (128, 128, 16),
            (128, 256, 8),
            (256, 256, 8),
            (256, 256, 8),
            (256, 512, 4),
            (512, 512, 4),
            (512, 512, 4),
            (512, 512, 2),
            (512, 512, 2),
            (512, 512, 2),
        ];
        let conv: u64 = cfg.iter().map(|&(i, o, s)| (9 * i * o * s * s) as u64).sum();
        let fc = (512 * 512 + 512 * 512 + 512 * 10) as u64;
        let r = count_flops(&ArchitectureSpec::paper_plain(10), FlopsConvention::MultiplyAccumulate).unwrap();
        assert_eq!(r.conv_total, conv);
        assert_eq!(r.total, conv + fc);
    }
}
