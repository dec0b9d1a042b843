use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_kernels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// `k×k`, stride 1, "same" padding.
    pub const fn same(out_kernels: usize, kernel_size: usize) -> Self {
        Self {
            out_kernels,
            kernel_size,
            stride: 1,
            padding: kernel_size / 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Structure of a plain, residual or branched CNN.
///
/// Convolutions run in index order. A branch group is a contiguous run of
/// layers that all read the same input and whose outputs are concatenated.
/// A residual pair `(a, b)` adds layer `a`'s activation to layer `b`'s
/// convolution output before `b`'s ReLU. A pool point `p` applies 2×2 max
/// pooling after the stage that ends at layer `p`. `fc_layers` lists hidden
/// widths; the `n_classes`-wide output layer is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input: InputShape,
    pub conv_layers: Vec<ConvSpec>,
    #[serde(default)]
    pub pool_points: Vec<usize>,
    #[serde(default)]
    pub fc_layers: Vec<usize>,
    #[serde(default)]
    pub residual_pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub branch_groups: Vec<Vec<usize>>,
    pub n_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Plain,
    Res,
    Ince,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "sim" | "simcnn" => Ok(Family::Plain),
            "res" | "rescnn" => Ok(Family::Res),
            "ince" | "incecnn" => Ok(Family::Ince),
            other => Err(Error::arg(format!("unknown architecture family {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::arg(format!("unknown scale {other}"))),
        }
    }
}

impl ArchitectureSpec {
    pub fn preset(family: Family, scale: Scale, n_classes: usize) -> Self {
        match (family, scale) {
            (Family::Plain, Scale::Desk) => Self::desk_plain(n_classes),
            (Family::Res, Scale::Desk) => Self::desk_res(n_classes),
            (Family::Ince, Scale::Desk) => Self::desk_ince(n_classes),
            (Family::Plain, Scale::Paper) => Self::paper_plain(n_classes),
            (Family::Res, Scale::Paper) => Self::paper_res(n_classes),
            (Family::Ince, Scale::Paper) => Self::paper_ince(n_classes),
        }
    }

    fn rgb(side: usize) -> InputShape {
        InputShape {
            channels: 3,
            height: side,
            width: side,
        }
    }

    /// Six stacked 3×3 convolutions (16,16,32,32,64,64) and two FC layers.
    pub fn desk_plain(n_classes: usize) -> Self {
        Self {
            name: "plain-desk".into(),
            input: Self::rgb(16),
            conv_layers: [16, 16, 32, 32, 64, 64].iter().map(|&k| ConvSpec::same(k, 3)).collect(),
            pool_points: vec![1, 3, 5],
            fc_layers: vec![64],
            residual_pairs: vec![],
            branch_groups: vec![],
            n_classes,
        }
    }

    /// Six convolutions, one FC layer, three residual connections.
    pub fn desk_res(n_classes: usize) -> Self {
        Self {
            name: "res-desk".into(),
            input: Self::rgb(16),
            conv_layers: [16, 16, 16, 32, 32, 32].iter().map(|&k| ConvSpec::same(k, 3)).collect(),
            pool_points: vec![2, 5],
            fc_layers: vec![],
            residual_pairs: vec![(0, 2), (3, 4), (4, 5)],
            branch_groups: vec![],
            n_classes,
        }
    }

    /// Six convolutions, one FC layer, two 1×1/3×3 branch points.
    pub fn desk_ince(n_classes: usize) -> Self {
        Self {
            name: "ince-desk".into(),
            input: Self::rgb(16),
            conv_layers: vec![
                ConvSpec::same(16, 3),
                ConvSpec::same(16, 1),
                ConvSpec::same(16, 3),
                ConvSpec::same(32, 3),
                ConvSpec::same(32, 1),
                ConvSpec::same(32, 3),
            ],
            pool_points: vec![2, 3, 5],
            fc_layers: vec![],
            residual_pairs: vec![],
            branch_groups: vec![vec![1, 2], vec![4, 5]],
            n_classes,
        }
    }

    /// VGG-16 style: 13 convolutions, 4224 kernels, three FC layers.
    pub fn paper_plain(n_classes: usize) -> Self {
        let widths = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
        Self {
            name: "plain-paper".into(),
            input: Self::rgb(32),
            conv_layers: widths.iter().map(|&k| ConvSpec::same(k, 3)).collect(),
            pool_points: vec![1, 3, 6, 9, 12],
            fc_layers: vec![512, 512],
            residual_pairs: vec![],
            branch_groups: vec![],
            n_classes,
        }
    }

    /// 12 convolutions, 4288 kernels, one FC layer, three residual connections.
    pub fn paper_res(n_classes: usize) -> Self {
        let widths = [64, 128, 128, 128, 256, 256, 256, 512, 512, 512, 512, 1024];
        Self {
            name: "res-paper".into(),
            input: Self::rgb(32),
            conv_layers: widths.iter().map(|&k| ConvSpec::same(k, 3)).collect(),
            pool_points: vec![3, 6, 10, 11],
            fc_layers: vec![],
            residual_pairs: vec![(1, 3), (4, 6), (8, 10)],
            branch_groups: vec![],
            n_classes,
        }
    }

    /// 12 convolutions, 3200 kernels, one FC layer, three branch points.
    pub fn paper_ince(n_classes: usize) -> Self {
        Self {
            name: "ince-paper".into(),
            input: Self::rgb(32),
            conv_layers: vec![
                ConvSpec::same(64, 3),
                ConvSpec::same(128, 3),
                ConvSpec::same(128, 1),
                ConvSpec::same(128, 3),
                ConvSpec::same(256, 3),
                ConvSpec::same(256, 1),
                ConvSpec::same(256, 3),
                ConvSpec::same(384, 3),
                ConvSpec::same(384, 1),
                ConvSpec::same(384, 3),
                ConvSpec::same(512, 3),
                ConvSpec::same(320, 3),
            ],
            pool_points: vec![1, 6, 9, 11],
            fc_layers: vec![],
            residual_pairs: vec![],
            branch_groups: vec![vec![2, 3], vec![5, 6], vec![8, 9]],
            n_classes,
        }
    }

    /// Two convolutions and one FC layer: the "overly simple" weak model.
    pub fn desk_simple(n_classes: usize) -> Self {
        Self {
            name: "simple-desk".into(),
            input: Self::rgb(16),
            conv_layers: vec![ConvSpec::same(8, 3), ConvSpec::same(8, 3)],
            pool_points: vec![0, 1],
            fc_layers: vec![],
            residual_pairs: vec![],
            branch_groups: vec![],
            n_classes,
        }
    }

    /// Total kernel count `L`.
    pub fn total_kernels(&self) -> usize {
        self.conv_layers.iter().map(|c| c.out_kernels).sum()
    }

    /// Same structure with the input resized (square inputs only).
    pub fn with_input_side(mut self, side: usize) -> Self {
        self.input.height = side;
        self.input.width = side;
        self
    }

    pub fn with_classes(mut self, n_classes: usize) -> Self {
        self.n_classes = n_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        Plan::compile(self).map(|_| ())
    }

    pub fn plan(&self) -> Result<Plan> {
        Plan::compile(self)
    }
}

/// One execution step: a single convolution or a concatenating branch group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub layers: Vec<usize>,
    pub residual_from: Option<usize>,
    pub pool: bool,
}

/// Resolved dataflow of an [`ArchitectureSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub stages: Vec<Stage>,
    pub stage_of_layer: Vec<usize>,
    /// Channel offset of each layer inside its stage's concatenated output.
    pub channel_offset: Vec<usize>,
    pub in_channels: Vec<usize>,
    pub in_hw: Vec<(usize, usize)>,
    pub out_hw: Vec<(usize, usize)>,
    /// Output `(channels, h, w)` of every stage after pooling.
    pub stage_out: Vec<(usize, usize, usize)>,
    pub flatten: (usize, usize, usize),
    pub fc_dims: Vec<(usize, usize)>,
    pub kernel_offset: Vec<usize>,
    /// Layers tied together by residual connections (transitively), ordered
    /// by their first layer. Unpaired layers form singleton segments.
    pub segments: Vec<Vec<usize>>,
    pub segment_of_layer: Vec<usize>,
}

impl Plan {
    fn compile(spec: &ArchitectureSpec) -> Result<Plan> {
        let n = spec.conv_layers.len();
        if n == 0 {
            return Err(Error::Spec("at least one convolutional layer required".into()));
        }
        if spec.n_classes < 2 {
            return Err(Error::Spec("n_classes must be >= 2".into()));
        }
        let inp = spec.input;
        if inp.channels == 0 || inp.height == 0 || inp.width == 0 {
            return Err(Error::Spec("input dims must be positive".into()));
        }
        for (i, c) in spec.conv_layers.iter().enumerate() {
            if c.out_kernels == 0 || c.kernel_size == 0 || c.stride == 0 {
                return Err(Error::Spec(format!("layer {i}: kernels, size and stride must be positive")));
            }
        }

        let mut group_of = vec![None; n];
        for (g, members) in spec.branch_groups.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::Spec(format!("branch group {g} needs at least two layers")));
            }
            for (k, &l) in members.iter().enumerate() {
                if l >= n {
                    return Err(Error::Spec(format!("branch group {g} references missing layer {l}")));
                }
                if k > 0 && l != members[k - 1] + 1 {
                    return Err(Error::Spec(format!("branch group {g} must list contiguous layers in order")));
                }
                if group_of[l].replace(g).is_some() {
                    return Err(Error::Spec(format!("layer {l} belongs to two branch groups")));
                }
            }
        }

        let mut residual_from = vec![None; n];
        for &(a, b) in &spec.residual_pairs {
            if a >= n || b >= n || a >= b {
                return Err(Error::Spec(format!("residual pair ({a}, {b}) must reference layers a < b")));
            }
            if group_of[a].is_some() || group_of[b].is_some() {
                return Err(Error::Spec(format!("residual pair ({a}, {b}) may not touch a branch group")));
            }
            if residual_from[b].replace(a).is_some() {
                return Err(Error::Spec(format!("layer {b} is the target of two residual pairs")));
            }
            let (ka, kb) = (spec.conv_layers[a].out_kernels, spec.conv_layers[b].out_kernels);
            if ka != kb {
                return Err(Error::Spec(format!("residual pair ({a}, {b}): kernel counts {ka} vs {kb}")));
            }
        }

        // stages
        let mut stages: Vec<Stage> = Vec::new();
        let mut stage_of_layer = vec![0; n];
        let mut channel_offset = vec![0; n];
        let mut l = 0;
        while l < n {
            let layers: Vec<usize> = match group_of[l] {
                Some(g) => spec.branch_groups[g].clone(),
                None => vec![l],
            };
            let mut off = 0;
            for &m in &layers {
                stage_of_layer[m] = stages.len();
                channel_offset[m] = off;
                off += spec.conv_layers[m].out_kernels;
            }
            l = layers.last().unwrap() + 1;
            stages.push(Stage {
                residual_from: if layers.len() == 1 { residual_from[layers[0]] } else { None },
                pool: false,
                layers,
            });
        }
        for &p in &spec.pool_points {
            match stages.iter_mut().find(|s| s.layers.last() == Some(&p)) {
                Some(s) if !s.pool => s.pool = true,
                Some(_) => return Err(Error::Spec(format!("pool point {p} listed twice"))),
                None => return Err(Error::Spec(format!("pool point {p} is not the end of a stage"))),
            }
        }

        // shapes
        let mut in_channels = vec![0; n];
        let mut in_hw = vec![(0, 0); n];
        let mut out_hw = vec![(0, 0); n];
        let mut stage_out = Vec::with_capacity(stages.len());
        let (mut c, mut h, mut w) = (inp.channels, inp.height, inp.width);
        for (si, stage) in stages.iter().enumerate() {
            let mut shape = None;
            let mut total = 0;
            for &m in &stage.layers {
                let cs = &spec.conv_layers[m];
                if h + 2 * cs.padding < cs.kernel_size || w + 2 * cs.padding < cs.kernel_size {
                    return Err(Error::Spec(format!("layer {m}: kernel larger than padded input {h}x{w}")));
                }
                let oh = (h + 2 * cs.padding - cs.kernel_size) / cs.stride + 1;
                let ow = (w + 2 * cs.padding - cs.kernel_size) / cs.stride + 1;
                if let Some(prev) = shape {
                    if prev != (oh, ow) {
                        return Err(Error::Spec(format!("stage {si}: branch outputs differ in spatial size")));
                    }
                }
                shape = Some((oh, ow));
                in_channels[m] = c;
                in_hw[m] = (h, w);
                out_hw[m] = (oh, ow);
                total += cs.out_kernels;
            }
            if let Some(a) = stage.residual_from {
                let b = stage.layers[0];
                if out_hw[a] != out_hw[b] {
                    return Err(Error::Spec(format!(
                        "residual pair ({a}, {b}): spatial dims {:?} vs {:?}",
                        out_hw[a], out_hw[b]
                    )));
                }
            }
            let (mut oh, mut ow) = shape.unwrap();
            if stage.pool {
                if oh < 2 || ow < 2 {
                    return Err(Error::Spec(format!("stage {si}: cannot pool a {oh}x{ow} map")));
                }
                oh /= 2;
                ow /= 2;
            }
            c = total;
            h = oh;
            w = ow;
            stage_out.push((c, h, w));
        }
        let flatten = (c, h, w);
        let mut fc_dims = Vec::new();
        let mut width = c * h * w;
        for &hidden in &spec.fc_layers {
            if hidden == 0 {
                return Err(Error::Spec("FC widths must be positive".into()));
            }
            fc_dims.push((width, hidden));
            width = hidden;
        }
        fc_dims.push((width, spec.n_classes));

        let mut kernel_offset = Vec::with_capacity(n);
        let mut acc = 0;
        for cs in &spec.conv_layers {
            kernel_offset.push(acc);
            acc += cs.out_kernels;
        }

        // residual segments via union-find
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for &(a, b) in &spec.residual_pairs {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let mut segments: Vec<Vec<usize>> = Vec::new();
        let mut segment_of_layer = vec![0; n];
        let mut root_segment = vec![usize::MAX; n];
        for layer in 0..n {
            let r = find(&mut parent, layer);
            if root_segment[r] == usize::MAX {
                root_segment[r] = segments.len();
                segments.push(Vec::new());
            }
            segments[root_segment[r]].push(layer);
            segment_of_layer[layer] = root_segment[r];
        }

        Ok(Plan {
            stages,
            stage_of_layer,
            channel_offset,
            in_channels,
            in_hw,
            out_hw,
            stage_out,
            flatten,
            fc_dims,
            kernel_offset,
            segments,
            segment_of_layer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_totals() {
        assert_eq!(ArchitectureSpec::desk_plain(4).total_kernels(), 224);
        assert_eq!(ArchitectureSpec::paper_plain(10).total_kernels(), 4224);
        assert_eq!(ArchitectureSpec::paper_res(10).total_kernels(), 4288);
        assert_eq!(ArchitectureSpec::paper_ince(10).total_kernels(), 3200);
        assert_eq!(ArchitectureSpec::paper_plain(10).conv_layers.len(), 13);
        assert_eq!(ArchitectureSpec::paper_plain(10).fc_layers.len() + 1, 3);
        for f in [Family::Plain, Family::Res, Family::Ince] {
            for s in [Scale::Desk, Scale::Paper] {
                ArchitectureSpec::preset(f, s, 10).validate().unwrap();
            }
        }
    }

    #[test]
    fn residual_kernel_mismatch_names_pair() {
        let mut spec = ArchitectureSpec::desk_res(4);
        spec.conv_layers[2].out_kernels = 8;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("(0, 2)"), "{err}");
    }

    #[test]
    fn residual_spatial_mismatch_rejected() {
        let mut spec = ArchitectureSpec::desk_res(4);
        spec.pool_points = vec![0, 5];
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("spatial"), "{err}");
    }

    #[test]
    fn segments_merge_residual_chains() {
        let plan = ArchitectureSpec::desk_res(4).plan().unwrap();
        assert_eq!(plan.segments, vec![vec![0, 2], vec![1], vec![3, 4, 5]]);
        let plan = ArchitectureSpec::desk_ince(4).plan().unwrap();
        assert_eq!(plan.stages.len(), 4);
        assert_eq!(plan.in_channels[3], 32);
        assert_eq!(plan.channel_offset[5], 32);
        assert_eq!(plan.flatten, (64, 2, 2));
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(ArchitectureSpec::desk_plain(4)).unwrap();
        v["typo"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ArchitectureSpec>(v).is_err());
    }
}
