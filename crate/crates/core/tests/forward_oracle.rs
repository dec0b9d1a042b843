//! The network forward pass checked against a direct nested-loop evaluation
//! of the architecture description.

use modsplit::tensor::FeatureMap;
use modsplit::zoo::{ArchitectureSpec, ConvSpec, InputShape, Network};
use rand::{Rng, SeedableRng};

/// `[c][h][w]` of one sample.
type Image = Vec<Vec<Vec<f32>>>;

fn conv(net: &Network, l: usize, spec: &ConvSpec, x: &Image) -> Image {
    let p = &net.conv[l];
    let (h, w) = (x[0].len() as isize, x[0][0].len() as isize);
    let (k, s, pad) = (spec.kernel_size as isize, spec.stride as isize, spec.padding as isize);
    let oh = (h + 2 * pad - k) / s + 1;
    let ow = (w + 2 * pad - k) / s + 1;
    let mut out = vec![vec![vec![0f32; ow as usize]; oh as usize]; p.out_channels];
    for (o, plane) in out.iter_mut().enumerate() {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = p.bias[o] as f64;
                for (c, xc) in x.iter().enumerate() {
                    for di in 0..k {
                        for dj in 0..k {
                            let (y, xx) = (i * s + di - pad, j * s + dj - pad);
                            if y < 0 || xx < 0 || y >= h || xx >= w {
                                continue;
                            }
                            let wgt = p.weight[((o * p.in_channels + c) * k as usize + di as usize) * k as usize + dj as usize];
                            acc += wgt as f64 * xc[y as usize][xx as usize] as f64;
                        }
                    }
                }
                plane[i as usize][j as usize] = acc as f32;
            }
        }
    }
    out
}

fn pool(x: &Image) -> Image {
    x.iter()
        .map(|plane| {
            (0..plane.len() / 2)
                .map(|i| {
                    (0..plane[0].len() / 2)
                        .map(|j| {
                            plane[2 * i][2 * j]
                                .max(plane[2 * i][2 * j + 1])
                                .max(plane[2 * i + 1][2 * j])
                                .max(plane[2 * i + 1][2 * j + 1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn oracle(net: &Network, x: &Image) -> Vec<f32> {
    let spec = net.spec();
    let n = spec.conv_layers.len();
    let mut acts: Vec<Option<Image>> = vec![None; n];
    let mut current = x.clone();
    let mut l = 0;
    while l < n {
        let stage: Vec<usize> = spec.branch_groups.iter().find(|g| g[0] == l).cloned().unwrap_or_else(|| vec![l]);
        let mut out: Image = Vec::new();
        for &layer in &stage {
            let mut z = conv(net, layer, &spec.conv_layers[layer], &current);
            if let Some(&(src, _)) = spec.residual_pairs.iter().find(|&&(_, b)| b == layer) {
                let a = acts[src].as_ref().unwrap();
                for (zc, ac) in z.iter_mut().zip(a) {
                    for (zr, ar) in zc.iter_mut().zip(ac) {
                        zr.iter_mut().zip(ar).for_each(|(v, r)| *v += r);
                    }
                }
            }
            z.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
            acts[layer] = Some(z.clone());
            out.extend(z);
        }
        let last = *stage.last().unwrap();
        current = if spec.pool_points.contains(&last) { pool(&out) } else { out };
        l = last + 1;
    }
    let mut h: Vec<f32> = current.into_iter().flatten().flatten().collect();
    for (i, f) in net.fc.iter().enumerate() {
        let mut y: Vec<f32> = (0..f.out_features)
            .map(|o| {
                let row = &f.weight[o * f.in_features..(o + 1) * f.in_features];
                (f.bias[o] as f64 + row.iter().zip(&h).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>()) as f32
            })
            .collect();
        if i + 1 < net.fc.len() {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = y;
    }
    h
}

fn random_input(spec: &ArchitectureSpec, batch: usize, seed: u64) -> (FeatureMap, Vec<Image>) {
    let InputShape { channels, height, width } = spec.input;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Image> = (0..batch)
        .map(|_| {
            (0..channels)
                .map(|_| (0..height).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                .collect()
        })
        .collect();
    let mut fm = FeatureMap::zeros(channels, batch, height, width);
    for (b, img) in images.iter().enumerate() {
        for (c, plane) in img.iter().enumerate() {
            for (i, row) in plane.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    fm.data[((c * batch + b) * height + i) * width + j] = v;
                }
            }
        }
    }
    (fm, images)
}

fn check(spec: ArchitectureSpec, seeds: u64) {
    for seed in 0..seeds {
        let net = Network::new(spec.clone(), seed).unwrap();
        let (fm, images) = random_input(&spec, 3, seed + 100);
        let got = net.forward(&fm, None, None, None);
        for (b, img) in images.iter().enumerate() {
            let want = oracle(&net, img);
            for (g, w) in got.row(b).iter().zip(&want) {
                assert!((g - w).abs() <= 1e-4 * (1.0 + w.abs()), "{} seed {seed}: {g} vs {w}", spec.name);
            }
        }
    }
}

#[test]
fn plain_family_matches_direct_loops() {
    check(ArchitectureSpec::desk_plain(4), 3);
}

#[test]
fn residual_family_matches_direct_loops() {
    check(ArchitectureSpec::desk_res(4), 3);
}

#[test]
fn branched_family_matches_direct_loops() {
    check(ArchitectureSpec::desk_ince(4), 3);
}

#[test]
fn strided_unpadded_layers_match() {
    let spec = ArchitectureSpec {
        name: "odd".into(),
        input: InputShape {
            channels: 2,
            height: 11,
            width: 9,
        },
        conv_layers: vec![
            ConvSpec {
                out_kernels: 5,
                kernel_size: 3,
                stride: 2,
                padding: 0,
            },
            ConvSpec::same(4, 1),
            ConvSpec::same(3, 5),
        ],
        pool_points: vec![1],
        fc_layers: vec![7],
        residual_pairs: vec![],
        branch_groups: vec![],
        n_classes: 3,
    };
    check(spec, 2);
}
