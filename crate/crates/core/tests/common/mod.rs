#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use voxatt::model::{HeadConfig, HeadMode, ModelConfig};
use voxatt_tensor::{Scalar, Tensor};

pub fn random<T: Scalar>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// 8³ grid, two parts, every width tiny.
pub fn toy_config(mode: HeadMode) -> ModelConfig {
    ModelConfig {
        resolution: 8,
        n_parts: 2,
        channels: vec![2, 3],
        slope: 0.2,
        bn_momentum: 0.9,
        head: HeadConfig {
            mode,
            layers: vec![0, 2, 3],
            d_a: 4,
            heads: 2,
            blocks: 2,
            apply_ac_loss: true,
            mlp_hidden: vec![6, 5],
            part_hidden: 5,
        },
    }
}

/// 16³ grid with four parts and eight heads.
pub fn small_config(mode: HeadMode, layers: Vec<usize>) -> ModelConfig {
    ModelConfig {
        resolution: 16,
        n_parts: 4,
        channels: vec![4, 6, 8],
        slope: 0.2,
        bn_momentum: 0.9,
        head: HeadConfig {
            mode,
            layers,
            d_a: 16,
            heads: 8,
            blocks: 3,
            apply_ac_loss: true,
            mlp_hidden: vec![32, 16],
            part_hidden: 24,
        },
    }
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).abs())
        .fold(0.0, f64::max)
}

/// Straightforward per-voxel trilinear sampler.
pub fn naive_place(v: &[f64], t: &[f64], r: usize) -> Vec<f64> {
    let rf = r as f64;
    let at = |i: [i64; 3]| -> f64 {
        if i.iter().all(|&k| k >= 0 && k < r as i64) {
            v[((i[0] as usize) * r + i[1] as usize) * r + i[2] as usize]
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; r * r * r];
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                let idx = [x, y, z];
                let u: Vec<f64> = (0..3)
                    .map(|a| {
                        let w = (idx[a] as f64 + 0.5) / rf;
                        let c = (w - 0.5 - t[3 + a]) / t[a] + 0.5;
                        c * rf - 0.5
                    })
                    .collect();
                let f: Vec<f64> = u.iter().map(|u| u.floor()).collect();
                let mut acc = 0.0;
                for corner in 0..8 {
                    let mut w = 1.0;
                    let mut k = [0i64; 3];
                    for a in 0..3 {
                        let d = (corner >> (2 - a)) & 1;
                        let fr = u[a] - f[a];
                        w *= if d == 1 { fr } else { 1.0 - fr };
                        k[a] = f[a] as i64 + d as i64;
                    }
                    acc += w * at(k);
                }
                out[(x * r + y) * r + z] = acc;
            }
        }
    }
    out
}
