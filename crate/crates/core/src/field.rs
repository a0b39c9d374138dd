//! The MLP radiance field: masked position/direction encodings in, color
//! mean, color variance and density out.
//!
//! A position trunk with one skip connection feeds two heads. The density
//! head reads trunk features only, so density cannot depend on the viewing
//! direction. A linear bottleneck concatenated with the direction encoding
//! feeds a hidden layer that produces the RGB mean (sigmoid) and the shared
//! color variance (softplus, floored at `beta_min`).

use crate::autodiff::{ConstRange, ParamSet, Tape, ValueId};
use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// Trunk layers whose input is concatenated with the position encoding.
    pub skip_layers: Vec<usize>,
    pub head_width: usize,
    pub pos_encoding: EncodingConfig,
    pub dir_encoding: EncodingConfig,
    /// Floor added to the softplus output of the variance head.
    pub beta_min: f64,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        MlpArchitecture {
            trunk_depth: 4,
            trunk_width: 64,
            skip_layers: vec![2],
            head_width: 32,
            pos_encoding: EncodingConfig::new(8),
            dir_encoding: EncodingConfig::new(4),
            beta_min: 1e-4,
        }
    }
}

/// One linear layer in construction order.
struct LayerDims {
    name: &'static str,
    index: usize,
    in_dim: usize,
    out_dim: usize,
}

impl MlpArchitecture {
    fn trunk_in(&self, layer: usize) -> usize {
        let enc = self.pos_encoding.feature_len();
        if layer == 0 {
            enc
        } else if self.skip_layers.contains(&layer) {
            self.trunk_width + enc
        } else {
            self.trunk_width
        }
    }

    fn layers(&self) -> Vec<LayerDims> {
        let mut out = Vec::new();
        for l in 0..self.trunk_depth {
            out.push(LayerDims {
                name: "trunk",
                index: l,
                in_dim: self.trunk_in(l),
                out_dim: self.trunk_width,
            });
        }
        out.push(LayerDims {
            name: "sigma",
            index: 0,
            in_dim: self.trunk_width,
            out_dim: 1,
        });
        out.push(LayerDims {
            name: "bottleneck",
            index: 0,
            in_dim: self.trunk_width,
            out_dim: self.head_width,
        });
        out.push(LayerDims {
            name: "color_hidden",
            index: 0,
            in_dim: self.head_width + self.dir_encoding.feature_len(),
            out_dim: self.head_width,
        });
        out.push(LayerDims {
            name: "rgb",
            index: 0,
            in_dim: self.head_width,
            out_dim: 3,
        });
        out.push(LayerDims {
            name: "beta2",
            index: 0,
            in_dim: self.head_width,
            out_dim: 1,
        });
        out
    }

    /// Closed-form parameter count: Σ (in+1)·out over all layers.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| (l.in_dim + 1) * l.out_dim)
            .sum()
    }
}

/// Deterministic fan-in-scaled uniform initialization.
pub fn init_parameters(arch: &MlpArchitecture, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for layer in arch.layers() {
        let bound = 1.0 / (layer.in_dim as f64).sqrt();
        let weights: Vec<f64> = (0..layer.in_dim * layer.out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let prefix = if layer.name == "trunk" {
            format!("trunk.{}", layer.index)
        } else {
            layer.name.to_string()
        };
        params.register(
            format!("{prefix}.weight"),
            &[layer.out_dim, layer.in_dim],
            weights,
        );
        params.register(format!("{prefix}.bias"), &[layer.out_dim], vec![0.0; layer.out_dim]);
    }
    params
}

/// Offsets of each layer's weight/bias tensors in the flat parameter vector.
#[derive(Clone, Debug)]
pub struct LayerOffsets {
    pub trunk: Vec<(usize, usize)>,
    pub sigma: (usize, usize),
    pub bottleneck: (usize, usize),
    pub color_hidden: (usize, usize),
    pub rgb: (usize, usize),
    pub beta2: (usize, usize),
}

pub fn layer_offsets(arch: &MlpArchitecture, params: &ParamSet) -> LayerOffsets {
    let get = |name: &str| -> (usize, usize) {
        let w = params
            .tensor(&format!("{name}.weight"))
            .unwrap_or_else(|| panic!("missing tensor {name}.weight"))
            .offset;
        let b = params
            .tensor(&format!("{name}.bias"))
            .unwrap_or_else(|| panic!("missing tensor {name}.bias"))
            .offset;
        (w, b)
    };
    LayerOffsets {
        trunk: (0..arch.trunk_depth)
            .map(|l| get(&format!("trunk.{l}")))
            .collect(),
        sigma: get("sigma"),
        bottleneck: get("bottleneck"),
        color_hidden: get("color_hidden"),
        rgb: get("rgb"),
        beta2: get("beta2"),
    }
}

/// Field output at one sample point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub color: [f64; 3],
    pub beta2: f64,
    pub sigma: f64,
}

fn matvec(
    params: &[f64],
    w_off: usize,
    b_off: usize,
    out_dim: usize,
    input: &[f64],
    out: &mut Vec<f64>,
) {
    out.clear();
    let in_dim = input.len();
    for j in 0..out_dim {
        let row = &params[w_off + j * in_dim..w_off + (j + 1) * in_dim];
        let mut acc = params[b_off + j];
        for k in 0..in_dim {
            acc += row[k] * input[k];
        }
        out.push(acc);
    }
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("layer {name}")));
    }
    Ok(())
}

/// Reusable work buffers for [`query_cached`].
#[derive(Default)]
pub struct QueryScratch {
    h: Vec<f64>,
    z: Vec<f64>,
    input: Vec<f64>,
    hidden: Vec<f64>,
}

/// Plain forward pass (no tape) with hoisted layer offsets and reusable
/// buffers; the per-pixel hot path of the renderer and probes.
pub fn query_cached(
    params: &ParamSet,
    arch: &MlpArchitecture,
    offsets: &LayerOffsets,
    scratch: &mut QueryScratch,
    x_enc: &[f64],
    d_enc: &[f64],
) -> Result<FieldOutput> {
    debug_assert_eq!(x_enc.len(), arch.pos_encoding.feature_len());
    debug_assert_eq!(d_enc.len(), arch.dir_encoding.feature_len());
    let p = params.values();
    let QueryScratch { h, z, input, hidden } = scratch;

    for l in 0..arch.trunk_depth {
        input.clear();
        if l == 0 {
            input.extend_from_slice(x_enc);
        } else {
            input.extend_from_slice(h);
            if arch.skip_layers.contains(&l) {
                input.extend_from_slice(x_enc);
            }
        }
        let (w, b) = offsets.trunk[l];
        matvec(p, w, b, arch.trunk_width, input, z);
        check_finite(&format!("trunk.{l}"), z)?;
        h.clear();
        h.extend(z.iter().map(|&v| v.max(0.0)));
    }

    let (w, b) = offsets.sigma;
    matvec(p, w, b, 1, h, z);
    check_finite("sigma", z)?;
    let sigma = softplus(z[0]);

    let (w, b) = offsets.bottleneck;
    matvec(p, w, b, arch.head_width, h, z);
    check_finite("bottleneck", z)?;
    input.clear();
    input.extend_from_slice(z);
    input.extend_from_slice(d_enc);

    let (w, b) = offsets.color_hidden;
    matvec(p, w, b, arch.head_width, input, z);
    check_finite("color_hidden", z)?;
    hidden.clear();
    hidden.extend(z.iter().map(|&v| v.max(0.0)));

    let (w, b) = offsets.rgb;
    matvec(p, w, b, 3, hidden, z);
    check_finite("rgb", z)?;
    let color = [sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2])];

    let (w, b) = offsets.beta2;
    matvec(p, w, b, 1, hidden, z);
    check_finite("beta2", z)?;
    let beta2 = softplus(z[0]) + arch.beta_min;

    Ok(FieldOutput {
        color,
        beta2,
        sigma,
    })
}

/// Convenience wrapper around [`query_cached`] for one-off evaluations.
pub fn query(
    params: &ParamSet,
    arch: &MlpArchitecture,
    x_enc: &[f64],
    d_enc: &[f64],
) -> Result<FieldOutput> {
    let offsets = layer_offsets(arch, params);
    let mut scratch = QueryScratch::default();
    query_cached(params, arch, &offsets, &mut scratch, x_enc, d_enc)
}

/// Field output recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutputIds {
    pub color: [ValueId; 3],
    pub beta2: ValueId,
    pub sigma: ValueId,
}

/// Tape-recorded forward pass. Mirrors [`query`]; the two are pinned
/// against each other in tests.
pub fn query_tape(
    tape: &mut Tape,
    params: &ParamSet,
    offsets: &LayerOffsets,
    arch: &MlpArchitecture,
    x_enc: ConstRange,
    d_enc: ConstRange,
    enc_len: usize,
) -> FieldOutputIds {
    let p = params.values();
    let mut h: Vec<ValueId> = Vec::with_capacity(arch.trunk_width);
    let mut pre: Vec<ValueId> = Vec::with_capacity(arch.trunk_width);
    // activations of one layer are created back to back so the fused ops
    // see contiguous node ranges
    let contiguous = |tape: &Tape, xs: &[ValueId]| {
        tape.node_range(xs).expect("layer activations are contiguous")
    };

    for l in 0..arch.trunk_depth {
        let (w, b) = offsets.trunk[l];
        let (nodes, consts, in_dim) = if l == 0 {
            (crate::autodiff::NodeRange::EMPTY, x_enc, enc_len)
        } else if arch.skip_layers.contains(&l) {
            (contiguous(tape, &h), x_enc, arch.trunk_width + enc_len)
        } else {
            (contiguous(tape, &h), ConstRange::EMPTY, arch.trunk_width)
        };
        pre.clear();
        for j in 0..arch.trunk_width {
            pre.push(tape.affine(p, w + j * in_dim, Some(b + j), nodes, consts));
        }
        h.clear();
        for &z in &pre {
            h.push(tape.relu(z));
        }
    }

    let (w, b) = offsets.sigma;
    let trunk_nodes = contiguous(tape, &h);
    let sigma_pre = tape.affine(p, w, Some(b), trunk_nodes, ConstRange::EMPTY);
    let sigma = tape.softplus(sigma_pre);

    let (w, b) = offsets.bottleneck;
    let mut feat: Vec<ValueId> = Vec::with_capacity(arch.head_width);
    for j in 0..arch.head_width {
        feat.push(tape.affine(p, w + j * arch.trunk_width, Some(b + j), trunk_nodes, ConstRange::EMPTY));
    }

    let (w, b) = offsets.color_hidden;
    let feat_nodes = contiguous(tape, &feat);
    let in_dim = arch.head_width + arch.dir_encoding.feature_len();
    pre.clear();
    for j in 0..arch.head_width {
        pre.push(tape.affine(p, w + j * in_dim, Some(b + j), feat_nodes, d_enc));
    }
    let mut hidden: Vec<ValueId> = Vec::with_capacity(arch.head_width);
    for &z in &pre {
        hidden.push(tape.relu(z));
    }

    let (w, b) = offsets.rgb;
    let hidden_nodes = contiguous(tape, &hidden);
    let mut color = [ValueId::default(); 3];
    for (j, c) in color.iter_mut().enumerate() {
        let z = tape.affine(p, w + j * arch.head_width, Some(b + j), hidden_nodes, ConstRange::EMPTY);
        *c = tape.sigmoid(z);
    }

    let (w, b) = offsets.beta2;
    let z = tape.affine(p, w, Some(b), hidden_nodes, ConstRange::EMPTY);
    let sp = tape.softplus(z);
    let beta2 = tape.add_const(sp, arch.beta_min);

    FieldOutputIds {
        color,
        beta2,
        sigma,
    }
}

/// Trained model snapshot: architecture, parameters, optimizer moments and
/// schedule position. Binary layout: magic, version, JSON header, raw
/// little-endian f64 tensors. Round-trips bit-exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub arch: MlpArchitecture,
    pub iter: u64,
    pub mask_t: u64,
    pub mask_horizon: u64,
    pub params: ParamSet,
    pub adam: Option<crate::autodiff::AdamState>,
}

const CKPT_MAGIC: &[u8; 8] = b"FNRFCKP1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: MlpArchitecture,
    iter: u64,
    mask_t: u64,
    mask_horizon: u64,
    tensors: Vec<crate::autodiff::TensorMeta>,
    n_params: usize,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], n: usize, pos: &mut usize) -> Result<Vec<f64>> {
    let need = n * 8;
    if *pos + need > bytes.len() {
        return Err(Error::data("checkpoint truncated"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let b: [u8; 8] = bytes[*pos + i * 8..*pos + (i + 1) * 8].try_into().unwrap();
        out.push(f64::from_le_bytes(b));
    }
    *pos += need;
    Ok(out)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            arch: self.arch.clone(),
            iter: self.iter,
            mask_t: self.mask_t,
            mask_horizon: self.mask_horizon,
            tensors: self.params.tensors().to_vec(),
            n_params: self.params.len(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                step: a.step,
                beta1: a.beta1,
                beta2: a.beta2,
                epsilon: a.epsilon,
            }),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_json);
        write_f64s(&mut buf, self.params.values());
        if let Some(a) = &self.adam {
            write_f64s(&mut buf, &a.m);
            write_f64s(&mut buf, &a.v);
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[0..8] != CKPT_MAGIC {
            return Err(Error::data(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if 16 + hlen > bytes.len() {
            return Err(Error::data("checkpoint truncated"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
            .map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
        let mut pos = 16 + hlen;
        let values = read_f64s(&bytes, header.n_params, &mut pos)?;
        let mut params = ParamSet::new();
        for t in &header.tensors {
            params.register(
                t.name.clone(),
                &t.shape,
                values[t.offset..t.offset + t.len()].to_vec(),
            );
        }
        let adam = match header.adam {
            Some(a) => {
                let m = read_f64s(&bytes, header.n_params, &mut pos)?;
                let v = read_f64s(&bytes, header.n_params, &mut pos)?;
                Some(crate::autodiff::AdamState {
                    m,
                    v,
                    step: a.step,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    epsilon: a.epsilon,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            arch: header.arch,
            iter: header.iter,
            mask_t: header.mask_t,
            mask_horizon: header.mask_horizon,
            params,
            adam,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode, EncodingConfig};

    fn tiny_arch() -> MlpArchitecture {
        MlpArchitecture {
            trunk_depth: 2,
            trunk_width: 10,
            skip_layers: vec![1],
            head_width: 6,
            pos_encoding: EncodingConfig::new(2),
            dir_encoding: EncodingConfig::new(1),
            beta_min: 1e-4,
        }
    }

    fn encode_pair(arch: &MlpArchitecture, x: [f64; 3], d: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
        (
            encode(x, &arch.pos_encoding).unwrap(),
            encode(d, &arch.dir_encoding).unwrap(),
        )
    }

    #[test]
    fn zero_parameters_give_activation_midpoints() {
        let arch = tiny_arch();
        let mut params = init_parameters(&arch, 0);
        for v in params.values_mut() {
            *v = 0.0;
        }
        let (x_enc, d_enc) = encode_pair(&arch, [0.3, -0.2, 0.5], [0.0, 0.0, 1.0]);
        let out = query(&params, &arch, &x_enc, &d_enc).unwrap();
        assert_eq!(out.color, [0.5, 0.5, 0.5]);
        assert!((out.sigma - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((out.beta2 - (std::f64::consts::LN_2 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn outputs_stay_in_range() {
        let arch = tiny_arch();
        let params = init_parameters(&arch, 3);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let (x_enc, d_enc) = encode_pair(&arch, x, [0.0, 1.0, 0.0]);
            let out = query(&params, &arch, &x_enc, &d_enc).unwrap();
            for c in out.color {
                assert!((0.0..=1.0).contains(&c));
            }
            assert!(out.sigma >= 0.0);
            assert!(out.beta2 >= arch.beta_min);
        }
    }

    #[test]
    fn sigma_is_direction_independent() {
        let arch = tiny_arch();
        let params = init_parameters(&arch, 7);
        let x = [0.4, 0.1, -0.6];
        let (x_enc, d1) = encode_pair(&arch, x, [1.0, 0.0, 0.0]);
        let (_, d2) = encode_pair(&arch, x, [0.0, -1.0, 0.0]);
        let o1 = query(&params, &arch, &x_enc, &d1).unwrap();
        let o2 = query(&params, &arch, &x_enc, &d2).unwrap();
        assert_eq!(o1.sigma, o2.sigma);
        assert_ne!(o1.color, o2.color);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = tiny_arch();
        let a = init_parameters(&arch, 11);
        let b = init_parameters(&arch, 11);
        let c = init_parameters(&arch, 12);
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let arch = MlpArchitecture::default();
        let params = init_parameters(&arch, 0);
        assert_eq!(params.len(), arch.param_count());
        // 4x64 trunk with skip at 2, heads of width 32, K_pos=8, K_dir=4
        let enc = 51;
        let dir = 27;
        let expect = (enc + 1) * 64
            + (64 + 1) * 64
            + (64 + enc + 1) * 64
            + (64 + 1) * 64
            + 65
            + (64 + 1) * 32
            + (32 + dir + 1) * 32
            + (32 + 1) * 3
            + 33;
        assert_eq!(params.len(), expect);
    }

    #[test]
    fn tape_query_matches_plain_query() {
        let arch = tiny_arch();
        let params = init_parameters(&arch, 5);
        let offsets = layer_offsets(&arch, &params);
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let d = [0.3, -0.5, 0.81];
            let (x_enc, d_enc) = encode_pair(&arch, x, d);
            let plain = query(&params, &arch, &x_enc, &d_enc).unwrap();

            let mut tape = Tape::new();
            let xr = tape.const_range(&x_enc);
            let dr = tape.const_range(&d_enc);
            let ids = query_tape(
                &mut tape,
                &params,
                &offsets,
                &arch,
                xr,
                dr,
                arch.pos_encoding.feature_len(),
            );
            for j in 0..3 {
                assert!((tape.value(ids.color[j]) - plain.color[j]).abs() < 1e-15);
            }
            assert!((tape.value(ids.sigma) - plain.sigma).abs() < 1e-15);
            assert!((tape.value(ids.beta2) - plain.beta2).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let arch = tiny_arch();
        let params = init_parameters(&arch, 9);
        let mut adam = crate::autodiff::AdamState::new(params.len());
        adam.step = 17;
        adam.m[3] = 0.123456789;
        adam.v[5] = 9.87e-7;
        let ckpt = Checkpoint {
            arch: arch.clone(),
            iter: 321,
            mask_t: 321,
            mask_horizon: 900,
            params: params.clone(),
            adam: Some(adam.clone()),
        };
        let dir = std::env::temp_dir().join(format!("fewnerf-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.arch, arch);
        assert_eq!(loaded.iter, 321);
        assert_eq!(loaded.mask_horizon, 900);
        let same_bits = params
            .values()
            .iter()
            .zip(loaded.params.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
        let la = loaded.adam.unwrap();
        assert_eq!(la.step, 17);
        assert_eq!(la.m[3].to_bits(), adam.m[3].to_bits());
        assert_eq!(la.v[5].to_bits(), adam.v[5].to_bits());
        std::fs::remove_dir_all(&dir).ok();
    }
}
