//! Little-endian binary checkpoints for policies and kernels.
//!
//! ```text
//! magic        4 bytes  "BQPG"
//! version      u32      1
//! kind         u8       1 = policy, 2 = kernel
//! policy:
//!   state_dim  u32
//!   action_dim u32
//!   n_hidden   u32, then n_hidden × u32 widths
//!   n_params   u64, then n_params × f64   (θ: layers row-major W then b, then log-std)
//! kernel:
//!   feature    u8       0 = identity, 1 = MLP
//!   state_dim  u32
//!   n_hidden   u32, then n_hidden × u32 widths
//!   out_dim    u32
//!   c1, c2, σ² f64 × 3
//!   n_params   u64, then n_params × f64   (feature params, log ℓ, log sf)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernels::{DeepRbfKernel, FeatureMap, KernelConfig, KernelModel};
use crate::policy::{Activation, GaussianPolicy, Mlp};

const MAGIC: &[u8; 4] = b"BQPG";
pub const FORMAT_VERSION: u32 = 1;
const KIND_POLICY: u8 = 1;
const KIND_KERNEL: u8 = 2;
/// Refuse absurd headers rather than allocating for them.
const MAX_PARAMS: u64 = 1 << 28;

fn write_header(w: &mut impl Write, kind: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(kind)?;
    Ok(())
}

fn read_header(r: &mut impl Read, expected_kind: u8) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = r.read_u8()?;
    if kind != expected_kind {
        return Err(Error::Format(format!("expected kind {expected_kind}, found {kind}")));
    }
    Ok(())
}

fn write_sizes(w: &mut impl Write, sizes: &[usize]) -> Result<()> {
    w.write_u32::<LittleEndian>(sizes.len() as u32)?;
    for &s in sizes {
        w.write_u32::<LittleEndian>(s as u32)?;
    }
    Ok(())
}

fn read_sizes(r: &mut impl Read) -> Result<Vec<usize>> {
    let k = r.read_u32::<LittleEndian>()?;
    if k > 64 {
        return Err(Error::Format(format!("{k} hidden layers")));
    }
    (0..k).map(|_| Ok(r.read_u32::<LittleEndian>()? as usize)).collect()
}

fn write_params(w: &mut impl Write, p: &DVector<f64>) -> Result<()> {
    w.write_u64::<LittleEndian>(p.len() as u64)?;
    for &v in p.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_params(r: &mut impl Read, expected: usize) -> Result<DVector<f64>> {
    let count = r.read_u64::<LittleEndian>()?;
    if count > MAX_PARAMS || count as usize != expected {
        return Err(Error::Format(format!(
            "parameter count {count} does not match architecture ({expected})"
        )));
    }
    let mut v = Vec::with_capacity(expected);
    for _ in 0..expected {
        v.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(DVector::from_vec(v))
}

pub fn write_policy(w: &mut impl Write, policy: &GaussianPolicy) -> Result<()> {
    write_header(w, KIND_POLICY)?;
    w.write_u32::<LittleEndian>(policy.state_dim() as u32)?;
    w.write_u32::<LittleEndian>(policy.action_dim() as u32)?;
    write_sizes(w, policy.hidden())?;
    write_params(w, &policy.theta())
}

pub fn read_policy(r: &mut impl Read) -> Result<GaussianPolicy> {
    read_header(r, KIND_POLICY)?;
    let sd = r.read_u32::<LittleEndian>()? as usize;
    let ad = r.read_u32::<LittleEndian>()? as usize;
    let hidden = read_sizes(r)?;
    if sd == 0 || ad == 0 {
        return Err(Error::Format("zero policy dimension".into()));
    }
    let mut policy = GaussianPolicy::zeros(sd, ad, &hidden);
    let theta = read_params(r, policy.num_params())?;
    policy
        .set_theta(&theta)
        .map_err(|e| Error::Format(format!("invalid parameters: {e}")))?;
    Ok(policy)
}

pub fn save_policy(path: &Path, policy: &GaussianPolicy) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_policy(&mut w, policy)?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<GaussianPolicy> {
    read_policy(&mut BufReader::new(File::open(path)?))
}

pub fn write_kernel(w: &mut impl Write, model: &KernelModel) -> Result<()> {
    write_header(w, KIND_KERNEL)?;
    let k = &model.state_kernel;
    match &k.features {
        FeatureMap::Identity { dim } => {
            w.write_u8(0)?;
            w.write_u32::<LittleEndian>(*dim as u32)?;
            write_sizes(w, &[])?;
            w.write_u32::<LittleEndian>(*dim as u32)?;
        }
        FeatureMap::Network(net) => {
            w.write_u8(1)?;
            let s = net.sizes();
            w.write_u32::<LittleEndian>(s[0] as u32)?;
            write_sizes(w, &s[1..s.len() - 1])?;
            w.write_u32::<LittleEndian>(*s.last().unwrap() as u32)?;
        }
    }
    w.write_f64::<LittleEndian>(model.config.c1)?;
    w.write_f64::<LittleEndian>(model.config.c2)?;
    w.write_f64::<LittleEndian>(model.config.sigma2)?;
    write_params(w, &k.params())
}

/// Reads a kernel checkpoint; settings not stored in the file come from `base`.
pub fn read_kernel(r: &mut impl Read, base: &KernelConfig) -> Result<KernelModel> {
    read_header(r, KIND_KERNEL)?;
    let feature = r.read_u8()?;
    let sd = r.read_u32::<LittleEndian>()? as usize;
    let hidden = read_sizes(r)?;
    let out = r.read_u32::<LittleEndian>()? as usize;
    let features = match feature {
        0 => FeatureMap::Identity { dim: sd },
        1 => {
            let mut sizes = vec![sd];
            sizes.extend(hidden);
            sizes.push(out);
            FeatureMap::Network(Mlp::zeros(&sizes, Activation::Tanh))
        }
        other => return Err(Error::Format(format!("unknown feature kind {other}"))),
    };
    let mut config = base.clone();
    config.c1 = r.read_f64::<LittleEndian>()?;
    config.c2 = r.read_f64::<LittleEndian>()?;
    config.sigma2 = r.read_f64::<LittleEndian>()?;
    config
        .validate()
        .map_err(|e| Error::Format(format!("invalid hyperparameters: {e}")))?;
    let d = features.output_dim();
    let mut state_kernel = DeepRbfKernel {
        features,
        log_lengthscales: DVector::zeros(d),
        log_signal_scale: 0.0,
    };
    let p = read_params(r, state_kernel.num_params())?;
    state_kernel.set_params(&p)?;
    Ok(KernelModel {
        config,
        state_kernel,
    })
}
