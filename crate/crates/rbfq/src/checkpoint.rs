//! Binary checkpoint format.
//!
//! Framing: magic string, then a sequence of sections, then a u64 trailer
//! holding the number of f64 payload values written. A reader that hits EOF
//! early or sees a trailer disagreement reports a format error, so truncated
//! or spliced files are rejected rather than half-loaded.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, LayoutEntry, MlpSpec, ParamStore};
use crate::rbf::{Norm, RBFQNet};

pub const MAGIC: &[u8; 5] = b"RBFQ1";
pub const REPLAY_MAGIC: &[u8; 5] = b"RBFR1";

const MAX_STR: u64 = 1 << 16;
const MAX_DIMS: u64 = 8;

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("file truncated".to_string())
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn get_str(r: &mut impl Read) -> Result<String> {
    let len = get_u64(r)?;
    if len > MAX_STR {
        return Err(Error::Format(format!("string length {len} out of range")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("non-utf8 name".to_string()))
}

pub(crate) fn put_magic(w: &mut impl Write, magic: &[u8; 5]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub(crate) fn check_magic(r: &mut impl Read, magic: &[u8; 5]) -> Result<()> {
    let mut buf = [0u8; 5];
    read_exact(r, &mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Layout descriptor list followed by the flat array. `count` accumulates
/// the f64 payload for the trailer.
pub(crate) fn put_params(w: &mut impl Write, ps: &ParamStore, count: &mut u64) -> Result<()> {
    put_u64(w, ps.layout().len() as u64)?;
    for e in ps.layout() {
        put_str(w, &e.name)?;
        put_u64(w, e.shape.len() as u64)?;
        for &d in &e.shape {
            put_u64(w, d as u64)?;
        }
    }
    for &v in ps.values() {
        put_f64(w, v)?;
    }
    *count += ps.len() as u64;
    Ok(())
}

pub(crate) fn get_params(r: &mut impl Read, count: &mut u64) -> Result<ParamStore> {
    let blocks = get_u64(r)?;
    if blocks > MAX_STR {
        return Err(Error::Format(format!("block count {blocks} out of range")));
    }
    let mut layout = Vec::with_capacity(blocks as usize);
    let mut offset = 0usize;
    for _ in 0..blocks {
        let name = get_str(r)?;
        let ndims = get_u64(r)?;
        if ndims > MAX_DIMS {
            return Err(Error::Format(format!("rank {ndims} out of range")));
        }
        let mut shape = Vec::with_capacity(ndims as usize);
        for _ in 0..ndims {
            shape.push(get_u64(r)? as usize);
        }
        let entry = LayoutEntry { name, shape, offset };
        offset += entry.len();
        layout.push(entry);
    }
    let mut values = vec![0.0; offset];
    for v in &mut values {
        *v = get_f64(r)?;
    }
    *count += offset as u64;
    ParamStore::from_parts(layout, values)
}

pub fn write_params(w: &mut impl Write, ps: &ParamStore) -> Result<()> {
    put_magic(w, MAGIC)?;
    let mut count = 0;
    put_params(w, ps, &mut count)?;
    put_u64(w, count)
}

pub fn read_params(r: &mut impl Read) -> Result<ParamStore> {
    check_magic(r, MAGIC)?;
    let mut count = 0;
    let ps = get_params(r, &mut count)?;
    let trailer = get_u64(r)?;
    if trailer != count {
        return Err(Error::Format(format!(
            "trailer count {trailer} but read {count} values"
        )));
    }
    Ok(ps)
}

fn put_activation(w: &mut impl Write, a: Activation) -> Result<()> {
    let tag: u64 = match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    };
    put_u64(w, tag)
}

fn get_activation(r: &mut impl Read) -> Result<Activation> {
    match get_u64(r)? {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Identity),
        t => Err(Error::Format(format!("unknown activation tag {t}"))),
    }
}

fn put_spec(w: &mut impl Write, spec: &MlpSpec) -> Result<()> {
    put_u64(w, spec.input_dim as u64)?;
    put_u64(w, spec.hidden_dims.len() as u64)?;
    for &h in &spec.hidden_dims {
        put_u64(w, h as u64)?;
    }
    put_u64(w, spec.output_dim as u64)?;
    put_activation(w, spec.hidden_activation)?;
    put_activation(w, spec.output_activation)
}

fn get_spec(r: &mut impl Read) -> Result<MlpSpec> {
    let input = get_u64(r)? as usize;
    let nh = get_u64(r)?;
    if nh > MAX_DIMS {
        return Err(Error::Format(format!("hidden layer count {nh} out of range")));
    }
    let mut hidden = Vec::with_capacity(nh as usize);
    for _ in 0..nh {
        hidden.push(get_u64(r)? as usize);
    }
    let output = get_u64(r)? as usize;
    let hidden_act = get_activation(r)?;
    let output_act = get_activation(r)?;
    MlpSpec::new(input, &hidden, output, hidden_act, output_act)
}

/// Full Q-network checkpoint: header (N, beta, norm, box bounds, both
/// architectures), both parameter stores, f64-count trailer.
pub fn write_net(w: &mut impl Write, net: &RBFQNet) -> Result<()> {
    put_magic(w, MAGIC)?;
    let mut count = 0u64;
    put_u64(w, net.n_centroids as u64)?;
    put_f64(w, net.beta)?;
    count += 1;
    put_u64(w, match net.norm {
        Norm::L2 => 0,
        Norm::L1 => 1,
    })?;
    put_u64(w, net.action_low.len() as u64)?;
    for &v in net.action_low.iter().chain(&net.action_high) {
        put_f64(w, v)?;
        count += 1;
    }
    put_spec(w, &net.loc_spec)?;
    put_spec(w, &net.val_spec)?;
    put_params(w, &net.loc_params, &mut count)?;
    put_params(w, &net.val_params, &mut count)?;
    put_u64(w, count)
}

pub fn read_net(r: &mut impl Read) -> Result<RBFQNet> {
    check_magic(r, MAGIC)?;
    let mut count = 0u64;
    let n_centroids = get_u64(r)? as usize;
    let beta = get_f64(r)?;
    count += 1;
    let norm = match get_u64(r)? {
        0 => Norm::L2,
        1 => Norm::L1,
        t => return Err(Error::Format(format!("unknown norm tag {t}"))),
    };
    let ad = get_u64(r)? as usize;
    if ad as u64 > MAX_STR {
        return Err(Error::Format(format!("action dim {ad} out of range")));
    }
    let mut action_low = vec![0.0; ad];
    let mut action_high = vec![0.0; ad];
    for v in action_low.iter_mut().chain(action_high.iter_mut()) {
        *v = get_f64(r)?;
        count += 1;
    }
    let loc_spec = get_spec(r)?;
    let val_spec = get_spec(r)?;
    let loc_params = get_params(r, &mut count)?;
    let val_params = get_params(r, &mut count)?;
    let trailer = get_u64(r)?;
    if trailer != count {
        return Err(Error::Format(format!(
            "trailer count {trailer} but read {count} values"
        )));
    }
    if loc_spec.output_dim != n_centroids * ad || val_spec.output_dim != n_centroids {
        return Err(Error::Format(format!(
            "head dims ({}, {}) disagree with {n_centroids} centroids x {ad} action dims",
            loc_spec.output_dim, val_spec.output_dim
        )));
    }
    if loc_params.len() != loc_spec.param_count() || val_params.len() != val_spec.param_count() {
        return Err(Error::Format("parameter blocks do not match specs".to_string()));
    }
    Ok(RBFQNet {
        loc_spec,
        val_spec,
        loc_params,
        val_params,
        n_centroids,
        beta,
        norm,
        action_low,
        action_high,
    })
}

pub fn save_net(path: &Path, net: &RBFQNet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<RBFQNet> {
    let mut r = BufReader::new(File::open(path)?);
    read_net(&mut r)
}
