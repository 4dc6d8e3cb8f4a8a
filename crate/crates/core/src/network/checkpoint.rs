//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"AANCKPT\0"  u32 version
//! u64 n, n bytes      model config as JSON
//! [u8; 32] u64 u128   dropout rng seed, stream, word position
//! 15 × (u64 n, n × f64) gate, w1, b1, bn1 γ β μ σ², w2, b2, bn2 γ β μ σ², w_out, b_out
//! ```
//!
//! Encoding is canonical, so save → load → save is byte-identical.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchNorm, Model, ModelConfig, NetworkError};

const MAGIC: &[u8; 8] = b"AANCKPT\0";
const VERSION: u32 = 1;

fn tensors(m: &Model) -> [&[f64]; 15] {
    [
        &m.gate,
        &m.w1,
        &m.b1,
        &m.bn1.gamma,
        &m.bn1.beta,
        &m.bn1.running_mean,
        &m.bn1.running_var,
        &m.w2,
        &m.b2,
        &m.bn2.gamma,
        &m.bn2.beta,
        &m.bn2.running_mean,
        &m.bn2.running_var,
        &m.w_out,
        &m.b_out,
    ]
}

pub fn write_checkpoint(model: &Model, out: impl Write) -> Result<(), NetworkError> {
    let mut out = BufWriter::new(out);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let config =
        serde_json::to_vec(&model.config).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
    out.write_all(&(config.len() as u64).to_le_bytes())?;
    out.write_all(&config)?;
    out.write_all(&model.rng.get_seed())?;
    out.write_all(&model.rng.get_stream().to_le_bytes())?;
    out.write_all(&model.rng.get_word_pos().to_le_bytes())?;
    for t in tensors(model) {
        out.write_all(&(t.len() as u64).to_le_bytes())?;
        for x in t {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N], NetworkError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(input: &mut impl Read) -> Result<u64, NetworkError> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_tensor(input: &mut impl Read, expected: usize) -> Result<Vec<f64>, NetworkError> {
    let n = read_u64(input)? as usize;
    if n != expected {
        return Err(NetworkError::Checkpoint(format!(
            "tensor length {n}, config implies {expected}"
        )));
    }
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_checkpoint(input: impl Read) -> Result<Model, NetworkError> {
    let mut input = BufReader::new(input);
    if &read_array::<8>(&mut input)? != MAGIC {
        return Err(NetworkError::Checkpoint("not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(NetworkError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let len = read_u64(&mut input)? as usize;
    let mut config = vec![0u8; len];
    input.read_exact(&mut config)?;
    let config: ModelConfig =
        serde_json::from_slice(&config).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
    config.validate()?;

    let seed = read_array::<32>(&mut input)?;
    let stream = read_u64(&mut input)?;
    let word_pos = u128::from_le_bytes(read_array(&mut input)?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let (d, h1, h2, c) = (
        config.input_dim,
        config.hidden1,
        config.hidden2,
        config.classes,
    );
    let bn = |h: usize, input: &mut BufReader<_>| -> Result<BatchNorm, NetworkError> {
        Ok(BatchNorm {
            gamma: read_tensor(input, h)?,
            beta: read_tensor(input, h)?,
            running_mean: read_tensor(input, h)?,
            running_var: read_tensor(input, h)?,
        })
    };
    let gate = read_tensor(&mut input, config.gate_len())?;
    let w1 = read_tensor(&mut input, h1 * d)?;
    let b1 = read_tensor(&mut input, h1)?;
    let bn1 = bn(h1, &mut input)?;
    let w2 = read_tensor(&mut input, h2 * h1)?;
    let b2 = read_tensor(&mut input, h2)?;
    let bn2 = bn(h2, &mut input)?;
    let w_out = read_tensor(&mut input, c * h2)?;
    let b_out = read_tensor(&mut input, c)?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(NetworkError::Checkpoint("trailing bytes".into()));
    }
    Ok(Model {
        config,
        gate,
        w1,
        b1,
        bn1,
        w2,
        b2,
        bn2,
        w_out,
        b_out,
        rng,
    })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    write_checkpoint(model, std::fs::File::create(path)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, NetworkError> {
    read_checkpoint(std::fs::File::open(path)?)
}
