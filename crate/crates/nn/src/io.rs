use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{LstmModel, LstmParams, LstmShape, NnError, Normalizer, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"ONOLSTM\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

// Layout (all little-endian):
//   magic[8] | version u32 | input_dim u32 | output_dim u32 | layers u32 |
//   hidden[layers] u32 | input mean/std f64[input_dim] x2 |
//   output mean/std f64[output_dim] x2 | n_params u64 | params f64[n_params]

pub fn write_model<W: Write>(model: &LstmModel, mut w: W) -> Result<()> {
    let shape = model.shape();
    w.write_all(MODEL_MAGIC)?;
    for v in [
        MODEL_FORMAT_VERSION,
        shape.input_dim as u32,
        shape.output_dim as u32,
        shape.hidden.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for h in &shape.hidden {
        w.write_all(&(*h as u32).to_le_bytes())?;
    }
    let arrays = [
        &model.input_norm.mean,
        &model.input_norm.std,
        &model.output_norm.mean,
        &model.output_norm.std,
    ];
    for a in arrays {
        write_f64s(&mut w, a)?;
    }
    w.write_all(&(model.params.data.len() as u64).to_le_bytes())?;
    write_f64s(&mut w, &model.params.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<LstmModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let input_dim = read_u32(&mut r)? as usize;
    let output_dim = read_u32(&mut r)? as usize;
    let layers = read_u32(&mut r)? as usize;
    if layers == 0 || layers > 64 {
        return Err(NnError::Format(format!("implausible layer count {layers}")));
    }
    let hidden = (0..layers)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = LstmShape::new(input_dim, hidden, output_dim)?;
    let input_norm = Normalizer {
        mean: read_f64s(&mut r, input_dim)?,
        std: read_f64s(&mut r, input_dim)?,
    };
    let output_norm = Normalizer {
        mean: read_f64s(&mut r, output_dim)?,
        std: read_f64s(&mut r, output_dim)?,
    };
    let mut n = [0u8; 8];
    r.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n) as usize;
    if n != shape.num_params() {
        return Err(NnError::Format(format!(
            "parameter count {n} does not match shape ({})",
            shape.num_params()
        )));
    }
    let data = read_f64s(&mut r, n)?;
    Ok(LstmModel {
        params: LstmParams::from_vec(shape, data)?,
        input_norm,
        output_norm,
    })
}

pub fn save_model(model: &LstmModel, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<LstmModel> {
    read_model(BufReader::new(File::open(path)?))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
