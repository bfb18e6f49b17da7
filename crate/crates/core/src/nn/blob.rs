//! Binary interchange format for parameter vectors.
//!
//! Layout, all little-endian: magic `GPNW`, format version u16, hidden
//! activation u8, output kind u8, width count u32, widths u32 each, then the
//! flat parameter values as f64. Values are stored as f64 regardless of the
//! in-memory scalar type.

use std::io::{Read, Write};

use ndarray::Array1;

use super::{Activation, MlpArchitecture, OutputKind, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"GPNW";
const VERSION: u16 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Identity => 2,
    }
}

fn activation_from_code(c: u8) -> Result<Activation> {
    match c {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Identity),
        other => Err(Error::data(format!("unknown activation code {other}"), None)),
    }
}

fn output_code(o: OutputKind) -> u8 {
    match o {
        OutputKind::Identity => 0,
        OutputKind::SoftmaxDeferred => 1,
    }
}

fn output_from_code(c: u8) -> Result<OutputKind> {
    match c {
        0 => Ok(OutputKind::Identity),
        1 => Ok(OutputKind::SoftmaxDeferred),
        other => Err(Error::data(format!("unknown output-kind code {other}"), None)),
    }
}

/// Serializes a parameter vector with its architecture header.
pub fn write_param_blob<T: Scalar, W: Write>(params: &ParamVector<T>, mut out: W) -> Result<()> {
    let arch = params.arch();
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[activation_code(arch.hidden), output_code(arch.output)])?;
    out.write_all(&(arch.layer_widths.len() as u32).to_le_bytes())?;
    for &w in &arch.layer_widths {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    for &v in params.values().iter() {
        out.write_all(&v.to_f64c().to_le_bytes())?;
    }
    Ok(())
}

/// Reads one parameter blob, converting values into the requested scalar type.
pub fn read_param_blob<T: Scalar, R: Read>(mut input: R) -> Result<ParamVector<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::data("bad parameter blob magic", None));
    }
    let mut u16buf = [0u8; 2];
    input.read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(Error::data(
            format!("unsupported parameter blob version {version}"),
            None,
        ));
    }
    let mut codes = [0u8; 2];
    input.read_exact(&mut codes)?;
    let hidden = activation_from_code(codes[0])?;
    let output = output_from_code(codes[1])?;
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let n_widths = u32::from_le_bytes(u32buf) as usize;
    if n_widths < 2 || n_widths > 1024 {
        return Err(Error::data(
            format!("implausible width count {n_widths} in parameter blob"),
            None,
        ));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        input.read_exact(&mut u32buf)?;
        widths.push(u32::from_le_bytes(u32buf) as usize);
    }
    let arch = MlpArchitecture::new(widths, hidden, output)
        .map_err(|e| Error::data(format!("invalid architecture in blob: {e}"), None))?;
    let count = arch.param_count();
    let mut values = Array1::zeros(count);
    let mut f64buf = [0u8; 8];
    for i in 0..count {
        input.read_exact(&mut f64buf)?;
        values[i] = T::cast(f64::from_le_bytes(f64buf));
    }
    ParamVector::from_values(arch, values)
}
