//! Self-describing JSON checkpoints for trained length models.
//!
//! A checkpoint is one JSON object with a header (`format`, `version`,
//! `scalar`, `kind`) and the model under `model`. Floats are written in
//! shortest round-trip form, so loading restores every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use super::moe::{MlpRegressor, MoeModel};
use crate::error::{Error, Result};
use crate::num::Real;

pub const FORMAT: &str = "goodput-length-model";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum LengthModel<T> {
    Moe(MoeModel<T>),
    SingleMlp(MlpRegressor<T>),
}

impl<T: Real> PartialEq for LengthModel<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (LengthModel::Moe(a), LengthModel::Moe(b)) => a == b,
            (LengthModel::SingleMlp(a), LengthModel::SingleMlp(b)) => a == b,
            _ => false,
        }
    }
}

impl<T> LengthModel<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            LengthModel::Moe(_) => "moe",
            LengthModel::SingleMlp(_) => "single_mlp",
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T: Real> {
    format: &'static str,
    version: u32,
    scalar: &'static str,
    kind: &'static str,
    model: &'a LengthModel<T>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    scalar: String,
    #[allow(dead_code)]
    model: IgnoredAny,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
struct EnvelopeIn<T> {
    model: LengthModel<T>,
}

pub fn write_model<T: Real, W: Write>(w: W, model: &LengthModel<T>) -> Result<()> {
    let env = EnvelopeOut { format: FORMAT, version: VERSION, scalar: T::TAG, kind: model.kind(), model };
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &env)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<T: Real, R: Read>(mut r: R) -> Result<LengthModel<T>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let header: Header = serde_json::from_str(&text)?;
    if header.format != FORMAT {
        return Err(Error::Validation(format!("not a length-model checkpoint: format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::Validation(format!("unsupported checkpoint version {}", header.version)));
    }
    if header.scalar != T::TAG {
        return Err(Error::Validation(format!(
            "checkpoint holds {} parameters, expected {}",
            header.scalar,
            T::TAG
        )));
    }
    let env: EnvelopeIn<T> = serde_json::from_str(&text)?;
    Ok(env.model)
}

pub fn save_model<T: Real>(path: impl AsRef<Path>, model: &LengthModel<T>) -> Result<()> {
    write_model(File::create(path)?, model)
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<LengthModel<T>> {
    read_model(BufReader::new(File::open(path)?))
}
