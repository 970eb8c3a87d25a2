//! `MACD` descriptor database: magic, version `u32`, count `u64`, dim `u32`,
//! then per record a `u32`-length-prefixed UTF-8 id and `dim` little-endian `f32`s.

use super::Descriptor;
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const DB_MAGIC: &[u8; 4] = b"MACD";
pub const DB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDb {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl DescriptorDb {
    pub fn new(dim: usize) -> Self {
        DescriptorDb {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inserts or replaces a record.
    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Dimension(format!(
                "record of dim {} in a dim {} database",
                values.len(),
                self.dim
            )));
        }
        let id = id.into();
        match self.index.get(&id) {
            Some(&i) => self.vectors[i] = values,
            None => {
                self.index.insert(id.clone(), self.ids.len());
                self.ids.push(id);
                self.vectors.push(values);
            }
        }
        Ok(())
    }

    pub fn insert_descriptor(&mut self, id: impl Into<String>, d: &Descriptor) -> Result<()> {
        self.insert(id, d.to_f32())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn descriptor(&self, id: &str) -> Option<Descriptor> {
        self.get(id)
            .map(|v| Descriptor::normalized(v.iter().map(|&x| x as f64).collect()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        let mut w = Writer::default();
        w.bytes(DB_MAGIC);
        w.u32(DB_VERSION);
        w.u64(self.ids.len() as u64);
        w.u32(self.dim as u32);
        for i in order {
            let id = self.ids[i].as_bytes();
            w.u32(id.len() as u32);
            w.bytes(id);
            for &v in &self.vectors[i] {
                w.f32(v);
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(DB_MAGIC)?;
        let version = r.u32()?;
        if version != DB_VERSION {
            return Err(r.err(format!("unsupported database version {version}")));
        }
        let count = r.u64()?;
        let dim = r.u32()? as usize;
        let mut db = DescriptorDb::new(dim);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err("record id is not UTF-8"))?
                .to_string();
            let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
            if db.index.contains_key(&id) {
                return Err(r.err(format!("duplicate record id {id}")));
            }
            db.insert(id, values)?;
        }
        r.finish()?;
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}
