use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Adam, Tape, Var};
use crate::error::{Error, Result};

/// Index of a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named `f32` parameter arrays in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<ParamId> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "parameter {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.data.push(data);
        Ok(ParamId(self.data.len() - 1))
    }

    /// Truncated normal with standard deviation `std`, resampling draws
    /// beyond two standard deviations.
    pub fn add_trunc_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f32,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f32 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], value: f32) -> Result<ParamId> {
        self.add(name, shape, vec![value; shape.iter().product()])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn data(&self, i: usize) -> &[f32] {
        &self.data[i]
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i]
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.data[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[f32])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.data)
            .map(|((n, s), d)| (n.as_str(), s.as_slice(), d.as_slice()))
    }

    /// Place every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<f32>) -> Bound {
        let vars = self
            .shapes
            .iter()
            .zip(&self.data)
            .map(|(s, d)| tape.var(s, d.clone()).expect("store shapes are consistent"))
            .collect();
        Bound { vars }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            entries: self
                .iter()
                .map(|(n, s, d)| (n.to_string(), s.to_vec(), d.to_vec()))
                .collect(),
        }
    }

    /// Overwrite values from a checkpoint. Every parameter must be present
    /// with a matching shape; extra entries are ignored.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for i in 0..self.len() {
            let (shape, data) = ckpt.get(&self.names[i]).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {}", self.names[i]))
            })?;
            if shape != self.shapes[i].as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {}: checkpoint shape {shape:?}, model shape {:?}",
                    self.names[i], self.shapes[i]
                )));
            }
            self.data[i].copy_from_slice(data);
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients in store order.
    pub fn grads(&self, grads: &super::Grads<f32>, store: &ParamStore) -> Vec<Vec<f32>> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| grads.get_or_zeros(*v, store.data(i).len()))
            .collect()
    }
}

/// Named arrays as stored on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|e| e.0 == name)
            .map(|e| (e.1.as_slice(), e.2.as_slice()))
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f32>) {
        self.entries.push((name.to_string(), shape.to_vec(), data));
    }

    /// Append optimizer moments and step count.
    pub fn push_adam(&mut self, adam: &Adam, store: &ParamStore) {
        for i in 0..store.len() {
            self.push(&format!("adam.m.{}", store.name(i)), store.shape(i), adam.m[i].clone());
            self.push(&format!("adam.v.{}", store.name(i)), store.shape(i), adam.v[i].clone());
        }
        self.push("adam.step", &[1], vec![adam.step as f32]);
    }

    /// Restore optimizer state saved by [`Checkpoint::push_adam`].
    pub fn restore_adam(&self, adam: &mut Adam, store: &ParamStore) -> Result<()> {
        for i in 0..store.len() {
            for (kind, buf) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                let name = format!("adam.{kind}.{}", store.name(i));
                let (_, d) = self
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
                if d.len() != buf.len() {
                    return Err(Error::Checkpoint(format!("{name}: size mismatch")));
                }
                buf.copy_from_slice(d);
            }
        }
        let (_, s) = self
            .get("adam.step")
            .ok_or_else(|| Error::Checkpoint("missing adam.step".into()))?;
        adam.step = s[0] as u64;
        Ok(())
    }
}

/// Manifest path paired with a checkpoint file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

const MANIFEST_HEADER: &str = "# splatsr checkpoint v1";

/// Write arrays as concatenated little-endian `f32` plus a text manifest
/// of `name<TAB>shape<TAB>byte offset`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut bin = BufWriter::new(fs::File::create(path)?);
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut offset = 0usize;
    let mut buf = Vec::new();
    for (name, shape, data) in &ckpt.entries {
        if name.contains(['\t', '\n']) {
            return Err(Error::Checkpoint(format!("unsupported name {name:?}")));
        }
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name}\t{}\t{offset}\n", dims.join(",")));
        buf.resize(data.len() * 4, 0);
        LittleEndian::write_f32_into(data, &mut buf);
        bin.write_all(&buf)?;
        offset += buf.len();
    }
    bin.flush()?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let text = fs::read_to_string(manifest_path(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Checkpoint("bad manifest header".into()));
    }
    let mut ckpt = Checkpoint::default();
    let mut expected = 0usize;
    for (ln, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |msg: &str| Error::Checkpoint(format!("manifest line {}: {msg}", ln + 2));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let shape: Vec<usize> = if f[1].is_empty() {
            Vec::new()
        } else {
            f[1].split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad shape"))?
        };
        let offset: usize = f[2].parse().map_err(|_| bad("bad offset"))?;
        if offset != expected {
            return Err(bad("offset out of sequence"));
        }
        let n: usize = shape.iter().product();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(bad("data truncated"));
        }
        let mut data = vec![0.0f32; n];
        LittleEndian::read_f32_into(&bytes[offset..end], &mut data);
        ckpt.entries.push((f[0].to_string(), shape, data));
        expected = end;
    }
    if expected != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last array",
            bytes.len() - expected
        )));
    }
    Ok(ckpt)
}
