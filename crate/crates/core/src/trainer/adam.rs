use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Gradients, Parameters};

const MAGIC: &[u8; 4] = b"ADM1";

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adaptive-moment optimizer with bias correction. Moments are kept in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    /// Number of updates applied so far.
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Parameters<f32>) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Adam {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn update(
        &mut self,
        params: &mut Parameters<f32>,
        grads: &Gradients<f32>,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads.tensor(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..tensor.data.len() {
                let gj = g[j] as f64;
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let p = tensor.data[j] as f64 - lr * mhat / (vhat.sqrt() + EPSILON);
                tensor.data[j] = p as f32;
            }
        }
        Ok(())
    }

    /// `ADM1 | step u64 | tensor count u64 | per tensor: len u64, m, v` (LE).
    pub fn save(&self, path: &Path) -> Result<()> {
        let total: usize = self.m.iter().map(|t| t.len()).sum();
        let mut buf = Vec::with_capacity(20 + 8 * self.m.len() + 16 * total);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::Format(format!(
                "{}: not an optimizer state file",
                path.display()
            )));
        }
        let step = r.u64()?;
        let count = r.u64()? as usize;
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let len = r.u64()? as usize;
            m.push((0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
            v.push((0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Length(format!("{}: trailing bytes", path.display())));
        }
        Ok(Adam { step, m, v })
    }

    pub(crate) fn matches(&self, params: &Parameters<f32>) -> bool {
        self.m.len() == params.len()
            && self
                .m
                .iter()
                .zip(params.tensors())
                .all(|(m, t)| m.len() == t.data.len())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Length(format!(
                "{}: truncated optimizer state",
                self.path.display()
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
