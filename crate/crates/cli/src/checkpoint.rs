//! `CLWB` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CLWB" | version u16 | section count u16 | count × (tag [u8;4], offset u64, len u64)
//! | section payloads | CRC-32 of every preceding byte (u32)
//! ```
//!
//! Offsets are relative to the first payload byte. Reals are stored as raw `f64` bits.

use clwb_core::backbones::{HatState, Isolation, MaskedNet, SupState};
use clwb_core::numkit::{Activation, Dense, DenseNet, Matrix};
use clwb_core::oodlab::HeadLayout;
use clwb_core::TaskTopology;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"CLWB";
pub const FORMAT_VERSION: u16 = 1;

/// A trained network plus the task layout it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: MaskedNet,
    pub topology: TaskTopology,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn reals(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Matrix) {
        self.len(m.rows());
        self.len(m.cols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
    fn net(&mut self, n: &DenseNet) {
        self.len(n.layers().len());
        for l in n.layers() {
            self.u8(match l.activation {
                Activation::Relu => 0,
                Activation::Identity => 1,
            });
            self.matrix(&l.weight);
            self.reals(&l.bias);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Self { buf, pos: 0, section }
    }

    fn err(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Format(format!("checkpoint section {}: {msg}", self.section))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| self.err("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn scalar(&mut self) -> Result<usize, CliError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("value {v} overflows usize")))
    }
    /// A count that must fit in the remaining bytes at `unit` bytes per element.
    fn len(&mut self, unit: usize) -> Result<usize, CliError> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(unit as u64).is_none_or(|b| b > left) {
            return Err(self.err(format!("count {n} exceeds the section")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn reals(&mut self) -> Result<Vec<f64>, CliError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<Matrix, CliError> {
        let rows = self.scalar()?;
        let cols = self.scalar()?;
        let n = rows.checked_mul(cols).filter(|&n| n * 8 <= self.buf.len() - self.pos).ok_or_else(|| self.err("matrix exceeds the section"))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Matrix::from_vec(rows, cols, data).map_err(|e| self.err(e))
    }
    fn net(&mut self) -> Result<DenseNet, CliError> {
        let n = self.len(1)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let activation = match self.u8()? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                a => return Err(self.err(format!("unknown activation {a}"))),
            };
            let weight = self.matrix()?;
            let bias = self.reals()?;
            layers.push(Dense { weight, bias, activation });
        }
        DenseNet::new(layers).map_err(|e| self.err(e))
    }
    fn finish(&self) -> Result<(), CliError> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

const HEADER: usize = 4 + 2 + 2;
const ENTRY: usize = 4 + 8 + 8;

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();
    let mut w = Writer::default();
    w.len(ck.topology.task_count());
    ck.topology.sizes().iter().for_each(|&s| w.len(s));
    sections.push((*b"TOPO", w.0));

    let mut w = Writer::default();
    match ck.net.layout {
        HeadLayout::Plain => {
            w.u8(0);
            w.len(0);
        }
        HeadLayout::Rotation { side } => {
            w.u8(1);
            w.len(side);
        }
    }
    w.len(ck.net.finished);
    sections.push((*b"META", w.0));

    let mut w = Writer::default();
    w.net(&ck.net.trunk);
    sections.push((*b"TRNK", w.0));

    let mut w = Writer::default();
    w.len(ck.net.heads.len());
    ck.net.heads.iter().for_each(|h| w.net(h));
    sections.push((*b"HEAD", w.0));

    let mut w = Writer::default();
    match &ck.net.isolation {
        Isolation::Hat(h) => {
            w.f64(h.s_max);
            w.u8(h.snap as u8);
            w.reals(&h.lambdas);
            w.len(h.embeddings.len());
            for task in &h.embeddings {
                w.len(task.len());
                task.iter().for_each(|e| w.reals(e));
            }
            w.len(h.accumulated.len());
            h.accumulated.iter().for_each(|a| w.reals(a));
            sections.push((*b"HATS", w.0));
        }
        Isolation::Sup(s) => {
            w.f64(s.p);
            w.len(s.masks.len());
            for task in &s.masks {
                w.len(task.len());
                task.iter().for_each(|m| w.matrix(m));
            }
            match &s.scores {
                None => w.u8(0),
                Some(scores) => {
                    w.u8(1);
                    w.len(scores.len());
                    scores.iter().for_each(|m| w.matrix(m));
                }
            }
            sections.push((*b"SUPS", w.0));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u16).to_le_bytes());
    let mut offset = 0u64;
    for (tag, body) in &sections {
        out.extend_from_slice(tag);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        offset += body.len() as u64;
    }
    for (_, body) in &sections {
        out.extend_from_slice(body);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks magic, version and checksum, in that order, then parses.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    if bytes.len() < HEADER + 4 || &bytes[..4] != MAGIC {
        return Err(CliError::Format("not a CLWB checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(CliError::Format(format!(
            "checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CliError::Corrupt(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let payload_start = HEADER + count * ENTRY;
    if payload_start > body.len() {
        return Err(CliError::Format("section table exceeds the file".into()));
    }
    let payload = &body[payload_start..];
    let mut sections: Vec<([u8; 4], &[u8])> = Vec::with_capacity(count);
    for i in 0..count {
        let e = &body[HEADER + i * ENTRY..HEADER + (i + 1) * ENTRY];
        let tag: [u8; 4] = e[..4].try_into().unwrap();
        let off = u64::from_le_bytes(e[4..12].try_into().unwrap());
        let len = u64::from_le_bytes(e[12..20].try_into().unwrap());
        let end = off.checked_add(len).filter(|&end| end <= payload.len() as u64);
        let Some(end) = end else {
            return Err(CliError::Format(format!("section {} exceeds the file", String::from_utf8_lossy(&tag))));
        };
        sections.push((tag, &payload[off as usize..end as usize]));
    }
    let find = |tag: &[u8; 4], name: &'static str| -> Result<Reader<'_>, CliError> {
        sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, b)| Reader::new(b, name))
            .ok_or_else(|| CliError::Format(format!("checkpoint lacks section {name}")))
    };

    let mut r = find(b"TOPO", "TOPO")?;
    let t = r.len(8)?;
    let sizes = (0..t).map(|_| r.scalar()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    let topology = TaskTopology::new(sizes).map_err(|e| r.err(e))?;

    let mut r = find(b"META", "META")?;
    let layout = match (r.u8()?, r.scalar()?) {
        (0, _) => HeadLayout::Plain,
        (1, side) => HeadLayout::Rotation { side },
        (l, _) => return Err(r.err(format!("unknown head layout {l}"))),
    };
    let finished = r.scalar()?;
    r.finish()?;

    let mut r = find(b"TRNK", "TRNK")?;
    let trunk = r.net()?;
    r.finish()?;

    let mut r = find(b"HEAD", "HEAD")?;
    let n = r.len(8)?;
    let heads = (0..n).map(|_| r.net()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;

    let isolation = if let Ok(mut r) = find(b"HATS", "HATS") {
        let s_max = r.f64()?;
        let snap = r.u8()? != 0;
        let lambdas = r.reals()?;
        let tasks = r.len(8)?;
        let mut embeddings = Vec::with_capacity(tasks);
        for _ in 0..tasks {
            let layers = r.len(8)?;
            embeddings.push((0..layers).map(|_| r.reals()).collect::<Result<Vec<_>, _>>()?);
        }
        let layers = r.len(8)?;
        let accumulated = (0..layers).map(|_| r.reals()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Isolation::Hat(HatState { s_max, lambdas, snap, embeddings, accumulated })
    } else {
        let mut r = find(b"SUPS", "SUPS")?;
        let p = r.f64()?;
        let tasks = r.len(8)?;
        let mut masks = Vec::with_capacity(tasks);
        for _ in 0..tasks {
            let layers = r.len(16)?;
            masks.push((0..layers).map(|_| r.matrix()).collect::<Result<Vec<_>, _>>()?);
        }
        let scores = match r.u8()? {
            0 => None,
            1 => {
                let layers = r.len(16)?;
                Some((0..layers).map(|_| r.matrix()).collect::<Result<Vec<_>, _>>()?)
            }
            f => return Err(r.err(format!("bad score flag {f}"))),
        };
        r.finish()?;
        Isolation::Sup(SupState { p, masks, scores })
    };

    let net = MaskedNet { trunk, heads, isolation, layout, finished };
    check_consistency(&net, &topology)?;
    Ok(Checkpoint { net, topology })
}

fn check_consistency(net: &MaskedNet, topo: &TaskTopology) -> Result<(), CliError> {
    let bad = |m: String| Err(CliError::Format(format!("inconsistent checkpoint: {m}")));
    if net.finished > net.heads.len() || net.heads.len() > topo.task_count() {
        return bad(format!("{} finished tasks, {} heads, {} tasks", net.finished, net.heads.len(), topo.task_count()));
    }
    let width = net.trunk.output_width();
    for (k, h) in net.heads.iter().enumerate() {
        let mult = if matches!(net.layout, HeadLayout::Rotation { .. }) { 4 } else { 1 };
        if h.input_width() != width || h.output_width() != mult * topo.class_count(k) {
            return bad(format!("head {k} shape does not match the trunk and topology"));
        }
    }
    let hidden = net.trunk.layer_widths();
    match &net.isolation {
        Isolation::Hat(h) => {
            let ok_layers = |v: &Vec<Vec<f64>>| v.len() == hidden.len() && v.iter().zip(&hidden).all(|(e, &w)| e.len() == w);
            if h.embeddings.len() != net.heads.len() || !h.embeddings.iter().all(ok_layers) || !ok_layers(&h.accumulated) {
                return bad("HAT state does not match the trunk".into());
            }
            if h.lambdas.is_empty() || !(h.s_max > 0.0) {
                return bad("HAT hyperparameters out of range".into());
            }
        }
        Isolation::Sup(s) => {
            let shapes: Vec<(usize, usize)> = net.trunk.layers().iter().map(|l| (l.weight.rows(), l.weight.cols())).collect();
            let ok = |m: &Vec<Matrix>| m.len() == shapes.len() && m.iter().zip(&shapes).all(|(m, s)| (m.rows(), m.cols()) == *s);
            if s.masks.len() != net.finished || !s.masks.iter().all(ok) || !s.scores.iter().all(ok) {
                return bad("Sup state does not match the trunk".into());
            }
        }
    }
    if let HeadLayout::Rotation { side } = net.layout {
        if side * side != net.trunk.input_width() {
            return bad("rotation side does not match the input width".into());
        }
    }
    Ok(())
}

pub fn save(path: &std::path::Path, ck: &Checkpoint) -> Result<(), CliError> {
    crate::report::write_atomic(path, &encode(ck))
}

pub fn load(path: &std::path::Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
