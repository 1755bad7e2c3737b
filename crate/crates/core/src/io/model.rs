use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::features::{DescriptorParams, Modality, PatchFeature, PatchTemplate, QuantizedOrientation};
use crate::forest::{ForestModel, Leaf, Node, TrainConfig, Tree, VoteMode};

use super::write_atomic;

pub const MODEL_MAGIC: [u8; 4] = *b"LCHF";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

type W = Vec<u8>;

fn put_f32s(w: &mut W, v: &[f32]) {
    for x in v {
        w.write_f32::<LittleEndian>(*x).expect("vec write");
    }
}

fn put_u32(w: &mut W, v: usize) {
    w.write_u32::<LittleEndian>(u32::try_from(v).expect("count fits u32")).expect("vec write");
}

fn put_str(w: &mut W, s: &str) {
    put_u32(w, s.len());
    w.extend_from_slice(s.as_bytes());
}

fn put_template(w: &mut W, t: &PatchTemplate) {
    put_f32s(w, &[t.center_depth]);
    put_f32s(w, &t.vote_offset);
    put_f32s(w, &t.vote_rotation);
    put_u32(w, t.source_view as usize);
    put_u32(w, t.features.len());
    for f in &t.features {
        put_f32s(w, &f.offset);
        put_f32s(w, &[f.depth_delta]);
        w.push(f.orientation.kind().index() as u8);
        w.push(f.orientation.bits());
    }
}

fn put_leaf(w: &mut W, l: &Leaf) {
    put_f32s(w, &[l.p_fg]);
    put_u32(w, l.patch_indices.len());
    for &i in &l.patch_indices {
        put_u32(w, i as usize);
    }
    put_u32(w, l.modes.len());
    for m in &l.modes {
        put_f32s(w, &m.offset);
        put_f32s(w, &m.rotation);
        put_u32(w, m.support as usize);
    }
}

/// Canonical encoding: equal models give equal bytes.
pub fn model_to_bytes(model: &ForestModel) -> Result<Vec<u8>> {
    let mut p = Vec::new();
    put_str(&mut p, &model.object_id);
    p.write_f64::<LittleEndian>(model.diameter).expect("vec write");
    put_f32s(&mut p, &[model.params.gradient_threshold]);
    put_u32(&mut p, model.params.normal_smoothing as usize);
    put_f32s(&mut p, &[model.params.tau_d]);
    let cfg = serde_json::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    put_str(&mut p, &cfg);
    put_u32(&mut p, model.trees.len());
    for tree in &model.trees {
        put_u32(&mut p, tree.len());
        for node in tree.nodes() {
            match node {
                Node::Split {
                    template,
                    threshold,
                    left,
                    right,
                } => {
                    p.push(0);
                    put_f32s(&mut p, &[*threshold]);
                    put_u32(&mut p, *left as usize);
                    put_u32(&mut p, *right as usize);
                    put_template(&mut p, template);
                }
                Node::Leaf(leaf) => {
                    p.push(1);
                    put_leaf(&mut p, leaf);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + p.len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_VERSION).expect("vec write");
    out.write_u64::<LittleEndian>(p.len() as u64).expect("vec write");
    out.write_u32::<LittleEndian>(crc32fast::hash(&p)).expect("vec write");
    out.extend_from_slice(&p);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn truncated<T>(_: std::io::Error) -> Result<T> {
    Err(Error::CorruptModel("unexpected end of payload".into()))
}

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.buf.read_u8().or_else(truncated)
    }

    fn u32(&mut self) -> Result<u32> {
        self.buf.read_u32::<LittleEndian>().or_else(truncated)
    }

    /// A count that must be coverable by the remaining bytes at
    /// `min_item_len` bytes per item, so corrupt counts cannot allocate.
    fn count(&mut self, min_item_len: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_len) > self.buf.len() {
            return Err(Error::CorruptModel(format!("count {n} exceeds remaining payload")));
        }
        Ok(n)
    }

    fn f32(&mut self) -> Result<f32> {
        self.buf.read_f32::<LittleEndian>().or_else(truncated)
    }

    fn f32s<const N: usize>(&mut self) -> Result<[f32; N]> {
        let mut out = [0.0; N];
        for x in &mut out {
            *x = self.f32()?;
        }
        Ok(out)
    }

    fn f64(&mut self) -> Result<f64> {
        self.buf.read_f64::<LittleEndian>().or_else(truncated)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.count(1)?;
        let (s, rest) = self.buf.split_at(n);
        self.buf = rest;
        String::from_utf8(s.to_vec()).map_err(|_| Error::CorruptModel("string is not UTF-8".into()))
    }

    fn template(&mut self) -> Result<PatchTemplate> {
        let center_depth = self.f32()?;
        let vote_offset = self.f32s::<3>()?;
        let vote_rotation = self.f32s::<4>()?;
        let source_view = self.u32()?;
        let n = self.count(14)?;
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            let offset = self.f32s::<2>()?;
            let depth_delta = self.f32()?;
            let kind = match self.u8()? {
                0 => Modality::Gradient,
                1 => Modality::Normal,
                k => return Err(Error::CorruptModel(format!("unknown modality {k}"))),
            };
            let bits = self.u8()?;
            let orientation = QuantizedOrientation::from_bits(kind, bits)
                .ok_or_else(|| Error::CorruptModel(format!("orientation byte {bits:#04x} is not one bin")))?;
            features.push(PatchFeature {
                offset,
                orientation,
                depth_delta,
            });
        }
        Ok(PatchTemplate {
            features,
            center_depth,
            vote_offset,
            vote_rotation,
            source_view,
        })
    }

    fn leaf(&mut self) -> Result<Leaf> {
        let p_fg = self.f32()?;
        let n = self.count(4)?;
        let patch_indices = (0..n).map(|_| self.u32()).collect::<Result<_>>()?;
        let m = self.count(32)?;
        let mut modes = Vec::with_capacity(m);
        for _ in 0..m {
            modes.push(VoteMode {
                offset: self.f32s::<3>()?,
                rotation: self.f32s::<4>()?,
                support: self.u32()?,
            });
        }
        Ok(Leaf {
            patch_indices,
            modes,
            p_fg,
        })
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ForestModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptModel(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(Error::CorruptModel("bad magic".into()));
    }
    let mut h = &bytes[4..HEADER_LEN];
    let version = h.read_u32::<LittleEndian>().or_else(truncated)?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let len = h.read_u64::<LittleEndian>().or_else(truncated)?;
    let crc = h.read_u32::<LittleEndian>().or_else(truncated)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::CorruptModel(format!(
            "payload is {} bytes, header says {len}",
            payload.len()
        )));
    }
    if crc32fast::hash(payload) != crc {
        return Err(Error::CorruptModel("checksum mismatch".into()));
    }

    let mut r = Reader { buf: payload };
    let object_id = r.string()?;
    let diameter = r.f64()?;
    let params = DescriptorParams {
        gradient_threshold: r.f32()?,
        normal_smoothing: r.u32()?,
        tau_d: r.f32()?,
    };
    let cfg_text = r.string()?;
    let config: TrainConfig =
        serde_json::from_str(&cfg_text).map_err(|e| Error::CorruptModel(format!("training config: {e}")))?;
    let tree_count = r.count(4)?;
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let n = r.count(5)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match r.u8()? {
                0 => {
                    let threshold = r.f32()?;
                    let left = r.u32()?;
                    let right = r.u32()?;
                    Node::Split {
                        template: r.template()?,
                        threshold,
                        left,
                        right,
                    }
                }
                1 => Node::Leaf(r.leaf()?),
                t => return Err(Error::CorruptModel(format!("unknown node tag {t}"))),
            });
        }
        trees.push(Tree::from_nodes(nodes)?);
    }
    if !r.buf.is_empty() {
        return Err(Error::CorruptModel(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(ForestModel {
        object_id,
        diameter,
        params,
        config,
        trees,
    })
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
