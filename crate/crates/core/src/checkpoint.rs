//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "COSAM01\0"
//! version  u32       1
//! count    u32       number of sections
//! table    count x { tag: 4 bytes, offset: u64, len: u64 }   (offset from file start)
//! payloads
//! ```
//!
//! Sections, all little-endian:
//!
//! * `CONF`: the training config as `key = value` text.
//! * `FPRT`: dataset fingerprint, hex SHA-256 of the two vocab files.
//! * `SAMP` (CoSam only): `c1 f64, c2 f64, l_max u32, multiplier f64,
//!   directed_edges u64`, then one `f32` logit per directed edge in graph order.
//! * `RECO`: `d u32, n u32, m u32`, then user and item embeddings row-major as `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::recommender::RecommenderModel;
use crate::sampler::{SamplerConfig, SamplerModel};
use crate::trainer::{SamplerKind, TrainConfig, TrainedModel};

pub const MAGIC: &[u8; 8] = b"COSAM01\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSegment {
    pub config: SamplerConfig,
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderSegment {
    pub d: u32,
    pub n: u32,
    pub m: u32,
    pub params: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub fingerprint: String,
    pub sampler: Option<SamplerSegment>,
    pub recommender: RecommenderSegment,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated section"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| bad("array too large"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(bad("trailing bytes in section"))
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, fingerprint: &str) -> Self {
        let rec = &model.recommender;
        Checkpoint {
            config: model.config.clone(),
            fingerprint: fingerprint.to_string(),
            sampler: model.sampler.as_ref().map(|s| SamplerSegment {
                config: *s.config(),
                logits: s.logits().iter().map(|&x| x as f32).collect(),
            }),
            recommender: RecommenderSegment {
                d: rec.dim() as u32,
                n: rec.n_users() as u32,
                m: rec.n_items() as u32,
                params: rec.params().iter().map(|&x| x as f32).collect(),
            },
        }
    }

    /// Rebuilds the models against `graph`, whose vocab fingerprint must be `fingerprint`.
    pub fn into_model(self, graph: &InteractionGraph, fingerprint: &str) -> Result<TrainedModel> {
        if self.fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.fingerprint, found: fingerprint.to_string() });
        }
        let r = self.recommender;
        if (r.n as usize, r.m as usize) != (graph.n_users(), graph.n_items()) {
            return Err(bad(format!(
                "checkpoint is for {} users x {} items, data has {} x {}",
                r.n,
                r.m,
                graph.n_users(),
                graph.n_items()
            )));
        }
        let recommender = RecommenderModel::from_parts(
            r.n as usize,
            r.m as usize,
            r.d as usize,
            r.params.iter().map(|&x| x as f64).collect(),
        )?;
        let sampler = match self.sampler {
            Some(seg) => {
                let mut s = SamplerModel::new(graph, seg.config)?;
                s.set_logits(graph, seg.logits.iter().map(|&x| x as f64).collect())?;
                Some(s)
            }
            None => None,
        };
        let mut config = self.config;
        if let Some(s) = &sampler {
            config.sampler_config = *s.config();
        }
        TrainedModel::from_parts(config, sampler, recommender, graph)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&[u8; 4], Vec<u8>)> = vec![
            (b"CONF", self.config.to_kv_text().into_bytes()),
            (b"FPRT", self.fingerprint.as_bytes().to_vec()),
        ];
        if let Some(s) = &self.sampler {
            let mut b = Vec::with_capacity(36 + 4 * s.logits.len());
            b.extend_from_slice(&s.config.c1.to_le_bytes());
            b.extend_from_slice(&s.config.c2.to_le_bytes());
            b.extend_from_slice(&(s.config.max_walk_len as u32).to_le_bytes());
            b.extend_from_slice(&s.config.candidate_multiplier.to_le_bytes());
            b.extend_from_slice(&(s.logits.len() as u64).to_le_bytes());
            put_f32s(&mut b, &s.logits);
            sections.push((b"SAMP", b));
        }
        let r = &self.recommender;
        let mut b = Vec::with_capacity(12 + 4 * r.params.len());
        for v in [r.d, r.n, r.m] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        put_f32s(&mut b, &r.params);
        sections.push((b"RECO", b));

        let header = 8 + 4 + 4 + 20 * sections.len();
        let mut out = Vec::with_capacity(header + sections.iter().map(|s| s.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        let mut offset = header as u64;
        for (tag, body) in &sections {
            out.extend_from_slice(*tag);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            offset += body.len() as u64;
        }
        for (_, body) in &sections {
            out.extend_from_slice(body);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut head = Reader { buf, pos: 0 };
        if head.take(8).map_err(|_| bad("file too short"))? != MAGIC {
            return Err(bad("bad magic, not a checkpoint"));
        }
        let version = head.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = head.u32()?;
        let (mut conf, mut fprt, mut samp, mut reco) = (None, None, None, None);
        for _ in 0..count {
            let tag: [u8; 4] = head.take(4)?.try_into().expect("4 bytes");
            let off = usize::try_from(head.u64()?).map_err(|_| bad("offset overflow"))?;
            let len = usize::try_from(head.u64()?).map_err(|_| bad("length overflow"))?;
            let body = off
                .checked_add(len)
                .and_then(|end| buf.get(off..end))
                .ok_or_else(|| bad(format!("section {} out of bounds", String::from_utf8_lossy(&tag))))?;
            let slot = match &tag {
                b"CONF" => &mut conf,
                b"FPRT" => &mut fprt,
                b"SAMP" => &mut samp,
                b"RECO" => &mut reco,
                _ => return Err(bad(format!("unknown section {}", String::from_utf8_lossy(&tag)))),
            };
            if slot.replace(body).is_some() {
                return Err(bad(format!("duplicate section {}", String::from_utf8_lossy(&tag))));
            }
        }
        let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| bad("section is not UTF-8"));
        let config = TrainConfig::from_kv_text(&text(conf.ok_or_else(|| bad("missing CONF section"))?)?)?;
        let fingerprint = text(fprt.ok_or_else(|| bad("missing FPRT section"))?)?;
        let sampler = match samp {
            Some(b) => {
                let mut r = Reader { buf: b, pos: 0 };
                let config = SamplerConfig {
                    c1: r.f64()?,
                    c2: r.f64()?,
                    max_walk_len: r.u32()? as usize,
                    candidate_multiplier: r.f64()?,
                };
                config.validate()?;
                let count = usize::try_from(r.u64()?).map_err(|_| bad("edge count overflow"))?;
                let logits = r.f32s(count)?;
                r.finish()?;
                Some(SamplerSegment { config, logits })
            }
            None => None,
        };
        let b = reco.ok_or_else(|| bad("missing RECO section"))?;
        let mut r = Reader { buf: b, pos: 0 };
        let (d, n, m) = (r.u32()?, r.u32()?, r.u32()?);
        let count = (n as usize + m as usize)
            .checked_mul(d as usize)
            .ok_or_else(|| bad("embedding size overflow"))?;
        let params = r.f32s(count)?;
        r.finish()?;
        if (config.sampler == SamplerKind::CoSam) != sampler.is_some() {
            return Err(bad(format!("sampler {} inconsistent with SAMP section", config.sampler)));
        }
        Ok(Checkpoint { config, fingerprint, sampler, recommender: RecommenderSegment { d, n, m, params } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
