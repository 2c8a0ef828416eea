//! Domain splits and the `LODG1` sample container.
//!
//! Layout: magic `LODG1\n`, sample count and image size (`u32` LE), then
//! per sample: domain id length (`u32`) and bytes, grade (`u8`), the five
//! inventory counts (`u32`), seed index (`u64`) and `3 * size * size`
//! pixels as `f64` LE.

use std::path::Path;

use super::grade::LesionInventory;
use super::synth::{generate_image, DomainSpec, SyntheticSample};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8] = b"LODG1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Seed index of sample `i` of a domain split. Domains and splits occupy
/// disjoint index ranges.
pub fn seed_index(domain_index: usize, split: Split, i: usize) -> u64 {
    let split_code = match split {
        Split::Train => 0u64,
        Split::Test => 1,
    };
    ((domain_index as u64) << 32) | (split_code << 28) | i as u64
}

/// `n` samples with grades cycling through 0..=4.
pub fn generate_split(
    global_seed: u64,
    domain: &DomainSpec,
    domain_index: usize,
    split: Split,
    n: usize,
    size: usize,
    threads: usize,
) -> Result<Vec<SyntheticSample>> {
    domain.validate()?;
    let make = |i: usize| generate_image(global_seed, seed_index(domain_index, split, i), (i % 5) as u8, size, domain);
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 {
        return (0..n).map(make).collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let make = &make;
                scope.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(make).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("generator thread panicked")?);
        }
        Ok(out)
    })
}

pub fn encode(samples: &[SyntheticSample]) -> Result<Vec<u8>> {
    let size = samples.first().map_or(0, |s| s.size);
    let mut out = DATASET_MAGIC.to_vec();
    out.extend((samples.len() as u32).to_le_bytes());
    out.extend((size as u32).to_le_bytes());
    for s in samples {
        if s.size != size || s.image.len() != 3 * size * size {
            return Err(Error::Contract(format!(
                "sample {} has size {} but the container holds {size}",
                s.seed_index, s.size
            )));
        }
        out.extend((s.domain_id.len() as u32).to_le_bytes());
        out.extend(s.domain_id.as_bytes());
        out.push(s.grade);
        let inv = &s.inventory;
        for v in [
            inv.microaneurysms,
            inv.hemorrhages,
            inv.hard_exudates,
            inv.soft_exudates,
            inv.neovascular_tangles,
        ] {
            out.extend(v.to_le_bytes());
        }
        out.extend(s.seed_index.to_le_bytes());
        for v in &s.image {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<SyntheticSample>> {
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let rest = bytes
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| bad("missing LODG1 magic".into()))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = rest
            .get(pos..pos + n)
            .ok_or_else(|| bad(format!("truncated at byte {}", pos + DATASET_MAGIC.len())))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let count = u32_at(take(4)?) as usize;
    let size = u32_at(take(4)?) as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let domain_id = String::from_utf8(take(len)?.to_vec()).map_err(|e| bad(format!("domain id: {e}")))?;
        let grade = take(1)?[0];
        let mut counts = [0u32; 5];
        for c in &mut counts {
            *c = u32_at(take(4)?);
        }
        let seed_index = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let image = take(8 * 3 * size * size)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(SyntheticSample {
            image,
            size,
            grade,
            inventory: LesionInventory {
                microaneurysms: counts[0],
                hemorrhages: counts[1],
                hard_exudates: counts[2],
                soft_exudates: counts[3],
                neovascular_tangles: counts[4],
            },
            domain_id,
            seed_index,
        });
    }
    if pos != rest.len() {
        return Err(bad(format!("{} trailing bytes", rest.len() - pos)));
    }
    Ok(samples)
}

pub fn save(path: &Path, samples: &[SyntheticSample]) -> Result<()> {
    std::fs::write(path, encode(samples)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<SyntheticSample>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
