//! `.4dgs` raw frame interchange: little-endian, magic `4DGS`, u32 count,
//! u8 SH degree, then per primitive f32 center(3), rotation(4, wxyz),
//! log-scale(3), opacity logit(1) and the SH block.

use std::io::{Read, Write};

use super::{num_coeffs, sh::MAX_SH_DEGREE, GaussianFrameSet, GaussianPrimitive};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"4DGS";

pub fn write_raw_frame<W: Write>(set: &GaussianFrameSet, mut w: W) -> Result<()> {
    let degree = match set.primitives.first() {
        Some(p) => p.sh_degree().ok_or_else(|| Error::invalid("bad SH length"))?,
        None => 0,
    };
    w.write_all(MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    w.write_all(&[degree as u8])?;
    for p in &set.primitives {
        if p.sh.len() != num_coeffs(degree) {
            return Err(Error::invalid("mixed SH degrees in one frame"));
        }
        for v in p.geometry().iter().chain(p.sh.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_raw_frame<R: Read>(mut r: R, frame_index: u32) -> Result<GaussianFrameSet> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head).map_err(|_| Error::Truncated("raw frame header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::format("bad .4dgs magic"));
    }
    let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let degree = head[8] as usize;
    if degree > MAX_SH_DEGREE {
        return Err(Error::format(format!("SH degree {degree} unsupported")));
    }
    let per = super::GEOMETRY_FLOATS + num_coeffs(degree);
    let mut buf = vec![0u8; 4 * per];
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| Error::Truncated("raw primitive".into()))?;
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (g, sh) = vals.split_at(super::GEOMETRY_FLOATS);
        primitives.push(GaussianPrimitive::from_geometry(g, sh.to_vec()));
    }
    Ok(GaussianFrameSet::new(primitives, frame_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Quat, Vec3};

    #[test]
    fn round_trip_f32_exact_values() {
        let p = GaussianPrimitive {
            center: Vec3::new(0.5, -0.25, 2.0),
            rotation: Quat::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vec3::new(-2.0, -1.5, -3.0),
            opacity_logit: 0.75,
            sh: vec![0.125; 12],
        };
        let set = GaussianFrameSet::new(vec![p.clone(), p], 3);
        let mut bytes = Vec::new();
        write_raw_frame(&set, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 9 + 2 * 4 * 23);
        assert_eq!(&bytes[..4], b"4DGS");
        let back = read_raw_frame(&bytes[..], 3).unwrap();
        assert_eq!(back, set);
        assert!(read_raw_frame(&bytes[..bytes.len() - 1], 3).is_err());
    }
}
