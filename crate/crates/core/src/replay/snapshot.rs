//! Uniform-buffer snapshot files.
//!
//! ```text
//! magic     8 bytes  "QFREPL01"
//! version   u32 LE
//! hdr_len   u64 LE
//! header    JSON {capacity, frames, frame_len, actions}
//! count     u64 LE
//! records   count × (state f64[F·N], action u64, reward f64, next_state f64[F·N], done u8)
//! ```
//! Records are written oldest first; all numbers little-endian.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Frame, Observation, Transition, UniformReplay};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"QFREPL01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    capacity: usize,
    frames: usize,
    frame_len: usize,
    actions: usize,
}

fn write_obs(w: &mut impl Write, obs: &Observation) -> Result<()> {
    for f in obs.frames() {
        for v in f.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_obs(r: &mut impl Read, frames: usize, len: usize) -> Result<Observation> {
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_bits(read_u64(r)?));
        }
        out.push(Frame::from(values));
    }
    Observation::new(out)
}

pub fn write_uniform(buf: &UniformReplay, mut w: impl Write) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        capacity: buf.capacity(),
        frames: buf.frames(),
        frame_len: buf.frame_len(),
        actions: buf.actions(),
    })?;
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(buf.len() as u64).to_le_bytes())?;
    for t in buf.iter() {
        write_obs(&mut w, &t.state)?;
        w.write_all(&(t.action as u64).to_le_bytes())?;
        w.write_all(&t.reward.to_le_bytes())?;
        write_obs(&mut w, &t.next_state)?;
        w.write_all(&[u8::from(t.done)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_uniform(mut r: impl Read) -> Result<UniformReplay> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::BadMagic { expected: SNAPSHOT_MAGIC, found: magic });
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    if u32::from_le_bytes(version) != VERSION {
        return Err(Error::Checkpoint(format!("unsupported replay snapshot version {}", u32::from_le_bytes(version))));
    }
    let len = read_u64(&mut r)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let h: Header = serde_json::from_slice(&header)?;
    let mut buf = UniformReplay::new(h.capacity, h.frames, h.frame_len, h.actions)?;
    let count = read_u64(&mut r)?;
    let mut prev_next: Option<Observation> = None;
    for _ in 0..count {
        let mut state = read_obs(&mut r, h.frames, h.frame_len)?;
        // Re-share frames with the previous transition where they coincide.
        if let Some(prev) = &prev_next {
            if prev == &state {
                state = prev.clone();
            }
        }
        let action = read_u64(&mut r)? as usize;
        let reward = f64::from_bits(read_u64(&mut r)?);
        let next_state = read_obs(&mut r, h.frames, h.frame_len)?;
        let shared: Vec<Frame> = next_state
            .frames()
            .iter()
            .map(|f| state.frames().iter().find(|s| s[..] == f[..]).cloned().unwrap_or_else(|| Arc::clone(f)))
            .collect();
        let next_state = Observation::new(shared)?;
        let mut done = [0u8; 1];
        r.read_exact(&mut done)?;
        prev_next = Some(next_state.clone());
        buf.push(Transition { state, action, reward, next_state, done: done[0] != 0 })?;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let mut buf = UniformReplay::new(3, 2, 4, 3).unwrap();
        for i in 0..5 {
            let f: Frame = vec![i as f64 * 0.1; 4].into();
            let g: Frame = vec![-(i as f64); 4].into();
            let state = Observation::new(vec![f.clone(), g.clone()]).unwrap();
            let next_state = Observation::new(vec![g, f]).unwrap();
            buf.push(Transition { state, action: i % 3, reward: i as f64, next_state, done: i == 4 }).unwrap();
        }
        let mut bytes = Vec::new();
        write_uniform(&buf, &mut bytes).unwrap();
        let back = read_uniform(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.iter().eq(buf.iter()));
        bytes[0] = b'X';
        assert!(matches!(read_uniform(bytes.as_slice()), Err(Error::BadMagic { .. })));
    }
}
