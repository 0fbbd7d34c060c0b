//! Versioned binary map snapshots. Loading reproduces every cell field
//! bitwise; ground-truth label maps use the same container with only key and
//! label populated.

use std::io::{Read, Write};
use std::path::Path;

use super::{Cell, CellKey, GroundTruthMap, MapConfig, VoxelMap};
use crate::error::{Error, Result};
use crate::neural::{LayerState, LstmState};
use crate::perception::SemanticClass;

const MAGIC: &[u8; 8] = b"ROMAPMAP";
const VERSION: u32 = 1;
const NO_LABEL: u8 = 255;

pub fn encode_map(map: &VoxelMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&map.config.resolution.to_le_bytes());
    let cells = map.sorted_cells();
    out.extend_from_slice(&(cells.len() as u64).to_le_bytes());
    for (key, cell) in cells {
        out.extend_from_slice(&key.ix.to_le_bytes());
        out.extend_from_slice(&key.iy.to_le_bytes());
        out.extend_from_slice(&key.iz.to_le_bytes());
        out.extend_from_slice(&cell.occupancy_logodds.to_le_bytes());
        out.extend_from_slice(&(cell.feature.len() as u32).to_le_bytes());
        for v in &cell.feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &cell.state {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&(state.layers.len() as u32).to_le_bytes());
                let hidden = state.layers.first().map_or(0, |l| l.hidden.len());
                out.extend_from_slice(&(hidden as u32).to_le_bytes());
                for layer in &state.layers {
                    for v in layer.cell.iter().chain(&layer.hidden) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out.extend_from_slice(&(cell.prob.len() as u32).to_le_bytes());
        for v in &cell.prob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(cell.bayes_log.len() as u32).to_le_bytes());
        for v in &cell.bayes_log {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&cell.last_obs_time.to_le_bytes());
        out.extend_from_slice(&cell.last_obs_frame.to_le_bytes());
        out.push(cell.gt_label.map_or(NO_LABEL, |l| l.id()));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(field, "snapshot truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn i32(&mut self, field: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let b = self.take(8 * n, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_map(buf: &[u8]) -> Result<VoxelMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("magic", "not a map snapshot"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let resolution = r.f64("resolution")?;
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::format("resolution", format!("bad value {resolution}")));
    }
    let count = r.u64("cell_count")? as usize;
    let mut map = VoxelMap::new(MapConfig {
        resolution,
        ..MapConfig::default()
    });
    for c in 0..count {
        let key = CellKey {
            ix: r.i32(&format!("cell{c}.ix"))?,
            iy: r.i32(&format!("cell{c}.iy"))?,
            iz: r.i32(&format!("cell{c}.iz"))?,
        };
        let occupancy_logodds = r.f64(&format!("cell{c}.occupancy"))?;
        let feat_len = r.u32(&format!("cell{c}.feature_dim"))? as usize;
        let feature = r.f64s(feat_len, &format!("cell{c}.feature"))?;
        let state = match r.u8(&format!("cell{c}.has_state"))? {
            0 => None,
            1 => {
                let layers = r.u32(&format!("cell{c}.state_layers"))? as usize;
                let hidden = r.u32(&format!("cell{c}.state_hidden"))? as usize;
                let mut ls = Vec::with_capacity(layers);
                for l in 0..layers {
                    let cell_v = r.f64s(hidden, &format!("cell{c}.layer{l}.cell"))?;
                    let hidden_v = r.f64s(hidden, &format!("cell{c}.layer{l}.hidden"))?;
                    ls.push(LayerState {
                        cell: cell_v,
                        hidden: hidden_v,
                    });
                }
                Some(LstmState { layers: ls })
            }
            v => {
                return Err(Error::format(
                    format!("cell{c}.has_state"),
                    format!("bad flag {v}"),
                ))
            }
        };
        let prob_len = r.u32(&format!("cell{c}.prob_len"))? as usize;
        let prob = r.f64s(prob_len, &format!("cell{c}.prob"))?;
        let bayes_len = r.u32(&format!("cell{c}.bayes_len"))? as usize;
        let bayes_log = r.f64s(bayes_len, &format!("cell{c}.bayes_log"))?;
        let last_obs_time = r.f64(&format!("cell{c}.last_obs_time"))?;
        let last_obs_frame = r.u64(&format!("cell{c}.last_obs_frame"))?;
        let gt_label = match r.u8(&format!("cell{c}.label"))? {
            NO_LABEL => None,
            id => Some(SemanticClass::from_id(id).map_err(|e| {
                Error::format(format!("cell{c}.label"), e.to_string())
            })?),
        };
        let cell = Cell {
            occupancy_logodds,
            feature,
            state,
            prob,
            bayes_log,
            last_obs_time,
            last_obs_frame,
            gt_label,
        };
        let inserted = map.apply_cell_observation(key, Vec::new(), 0.0, 0);
        *inserted = cell;
    }
    if r.pos != buf.len() {
        return Err(Error::format("trailer", "unexpected trailing bytes"));
    }
    Ok(map)
}

pub fn save_map(path: &Path, map: &VoxelMap) -> Result<()> {
    let bytes = encode_map(map);
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_map(path: &Path) -> Result<VoxelMap> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_map(&buf)
}

pub fn save_ground_truth(path: &Path, gt: &GroundTruthMap) -> Result<()> {
    save_map(path, &gt.to_voxel_map())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthMap> {
    Ok(GroundTruthMap::from_voxel_map(&load_map(path)?))
}
