//! Extreme-event track: threshold the rainfall volume, label 3D
//! connected components under 18-connectivity, summarize each event,
//! pick the most intense, and export the competition CSV.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Volume3D;

/// Rain-rate threshold defining event voxels, strict.
pub const EVENT_THRESHOLD_MM_H: f32 = 2.0;

/// Minutes represented by one frame.
pub const FRAME_MINUTES: u32 = 15;

/// Dense boolean volume, t-major like [`Volume3D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    pub t: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl Mask3 {
    pub fn new(t: usize, rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != t * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "mask data length {} != {t}x{rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { t, rows, cols, data })
    }

    #[inline]
    pub fn idx(&self, t: usize, r: usize, c: usize) -> usize {
        (t * self.rows + r) * self.cols + c
    }

    #[inline]
    pub fn get(&self, t: usize, r: usize, c: usize) -> bool {
        self.data[self.idx(t, r, c)]
    }
}

/// Voxels strictly exceeding `thr`.
pub fn threshold_volume(v: &Volume3D, thr: f32) -> Mask3 {
    Mask3 {
        t: v.t(),
        rows: v.rows(),
        cols: v.cols(),
        data: v.data().iter().map(|&x| x > thr).collect(),
    }
}

/// Per-voxel component labels; 0 is background, components are numbered
/// 1..=n_labels in first-encounter scan order (t, then row, then col).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub t: usize,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u32>,
    pub n_labels: u32,
}

impl LabelVolume {
    #[inline]
    pub fn get(&self, t: usize, r: usize, c: usize) -> u32 {
        self.labels[(t * self.rows + r) * self.cols + c]
    }
}

/// The 18-neighbourhood: offsets with every component in {-1,0,1} and
/// |dt|+|dr|+|dc| <= 2 (faces and edges; the 8 cube corners excluded).
pub const NEIGHBOURS_18: [(i32, i32, i32); 18] = [
    (-1, -1, 0),
    (-1, 0, -1),
    (-1, 0, 0),
    (-1, 0, 1),
    (-1, 1, 0),
    (0, -1, -1),
    (0, -1, 0),
    (0, -1, 1),
    (0, 0, -1),
    (0, 0, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
    (1, -1, 0),
    (1, 0, -1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, 0),
];

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Root at the smaller id so first-encounter order survives.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Union-find labeling over the 18-neighbourhood.
pub fn label_components_18(mask: &Mask3) -> LabelVolume {
    let (nt, nr, nc) = (mask.t, mask.rows, mask.cols);
    // Offsets that precede the current voxel in scan order (half the
    // neighbourhood); the forward half is covered symmetrically.
    let prior: Vec<(i32, i32, i32)> = NEIGHBOURS_18
        .iter()
        .copied()
        .filter(|&(dt, dr, dc)| (dt, dr, dc) < (0, 0, 0))
        .collect();
    let mut provisional = vec![0u32; mask.data.len()];
    let mut uf = UnionFind { parent: vec![0] }; // slot 0 = background
    for t in 0..nt {
        for r in 0..nr {
            for c in 0..nc {
                let i = mask.idx(t, r, c);
                if !mask.data[i] {
                    continue;
                }
                let mut label = 0u32;
                for &(dt, dr, dc) in &prior {
                    let (pt, pr, pc) = (t as i32 + dt, r as i32 + dr, c as i32 + dc);
                    if pt < 0 || pr < 0 || pr >= nr as i32 || pc < 0 || pc >= nc as i32 {
                        continue;
                    }
                    let n = provisional[mask.idx(pt as usize, pr as usize, pc as usize)];
                    if n == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = n;
                    } else {
                        uf.union(label, n);
                    }
                }
                if label == 0 {
                    label = uf.make();
                    if label == 0 {
                        label = uf.make(); // skip the background slot
                    }
                }
                provisional[i] = label;
            }
        }
    }
    // Renumber roots to consecutive labels in first-encounter scan order.
    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; mask.data.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = uf.find(p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels[i] = remap[root];
    }
    LabelVolume { t: nt, rows: nr, cols: nc, labels, n_labels: next }
}

/// Summary of one connected precipitation event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub event_id: u32,
    pub t_start: usize,
    pub t_end: usize,
    /// Mean voxel position in the central frame.
    pub centroid_row: f64,
    pub centroid_col: f64,
    /// Inclusive bounds of the central-frame voxels.
    pub bbox: (usize, usize, usize, usize),
    pub duration_min: u32,
    /// Distinct (row, col) cells touched over the whole lifetime.
    pub footprint_px: usize,
    pub max_intensity_mm_h: f32,
    pub voxel_count: usize,
}

impl EventRecord {
    pub fn central_frame(&self) -> usize {
        (self.t_start + self.t_end) / 2
    }
}

/// One record per label, attributes per the central-frame convention.
pub fn extract_events(
    labels: &LabelVolume,
    v: &Volume3D,
    frame_minutes: u32,
) -> Result<Vec<EventRecord>> {
    if (labels.t, labels.rows, labels.cols) != (v.t(), v.rows(), v.cols()) {
        return Err(Error::ShapeMismatch(format!(
            "label volume {}x{}x{} vs data {}x{}x{}",
            labels.t,
            labels.rows,
            labels.cols,
            v.t(),
            v.rows(),
            v.cols()
        )));
    }
    let k = labels.n_labels as usize;
    let mut t_start = vec![usize::MAX; k];
    let mut t_end = vec![0usize; k];
    let mut voxels = vec![0usize; k];
    let mut max_int = vec![f32::NEG_INFINITY; k];
    let mut footprints: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); k];
    for t in 0..labels.t {
        for r in 0..labels.rows {
            for c in 0..labels.cols {
                let l = labels.get(t, r, c);
                if l == 0 {
                    continue;
                }
                let e = (l - 1) as usize;
                t_start[e] = t_start[e].min(t);
                t_end[e] = t_end[e].max(t);
                voxels[e] += 1;
                max_int[e] = max_int[e].max(v.get(t, r, c));
                footprints[e].insert((r, c));
            }
        }
    }
    let mut records = Vec::with_capacity(k);
    for e in 0..k {
        let central = (t_start[e] + t_end[e]) / 2;
        let mut n = 0usize;
        let (mut sr, mut sc) = (0.0f64, 0.0f64);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for r in 0..labels.rows {
            for c in 0..labels.cols {
                if labels.get(central, r, c) == e as u32 + 1 {
                    n += 1;
                    sr += r as f64;
                    sc += c as f64;
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                }
            }
        }
        if n == 0 {
            // Cannot happen for 18-connectivity (|dt| <= 1 keeps every
            // frame in [t_start, t_end] occupied), but fail loudly.
            return Err(Error::Data(format!("event {} empty at central frame", e + 1)));
        }
        records.push(EventRecord {
            event_id: e as u32 + 1,
            t_start: t_start[e],
            t_end: t_end[e],
            centroid_row: sr / n as f64,
            centroid_col: sc / n as f64,
            bbox: (r0, c0, r1, c1),
            duration_min: (t_end[e] - t_start[e] + 1) as u32 * frame_minutes,
            footprint_px: footprints[e].len(),
            max_intensity_mm_h: max_int[e],
            voxel_count: voxels[e],
        });
    }
    Ok(records)
}

/// Most intense first; ties by voxel count descending, then id.
pub fn select_top_events(events: &[EventRecord], k: usize) -> Vec<EventRecord> {
    let mut out = events.to_vec();
    out.sort_by(|a, b| {
        b.max_intensity_mm_h
            .partial_cmp(&a.max_intensity_mm_h)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.voxel_count.cmp(&a.voxel_count))
            .then(a.event_id.cmp(&b.event_id))
    });
    out.truncate(k);
    out
}

pub const EVENTS_CSV_HEADER: &str = "sequence_id,event_rank,t_start,t_end,centroid_row,\
centroid_col,bbox_row0,bbox_col0,bbox_row1,bbox_col1,footprint_px,max_intensity_mm_h,\
duration_min";

/// Rows in rank order (1-based), reals with 3 decimals, LF endings.
pub fn write_events_csv<W: Write>(
    out: &mut W,
    events: &[EventRecord],
    sequence_id: &str,
) -> Result<()> {
    writeln!(out, "{EVENTS_CSV_HEADER}")?;
    for (rank, e) in events.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{},{},{},{},{},{:.3},{}",
            sequence_id,
            rank + 1,
            e.t_start,
            e.t_end,
            e.centroid_row,
            e.centroid_col,
            e.bbox.0,
            e.bbox.1,
            e.bbox.2,
            e.bbox.3,
            e.footprint_px,
            e.max_intensity_mm_h,
            e.duration_min
        )?;
    }
    Ok(())
}

pub fn export_events_csv(
    events: &[EventRecord],
    sequence_id: &str,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    write_events_csv(&mut buf, events, sequence_id)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCsvRow {
    pub sequence_id: String,
    pub rank: u32,
    pub t_start: usize,
    pub t_end: usize,
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub bbox: (usize, usize, usize, usize),
    pub footprint_px: usize,
    pub max_intensity_mm_h: f32,
    pub duration_min: u32,
}

/// Parse a file produced by [`write_events_csv`].
pub fn parse_events_csv(text: &str) -> Result<Vec<EventCsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty events CSV".into()))?;
    if header != EVENTS_CSV_HEADER {
        return Err(Error::Format("unexpected events CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 13 {
            return Err(Error::Format(format!("row {} has {} columns", i + 1, parts.len())));
        }
        let field = |j: usize| -> Result<f64> {
            parts[j]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad number '{}'", i + 1, parts[j])))
        };
        rows.push(EventCsvRow {
            sequence_id: parts[0].to_string(),
            rank: field(1)? as u32,
            t_start: field(2)? as usize,
            t_end: field(3)? as usize,
            centroid_row: field(4)?,
            centroid_col: field(5)?,
            bbox: (
                field(6)? as usize,
                field(7)? as usize,
                field(8)? as usize,
                field(9)? as usize,
            ),
            footprint_px: field(10)? as usize,
            max_intensity_mm_h: field(11)? as f32,
            duration_min: field(12)? as u32,
        });
    }
    Ok(rows)
}
