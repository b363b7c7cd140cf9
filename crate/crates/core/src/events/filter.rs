use std::collections::HashMap;

use super::{Event, SensorGeometry};

/// Background-activity filter.
///
/// An event survives iff some earlier input event landed in its 3x3
/// neighbourhood (own pixel included) strictly less than `t_nn` µs before
/// it. Events outside `geometry` are dropped.
pub fn nn_filter(stream: &[Event], geometry: SensorGeometry, t_nn: u64) -> Vec<Event> {
    let w = geometry.width as usize;
    let h = geometry.height as usize;
    let mut last: Vec<Option<u64>> = vec![None; w * h];
    let mut out = Vec::with_capacity(stream.len());
    for e in stream {
        if !geometry.contains(e.x, e.y) {
            continue;
        }
        let (x, y) = (e.x as usize, e.y as usize);
        let mut supported = false;
        'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                if let Some(t_prev) = last[ny * w + nx] {
                    if e.t - t_prev < t_nn {
                        supported = true;
                        break 'scan;
                    }
                }
            }
        }
        if supported {
            out.push(*e);
        }
        last[y * w + x] = Some(e.t);
    }
    out
}

/// Per-pixel refractory filter: an event is dropped when the previous
/// kept event at the same pixel is less than `t_ref` µs older.
pub fn refractory_filter(stream: &[Event], t_ref: u64) -> Vec<Event> {
    let mut last_kept: HashMap<(u16, u16), u64> = HashMap::new();
    let mut out = Vec::with_capacity(stream.len());
    for e in stream {
        let slot = last_kept.entry((e.x, e.y));
        match slot {
            std::collections::hash_map::Entry::Occupied(mut o) => {
                if e.t - *o.get() >= t_ref {
                    o.insert(e.t);
                    out.push(*e);
                }
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(e.t);
                out.push(*e);
            }
        }
    }
    out
}
