//! Schedules of the constitutive stage.
//!
//! The pipelined schedule follows the listing line by line:
//!
//! ```text
//! upload 1, upload 2
//! compute 1
//! for j = 2 .. npart-1:  compute j  ||  download j-1  ||  upload j+1   (barrier)
//! compute npart
//! download npart-1, download npart
//! ```
//!
//! Partitions `j-1` and `j+1` share a slot: the download thread hands each
//! chunk to the upload thread as soon as it has been copied out, so at most
//! two partitions' worth of state ever occupies the fast tier.

use std::sync::mpsc;
use std::time::Instant;

use super::{ComputeCost, Direction, PartitionStore, Residency, TransferChannel};
use crate::constitutive::{SpringState, ELEMENT_STATE_BYTES, SPRINGS_PER_ELEMENT};
use crate::error::{Error, Result};

/// Springs per hand-off chunk of a slot swap.
const SWAP_CHUNK: usize = 16 * SPRINGS_PER_ELEMENT;

/// Virtual-clock totals of one constitutive stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageTiming {
    pub compute_ns: u64,
    pub up_ns: u64,
    pub down_ns: u64,
    pub overlapped_ns: u64,
    pub stage_ns: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub resident_high_watermark: usize,
}

impl StageTiming {
    pub fn add(&mut self, o: &StageTiming) {
        self.compute_ns += o.compute_ns;
        self.up_ns += o.up_ns;
        self.down_ns += o.down_ns;
        self.overlapped_ns += o.overlapped_ns;
        self.stage_ns += o.stage_ns;
        self.bytes_up += o.bytes_up;
        self.bytes_down += o.bytes_down;
        self.resident_high_watermark = self.resident_high_watermark.max(o.resident_high_watermark);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Empty,
    Holding(usize),
    Swapping { out: usize, incoming: usize },
}

struct Ledger {
    slots: [Slot; 2],
    high: usize,
}

impl Ledger {
    fn set(&mut self, s: usize, v: Slot) -> Result<()> {
        self.slots[s] = v;
        let resident = self.slots.iter().filter(|s| **s != Slot::Empty).count();
        if resident > 2 {
            return Err(Error::Residency(format!("{resident} partitions resident")));
        }
        self.high = self.high.max(resident);
        Ok(())
    }
}

fn timed<F: FnOnce() -> Result<()>>(f: F) -> Result<u64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_nanos() as u64)
}

fn upload(
    store: &mut PartitionStore,
    p: usize,
    slot: &mut [SpringState],
    ch: &mut TransferChannel,
) -> Result<u64> {
    store.set(p, Residency::Slow, Residency::InFlightUp)?;
    let src = &store.data[p];
    slot[..src.len()].copy_from_slice(src);
    store.set(p, Residency::InFlightUp, Residency::Fast)?;
    Ok(ch
        .charge(Some(p), Direction::Up, store.partition_bytes(p))
        .duration_ns)
}

fn download(
    store: &mut PartitionStore,
    p: usize,
    slot: &[SpringState],
    ch: &mut TransferChannel,
) -> Result<u64> {
    store.set(p, Residency::Fast, Residency::InFlightDown)?;
    let n = store.data[p].len();
    store.data[p].copy_from_slice(&slot[..n]);
    store.set(p, Residency::InFlightDown, Residency::Slow)?;
    Ok(ch
        .charge(Some(p), Direction::Down, store.partition_bytes(p))
        .duration_ns)
}

/// Copies `slot` out to `out` chunk by chunk while a second thread fills
/// each released chunk from `incoming`.
fn swap_slot(slot: &mut [SpringState], out: &mut [SpringState], incoming: &[SpringState]) {
    let span = out.len().max(incoming.len());
    let (tx, rx) = mpsc::channel::<(usize, &mut [SpringState])>();
    std::thread::scope(|s| {
        s.spawn(move || {
            for (k, chunk) in slot[..span].chunks_mut(SWAP_CHUNK).enumerate() {
                let off = k * SWAP_CHUNK;
                let n = out.len().saturating_sub(off).min(chunk.len());
                out[off..off + n].copy_from_slice(&chunk[..n]);
                if tx.send((off, chunk)).is_err() {
                    break;
                }
            }
        });
        s.spawn(move || {
            for (off, chunk) in rx {
                let n = incoming.len().saturating_sub(off).min(chunk.len());
                chunk[..n].copy_from_slice(&incoming[off..off + n]);
            }
        });
    });
}

/// Double-buffered pipeline through two fast-tier slots.
///
/// `compute(p, springs)` advances partition `p` in place; it runs on the
/// calling thread while the swap of the other slot proceeds on two more.
pub fn run_pipeline<F>(
    store: &mut PartitionStore,
    slots: &mut [Vec<SpringState>; 2],
    ch: &mut TransferChannel,
    cost: ComputeCost,
    mut compute: F,
) -> Result<StageTiming>
where
    F: FnMut(usize, &mut [SpringState]) -> Result<()>,
{
    let np = store.npart();
    let need = store
        .ranges
        .iter()
        .map(|r| r.len() * SPRINGS_PER_ELEMENT)
        .max()
        .unwrap_or(0);
    if slots.iter().any(|s| s.len() < need) {
        return Err(Error::Residency(format!(
            "partition slots hold fewer than {need} springs"
        )));
    }
    let mut ledger = Ledger {
        slots: [Slot::Empty; 2],
        high: 0,
    };
    let mut t = StageTiming::default();
    let charge = |t: &mut StageTiming, p: usize, measured: u64, store: &PartitionStore| {
        let c = cost.charge(store.ranges[p].len(), measured);
        t.compute_ns += c;
        c
    };

    // prologue
    for p in 0..np.min(2) {
        let x = upload(store, p, &mut slots[p], ch)?;
        ledger.set(p, Slot::Holding(p))?;
        t.up_ns += x;
        t.stage_ns += x;
        t.bytes_up += store.partition_bytes(p);
    }
    let n0 = store.data[0].len();
    let m = timed(|| compute(0, &mut slots[0][..n0]))?;
    t.stage_ns += charge(&mut t, 0, m, store);

    // steady state
    for j in 1..np.saturating_sub(1) {
        let (cs, ss) = (j % 2, (j + 1) % 2);
        let (out, incoming) = (j - 1, j + 1);
        store.set(out, Residency::Fast, Residency::InFlightDown)?;
        store.set(incoming, Residency::Slow, Residency::InFlightUp)?;
        ledger.set(ss, Slot::Swapping { out, incoming })?;

        let (a, b) = slots.split_at_mut(1);
        let (cslot, sslot) = if cs == 0 {
            (&mut a[0], &mut b[0])
        } else {
            (&mut b[0], &mut a[0])
        };
        let (left, right) = store.data.split_at_mut(j);
        let out_buf = &mut left[j - 1];
        let in_buf = &right[1];
        let nj = right[0].len();
        let mut measured = Ok(0);
        std::thread::scope(|s| {
            s.spawn(|| swap_slot(sslot, out_buf, in_buf));
            measured = timed(|| compute(j, &mut cslot[..nj]));
        });
        let measured = measured?;

        store.set(out, Residency::InFlightDown, Residency::Slow)?;
        store.set(incoming, Residency::InFlightUp, Residency::Fast)?;
        ledger.set(ss, Slot::Holding(incoming))?;
        let down = ch
            .charge(Some(out), Direction::Down, store.partition_bytes(out))
            .duration_ns;
        let up = ch
            .charge(Some(incoming), Direction::Up, store.partition_bytes(incoming))
            .duration_ns;
        let c = charge(&mut t, j, measured, store);
        let x = up.max(down);
        t.up_ns += up;
        t.down_ns += down;
        t.bytes_up += store.partition_bytes(incoming);
        t.bytes_down += store.partition_bytes(out);
        t.stage_ns += c.max(x);
        t.overlapped_ns += c.min(x);
    }

    // epilogue
    if np >= 2 {
        let last = np - 1;
        let nl = store.data[last].len();
        let m = timed(|| compute(last, &mut slots[last % 2][..nl]))?;
        t.stage_ns += charge(&mut t, last, m, store);
    }
    for p in np.saturating_sub(2)..np {
        let x = download(store, p, &slots[p % 2], ch)?;
        ledger.set(p % 2, Slot::Empty)?;
        t.down_ns += x;
        t.stage_ns += x;
        t.bytes_down += store.partition_bytes(p);
    }
    t.resident_high_watermark = ledger.high;
    Ok(t)
}

/// Computes every partition in place in the slow store, one after another.
pub fn run_serial<F>(store: &mut PartitionStore, cost: ComputeCost, mut compute: F) -> Result<StageTiming>
where
    F: FnMut(usize, &mut [SpringState]) -> Result<()>,
{
    let mut t = StageTiming::default();
    for p in 0..store.npart() {
        let m = timed(|| compute(p, &mut store.data[p]))?;
        let c = cost.charge(store.ranges[p].len(), m);
        t.compute_ns += c;
        t.stage_ns += c;
    }
    Ok(t)
}

/// Diagnostic: the fast tier reads and writes each element's state directly
/// in the slow store, paying one message of `access_latency` per access.
pub fn run_direct<F>(
    store: &mut PartitionStore,
    ch: &mut TransferChannel,
    access_latency: f64,
    cost: ComputeCost,
    mut compute: F,
) -> Result<StageTiming>
where
    F: FnMut(usize, &mut [SpringState]) -> Result<()>,
{
    let mut t = StageTiming::default();
    let per_access =
        (1e9 * (ELEMENT_STATE_BYTES as f64 / ch.config.bandwidth + access_latency)).ceil() as u64;
    for p in 0..store.npart() {
        let m = timed(|| compute(p, &mut store.data[p]))?;
        let n = store.ranges[p].len() as u64;
        let c = cost.charge(n as usize, m);
        let bytes = store.partition_bytes(p);
        ch.bytes_up += bytes;
        ch.bytes_down += bytes;
        ch.busy_up_ns += n * per_access;
        ch.busy_down_ns += n * per_access;
        t.compute_ns += c;
        t.up_ns += n * per_access;
        t.down_ns += n * per_access;
        t.bytes_up += bytes;
        t.bytes_down += bytes;
        t.stage_ns += c + 2 * n * per_access;
    }
    Ok(t)
}
