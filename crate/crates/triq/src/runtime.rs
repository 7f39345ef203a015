//! Per-party execution context and the three-party launcher.

use crate::error::Result;
use crate::fxp::RingTensor;
use crate::prf::PartyPrf;
use crate::transport::{fabric, CommStats, PartyId, PartyNet, StatsHandle};

/// Everything one party's thread of control needs: identity, transport
/// endpoints, pairwise PRF streams and (optionally) a log of the masked
/// values it saw opened, used by the mask-uniformity smoke test.
pub struct PartyCtx {
    pub net: PartyNet,
    pub prf: PartyPrf,
    pub capture_opened: bool,
    pub opened: Vec<u64>,
}

impl PartyCtx {
    pub fn id(&self) -> PartyId {
        self.net.id()
    }

    pub(crate) fn record_opened(&mut self, t: &RingTensor) {
        if self.capture_opened {
            self.opened.extend_from_slice(t.words());
        }
    }
}

/// Run the same protocol closure on three party threads and collect the
/// per-party results plus the traffic of the whole run.
///
/// The closure is SPMD: every party executes the same code and branches on
/// `ctx.id()` where the protocol is asymmetric.
pub fn run_protocol<R, F>(seed: u64, f: F) -> Result<([R; 3], CommStats)>
where
    R: Send,
    F: Fn(&mut PartyCtx) -> Result<R> + Sync,
{
    let (nets, stats) = fabric();
    let results = run_on_fabric(seed, nets, &stats, f)?;
    stats.assert_conserved();
    let snapshot = stats.snapshot();
    Ok((results, snapshot))
}

pub fn run_on_fabric<R, F>(
    seed: u64,
    nets: [PartyNet; 3],
    _stats: &StatsHandle,
    f: F,
) -> Result<[R; 3]>
where
    R: Send,
    F: Fn(&mut PartyCtx) -> Result<R> + Sync,
{
    let fref = &f;
    let mut slots: [Option<Result<R>>; 3] = [None, None, None];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for net in nets {
            let id = net.id();
            handles.push(scope.spawn(move || {
                let mut ctx = PartyCtx {
                    prf: PartyPrf::setup(seed, id),
                    net,
                    capture_opened: false,
                    opened: Vec::new(),
                };
                fref(&mut ctx)
            }));
        }
        for (i, h) in handles.into_iter().enumerate() {
            slots[i] = Some(h.join().expect("party thread panicked"));
        }
    });
    let [a, b, c] = slots;
    Ok([a.unwrap()?, b.unwrap()?, c.unwrap()?])
}
