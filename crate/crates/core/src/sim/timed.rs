//! Discrete-event timing simulation of a placed design.
//!
//! Tiles, DMA transfers, cascade FIFOs and boundary streams are entities
//! advanced by an event loop ordered on cycle time. At each timestamp every
//! entity is stepped in id order until nothing changes, which lets a word be
//! pushed and popped in the same cycle. Cascade FIFOs hold at most
//! `cascade_fifo_depth` words of `cascade_bits_per_cycle` bits and move one
//! word per cycle in each direction.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{cycles_to_ns, ArchSpec, ACC_BITS};
use crate::dse::comm::cascade_out_words;
use crate::dse::design::{Channel, Design, LinkKind, Tile};
use crate::error::{Error, Result};
use crate::mapping::LayerPlan;
use crate::perf::{
    aggregation_hop_cycles, aggregation_local_cycles, aggregation_mean_cycles, chain_position_cycles,
    dma_comm_latency, layer_variants, n_jloops, shared_mem_latency, AggMethod,
};
use crate::profile::{CalibrationProfile, DmaPayload};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: f64,
    pub entity: String,
    pub event: String,
    pub payload_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInterval {
    pub index: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub name: String,
    pub kind: LinkKind,
    pub bits: u64,
    pub start: f64,
    pub end: f64,
    /// Peak words queued; cascade FIFOs only.
    pub max_occupancy: usize,
    /// Mean bits per cycle while active.
    pub bits_per_cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub total_cycles: f64,
    pub total_ns: f64,
    pub layers: Vec<LayerInterval>,
    pub links: Vec<LinkStats>,
    #[serde(skip)]
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    /// `cycle,entity,event,payload_bits` rows.
    pub fn events_csv(&self) -> String {
        let mut s = String::from("cycle,entity,event,payload_bits\n");
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{}", e.cycle, e.entity, e.event, e.payload_bits);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Word {
    Act,
    Partial(u64),
}

#[derive(Debug)]
struct Fifo {
    name: String,
    depth: usize,
    q: VecDeque<Word>,
    last_push: f64,
    last_pop: f64,
    first_push: f64,
    pushed: u64,
    popped: u64,
    max_occ: usize,
}

impl Fifo {
    fn new(name: String, depth: usize) -> Self {
        Fifo {
            name,
            depth,
            q: VecDeque::new(),
            last_push: f64::NEG_INFINITY,
            last_pop: f64::NEG_INFINITY,
            first_push: f64::INFINITY,
            pushed: 0,
            popped: 0,
            max_occ: 0,
        }
    }

    fn can_push(&self, now: f64) -> bool {
        self.q.len() < self.depth && now + EPS >= self.last_push + 1.0
    }

    fn can_pop(&self, now: f64) -> bool {
        !self.q.is_empty() && now + EPS >= self.last_pop + 1.0
    }
}

#[derive(Debug)]
struct Transfer {
    name: String,
    kind: LinkKind,
    bits: u64,
    duration: f64,
    /// Sources still to finish before the transfer starts.
    waiting: usize,
    launch: f64,
    done_at: Option<f64>,
    fired: bool,
    dests: Vec<usize>,
    egress: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Receive,
    Gap(f64),
    Prologue(f64),
    Ready(u64),
    Loop { t: u64, start: f64, pushed: u64 },
    Done,
}

#[derive(Debug)]
struct DenseSim {
    name: String,
    layer: usize,
    west: Option<usize>,
    east: Option<usize>,
    recv_words: u64,
    relay: bool,
    pending: usize,
    gap: f64,
    prologue: f64,
    n_loops: u64,
    loop_len: f64,
    in_partial: u64,
    out_total: u64,
    out_kind_act: bool,
    launches: Vec<usize>,
    phase: Phase,
    received: u64,
    last_recv: f64,
    popped_partial: u64,
    started: u64,
    first_start: f64,
    last_end: f64,
}

impl DenseSim {
    fn words_in_loop(&self, t: u64) -> u64 {
        let n = self.n_loops;
        (t + 1) * self.out_total / n - t * self.out_total / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AggPhase {
    Await,
    Local(f64),
    WaitPartial,
    Hop { start: f64, pushed: u64 },
    Done,
}

#[derive(Debug)]
struct AggSim {
    name: String,
    layer: usize,
    index: u32,
    top: bool,
    below: Option<usize>,
    pending: usize,
    local: f64,
    hop: f64,
    east: Option<usize>,
    out_words: u64,
    launches: Vec<usize>,
    got_partial: bool,
    phase: AggPhase,
    first_start: f64,
    last_end: f64,
}

#[derive(Debug)]
struct Source {
    name: String,
    fifo: usize,
    words: u64,
    pushed: u64,
}

#[derive(Debug)]
struct Sink {
    name: String,
    fifo: usize,
    words: u64,
    popped: u64,
    end: Option<f64>,
}

#[derive(Debug)]
enum Ent {
    Dense(DenseSim),
    Agg(AggSim),
    Xfer(usize),
    Source(Source),
    Sink(Sink),
}

struct World {
    ents: Vec<Ent>,
    fifos: Vec<Fifo>,
    xfers: Vec<Transfer>,
    events: Vec<TraceEvent>,
    o_cas: f64,
    word_bits: u64,
    record: bool,
}

impl World {
    fn log(&mut self, cycle: f64, entity: &str, event: &str, bits: u64) {
        if self.record {
            self.events.push(TraceEvent {
                cycle,
                entity: entity.to_string(),
                event: event.to_string(),
                payload_bits: bits,
            });
        }
    }

    fn push(&mut self, f: usize, w: Word, now: f64, bits: u64) -> Result<()> {
        let fifo = &mut self.fifos[f];
        if fifo.q.len() >= fifo.depth {
            return Err(Error::Invariant(format!("{}: push into a full FIFO", fifo.name)));
        }
        if now + EPS < fifo.last_push + 1.0 {
            return Err(Error::Invariant(format!("{}: more than one word per cycle", fifo.name)));
        }
        fifo.q.push_back(w);
        fifo.last_push = now;
        fifo.first_push = fifo.first_push.min(now);
        fifo.pushed += 1;
        fifo.max_occ = fifo.max_occ.max(fifo.q.len());
        let name = fifo.name.clone();
        self.log(now, &name, "push", bits);
        Ok(())
    }

    fn pop(&mut self, f: usize, now: f64, bits: u64) -> Result<Word> {
        let fifo = &mut self.fifos[f];
        if now + EPS < fifo.last_pop + 1.0 {
            return Err(Error::Invariant(format!("{}: more than one word per cycle", fifo.name)));
        }
        let w = fifo
            .q
            .pop_front()
            .ok_or_else(|| Error::Invariant(format!("{}: pop from an empty FIFO", fifo.name)))?;
        fifo.last_pop = now;
        fifo.popped += 1;
        let name = fifo.name.clone();
        self.log(now, &name, "pop", bits);
        Ok(w)
    }

    /// A source entity finished; start every transfer it was the last input of.
    fn launch(&mut self, xs: &[usize], now: f64) {
        for &x in xs {
            let t = &mut self.xfers[x];
            t.waiting -= 1;
            t.launch = t.launch.max(now);
            if t.waiting == 0 {
                t.done_at = Some(t.launch + t.duration);
                let (name, bits, launch) = (t.name.clone(), t.bits, t.launch);
                self.log(launch, &name, "launch", bits);
            }
        }
    }

    fn dense_mut(&mut self, id: usize) -> &mut DenseSim {
        match &mut self.ents[id] {
            Ent::Dense(d) => d,
            _ => unreachable!("entity {id} is not a dense tile"),
        }
    }

    fn step(&mut self, id: usize, now: f64) -> Result<bool> {
        let mut progress = false;
        while self.step_once(id, now)? {
            progress = true;
        }
        Ok(progress)
    }

    fn step_once(&mut self, id: usize, now: f64) -> Result<bool> {
        let bits = self.word_bits;
        match &self.ents[id] {
            Ent::Xfer(x) => {
                let x = *x;
                let t = &self.xfers[x];
                match t.done_at {
                    Some(d) if !t.fired && now + EPS >= d => {
                        let dests = t.dests.clone();
                        let (name, b) = (t.name.clone(), t.bits);
                        self.xfers[x].fired = true;
                        self.log(d, &name, "arrive", b);
                        for dst in dests {
                            match &mut self.ents[dst] {
                                Ent::Dense(s) => s.pending -= 1,
                                Ent::Agg(s) => s.pending -= 1,
                                _ => unreachable!("transfers land on tiles"),
                            }
                        }
                        Ok(true)
                    }
                    _ => Ok(false),
                }
            }
            Ent::Source(s) => {
                if s.pushed < s.words && self.fifos[s.fifo].can_push(now) {
                    let (f, name) = (s.fifo, s.name.clone());
                    self.push(f, Word::Act, now, bits)?;
                    if let Ent::Source(s) = &mut self.ents[id] {
                        s.pushed += 1;
                    }
                    self.log(now, &name, "send", bits);
                    return Ok(true);
                }
                Ok(false)
            }
            Ent::Sink(s) => {
                if s.popped < s.words && self.fifos[s.fifo].can_pop(now) {
                    let f = s.fifo;
                    let w = self.pop(f, now, bits)?;
                    if w != Word::Act {
                        return Err(Error::Invariant("output stream carried partial sums".into()));
                    }
                    let o_cas = self.o_cas;
                    if let Ent::Sink(s) = &mut self.ents[id] {
                        s.popped += 1;
                        if s.popped == s.words {
                            s.end = Some(now + 1.0 + o_cas);
                        }
                    }
                    return Ok(true);
                }
                Ok(false)
            }
            Ent::Dense(_) => self.step_dense(id, now, bits),
            Ent::Agg(_) => self.step_agg(id, now, bits),
        }
    }

    fn step_dense(&mut self, id: usize, now: f64, bits: u64) -> Result<bool> {
        let d = self.dense_mut(id);
        let phase = d.phase;
        // partial sums from the west, double buffered
        if d.in_partial > 0 && !matches!(phase, Phase::Receive | Phase::Gap(_) | Phase::Done) {
            let u = d.popped_partial / d.in_partial;
            let w = d.west.expect("chained tile has a west link");
            if u < d.n_loops && u <= d.started && self.fifos[w].can_pop(now) {
                let got = self.pop(w, now, bits)?;
                let d = self.dense_mut(id);
                if got != Word::Partial(u) {
                    return Err(Error::Invariant(format!("{}: expected partials of loop {u}, got {got:?}", d.name)));
                }
                d.popped_partial += 1;
                return Ok(true);
            }
        }
        let d = self.dense_mut(id);
        match phase {
            Phase::Receive => {
                if d.received < d.recv_words {
                    let w = d.west.expect("cascade input has a west link");
                    let relay_to = if d.relay { d.east } else { None };
                    let east_ok = relay_to.is_none_or(|e| self.fifos[e].can_push(now));
                    if self.fifos[w].can_pop(now) && east_ok {
                        let got = self.pop(w, now, bits)?;
                        if got != Word::Act {
                            return Err(Error::Invariant(format!("{}: partials before input", self.dense_mut(id).name)));
                        }
                        if let Some(e) = relay_to {
                            self.push(e, Word::Act, now, bits)?;
                        }
                        let d = self.dense_mut(id);
                        d.received += 1;
                        d.last_recv = now;
                        return Ok(true);
                    }
                    return Ok(false);
                }
                if d.pending == 0 {
                    let ready = if d.recv_words > 0 {
                        (d.last_recv + 1.0 + d.gap).max(now)
                    } else {
                        now
                    };
                    d.phase = Phase::Gap(ready);
                    let name = d.name.clone();
                    self.log(ready, &name, "input-ready", 0);
                    return Ok(true);
                }
                Ok(false)
            }
            Phase::Gap(u) => {
                if now + EPS >= u {
                    d.phase = Phase::Prologue(u + d.prologue);
                    return Ok(true);
                }
                Ok(false)
            }
            Phase::Prologue(u) => {
                if now + EPS >= u {
                    d.phase = Phase::Ready(0);
                    return Ok(true);
                }
                Ok(false)
            }
            Phase::Ready(t) => {
                if t == d.n_loops {
                    d.phase = Phase::Done;
                    let (name, launches, end) = (d.name.clone(), d.launches.clone(), d.last_end);
                    self.log(end, &name, "done", 0);
                    self.launch(&launches, end);
                    return Ok(true);
                }
                let (west, in_partial) = (d.west, d.in_partial);
                let arrived = in_partial == 0 || now + EPS >= self.fifos[west.expect("west link")].last_pop + 1.0;
                let d = self.dense_mut(id);
                if d.popped_partial >= (t + 1) * d.in_partial && arrived {
                    d.phase = Phase::Loop { t, start: now, pushed: 0 };
                    d.started = t + 1;
                    d.first_start = d.first_start.min(now);
                    let name = d.name.clone();
                    self.log(now, &name, "loop-start", 0);
                    return Ok(true);
                }
                Ok(false)
            }
            Phase::Loop { t, start, pushed } => {
                let words = if d.out_kind_act {
                    d.words_in_loop(t)
                } else {
                    d.out_total
                };
                let push_begin = start + (d.loop_len - words as f64).max(0.0);
                if pushed < words {
                    let e = d.east.expect("producing tile has an east link");
                    let kind = if d.out_kind_act { Word::Act } else { Word::Partial(t) };
                    if now + EPS >= push_begin + pushed as f64 && self.fifos[e].can_push(now) {
                        self.push(e, kind, now, bits)?;
                        let d = self.dense_mut(id);
                        d.phase = Phase::Loop { t, start, pushed: pushed + 1 };
                        return Ok(true);
                    }
                    return Ok(false);
                }
                let (loop_len, east) = (d.loop_len, d.east);
                let end = if words > 0 {
                    (start + loop_len).max(self.fifos[east.expect("east link")].last_push + 1.0)
                } else {
                    start + loop_len
                };
                let d = self.dense_mut(id);
                if now + EPS >= end {
                    d.phase = Phase::Ready(t + 1);
                    d.last_end = end;
                    let name = d.name.clone();
                    self.log(end, &name, "loop-end", 0);
                    return Ok(true);
                }
                Ok(false)
            }
            Phase::Done => Ok(false),
        }
    }

    fn step_agg(&mut self, id: usize, now: f64, bits: u64) -> Result<bool> {
        let Ent::Agg(a) = &mut self.ents[id] else { unreachable!() };
        match a.phase {
            AggPhase::Await => {
                if a.pending == 0 {
                    a.phase = AggPhase::Local(now + a.local);
                    a.first_start = now;
                    return Ok(true);
                }
                Ok(false)
            }
            AggPhase::Local(u) => {
                if now + EPS >= u {
                    a.phase = if a.top {
                        AggPhase::Hop { start: u, pushed: 0 }
                    } else {
                        AggPhase::WaitPartial
                    };
                    return Ok(true);
                }
                Ok(false)
            }
            AggPhase::WaitPartial => {
                if a.got_partial {
                    a.phase = AggPhase::Hop { start: now, pushed: 0 };
                    return Ok(true);
                }
                Ok(false)
            }
            AggPhase::Hop { start, pushed } => {
                let push_begin = start + (a.hop - a.out_words as f64).max(0.0);
                if pushed < a.out_words {
                    let e = a.east.expect("cascade output link");
                    if now + EPS >= push_begin + pushed as f64 && self.fifos[e].can_push(now) {
                        self.push(e, Word::Act, now, bits)?;
                        let Ent::Agg(a) = &mut self.ents[id] else { unreachable!() };
                        a.phase = AggPhase::Hop { start, pushed: pushed + 1 };
                        return Ok(true);
                    }
                    return Ok(false);
                }
                let mut end = start + a.hop;
                if let Some(e) = a.east {
                    end = end.max(self.fifos[e].last_push + 1.0);
                }
                if now + EPS >= end {
                    let Ent::Agg(a) = &mut self.ents[id] else { unreachable!() };
                    a.phase = AggPhase::Done;
                    a.last_end = end;
                    let (name, below, launches) = (a.name.clone(), a.below, a.launches.clone());
                    if let Some(b) = below {
                        if let Ent::Agg(n) = &mut self.ents[b] {
                            n.got_partial = true;
                        }
                        self.log(end, &name, "partial-sent", 0);
                    } else {
                        self.log(end, &name, "done", 0);
                        self.launch(&launches, end);
                    }
                    return Ok(true);
                }
                Ok(false)
            }
            AggPhase::Done => Ok(false),
        }
    }

    /// Earliest future time at which `id` could act on its own.
    fn next_wake(&self, id: usize, now: f64) -> Option<f64> {
        let mut c: Vec<f64> = Vec::new();
        let pop_at = |f: usize| {
            let q = &self.fifos[f];
            (!q.q.is_empty()).then_some(q.last_pop + 1.0)
        };
        match &self.ents[id] {
            Ent::Xfer(x) => {
                if let Some(d) = self.xfers[*x].done_at {
                    if !self.xfers[*x].fired {
                        c.push(d);
                    }
                }
            }
            Ent::Source(s) => {
                if s.pushed < s.words {
                    c.push(self.fifos[s.fifo].last_push + 1.0);
                }
            }
            Ent::Sink(s) => c.extend(pop_at(s.fifo)),
            Ent::Dense(d) => {
                if d.in_partial > 0 {
                    c.extend(d.west.and_then(pop_at));
                }
                match d.phase {
                    Phase::Receive => {
                        c.extend(d.west.and_then(pop_at));
                        if let (true, Some(e)) = (d.relay, d.east) {
                            c.push(self.fifos[e].last_push + 1.0);
                        }
                    }
                    Phase::Gap(u) | Phase::Prologue(u) => c.push(u),
                    Phase::Loop { start, pushed, t } => {
                        c.push(start + d.loop_len);
                        let words = if d.out_kind_act { d.words_in_loop(t) } else { d.out_total };
                        if pushed < words {
                            let e = &self.fifos[d.east.expect("east link")];
                            let push_begin = start + (d.loop_len - words as f64).max(0.0);
                            c.push((push_begin + pushed as f64).max(e.last_push + 1.0));
                        } else if let Some(e) = d.east {
                            c.push(self.fifos[e].last_push + 1.0);
                        }
                    }
                    Phase::Ready(_) => {
                        if let (true, Some(w)) = (d.in_partial > 0, d.west) {
                            c.push(self.fifos[w].last_pop + 1.0);
                        }
                    }
                    Phase::Done => {}
                }
            }
            Ent::Agg(a) => match a.phase {
                AggPhase::Local(u) => c.push(u),
                AggPhase::Hop { start, pushed } => {
                    c.push(start + a.hop);
                    if let Some(e) = a.east {
                        let push_begin = start + (a.hop - a.out_words as f64).max(0.0);
                        c.push((push_begin + pushed as f64).max(self.fifos[e].last_push + 1.0));
                    }
                }
                _ => {}
            },
        }
        c.into_iter().filter(|&t| t > now + EPS).min_by(f64::total_cmp)
    }

    fn done(&self, id: usize) -> bool {
        match &self.ents[id] {
            Ent::Dense(d) => d.phase == Phase::Done,
            Ent::Agg(a) => a.phase == AggPhase::Done,
            Ent::Xfer(x) => self.xfers[*x].fired,
            Ent::Source(s) => s.pushed == s.words,
            Ent::Sink(s) => s.end.is_some(),
        }
    }

    fn name(&self, id: usize) -> String {
        match &self.ents[id] {
            Ent::Dense(d) => d.name.clone(),
            Ent::Agg(a) => a.name.clone(),
            Ent::Xfer(x) => self.xfers[*x].name.clone(),
            Ent::Source(s) => s.name.clone(),
            Ent::Sink(s) => s.name.clone(),
        }
    }

    /// Event loop; returns the time of the last event.
    fn run(&mut self) -> Result<f64> {
        let n = self.ents.len();
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
        let mut scheduled = vec![f64::NAN; n];
        let mut now = 0.0f64;
        loop {
            loop {
                let mut progress = false;
                for id in 0..n {
                    progress |= self.step(id, now)?;
                }
                if !progress {
                    break;
                }
            }
            for id in 0..n {
                if let Some(t) = self.next_wake(id, now) {
                    if scheduled[id] != t {
                        scheduled[id] = t;
                        // non-negative f64 bit patterns order like the values
                        heap.push(Reverse((t.to_bits(), id)));
                    }
                }
            }
            let mut next = None;
            while let Some(Reverse((tb, _))) = heap.pop() {
                let t = f64::from_bits(tb);
                if t > now + EPS {
                    next = Some(t);
                    break;
                }
            }
            match next {
                Some(t) => now = t,
                None => break,
            }
        }
        let blocked: Vec<String> = (0..n).filter(|&id| !self.done(id)).map(|id| self.name(id)).collect();
        if !blocked.is_empty() {
            return Err(Error::Deadlock { cycle: now, blocked });
        }
        for f in &self.fifos {
            if f.pushed != f.popped || !f.q.is_empty() {
                return Err(Error::Invariant(format!(
                    "{}: {} words pushed, {} popped",
                    f.name, f.pushed, f.popped
                )));
            }
        }
        Ok(now)
    }
}

struct Builder<'a> {
    arch: &'a ArchSpec,
    p: &'a CalibrationProfile,
    w: World,
    tile_ids: HashMap<Tile, usize>,
}

impl<'a> Builder<'a> {
    fn fifo(&mut self, name: String) -> usize {
        self.w.fifos.push(Fifo::new(name, self.arch.cascade_fifo_depth));
        self.w.fifos.len() - 1
    }

    fn add(&mut self, e: Ent) -> usize {
        self.w.ents.push(e);
        self.w.ents.len() - 1
    }

    fn set_pending_and_launch(&mut self, xfer: usize, srcs: &BTreeSet<Tile>) {
        for s in srcs {
            let id = self.tile_ids[s];
            match &mut self.w.ents[id] {
                Ent::Dense(d) => d.launches.push(xfer),
                Ent::Agg(a) => a.launches.push(xfer),
                _ => unreachable!(),
            }
        }
        for &d in &self.w.xfers[xfer].dests.clone() {
            match &mut self.w.ents[d] {
                Ent::Dense(t) => t.pending += 1,
                Ent::Agg(t) => t.pending += 1,
                _ => unreachable!(),
            }
        }
    }

    /// One transfer per channel, or one per group when payloads are summed.
    fn transfers(&mut self, name: &str, kind: LinkKind, chans: &[&Channel], launchers: Option<&BTreeSet<Tile>>) {
        if chans.is_empty() {
            return;
        }
        let groups: Vec<Vec<&Channel>> = match (kind, self.p.dma_payload) {
            (LinkKind::Dma, DmaPayload::Total) => vec![chans.to_vec()],
            _ => chans.iter().map(|c| vec![*c]).collect(),
        };
        for (gi, g) in groups.into_iter().enumerate() {
            let bits: u64 = g.iter().map(|c| c.bits).sum();
            let dist = g.iter().map(|c| c.distance).max().unwrap_or(0);
            let duration = match kind {
                LinkKind::SharedMem => shared_mem_latency(bits, self.arch),
                _ => dma_comm_latency(bits, dist, self.arch, self.p),
            };
            let dests: BTreeSet<usize> = g
                .iter()
                .flat_map(|c| c.dests.iter().map(|t| self.tile_ids[t]))
                .collect();
            let srcs: BTreeSet<Tile> = match launchers {
                Some(l) => l.clone(),
                None => g.iter().filter_map(|c| c.src).collect(),
            };
            let egress = g.iter().all(|c| c.dests.is_empty());
            self.w.xfers.push(Transfer {
                name: format!("{name}.{gi}"),
                kind,
                bits,
                duration,
                waiting: srcs.len(),
                launch: 0.0,
                done_at: srcs.is_empty().then_some(duration),
                fired: false,
                dests: dests.into_iter().collect(),
                egress,
            });
            let x = self.w.xfers.len() - 1;
            self.set_pending_and_launch(x, &srcs);
            if srcs.is_empty() {
                let t = &self.w.xfers[x];
                let (n, b) = (t.name.clone(), t.bits);
                self.w.log(0.0, &n, "launch", b);
            }
            self.add(Ent::Xfer(x));
        }
    }
}

/// Tiles holding each layer's finished output.
fn output_tiles(design: &Design, i: usize) -> BTreeSet<Tile> {
    match design.plans[i] {
        LayerPlan::Dense { part, .. } => (0..part.a)
            .flat_map(|a| (0..part.c).map(move |c| (a, c)))
            .map(|(a, c)| design.placement.dense_tile(i, part.c, a, part.b - 1, c))
            .collect(),
        LayerPlan::Aggregate { .. } => BTreeSet::from([design.placement.aggregate_tile(i, 0)]),
    }
}

/// Simulates `design` and returns its end-to-end latency and per-entity timing.
pub fn run_timed(design: &Design, arch: &ArchSpec, p: &CalibrationProfile) -> Result<SimTrace> {
    run_timed_inner(design, arch, p, true)
}

/// Same as [`run_timed`] without the event log.
pub fn run_timed_quiet(design: &Design, arch: &ArchSpec, p: &CalibrationProfile) -> Result<SimTrace> {
    run_timed_inner(design, arch, p, false)
}

fn run_timed_inner(design: &Design, arch: &ArchSpec, p: &CalibrationProfile, record: bool) -> Result<SimTrace> {
    let variants = layer_variants(design);
    let edges = &design.comm.edges;
    let n = design.plans.len();
    let mut bld = Builder {
        arch,
        p,
        w: World {
            ents: Vec::new(),
            fifos: Vec::new(),
            xfers: Vec::new(),
            events: Vec::new(),
            o_cas: p.cascade_gap,
            word_bits: arch.cascade_bits_per_cycle,
            record,
        },
        tile_ids: HashMap::new(),
    };
    let partial_words = (4 * arch.block.m * arch.block.n) as u64 * ACC_BITS;
    let partial_words = partial_words.div_ceil(arch.cascade_bits_per_cycle);

    // tiles
    for (i, plan) in design.plans.iter().enumerate() {
        let in_cascade = edges[i].link == LinkKind::Cascade;
        let out_cascade = edges[i + 1].link == LinkKind::Cascade;
        match *plan {
            LayerPlan::Dense { part, kernel, layer, .. } => {
                let br = layer.bias || layer.relu;
                let variant = variants[i].expect("dense layers have a variant");
                for a in 0..part.a {
                    for b in 0..part.b {
                        for c in 0..part.c {
                            let t = design.placement.dense_tile(i, part.c, a, b, c);
                            let last = b + 1 == part.b;
                            let id = bld.add(Ent::Dense(DenseSim {
                                name: format!("L{i}.t{a}.{b}.{c}"),
                                layer: i,
                                west: None,
                                east: None,
                                recv_words: if in_cascade { edges[i].cascade_words } else { 0 },
                                relay: in_cascade && !last,
                                pending: 0,
                                gap: if in_cascade { p.cascade_gap } else { 0.0 },
                                prologue: p.kernel_overhead(variant),
                                n_loops: n_jloops(kernel, arch),
                                loop_len: chain_position_cycles(kernel, part.b, b, arch, p, br),
                                in_partial: if b > 0 { partial_words } else { 0 },
                                out_total: if !last {
                                    partial_words
                                } else if out_cascade {
                                    cascade_out_words(plan, arch)
                                } else {
                                    0
                                },
                                out_kind_act: last,
                                launches: Vec::new(),
                                phase: Phase::Receive,
                                received: 0,
                                last_recv: f64::NEG_INFINITY,
                                popped_partial: 0,
                                started: 0,
                                first_start: f64::INFINITY,
                                last_end: 0.0,
                            }));
                            bld.tile_ids.insert(t, id);
                        }
                    }
                }
                // row chains
                for a in 0..part.a {
                    for c in 0..part.c {
                        for b in 0..part.b.saturating_sub(1) {
                            let f = bld.fifo(format!("L{i}.r{a}.{c}.cas{b}"));
                            let up = bld.tile_ids[&design.placement.dense_tile(i, part.c, a, b, c)];
                            let down = bld.tile_ids[&design.placement.dense_tile(i, part.c, a, b + 1, c)];
                            bld.w.dense_mut(up).east = Some(f);
                            bld.w.dense_mut(down).west = Some(f);
                        }
                    }
                }
            }
            LayerPlan::Aggregate {
                tiles,
                h1,
                w2,
                reduce,
                ..
            } => {
                let first = bld.w.ents.len();
                for a in 0..tiles {
                    let t = design.placement.aggregate_tile(i, a);
                    let id = bld.add(Ent::Agg(AggSim {
                        name: format!("L{i}.agg{a}"),
                        layer: i,
                        index: a,
                        top: a + 1 == tiles,
                        below: (a > 0).then(|| first + a as usize - 1),
                        pending: 0,
                        local: aggregation_local_cycles(h1, w2, AggMethod::Mac, arch, p),
                        hop: aggregation_hop_cycles(w2, arch, p)
                            + if a == 0 { aggregation_mean_cycles(w2, reduce, arch) } else { 0.0 },
                        east: None,
                        out_words: if a == 0 && out_cascade { cascade_out_words(plan, arch) } else { 0 },
                        launches: Vec::new(),
                        got_partial: false,
                        phase: AggPhase::Await,
                        first_start: f64::INFINITY,
                        last_end: 0.0,
                    }));
                    bld.tile_ids.insert(t, id);
                }
            }
        }
    }

    // cascade links between layers and at the boundaries
    for i in 0..=n {
        if edges[i].link != LinkKind::Cascade {
            continue;
        }
        if i == 0 {
            let LayerPlan::Dense { part, .. } = design.plans[0] else { unreachable!() };
            for a in 0..part.a {
                for c in 0..part.c {
                    let f = bld.fifo(format!("in.r{a}.{c}"));
                    let t = bld.tile_ids[&design.placement.dense_tile(0, part.c, a, 0, c)];
                    bld.w.dense_mut(t).west = Some(f);
                    bld.add(Ent::Source(Source {
                        name: format!("in.r{a}.{c}"),
                        fifo: f,
                        words: edges[0].cascade_words,
                        pushed: 0,
                    }));
                }
            }
            continue;
        }
        // producer row ends
        let rows: Vec<(u32, u32, Tile)> = match design.plans[i - 1] {
            LayerPlan::Dense { part, .. } => (0..part.a)
                .flat_map(|a| (0..part.c).map(move |c| (a, c)))
                .map(|(a, c)| (a, c, design.placement.dense_tile(i - 1, part.c, a, part.b - 1, c)))
                .collect(),
            LayerPlan::Aggregate { .. } => vec![(0, 0, design.placement.aggregate_tile(i - 1, 0))],
        };
        for (a, c, src) in rows {
            let f = bld.fifo(if i == n { format!("out.r{a}.{c}") } else { format!("L{i}.in.r{a}.{c}") });
            let sid = bld.tile_ids[&src];
            match &mut bld.w.ents[sid] {
                Ent::Dense(d) => d.east = Some(f),
                Ent::Agg(g) => g.east = Some(f),
                _ => unreachable!(),
            }
            if i == n {
                bld.add(Ent::Sink(Sink {
                    name: format!("out.r{a}.{c}"),
                    fifo: f,
                    words: edges[n].cascade_words,
                    popped: 0,
                    end: None,
                }));
            } else {
                let LayerPlan::Dense { part, .. } = design.plans[i] else {
                    return Err(Error::Invariant(format!("edge {i}: cascade into an aggregation")));
                };
                let dst = bld.tile_ids[&design.placement.dense_tile(i, part.c, a, 0, c)];
                bld.w.dense_mut(dst).west = Some(f);
            }
        }
    }

    // DMA and shared-memory transfers
    for (i, e) in edges.iter().enumerate() {
        let data: Vec<&Channel> = e.data_channels().collect();
        let weights: Vec<&Channel> = e.weight_channels().collect();
        if e.link != LinkKind::Cascade {
            bld.transfers(&format!("e{i}"), e.link, &data, None);
        }
        if !weights.is_empty() {
            let launchers = if i == 0 { BTreeSet::new() } else { output_tiles(design, i - 1) };
            bld.transfers(&format!("e{i}.w"), LinkKind::Dma, &weights, Some(&launchers));
        }
    }

    let mut w = bld.w;
    let last_event = w.run()?;

    // end-to-end: the last output leaves the array
    let mut total: f64 = 0.0;
    for x in &w.xfers {
        if x.egress {
            total = total.max(x.done_at.unwrap_or(last_event));
        }
    }
    for e in &w.ents {
        if let Ent::Sink(s) = e {
            total = total.max(s.end.unwrap_or(last_event));
        }
    }

    let mut layers: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for e in &w.ents {
        let (l, s, t) = match e {
            Ent::Dense(d) => (d.layer, d.first_start, d.last_end),
            Ent::Agg(a) => (a.layer, a.first_start, a.last_end),
            _ => continue,
        };
        let v = layers.entry(l).or_insert((f64::INFINITY, 0.0));
        v.0 = v.0.min(s);
        v.1 = v.1.max(t);
    }
    let layers = layers
        .into_iter()
        .map(|(index, (start, end))| LayerInterval { index, start, end })
        .collect();

    let mut links = Vec::new();
    for f in &w.fifos {
        if f.max_occ > f.depth {
            return Err(Error::Invariant(format!("{}: occupancy {} over depth {}", f.name, f.max_occ, f.depth)));
        }
        let bits = f.pushed * arch.cascade_bits_per_cycle;
        let span = (f.last_pop + 1.0 - f.first_push).max(1.0);
        links.push(LinkStats {
            name: f.name.clone(),
            kind: LinkKind::Cascade,
            bits,
            start: f.first_push,
            end: f.last_pop + 1.0,
            max_occupancy: f.max_occ,
            bits_per_cycle: bits as f64 / span,
        });
    }
    for x in &w.xfers {
        let cap = match x.kind {
            LinkKind::SharedMem => arch.shared_mem_bits_per_cycle,
            _ => arch.dma_bits_per_cycle,
        };
        let beats = x.bits.div_ceil(cap).max(1);
        let rate = x.bits as f64 / beats as f64;
        if rate > cap as f64 + EPS {
            return Err(Error::Invariant(format!("{}: {rate} bits per cycle over cap {cap}", x.name)));
        }
        let end = x.done_at.unwrap_or(0.0);
        links.push(LinkStats {
            name: x.name.clone(),
            kind: x.kind,
            bits: x.bits,
            start: x.launch,
            end,
            max_occupancy: 0,
            bits_per_cycle: x.bits as f64 / (end - x.launch).max(1.0),
        });
    }
    let mut events = std::mem::take(&mut w.events);
    events.sort_by(|a, b| a.cycle.total_cmp(&b.cycle));
    Ok(SimTrace {
        total_cycles: total,
        total_ns: cycles_to_ns(total, arch),
        layers,
        links,
        events,
    })
}

/// Timing of a standalone aggregation whose tiles already hold their inputs.
pub(crate) fn time_aggregation(
    h1: usize,
    w2: usize,
    tiles: u32,
    reduce: crate::model::ReduceKind,
    method: AggMethod,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> Result<f64> {
    let mut w = World {
        ents: Vec::new(),
        fifos: Vec::new(),
        xfers: Vec::new(),
        events: Vec::new(),
        o_cas: p.cascade_gap,
            word_bits: arch.cascade_bits_per_cycle,
        record: false,
    };
    for a in 0..tiles {
        w.ents.push(Ent::Agg(AggSim {
            name: format!("agg{a}"),
            layer: 0,
            index: a,
            top: a + 1 == tiles,
            below: (a > 0).then(|| a as usize - 1),
            pending: 0,
            local: aggregation_local_cycles(h1, w2, method, arch, p),
            hop: aggregation_hop_cycles(w2, arch, p)
                + if a == 0 { aggregation_mean_cycles(w2, reduce, arch) } else { 0.0 },
            east: None,
            out_words: 0,
            launches: Vec::new(),
            got_partial: false,
            phase: AggPhase::Await,
            first_start: f64::INFINITY,
            last_end: 0.0,
        }));
    }
    w.run()?;
    Ok(w
        .ents
        .iter()
        .filter_map(|e| match e {
            Ent::Agg(a) if a.index == 0 => Some(a.last_end),
            _ => None,
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;
    use crate::calib::{tradeoff_design_a, tradeoff_design_b};
    use crate::dse::design::{Boundary, DesignOptions, WeightSource};
    use crate::dse::search::design_for_mapping;
    use crate::mapping::{Mapping, Partition};
    use crate::model::parse_model;
    use crate::perf::end_to_end_latency;
    use crate::profile::{default_profile, CalibrationProfile};

    fn motivating(parts: Partition, opts: DesignOptions) -> Design {
        let m = parse_model("name=m\ninput=32x32\ndense 32 shift=6\n").unwrap();
        design_for_mapping(&m, &Mapping::new(vec![parts]), &default_aie_ml(), opts).unwrap()
    }

    #[test]
    fn motivating_cascade_is_48() {
        let d = motivating(
            Partition::new(2, 2, 1),
            DesignOptions {
                ingress: Boundary::Cascade,
                egress: Boundary::Cascade,
                weights: WeightSource::Preloaded,
            },
        );
        let t = run_timed(&d, &default_aie_ml(), &CalibrationProfile::zero()).unwrap();
        assert_eq!(t.total_cycles, 48.0);
    }

    #[test]
    fn motivating_baseline_matches_model() {
        let d = motivating(
            Partition::new(2, 2, 1),
            DesignOptions {
                weights: WeightSource::Dma,
                ..DesignOptions::default()
            },
        );
        let a = default_aie_ml();
        let p = CalibrationProfile::zero();
        let t = run_timed(&d, &a, &p).unwrap();
        assert_eq!(t.total_cycles, end_to_end_latency(&d, &a, &p).total_cycles);
        assert!(t.total_cycles >= 288.0);
    }

    #[test]
    fn tradeoff_designs_track_model() {
        let a = default_aie_ml();
        let p = default_profile();
        let m = crate::calib::tradeoff_model();
        for map in [tradeoff_design_a(), tradeoff_design_b()] {
            let d = design_for_mapping(&m, &map, &a, DesignOptions::default()).unwrap();
            let t = run_timed(&d, &a, &p).unwrap();
            let e = end_to_end_latency(&d, &a, &p).total_cycles;
            // fill loops upstream of the slowest chain position finish early
            assert!(t.total_cycles <= e + 1e-9);
            assert!((e - t.total_cycles) / t.total_cycles < 0.1, "{} vs {e}", t.total_cycles);
            assert!(t.links.iter().all(|l| l.max_occupancy <= a.cascade_fifo_depth));
        }
    }

    #[test]
    fn trace_is_csv() {
        let d = motivating(Partition::UNIT, DesignOptions::default());
        let t = run_timed(&d, &default_aie_ml(), &default_profile()).unwrap();
        let csv = t.events_csv();
        assert!(csv.starts_with("cycle,entity,event,payload_bits\n"));
        assert!(csv.lines().count() > 3);
    }
}
