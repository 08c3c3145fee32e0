//! Service-area mission planning: assess stations, pick the cheaper of
//! fetching and delivering, and drive the top-level task state machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::Cell;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectKind(pub String);

impl ObjectKind {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type StationId = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Multiset(BTreeMap<ObjectKind, u32>);

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, k: &ObjectKind) -> u32 {
        self.0.get(k).copied().unwrap_or(0)
    }

    pub fn insert(&mut self, k: ObjectKind) {
        *self.0.entry(k).or_default() += 1;
    }

    /// Remove one instance; false if none present.
    pub fn remove(&mut self, k: &ObjectKind) -> bool {
        match self.0.get_mut(k) {
            Some(n) if *n > 1 => {
                *n -= 1;
                true
            }
            Some(_) => {
                self.0.remove(k);
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectKind, u32)> {
        self.0.iter().map(|(k, &n)| (k, n))
    }

    pub fn kinds(&self) -> impl Iterator<Item = &ObjectKind> {
        self.0.keys()
    }
}

impl<S: Into<String>> FromIterator<S> for Multiset {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut m = Multiset::new();
        for s in iter {
            m.insert(ObjectKind::new(s));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub location: Cell,
    /// Where the robot stops to work on this station.
    pub approach: Cell,
    pub present: Multiset,
    pub desired: Multiset,
}

impl Station {
    pub fn satisfied(&self) -> bool {
        self.present == self.desired
    }

    /// Objects present beyond what is desired.
    pub fn surplus(&self, k: &ObjectKind) -> u32 {
        self.present.count(k).saturating_sub(self.desired.count(k))
    }

    /// Objects desired but not present.
    pub fn deficit(&self, k: &ObjectKind) -> u32 {
        self.desired.count(k).saturating_sub(self.present.count(k))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Carried {
    pub kind: ObjectKind,
    pub source: StationId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Assess,
    GoFetch { station: StationId, object: ObjectKind },
    AwaitPick { station: StationId, object: ObjectKind },
    GoDeliver { station: StationId, object: ObjectKind },
    AwaitPlace { station: StationId, object: ObjectKind },
    Done,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Assess => "Assess",
            Phase::GoFetch { .. } => "GoFetch",
            Phase::AwaitPick { .. } => "AwaitPick",
            Phase::GoDeliver { .. } => "GoDeliver",
            Phase::AwaitPlace { .. } => "AwaitPlace",
            Phase::Done => "Done",
        }
    }

    pub fn target(&self) -> Option<(StationId, &ObjectKind)> {
        match self {
            Phase::GoFetch { station, object }
            | Phase::AwaitPick { station, object }
            | Phase::GoDeliver { station, object }
            | Phase::AwaitPlace { station, object } => Some((*station, object)),
            Phase::Assess | Phase::Done => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissionEvent {
    ArrivedAtStation,
    PickDone,
    PlaceDone,
    Replanned,
}

impl MissionEvent {
    pub fn name(self) -> &'static str {
        match self {
            MissionEvent::ArrivedAtStation => "ArrivedAtStation",
            MissionEvent::PickDone => "PickDone",
            MissionEvent::PlaceDone => "PlaceDone",
            MissionEvent::Replanned => "Replanned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assessment {
    Desired,
    NotDesired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActionKind {
    // Declaration order is the tie-break order.
    Deliver,
    Fetch,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Deliver => "Deliver",
            ActionKind::Fetch => "Fetch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCandidate {
    pub kind: ActionKind,
    pub station: StationId,
    pub object: ObjectKind,
    /// Travel cost in meters from the robot to the station approach cell.
    pub cost: f64,
}

pub const DEFAULT_CAPACITY: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub stations: Vec<Station>,
    pub inventory: Vec<Carried>,
    pub capacity: usize,
    pub phase: Phase,
    pub robot_cell: Cell,
    /// (station, object) pairs given up on after a failed attempt.
    pub infeasible: BTreeSet<(StationId, ObjectKind)>,
}

impl MissionState {
    pub fn new(stations: Vec<Station>, capacity: usize, robot_cell: Cell) -> Self {
        Self {
            stations,
            inventory: Vec::new(),
            capacity,
            phase: Phase::Assess,
            robot_cell,
            infeasible: BTreeSet::new(),
        }
    }

    pub fn station(&self, id: StationId) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }

    fn station_mut(&mut self, id: StationId) -> Option<&mut Station> {
        self.stations.iter_mut().find(|s| s.id == id)
    }

    fn carried_count(&self, k: &ObjectKind) -> u32 {
        self.inventory.iter().filter(|c| &c.kind == k).count() as u32
    }

    /// Objects that are at the wrong station or in the gripper.
    pub fn misplaced_count(&self) -> u32 {
        let surplus: u32 = self
            .stations
            .iter()
            .map(|s| s.present.kinds().map(|k| s.surplus(k)).sum::<u32>())
            .sum();
        surplus + self.inventory.len() as u32
    }

    /// Total of each kind across stations and inventory.
    pub fn object_totals(&self) -> BTreeMap<ObjectKind, u32> {
        let mut t = BTreeMap::new();
        for s in &self.stations {
            for (k, n) in s.present.iter() {
                *t.entry(k.clone()).or_default() += n;
            }
        }
        for c in &self.inventory {
            *t.entry(c.kind.clone()).or_default() += 1;
        }
        t
    }

    /// Abandon the current go/await phase and mark its target infeasible.
    pub fn abandon(&mut self) {
        if let Some((s, o)) = self.phase.target() {
            self.infeasible.insert((s, o.clone()));
        }
        if self.phase != Phase::Done {
            self.phase = Phase::Assess;
        }
    }
}

pub fn assess(state: &MissionState) -> Assessment {
    if state.inventory.is_empty() && state.stations.iter().all(Station::satisfied) {
        Assessment::Desired
    } else {
        Assessment::NotDesired
    }
}

/// Candidate actions, each costed by `cost(from, to)` (meters; `None` for
/// unreachable, which drops the candidate). Fetches are only offered for
/// kinds with outstanding demand not already covered by the inventory.
pub fn enumerate_actions<F>(state: &MissionState, mut cost: F) -> Result<Vec<ActionCandidate>>
where
    F: FnMut(Cell, Cell) -> Option<f64>,
{
    let mut out = Vec::new();
    let blocked = |s: StationId, k: &ObjectKind| state.infeasible.contains(&(s, k.clone()));
    for item in &state.inventory {
        let best = state
            .stations
            .iter()
            .filter(|s| s.deficit(&item.kind) > 0 && !blocked(s.id, &item.kind))
            .filter_map(|s| cost(state.robot_cell, s.approach).map(|c| (c, s.id)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((c, id)) = best {
            out.push(ActionCandidate {
                kind: ActionKind::Deliver,
                station: id,
                object: item.kind.clone(),
                cost: c,
            });
        }
    }
    if state.inventory.len() < state.capacity {
        for s in &state.stations {
            for kind in s.present.kinds() {
                let demand: u32 = state.stations.iter().map(|t| t.deficit(kind)).sum();
                if demand <= state.carried_count(kind) || blocked(s.id, kind) {
                    continue;
                }
                let n = s.surplus(kind);
                if n == 0 {
                    continue;
                }
                let Some(c) = cost(state.robot_cell, s.approach) else {
                    continue;
                };
                for _ in 0..n {
                    out.push(ActionCandidate {
                        kind: ActionKind::Fetch,
                        station: s.id,
                        object: kind.clone(),
                        cost: c,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoFeasibleAction);
    }
    Ok(out)
}

/// Minimum cost; ties go to deliveries, then the lower station id.
pub fn choose_action(candidates: &[ActionCandidate]) -> Option<&ActionCandidate> {
    candidates.iter().min_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(a.kind.cmp(&b.kind))
            .then(a.station.cmp(&b.station))
            .then(a.object.cmp(&b.object))
    })
}

/// Run the assess step: moves `Assess` to `Done` or to a go phase. Returns
/// the chosen action, if any.
pub fn plan_next<F>(state: &mut MissionState, cost: F) -> Result<Option<ActionCandidate>>
where
    F: FnMut(Cell, Cell) -> Option<f64>,
{
    if state.phase != Phase::Assess {
        return Err(Error::IllegalEvent {
            phase: state.phase.name().into(),
            event: "Assess".into(),
        });
    }
    if assess(state) == Assessment::Desired {
        state.phase = Phase::Done;
        return Ok(None);
    }
    let candidates = enumerate_actions(state, cost)?;
    let chosen = choose_action(&candidates).cloned().expect("nonempty candidates");
    state.phase = match chosen.kind {
        ActionKind::Fetch => Phase::GoFetch {
            station: chosen.station,
            object: chosen.object.clone(),
        },
        ActionKind::Deliver => Phase::GoDeliver {
            station: chosen.station,
            object: chosen.object.clone(),
        },
    };
    Ok(Some(chosen))
}

pub fn mission_step(state: &mut MissionState, event: MissionEvent) -> Result<()> {
    use MissionEvent::*;
    let illegal = |p: &Phase| Error::IllegalEvent {
        phase: p.name().into(),
        event: event.name().into(),
    };
    let next = match (&state.phase, event) {
        (Phase::GoFetch { .. } | Phase::GoDeliver { .. }, Replanned) => state.phase.clone(),
        (Phase::GoFetch { station, object }, ArrivedAtStation) => Phase::AwaitPick {
            station: *station,
            object: object.clone(),
        },
        (Phase::GoDeliver { station, object }, ArrivedAtStation) => Phase::AwaitPlace {
            station: *station,
            object: object.clone(),
        },
        (Phase::AwaitPick { station, object }, PickDone) => {
            if state.inventory.len() >= state.capacity {
                return Err(illegal(&state.phase));
            }
            let (station, object) = (*station, object.clone());
            let st = state
                .station_mut(station)
                .ok_or_else(|| Error::Scenario(format!("unknown station {station}")))?;
            if !st.present.remove(&object) {
                return Err(Error::Scenario(format!("station {station} has no {object}")));
            }
            state.inventory.push(Carried {
                kind: object,
                source: station,
            });
            Phase::Assess
        }
        (Phase::AwaitPlace { station, object }, PlaceDone) => {
            let (station, object) = (*station, object.clone());
            let pos = state
                .inventory
                .iter()
                .position(|c| c.kind == object)
                .ok_or_else(|| Error::Scenario(format!("not carrying {object}")))?;
            let st = state
                .station_mut(station)
                .ok_or_else(|| Error::Scenario(format!("unknown station {station}")))?;
            st.present.insert(object);
            state.inventory.remove(pos);
            Phase::Assess
        }
        (p, _) => return Err(illegal(p)),
    };
    state.phase = next;
    Ok(())
}

/// `t=<sim_s> phase=<name> action=<Fetch|Deliver|-> station=<id> object=<kind> cost=<m>`
pub fn log_line(t: f64, phase: &Phase, action: Option<&ActionCandidate>) -> String {
    match action {
        Some(a) => format!(
            "t={t:.2} phase={} action={} station={} object={} cost={:.3}",
            phase.name(),
            a.kind.name(),
            a.station,
            a.object,
            a.cost
        ),
        None => {
            let (s, o) = phase
                .target()
                .map(|(s, o)| (s.to_string(), o.to_string()))
                .unwrap_or_else(|| ("-".into(), "-".into()));
            format!("t={t:.2} phase={} action=- station={s} object={o} cost=-", phase.name())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(id: StationId, col: usize, present: &[&str], desired: &[&str]) -> Station {
        Station {
            id,
            location: Cell::new(col, 0),
            approach: Cell::new(col, 0),
            present: present.iter().copied().collect(),
            desired: desired.iter().copied().collect(),
        }
    }

    fn manhattan(a: Cell, b: Cell) -> Option<f64> {
        Some((a.col as f64 - b.col as f64).abs() + (a.row as f64 - b.row as f64).abs())
    }

    #[test]
    fn assess_examples() {
        let mut s = MissionState::new(vec![station(1, 0, &["A"], &["A"])], 1, Cell::new(0, 0));
        assert_eq!(assess(&s), Assessment::Desired);
        s.stations.push(station(2, 3, &["B"], &[]));
        assert_eq!(assess(&s), Assessment::NotDesired);
        let mut s = MissionState::new(vec![station(1, 0, &[], &[])], 1, Cell::new(0, 0));
        s.inventory.push(Carried {
            kind: ObjectKind::new("A"),
            source: 1,
        });
        assert_eq!(assess(&s), Assessment::NotDesired);
    }

    #[test]
    fn enumerate_examples() {
        let s = MissionState::new(
            vec![station(1, 2, &["A"], &[]), station(2, 5, &[], &["A"])],
            1,
            Cell::new(0, 0),
        );
        let c = enumerate_actions(&s, manhattan).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].kind, c[0].station, c[0].cost), (ActionKind::Fetch, 1, 2.0));

        let mut full = s.clone();
        full.inventory.push(Carried {
            kind: ObjectKind::new("A"),
            source: 1,
        });
        full.stations[0].present = Multiset::new();
        let c = enumerate_actions(&full, manhattan).unwrap();
        assert!(c.iter().all(|a| a.kind == ActionKind::Deliver));

        // Two carried, two misplaced, capacity three.
        let mut s = MissionState::new(
            vec![
                station(1, 1, &["C", "D"], &[]),
                station(2, 4, &[], &["A", "B", "C", "D"]),
            ],
            3,
            Cell::new(0, 0),
        );
        s.inventory.push(Carried {
            kind: ObjectKind::new("A"),
            source: 1,
        });
        s.inventory.push(Carried {
            kind: ObjectKind::new("B"),
            source: 1,
        });
        assert_eq!(enumerate_actions(&s, manhattan).unwrap().len(), 4);

        let s = MissionState::new(
            vec![station(1, 1, &["A"], &[]), station(2, 2, &[], &["A"])],
            0,
            Cell::new(0, 0),
        );
        assert!(matches!(enumerate_actions(&s, manhattan), Err(Error::NoFeasibleAction)));
    }

    #[test]
    fn choose_examples() {
        let a = |kind, station, cost| ActionCandidate {
            kind,
            station,
            object: ObjectKind::new("A"),
            cost,
        };
        let one = [a(ActionKind::Fetch, 3, 7.0)];
        assert_eq!(choose_action(&one), Some(&one[0]));
        let c = [a(ActionKind::Fetch, 1, 5.0), a(ActionKind::Deliver, 2, 3.0)];
        assert_eq!(choose_action(&c).unwrap().kind, ActionKind::Deliver);
        let tie = [
            a(ActionKind::Fetch, 1, 3.0),
            a(ActionKind::Deliver, 4, 3.0),
            a(ActionKind::Deliver, 2, 3.0),
        ];
        let best = choose_action(&tie).unwrap();
        assert_eq!((best.kind, best.station), (ActionKind::Deliver, 2));
        assert!(choose_action(&[]).is_none());
    }

    #[test]
    fn fsm_transitions() {
        let mut s = MissionState::new(
            vec![station(1, 2, &["A"], &[]), station(2, 5, &[], &["A"])],
            1,
            Cell::new(0, 0),
        );
        let chosen = plan_next(&mut s, manhattan).unwrap().unwrap();
        assert_eq!(chosen.kind, ActionKind::Fetch);
        assert!(matches!(
            mission_step(&mut s, MissionEvent::PickDone),
            Err(Error::IllegalEvent { .. })
        ));
        mission_step(&mut s, MissionEvent::Replanned).unwrap();
        mission_step(&mut s, MissionEvent::ArrivedAtStation).unwrap();
        mission_step(&mut s, MissionEvent::PickDone).unwrap();
        assert_eq!(s.inventory.len(), 1);
        assert_eq!(s.phase, Phase::Assess);
        s.robot_cell = Cell::new(2, 0);
        let chosen = plan_next(&mut s, manhattan).unwrap().unwrap();
        assert_eq!((chosen.kind, chosen.station), (ActionKind::Deliver, 2));
        mission_step(&mut s, MissionEvent::ArrivedAtStation).unwrap();
        mission_step(&mut s, MissionEvent::PlaceDone).unwrap();
        assert!(plan_next(&mut s, manhattan).unwrap().is_none());
        assert_eq!(s.phase, Phase::Done);
        for e in [
            MissionEvent::ArrivedAtStation,
            MissionEvent::PickDone,
            MissionEvent::PlaceDone,
            MissionEvent::Replanned,
        ] {
            assert!(matches!(mission_step(&mut s, e), Err(Error::IllegalEvent { .. })));
        }
    }

    #[test]
    fn abandon_blocks_candidate() {
        let mut s = MissionState::new(
            vec![station(1, 2, &["A"], &[]), station(2, 5, &[], &["A"])],
            1,
            Cell::new(0, 0),
        );
        plan_next(&mut s, manhattan).unwrap();
        s.abandon();
        assert_eq!(s.phase, Phase::Assess);
        assert!(matches!(plan_next(&mut s, manhattan), Err(Error::NoFeasibleAction)));
    }

    #[test]
    fn log_format() {
        let a = ActionCandidate {
            kind: ActionKind::Fetch,
            station: 3,
            object: ObjectKind::new("bolt"),
            cost: 1.25,
        };
        let p = Phase::GoFetch {
            station: 3,
            object: ObjectKind::new("bolt"),
        };
        assert_eq!(
            log_line(1.5, &p, Some(&a)),
            "t=1.50 phase=GoFetch action=Fetch station=3 object=bolt cost=1.250"
        );
        assert_eq!(
            log_line(0.0, &Phase::Done, None),
            "t=0.00 phase=Done action=- station=- object=- cost=-"
        );
    }
}
