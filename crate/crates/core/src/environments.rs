//! Grid navigation and SysAdmin benchmark builders.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::game_model::{LocalMdp, MarkovGame, ReachAvoidSpec};

pub type Cell = (usize, usize);

/// Navigation actions in index order.
pub const NAV_ACTIONS: [&str; 5] = ["left", "right", "up", "down", "stay"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub rows: usize,
    pub cols: usize,
    pub walls: BTreeSet<Cell>,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
    pub slip_prob: f64,
}

/// Two agents swap sides of a 5x5 grid whose middle column is walled off
/// except for one-cell gaps in rows 1 and 3.
pub const CANONICAL_MAP: &str = "\
..#..
.....
1.#.2
.....
..#..

..#..
.....
B.#.A
.....
..#..
";

impl GridMap {
    pub fn canonical(slip_prob: f64) -> Result<Self> {
        Self::parse(CANONICAL_MAP, slip_prob)
    }

    /// Parses one or more equally sized layers separated by blank lines.
    /// `#` is a wall and `.` open; digits `1`-`9` mark agent starts and
    /// letters `A`-`I` the matching goals. Walls must agree across layers, so
    /// extra layers only serve to place starts and goals on shared cells.
    pub fn parse(text: &str, slip_prob: f64) -> Result<Self> {
        let mut layers: Vec<Vec<&str>> = vec![Vec::new()];
        for line in text.lines().map(str::trim_end) {
            if line.trim().is_empty() {
                if !layers.last().expect("nonempty").is_empty() {
                    layers.push(Vec::new());
                }
            } else {
                layers.last_mut().expect("nonempty").push(line);
            }
        }
        layers.retain(|l| !l.is_empty());
        let Some(first) = layers.first() else {
            return validation("empty map");
        };
        let rows = first.len();
        let cols = first[0].chars().count();
        let mut walls: Option<BTreeSet<Cell>> = None;
        let mut starts: Vec<Option<Cell>> = vec![None; 9];
        let mut goals: Vec<Option<Cell>> = vec![None; 9];
        for layer in &layers {
            if layer.len() != rows || layer.iter().any(|l| l.chars().count() != cols) {
                return validation("map rows and layers must all have the same size");
            }
            let mut layer_walls = BTreeSet::new();
            for (r, line) in layer.iter().enumerate() {
                for (c, ch) in line.chars().enumerate() {
                    let slot = match ch {
                        '#' => {
                            layer_walls.insert((r, c));
                            continue;
                        }
                        '.' => continue,
                        '1'..='9' => &mut starts[ch as usize - '1' as usize],
                        'A'..='I' => &mut goals[ch as usize - 'A' as usize],
                        other => return validation(format!("unexpected map character {other:?}")),
                    };
                    if slot.replace((r, c)).is_some() {
                        return validation(format!("marker {ch:?} appears more than once"));
                    }
                }
            }
            match &walls {
                Some(w) if *w != layer_walls => return validation("walls differ between map layers"),
                Some(_) => {}
                None => walls = Some(layer_walls),
            }
        }
        let n = starts.iter().take_while(|s| s.is_some()).count();
        if starts[n..].iter().any(Option::is_some) || goals[n..].iter().any(Option::is_some) {
            return validation("agents must be numbered consecutively from 1 with goals A, B, ...");
        }
        if goals[..n].iter().any(Option::is_none) {
            return validation("every agent needs a goal");
        }
        let map = Self {
            rows,
            cols,
            walls: walls.expect("at least one layer"),
            starts: starts[..n].iter().flatten().copied().collect(),
            goals: goals[..n].iter().flatten().copied().collect(),
            slip_prob,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return validation("map must have at least one cell");
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return validation(format!("slip probability {} outside [0, 1]", self.slip_prob));
        }
        if self.starts.is_empty() || self.starts.len() != self.goals.len() {
            return validation("each agent needs exactly one start and one goal");
        }
        for (&s, &g) in self.starts.iter().zip(&self.goals) {
            if !self.is_open(s) || !self.is_open(g) {
                return validation(format!("start {s:?} or goal {g:?} is not an open cell"));
            }
            if !self.connected(s, g) {
                return validation(format!("goal {g:?} is unreachable from start {s:?}"));
            }
        }
        Ok(())
    }

    pub fn is_open(&self, (r, c): Cell) -> bool {
        r < self.rows && c < self.cols && !self.walls.contains(&(r, c))
    }

    /// Open cells in row-major order; the index is the local state id.
    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&cell| self.is_open(cell))
            .collect()
    }

    /// Open four-neighbours in action order (left, right, up, down).
    pub fn neighbours(&self, cell: Cell) -> Vec<Cell> {
        (0..4).filter_map(|a| self.step(cell, a)).collect()
    }

    /// Destination of moving `action` from `cell`, `None` if blocked.
    fn step(&self, (r, c): Cell, action: usize) -> Option<Cell> {
        let next = match action {
            0 => (r, c.checked_sub(1)?),
            1 => (r, c + 1),
            2 => (r.checked_sub(1)?, c),
            3 => (r + 1, c),
            _ => return Some((r, c)),
        };
        self.is_open(next).then_some(next)
    }

    fn connected(&self, from: Cell, to: Cell) -> bool {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for v in self.neighbours(u) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        false
    }

    /// Local dynamics of one agent starting at `start`: the intended cell
    /// (or the current one when blocked) gets `1 - slip`; the slip mass is
    /// shared by the other open neighbours, or stays put if there are none.
    pub fn local_mdp(&self, start: Cell) -> Result<LocalMdp> {
        let cells = self.open_cells();
        let id = |c: Cell| cells.binary_search(&c).expect("open cell");
        let mut entries = Vec::new();
        for (s, &cell) in cells.iter().enumerate() {
            for a in 0..NAV_ACTIONS.len() {
                let intended = self.step(cell, a).unwrap_or(cell);
                let others: Vec<Cell> = self.neighbours(cell).into_iter().filter(|&n| n != intended).collect();
                entries.push((s, a, id(intended), 1.0 - self.slip_prob));
                if others.is_empty() {
                    entries.push((s, a, id(intended), self.slip_prob));
                } else {
                    let share = self.slip_prob / others.len() as f64;
                    entries.extend(others.iter().map(|&o| (s, a, id(o), share)));
                }
            }
        }
        let labels = cells.iter().map(|(r, c)| format!("({r},{c})")).collect();
        LocalMdp::new(cells.len(), id(start), NAV_ACTIONS.len(), entries)?
            .with_labels(labels, NAV_ACTIONS.iter().map(|s| s.to_string()).collect())
    }
}

/// Target: every agent on its goal. Avoid: two agents on one cell.
pub fn build_navigation(map: &GridMap) -> Result<(MarkovGame, ReachAvoidSpec)> {
    map.validate()?;
    let cells = map.open_cells();
    let agents = map.starts.iter().map(|&s| map.local_mdp(s)).collect::<Result<Vec<_>>>()?;
    let game = MarkovGame::new(agents)?;
    game.check_enumerable()?;
    let goal: Vec<usize> = map
        .goals
        .iter()
        .map(|g| cells.binary_search(g).expect("open goal"))
        .collect();
    let target = BTreeSet::from([game.state_index().encode(&goal)?]);
    let mut avoid = BTreeSet::new();
    for s in 0..game.joint_state_count() {
        let local = game.state_index().decode(s)?;
        let distinct: BTreeSet<usize> = local.iter().copied().collect();
        if distinct.len() < local.len() {
            avoid.insert(s);
        }
    }
    let spec = ReachAvoidSpec::new(&game, target, avoid)?;
    Ok((game, spec))
}

pub const IN_REPAIR: usize = 0;
pub const NOMINAL: usize = 1;
pub const NEEDS_REPAIR: usize = 2;
pub const OFFLINE: usize = 3;

/// SysAdmin actions in index order.
pub const SYSADMIN_ACTIONS: [&str; 2] = ["wait", "repair"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysAdminParams {
    pub n_agents: usize,
    pub p_r: f64,
    pub p_onb: f64,
    pub p_off: f64,
    pub max_offline: usize,
    pub max_in_repair: usize,
    pub initial_config: Vec<usize>,
}

impl SysAdminParams {
    /// Four servers with `p_r = 0.9`, `p_onb = p_off = 0.1`, and at most two
    /// servers offline and two in repair.
    pub fn benchmark(initial_config: Vec<usize>) -> Self {
        Self {
            n_agents: initial_config.len(),
            p_r: 0.9,
            p_onb: 0.1,
            p_off: 0.1,
            max_offline: 2,
            max_in_repair: 2,
            initial_config,
        }
    }

    /// The three starting configurations of the benchmark: one server in
    /// need of repair; two in repair; two in repair and two offline.
    pub fn benchmark_initial_configs() -> [(&'static str, Vec<usize>); 3] {
        [
            ("one_needs_repair", vec![2, 1, 1, 1]),
            ("two_in_repair", vec![0, 0, 1, 1]),
            ("two_repair_two_offline", vec![0, 0, 3, 3]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.initial_config.len() != self.n_agents {
            return validation("initial_config needs one local state per agent");
        }
        for p in [self.p_r, self.p_onb, self.p_off] {
            if !(0.0..=1.0).contains(&p) {
                return validation(format!("probability {p} outside [0, 1]"));
            }
        }
        if let Some(&s) = self.initial_config.iter().find(|&&s| s > OFFLINE) {
            return validation(format!("local state {s} is not a SysAdmin state"));
        }
        if self.violates_limits(&self.initial_config) {
            return validation("initial configuration violates the offline or repair limits");
        }
        Ok(())
    }

    pub fn violates_limits(&self, joint: &[usize]) -> bool {
        let count = |k| joint.iter().filter(|&&s| s == k).count();
        count(OFFLINE) > self.max_offline || count(IN_REPAIR) > self.max_in_repair
    }

    pub fn local_mdp(&self, initial: usize) -> Result<LocalMdp> {
        let stay_or = |s: usize, next: usize, p: f64| [(s, 0, next, p), (s, 0, s, 1.0 - p)];
        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
        entries.extend(stay_or(IN_REPAIR, NOMINAL, self.p_r));
        entries.extend(stay_or(IN_REPAIR, NOMINAL, self.p_r).map(|(s, _, y, p)| (s, 1, y, p)));
        entries.extend(stay_or(NOMINAL, NEEDS_REPAIR, self.p_onb));
        entries.extend(stay_or(NEEDS_REPAIR, OFFLINE, self.p_off));
        entries.push((OFFLINE, 0, OFFLINE, 1.0));
        for s in [NOMINAL, NEEDS_REPAIR, OFFLINE] {
            entries.push((s, 1, IN_REPAIR, 1.0));
        }
        let labels = ["in_repair", "nominal", "needs_repair", "offline"];
        LocalMdp::new(4, initial, 2, entries)?.with_labels(
            labels.iter().map(|s| s.to_string()).collect(),
            SYSADMIN_ACTIONS.iter().map(|s| s.to_string()).collect(),
        )
    }
}

/// Target: every server nominal. Avoid: too many offline or in repair.
pub fn build_sysadmin(params: &SysAdminParams) -> Result<(MarkovGame, ReachAvoidSpec)> {
    params.validate()?;
    let agents = params
        .initial_config
        .iter()
        .map(|&s| params.local_mdp(s))
        .collect::<Result<Vec<_>>>()?;
    let game = MarkovGame::new(agents)?;
    game.check_enumerable()?;
    let target = BTreeSet::from([game.state_index().encode(&vec![NOMINAL; params.n_agents])?]);
    let mut avoid = BTreeSet::new();
    for s in 0..game.joint_state_count() {
        if params.violates_limits(&game.state_index().decode(s)?) {
            avoid.insert(s);
        }
    }
    let spec = ReachAvoidSpec::new(&game, target, avoid)?;
    Ok((game, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_row_without_slip_is_deterministic() {
        let map = GridMap::parse("1..A", 0.0).unwrap();
        let m = map.local_mdp((0, 0)).unwrap();
        for s in 0..4 {
            for a in 0..5 {
                assert_eq!(m.transition(s, a).unwrap().len(), 1);
            }
        }
        assert_eq!(m.transition(0, 1).unwrap(), &[(1, 1.0)]);
        assert_eq!(m.transition(0, 0).unwrap(), &[(0, 1.0)]);
    }

    #[test]
    fn canonical_interior_slip() {
        let map = GridMap::canonical(0.05).unwrap();
        assert_eq!(map.starts, vec![(2, 0), (2, 4)]);
        assert_eq!(map.goals, vec![(2, 4), (2, 0)]);
        assert_eq!(map.open_cells().len(), 22);
        let m = map.local_mdp(map.starts[0]).unwrap();
        let cells = map.open_cells();
        let id = |c: Cell| cells.binary_search(&c).unwrap();
        // (1,1) moving right to (1,2); other neighbours (1,0), (0,1), (2,1)
        let probs = m.transition(id((1, 1)), 1).unwrap();
        assert_eq!(probs.len(), 4);
        assert!((m.transition_prob(id((1, 1)), 1, id((1, 2))).unwrap() - 0.95).abs() < 1e-15);
        for c in [(1, 0), (0, 1), (2, 1)] {
            assert!((m.transition_prob(id((1, 1)), 1, id(c)).unwrap() - 0.05 / 3.0).abs() < 1e-15);
        }
        assert_eq!(m.out_degree(id((1, 1))).unwrap(), 5);
    }

    #[test]
    fn navigation_sets() {
        let map = GridMap::canonical(0.05).unwrap();
        let (game, spec) = build_navigation(&map).unwrap();
        assert_eq!(game.joint_state_count(), 22 * 22);
        assert_eq!(spec.avoid_set.len(), 22);
        assert_eq!(spec.target_set.len(), 1);
    }

    #[test]
    fn map_errors() {
        assert!(GridMap::parse("1#A", 0.1).is_err());
        assert!(GridMap::parse("1.", 0.1).is_err());
        assert!(GridMap::parse("1.A\n..", 0.1).is_err());
        assert!(GridMap::parse("1.A", 1.5).is_err());
        assert!(GridMap::parse("1xA", 0.1).is_err());
    }

    #[test]
    fn sysadmin_dynamics() {
        let params = SysAdminParams::benchmark(vec![2, 1, 1, 1]);
        let m = params.local_mdp(2).unwrap();
        assert_eq!(m.transition(NEEDS_REPAIR, 0).unwrap(), &[(2, 0.9), (3, 0.1)]);
        assert_eq!(m.transition(IN_REPAIR, 1).unwrap(), m.transition(IN_REPAIR, 0).unwrap());
        assert_eq!(m.feasible_successors(NOMINAL).unwrap(), &[0, 1, 2]);
        let (game, spec) = build_sysadmin(&params).unwrap();
        assert_eq!((game.joint_state_count(), game.joint_action_count()), (256, 16));
        let brute = (0..256usize)
            .filter(|&s| {
                let d: Vec<usize> = (0..4).map(|i| (s >> (2 * (3 - i))) & 3).collect();
                d.iter().filter(|&&x| x == 0).count() > 2 || d.iter().filter(|&&x| x == 3).count() > 2
            })
            .count();
        assert_eq!(spec.avoid_set.len(), brute);
        assert!(build_sysadmin(&SysAdminParams::benchmark(vec![3, 3, 3, 1])).is_err());
    }
}
