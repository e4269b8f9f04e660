use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finished, check_step, seeded, EnvId, Environment, StepResult};
use crate::error::{Error, Result};

pub const NORTH: u8 = 1;
pub const SOUTH: u8 = 2;
pub const WEST: u8 = 4;
pub const EAST: u8 = 8;

/// Maze actions in action-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    North,
    South,
    West,
    East,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::North, Move::South, Move::West, Move::East];

    pub fn from_action(a: usize) -> Option<Move> {
        Self::ALL.get(a).copied()
    }

    pub fn action(self) -> usize {
        self as usize
    }

    pub fn wall(self) -> u8 {
        match self {
            Move::North => NORTH,
            Move::South => SOUTH,
            Move::West => WEST,
            Move::East => EAST,
        }
    }

    pub fn opposite(self) -> Move {
        match self {
            Move::North => Move::South,
            Move::South => Move::North,
            Move::West => Move::East,
            Move::East => Move::West,
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Move::North => (-1, 0),
            Move::South => (1, 0),
            Move::West => (0, -1),
            Move::East => (0, 1),
        }
    }
}

/// Grid of cells, each holding a bitmask of its closed sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Maze {
    pub rows: usize,
    pub cols: usize,
    /// `walls[r][c]` is an OR of [`NORTH`], [`SOUTH`], [`WEST`], [`EAST`].
    pub walls: Vec<Vec<u8>>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
}

impl Maze {
    /// All walls closed; start top-left, goal bottom-right.
    pub fn closed(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            walls: vec![vec![NORTH | SOUTH | WEST | EAST; cols]; rows],
            start: (0, 0),
            goal: (rows - 1, cols - 1),
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn has_wall(&self, cell: (usize, usize), mv: Move) -> bool {
        self.walls[cell.0][cell.1] & mv.wall() != 0
    }

    /// Neighbouring cell in direction `mv`, ignoring walls.
    pub fn neighbor(&self, cell: (usize, usize), mv: Move) -> Option<(usize, usize)> {
        let (dr, dc) = mv.delta();
        let r = cell.0.checked_add_signed(dr)?;
        let c = cell.1.checked_add_signed(dc)?;
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// Cell reached by `mv`, or `None` if a wall blocks it.
    pub fn walk(&self, cell: (usize, usize), mv: Move) -> Option<(usize, usize)> {
        if self.has_wall(cell, mv) {
            None
        } else {
            self.neighbor(cell, mv)
        }
    }

    /// Removes the wall between `cell` and its neighbour in direction `mv`.
    pub fn open(&mut self, cell: (usize, usize), mv: Move) -> Result<()> {
        let next = self
            .neighbor(cell, mv)
            .ok_or_else(|| Error::contract("cannot open an outer wall"))?;
        self.walls[cell.0][cell.1] &= !mv.wall();
        self.walls[next.0][next.1] &= !mv.opposite().wall();
        Ok(())
    }

    /// Interior walls that are still closed, each listed once as
    /// `(cell, South)` or `(cell, East)`.
    pub fn closed_interior_walls(&self) -> Vec<((usize, usize), Move)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if r + 1 < self.rows && self.has_wall((r, c), Move::South) {
                    out.push(((r, c), Move::South));
                }
                if c + 1 < self.cols && self.has_wall((r, c), Move::East) {
                    out.push(((r, c), Move::East));
                }
            }
        }
        out
    }

    /// Checks boundary walls, wall symmetry and start–goal connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.walls.len() != self.rows {
            return Err(Error::Config("maze grid is empty or ragged".into()));
        }
        if self.walls.iter().any(|row| row.len() != self.cols) {
            return Err(Error::Config("maze grid is ragged".into()));
        }
        for cell in [self.start, self.goal] {
            if cell.0 >= self.rows || cell.1 >= self.cols {
                return Err(Error::Config(format!("cell {cell:?} outside the maze")));
            }
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.walls[r][c] > 15 {
                    return Err(Error::Config(format!("bad wall mask at ({r},{c})")));
                }
                for mv in Move::ALL {
                    match self.neighbor((r, c), mv) {
                        None if !self.has_wall((r, c), mv) => {
                            return Err(Error::Config(format!("open outer wall at ({r},{c})")));
                        }
                        Some(n) if self.has_wall((r, c), mv) != self.has_wall(n, mv.opposite()) => {
                            return Err(Error::Config(format!(
                                "asymmetric wall between ({r},{c}) and {n:?}"
                            )));
                        }
                        _ => {}
                    }
                }
            }
        }
        if shortest_path_len(self).is_none() {
            return Err(Error::Config("goal unreachable from start".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("maze serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let maze: Maze = serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        maze.validate()?;
        Ok(maze)
    }
}

/// Perfect maze by randomized depth-first carving from the start cell,
/// followed by removing `extra_openings` further interior walls.
pub fn generate_maze(size: usize, seed: u64, extra_openings: usize) -> Maze {
    let mut rng = seeded(seed);
    let mut maze = Maze::closed(size, size);
    let mut visited = vec![vec![false; size]; size];
    let mut stack = vec![(0usize, 0usize)];
    visited[0][0] = true;
    while let Some(&cell) = stack.last() {
        let options: Vec<Move> = Move::ALL
            .into_iter()
            .filter(|&mv| {
                maze.neighbor(cell, mv)
                    .is_some_and(|(r, c)| !visited[r][c])
            })
            .collect();
        match options.choose(&mut rng) {
            Some(&mv) => {
                let next = maze.neighbor(cell, mv).expect("filtered to in-bounds");
                maze.open(cell, mv).expect("interior wall");
                visited[next.0][next.1] = true;
                stack.push(next);
            }
            None => {
                stack.pop();
            }
        }
    }
    for _ in 0..extra_openings {
        let walls = maze.closed_interior_walls();
        if walls.is_empty() {
            break;
        }
        let (cell, mv) = walls[rng.gen_range(0..walls.len())];
        maze.open(cell, mv).expect("interior wall");
    }
    maze
}

/// Walking distance from every cell to `target`; `None` if unreachable.
pub fn bfs_distances(maze: &Maze, target: (usize, usize)) -> Vec<Vec<Option<usize>>> {
    let mut dist = vec![vec![None; maze.cols]; maze.rows];
    dist[target.0][target.1] = Some(0);
    let mut queue = VecDeque::from([target]);
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.0][cell.1].expect("queued cells have distances");
        for mv in Move::ALL {
            if let Some(n) = maze.walk(cell, mv) {
                if dist[n.0][n.1].is_none() {
                    dist[n.0][n.1] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
    }
    dist
}

pub fn shortest_path_len(maze: &Maze) -> Option<usize> {
    bfs_distances(maze, maze.goal)[maze.start.0][maze.start.1]
}

/// Number of distinct shortest start–goal paths.
pub fn count_shortest_paths(maze: &Maze) -> u64 {
    let dist = bfs_distances(maze, maze.goal);
    let Some(total) = dist[maze.start.0][maze.start.1] else {
        return 0;
    };
    // ways[cell] = number of shortest paths from cell to goal
    let mut cells: Vec<(usize, usize)> = (0..maze.rows)
        .flat_map(|r| (0..maze.cols).map(move |c| (r, c)))
        .filter(|&(r, c)| dist[r][c].is_some_and(|d| d <= total))
        .collect();
    cells.sort_by_key(|&(r, c)| dist[r][c]);
    let mut ways = vec![vec![0u64; maze.cols]; maze.rows];
    for (r, c) in cells {
        let d = dist[r][c].expect("filtered");
        ways[r][c] = if d == 0 {
            1
        } else {
            Move::ALL
                .into_iter()
                .filter_map(|mv| maze.walk((r, c), mv))
                .filter(|n| dist[n.0][n.1] == Some(d - 1))
                .map(|n| ways[n.0][n.1])
                .sum()
        };
    }
    ways[maze.start.0][maze.start.1]
}

/// Three stacked `rows × cols` channels, flattened channel-major: the wall
/// mask of each cell scaled to `[0, 1]`, the agent one-hot and the goal
/// one-hot.
pub fn encode_maze(maze: &Maze, agent: (usize, usize)) -> Vec<f64> {
    let n = maze.cells();
    let mut v = vec![0.0; 3 * n];
    for r in 0..maze.rows {
        for c in 0..maze.cols {
            v[r * maze.cols + c] = f64::from(maze.walls[r][c]) / 15.0;
        }
    }
    v[n + agent.0 * maze.cols + agent.1] = 1.0;
    v[2 * n + maze.goal.0 * maze.cols + maze.goal.1] = 1.0;
    v
}

/// Decoded maze observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeObservation {
    pub maze: Maze,
    pub agent: (usize, usize),
}

impl MazeObservation {
    pub fn encoded(&self) -> Vec<f64> {
        encode_maze(&self.maze, self.agent)
    }

    /// Inverse of [`encode_maze`] for a square maze of side `size`.
    pub fn decode(size: usize, v: &[f64]) -> Result<Self> {
        let n = size * size;
        if v.len() != 3 * n {
            return Err(Error::Dimension {
                op: "maze decode",
                left: vec![v.len()],
                right: vec![3, size, size],
            });
        }
        let one_hot = |chan: &[f64]| -> Result<(usize, usize)> {
            let hot: Vec<usize> = (0..n).filter(|&i| chan[i] > 0.5).collect();
            match hot[..] {
                [i] => Ok((i / size, i % size)),
                _ => Err(Error::contract("maze channel is not one-hot")),
            }
        };
        let agent = one_hot(&v[n..2 * n])?;
        let goal = one_hot(&v[2 * n..])?;
        let walls = (0..size)
            .map(|r| {
                (0..size)
                    .map(|c| (v[r * size + c] * 15.0).round() as u8)
                    .collect()
            })
            .collect();
        Ok(Self {
            maze: Maze {
                rows: size,
                cols: size,
                walls,
                start: (0, 0),
                goal,
            },
            agent,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MazeConfig {
    pub size: usize,
    pub extra_openings: usize,
    /// Each step costs `step_penalty / cells`; reaching the goal pays +1.
    pub step_penalty: f64,
    /// Episode cap as a multiple of the cell count.
    pub step_cap_factor: usize,
}

impl MazeConfig {
    pub fn for_size(size: usize) -> Self {
        Self {
            size,
            extra_openings: if size > 3 { 2 } else { 0 },
            step_penalty: 0.1,
            step_cap_factor: 10,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.step_cap_factor * self.size * self.size
    }
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub config: MazeConfig,
    maze: Maze,
    agent: (usize, usize),
    steps: usize,
    done: bool,
}

impl MazeEnv {
    pub fn new(config: MazeConfig) -> Self {
        let maze = Maze::closed(config.size, config.size);
        Self {
            config,
            maze,
            agent: (0, 0),
            steps: 0,
            done: false,
        }
    }

    /// Starts an episode on a given layout.
    pub fn reset_with(&mut self, maze: Maze) -> Result<Vec<f64>> {
        if maze.rows != self.config.size || maze.cols != self.config.size {
            return Err(Error::Dimension {
                op: "maze reset",
                left: vec![maze.rows, maze.cols],
                right: vec![self.config.size, self.config.size],
            });
        }
        self.agent = maze.start;
        self.maze = maze;
        self.steps = 0;
        self.done = false;
        Ok(self.observation())
    }

    pub fn maze(&self) -> &Maze {
        &self.maze
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn snapshot(&self) -> MazeObservation {
        MazeObservation {
            maze: self.maze.clone(),
            agent: self.agent,
        }
    }
}

impl Environment for MazeEnv {
    fn id(&self) -> EnvId {
        EnvId::Maze(self.config.size)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let maze = generate_maze(self.config.size, seed, self.config.extra_openings);
        self.reset_with(maze).expect("generated maze has the configured size")
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_step(self.id(), self.done, action)?;
        let mv = Move::from_action(action).expect("checked action range");
        if let Some(next) = self.maze.walk(self.agent, mv) {
            self.agent = next;
        }
        self.steps += 1;
        let at_goal = self.agent == self.maze.goal;
        let mut reward = -self.config.step_penalty / self.maze.cells() as f64;
        if at_goal {
            reward += 1.0;
        }
        self.done = at_goal || self.steps >= self.config.max_steps();
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            steps_elapsed: self.steps,
        })
    }

    fn observation(&self) -> Vec<f64> {
        encode_maze(&self.maze, self.agent)
    }

    fn steps_elapsed(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn goal_achieved(&self) -> Result<bool> {
        check_finished(self.id(), self.done)?;
        Ok(self.agent == self.maze.goal)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn passages(maze: &Maze) -> usize {
        let interior = maze.rows * (maze.cols - 1) + maze.cols * (maze.rows - 1);
        interior - maze.closed_interior_walls().len()
    }

    #[test]
    fn reset_places_agent_top_left_and_goal_bottom_right() {
        let mut env = MazeEnv::new(MazeConfig::for_size(3));
        env.reset(0);
        assert_eq!(env.agent(), (0, 0));
        assert_eq!(env.maze().goal, (2, 2));
    }

    #[test]
    fn walking_into_a_wall_stays_put() {
        let mut env = MazeEnv::new(MazeConfig::for_size(3));
        env.reset(0);
        // the outer north wall always blocks
        let r = env.step(Move::North.action()).unwrap();
        assert_eq!(env.agent(), (0, 0));
        assert!(!r.done);
        assert_eq!(r.steps_elapsed, 1);
    }

    #[test]
    fn encoding_shape_and_one_hot_moves() {
        let mut env = MazeEnv::new(MazeConfig::for_size(3));
        let before = env.reset(5);
        assert_eq!(before.len(), 27);
        assert!(before.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(before[9..18].iter().sum::<f64>(), 1.0);
        let mv = Move::ALL
            .into_iter()
            .find(|&m| env.maze().walk((0, 0), m).is_some())
            .unwrap();
        let after = env.step(mv.action()).unwrap().observation;
        let changed = (9..18).filter(|&i| before[i] != after[i]).count();
        assert_eq!(changed, 2);
        assert_eq!(before[..9], after[..9]);
        assert_eq!(before[18..], after[18..]);
    }

    #[test]
    fn decode_inverts_encode() {
        let maze = generate_maze(5, 12, 2);
        let obs = MazeObservation {
            maze: maze.clone(),
            agent: (3, 1),
        };
        let back = MazeObservation::decode(5, &obs.encoded()).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn perfect_maze_is_a_spanning_tree() {
        for seed in 0..20 {
            let m = generate_maze(5, seed, 0);
            assert_eq!(passages(&m), 24);
            assert_eq!(count_shortest_paths(&m), 1);
            m.validate().unwrap();
        }
    }

    #[test]
    fn extra_openings_add_passages() {
        let m = generate_maze(5, 3, 2);
        assert_eq!(passages(&m), 26);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_maze(10, 77, 2), generate_maze(10, 77, 2));
        assert_ne!(generate_maze(10, 77, 2), generate_maze(10, 78, 2));
    }

    #[test]
    fn optimal_path_reward_telescopes() {
        for penalty in [0.1, 1.0] {
            let mut cfg = MazeConfig::for_size(5);
            cfg.step_penalty = penalty;
            let mut env = MazeEnv::new(cfg);
            env.reset(9);
            let dist = bfs_distances(env.maze(), env.maze().goal);
            let len = dist[0][0].unwrap();
            let mut total = 0.0;
            while !env.is_done() {
                let here = env.agent();
                let mv = Move::ALL
                    .into_iter()
                    .find(|&m| {
                        env.maze()
                            .walk(here, m)
                            .is_some_and(|n| dist[n.0][n.1] < dist[here.0][here.1])
                    })
                    .unwrap();
                total += env.step(mv.action()).unwrap().reward;
            }
            assert!(env.goal_achieved().unwrap());
            assert!((total - (1.0 - penalty * len as f64 / 25.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn failed_episode_hits_the_cap() {
        let mut env = MazeEnv::new(MazeConfig::for_size(3));
        env.reset(0);
        let mut total = 0.0;
        while !env.is_done() {
            total += env.step(Move::North.action()).unwrap().reward;
        }
        assert_eq!(env.steps_elapsed(), 90);
        assert!(!env.goal_achieved().unwrap());
        assert!((total + 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = generate_maze(5, 1, 2);
        assert_eq!(Maze::from_json(&m.to_json()).unwrap(), m);
        let mut broken = m.clone();
        broken.walls[0][0] &= !NORTH;
        assert!(Maze::from_json(&broken.to_json()).is_err());
        assert!(matches!(
            Maze::from_json("{\"rows\": 3,\n \"cols\": }"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn path_count_on_open_grid() {
        // 3×3 with no interior walls: C(4,2) monotone paths
        let mut m = Maze::closed(3, 3);
        for (cell, mv) in m.closed_interior_walls() {
            m.open(cell, mv).unwrap();
        }
        assert_eq!(count_shortest_paths(&m), 6);
        assert_eq!(shortest_path_len(&m), Some(4));
    }

    proptest! {
        #[test]
        fn generated_mazes_are_valid(size in prop::sample::select(vec![3usize, 5, 10]),
                                     seed in any::<u64>(),
                                     extra in 0usize..4) {
            let m = generate_maze(size, seed, extra);
            prop_assert!(m.validate().is_ok());
            prop_assert_eq!(m.start, (0, 0));
            prop_assert_eq!(m.goal, (size - 1, size - 1));
        }
    }
}
