//! Traffic junction: two one-way roads crossing at a single cell.
//!
//! Route 0 runs eastbound along the middle row, route 1 southbound along the
//! middle column. Cars wait at their route's entry point until their spawn
//! time, then drive with `gas` (advance one cell) or `brake` (stay). Two cars
//! in the same cell collide and are removed; a car that drives past the last
//! cell exits.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_actions, manhattan, DistanceTable, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng64};
use rand::Rng;

pub const GAS: usize = 0;
pub const BRAKE: usize = 1;

/// Visible-car slots in an observation.
pub const OTHER_SLOTS: usize = 4;
const OTHER_WIDTH: usize = 4;
const OWN_FEATURES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficJunctionConfig {
    pub n_cars: usize,
    pub size: usize,
    pub horizon: usize,
    /// Manhattan visibility radius.
    pub vision: usize,
    /// Spawn gap between consecutive cars of one route, inclusive range.
    pub min_gap: usize,
    pub max_gap: usize,
    /// First spawn of each route is drawn from `0..=max_offset`.
    pub max_offset: usize,
    /// Cars within this Manhattan radius of the junction cell count as being
    /// at the intersection and pay the time penalty.
    pub intersection_zone: usize,
    pub collision_reward: f64,
    pub time_penalty: f64,
}

impl Default for TrafficJunctionConfig {
    fn default() -> Self {
        Self {
            n_cars: 10,
            size: 14,
            horizon: 40,
            vision: 1,
            min_gap: 2,
            max_gap: 4,
            max_offset: 2,
            intersection_zone: 14,
            collision_reward: -10.0,
            time_penalty: -0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarStatus {
    Waiting,
    Active,
    Exited,
    Crashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Car {
    pub route: usize,
    pub status: CarStatus,
    /// Cell index along the route, `0..size`.
    pub progress: usize,
    pub prev_action: usize,
    pub spawn_time: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub cars: Vec<Car>,
    pub t: usize,
    /// Colliding pairs accumulated over the episode.
    pub collisions: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficJunction {
    config: TrafficJunctionConfig,
}

impl TrafficJunction {
    pub fn new(config: TrafficJunctionConfig) -> Result<Self> {
        let c = &config;
        if c.n_cars < 2 {
            return Err(Error::InvalidConfig("traffic junction needs at least 2 cars".into()));
        }
        if c.size < 3 {
            return Err(Error::InvalidConfig("traffic junction grid must be at least 3x3".into()));
        }
        if c.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if c.min_gap == 0 || c.min_gap > c.max_gap {
            return Err(Error::InvalidConfig("spawn gaps need 1 <= min_gap <= max_gap".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &TrafficJunctionConfig {
        &self.config
    }

    fn junction_index(&self) -> usize {
        self.config.size / 2
    }

    /// Grid cell of `progress` along `route`.
    pub fn cell(&self, route: usize, progress: usize) -> (i64, i64) {
        let j = self.junction_index() as i64;
        let p = progress as i64;
        if route == 0 {
            (p, j)
        } else {
            (j, p)
        }
    }

    pub fn junction(&self) -> (i64, i64) {
        let j = self.junction_index() as i64;
        (j, j)
    }

    fn car_cell(&self, car: &Car) -> (i64, i64) {
        self.cell(car.route, car.progress)
    }

    fn occupied(&self, state: &TrafficState, cell: (i64, i64)) -> bool {
        state
            .cars
            .iter()
            .any(|c| c.status == CarStatus::Active && self.car_cell(c) == cell)
    }

    fn ahead_cell(&self, car: &Car) -> Option<(i64, i64)> {
        if car.progress + 1 < self.config.size {
            Some(self.cell(car.route, car.progress + 1))
        } else {
            None
        }
    }

    pub fn at_approach(&self, car: &Car) -> bool {
        car.status == CarStatus::Active && car.progress + 1 == self.junction_index()
    }

    pub fn in_junction(&self, car: &Car) -> bool {
        car.status == CarStatus::Active && car.progress == self.junction_index()
    }

    fn in_zone(&self, car: &Car) -> bool {
        car.status == CarStatus::Active
            && manhattan(self.car_cell(car), self.junction()) <= self.config.intersection_zone as f64
    }

    /// Largest number of colliding pairs one transition can produce: a cell
    /// holds at most a stationary and an arriving car per route, so the
    /// junction holds four and every other cell two.
    fn max_pairs(&self) -> usize {
        let n = self.config.n_cars;
        if n <= 4 {
            n * (n - 1) / 2
        } else {
            6 + (n - 4) / 2
        }
    }

    /// Due cars enter their route's first cell even when it is occupied.
    fn try_spawn(&self, state: &mut TrafficState) {
        for route in 0..2 {
            let next = state
                .cars
                .iter()
                .position(|c| c.route == route && c.status == CarStatus::Waiting);
            if let Some(k) = next {
                if state.cars[k].spawn_time <= state.t {
                    let car = &mut state.cars[k];
                    car.status = CarStatus::Active;
                    car.progress = 0;
                    car.prev_action = GAS;
                }
            }
        }
    }

    /// Oracle policy with global knowledge: keep a gap to the car ahead and
    /// let route 0 pass the junction first.
    pub fn scripted_action(&self, state: &TrafficState, i: usize) -> usize {
        let car = &state.cars[i];
        if car.status != CarStatus::Active {
            return GAS;
        }
        if let Some(ahead) = self.ahead_cell(car) {
            if self.occupied(state, ahead) {
                return BRAKE;
            }
        }
        if car.route == 1 && self.at_approach(car) {
            let crossing = state
                .cars
                .iter()
                .any(|c| c.route == 0 && (self.at_approach(c) || self.in_junction(c)));
            if crossing {
                return BRAKE;
            }
        }
        GAS
    }
}

impl Environment for TrafficJunction {
    type State = TrafficState;

    fn name(&self) -> &'static str {
        "traffic_junction"
    }

    fn n_agents(&self) -> usize {
        self.config.n_cars
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        OWN_FEATURES + OTHER_SLOTS * OTHER_WIDTH
    }

    fn attr_dim(&self) -> usize {
        7
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn visibility_radius(&self) -> f64 {
        self.config.vision as f64
    }

    fn reward_floor(&self) -> f64 {
        self.config.collision_reward.min(0.0) * self.max_pairs() as f64
            + self.config.time_penalty.min(0.0) * self.config.n_cars as f64
    }

    fn reward_ceiling(&self) -> f64 {
        0.0
    }

    /// Route progress summed over cars, one unit per full route.
    fn potential(&self, state: &TrafficState) -> f64 {
        let size = self.config.size as f64;
        state
            .cars
            .iter()
            .map(|c| match c.status {
                CarStatus::Waiting => 0.0,
                CarStatus::Exited => 1.0,
                _ => c.progress as f64 / size,
            })
            .sum()
    }

    fn reset(&self, seed: u64) -> TrafficState {
        let mut rng: Rng64 = stream_rng(seed, stream::ENV);
        let n = self.config.n_cars;
        let mut cars: Vec<Car> = (0..n)
            .map(|k| Car {
                route: k % 2,
                status: CarStatus::Waiting,
                progress: 0,
                prev_action: BRAKE,
                spawn_time: 0,
            })
            .collect();
        for route in 0..2 {
            let mut t = rng.gen_range(0..=self.config.max_offset);
            for car in cars.iter_mut().filter(|c| c.route == route) {
                car.spawn_time = t;
                t += rng.gen_range(self.config.min_gap..=self.config.max_gap);
            }
        }
        let mut state = TrafficState {
            cars,
            t: 0,
            collisions: 0,
            terminal: false,
        };
        self.try_spawn(&mut state);
        state
    }

    fn step(&self, state: &TrafficState, actions: &[usize]) -> Result<StepOutcome<TrafficState>> {
        if state.terminal {
            return Err(Error::Terminated);
        }
        check_actions(actions, self.n_agents(), 2)?;
        let size = self.config.size;
        let mut next = state.clone();
        next.t += 1;
        for (car, &a) in next.cars.iter_mut().zip(actions) {
            if car.status != CarStatus::Active {
                continue;
            }
            car.prev_action = a;
            if a == GAS {
                car.progress += 1;
                if car.progress >= size {
                    car.progress = size - 1;
                    car.status = CarStatus::Exited;
                }
            }
        }
        self.try_spawn(&mut next);

        let n = self.n_agents();
        let mut agent_rewards = vec![0.0; n];
        let mut pairs = 0;
        let mut crashed = vec![false; n];
        for i in 0..n {
            if next.cars[i].status != CarStatus::Active || crashed[i] {
                continue;
            }
            let cell = self.car_cell(&next.cars[i]);
            let group: Vec<usize> = (i..n)
                .filter(|&j| next.cars[j].status == CarStatus::Active && self.car_cell(&next.cars[j]) == cell)
                .collect();
            if group.len() >= 2 {
                let k = group.len();
                pairs += k * (k - 1) / 2;
                for &j in &group {
                    crashed[j] = true;
                    agent_rewards[j] += self.config.collision_reward * (k - 1) as f64 / 2.0;
                }
            }
        }
        for (car, &c) in next.cars.iter_mut().zip(&crashed) {
            if c {
                car.status = CarStatus::Crashed;
            }
        }
        next.collisions += pairs;

        let mut in_zone = 0;
        for (car, r) in next.cars.iter().zip(agent_rewards.iter_mut()) {
            if self.in_zone(car) {
                in_zone += 1;
                *r += self.config.time_penalty;
            }
        }
        let team_reward =
            self.config.collision_reward * pairs as f64 + self.config.time_penalty * in_zone as f64;

        let all_done = next
            .cars
            .iter()
            .all(|c| matches!(c.status, CarStatus::Exited | CarStatus::Crashed));
        next.terminal = all_done || next.t >= self.config.horizon;
        let win = if next.terminal {
            Some(next.collisions == 0 && next.cars.iter().all(|c| c.status == CarStatus::Exited))
        } else {
            None
        };
        Ok(StepOutcome {
            state: next,
            team_reward,
            agent_rewards,
            win,
        })
    }

    fn observe(&self, state: &TrafficState) -> Vec<Vec<f64>> {
        let size = self.config.size;
        let vision = self.config.vision.max(1) as f64;
        (0..self.n_agents())
            .map(|i| {
                let car = &state.cars[i];
                let mut o = vec![0.0; self.obs_dim()];
                o[1] = (car.route == 0) as u8 as f64;
                o[2] = (car.route == 1) as u8 as f64;
                match car.status {
                    CarStatus::Active => {
                        o[0] = 1.0;
                        o[3] = self.at_approach(car) as u8 as f64;
                        o[4] = self.in_junction(car) as u8 as f64;
                        o[5] = car.progress as f64 / (size - 1) as f64;
                        o[6] = (car.prev_action == GAS) as u8 as f64;
                        o[7] = self.ahead_cell(car).map_or(0.0, |c| self.occupied(state, c) as u8 as f64);
                        let visible = self.visible(state, i);
                        o[9] = visible.len() as f64 / OTHER_SLOTS as f64;
                        let me = self.car_cell(car);
                        let mut others: Vec<(f64, usize)> = visible
                            .iter()
                            .map(|&j| (manhattan(me, self.car_cell(&state.cars[j])), j))
                            .collect();
                        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                        for (slot, &(_, j)) in others.iter().take(OTHER_SLOTS).enumerate() {
                            let other = self.car_cell(&state.cars[j]);
                            let base = OWN_FEATURES + slot * OTHER_WIDTH;
                            o[base] = 1.0;
                            o[base + 1] = (other.0 - me.0) as f64 / vision;
                            o[base + 2] = (other.1 - me.1) as f64 / vision;
                            o[base + 3] = (state.cars[j].route != car.route) as u8 as f64;
                        }
                    }
                    CarStatus::Waiting => o[8] = 1.0,
                    CarStatus::Exited | CarStatus::Crashed => {}
                }
                o
            })
            .collect()
    }

    fn distances(&self, state: &TrafficState) -> DistanceTable {
        let off_grid = 2.0 * self.config.size as f64;
        DistanceTable::from_fn(self.n_agents(), |i, j| {
            let (a, b) = (&state.cars[i], &state.cars[j]);
            if a.status == CarStatus::Active && b.status == CarStatus::Active {
                manhattan(self.car_cell(a), self.car_cell(b))
            } else {
                off_grid
            }
        })
    }

    fn attributes(&self, state: &TrafficState) -> Vec<Vec<f64>> {
        let scale = (self.config.size - 1) as f64;
        state
            .cars
            .iter()
            .map(|car| {
                let (x, y) = self.car_cell(car);
                let active = car.status == CarStatus::Active;
                vec![
                    x as f64 / scale,
                    y as f64 / scale,
                    (car.route == 0) as u8 as f64,
                    (car.route == 1) as u8 as f64,
                    active as u8 as f64,
                    (active && car.prev_action == GAS) as u8 as f64,
                    car.progress as f64 / scale,
                ]
            })
            .collect()
    }

    fn positions(&self, state: &TrafficState) -> Vec<(i64, i64)> {
        state.cars.iter().map(|c| self.car_cell(c)).collect()
    }

    fn time(&self, state: &TrafficState) -> usize {
        state.t
    }

    fn is_terminal(&self, state: &TrafficState) -> bool {
        state.terminal
    }

    fn active(&self, state: &TrafficState) -> Vec<bool> {
        state.cars.iter().map(|c| c.status == CarStatus::Active).collect()
    }

    fn visible(&self, state: &TrafficState, i: usize) -> Vec<usize> {
        if state.cars[i].status != CarStatus::Active {
            return Vec::new();
        }
        let me = self.car_cell(&state.cars[i]);
        let r = self.config.vision as f64;
        (0..self.n_agents())
            .filter(|&j| {
                j != i
                    && state.cars[j].status == CarStatus::Active
                    && manhattan(me, self.car_cell(&state.cars[j])) <= r
            })
            .collect()
    }
}
