//! Extended social force model: driving, repulsion, car-following, reactive stop,
//! longitudinal avoidance and explicit Euler integration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::StrategyKind;
use crate::geometry::{angle_between_deg, directed_angle_deg, signed_area, OrientedRect, Vec2};
use crate::params::SfmParams;
use crate::scalar::{lit, Scalar};
use crate::scenario::{AgentKind, InputProfile, Obstacle};

#[derive(Debug, Error, PartialEq)]
pub enum ForceError {
    #[error("non-finite acceleration for agent {0}")]
    NonFinite(u32),
    #[error("time step must be positive")]
    BadStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionMode {
    FreeFlow,
    Follow,
    Stop,
    GameAction(StrategyKind),
}

/// Movement directive produced by the reactive rules or by a game strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Directive<T> {
    FreeFlow,
    SteerToward(Vec2<T>),
    /// Slow down to the given speed within one step.
    Decelerate(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T> {
    pub id: u32,
    pub kind: AgentKind,
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    /// Unit heading; retained while the agent is at rest.
    pub heading: Vec2<T>,
    pub radius: T,
    pub profile: InputProfile<T>,
    pub mode: MotionMode,
    pub waypoints: Vec<Vec2<T>>,
    pub next_waypoint: usize,
    /// Temporary goal from longitudinal avoidance.
    pub temp_goal: Option<Vec2<T>>,
}

impl<T: Scalar> AgentState<T> {
    /// Agent at rest at its start, heading toward its destination.
    pub fn at_rest(id: u32, kind: AgentKind, radius: T, profile: InputProfile<T>) -> Self {
        let heading = (profile.destination - profile.start)
            .normalized()
            .unwrap_or(Vec2::new(T::one(), T::zero()));
        Self {
            id,
            kind,
            position: profile.start,
            velocity: Vec2::zero(),
            heading,
            radius,
            profile,
            mode: MotionMode::FreeFlow,
            waypoints: vec![profile.destination],
            next_waypoint: 0,
            temp_goal: None,
        }
    }

    pub fn with_velocity(mut self, v: Vec2<T>) -> Self {
        self.velocity = v;
        if let Some(h) = v.normalized() {
            self.heading = h;
        }
        self
    }

    pub fn speed(&self) -> T {
        self.velocity.norm()
    }

    /// Next unvisited waypoint, or the destination once all are consumed.
    pub fn next_waypoint(&self) -> Vec2<T> {
        self.waypoints
            .get(self.next_waypoint)
            .copied()
            .unwrap_or(self.profile.destination)
    }

    /// Speed limit: 2·v_d for pedestrians, 1.2·v_d for cars.
    pub fn speed_cap(&self) -> T {
        let factor = match self.kind {
            AgentKind::Pedestrian => lit(2.0),
            AgentKind::Car => lit(1.2),
        };
        self.profile.desired_speed * factor
    }
}

/// `(v_d·unit(target − x) − v) / τ`.
pub fn driving_force_toward<T: Scalar>(state: &AgentState<T>, target: Vec2<T>, desired_speed: T, tau: T) -> Vec2<T> {
    let desired = (target - state.position)
        .normalized()
        .map(|e| e * desired_speed)
        .unwrap_or_else(Vec2::zero);
    (desired - state.velocity) / tau
}

/// Driving force toward the next waypoint at the agent's desired speed.
pub fn driving_force<T: Scalar>(state: &AgentState<T>, params: &SfmParams<T>) -> Vec2<T> {
    driving_force_toward(state, state.next_waypoint(), state.profile.desired_speed, params.tau)
}

/// Field-of-view weight `λ + (1 − λ)(1 + cos φ)/2` for φ in degrees.
pub fn anisotropy<T: Scalar>(phi_deg: T, lambda: T) -> T {
    lambda + (T::one() - lambda) * (T::one() + phi_deg.to_radians().cos()) / lit(2.0)
}

/// Exponential repulsion on `i` from `j`, given the unit vector pointing from `j` to `i`.
fn repulsion_along<T: Scalar>(i: &AgentState<T>, strength: T, sigma: T, d: T, n: Vec2<T>, lambda: T, radius_sum: T) -> Vec2<T> {
    let phi = angle_between_deg(i.heading, -n);
    n * (strength * ((radius_sum - d) / sigma).exp() * anisotropy(phi, lambda))
}

/// Repulsion exerted on `i` by `j`. Zero beyond the view range and for car-car pairs.
/// Coincident agents are pushed along the given fallback normal.
pub fn agent_repulsion_with_fallback<T: Scalar>(
    i: &AgentState<T>,
    j: &AgentState<T>,
    params: &SfmParams<T>,
    fallback_normal: Vec2<T>,
) -> Vec2<T> {
    let Some((strength, sigma)) = params.pair(i.kind, j.kind) else {
        return Vec2::zero();
    };
    let diff = i.position - j.position;
    let d = diff.norm();
    if d > params.view_range {
        return Vec2::zero();
    }
    let n = diff.normalized().unwrap_or(fallback_normal);
    repulsion_along(i, strength, sigma, d, n, params.lambda, i.radius + j.radius)
}

/// Repulsion on `i` from `j`; a coincident pair falls back to pushing `i` backwards.
pub fn agent_repulsion<T: Scalar>(i: &AgentState<T>, j: &AgentState<T>, params: &SfmParams<T>) -> Vec2<T> {
    agent_repulsion_with_fallback(i, j, params, -i.heading)
}

/// Nearest boundary point of an obstacle and the outward normal there.
fn nearest_on_obstacle<T: Scalar>(p: Vec2<T>, o: &Obstacle<T>) -> Option<(Vec2<T>, Vec2<T>, T)> {
    let ccw = o.is_polygon() && signed_area(&o.vertices) > T::zero();
    let mut best: Option<(Vec2<T>, Vec2<T>, T)> = None;
    for (a, b) in o.edges() {
        let q = crate::geometry::closest_point_on_segment(p, a, b);
        let d = p.distance(q);
        if best.map_or(true, |(_, _, bd)| d < bd) {
            let along = (b - a).normalized().unwrap_or(Vec2::new(T::one(), T::zero()));
            // outward normal of a counter-clockwise polygon is the right-hand perpendicular
            let normal = if o.is_polygon() && ccw { -along.perp() } else { along.perp() };
            best = Some((q, normal, d));
        }
    }
    best
}

/// `U·exp((r_i − d_iW)/γ)` along the unit vector from the nearest obstacle point to `i`.
pub fn obstacle_repulsion<T: Scalar>(i: &AgentState<T>, obstacle: &Obstacle<T>, params: &SfmParams<T>) -> Vec2<T> {
    let Some((q, normal, mut d)) = nearest_on_obstacle(i.position, obstacle) else {
        return Vec2::zero();
    };
    let mut n = (i.position - q).normalized().unwrap_or(normal);
    if obstacle.is_polygon() && crate::geometry::point_strictly_inside_polygon(i.position, &obstacle.vertices) {
        n = -n;
        d = -d;
    }
    n * (params.obstacle_strength * ((i.radius - d) / params.gamma).exp())
}

/// Car speed after one deceleration step; the decrement never exceeds half the speed.
pub fn car_decelerated_speed<T: Scalar>(speed: T, distance: T, d_min: T) -> T {
    let half = speed / lit(2.0);
    let rate = if distance <= d_min {
        half
    } else {
        (speed * speed / (distance - d_min)).min(half)
    };
    speed - rate
}

/// Car-following rule toward the designated leader `j`.
pub fn car_following<T: Scalar>(i: &AgentState<T>, leader: &AgentState<T>, params: &SfmParams<T>) -> Directive<T> {
    let d = i.position.distance(leader.position);
    let half = i.speed() / lit(2.0);
    match leader.velocity.normalized() {
        Some(dir) if d >= params.d_min_cc => Directive::SteerToward(i.position + dir * params.d_min_cc),
        _ => Directive::Decelerate(half),
    }
}

/// Frontal corridor of a car: length `D_min(PC)`, width `car_width + 2·r_ped`.
pub fn frontal_corridor<T: Scalar>(car: &AgentState<T>, params: &SfmParams<T>, car_width: T, ped_radius: T) -> OrientedRect<T> {
    let half = lit::<T>(0.5);
    OrientedRect {
        center: car.position + car.heading * (params.d_min_pc * half),
        heading: car.heading,
        length: params.d_min_pc,
        width: car_width + ped_radius * lit(2.0),
    }
}

/// Decelerate when a pedestrian stands inside the car's frontal corridor.
pub fn reactive_stop<T: Scalar>(
    car: &AgentState<T>,
    peds: &[&AgentState<T>],
    params: &SfmParams<T>,
    car_width: T,
) -> Option<Directive<T>> {
    let mut nearest: Option<T> = None;
    for p in peds.iter().filter(|p| p.kind == AgentKind::Pedestrian) {
        let corridor = frontal_corridor(car, params, car_width, p.radius);
        if corridor.distance_to(p.position) == T::zero() {
            let d = car.position.distance(p.position);
            nearest = Some(nearest.map_or(d, |n: T| n.min(d)));
        }
    }
    nearest.map(|d| Directive::Decelerate(car_decelerated_speed(car.speed(), d, params.d_min_pc)))
}

/// Trigger conditions and rotation for the longitudinal interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalEval<T> {
    pub theta: T,
    pub g: T,
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub b: T,
    pub c: T,
    pub rotation: T,
}

pub fn evaluate_longitudinal<T: Scalar>(ped: &AgentState<T>, car: &AgentState<T>) -> LongitudinalEval<T> {
    let n_car_to_ped = (ped.position - car.position).normalized().unwrap_or(car.heading);
    let theta = directed_angle_deg(car.heading, n_car_to_ped);
    let g = ped.heading.dot(car.heading);
    let c1 = theta < lit(2.0) || theta > lit(358.0);
    let c2 = g >= lit(0.99) || g <= lit(-0.99);
    let c3 = theta >= lit(348.0) || theta <= lit(12.0);
    let b = if g <= lit(-0.99) { T::one() } else { lit(1.5) };
    let back = theta >= lit(348.0);
    let c = if back { b * lit(3.0) } else { b * lit(2.2) };
    let rotation = if back { lit(90.0) } else { lit(180.0) };
    LongitudinalEval { theta, g, c1, c2, c3, b, c, rotation }
}

/// Temporary goal for a pedestrian in a front/back interaction with a car.
pub fn longitudinal_avoidance<T: Scalar>(ped: &AgentState<T>, car: &AgentState<T>, params: &SfmParams<T>) -> Option<Vec2<T>> {
    if ped.position.distance(car.position) >= params.d_min_long {
        return None;
    }
    let ev = evaluate_longitudinal(ped, car);
    if !(ev.c1 || (ev.c2 && ev.c3)) {
        return None;
    }
    let f = car.heading * ev.c;
    Some(ped.position + f.rotated_deg(ev.rotation))
}

/// Acceleration of one agent under its prioritized directive. A steering directive
/// replaces the agent's goal but keeps the repulsive terms; a deceleration reaches its
/// target speed over `response_time`. `neighbors` may include the agent itself.
pub fn compose_acceleration<T: Scalar>(
    state: &AgentState<T>,
    neighbors: &[&AgentState<T>],
    obstacles: &[Obstacle<T>],
    params: &SfmParams<T>,
    directive: Directive<T>,
    response_time: T,
) -> Vec2<T> {
    let target = match directive {
        Directive::Decelerate(new_speed) => {
            return (state.heading * new_speed.max(T::zero()) - state.velocity) / response_time;
        }
        Directive::SteerToward(target) => target,
        Directive::FreeFlow => match state.temp_goal {
            Some(goal) if state.kind == AgentKind::Pedestrian && params.w_p > T::zero() => goal,
            _ => state.next_waypoint(),
        },
    };
    let mut a = driving_force_toward(state, target, state.profile.desired_speed, params.tau);
    match state.kind {
        AgentKind::Pedestrian => {
            for o in obstacles {
                a += obstacle_repulsion(state, o, params);
            }
            for j in neighbors.iter().filter(|j| j.id != state.id) {
                a += agent_repulsion(state, j, params);
            }
        }
        AgentKind::Car => {
            if params.w_c > T::zero() {
                for j in neighbors.iter().filter(|j| j.id != state.id && j.kind == AgentKind::Pedestrian) {
                    a += agent_repulsion(state, j, params) * params.w_c;
                }
            }
        }
    }
    a
}

/// One explicit Euler step with the speed cap applied to the new velocity.
pub fn integrate<T: Scalar>(state: &AgentState<T>, acceleration: Vec2<T>, dt: T) -> Result<AgentState<T>, ForceError> {
    if !(dt > T::zero()) {
        return Err(ForceError::BadStep);
    }
    if !acceleration.is_finite() {
        return Err(ForceError::NonFinite(state.id));
    }
    let mut v = state.velocity + acceleration * dt;
    let cap = state.speed_cap();
    let speed = v.norm();
    if speed > cap {
        v = if speed > T::zero() { v * (cap / speed) } else { v };
    }
    let mut next = state.clone();
    next.velocity = v;
    next.position = state.position + v * dt;
    if let Some(h) = v.normalized() {
        next.heading = h;
    }
    if !next.position.is_finite() {
        return Err(ForceError::NonFinite(state.id));
    }
    Ok(next)
}
