//! Calibratable model parameters with per-dataset defaults.

use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Scalar};
use crate::scenario::{AgentKind, DatasetTag};

/// Social-force and safety parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct SfmParams<T> {
    /// Relaxation time τ (s).
    pub tau: T,
    /// Pedestrian-from-pedestrian interaction strength (m²/s²).
    pub strength_pp: T,
    /// Pedestrian-from-car interaction strength (m²/s²).
    pub strength_pc: T,
    /// Car-from-pedestrian interaction strength (m²/s²).
    pub strength_cp: T,
    pub sigma_pp: T,
    /// Range used for both pedestrian-car directions.
    pub sigma_pc: T,
    pub obstacle_strength: T,
    pub gamma: T,
    /// Weight of interactions from behind, in [0, 1].
    pub lambda: T,
    pub view_range: T,
    pub d_min_pc: T,
    pub d_min_cc: T,
    pub d_min_long: T,
    pub s_a: T,
    pub s_c: T,
    pub s_d: T,
    /// Longitudinal-avoidance weight for pedestrians (0 or 1).
    pub w_p: T,
    /// Pedestrian repulsion weight for cars (0 or 1).
    pub w_c: T,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid parameter {name}: {reason}")]
pub struct ParamError {
    pub name: &'static str,
    pub reason: &'static str,
}

impl<T: Scalar> SfmParams<T> {
    /// Universal calibrated values for a dataset. Synthetic scenarios use the HBS values.
    pub fn for_dataset(tag: DatasetTag) -> Self {
        let (pp, pc, cp, s_pp, s_pc, lambda, s_d, vr, dmin, w_p, w_c) = match tag {
            DatasetTag::Hbs | DatasetTag::Synthetic => {
                (0.1, 11.7, 0.0, 0.25, 0.91, 0.35, 6.0, 18.4, 7.8, 0.0, 0.0)
            }
            DatasetTag::Dut => (0.1, 4.5, 2.27, 0.23, 0.27, 0.41, 9.01, 10.0, 8.0, 0.0, 1.0),
            DatasetTag::Citr => (0.1, 1.5, 0.0, 0.18, 0.69, 0.13, 7.0, 12.3, 7.0, 1.0, 0.0),
        };
        Self {
            tau: lit(0.5),
            strength_pp: lit(pp),
            strength_pc: lit(pc),
            strength_cp: lit(cp),
            sigma_pp: lit(s_pp),
            sigma_pc: lit(s_pc),
            obstacle_strength: lit(10.0),
            gamma: lit(0.2),
            lambda: lit(lambda),
            view_range: lit(vr),
            d_min_pc: lit(dmin),
            d_min_cc: lit(8.0),
            d_min_long: lit(10.0),
            s_a: lit(6.0),
            s_c: lit(9.0),
            s_d: lit(s_d),
            w_p: lit(w_p),
            w_c: lit(w_c),
        }
    }

    /// Strength and range acting on an agent of kind `on` from one of kind `from`.
    /// Car-car pairs have no repulsion term.
    pub fn pair(&self, on: AgentKind, from: AgentKind) -> Option<(T, T)> {
        match (on, from) {
            (AgentKind::Pedestrian, AgentKind::Pedestrian) => Some((self.strength_pp, self.sigma_pp)),
            (AgentKind::Pedestrian, AgentKind::Car) => Some((self.strength_pc, self.sigma_pc)),
            (AgentKind::Car, AgentKind::Pedestrian) => Some((self.strength_cp, self.sigma_pc)),
            (AgentKind::Car, AgentKind::Car) => None,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let z = T::zero();
        let all = [
            self.tau, self.strength_pp, self.strength_pc, self.strength_cp, self.sigma_pp,
            self.sigma_pc, self.obstacle_strength, self.gamma, self.lambda, self.view_range,
            self.d_min_pc, self.d_min_cc, self.d_min_long, self.s_a, self.s_c, self.s_d,
            self.w_p, self.w_c,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ParamError { name: "sfm", reason: "non-finite value" });
        }
        if !(self.tau > z) {
            return Err(ParamError { name: "tau", reason: "must be positive" });
        }
        if !(self.sigma_pp > z && self.sigma_pc > z && self.gamma > z) {
            return Err(ParamError { name: "sigma/gamma", reason: "ranges must be positive" });
        }
        if self.strength_pp < z || self.strength_pc < z || self.strength_cp < z || self.obstacle_strength < z {
            return Err(ParamError { name: "strength", reason: "must be non-negative" });
        }
        if self.lambda < z || self.lambda > T::one() {
            return Err(ParamError { name: "lambda", reason: "must lie in [0, 1]" });
        }
        if !(self.view_range > z && self.d_min_pc > z && self.d_min_cc > z && self.d_min_long > z) {
            return Err(ParamError { name: "distance", reason: "must be positive" });
        }
        Ok(())
    }
}

impl<T: Scalar> Default for SfmParams<T> {
    fn default() -> Self {
        Self::for_dataset(DatasetTag::Hbs)
    }
}

/// Weights of the payoff features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct GameParams<T> {
    pub car_speed: T,
    pub ped_speed: T,
    pub competitor_speed: T,
    pub noai: T,
    pub stopped: T,
    pub follower_angle: T,
    /// Distance below which a car finds it difficult to stop (m).
    pub min_dis: T,
    pub continue_angle: T,
    pub decelerate_angle: T,
    pub deviate_angle: T,
}

impl<T: Scalar> GameParams<T> {
    pub fn for_dataset(tag: DatasetTag) -> Self {
        let v = match tag {
            DatasetTag::Hbs | DatasetTag::Synthetic => [11.0, 1.0, 11.0, 3.0, 2.0, 1.0, 7.0, 7.0, 5.0, 8.0],
            DatasetTag::Dut => [4.0, 0.0, 0.0, 0.0, 0.0, 6.6, 5.0, 8.0, 8.0, 6.0],
            DatasetTag::Citr => [10.4, 1.0, 6.3, 0.3, 1.1, 0.4, 6.1, 7.0, 5.0, 8.0],
        };
        Self {
            car_speed: lit(v[0]),
            ped_speed: lit(v[1]),
            competitor_speed: lit(v[2]),
            noai: lit(v[3]),
            stopped: lit(v[4]),
            follower_angle: lit(v[5]),
            min_dis: lit(v[6]),
            continue_angle: lit(v[7]),
            decelerate_angle: lit(v[8]),
            deviate_angle: lit(v[9]),
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            car_speed: self.car_speed * k,
            ped_speed: self.ped_speed * k,
            competitor_speed: self.competitor_speed * k,
            noai: self.noai * k,
            stopped: self.stopped * k,
            follower_angle: self.follower_angle * k,
            min_dis: self.min_dis,
            continue_angle: self.continue_angle * k,
            decelerate_angle: self.decelerate_angle * k,
            deviate_angle: self.deviate_angle * k,
        }
    }
}

impl<T: Scalar> Default for GameParams<T> {
    fn default() -> Self {
        Self::for_dataset(DatasetTag::Hbs)
    }
}
