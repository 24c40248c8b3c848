//! Decaying test potentials and the factorization `V = U v²`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::{norm3, Point};

/// Shape of a built-in potential before the coupling multiplier is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `depth · exp(-|x|²/width²)`.
    GaussianWell { depth: f64, width: f64 },
    /// Smooth mollifier `amplitude · exp(1 - 1/(1 - |x|²/radius²))` on `|x| < radius`.
    ///
    /// With `node_radius = Some(ρ)` the profile is multiplied by `1 - |x|²/ρ²`,
    /// which flips the sign on the sphere `|x| = ρ`.
    CompactBump { amplitude: f64, radius: f64, node_radius: Option<f64> },
    /// `amplitude · (1 + |x|²)^{-β/2}`.
    PowerDecay { amplitude: f64, beta: f64 },
}

/// A real potential `c · V₀(x)`.
///
/// Serialized as a flat JSON object, e.g.
/// `{"family": "gaussian_well", "depth": -1, "width": 1, "coupling": 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialSpec", into = "PotentialSpec")]
pub struct Potential {
    pub family: Family,
    pub coupling: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyName {
    GaussianWell,
    CompactBump,
    PowerDecay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialSpec {
    family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coupling: Option<f64>,
}

impl TryFrom<PotentialSpec> for Potential {
    type Error = Error;

    fn try_from(s: PotentialSpec) -> Result<Self> {
        let stray = |names: &[(&str, Option<f64>)]| -> Result<()> {
            match names.iter().find(|(_, v)| v.is_some()) {
                Some((n, _)) => Err(Error::Config(format!("field `{n}` does not apply to this family"))),
                None => Ok(()),
            }
        };
        let family = match s.family {
            FamilyName::GaussianWell => {
                stray(&[
                    ("amplitude", s.amplitude),
                    ("radius", s.radius),
                    ("node_radius", s.node_radius),
                    ("beta", s.beta),
                ])?;
                Family::GaussianWell { depth: s.depth.unwrap_or(-1.0), width: s.width.unwrap_or(1.0) }
            }
            FamilyName::CompactBump => {
                stray(&[("depth", s.depth), ("width", s.width), ("beta", s.beta)])?;
                Family::CompactBump {
                    amplitude: s.amplitude.unwrap_or(1.0),
                    radius: s.radius.unwrap_or(2.0),
                    node_radius: s.node_radius,
                }
            }
            FamilyName::PowerDecay => {
                stray(&[("depth", s.depth), ("width", s.width), ("radius", s.radius), ("node_radius", s.node_radius)])?;
                Family::PowerDecay { amplitude: s.amplitude.unwrap_or(-1.0), beta: s.beta.unwrap_or(24.0) }
            }
        };
        let p = Potential { family, coupling: s.coupling.unwrap_or(1.0) };
        p.validate()?;
        Ok(p)
    }
}

impl From<Potential> for PotentialSpec {
    fn from(p: Potential) -> Self {
        let mut s = PotentialSpec {
            family: FamilyName::GaussianWell,
            depth: None,
            width: None,
            amplitude: None,
            radius: None,
            node_radius: None,
            beta: None,
            coupling: Some(p.coupling),
        };
        match p.family {
            Family::GaussianWell { depth, width } => {
                s.depth = Some(depth);
                s.width = Some(width);
            }
            Family::CompactBump { amplitude, radius, node_radius } => {
                s.family = FamilyName::CompactBump;
                s.amplitude = Some(amplitude);
                s.radius = Some(radius);
                s.node_radius = node_radius;
            }
            Family::PowerDecay { amplitude, beta } => {
                s.family = FamilyName::PowerDecay;
                s.amplitude = Some(amplitude);
                s.beta = Some(beta);
            }
        }
        s
    }
}

impl Default for Potential {
    fn default() -> Self {
        Self::gaussian_well(-1.0, 1.0)
    }
}

impl Potential {
    pub fn gaussian_well(depth: f64, width: f64) -> Self {
        Self { family: Family::GaussianWell { depth, width }, coupling: 1.0 }
    }

    /// Default mollifier: unit amplitude, support `|x| ≤ 2`.
    pub fn compact_bump(amplitude: f64) -> Self {
        Self { family: Family::CompactBump { amplitude, radius: 2.0, node_radius: None }, coupling: 1.0 }
    }

    pub fn power_decay(amplitude: f64, beta: f64) -> Result<Self> {
        let p = Self { family: Family::PowerDecay { amplitude, beta }, coupling: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.coupling.is_finite() {
            return Err(invalid("coupling must be finite"));
        }
        match self.family {
            Family::GaussianWell { depth, width } => {
                if !depth.is_finite() || !(width > 0.0) || !width.is_finite() {
                    return Err(invalid("gaussian well needs finite depth and positive width"));
                }
            }
            Family::CompactBump { amplitude, radius, node_radius } => {
                if !amplitude.is_finite() || !(radius > 0.0) || !radius.is_finite() {
                    return Err(invalid("compact bump needs finite amplitude and positive radius"));
                }
                if let Some(rho) = node_radius {
                    if !(rho > 0.0) || !rho.is_finite() {
                        return Err(invalid("compact bump node radius must be positive"));
                    }
                }
            }
            Family::PowerDecay { amplitude, beta } => {
                if !amplitude.is_finite() {
                    return Err(invalid("power decay amplitude must be finite"));
                }
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(invalid(format!("power decay needs beta > 0, got {beta}")));
                }
            }
        }
        Ok(())
    }

    /// Recorded decay exponent `β` in `|V(x)| ≲ (1+|x|)^{-β}`; infinite for
    /// compactly supported and Gaussian families.
    pub fn decay_beta(&self) -> f64 {
        match self.family {
            Family::PowerDecay { beta, .. } => beta,
            _ => f64::INFINITY,
        }
    }

    /// Constant `C` with `|V(x)| ≤ C (1+|x|)^{-β}` for the power family; for
    /// the other families the sup norm.
    pub fn decay_constant(&self) -> f64 {
        let c = self.coupling.abs();
        match self.family {
            Family::GaussianWell { depth, .. } => c * depth.abs(),
            Family::CompactBump { amplitude, radius, node_radius } => {
                let scale = node_radius.map_or(1.0, |rho| (radius / rho).powi(2).max(1.0));
                c * amplitude.abs() * scale
            }
            // (1+r)² ≤ 2(1+r²), so (1+r²)^{-β/2} ≤ 2^{β/2} (1+r)^{-β}.
            Family::PowerDecay { amplitude, beta } => c * amplitude.abs() * 2f64.powf(beta / 2.0),
        }
    }

    pub fn evaluate(&self, x: &Point) -> f64 {
        let r = norm3(x);
        let base = match self.family {
            Family::GaussianWell { depth, width } => depth * (-(r * r) / (width * width)).exp(),
            Family::CompactBump { amplitude, radius, node_radius } => {
                let s = (r / radius).powi(2);
                if s >= 1.0 {
                    0.0
                } else {
                    let bump = amplitude * (1.0 - 1.0 / (1.0 - s)).exp();
                    match node_radius {
                        Some(rho) => bump * (1.0 - (r / rho).powi(2)),
                        None => bump,
                    }
                }
            }
            Family::PowerDecay { amplitude, beta } => amplitude * (1.0 + r * r).powf(-beta / 2.0),
        };
        self.coupling * base
    }

    /// Values `V(x_j)` at the grid nodes.
    pub fn sample(&self, grid: &QuadratureGrid) -> Vec<f64> {
        grid.nodes.iter().map(|x| self.evaluate(x)).collect()
    }
}

/// Nodewise factorization `V = U v²` with `U = sign V` and `v = |V|^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignAmplitude {
    pub sign: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl SignAmplitude {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::DegeneratePotential("potential vanishes at every grid node".into()));
        }
        let sign = values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        let amplitude = values.iter().map(|v| v.abs().sqrt()).collect();
        Ok(Self { sign, amplitude })
    }

    /// `U_j v_j²`, which reproduces the sampled potential.
    pub fn potential_values(&self) -> Vec<f64> {
        self.sign.iter().zip(&self.amplitude).map(|(u, v)| u * v * v).collect()
    }
}

pub fn decompose_sign_amplitude(v: &Potential, grid: &QuadratureGrid) -> Result<SignAmplitude> {
    v.validate()?;
    SignAmplitude::from_values(&v.sample(grid))
}

/// `‖V‖_{L¹}` by grid quadrature.
pub fn l1_norm(v: &Potential, grid: &QuadratureGrid) -> Result<f64> {
    v.validate()?;
    let vals = v.sample(grid);
    if vals.iter().all(|&x| x == 0.0) {
        return Err(Error::DegeneratePotential("potential vanishes at every grid node".into()));
    }
    Ok(vals.iter().zip(&grid.weights).map(|(v, w)| v.abs() * w).sum())
}
