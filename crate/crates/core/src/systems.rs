//! Benchmark divergence-free dynamical systems.
//!
//! * `Advection`: central-difference semi-discretization of `u_t + c u_x = 0`
//!   on `[-1, 1]` with periodic boundary, `du_i/dt = -c (u_{i+1} - u_{i-1}) / (2 dx)`,
//!   `dx = 2/n`, node `i` at `x_i = -1 + i dx`.
//! * `RigidBody`: Euler equations of free rotation in the body frame,
//!   `y1' = a1 y2 y3`, `y2' = a2 y3 y1`, `y3' = a3 y1 y2` with
//!   `a1 = (I2 - I3)/(I2 I3)` and cyclic permutations.
//! * `ChargedParticle`: planar motion in the field of the potentials
//!   `phi(y) = 1/(100 r)` and `A(y) = (r/3) (-y2, y1, 0)`, `r = |y|`.
//!
//! # Reduced charged-particle equations
//!
//! With state `(y1, y2, p1, p2)`, `p = m dy/dt`:
//!
//! * `E = -grad phi = y / (100 r^3)`.
//! * `B = curl A` has only a z-component. From `A_x = -r y2/3`, `A_y = r y1/3`:
//!   `dA_y/dy1 = (r + y1^2/r)/3`, `dA_x/dy2 = -(r + y2^2/r)/3`, hence
//!   `B_z = (2r + (y1^2 + y2^2)/r)/3 = r`.
//! * `v x B = (v2 B_z, -v1 B_z, 0)`.
//!
//! So `y' = p/m`, `p1' = q (y1/(100 r^3) + p2 r/m)`, `p2' = q (y2/(100 r^3) - p1 r/m)`.
//! `dp'/dp` is skew, so the vector field is divergence-free, and
//! `H = |p|^2/(2m) + q phi(y)` is conserved. Both facts are checked against
//! finite differences of the potentials in the tests below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{fd_jacobian, norm2, Mat};

fn default_wave_speed() -> f64 {
    1.0
}
fn default_grid() -> usize {
    35
}
fn default_inertia() -> [f64; 3] {
    [2.0, 1.0, 2.0 / 3.0]
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    Advection {
        #[serde(default = "default_grid")]
        n: usize,
        #[serde(default = "default_wave_speed")]
        c: f64,
    },
    RigidBody {
        #[serde(default = "default_inertia")]
        inertia: [f64; 3],
    },
    ChargedParticle {
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "one")]
        charge: f64,
    },
}

impl System {
    pub fn advection() -> Self {
        System::Advection {
            n: default_grid(),
            c: default_wave_speed(),
        }
    }

    pub fn rigid_body() -> Self {
        System::RigidBody {
            inertia: default_inertia(),
        }
    }

    pub fn charged_particle() -> Self {
        System::ChargedParticle {
            mass: 1.0,
            charge: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Advection { .. } => "advection",
            System::RigidBody { .. } => "rigid_body",
            System::ChargedParticle { .. } => "charged_particle",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Advection { n, .. } => *n,
            System::RigidBody { .. } => 3,
            System::ChargedParticle { .. } => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            System::Advection { n, c } => {
                if *n < 3 {
                    return Err(Error::InvalidSpec(format!("advection grid needs n >= 3, got {n}")));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidSpec("wave speed must be finite".into()));
                }
            }
            System::RigidBody { inertia } => {
                if inertia.iter().any(|i| !(i.is_finite() && *i > 0.0)) {
                    return Err(Error::InvalidSpec(format!(
                        "moments of inertia must be positive, got {inertia:?}"
                    )));
                }
            }
            System::ChargedParticle { mass, .. } => {
                if !(mass.is_finite() && *mass > 0.0) {
                    return Err(Error::InvalidSpec(format!("particle mass must be positive, got {mass}")));
                }
            }
        }
        Ok(())
    }

    /// Grid spacing of the advection system.
    pub fn grid_dx(&self) -> Option<f64> {
        match self {
            System::Advection { n, .. } => Some(2.0 / *n as f64),
            _ => None,
        }
    }

    /// Rigid-body coefficients `(a1, a2, a3)`.
    pub fn rigid_body_coefficients(inertia: [f64; 3]) -> [f64; 3] {
        let [i1, i2, i3] = inertia;
        [
            (i2 - i3) / (i2 * i3),
            (i3 - i1) / (i3 * i1),
            (i1 - i2) / (i1 * i2),
        ]
    }

    /// Writes `dy/dt` into `dy`. Lengths are assumed to equal `dim()`.
    pub fn rhs_into(&self, y: &[f64], dy: &mut [f64]) {
        match self {
            System::Advection { n, c } => {
                let n = *n;
                let k = -c / (2.0 * (2.0 / n as f64));
                for i in 0..n {
                    let right = y[(i + 1) % n];
                    let left = y[(i + n - 1) % n];
                    dy[i] = k * (right - left);
                }
            }
            System::RigidBody { inertia } => {
                let [a1, a2, a3] = Self::rigid_body_coefficients(*inertia);
                dy[0] = a1 * y[1] * y[2];
                dy[1] = a2 * y[2] * y[0];
                dy[2] = a3 * y[0] * y[1];
            }
            System::ChargedParticle { mass, charge } => {
                let (y1, y2, p1, p2) = (y[0], y[1], y[2], y[3]);
                let r = (y1 * y1 + y2 * y2).sqrt();
                let e = 1.0 / (100.0 * r * r * r);
                dy[0] = p1 / mass;
                dy[1] = p2 / mass;
                dy[2] = charge * (y1 * e + p2 * r / mass);
                dy[3] = charge * (y2 * e - p1 * r / mass);
            }
        }
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::dim("system state", self.dim(), y.len()));
        }
        Ok(())
    }

    pub fn eval_rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let mut dy = vec![0.0; y.len()];
        self.rhs_into(y, &mut dy);
        Ok(dy)
    }

    /// Divergence of the vector field. Exactly zero for the advection and
    /// rigid-body systems (no component depends on itself); finite-difference
    /// trace otherwise.
    pub fn divergence(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        match self {
            System::Advection { .. } | System::RigidBody { .. } => Ok(0.0),
            System::ChargedParticle { .. } => {
                let jac = fd_jacobian(|z| self.eval_rhs(z).unwrap(), y, 1e-6)?;
                Ok(jac.trace())
            }
        }
    }

    pub fn invariant_names(&self) -> &'static [&'static str] {
        match self {
            System::Advection { .. } => &["L2GridNorm"],
            System::RigidBody { .. } => &["H", "I"],
            System::ChargedParticle { .. } => &["H"],
        }
    }

    /// Conserved quantities at `y`, in the order of `invariant_names`.
    pub fn invariant_values(&self, y: &[f64]) -> Result<Vec<(&'static str, f64)>> {
        self.check_dim(y)?;
        let names = self.invariant_names();
        let values = match self {
            System::Advection { n, .. } => {
                let dx = 2.0 / *n as f64;
                vec![(dx * y.iter().map(|u| u * u).sum::<f64>()).sqrt()]
            }
            System::RigidBody { inertia } => {
                let h = 0.5 * (y[0] * y[0] / inertia[0] + y[1] * y[1] / inertia[1] + y[2] * y[2] / inertia[2]);
                let i = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                vec![h, i]
            }
            System::ChargedParticle { mass, charge } => {
                let r = norm2(&y[..2]);
                let h = (y[2] * y[2] + y[3] * y[3]) / (2.0 * mass) + charge / (100.0 * r);
                vec![h]
            }
        };
        Ok(names.iter().copied().zip(values).collect())
    }

    /// Explicit matrix of the (linear) advection system.
    pub fn advection_matrix(&self) -> Option<Mat> {
        let System::Advection { n, c } = self else {
            return None;
        };
        let n = *n;
        let k = -c / (2.0 * (2.0 / n as f64));
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            a[(i, (i + 1) % n)] += k;
            a[(i, (i + n - 1) % n)] -= k;
        }
        Some(a)
    }

    /// Initial state used by the single-trajectory experiments.
    pub fn reference_initial_state(&self) -> Vec<f64> {
        match self {
            System::Advection { .. } => self.gaussian_pulse().unwrap(),
            System::RigidBody { .. } => vec![1.1f64.cos(), 0.0, 1.1f64.sin()],
            System::ChargedParticle { .. } => vec![0.1, 1.0, 1.1, 0.5],
        }
    }

    /// Gaussian pulse `u_i = exp(-10 (-1 + i dx)^2)` on the advection grid.
    pub fn gaussian_pulse(&self) -> Option<Vec<f64>> {
        let System::Advection { n, .. } = self else {
            return None;
        };
        let dx = 2.0 / *n as f64;
        Some(
            (0..*n)
                .map(|i| {
                    let x = -1.0 + i as f64 * dx;
                    (-10.0 * x * x).exp()
                })
                .collect(),
        )
    }
}
