//! Rotation-guided refinement: nudge a prediction pair until the rotation it
//! implies matches a reference rotation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::bfgs::{minimize, BfgsOptions};
use crate::error::{Error, Result};
use crate::geometry::{
    cross_covariance, rotation_from_covariance, JointSet, Rotation, NUM_JOINTS, WRIST,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
    /// Central-difference step (mm of joint displacement).
    pub fd_step: f64,
    /// Weight `λ` of the squared distance to the starting joints (per mm²).
    pub proximity: f64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            fd_step: 1e-4,
            proximity: 1e-6,
        }
    }
}

impl RefineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter(
                "refinement needs at least one iteration".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "refinement tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.fd_step > 0.0) || !self.fd_step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "finite-difference step must be positive, got {}",
                self.fd_step
            )));
        }
        if !(self.proximity >= 0.0) || !self.proximity.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "proximity weight must be finite and nonnegative, got {}",
                self.proximity
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineDiagnostics {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    /// Kabsch was undefined somewhere; the inputs were returned unchanged.
    pub degenerate: bool,
}

/// `‖R_t − Q(H)‖_F² = 6 − 2 tr(R_tᵀ Q)` for the Kabsch rotation `Q` of `H`.
fn rotation_term(target: &Rotation, h: &Matrix3<f64>) -> Option<f64> {
    let q = rotation_from_covariance(h).ok()?;
    Some((target.matrix() - q.matrix()).norm_squared())
}

/// The refinement objective
/// `‖r_target − kabsch(J1, J2)‖_F² + λ (‖J1 − j1‖² + ‖J2 − j2‖²)`.
pub fn rgr_objective(
    refined: (&JointSet, &JointSet),
    start: (&JointSet, &JointSet),
    r_target: &Rotation,
    proximity: f64,
) -> Result<f64> {
    let a = refined.0.aligned();
    let b = refined.1.aligned();
    let q = rotation_from_covariance(&cross_covariance(&a, &b))?;
    let prox = refined.0.squared_distance(start.0) + refined.1.squared_distance(start.1);
    Ok((r_target.matrix() - q.matrix()).norm_squared() + proximity * prox)
}

const FREE: usize = NUM_JOINTS - 1;

fn unpack(x: &[f64]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let get = |o: usize| -> Vec<Vector3<f64>> {
        std::iter::once(Vector3::zeros())
            .chain(
                (0..FREE).map(|k| Vector3::new(x[o + 3 * k], x[o + 3 * k + 1], x[o + 3 * k + 2])),
            )
            .collect()
    };
    (get(0), get(3 * FREE))
}

fn pack(j1: &JointSet, j2: &JointSet) -> Vec<f64> {
    j1.points()
        .iter()
        .chain(j2.points())
        .enumerate()
        .filter(|(i, _)| i % NUM_JOINTS != WRIST)
        .flat_map(|(_, p)| [p.x, p.y, p.z])
        .collect()
}

struct Problem<'a> {
    target: &'a Rotation,
    x0: Vec<f64>,
    proximity: f64,
    fd_step: f64,
}

impl Problem<'_> {
    /// Objective value and gradient. The gradient of the rotation term is
    /// obtained by central differences in the 9 entries of `H` and chained
    /// through `∂H/∂a_k = (·) b_kᵀ`, `∂H/∂b_k = a_k (·)ᵀ`.
    fn evaluate(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = unpack(x);
        let h = a
            .iter()
            .zip(&b)
            .fold(Matrix3::zeros(), |acc, (p, q)| acc + p * q.transpose());
        let rot = rotation_term(self.target, &h)?;
        let prox: f64 = x.iter().zip(&self.x0).map(|(v, w)| (v - w) * (v - w)).sum();
        let f = rot + self.proximity * prox;

        let scale = a
            .iter()
            .chain(&b)
            .map(|p| p.norm())
            .fold(0.0, f64::max)
            .max(1.0);
        let step = self.fd_step * scale;
        let mut g_h = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let mut hp = h;
                let mut hm = h;
                hp[(r, c)] += step;
                hm[(r, c)] -= step;
                g_h[(r, c)] = (rotation_term(self.target, &hp)? - rotation_term(self.target, &hm)?)
                    / (2.0 * step);
            }
        }

        let mut grad = Vec::with_capacity(x.len());
        for k in 1..NUM_JOINTS {
            grad.extend_from_slice((g_h * b[k]).as_slice());
        }
        let g_ht = g_h.transpose();
        for k in 1..NUM_JOINTS {
            grad.extend_from_slice((g_ht * a[k]).as_slice());
        }
        for (gi, (v, w)) in grad.iter_mut().zip(x.iter().zip(&self.x0)) {
            *gi += 2.0 * self.proximity * (v - w);
        }
        Some((f, grad))
    }
}

/// Refines a wrist-aligned prediction pair towards consistency with
/// `r_target`, optimizing the 2 x 20 non-wrist joints with BFGS.
///
/// The objective never increases. If Kabsch is undefined at any evaluated
/// point the inputs come back unchanged with `degenerate` set.
pub fn rgr_refine(
    j1: &JointSet,
    j2: &JointSet,
    r_target: &Rotation,
    settings: &RefineSettings,
) -> Result<(JointSet, JointSet, RefineDiagnostics)> {
    settings.validate()?;
    for (j, name) in [(j1, "view 1"), (j2, "view 2")] {
        if !j.is_finite() || !j.is_wrist_aligned(1e-9) {
            return Err(Error::InvalidInput(format!(
                "{name} joints must be finite and wrist-aligned"
            )));
        }
    }
    let unchanged = |f0: f64, degenerate: bool| {
        (
            j1.clone(),
            j2.clone(),
            RefineDiagnostics {
                initial_objective: f0,
                final_objective: f0,
                iterations: 0,
                degenerate,
            },
        )
    };

    let problem = Problem {
        target: r_target,
        x0: pack(j1, j2),
        proximity: settings.proximity,
        fd_step: settings.fd_step,
    };
    let Some((f0, _)) = problem.evaluate(&problem.x0) else {
        return Ok(unchanged(f64::NAN, true));
    };
    if f0 <= settings.tolerance {
        return Ok(unchanged(f0, false));
    }
    let opts = BfgsOptions {
        max_iterations: settings.max_iterations,
        tolerance: settings.tolerance,
        initial_step: 1.0,
    };
    let result = match minimize(&mut |x: &[f64]| problem.evaluate(x), &problem.x0, &opts) {
        Ok(r) => r,
        Err(_) => return Ok(unchanged(f0, true)),
    };
    if !(result.f < f0) {
        return Ok(unchanged(f0, false));
    }
    let (a, b) = unpack(&result.x);
    Ok((
        JointSet::from_points_unchecked(a)?,
        JointSet::from_points_unchecked(b)?,
        RefineDiagnostics {
            initial_objective: f0,
            final_objective: result.f,
            iterations: result.iterations,
            degenerate: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_pose, HandTemplate};

    #[test]
    fn pack_unpack_round_trip() {
        let t = HandTemplate::standard();
        let a = sample_pose(&t, 1).aligned();
        let b = sample_pose(&t, 2).aligned();
        let x = pack(&a, &b);
        assert_eq!(x.len(), 120);
        let (pa, pb) = unpack(&x);
        assert_eq!(JointSet::new(pa).unwrap(), a);
        assert_eq!(JointSet::new(pb).unwrap(), b);
    }

    #[test]
    fn gradient_matches_coordinate_differences() {
        let t = HandTemplate::standard();
        let a = sample_pose(&t, 3).aligned();
        let b = sample_pose(&t, 4).aligned();
        let target = Rotation::rz(0.4);
        let problem = Problem {
            target: &target,
            x0: pack(&a, &b).iter().map(|v| v + 0.5).collect(),
            proximity: 1e-4,
            fd_step: 1e-4,
        };
        let x = pack(&a, &b);
        let (_, g) = problem.evaluate(&x).unwrap();
        for i in [0, 7, 59, 60, 101, 119] {
            let h = 1e-3;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd =
                (problem.evaluate(&xp).unwrap().0 - problem.evaluate(&xm).unwrap().0) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn rejects_unaligned_input() {
        let t = HandTemplate::standard();
        let a = sample_pose(&t, 1);
        let r = rgr_refine(&a, &a, &Rotation::identity(), &RefineSettings::default());
        assert!(r.is_err());
    }

    #[test]
    fn collinear_input_falls_back() {
        let line = JointSet::new(
            (0..NUM_JOINTS)
                .map(|k| Vector3::new(k as f64, 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        let (a, b, d) =
            rgr_refine(&line, &line, &Rotation::rz(0.3), &RefineSettings::default()).unwrap();
        assert!(d.degenerate);
        assert_eq!(a, line);
        assert_eq!(b, line);
    }
}
