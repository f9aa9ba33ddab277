//! ODE model interface and the gantry-crane benchmark dynamics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous-time model `xdot = f_c(x, u)` with analytic derivatives.
///
/// All methods are pure functions of their arguments; implementations must be
/// safe to call concurrently.
pub trait OdeModel: Send + Sync {
    fn dim_state(&self) -> usize;
    fn dim_input(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// d(rhs)/dx, `n x n`.
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// d(rhs)/du, `n x m`.
    fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Sign of the swing-acceleration bracket in the crane dynamics.
///
/// `Physical` follows the equation of motion (stable pendulum); `Verbatim`
/// keeps the opposite sign that appears in some state-space write-ups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    Physical,
    Verbatim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CraneParams {
    /// Cart velocity-loop time constant, s.
    pub tau_c: f64,
    /// Hoist velocity-loop time constant, s.
    pub tau_l: f64,
    /// m/s^2.
    pub gravity: f64,
    /// Payload mass, kg. Kept for documentation; the nominal rhs does not use it.
    pub payload_mass: f64,
    /// Guard against the 1/x_l singularity.
    pub x_l_min: f64,
    pub sign_convention: SignConvention,
}

impl Default for CraneParams {
    fn default() -> Self {
        Self {
            tau_c: 0.13,
            tau_l: 0.07,
            gravity: 9.81,
            payload_mass: 0.47,
            x_l_min: 0.05,
            sign_convention: SignConvention::Physical,
        }
    }
}

impl CraneParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_c", self.tau_c),
            ("tau_l", self.tau_l),
            ("gravity", self.gravity),
            ("x_l_min", self.x_l_min),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("crane parameter {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn bracket_sign(&self) -> f64 {
        match self.sign_convention {
            SignConvention::Physical => -1.0,
            SignConvention::Verbatim => 1.0,
        }
    }
}

/// Gantry crane with cart position/velocity, rope length/velocity and swing
/// angle/rate. State `[x_c, v_c, x_l, v_l, theta, theta_dot]`, input
/// `[u_c, u_l]` (velocity setpoints).
#[derive(Debug, Clone)]
pub struct Crane {
    pub params: CraneParams,
}

impl Crane {
    pub fn new(params: CraneParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    fn check_domain(&self, x: &DVector<f64>) -> Result<()> {
        if x[2] < self.params.x_l_min {
            return Err(Error::Domain {
                what: "rope length x_l",
                value: x[2],
                limit: self.params.x_l_min,
            });
        }
        Ok(())
    }
}

impl Default for Crane {
    fn default() -> Self {
        Self { params: CraneParams::default() }
    }
}

impl OdeModel for Crane {
    fn dim_state(&self) -> usize {
        6
    }

    fn dim_input(&self) -> usize {
        2
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_domain(x)?;
        let p = &self.params;
        let (v_c, x_l, v_l, th, th_dot) = (x[1], x[2], x[3], x[4], x[5]);
        let acc_c = (-v_c + u[0]) / p.tau_c;
        let acc_l = (-v_l + u[1]) / p.tau_l;
        let bracket = acc_c * th.cos() + p.gravity * th.sin() + 2.0 * v_l * th_dot;
        let th_ddot = p.bracket_sign() * bracket / x_l;
        Ok(DVector::from_vec(vec![v_c, acc_c, v_l, acc_l, th_dot, th_ddot]))
    }

    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let p = &self.params;
        let (v_c, x_l, v_l, th, th_dot) = (x[1], x[2], x[3], x[4], x[5]);
        let s = p.bracket_sign();
        let acc_c = (-v_c + u[0]) / p.tau_c;
        let bracket = acc_c * th.cos() + p.gravity * th.sin() + 2.0 * v_l * th_dot;

        let mut j = DMatrix::zeros(6, 6);
        j[(0, 1)] = 1.0;
        j[(1, 1)] = -1.0 / p.tau_c;
        j[(2, 3)] = 1.0;
        j[(3, 3)] = -1.0 / p.tau_l;
        j[(4, 5)] = 1.0;
        j[(5, 1)] = s * (-th.cos() / p.tau_c) / x_l;
        j[(5, 2)] = -s * bracket / (x_l * x_l);
        j[(5, 3)] = s * 2.0 * th_dot / x_l;
        j[(5, 4)] = s * (-acc_c * th.sin() + p.gravity * th.cos()) / x_l;
        j[(5, 5)] = s * 2.0 * v_l / x_l;
        Ok(j)
    }

    fn jac_u(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let p = &self.params;
        let (x_l, th) = (x[2], x[4]);
        let mut j = DMatrix::zeros(6, 2);
        j[(1, 0)] = 1.0 / p.tau_c;
        j[(3, 1)] = 1.0 / p.tau_l;
        j[(5, 0)] = p.bracket_sign() * th.cos() / (p.tau_c * x_l);
        Ok(j)
    }
}

/// Linear time-invariant model `xdot = A x + B u`, mostly used by tests and
/// for transcription sanity checks against closed-form solutions.
#[derive(Debug, Clone)]
pub struct LinearOde {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearOde {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "LinearOde A/B".into(),
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        Ok(Self { a, b })
    }

    /// Scalar decay `xdot = lambda x` with a single unused input channel.
    pub fn scalar_decay(lambda: f64) -> Self {
        Self {
            a: DMatrix::from_element(1, 1, lambda),
            b: DMatrix::zeros(1, 1),
        }
    }
}

impl OdeModel for LinearOde {
    fn dim_state(&self) -> usize {
        self.a.nrows()
    }

    fn dim_input(&self) -> usize {
        self.b.ncols()
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }

    fn jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn jac_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.b.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_jacobian(
        f: impl Fn(&DVector<f64>) -> DVector<f64>,
        x0: &DVector<f64>,
        h: f64,
    ) -> DMatrix<f64> {
        let n_out = f(x0).len();
        let mut j = DMatrix::zeros(n_out, x0.len());
        for c in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (f(&xp) - f(&xm)) / (2.0 * h);
            j.set_column(c, &d);
        }
        j
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / a.norm().max(1.0)
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let crane = Crane::default();
        for x_l in [0.05, 0.5, 1.3] {
            let x = DVector::from_vec(vec![0.0, 0.0, x_l, 0.0, 0.0, 0.0]);
            let u = DVector::zeros(2);
            let dx = crane.rhs(&x, &u).unwrap();
            assert_eq!(dx.norm(), 0.0);
        }
    }

    #[test]
    fn cart_push_values_match_hand_formula() {
        let crane = Crane::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let u = DVector::from_vec(vec![0.15, 0.0]);
        let dx = crane.rhs(&x, &u).unwrap();
        let acc = 0.15 / 0.13;
        assert!((dx[1] - acc).abs() < 1e-12);
        assert!((dx[5] - (-acc / 0.5)).abs() < 1e-12);
    }

    #[test]
    fn swing_restoring_torque() {
        let crane = Crane::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0, 0.1, 0.0]);
        let u = DVector::zeros(2);
        let dx = crane.rhs(&x, &u).unwrap();
        let expect = -(9.81 * 0.1f64.sin()) / 0.5;
        assert!((dx[5] - expect).abs() < 1e-10, "{} vs {expect}", dx[5]);
    }

    #[test]
    fn verbatim_flips_only_the_bracket_sign() {
        let mut params = CraneParams::default();
        params.sign_convention = SignConvention::Verbatim;
        let verbatim = Crane::new(params).unwrap();
        let physical = Crane::default();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.6, 0.05, 0.3, -0.2]);
        let u = DVector::from_vec(vec![0.1, -0.05]);
        let dp = physical.rhs(&x, &u).unwrap();
        let dv = verbatim.rhs(&x, &u).unwrap();
        for i in 0..5 {
            assert_eq!(dp[i], dv[i]);
        }
        assert!((dp[5] + dv[5]).abs() < 1e-14);
    }

    #[test]
    fn singular_rope_length_rejected() {
        let crane = Crane::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.01, 0.0, 0.0, 0.0]);
        let u = DVector::zeros(2);
        assert!(matches!(crane.rhs(&x, &u), Err(Error::Domain { .. })));
        assert!(crane.jac_x(&x, &u).is_err());
    }

    #[test]
    fn jacobian_entries_at_equilibrium() {
        let crane = Crane::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let u = DVector::zeros(2);
        let jx = crane.jac_x(&x, &u).unwrap();
        let ju = crane.jac_u(&x, &u).unwrap();
        assert!((jx[(1, 1)] + 1.0 / 0.13).abs() < 1e-12);
        assert!((ju[(1, 0)] - 1.0 / 0.13).abs() < 1e-12);
    }

    #[test]
    fn swing_rate_partial_matches_hand_differentiation() {
        let crane = Crane::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.2, 0.0, 0.3]);
        let u = DVector::zeros(2);
        let jx = crane.jac_x(&x, &u).unwrap();
        assert!((jx[(5, 5)] - (-2.0 * 0.2 / 0.5)).abs() < 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let crane = Crane::default();
        for _ in 0..20 {
            let x = DVector::from_vec(vec![
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.2..1.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-1.0..1.0),
            ]);
            let u = DVector::from_vec(vec![rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)]);
            let jx = crane.jac_x(&x, &u).unwrap();
            let ju = crane.jac_u(&x, &u).unwrap();
            let fx = fd_jacobian(|p| crane.rhs(p, &u).unwrap(), &x, 1e-6);
            let fu = fd_jacobian(|p| crane.rhs(&x, p).unwrap(), &u, 1e-6);
            assert!(rel_err(&jx, &fx) <= 1e-5, "jac_x mismatch: {}", rel_err(&jx, &fx));
            assert!(rel_err(&ju, &fu) <= 1e-5, "jac_u mismatch: {}", rel_err(&ju, &fu));
        }
    }
}
