//! The gantry-crane benchmark OCP: payload-position objective and input boxes.

use nalgebra::{DMatrix, DVector};

use crate::transcription::{BoxBounds, OcpSpec, StageResidual, TerminalResidual};

pub const INPUT_LIMIT: f64 = 0.15;
const PAYLOAD_HEIGHT_REF: f64 = 0.5;
const INPUT_PENALTY: f64 = 1e-4;

/// Stage objective residual: payload position, payload height error, swing
/// rate and a small input penalty.
fn stage_h(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let (x_c, x_l, th, th_dot) = (x[0], x[2], x[4], x[5]);
    DVector::from_vec(vec![
        x_c + x_l * th.sin(),
        x_l * th.cos() - PAYLOAD_HEIGHT_REF,
        th_dot,
        INPUT_PENALTY * u[0],
        INPUT_PENALTY * u[1],
    ])
}

fn position_rows(x: &DVector<f64>) -> DMatrix<f64> {
    let (x_l, th) = (x[2], x[4]);
    let mut j = DMatrix::zeros(3, 6);
    j[(0, 0)] = 1.0;
    j[(0, 2)] = th.sin();
    j[(0, 4)] = x_l * th.cos();
    j[(1, 2)] = th.cos();
    j[(1, 4)] = -x_l * th.sin();
    j[(2, 5)] = 1.0;
    j
}

/// Crane OCP with the position/height/swing objective and +/-0.15 input
/// limits; no state bounds and no slack variables.
pub fn crane_ocp(horizon: usize, t_s: f64, x_hat: DVector<f64>) -> OcpSpec {
    OcpSpec {
        horizon,
        t_s,
        x_hat,
        n_slack: 0,
        n_slack_term: 0,
        h: StageResidual {
            dim: 5,
            eval: Box::new(|x, u, _s| stage_h(x, u)),
            jac: Box::new(|x, _u, _s| {
                let mut jx = DMatrix::zeros(5, 6);
                jx.view_mut((0, 0), (3, 6)).copy_from(&position_rows(x));
                let mut ju = DMatrix::zeros(5, 2);
                ju[(3, 0)] = INPUT_PENALTY;
                ju[(4, 1)] = INPUT_PENALTY;
                (jx, ju, DMatrix::zeros(5, 0))
            }),
        },
        h_term: TerminalResidual {
            dim: 3,
            eval: Box::new(|x, _s| {
                let full = stage_h(x, &DVector::zeros(2));
                full.rows(0, 3).into_owned()
            }),
            jac: Box::new(|x, _s| (position_rows(x), DMatrix::zeros(3, 0))),
        },
        q: None,
        q_term: None,
        x_bounds: BoxBounds::unbounded(6),
        u_bounds: BoxBounds::symmetric(2, INPUT_LIMIT),
        s_bounds: BoxBounds::unbounded(0),
        x_term_bounds: BoxBounds::unbounded(6),
        s_term_bounds: BoxBounds::unbounded(0),
    }
}

/// Terminal residual value at a plant state, used for closed-loop metrics.
pub fn terminal_residual(x: &DVector<f64>) -> DVector<f64> {
    stage_h(x, &DVector::zeros(2)).rows(0, 3).into_owned()
}

/// Squared stage residual norm at a plant state and applied input, used to
/// accumulate the closed-loop cost.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    stage_h(x, u).norm_squared()
}
