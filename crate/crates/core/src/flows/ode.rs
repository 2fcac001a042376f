//! Adaptive Dormand–Prince 5(4) integration of small ODE systems.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Integration stops with a blow-up record once any component exceeds this.
    pub max_abs: f64,
    /// Integration stops with a blow-up record once the step falls below this.
    pub min_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_abs: 1e6,
            min_step: 1e-12,
        }
    }
}

/// Where an integration stopped early; the singular time lies in `[t_lower, t_upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpRecord {
    pub t_lower: f64,
    pub t_upper: f64,
    pub reason: String,
}

impl BlowUpRecord {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.t_lower + self.t_upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    /// Output times actually reached.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub blow_up: Option<BlowUpRecord>,
    pub accepted: usize,
    pub rejected: usize,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `outputs[0]` (where `y = y0`) through the
/// remaining increasing `outputs`, landing on each exactly.
pub fn dormand_prince(
    mut f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    y0: &[f64],
    outputs: &[f64],
    opts: &OdeOptions,
) -> OdeSolution {
    let dim = y0.len();
    let mut sol = OdeSolution {
        times: vec![outputs[0]],
        states: vec![y0.to_vec()],
        blow_up: None,
        accepted: 0,
        rejected: 0,
    };
    let mut t = outputs[0];
    let mut y = y0.to_vec();
    let span = outputs.last().copied().unwrap_or(t) - t;
    let mut h = if span > 0.0 { (span * 1e-3).max(opts.min_step * 10.0) } else { 0.0 };
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    for &target in &outputs[1..] {
        while t < target {
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            if step < opts.min_step && !last {
                sol.blow_up = Some(BlowUpRecord {
                    t_lower: t,
                    t_upper: t + step,
                    reason: "step size collapsed".into(),
                });
                return sol;
            }
            k[0] = f(t, &y);
            for s in 1..7 {
                for d in 0..dim {
                    stage[d] = y[d] + step * (0..s).map(|m| A[s][m] * k[m][d]).sum::<f64>();
                }
                k[s] = f(t + C[s] * step, &stage);
            }
            let mut err = 0.0;
            let mut next = vec![0.0; dim];
            for d in 0..dim {
                next[d] = y[d] + step * (0..7).map(|m| B5[m] * k[m][d]).sum::<f64>();
                let e = step * (0..7).map(|m| (B5[m] - B4[m]) * k[m][d]).sum::<f64>();
                let scale = opts.atol + opts.rtol * y[d].abs().max(next[d].abs());
                err += (e / scale).powi(2);
            }
            let err = (err / dim.max(1) as f64).sqrt();
            if !err.is_finite() {
                sol.rejected += 1;
                h = step * 0.1;
                if h < opts.min_step {
                    sol.blow_up = Some(BlowUpRecord {
                        t_lower: t,
                        t_upper: t + step,
                        reason: "non-finite right-hand side".into(),
                    });
                    return sol;
                }
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                sol.accepted += 1;
                t = if last { target } else { t + step };
                y = next;
                if !last || factor < 1.0 {
                    h = step * factor;
                }
                if y.iter().any(|v| v.abs() > opts.max_abs) {
                    sol.blow_up = Some(BlowUpRecord {
                        t_lower: t - step,
                        t_upper: t,
                        reason: format!("magnitude exceeded {:e}", opts.max_abs),
                    });
                    return sol;
                }
            } else {
                sol.rejected += 1;
                h = step * factor;
                if h < opts.min_step {
                    sol.blow_up = Some(BlowUpRecord {
                        t_lower: t,
                        t_upper: t + step,
                        reason: "step size collapsed".into(),
                    });
                    return sol;
                }
            }
        }
        sol.times.push(t);
        sol.states.push(y.clone());
    }
    sol
}
