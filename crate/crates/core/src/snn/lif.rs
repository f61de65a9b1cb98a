//! Leaky integrate-and-fire dynamics and the spike nonlinearity.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub v_th: f64,
    pub decay: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            v_th: 1.0,
            decay: 0.5,
        }
    }
}

impl LifParams {
    pub fn is_valid(&self) -> bool {
        self.v_th > 0.0 && (0.0..=1.0).contains(&self.decay)
    }
}

/// Human-readable surrogate declaration for run reports.
pub const SURROGATE_DESCRIPTION: &str =
    "triangular max(0, 1 - |v - v_th|), width 2 centred on v_th";

/// Forward nonlinearity of a spiking layer.
///
/// `Heaviside` is the real neuron. `Smooth` replaces the step by the integral
/// of the triangular surrogate so the whole network becomes differentiable with
/// exactly the surrogate as its derivative; it exists for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeFn {
    #[default]
    Heaviside,
    Smooth,
}

impl SpikeFn {
    #[inline]
    pub fn spike(self, v: f64, v_th: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => (v >= v_th) as u8 as f64,
            SpikeFn::Smooth => {
                let u = v - v_th;
                if u <= -1.0 {
                    0.0
                } else if u <= 0.0 {
                    0.5 * (u + 1.0) * (u + 1.0)
                } else if u < 1.0 {
                    1.0 - 0.5 * (1.0 - u) * (1.0 - u)
                } else {
                    1.0
                }
            }
        }
    }
}

/// Triangular pseudo-derivative of the spike indicator.
#[inline]
pub fn surrogate_gradient(v: f64, params: &LifParams) -> f64 {
    (1.0 - (v - params.v_th).abs()).max(0.0)
}

/// Membrane potentials and the spikes they produced at the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

impl LifState {
    pub fn new(n: usize) -> Self {
        LifState {
            v: vec![0.0; n],
            s: vec![0.0; n],
        }
    }
}

/// One step: `v = decay * v_prev * (1 - s_prev) + I`, `s = 1[v >= v_th]`.
///
/// The `(1 - s_prev)` factor is a hard reset: a neuron that fired starts from
/// zero on the next step.
pub fn lif_step(state: &LifState, input: &[f64], params: &LifParams) -> LifState {
    lif_step_with(state, input, params, SpikeFn::Heaviside)
}

pub fn lif_step_with(state: &LifState, input: &[f64], params: &LifParams, f: SpikeFn) -> LifState {
    assert_eq!(
        state.v.len(),
        input.len(),
        "LIF state and input sizes differ"
    );
    let mut next = LifState::new(input.len());
    for i in 0..input.len() {
        let v = params.decay * state.v[i] * (1.0 - state.s[i]) + input[i];
        next.v[i] = v;
        next.s[i] = f.spike(v, params.v_th);
    }
    next
}
