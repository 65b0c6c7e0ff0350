//! Transforms based on signal modulation.

use std::f64::consts::{E, PI};

use rand::Rng;

use super::{Affine, NonlinearityKind};
use crate::autograd::{Graph, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Number of joint units inside a ResTSM block unless configured otherwise.
pub const DEFAULT_RESTSM_DEPTH: usize = 2;

/// Glorot gain of the branch maps at initialisation; small enough that every
/// unit starts close to the identity.
const INIT_GAIN: f64 = 0.1;

/// Which carrier branches are learned. A disabled branch contributes
/// `A = 1`, `w = 0` or `phi = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BranchMask {
    pub amplitude: bool,
    pub frequency: bool,
    pub phase: bool,
}

impl BranchMask {
    pub const NONE: BranchMask = BranchMask::new(false, false, false);
    pub const TAM: BranchMask = BranchMask::new(true, false, false);
    pub const TPM: BranchMask = BranchMask::new(false, false, true);
    pub const TFM: BranchMask = BranchMask::new(false, true, false);
    pub const TJM: BranchMask = BranchMask::new(true, true, true);

    pub const fn new(amplitude: bool, frequency: bool, phase: bool) -> Self {
        BranchMask {
            amplitude,
            frequency,
            phase,
        }
    }

    /// Masks outside the four named variants report as joint modulation.
    pub fn kind(&self) -> NonlinearityKind {
        match *self {
            BranchMask::TAM => NonlinearityKind::Tam,
            BranchMask::TPM => NonlinearityKind::Tpm,
            BranchMask::TFM => NonlinearityKind::Tfm,
            _ => NonlinearityKind::Tjm,
        }
    }
}

/// Learnable maps from the input to the carrier's amplitude, frequency and phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CarrierParams {
    pub mask: BranchMask,
    pub amplitude: Option<Affine>,
    pub frequency: Option<Affine>,
    pub phase: Option<Affine>,
    /// `phi = phase_scale * tanh(.)`.
    pub phase_scale: f64,
}

impl CarrierParams {
    /// All enabled branch weights and biases zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, channels: usize, mask: BranchMask) -> Self {
        let branch = |store: &mut ParamStore, on: bool, tag: &str| {
            on.then(|| Affine::zeros(store, &format!("{name}.{tag}"), channels))
        };
        CarrierParams {
            mask,
            amplitude: branch(store, mask.amplitude, "amp"),
            frequency: branch(store, mask.frequency, "freq"),
            phase: branch(store, mask.phase, "phase"),
            phase_scale: PI,
        }
    }

    /// Small random branch weights with the amplitude bias at
    /// `softplus^-1(1)`, so the unit starts near the identity map while every
    /// branch still receives a nonzero gradient.
    pub fn near_identity(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        mask: BranchMask,
        rng: &mut impl Rng,
    ) -> Self {
        let unit_amplitude_bias = (E - 1.0).ln();
        let amplitude = mask.amplitude.then(|| {
            Affine::random(store, &format!("{name}.amp"), channels, INIT_GAIN, unit_amplitude_bias, rng)
        });
        let frequency = mask
            .frequency
            .then(|| Affine::random(store, &format!("{name}.freq"), channels, INIT_GAIN, 0.0, rng));
        let phase = mask
            .phase
            .then(|| Affine::random(store, &format!("{name}.phase"), channels, INIT_GAIN, 0.0, rng));
        CarrierParams {
            mask,
            amplitude,
            frequency,
            phase,
            phase_scale: PI,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.amplitude, self.frequency, self.phase]
            .into_iter()
            .flatten()
            .flat_map(|a| a.ids())
            .collect()
    }
}

/// Evaluated branch outputs; `None` marks a disabled branch.
#[derive(Clone, Copy, Debug)]
pub struct Branches {
    pub amplitude: Option<Var>,
    pub frequency: Option<Var>,
    pub phase: Option<Var>,
}

impl Branches {
    pub const NONE: Branches = Branches {
        amplitude: None,
        frequency: None,
        phase: None,
    };

    pub fn amplitude(amplitude: Var) -> Self {
        Branches {
            amplitude: Some(amplitude),
            ..Branches::NONE
        }
    }
}

/// `A(x) = softplus(.)`, `w(x)` linear, `phi(x) = phase_scale * tanh(.)`.
pub fn branches(g: &mut Graph, params: &Bindings, x: Var, p: &CarrierParams) -> Result<Branches> {
    let amplitude = match p.amplitude {
        Some(a) => {
            let pre = a.apply(g, params, x)?;
            Some(g.unary(pre, UnaryOp::Softplus)?)
        }
        None => None,
    };
    let frequency = match p.frequency {
        Some(a) => Some(a.apply(g, params, x)?),
        None => None,
    };
    let phase = match p.phase {
        Some(a) => {
            let pre = a.apply(g, params, x)?;
            let t = g.tanh(pre)?;
            Some(g.scale(t, p.phase_scale)?)
        }
        None => None,
    };
    Ok(Branches {
        amplitude,
        frequency,
        phase,
    })
}

/// `A * cos(w + phi)`, or `None` when every branch is disabled (carrier ≡ 1).
fn carrier_of(g: &mut Graph, b: &Branches) -> Result<Option<Var>> {
    let angle = match (b.frequency, b.phase) {
        (Some(f), Some(p)) => Some(g.add(f, p)?),
        (f, p) => f.or(p),
    };
    let oscillation = match angle {
        Some(t) => Some(g.cos(t)?),
        None => None,
    };
    Ok(match (b.amplitude, oscillation) {
        (Some(a), Some(c)) => Some(g.mul(a, c)?),
        (a, c) => a.or(c),
    })
}

/// `x ⊙ A cos(w + phi)` for externally supplied branch values.
pub fn modulate(g: &mut Graph, x: Var, b: &Branches) -> Result<Var> {
    match carrier_of(g, b)? {
        Some(c) => g.mul(x, c),
        None => Ok(x),
    }
}

/// The carrier `A(x) cos(w(x) + phi(x))` itself.
pub fn carrier(g: &mut Graph, params: &Bindings, x: Var, p: &CarrierParams) -> Result<Var> {
    let b = branches(g, params, x, p)?;
    match carrier_of(g, &b)? {
        Some(c) => Ok(c),
        None => g.constant(Tensor::full(g.shape(x), 1.0)),
    }
}

pub fn tsm_forward(g: &mut Graph, params: &Bindings, x: Var, p: &CarrierParams) -> Result<Var> {
    let b = branches(g, params, x, p)?;
    modulate(g, x, &b)
}

/// Joint modulation units chained through channel maps, behind an identity shortcut.
#[derive(Clone, Debug, PartialEq)]
pub struct ResTsmParams {
    pub units: Vec<CarrierParams>,
    /// `units.len() - 1` maps applied between consecutive units.
    pub mixers: Vec<Affine>,
}

impl ResTsmParams {
    pub fn from_parts(units: Vec<CarrierParams>, mixers: Vec<Affine>) -> Result<Self> {
        if units.is_empty() || mixers.len() + 1 != units.len() {
            return Err(Error::config(format!(
                "ResTSM needs depth >= 1 and depth - 1 mixers, got {} units and {} mixers",
                units.len(),
                mixers.len()
            )));
        }
        Ok(ResTsmParams { units, mixers })
    }

    /// Near-identity joint units with zero mixers, so the block starts as `y = x`.
    pub fn near_identity(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("ResTSM depth must be at least 1"));
        }
        let mut units = Vec::with_capacity(depth);
        let mut mixers = Vec::with_capacity(depth - 1);
        for i in 0..depth {
            units.push(CarrierParams::near_identity(
                store,
                &format!("{name}.unit{i}"),
                channels,
                BranchMask::TJM,
                rng,
            ));
            if i + 1 < depth {
                mixers.push(Affine::zeros(store, &format!("{name}.mix{i}"), channels));
            }
        }
        Self::from_parts(units, mixers)
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (i, unit) in self.units.iter().enumerate() {
            ids.extend(unit.param_ids());
            if let Some(m) = self.mixers.get(i) {
                ids.extend(m.ids());
            }
        }
        ids
    }
}

/// `y = x + g(x)` with `g` the unit/mixer chain.
pub fn res_tsm_forward(g: &mut Graph, params: &Bindings, x: Var, p: &ResTsmParams) -> Result<Var> {
    let mut h = x;
    for (i, unit) in p.units.iter().enumerate() {
        h = tsm_forward(g, params, h, unit)?;
        if let Some(m) = p.mixers.get(i) {
            h = m.apply(g, params, h)?;
        }
    }
    g.add(x, h)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_3, LN_2};

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Shape;

    fn input(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(2, 3, 4, 4), |_| rng.gen_range(-3.0..3.0))
    }

    fn run(store: &ParamStore, x: &Tensor, f: impl Fn(&mut Graph, &Bindings, Var) -> Result<Var>) -> Tensor {
        let mut g = Graph::new();
        let params = store.bind(&mut g, false).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let y = f(&mut g, &params, xv).unwrap();
        g.value(y).clone()
    }

    fn set_bias(store: &mut ParamStore, a: Option<Affine>, value: f64) {
        store.get_mut(a.unwrap().bias).data_mut().fill(value);
    }

    #[test]
    fn zeroed_joint_carrier_is_ln2() {
        let mut store = ParamStore::new();
        let p = CarrierParams::zeroed(&mut store, "t", 3, BranchMask::TJM);
        let c = run(&store, &input(1), |g, b, x| carrier(g, b, x, &p));
        assert!(c.data().iter().all(|&v| (v - LN_2).abs() < 1e-15));
    }

    #[test]
    fn phase_only_carrier_extremes() {
        let mut store = ParamStore::new();
        let p = CarrierParams::zeroed(&mut store, "t", 3, BranchMask::TPM);
        let x = input(2);
        let c = run(&store, &x, |g, b, xv| carrier(g, b, xv, &p));
        assert!(c.data().iter().all(|&v| v == 1.0));
        let y = run(&store, &x, |g, b, xv| tsm_forward(g, b, xv, &p));
        assert_eq!(y, x);

        // tanh(40) rounds to 1, so the phase saturates at pi.
        set_bias(&mut store, p.phase, 40.0);
        let c = run(&store, &x, |g, b, xv| carrier(g, b, xv, &p));
        assert!(c.data().iter().all(|&v| v == -1.0));
        let y = run(&store, &x, |g, b, xv| tsm_forward(g, b, xv, &p));
        assert_eq!(y, x.map(|v| -v));
    }

    #[test]
    fn analytic_angle() {
        let mut store = ParamStore::new();
        let p = CarrierParams::zeroed(&mut store, "t", 1, BranchMask::TFM);
        set_bias(&mut store, p.frequency, FRAC_PI_3);
        let y = run(&store, &Tensor::scalar(2.0), |g, b, x| tsm_forward(g, b, x, &p));
        assert!((y.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = CarrierParams::near_identity(&mut store, "t", 3, BranchMask::TJM, &mut rng);
        store.get_mut(p.phase.unwrap().weight).scale_assign(100.0);
        let x = input(4).map(|v| v * 50.0);
        let mut g = Graph::new();
        let params = store.bind(&mut g, false).unwrap();
        let xv = g.constant(x).unwrap();
        let b = branches(&mut g, &params, xv, &p).unwrap();
        let phi = g.value(b.phase.unwrap());
        assert!(phi.data().iter().all(|v| v.abs() <= PI));
        assert!(phi.max_abs() > 3.0);
    }

    #[test]
    fn carrier_magnitude_without_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mask in [BranchMask::TPM, BranchMask::TFM, BranchMask::new(false, true, true)] {
            let mut store = ParamStore::new();
            let p = CarrierParams::near_identity(&mut store, "t", 3, mask, &mut rng);
            for id in p.param_ids() {
                store.get_mut(id).scale_assign(30.0);
            }
            let c = run(&store, &input(6), |g, b, x| carrier(g, b, x, &p));
            assert!(c.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn near_identity_starts_close_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = input(8);
        for mask in [BranchMask::TAM, BranchMask::TPM, BranchMask::TFM, BranchMask::TJM] {
            let mut store = ParamStore::new();
            let p = CarrierParams::near_identity(&mut store, "t", 3, mask, &mut rng);
            let y = run(&store, &x, |g, b, xv| tsm_forward(g, b, xv, &p));
            let rel = y.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                / x.max_abs();
            assert!(rel < 0.5, "{mask:?}: {rel}");
        }
    }

    #[test]
    fn restsm_shortcut_cases() {
        let x = input(9);

        // Depth 1 unit at identity: A = 1, w = phi = 0, so y = 2x.
        let mut store = ParamStore::new();
        let unit = CarrierParams::zeroed(&mut store, "r.unit0", 3, BranchMask::TJM);
        set_bias(&mut store, unit.amplitude, (E - 1.0).ln());
        let p = ResTsmParams::from_parts(vec![unit], vec![]).unwrap();
        let y = run(&store, &x, |g, b, xv| res_tsm_forward(g, b, xv, &p));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }

        // Phase at pi/2 with unit amplitude: carrier ~ 0, block reduces to the shortcut.
        let mut store = ParamStore::new();
        let mut units = Vec::new();
        let mut mixers = Vec::new();
        for i in 0..2 {
            let u = CarrierParams::zeroed(&mut store, &format!("r.unit{i}"), 3, BranchMask::TJM);
            set_bias(&mut store, u.amplitude, (E - 1.0).ln());
            set_bias(&mut store, u.phase, 0.5f64.atanh());
            units.push(u);
            if i == 0 {
                let m = Affine::zeros(&mut store, "r.mix0", 3);
                for c in 0..3 {
                    store.get_mut(m.weight).set([c, c, 0, 0], 1.0);
                }
                mixers.push(m);
            }
        }
        let p = ResTsmParams::from_parts(units, mixers).unwrap();
        let y = run(&store, &x, |g, b, xv| res_tsm_forward(g, b, xv, &p));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn restsm_depth_validation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ResTsmParams::near_identity(&mut store, "r", 3, 0, &mut rng).is_err());
        let u = CarrierParams::zeroed(&mut store, "u", 3, BranchMask::TJM);
        assert!(ResTsmParams::from_parts(vec![u.clone(), u], vec![]).is_err());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let p = CarrierParams::zeroed(&mut store, "t", 4, BranchMask::TPM);
        let mut g = Graph::new();
        let params = store.bind(&mut g, false).unwrap();
        let x = g.constant(input(1)).unwrap();
        assert!(matches!(tsm_forward(&mut g, &params, x, &p), Err(Error::Config(_))));
    }
}
