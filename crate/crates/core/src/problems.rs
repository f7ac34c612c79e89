//! Problem data and the built-in manufactured test problems.
//!
//! A manufactured problem is fixed by closed-form state and co-state fields.
//! Its source and desired state are then chosen so that these fields solve the
//! optimality system exactly:
//!
//! ```text
//! G   = y_t - μΔy + b·∇y - ū,       ū = Π_[u_a, u_b](-p / λ)
//! y_d = y + p_t + μΔp + b·∇p
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;

/// A space-time field with closed-form derivatives.
pub trait Field: Send + Sync {
    fn value(&self, x: [f64; 2], t: f64) -> f64;
    fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2];
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64;
    fn dt(&self, x: [f64; 2], t: f64) -> f64;
}

/// Exact optimal triple of a manufactured problem.
#[derive(Clone)]
pub struct ExactSolution {
    pub state: Arc<dyn Field>,
    pub costate: Arc<dyn Field>,
    lambda: f64,
    bounds: (f64, f64),
}

impl ExactSolution {
    pub fn control(&self, x: [f64; 2], t: f64) -> f64 {
        (-self.costate.value(x, t) / self.lambda).clamp(self.bounds.0, self.bounds.1)
    }

    /// Gradient of the control where the clamp is inactive, zero elsewhere.
    pub fn control_grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let raw = -self.costate.value(x, t) / self.lambda;
        if raw <= self.bounds.0 || raw >= self.bounds.1 {
            [0.0, 0.0]
        } else {
            let g = self.costate.grad(x, t);
            [-g[0] / self.lambda, -g[1] / self.lambda]
        }
    }
}

/// Data of the optimal control problem on the unit square with homogeneous
/// Dirichlet conditions.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub mu: f64,
    pub lambda: f64,
    pub velocity: VectorFn,
    /// True when `velocity` does not depend on time.
    pub autonomous: bool,
    pub source: ScalarFn,
    pub desired: ScalarFn,
    pub initial: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
    /// Gradient of the initial state, needed for its Ritz projection.
    pub initial_grad: Option<Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>>,
    pub bounds: (f64, f64),
    pub horizon: f64,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("lambda", &self.lambda)
            .field("bounds", &self.bounds)
            .field("horizon", &self.horizon)
            .field("autonomous", &self.autonomous)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

/// Coefficients shared by every problem family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub mu: f64,
    pub lambda: f64,
    pub velocity: [f64; 2],
    pub bounds: (f64, f64),
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return Err(Error::invalid(format!("bounds must satisfy u_a < u_b, got {:?}", self.bounds)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// Builds the problem whose exact solution is `(state, costate)`.
    pub fn manufactured(
        name: &str,
        mu: f64,
        lambda: f64,
        velocity: VectorFn,
        autonomous: bool,
        bounds: (f64, f64),
        horizon: f64,
        state: Arc<dyn Field>,
        costate: Arc<dyn Field>,
    ) -> Result<Self> {
        let exact = ExactSolution {
            state: Arc::clone(&state),
            costate: Arc::clone(&costate),
            lambda,
            bounds,
        };
        let source = {
            let (y, b, ex) = (Arc::clone(&state), Arc::clone(&velocity), exact.clone());
            Arc::new(move |x: [f64; 2], t: f64| {
                let g = y.grad(x, t);
                let v = b(x, t);
                y.dt(x, t) - mu * y.laplacian(x, t) + v[0] * g[0] + v[1] * g[1] - ex.control(x, t)
            }) as ScalarFn
        };
        let desired = {
            let (y, p, b) = (Arc::clone(&state), Arc::clone(&costate), Arc::clone(&velocity));
            Arc::new(move |x: [f64; 2], t: f64| {
                let g = p.grad(x, t);
                let v = b(x, t);
                y.value(x, t) + p.dt(x, t) + mu * p.laplacian(x, t) + v[0] * g[0] + v[1] * g[1]
            }) as ScalarFn
        };
        let y0 = Arc::clone(&state);
        let y0g = Arc::clone(&state);
        let spec = Self {
            name: name.to_string(),
            mu,
            lambda,
            velocity,
            autonomous,
            source,
            desired,
            initial: Arc::new(move |x| y0.value(x, 0.0)),
            initial_grad: Some(Arc::new(move |x| y0g.grad(x, 0.0))),
            bounds,
            horizon,
            exact: Some(exact),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Problem with vanishing source, desired state and initial state.
    pub fn zero(c: Coefficients) -> Result<Self> {
        let b = c.velocity;
        let spec = Self {
            name: "zero".into(),
            mu: c.mu,
            lambda: c.lambda,
            velocity: Arc::new(move |_, _| b),
            autonomous: true,
            source: Arc::new(|_, _| 0.0),
            desired: Arc::new(|_, _| 0.0),
            initial: Arc::new(|_| 0.0),
            initial_grad: Some(Arc::new(|_| [0.0, 0.0])),
            bounds: c.bounds,
            horizon: c.horizon,
            exact: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The smooth sine solution with user supplied constant coefficients.
    pub fn custom(c: Coefficients) -> Result<Self> {
        let b = c.velocity;
        Self::manufactured(
            "custom",
            c.mu,
            c.lambda,
            Arc::new(move |_, _| b),
            true,
            c.bounds,
            c.horizon,
            Arc::new(SineState),
            Arc::new(SineCostate { horizon: c.horizon }),
        )
    }
}

/// Returns a built-in problem; `horizon` overrides the final time.
pub fn builtin_problem(name: &str, horizon: Option<f64>) -> Result<ProblemSpec> {
    match name {
        "convergence" => {
            let t = horizon.unwrap_or(1.0);
            ProblemSpec::manufactured(
                name,
                1.0,
                1.0,
                Arc::new(|_, _| [2.0, 3.0]),
                true,
                (-1.0, 1.0),
                t,
                Arc::new(SineState),
                Arc::new(SineCostate { horizon: t }),
            )
        }
        "interior_layer" => {
            let t = horizon.unwrap_or(0.1);
            let mu: f64 = 1e-4;
            let profile = CircleLayer { c: 2.0 / mu.sqrt() };
            ProblemSpec::manufactured(
                name,
                mu,
                0.1,
                Arc::new(|x, _| [x[0], -x[1]]),
                true,
                (-5.0, -1.0),
                t,
                Arc::new(Separable {
                    profile: profile,
                    time: TimeFactor::Decay,
                }),
                Arc::new(Separable {
                    profile,
                    time: TimeFactor::Remaining(t),
                }),
            )
        }
        "boundary_layer" => {
            let t = horizon.unwrap_or(0.1);
            let mu: f64 = 1e-8;
            let a = PI / 4.0;
            ProblemSpec::manufactured(
                name,
                mu,
                1.0,
                Arc::new(move |_, _| [a.cos(), a.sin()]),
                true,
                (-2.0, 2.0),
                t,
                Arc::new(Separable {
                    profile: CornerLayer { mu, mirrored: false },
                    time: TimeFactor::Decay,
                }),
                Arc::new(Separable {
                    profile: CornerLayer { mu, mirrored: true },
                    time: TimeFactor::Remaining(t),
                }),
            )
        }
        "traveling_wave" => {
            let t = horizon.unwrap_or(0.3);
            let mu: f64 = 1e-8;
            let a = PI / 3.0;
            ProblemSpec::manufactured(
                name,
                mu,
                1.0,
                Arc::new(move |_, _| [a.cos(), a.sin()]),
                true,
                (-2.0, 2.0),
                t,
                Arc::new(TravelingFront { eps: mu.sqrt() }),
                Arc::new(Separable {
                    profile: Sine { scale: -1.0 },
                    time: TimeFactor::Remaining(t),
                }),
            )
        }
        other => Err(Error::invalid(format!("unknown problem '{other}'"))),
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["convergence", "interior_layer", "boundary_layer", "traveling_wave"];

fn sine(x: [f64; 2]) -> (f64, [f64; 2]) {
    let (sx, cx) = (PI * x[0]).sin_cos();
    let (sy, cy) = (PI * x[1]).sin_cos();
    (sx * sy, [PI * cx * sy, PI * sx * cy])
}

/// `y = t sin(πx) sin(πy)`.
pub struct SineState;

impl Field for SineState {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        t * sine(x).0
    }
    fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let g = sine(x).1;
        [t * g[0], t * g[1]]
    }
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        -2.0 * PI * PI * t * sine(x).0
    }
    fn dt(&self, x: [f64; 2], _t: f64) -> f64 {
        sine(x).0
    }
}

/// `p = -(T - t)² sin(πx) sin(πy)`.
pub struct SineCostate {
    pub horizon: f64,
}

impl Field for SineCostate {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        -(self.horizon - t).powi(2) * sine(x).0
    }
    fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let c = -(self.horizon - t).powi(2);
        let g = sine(x).1;
        [c * g[0], c * g[1]]
    }
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        2.0 * PI * PI * (self.horizon - t).powi(2) * sine(x).0
    }
    fn dt(&self, x: [f64; 2], t: f64) -> f64 {
        2.0 * (self.horizon - t) * sine(x).0
    }
}

/// A time-independent spatial profile with value, gradient and Laplacian.
pub trait Profile: Send + Sync {
    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64);
}

#[derive(Clone, Copy, Debug)]
pub enum TimeFactor {
    /// `e^{-t}`
    Decay,
    /// `T - t`
    Remaining(f64),
}

impl TimeFactor {
    fn eval(self, t: f64) -> (f64, f64) {
        match self {
            TimeFactor::Decay => {
                let e = (-t).exp();
                (e, -e)
            }
            TimeFactor::Remaining(h) => (h - t, -1.0),
        }
    }
}

/// `θ(t) φ(x)`.
pub struct Separable<P> {
    pub profile: P,
    pub time: TimeFactor,
}

impl<P: Profile> Field for Separable<P> {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        self.time.eval(t).0 * self.profile.eval(x).0
    }
    fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let th = self.time.eval(t).0;
        let g = self.profile.eval(x).1;
        [th * g[0], th * g[1]]
    }
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        self.time.eval(t).0 * self.profile.eval(x).2
    }
    fn dt(&self, x: [f64; 2], t: f64) -> f64 {
        self.time.eval(t).1 * self.profile.eval(x).0
    }
}

/// `scale · sin(πx) sin(πy)`.
#[derive(Clone, Copy, Debug)]
pub struct Sine {
    pub scale: f64,
}

impl Profile for Sine {
    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let (s, g) = sine(x);
        let a = self.scale;
        (a * s, [a * g[0], a * g[1]], -2.0 * PI * PI * a * s)
    }
}

/// `16 x(1-x) y(1-y) (1/2 + atan(c ψ)/π)` with `ψ = 1/16 - |x - (1/2, 1/2)|²`.
#[derive(Clone, Copy, Debug)]
pub struct CircleLayer {
    pub c: f64,
}

impl Profile for CircleLayer {
    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let (px, py) = (x[0], x[1]);
        let w = 16.0 * px * (1.0 - px) * py * (1.0 - py);
        let wg = [16.0 * (1.0 - 2.0 * px) * py * (1.0 - py), 16.0 * px * (1.0 - px) * (1.0 - 2.0 * py)];
        let wl = -32.0 * (py * (1.0 - py) + px * (1.0 - px));

        let (dx, dy) = (px - 0.5, py - 0.5);
        let psi = 1.0 / 16.0 - dx * dx - dy * dy;
        let psig = [-2.0 * dx, -2.0 * dy];
        let c = self.c;
        let den = 1.0 + c * c * psi * psi;
        let g = 0.5 + (c * psi).atan() / PI;
        let a = c / (PI * den);
        let gg = [a * psig[0], a * psig[1]];
        let grad2 = psig[0] * psig[0] + psig[1] * psig[1];
        let gl = -4.0 * a - 2.0 * c * c * psi * a * grad2 / den;

        let value = w * g;
        let grad = [wg[0] * g + w * gg[0], wg[1] * g + w * gg[1]];
        let lap = wl * g + 2.0 * (wg[0] * gg[0] + wg[1] * gg[1]) + w * gl;
        (value, grad, lap)
    }
}

/// `η(x) η(y)`, or `η(1-x) η(1-y)` when mirrored, with
/// `η(s) = s - (e^{(s-1)/μ} - e^{-1/μ}) / (1 - e^{-1/μ})`.
#[derive(Clone, Copy, Debug)]
pub struct CornerLayer {
    pub mu: f64,
    pub mirrored: bool,
}

impl CornerLayer {
    fn eta(&self, s: f64) -> (f64, f64, f64) {
        let mu = self.mu;
        let tail = (-1.0 / mu).exp();
        let den = 1.0 - tail;
        let e = ((s - 1.0) / mu).exp();
        (s - (e - tail) / den, 1.0 - e / (mu * den), -e / (mu * mu * den))
    }
}

impl Profile for CornerLayer {
    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let (sign, sx, sy) = if self.mirrored {
            (-1.0, 1.0 - x[0], 1.0 - x[1])
        } else {
            (1.0, x[0], x[1])
        };
        let (ex, dex, ddex) = self.eta(sx);
        let (ey, dey, ddey) = self.eta(sy);
        (ex * ey, [sign * dex * ey, sign * ex * dey], ddex * ey + ex * ddey)
    }
}

/// `½ sin(πx) sin(πy) (tanh((x + y - t - ½)/ε) + 1)`.
pub struct TravelingFront {
    pub eps: f64,
}

impl TravelingFront {
    fn front(&self, x: [f64; 2], t: f64) -> (f64, f64, f64) {
        let th = ((x[0] + x[1] - t - 0.5) / self.eps).tanh();
        let sech2 = 1.0 - th * th;
        (0.5 * (th + 1.0), 0.5 * sech2, -th * sech2)
    }
}

impl Field for TravelingFront {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        sine(x).0 * self.front(x, t).0
    }
    fn grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let (s, sg) = sine(x);
        let (h, dh, _) = self.front(x, t);
        let d = s * dh / self.eps;
        [sg[0] * h + d, sg[1] * h + d]
    }
    fn laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        let (s, sg) = sine(x);
        let (h, dh, ddh) = self.front(x, t);
        let e = self.eps;
        -2.0 * PI * PI * s * h + 2.0 * (sg[0] + sg[1]) * dh / e + 2.0 * s * ddh / (e * e)
    }
    fn dt(&self, x: [f64; 2], t: f64) -> f64 {
        -sine(x).0 * self.front(x, t).1 / self.eps
    }
}
