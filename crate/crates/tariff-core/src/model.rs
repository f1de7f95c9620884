//! Model primitives: CRRA utility, time-of-use production cost, type
//! density and reservation utility, plus the type-side kernels shared by
//! both solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TariffError};
use crate::numerics::{
    bisect, integrate_split, interp_linear, linspace, positive_part, segment_index,
    trapezoid_weights,
};

/// A time profile given either as a constant or as samples on the time grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Samples(Vec<f64>),
}

impl Profile {
    pub fn scaled(&self, s: f64) -> Profile {
        match self {
            Profile::Constant(v) => Profile::Constant(v * s),
            Profile::Samples(v) => Profile::Samples(v.iter().map(|x| x * s).collect()),
        }
    }
}

/// Production cost `K(t, c) = k(t) * shape(c)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostForm {
    /// `shape(c) = c^n / n`.
    Power { n: f64 },
    /// Samples of `shape`, `shape'` on an increasing grid starting at 0.
    /// `shape'` is interpolated linearly and `shape` is its integral.
    Tabulated {
        c: Vec<f64>,
        cost: Vec<f64>,
        marginal: Vec<f64>,
    },
}

/// Taste weight `g(x)` multiplying the consumption utility.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TasteForm {
    /// `g(x) = x` when `gamma > 0`, `g(x) = 1 - x` when `gamma < 0`.
    #[default]
    Canonical,
    Tabulated { x: Vec<f64>, g: Vec<f64>, dg: Vec<f64> },
}

/// Density of types on `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityForm {
    #[default]
    Uniform,
    /// Piecewise-linear density through `(x_i, f_i)`.
    Tabulated { x: Vec<f64>, f: Vec<f64> },
}

/// Outside option of each type.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reservation {
    Constant { h: f64 },
    /// `level + scale * sqrt(x)`
    Sqrt { level: f64, scale: f64 },
    /// `level + scale * x^exponent`
    Power { level: f64, scale: f64, exponent: f64 },
    /// `level + scale * ln(x + offset)`
    Log { level: f64, scale: f64, offset: f64 },
    /// Samples of `H` and `H'`, interpolated linearly.
    Tabulated { x: Vec<f64>, h: Vec<f64>, dh: Vec<f64> },
}

impl Reservation {
    pub fn is_constant(&self) -> bool {
        matches!(self, Reservation::Constant { .. })
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Reservation::Constant { h } => *h,
            Reservation::Sqrt { level, scale } => level + scale * x.max(0.0).sqrt(),
            Reservation::Power {
                level,
                scale,
                exponent,
            } => level + scale * x.max(0.0).powf(*exponent),
            Reservation::Log {
                level,
                scale,
                offset,
            } => level + scale * (x + offset).ln(),
            Reservation::Tabulated { x: xs, h, .. } => interp_linear(xs, h, x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Reservation::Constant { .. } => 0.0,
            Reservation::Sqrt { scale, .. } => {
                if x <= 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * scale / x.sqrt()
                }
            }
            Reservation::Power {
                scale, exponent, ..
            } => {
                if x <= 0.0 && *exponent < 1.0 {
                    f64::INFINITY
                } else {
                    scale * exponent * x.max(0.0).powf(exponent - 1.0)
                }
            }
            Reservation::Log { scale, offset, .. } => scale / (x + offset),
            Reservation::Tabulated { x: xs, dh, .. } => interp_linear(xs, dh, x),
        }
    }

    /// The same outside option multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Reservation {
        match self.clone() {
            Reservation::Constant { h } => Reservation::Constant { h: h * s },
            Reservation::Sqrt { level, scale } => Reservation::Sqrt {
                level: level * s,
                scale: scale * s,
            },
            Reservation::Power {
                level,
                scale,
                exponent,
            } => Reservation::Power {
                level: level * s,
                scale: scale * s,
                exponent,
            },
            Reservation::Log {
                level,
                scale,
                offset,
            } => Reservation::Log {
                level: level * s,
                scale: scale * s,
                offset,
            },
            Reservation::Tabulated { x, h, dh } => Reservation::Tabulated {
                x,
                h: h.iter().map(|v| v * s).collect(),
                dh: dh.iter().map(|v| v * s).collect(),
            },
        }
    }
}

/// Serializable description of a model, validated by [`ModelParams::new`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub gamma: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Explicit time nodes; defaults to `time_nodes` equispaced nodes.
    #[serde(default)]
    pub time_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub time_nodes: Option<usize>,
    pub phi: Profile,
    pub k: Profile,
    pub cost: CostForm,
    #[serde(default)]
    pub taste: TasteForm,
    #[serde(default)]
    pub density: DensityForm,
    pub reservation: Reservation,
}

fn default_horizon() -> f64 {
    1.0
}

impl ModelSpec {
    /// Constant profiles, power cost, canonical taste, uniform density.
    pub fn power(gamma: f64, n: f64, reservation: Reservation) -> Self {
        ModelSpec {
            gamma,
            horizon: 1.0,
            time_grid: None,
            time_nodes: None,
            phi: Profile::Constant(1.0),
            k: Profile::Constant(1.0),
            cost: CostForm::Power { n },
            taste: TasteForm::Canonical,
            density: DensityForm::Uniform,
            reservation,
        }
    }
}

/// How type-side integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Antiderivatives in closed form; canonical taste with uniform density only.
    ClosedForm,
    Quadrature,
}

/// Which type component a kernel refers to: the low types `[0, b0]` or the
/// high types `[a0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
struct CostTable {
    c: Vec<f64>,
    marginal: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CostTable {
    fn new(c: &[f64], cost: &[f64], marginal: &[f64]) -> Result<Self> {
        let n = c.len();
        if n < 2 || cost.len() != n || marginal.len() != n {
            return Err(TariffError::Config(
                "tabulated cost needs matching arrays of length >= 2".into(),
            ));
        }
        if c[0] != 0.0 {
            return Err(TariffError::Config("tabulated cost must start at c = 0".into()));
        }
        if c.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TariffError::Config("tabulated cost grid must increase".into()));
        }
        if marginal[0] < 0.0 || marginal.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TariffError::Config(
                "tabulated marginal cost must be nonnegative and strictly increasing".into(),
            ));
        }
        let mut cumulative = vec![cost[0]];
        for i in 0..n - 1 {
            let h = c[i + 1] - c[i];
            cumulative.push(cumulative[i] + 0.5 * h * (marginal[i] + marginal[i + 1]));
        }
        let scale = cumulative.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if cumulative
            .iter()
            .zip(cost)
            .any(|(a, b)| (a - b).abs() > 1e-6 * scale)
        {
            return Err(TariffError::Config(
                "tabulated cost is not the integral of the tabulated marginal cost".into(),
            ));
        }
        Ok(CostTable {
            c: c.to_vec(),
            marginal: marginal.to_vec(),
            cumulative,
        })
    }

    fn marginal(&self, c: f64) -> f64 {
        interp_linear(&self.c, &self.marginal, c)
    }

    fn cost(&self, c: f64) -> f64 {
        let i = segment_index(&self.c, c);
        let d = c - self.c[i];
        let slope = (self.marginal[i + 1] - self.marginal[i]) / (self.c[i + 1] - self.c[i]);
        self.cumulative[i] + self.marginal[i] * d + 0.5 * slope * d * d
    }

    fn c_max(&self) -> f64 {
        *self.c.last().unwrap()
    }
}

#[derive(Debug, Clone)]
struct DensityTable {
    x: Vec<f64>,
    f: Vec<f64>,
    cdf: Vec<f64>,
}

impl DensityTable {
    fn new(x: &[f64], f: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || f.len() != n {
            return Err(TariffError::Config("tabulated density needs matching arrays".into()));
        }
        if x[0] != 0.0 || x[n - 1] != 1.0 || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TariffError::Config(
                "tabulated density grid must increase from 0 to 1".into(),
            ));
        }
        if f.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(TariffError::Config("density must be nonnegative".into()));
        }
        let mass: f64 = x
            .windows(2)
            .zip(f.windows(2))
            .map(|(xw, fw)| 0.5 * (xw[1] - xw[0]) * (fw[0] + fw[1]))
            .sum();
        if (mass - 1.0).abs() > 1e-4 {
            return Err(TariffError::Config(format!(
                "density integrates to {mass}, not 1"
            )));
        }
        let f: Vec<f64> = f.iter().map(|v| v / mass).collect();
        let mut cdf = vec![0.0];
        for i in 0..n - 1 {
            cdf.push(cdf[i] + 0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]));
        }
        Ok(DensityTable {
            x: x.to_vec(),
            f,
            cdf,
        })
    }

    fn density(&self, x: f64) -> f64 {
        interp_linear(&self.x, &self.f, x.clamp(0.0, 1.0))
    }

    fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let i = segment_index(&self.x, x);
        let d = x - self.x[i];
        let slope = (self.f[i + 1] - self.f[i]) / (self.x[i + 1] - self.x[i]);
        self.cdf[i] + self.f[i] * d + 0.5 * slope * d * d
    }
}

/// Validated model. Time-dependent quantities are stored on the time grid;
/// off-grid times are interpolated linearly.
#[derive(Debug, Clone)]
pub struct ModelParams {
    spec: ModelSpec,
    time_grid: Vec<f64>,
    time_weights: Vec<f64>,
    phi: Vec<f64>,
    k: Vec<f64>,
    cost_table: Option<CostTable>,
    density_table: Option<DensityTable>,
    breaks: Vec<f64>,
}

fn expand_profile(p: &Profile, n: usize, name: &str) -> Result<Vec<f64>> {
    let v = match p {
        Profile::Constant(c) => vec![*c; n],
        Profile::Samples(s) => {
            if s.len() != n {
                return Err(TariffError::Config(format!(
                    "{name} has {} samples but the time grid has {n} nodes",
                    s.len()
                )));
            }
            s.clone()
        }
    };
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(TariffError::Config(format!("{name} must be strictly positive")));
    }
    Ok(v)
}

impl ModelParams {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let gamma = spec.gamma;
        if !gamma.is_finite() || gamma == 0.0 || gamma >= 1.0 {
            return Err(TariffError::Config(format!(
                "gamma: must satisfy gamma != 0 and gamma < 1, got {gamma}"
            )));
        }
        if !(spec.horizon > 0.0) {
            return Err(TariffError::Config("horizon must be positive".into()));
        }
        let time_grid = match (&spec.time_grid, spec.time_nodes) {
            (Some(g), _) => g.clone(),
            (None, Some(n)) if n >= 2 => linspace(0.0, spec.horizon, n),
            (None, Some(_)) => {
                return Err(TariffError::Config("time_nodes must be at least 2".into()))
            }
            (None, None) => vec![0.0, spec.horizon],
        };
        if time_grid.len() < 2
            || time_grid[0] != 0.0
            || (time_grid[time_grid.len() - 1] - spec.horizon).abs() > 1e-12
            || time_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(TariffError::Config(
                "time grid must increase from 0 to the horizon".into(),
            ));
        }
        let n_t = time_grid.len();
        let phi = expand_profile(&spec.phi, n_t, "phi")?;
        let k = expand_profile(&spec.k, n_t, "k")?;

        let cost_table = match &spec.cost {
            CostForm::Power { n } => {
                if !(*n > 1.0) || !n.is_finite() {
                    return Err(TariffError::Config(format!("cost exponent n must exceed 1, got {n}")));
                }
                None
            }
            CostForm::Tabulated { c, cost, marginal } => Some(CostTable::new(c, cost, marginal)?),
        };

        let density_table = match &spec.density {
            DensityForm::Uniform => None,
            DensityForm::Tabulated { x, f } => Some(DensityTable::new(x, f)?),
        };

        if let TasteForm::Tabulated { x, g, dg } = &spec.taste {
            if x.len() < 2 || g.len() != x.len() || dg.len() != x.len() {
                return Err(TariffError::Config("tabulated taste needs matching arrays".into()));
            }
            if x[0] != 0.0 || x[x.len() - 1] != 1.0 || x.windows(2).any(|w| w[1] <= w[0]) {
                return Err(TariffError::Config(
                    "tabulated taste grid must increase from 0 to 1".into(),
                ));
            }
            if g.iter().any(|v| *v < 0.0) {
                return Err(TariffError::Config("taste weight must be nonnegative".into()));
            }
            let wrong_sign = if gamma > 0.0 {
                dg.iter().any(|d| *d <= 0.0)
            } else {
                dg.iter().any(|d| *d >= 0.0)
            };
            if wrong_sign {
                return Err(TariffError::Config(
                    "taste derivative must be positive for gamma > 0 and negative for gamma < 0"
                        .into(),
                ));
            }
        }

        validate_reservation(gamma, &spec.reservation)?;

        let time_weights = trapezoid_weights(&time_grid);
        let mut params = ModelParams {
            spec,
            time_grid,
            time_weights,
            phi,
            k,
            cost_table,
            density_table,
            breaks: Vec::new(),
        };
        params.breaks = params.compute_breaks();
        Ok(params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.time_weights
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn reservation(&self) -> &Reservation {
        &self.spec.reservation
    }

    /// Exponent of the power cost, if the cost is a power.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.spec.cost {
            CostForm::Power { n } => Some(n),
            CostForm::Tabulated { .. } => None,
        }
    }

    /// Canonical taste, uniform density, power cost.
    pub fn is_power_canonical(&self) -> bool {
        self.power_exponent().is_some() && self.is_canonical_uniform()
    }

    pub fn is_canonical_uniform(&self) -> bool {
        matches!(self.spec.taste, TasteForm::Canonical)
            && matches!(self.spec.density, DensityForm::Uniform)
    }

    /// Integral over the horizon of samples on the time grid.
    pub fn time_integral(&self, values: &[f64]) -> f64 {
        self.time_weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn phi_at(&self, t: f64) -> f64 {
        interp_linear(&self.time_grid, &self.phi, t)
    }

    pub fn k_at(&self, t: f64) -> f64 {
        interp_linear(&self.time_grid, &self.k, t)
    }

    pub fn with_spec<F: FnOnce(&mut ModelSpec)>(&self, edit: F) -> Result<ModelParams> {
        let mut spec = self.spec.clone();
        edit(&mut spec);
        ModelParams::new(spec)
    }

    // ----- type side -----

    pub fn taste(&self, x: f64) -> f64 {
        match &self.spec.taste {
            TasteForm::Canonical => {
                if self.gamma() > 0.0 {
                    x
                } else {
                    1.0 - x
                }
            }
            TasteForm::Tabulated { x: xs, g, .. } => interp_linear(xs, g, x),
        }
    }

    pub fn taste_derivative(&self, x: f64) -> f64 {
        match &self.spec.taste {
            TasteForm::Canonical => {
                if self.gamma() > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            TasteForm::Tabulated { x: xs, dg, .. } => interp_linear(xs, dg, x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match &self.density_table {
            None => 1.0,
            Some(t) => t.density(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match &self.density_table {
            None => x.clamp(0.0, 1.0),
            Some(t) => t.cdf(x),
        }
    }

    /// Virtual-surplus bracket of a component: `g f + g' F` on the lower
    /// component, `g f + g' F - g'` on the upper one.
    pub fn bracket(&self, branch: Branch, x: f64) -> f64 {
        let lower = self.taste(x) * self.density(x) + self.taste_derivative(x) * self.cdf(x);
        match branch {
            Branch::Lower => lower,
            Branch::Upper => lower - self.taste_derivative(x),
        }
    }

    /// Integrand of the aggregate-demand factor: `(b^+ / f^gamma)^(1/(1-gamma))`.
    pub fn demand_density(&self, branch: Branch, x: f64) -> f64 {
        let b = positive_part(self.bracket(branch, x));
        let f = self.density(x);
        if b == 0.0 || f <= 0.0 {
            return 0.0;
        }
        let gamma = self.gamma();
        (b / f.powf(gamma)).powf(1.0 / (1.0 - gamma))
    }

    /// Shape of the marginal indirect utility: `g' (b^+ / f)^(gamma/(1-gamma))`.
    /// Zero brackets give zero for `gamma > 0`; for `gamma < 0` they give an
    /// infinite value, reported here as zero because such types are never
    /// served.
    pub fn slope_shape(&self, branch: Branch, x: f64) -> f64 {
        let b = positive_part(self.bracket(branch, x));
        let f = self.density(x);
        if b == 0.0 || f <= 0.0 {
            return 0.0;
        }
        let gamma = self.gamma();
        self.taste_derivative(x) * (b / f).powf(gamma / (1.0 - gamma))
    }

    /// Kinks and knots of the type-side integrands, used to split quadrature.
    pub fn type_breaks(&self) -> &[f64] {
        &self.breaks
    }

    fn compute_breaks(&self) -> Vec<f64> {
        let mut out = vec![0.5];
        if let DensityForm::Tabulated { x, .. } = &self.spec.density {
            out.extend(x.iter().copied());
        }
        if let TasteForm::Tabulated { x, .. } = &self.spec.taste {
            out.extend(x.iter().copied());
        }
        let grid = linspace(0.0, 1.0, 2049);
        for branch in [Branch::Lower, Branch::Upper] {
            let vals: Vec<f64> = grid.iter().map(|&x| self.bracket(branch, x)).collect();
            for i in 0..grid.len() - 1 {
                if (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
                    if let Ok(r) = bisect(|x| self.bracket(branch, x), grid[i], grid[i + 1], 1e-15)
                    {
                        out.push(r);
                    }
                }
            }
        }
        out.retain(|v| *v > 0.0 && *v < 1.0);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        out
    }

    /// `int_a^b demand_density` by quadrature.
    pub fn demand_integral(&self, branch: Branch, a: f64, b: f64) -> f64 {
        integrate_split(|x| self.demand_density(branch, x), a, b, &self.breaks)
    }

    /// `int_a^b slope_shape` by quadrature.
    pub fn slope_shape_integral(&self, branch: Branch, a: f64, b: f64) -> f64 {
        integrate_split(|x| self.slope_shape(branch, x), a, b, &self.breaks)
    }

    /// Slope of the (linear) bracket for canonical taste and uniform density.
    fn canonical_bracket_slope(&self) -> f64 {
        if self.gamma() > 0.0 {
            2.0
        } else {
            -2.0
        }
    }

    /// Closed-form antiderivative of `demand_density`; canonical uniform only.
    fn demand_antiderivative(&self, branch: Branch, x: f64) -> f64 {
        let gamma = self.gamma();
        let b = positive_part(self.bracket(branch, x));
        let db = self.canonical_bracket_slope();
        b.powf((2.0 - gamma) / (1.0 - gamma)) * (1.0 - gamma) / ((2.0 - gamma) * db)
    }

    /// Closed-form antiderivative of `slope_shape`; canonical uniform only.
    fn slope_shape_antiderivative(&self, branch: Branch, x: f64) -> f64 {
        let gamma = self.gamma();
        let b = positive_part(self.bracket(branch, x));
        let db = self.canonical_bracket_slope();
        self.taste_derivative(x) * (1.0 - gamma) * b.powf(1.0 / (1.0 - gamma)) / db
    }

    fn closed_form_available(&self, mode: KernelMode) -> bool {
        mode == KernelMode::ClosedForm && self.is_canonical_uniform()
    }

    pub fn demand_integral_with(&self, mode: KernelMode, branch: Branch, a: f64, b: f64) -> f64 {
        if self.closed_form_available(mode) {
            self.demand_antiderivative(branch, b) - self.demand_antiderivative(branch, a)
        } else {
            self.demand_integral(branch, a, b)
        }
    }

    pub fn slope_shape_integral_with(
        &self,
        mode: KernelMode,
        branch: Branch,
        a: f64,
        b: f64,
    ) -> f64 {
        if self.closed_form_available(mode) {
            self.slope_shape_antiderivative(branch, b) - self.slope_shape_antiderivative(branch, a)
        } else {
            self.slope_shape_integral(branch, a, b)
        }
    }

    // ----- utility and cost -----

    /// `u(t, x, c) = g(x) phi(t) c^gamma / gamma`.
    pub fn eval_utility(&self, t: f64, x: f64, c: f64) -> Result<f64> {
        self.utility_with_phi(self.phi_at(t), x, c)
    }

    pub fn utility_at(&self, ti: usize, x: f64, c: f64) -> Result<f64> {
        self.utility_with_phi(self.phi[ti], x, c)
    }

    fn utility_with_phi(&self, phi: f64, x: f64, c: f64) -> Result<f64> {
        let gamma = self.gamma();
        if (gamma < 0.0 && c <= 0.0) || c < 0.0 || c.is_nan() {
            return Err(TariffError::Domain(format!(
                "utility undefined at c = {c} for gamma = {gamma}"
            )));
        }
        let g = self.taste(x);
        if g == 0.0 {
            return Ok(0.0);
        }
        Ok(g * phi * c.powf(gamma) / gamma)
    }

    pub fn eval_cost(&self, t: f64, c: f64) -> Result<f64> {
        check_consumption(c)?;
        Ok(self.k_at(t) * self.cost_shape(c))
    }

    pub fn eval_marginal_cost(&self, t: f64, c: f64) -> Result<f64> {
        check_consumption(c)?;
        Ok(self.k_at(t) * self.marginal_shape(c))
    }

    /// `K(t_i, c)` at a time node.
    pub fn cost_at(&self, ti: usize, c: f64) -> f64 {
        self.k[ti] * self.cost_shape(c.max(0.0))
    }

    /// `K'(t_i, c)` at a time node.
    pub fn marginal_cost_at(&self, ti: usize, c: f64) -> f64 {
        self.k[ti] * self.marginal_shape(c.max(0.0))
    }

    fn cost_shape(&self, c: f64) -> f64 {
        match (&self.spec.cost, &self.cost_table) {
            (CostForm::Power { n }, _) => c.powf(*n) / n,
            (_, Some(t)) => t.cost(c),
            _ => unreachable!("tabulated cost without table"),
        }
    }

    fn marginal_shape(&self, c: f64) -> f64 {
        match (&self.spec.cost, &self.cost_table) {
            (CostForm::Power { n }, _) => c.powf(n - 1.0),
            (_, Some(t)) => t.marginal(c),
            _ => unreachable!("tabulated cost without table"),
        }
    }

    /// `c * K'(t, c)^(1/(1-gamma))`, the map inverted to get aggregate demand.
    pub fn g_k(&self, t: f64, c: f64) -> Result<f64> {
        let m = self.eval_marginal_cost(t, c)?;
        Ok(c * m.powf(1.0 / (1.0 - self.gamma())))
    }

    pub fn g_k_inverse(&self, t: f64, y: f64) -> Result<f64> {
        self.g_k_inverse_with_k(self.k_at(t), y)
    }

    pub fn g_k_inverse_at(&self, ti: usize, y: f64) -> Result<f64> {
        self.g_k_inverse_with_k(self.k[ti], y)
    }

    fn g_k_inverse_with_k(&self, k: f64, y: f64) -> Result<f64> {
        if y < 0.0 || y.is_nan() {
            return Err(TariffError::Domain(format!("g_K inverse undefined at {y}")));
        }
        let gamma = self.gamma();
        match (&self.spec.cost, &self.cost_table) {
            (CostForm::Power { n }, _) => {
                let base = y / k.powf(1.0 / (1.0 - gamma));
                Ok(base.powf((1.0 - gamma) / (n - gamma)))
            }
            (_, Some(table)) => {
                let gk = |c: f64| c * (k * table.marginal(c)).powf(1.0 / (1.0 - gamma)) - y;
                let c_max = table.c_max();
                if y == 0.0 {
                    return Ok(0.0);
                }
                if gk(c_max) < 0.0 {
                    return Err(TariffError::NonConvergence(format!(
                        "aggregate demand beyond the tabulated cost range (c_max = {c_max})"
                    )));
                }
                bisect(gk, 0.0, c_max, 1e-15 * c_max.max(1.0))
            }
            _ => unreachable!("tabulated cost without table"),
        }
    }
}

fn check_consumption(c: f64) -> Result<()> {
    if c < 0.0 || c.is_nan() {
        Err(TariffError::Domain(format!("cost undefined at c = {c}")))
    } else {
        Ok(())
    }
}

fn validate_reservation(gamma: f64, r: &Reservation) -> Result<()> {
    let grid = linspace(0.0, 1.0, 257);
    let values: Vec<f64> = grid.iter().map(|&x| r.value(x)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TariffError::InvalidReservation(
            "reservation utility must be finite on [0, 1]".into(),
        ));
    }
    if gamma > 0.0 && values.iter().any(|v| *v < 0.0) {
        return Err(TariffError::InvalidReservation(
            "reservation utility must be nonnegative when gamma > 0".into(),
        ));
    }
    // A type-dependent outside option may reach zero at the top type only.
    let last = values.len() - 1;
    let nonnegative = |(i, v): (usize, &f64)| *v > 0.0 || (*v == 0.0 && (i < last || r.is_constant()));
    if gamma < 0.0 && values.iter().enumerate().any(nonnegative) {
        return Err(TariffError::InvalidReservation(
            "reservation utility must be negative when gamma < 0".into(),
        ));
    }
    if grid.iter().any(|&x| r.derivative(x) < 0.0) {
        return Err(TariffError::InvalidReservation(
            "reservation utility must be nondecreasing".into(),
        ));
    }
    if let Reservation::Tabulated { x, h, dh } = r {
        if x.len() < 2 || h.len() != x.len() || dh.len() != x.len() {
            return Err(TariffError::InvalidReservation(
                "tabulated reservation needs matching arrays".into(),
            ));
        }
    }
    Ok(())
}
