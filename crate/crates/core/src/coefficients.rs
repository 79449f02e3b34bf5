//! Periodic symmetric coefficient fields `a(y, s)`.
//!
//! Every field is normalized at construction so that its largest eigenvalue
//! over the unit cell and period equals one. The factor that was divided out
//! is kept as [`CoefficientField::amplitude`], so values of the original,
//! unnormalized family are `amplitude * a(y, s)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHECKERBOARD_SHARPNESS: f64 = 4.0;

/// Fractional part in `[0, 1)`.
pub fn frac(v: f64) -> f64 {
    let f = v - v.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Constant(Tensor),
    LayeredSin { a: f64, b: f64, axis: usize },
    SeparableSin { a: f64, b: f64, freq: f64 },
    Checkerboard { contrast: f64 },
    Tabulated(CoefficientTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    name: String,
    params: Vec<f64>,
    family: Family,
    amplitude: f64,
    lambda: f64,
}

/// Builds one of the analytic families.
///
/// | family | params |
/// |---|---|
/// | `constant` | `[a]` in 1D, `[a11, a12, a22]` in 2D |
/// | `layered_sin` | `[A, B, axis]`: `(A + B sin 2πy_axis) I` |
/// | `separable_sin` | `[A, B, C]`: `(A + B sin 2πy₁ cos 2πCs) I`, `C` integer |
/// | `checkerboard_smoothed` | `[contrast]` |
pub fn make_coefficient(family: &str, params: &[f64], dim: usize) -> Result<CoefficientField> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidArgument(format!("unsupported dimension {dim}")));
    }
    let arity = |expected: usize| -> Result<()> {
        if params.len() != expected {
            Err(Error::Arity {
                family: family.to_string(),
                expected,
                got: params.len(),
            })
        } else {
            Ok(())
        }
    };
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("parameter {i} is not finite")));
    }
    let (fam, lo, hi) = match family {
        "constant" => {
            let t = if dim == 1 {
                arity(1)?;
                Tensor::scalar(1, params[0])
            } else {
                arity(3)?;
                Tensor::sym(2, params[0], params[1], params[2])
            };
            let e = t.eigenvalues(dim);
            (Family::Constant(t), e[0], e[1])
        }
        "layered_sin" => {
            arity(3)?;
            let axis = integer_param(params[2], "axis")?;
            if axis < 1 || axis as usize > dim {
                return Err(Error::InvalidArgument(format!(
                    "layered_sin axis {axis} outside 1..={dim}"
                )));
            }
            let (a, b) = (params[0], params[1]);
            (
                Family::LayeredSin {
                    a,
                    b,
                    axis: axis as usize - 1,
                },
                a - b.abs(),
                a + b.abs(),
            )
        }
        "separable_sin" => {
            arity(3)?;
            let c = integer_param(params[2], "C")?;
            let (a, b) = (params[0], params[1]);
            (
                Family::SeparableSin {
                    a,
                    b,
                    freq: c as f64,
                },
                a - b.abs(),
                a + b.abs(),
            )
        }
        "checkerboard_smoothed" => {
            arity(1)?;
            let c = params[0];
            if !(c > 0.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "H3",
                    detail: format!("contrast must be positive, got {c}"),
                });
            }
            (Family::Checkerboard { contrast: c }, c.min(1.0), c.max(1.0))
        }
        "tabulated" => {
            return Err(Error::InvalidArgument(
                "tabulated coefficients are loaded with CoefficientField::from_table".into(),
            ))
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    CoefficientField::normalized(dim, family, params.to_vec(), fam, lo, hi)
}

fn integer_param(v: f64, what: &str) -> Result<i64> {
    if v.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be an integer, got {v}"
        )));
    }
    Ok(v as i64)
}

impl CoefficientField {
    fn normalized(
        dim: usize,
        name: &str,
        params: Vec<f64>,
        family: Family,
        min_eig: f64,
        max_eig: f64,
    ) -> Result<Self> {
        if !(min_eig > 0.0) {
            return Err(Error::Hypothesis {
                hypothesis: "H3",
                detail: format!(
                    "minimum eigenvalue {min_eig} of `{name}` is not positive (uniform ellipticity fails)"
                ),
            });
        }
        Ok(Self {
            dim,
            name: name.to_string(),
            params,
            family,
            amplitude: max_eig,
            lambda: min_eig / max_eig,
        })
    }

    /// Loads a tabulated field from a CSV lattice and its JSON sidecar.
    pub fn from_table(path: &Path) -> Result<Self> {
        let table = CoefficientTable::read(path)?;
        Self::from_coefficient_table(table)
    }

    pub fn from_coefficient_table(table: CoefficientTable) -> Result<Self> {
        let dim = table.dim;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in &table.values {
            let e = t.symmetrized().eigenvalues(dim);
            lo = lo.min(e[0]);
            hi = hi.max(e[1]);
        }
        Self::normalized(dim, "tabulated", Vec::new(), Family::Tabulated(table), lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family_name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Certified ellipticity floor after normalization.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Largest eigenvalue of the unnormalized family.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// True when the field does not depend on `s`.
    pub fn is_time_independent(&self) -> bool {
        match &self.family {
            Family::Constant(_) | Family::LayeredSin { .. } | Family::Checkerboard { .. } => true,
            Family::SeparableSin { b, freq, .. } => *b == 0.0 || *freq == 0.0,
            Family::Tabulated(t) => t.n_s == 1,
        }
    }

    /// Normalized coefficient at `(y, s)`; arguments are wrapped into the cell.
    pub fn eval(&self, y: [f64; 2], s: f64) -> Tensor {
        self.eval_raw(y, s).scale(1.0 / self.amplitude)
    }

    /// Value of the unnormalized family.
    pub fn eval_raw(&self, y: [f64; 2], s: f64) -> Tensor {
        let dim = self.dim;
        let y = [frac(y[0]), if dim == 2 { frac(y[1]) } else { 0.0 }];
        let s = frac(s);
        match &self.family {
            Family::Constant(t) => *t,
            Family::LayeredSin { a, b, axis } => {
                Tensor::scalar(dim, a + b * (2.0 * PI * y[*axis]).sin())
            }
            Family::SeparableSin { a, b, freq } => Tensor::scalar(
                dim,
                a + b * (2.0 * PI * y[0]).sin() * (2.0 * PI * freq * s).cos(),
            ),
            Family::Checkerboard { contrast } => {
                let mut prod = (2.0 * PI * y[0]).sin();
                if dim == 2 {
                    prod *= (2.0 * PI * y[1]).sin();
                }
                let chi = 0.5
                    * (1.0 + (CHECKERBOARD_SHARPNESS * prod).tanh() / CHECKERBOARD_SHARPNESS.tanh());
                Tensor::scalar(dim, 1.0 + (contrast - 1.0) * chi)
            }
            Family::Tabulated(t) => t.interpolate(y, s).symmetrized(),
        }
    }

    /// Raw table, when tabulated.
    pub fn table(&self) -> Option<&CoefficientTable> {
        match &self.family {
            Family::Tabulated(t) => Some(t),
            _ => None,
        }
    }
}

/// `a(frac(x/eps), frac(t/eps^r))`.
pub fn sample_oscillating(
    field: &CoefficientField,
    x: [f64; 2],
    t: f64,
    eps: f64,
    r: f64,
) -> Result<Tensor> {
    if !(eps > 0.0) || !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps and r must be positive (eps = {eps}, r = {r})"
        )));
    }
    Ok(field.eval(oscillating_point(x, eps), frac(t / eps.powf(r))))
}

pub(crate) fn oscillating_point(x: [f64; 2], eps: f64) -> [f64; 2] {
    [frac(x[0] / eps), frac(x[1] / eps)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub family: String,
    pub samples: usize,
    pub seed: u64,
    pub h2_symmetry: HypothesisCheck,
    pub worst_symmetry_defect: f64,
    pub worst_symmetry_location: Option<Vec<f64>>,
    pub periodicity: HypothesisCheck,
    pub worst_periodicity_defect: f64,
    pub h3_ellipticity: HypothesisCheck,
    pub certified_lambda: f64,
    pub eigenvalue_range: [f64; 2],
    pub h4_time_regularity: HypothesisCheck,
    pub total_variation_in_s: f64,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.h2_symmetry.pass
            && self.periodicity.pass
            && self.h3_ellipticity.pass
            && self.h4_time_regularity.pass
    }
}

/// Randomized check of symmetry, periodicity, ellipticity and a
/// total-variation proxy for time regularity.
pub fn validate_coefficient(field: &CoefficientField, n_samples: usize, seed: u64) -> ValidationReport {
    const TOL: f64 = 1e-12;
    const TV_NODES: usize = 64;
    let dim = field.dim;
    let n_samples = n_samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst_sym: f64 = 0.0;
    let mut worst_sym_at: Option<Vec<f64>> = None;
    if let Some(t) = field.table() {
        for (idx, v) in t.values.iter().enumerate() {
            let d = v.symmetry_defect();
            if d > worst_sym {
                worst_sym = d;
                worst_sym_at = Some(t.lattice_point(idx));
            }
        }
    }
    let mut worst_period: f64 = 0.0;
    let (mut eig_lo, mut eig_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut form_violation: Option<String> = None;
    let mut tv_max: f64 = 0.0;

    for k in 0..n_samples {
        let y = [rng.gen::<f64>(), if dim == 2 { rng.gen::<f64>() } else { 0.0 }];
        let s = rng.gen::<f64>();
        let a = field.eval(y, s);
        let d = a.symmetry_defect();
        if d > worst_sym {
            worst_sym = d;
            worst_sym_at = Some(vec![y[0], y[1], s]);
        }
        for axis in 0..dim {
            let mut shifted = y;
            shifted[axis] += 1.0;
            worst_period = worst_period.max(field.eval(shifted, s).max_abs_diff(&a));
        }
        worst_period = worst_period.max(field.eval(y, s + 1.0).max_abs_diff(&a));

        let e = a.eigenvalues(dim);
        eig_lo = eig_lo.min(e[0]);
        eig_hi = eig_hi.max(e[1]);
        let angle = rng.gen::<f64>() * 2.0 * PI;
        let xi = if dim == 2 {
            [angle.cos(), angle.sin()]
        } else {
            [1.0, 0.0]
        };
        let q = a.quad_form(xi);
        if form_violation.is_none()
            && (q < field.lambda * (1.0 - 1e-12) - TOL || q > 1.0 + TOL)
        {
            form_violation = Some(format!(
                "a(y,s)ξ·ξ = {q} outside [{}, 1] at y = {:?}, s = {s}",
                field.lambda,
                &y[..dim]
            ));
        }

        if k < 32 {
            let mut tv = 0.0;
            let mut prev = field.eval(y, 0.0);
            for i in 1..=TV_NODES {
                let cur = field.eval(y, i as f64 / TV_NODES as f64);
                tv += cur.sub(&prev).norm();
                prev = cur;
            }
            tv_max = tv_max.max(tv);
        }
    }

    let h2_pass = worst_sym <= TOL;
    let h3_pass = form_violation.is_none()
        && eig_lo > 0.0
        && eig_lo >= field.lambda - TOL
        && eig_hi <= 1.0 + TOL;
    ValidationReport {
        family: field.name.clone(),
        samples: n_samples,
        seed,
        h2_symmetry: HypothesisCheck {
            pass: h2_pass,
            detail: if h2_pass {
                "symmetric at every sample".into()
            } else {
                format!("asymmetry {worst_sym:e} at {:?}", worst_sym_at)
            },
        },
        worst_symmetry_defect: worst_sym,
        worst_symmetry_location: worst_sym_at,
        periodicity: HypothesisCheck {
            pass: worst_period <= TOL,
            detail: format!("largest lattice-shift difference {worst_period:e}"),
        },
        worst_periodicity_defect: worst_period,
        h3_ellipticity: HypothesisCheck {
            pass: h3_pass,
            detail: form_violation.unwrap_or_else(|| {
                format!("sampled eigenvalues in [{eig_lo}, {eig_hi}], certified floor {}", field.lambda)
            }),
        },
        certified_lambda: field.lambda,
        eigenvalue_range: [eig_lo, eig_hi],
        h4_time_regularity: HypothesisCheck {
            pass: tv_max.is_finite(),
            detail: format!("max total variation in s over {TV_NODES} nodes: {tv_max:e}"),
        },
        total_variation_in_s: tv_max,
    }
}

/// Lattice sizes declared in the JSON sidecar of a tabulated coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableShape {
    pub dim: usize,
    pub n_y: Vec<usize>,
    pub n_s: usize,
}

/// Coefficient values on a uniform periodic `(y, s)` lattice, multilinearly
/// interpolated. Ordering is `s` slowest, then `y2`, then `y1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    dim: usize,
    n_y: [usize; 2],
    n_s: usize,
    values: Vec<Tensor>,
}

impl CoefficientTable {
    pub fn new(dim: usize, n_y: [usize; 2], n_s: usize, values: Vec<Tensor>) -> Result<Self> {
        let n_y = if dim == 1 { [n_y[0], 1] } else { n_y };
        if !(1..=2).contains(&dim) || n_y[0] == 0 || n_y[1] == 0 || n_s == 0 {
            return Err(Error::InvalidArgument("empty coefficient lattice".into()));
        }
        let expected = n_y[0] * n_y[1] * n_s;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            dim,
            n_y,
            n_s,
            values,
        })
    }

    /// Tabulates `f` on the lattice.
    pub fn sample(dim: usize, n_y: [usize; 2], n_s: usize, f: impl Fn([f64; 2], f64) -> Tensor) -> Result<Self> {
        let n_y = if dim == 1 { [n_y[0], 1] } else { n_y };
        let mut values = Vec::with_capacity(n_y[0] * n_y[1] * n_s);
        for js in 0..n_s {
            for j2 in 0..n_y[1] {
                for j1 in 0..n_y[0] {
                    let y = [j1 as f64 / n_y[0] as f64, j2 as f64 / n_y[1] as f64];
                    values.push(f(y, js as f64 / n_s as f64));
                }
            }
        }
        Self::new(dim, n_y, n_s, values)
    }

    fn index(&self, j1: usize, j2: usize, js: usize) -> usize {
        (js * self.n_y[1] + j2) * self.n_y[0] + j1
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    fn lattice_point(&self, idx: usize) -> Vec<f64> {
        let j1 = idx % self.n_y[0];
        let j2 = (idx / self.n_y[0]) % self.n_y[1];
        let js = idx / (self.n_y[0] * self.n_y[1]);
        let mut p = vec![j1 as f64 / self.n_y[0] as f64];
        if self.dim == 2 {
            p.push(j2 as f64 / self.n_y[1] as f64);
        }
        p.push(js as f64 / self.n_s as f64);
        p
    }

    fn interpolate(&self, y: [f64; 2], s: f64) -> Tensor {
        let locate = |v: f64, n: usize| -> (usize, usize, f64) {
            let t = v * n as f64;
            let i = (t.floor() as usize).min(n - 1);
            (i, (i + 1) % n, t - i as f64)
        };
        let (a0, a1, wa) = locate(y[0], self.n_y[0]);
        let (b0, b1, wb) = if self.dim == 2 {
            locate(y[1], self.n_y[1])
        } else {
            (0, 0, 0.0)
        };
        let (c0, c1, wc) = locate(s, self.n_s);
        let mut out = Tensor::ZERO;
        for (ja, fa) in [(a0, 1.0 - wa), (a1, wa)] {
            for (jb, fb) in [(b0, 1.0 - wb), (b1, wb)] {
                for (jc, fc) in [(c0, 1.0 - wc), (c1, wc)] {
                    let w = fa * fb * fc;
                    if w != 0.0 {
                        out = out.add(&self.values[self.index(ja, jb, jc)].scale(w));
                    }
                }
            }
        }
        out
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    fn columns(dim: usize, with_a21: bool) -> Vec<&'static str> {
        match (dim, with_a21) {
            (1, _) => vec!["y1", "s", "a11"],
            (_, false) => vec!["y1", "y2", "s", "a11", "a12", "a22"],
            (_, true) => vec!["y1", "y2", "s", "a11", "a12", "a21", "a22"],
        }
    }

    /// Writes the CSV lattice and its sidecar. An `a21` column is emitted
    /// only when some entry is asymmetric.
    pub fn write(&self, csv: &Path) -> Result<()> {
        let with_a21 = self.dim == 2 && self.values.iter().any(|t| t.symmetry_defect() != 0.0);
        let mut out = String::new();
        out.push_str(&Self::columns(self.dim, with_a21).join(","));
        out.push('\n');
        for (idx, t) in self.values.iter().enumerate() {
            let p = self.lattice_point(idx);
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.push(t.get(0, 0).to_string());
            if self.dim == 2 {
                row.push(t.get(0, 1).to_string());
                if with_a21 {
                    row.push(t.get(1, 0).to_string());
                }
                row.push(t.get(1, 1).to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(csv, out).map_err(|e| Error::io(csv, e))?;
        let shape = TableShape {
            dim: self.dim,
            n_y: self.n_y[..self.dim].to_vec(),
            n_s: self.n_s,
        };
        let side = Self::sidecar_path(csv);
        let mut f = fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
        f.write_all(serde_json::to_string_pretty(&shape)?.as_bytes())
            .map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    pub fn read(csv: &Path) -> Result<Self> {
        let side = Self::sidecar_path(csv);
        let shape: TableShape = serde_json::from_str(
            &fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
        )?;
        if !(1..=2).contains(&shape.dim) || shape.n_y.len() != shape.dim {
            return Err(Error::format(&side, "n_y must list one size per dimension"));
        }
        let dim = shape.dim;
        let n_y = [shape.n_y[0], if dim == 2 { shape.n_y[1] } else { 1 }];
        let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::format(csv, "empty file"))?
            .split(',')
            .map(str::trim)
            .collect();
        let with_a21 = if header == Self::columns(dim, false) {
            false
        } else if dim == 2 && header == Self::columns(dim, true) {
            true
        } else {
            return Err(Error::format(csv, format!("unexpected header {header:?}")));
        };
        let mut values = Vec::new();
        for (row_no, line) in lines.enumerate() {
            let nums: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(csv, format!("row {}: {e}", row_no + 2)))?;
            if nums.len() != header.len() {
                return Err(Error::format(csv, format!("row {} has {} columns", row_no + 2, nums.len())));
            }
            let idx = values.len();
            let js = idx / (n_y[0] * n_y[1]);
            let j2 = (idx / n_y[0]) % n_y[1];
            let j1 = idx % n_y[0];
            let mut expect = vec![j1 as f64 / n_y[0] as f64];
            if dim == 2 {
                expect.push(j2 as f64 / n_y[1] as f64);
            }
            expect.push(js as f64 / shape.n_s as f64);
            if expect.iter().zip(&nums).any(|(e, v)| (e - v).abs() > 1e-9) {
                return Err(Error::format(
                    csv,
                    format!("row {} coordinates {:?} do not match lattice point {expect:?}", row_no + 2, &nums[..expect.len()]),
                ));
            }
            let c = &nums[expect.len()..];
            let t = match (dim, with_a21) {
                (1, _) => Tensor::scalar(1, c[0]),
                (_, false) => Tensor::sym(2, c[0], c[1], c[2]),
                (_, true) => Tensor([[c[0], c[1]], [c[2], c[3]]]),
            };
            values.push(t);
        }
        Self::new(dim, n_y, shape.n_s, values)
    }
}
