//! Two-player LQG problem instances.
//!
//! The state, input and measurement vectors are each split into a
//! Player-1 part followed by a Player-2 part. Player 1 affects and sees
//! only its own subsystem; Player 2 sees everything. This shows up as
//! block-lower-triangular `A`, `B`, `C`.

use std::ops::{Deref, Range};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{Map, Value};

use crate::error::{Error, Result, ValidationReport, Violation};
use crate::linalg::{block, from_rows, min_eigenvalue, set_block, sym, to_rows, Mat, Vector};

const PSD_TOL: f64 = 1e-8;
const PD_TOL: f64 = 1e-12;
const SYM_TOL: f64 = 1e-10;
const RANDOM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockDims {
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
    pub p1: usize,
    pub p2: usize,
}

impl BlockDims {
    pub fn new(n1: usize, n2: usize, m1: usize, m2: usize, p1: usize, p2: usize) -> Result<Self> {
        let dims = BlockDims { n1, n2, m1, m2, p1, p2 };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if [self.n1, self.n2, self.m1, self.m2, self.p1, self.p2].contains(&0) {
            return Err(Error::Dimension(format!(
                "all block sizes must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }
    pub fn m(&self) -> usize {
        self.m1 + self.m2
    }
    pub fn p(&self) -> usize {
        self.p1 + self.p2
    }

    pub fn x1(&self) -> Range<usize> {
        0..self.n1
    }
    pub fn x2(&self) -> Range<usize> {
        self.n1..self.n()
    }
    pub fn u1(&self) -> Range<usize> {
        0..self.m1
    }
    pub fn u2(&self) -> Range<usize> {
        self.m1..self.m()
    }
    pub fn y1(&self) -> Range<usize> {
        0..self.p1
    }
    pub fn y2(&self) -> Range<usize> {
        self.p1..self.p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDynamics {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageNoise {
    pub w: Mat,
    pub u: Mat,
    pub v: Mat,
}

impl StageNoise {
    /// Joint covariance of `(w, v)`: `[[W, Uᵀ], [U, V]]`.
    pub fn joint(&self) -> Mat {
        let n = self.w.nrows();
        let p = self.v.nrows();
        let mut j = Mat::zeros(n + p, n + p);
        set_block(&mut j, 0, 0, &self.w);
        set_block(&mut j, 0, n, &self.u.transpose());
        set_block(&mut j, n, 0, &self.u);
        set_block(&mut j, n, n, &self.v);
        j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
}

impl StageCost {
    /// Joint weight on `(x, u)`: `[[Q, S], [Sᵀ, R]]`.
    pub fn joint(&self) -> Mat {
        let n = self.q.nrows();
        let m = self.r.nrows();
        let mut j = Mat::zeros(n + m, n + m);
        set_block(&mut j, 0, 0, &self.q);
        set_block(&mut j, 0, n, &self.s);
        set_block(&mut j, n, 0, &self.s.transpose());
        set_block(&mut j, n, n, &self.r);
        j
    }
}

/// Stage data of an LQG problem without any block partition.
///
/// Used directly by the centralized solver and the Monte Carlo sampler;
/// a [`ProblemSpec`] adds the two-player partition on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub horizon: usize,
    pub dynamics: Vec<StageDynamics>,
    pub noise: Vec<StageNoise>,
    pub cost: Vec<StageCost>,
    pub sigma_init: Mat,
    pub p_final: Mat,
    pub mu_init: Vector,
}

impl Plant {
    pub fn n(&self) -> usize {
        self.sigma_init.nrows()
    }
    pub fn m(&self) -> usize {
        self.cost.first().map_or(0, |c| c.r.nrows())
    }
    pub fn p(&self) -> usize {
        self.noise.first().map_or(0, |nz| nz.v.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dims: BlockDims,
    pub plant: Plant,
}

/// Which player's subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    One,
    Two,
}

impl ProblemSpec {
    pub fn horizon(&self) -> usize {
        self.plant.horizon
    }

    /// The diagonal-block subproblem of one player, as a standalone plant.
    /// Only meaningful when the cross couplings vanish.
    pub fn subsystem(&self, player: Player) -> Plant {
        let d = &self.dims;
        let (xr, ur, yr) = match player {
            Player::One => (d.x1(), d.u1(), d.y1()),
            Player::Two => (d.x2(), d.u2(), d.y2()),
        };
        let p = &self.plant;
        Plant {
            horizon: p.horizon,
            dynamics: p
                .dynamics
                .iter()
                .map(|s| StageDynamics {
                    a: block(&s.a, xr.clone(), xr.clone()),
                    b: block(&s.b, xr.clone(), ur.clone()),
                    c: block(&s.c, yr.clone(), xr.clone()),
                })
                .collect(),
            noise: p
                .noise
                .iter()
                .map(|s| StageNoise {
                    w: block(&s.w, xr.clone(), xr.clone()),
                    u: block(&s.u, yr.clone(), xr.clone()),
                    v: block(&s.v, yr.clone(), yr.clone()),
                })
                .collect(),
            cost: p
                .cost
                .iter()
                .map(|s| StageCost {
                    q: block(&s.q, xr.clone(), xr.clone()),
                    s: block(&s.s, xr.clone(), ur.clone()),
                    r: block(&s.r, ur.clone(), ur.clone()),
                })
                .collect(),
            sigma_init: block(&p.sigma_init, xr.clone(), xr.clone()),
            p_final: block(&p.p_final, xr.clone(), xr.clone()),
            mu_init: p.mu_init.rows(xr.start, xr.len()).into_owned(),
        }
    }

    /// Same plant with Player 2's measurement stripped of all information:
    /// `C²` rows, the `y²` rows of `U`, and the `V` cross blocks are zeroed.
    pub fn with_player1_measurements_only(&self) -> ProblemSpec {
        let d = self.dims;
        let mut out = self.clone();
        for s in &mut out.plant.dynamics {
            s.c.rows_mut(d.p1, d.p2).fill(0.0);
        }
        for s in &mut out.plant.noise {
            s.u.rows_mut(d.p1, d.p2).fill(0.0);
            s.v.view_mut((d.p1, 0), (d.p2, d.p1)).fill(0.0);
            s.v.view_mut((0, d.p1), (d.p1, d.p2)).fill(0.0);
        }
        out
    }

    pub fn with_mu_init(&self, mu: Vector) -> ProblemSpec {
        let mut out = self.clone();
        out.plant.mu_init = mu;
        out
    }
}

/// A [`ProblemSpec`] that has passed [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem(ProblemSpec);

impl ValidatedProblem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.0
    }
    pub fn into_inner(self) -> ProblemSpec {
        self.0
    }
}

impl Deref for ValidatedProblem {
    type Target = ProblemSpec;
    fn deref(&self) -> &ProblemSpec {
        &self.0
    }
}

fn check_shape(
    out: &mut Vec<Violation>,
    t: Option<usize>,
    matrix: &'static str,
    m: &Mat,
    expected: (usize, usize),
) -> bool {
    if m.shape() != expected {
        out.push(Violation::Dimension { t, matrix, expected, found: m.shape() });
        return false;
    }
    true
}

fn check_zero_block(
    out: &mut Vec<Violation>,
    t: usize,
    matrix: &'static str,
    blk: &'static str,
    m: &Mat,
    rows: Range<usize>,
    cols: Range<usize>,
) {
    for i in rows {
        for j in cols.clone() {
            if m[(i, j)] != 0.0 {
                out.push(Violation::Structure { t, matrix, block: blk, row: i, col: j, value: m[(i, j)] });
                return;
            }
        }
    }
}

fn check_symmetric(out: &mut Vec<Violation>, t: Option<usize>, matrix: &'static str, m: &Mat) -> bool {
    let asym = (m - m.transpose()).amax();
    if asym > SYM_TOL * (1.0 + m.amax()) {
        out.push(Violation::Definiteness {
            t,
            matrix,
            min_eigenvalue: f64::NAN,
            requirement: "symmetric",
        });
        return false;
    }
    true
}

fn check_psd(out: &mut Vec<Violation>, t: Option<usize>, matrix: &'static str, m: &Mat) {
    let lam = min_eigenvalue(m);
    if lam < -PSD_TOL * (1.0 + m.norm()) {
        out.push(Violation::Definiteness {
            t,
            matrix,
            min_eigenvalue: lam,
            requirement: "positive semidefinite",
        });
    }
}

fn check_pd(out: &mut Vec<Violation>, t: Option<usize>, matrix: &'static str, m: &Mat) {
    let lam = min_eigenvalue(m);
    if lam <= PD_TOL * m.norm().max(1.0) {
        out.push(Violation::Definiteness {
            t,
            matrix,
            min_eigenvalue: lam,
            requirement: "positive definite",
        });
    }
}

/// Checks dimensions, the exact triangular zero pattern, and the
/// positivity assumptions at every stage.
pub fn validate(spec: ProblemSpec) -> Result<ValidatedProblem> {
    spec.dims.check()?;
    let d = spec.dims;
    let (n, m, p) = (d.n(), d.m(), d.p());
    let plant = &spec.plant;
    let mut out = Vec::new();

    if plant.horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    for (name, len) in [
        ("dynamics", plant.dynamics.len()),
        ("noise", plant.noise.len()),
        ("cost", plant.cost.len()),
    ] {
        if len != plant.horizon {
            return Err(Error::Dimension(format!(
                "{name} has {len} stages, horizon is {}",
                plant.horizon
            )));
        }
    }

    for t in 0..plant.horizon {
        let dy = &plant.dynamics[t];
        let nz = &plant.noise[t];
        let c = &plant.cost[t];
        let ts = Some(t);
        let shapes_ok = [
            check_shape(&mut out, ts, "A", &dy.a, (n, n)),
            check_shape(&mut out, ts, "B", &dy.b, (n, m)),
            check_shape(&mut out, ts, "C", &dy.c, (p, n)),
            check_shape(&mut out, ts, "W", &nz.w, (n, n)),
            check_shape(&mut out, ts, "U", &nz.u, (p, n)),
            check_shape(&mut out, ts, "V", &nz.v, (p, p)),
            check_shape(&mut out, ts, "Q", &c.q, (n, n)),
            check_shape(&mut out, ts, "S", &c.s, (n, m)),
            check_shape(&mut out, ts, "R", &c.r, (m, m)),
        ];
        if shapes_ok.contains(&false) {
            continue;
        }
        check_zero_block(&mut out, t, "A", "A12", &dy.a, d.x1(), d.x2());
        check_zero_block(&mut out, t, "B", "B12", &dy.b, d.x1(), d.u2());
        check_zero_block(&mut out, t, "C", "C12", &dy.c, d.y1(), d.x2());

        let sym_ok = [
            check_symmetric(&mut out, ts, "W", &nz.w),
            check_symmetric(&mut out, ts, "V", &nz.v),
            check_symmetric(&mut out, ts, "Q", &c.q),
            check_symmetric(&mut out, ts, "R", &c.r),
        ];
        if !sym_ok.contains(&false) {
            check_psd(&mut out, ts, "[[W,U^T],[U,V]]", &nz.joint());
            check_pd(&mut out, ts, "V", &nz.v);
            check_psd(&mut out, ts, "[[Q,S],[S^T,R]]", &c.joint());
            check_pd(&mut out, ts, "R", &c.r);
        }
    }
    if check_shape(&mut out, None, "Sigma_init", &plant.sigma_init, (n, n))
        && check_symmetric(&mut out, None, "Sigma_init", &plant.sigma_init)
    {
        check_psd(&mut out, None, "Sigma_init", &plant.sigma_init);
    }
    if check_shape(&mut out, None, "P_final", &plant.p_final, (n, n))
        && check_symmetric(&mut out, None, "P_final", &plant.p_final)
    {
        check_psd(&mut out, None, "P_final", &plant.p_final);
    }
    if plant.mu_init.len() != n {
        out.push(Violation::Dimension {
            t: None,
            matrix: "mu_init",
            expected: (n, 1),
            found: (plant.mu_init.len(), 1),
        });
    }

    if out.is_empty() {
        Ok(ValidatedProblem(spec))
    } else {
        Err(Error::Invalid(ValidationReport { violations: out }))
    }
}

// ---------------------------------------------------------------------
// JSON problem files

fn schema<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Schema(msg.into()))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<&'a Value> {
    match obj.get(key) {
        Some(v) => Ok(v),
        None => schema(format!("missing field \"{key}\"{ctx}")),
    }
}

fn object<'a>(v: &'a Value, name: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .map_or_else(|| schema(format!("\"{name}\" must be an object")), Ok)
}

fn parse_matrix(v: &Value, name: &str) -> Result<Mat> {
    let rows = v
        .as_array()
        .map_or_else(|| schema(format!("\"{name}\" must be a nested array")), Ok)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row
            .as_array()
            .map_or_else(|| schema(format!("\"{name}\" rows must be arrays")), Ok)?;
        let nums: Option<Vec<f64>> = row.iter().map(Value::as_f64).collect();
        match nums {
            Some(r) => parsed.push(r),
            None => return schema(format!("\"{name}\" entries must be numbers")),
        }
    }
    if parsed.is_empty() {
        return schema(format!("\"{name}\" is empty"));
    }
    from_rows(&parsed).map_or_else(|| schema(format!("\"{name}\" is not rectangular")), Ok)
}

/// Matrix depth: 2 for a single matrix, 3 for a per-stage array.
fn depth(v: &Value) -> usize {
    match v {
        Value::Array(items) => 1 + items.first().map_or(0, depth),
        _ => 0,
    }
}

fn parse_schedule(v: &Value, name: &str, horizon: usize) -> Result<Vec<Mat>> {
    match depth(v) {
        2 => {
            let m = parse_matrix(v, name)?;
            Ok(vec![m; horizon])
        }
        3 => {
            let items = v.as_array().expect("depth checked");
            if items.len() != horizon {
                return schema(format!(
                    "\"{name}\" has {} stages, horizon is {horizon}",
                    items.len()
                ));
            }
            items
                .iter()
                .enumerate()
                .map(|(t, m)| parse_matrix(m, &format!("{name}[{t}]")))
                .collect()
        }
        _ => schema(format!(
            "\"{name}\" must be a matrix or an array of matrices"
        )),
    }
}

fn parse_usize(v: &Value, name: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .map_or_else(|| schema(format!("\"{name}\" must be a non-negative integer")), Ok)
}

/// Parses a problem document. Symmetric matrices are symmetrized.
pub fn parse_spec(text: &str) -> Result<ProblemSpec> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let root = object(&doc, "<root>")?;
    let horizon = parse_usize(field(root, "horizon", "")?, "horizon")?;
    if horizon == 0 {
        return schema("\"horizon\" must be at least 1");
    }
    let dims_obj = object(field(root, "dims", "")?, "dims")?;
    let mut dv = [0usize; 6];
    for (slot, key) in dv.iter_mut().zip(["n1", "n2", "m1", "m2", "p1", "p2"]) {
        *slot = parse_usize(field(dims_obj, key, " in \"dims\"")?, key)?;
    }
    let dims = BlockDims { n1: dv[0], n2: dv[1], m1: dv[2], m2: dv[3], p1: dv[4], p2: dv[5] };

    let sched = |group: &str, key: &str| -> Result<Vec<Mat>> {
        let g = object(field(root, group, "")?, group)?;
        parse_schedule(field(g, key, &format!(" in \"{group}\""))?, key, horizon)
    };
    let (a, b, c) = (sched("dynamics", "A")?, sched("dynamics", "B")?, sched("dynamics", "C")?);
    let (w, u, v) = (sched("noise", "W")?, sched("noise", "U")?, sched("noise", "V")?);
    let (q, s, r) = (sched("cost", "Q")?, sched("cost", "S")?, sched("cost", "R")?);
    let sigma_init = sym(&parse_matrix(field(root, "Sigma_init", "")?, "Sigma_init")?);
    let p_final = sym(&parse_matrix(field(root, "P_final", "")?, "P_final")?);
    let mu_init = match root.get("mu_init") {
        None | Some(Value::Null) => Vector::zeros(dims.n()),
        Some(val) => {
            let arr = val
                .as_array()
                .map_or_else(|| schema("\"mu_init\" must be an array of numbers"), Ok)?;
            let nums: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
            Vector::from_vec(nums.map_or_else(|| schema("\"mu_init\" entries must be numbers"), Ok)?)
        }
    };

    let dynamics = a
        .into_iter()
        .zip(b)
        .zip(c)
        .map(|((a, b), c)| StageDynamics { a, b, c })
        .collect();
    let noise = w
        .into_iter()
        .zip(u)
        .zip(v)
        .map(|((w, u), v)| StageNoise { w: sym(&w), u, v: sym(&v) })
        .collect();
    let cost = q
        .into_iter()
        .zip(s)
        .zip(r)
        .map(|((q, s), r)| StageCost { q: sym(&q), s, r: sym(&r) })
        .collect();
    Ok(ProblemSpec {
        dims,
        plant: Plant { horizon, dynamics, noise, cost, sigma_init, p_final, mu_init },
    })
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text)
}

fn schedule_json<'a>(ms: impl Iterator<Item = &'a Mat>) -> Value {
    Value::Array(ms.map(|m| serde_json::json!(to_rows(m))).collect())
}

/// Serializes with per-stage arrays throughout.
pub fn spec_to_json(spec: &ProblemSpec) -> Value {
    let p = &spec.plant;
    serde_json::json!({
        "horizon": p.horizon,
        "dims": spec.dims,
        "dynamics": {
            "A": schedule_json(p.dynamics.iter().map(|s| &s.a)),
            "B": schedule_json(p.dynamics.iter().map(|s| &s.b)),
            "C": schedule_json(p.dynamics.iter().map(|s| &s.c)),
        },
        "noise": {
            "W": schedule_json(p.noise.iter().map(|s| &s.w)),
            "U": schedule_json(p.noise.iter().map(|s| &s.u)),
            "V": schedule_json(p.noise.iter().map(|s| &s.v)),
        },
        "cost": {
            "Q": schedule_json(p.cost.iter().map(|s| &s.q)),
            "S": schedule_json(p.cost.iter().map(|s| &s.s)),
            "R": schedule_json(p.cost.iter().map(|s| &s.r)),
        },
        "Sigma_init": to_rows(&p.sigma_init),
        "P_final": to_rows(&p.p_final),
        "mu_init": p.mu_init.iter().copied().collect::<Vec<_>>(),
    })
}

pub fn save_spec(spec: &ProblemSpec, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&spec_to_json(spec)).expect("json values serialize");
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Random instances

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// `GᵀG + εI` over a variable split into two player groups, with the
/// cross-group block scaled by `coupling`. Scaling the off-diagonal block
/// is a convex combination with the block-diagonal part, so PSD is kept.
fn grouped_psd(rng: &mut ChaCha8Rng, g1: usize, g2: usize, coupling: f64) -> Mat {
    let k = g1 + g2;
    let g = gaussian(rng, k + 2, k, 1.0 / ((k + 2) as f64).sqrt());
    let mut m = g.transpose() * g + Mat::identity(k, k) * RANDOM_EPS;
    m.view_mut((g1, 0), (g2, g1)).scale_mut(coupling);
    m.view_mut((0, g1), (g1, g2)).scale_mut(coupling);
    sym(&m)
}

/// Reorders a PSD matrix on `(a1, b1, a2, b2)` into `(a1, a2, b1, b2)`.
fn regroup(m: &Mat, a1: usize, b1: usize, a2: usize, b2: usize) -> Mat {
    let perm: Vec<usize> = (0..a1)
        .chain(a1 + b1..a1 + b1 + a2)
        .chain(a1..a1 + b1)
        .chain(a1 + b1 + a2..a1 + b1 + a2 + b2)
        .collect();
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])
}

fn lower_triangular(
    rng: &mut ChaCha8Rng,
    (r1, r2): (usize, usize),
    (c1, c2): (usize, usize),
    scale: f64,
    coupling: f64,
) -> Mat {
    let mut m = gaussian(rng, r1 + r2, c1 + c2, scale);
    m.view_mut((0, c1), (r1, c2)).fill(0.0);
    m.view_mut((r1, 0), (r2, c1)).scale_mut(coupling);
    m
}

/// Deterministic random instance satisfying all assumptions strictly.
/// `coupling = 0` makes the two subsystems fully independent.
pub fn random_instance(seed: u64, dims: BlockDims, horizon: usize, coupling: f64) -> ProblemSpec {
    assert!(horizon >= 1, "horizon must be positive");
    assert!((0.0..=1.0).contains(&coupling), "coupling must lie in [0, 1]");
    dims.check().expect("valid block dimensions");
    let d = dims;
    let (n, m, p) = (d.n(), d.m(), d.p());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut dynamics = Vec::with_capacity(horizon);
    let mut noise = Vec::with_capacity(horizon);
    let mut cost = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = lower_triangular(&mut rng, (d.n1, d.n2), (d.n1, d.n2), 0.8 / (n as f64).sqrt(), coupling);
        let b = lower_triangular(&mut rng, (d.n1, d.n2), (d.m1, d.m2), 1.0 / (m as f64).sqrt(), coupling);
        let c = lower_triangular(&mut rng, (d.p1, d.p2), (d.n1, d.n2), 1.0 / (n as f64).sqrt(), coupling);
        dynamics.push(StageDynamics { a, b, c });

        let joint = regroup(&grouped_psd(&mut rng, d.n1 + d.p1, d.n2 + d.p2, coupling), d.n1, d.p1, d.n2, d.p2);
        noise.push(StageNoise {
            w: block(&joint, 0..n, 0..n),
            u: block(&joint, n..n + p, 0..n),
            v: block(&joint, n..n + p, n..n + p),
        });

        let joint = regroup(&grouped_psd(&mut rng, d.n1 + d.m1, d.n2 + d.m2, coupling), d.n1, d.m1, d.n2, d.m2);
        cost.push(StageCost {
            q: block(&joint, 0..n, 0..n),
            s: block(&joint, 0..n, n..n + m),
            r: block(&joint, n..n + m, n..n + m),
        });
    }
    let sigma_init = grouped_psd(&mut rng, d.n1, d.n2, coupling);
    let p_final = grouped_psd(&mut rng, d.n1, d.n2, coupling);
    ProblemSpec {
        dims,
        plant: Plant {
            horizon,
            dynamics,
            noise,
            cost,
            sigma_init,
            p_final,
            mu_init: Vector::zeros(n),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims2() -> BlockDims {
        BlockDims::new(2, 2, 1, 1, 2, 2).unwrap()
    }

    fn identity_spec(horizon: usize) -> ProblemSpec {
        let d = BlockDims::new(1, 1, 1, 1, 1, 1).unwrap();
        let eye = Mat::identity(2, 2);
        ProblemSpec {
            dims: d,
            plant: Plant {
                horizon,
                dynamics: vec![StageDynamics { a: eye.clone(), b: eye.clone(), c: eye.clone() }; horizon],
                noise: vec![StageNoise { w: eye.clone(), u: Mat::zeros(2, 2), v: eye.clone() }; horizon],
                cost: vec![StageCost { q: eye.clone(), s: Mat::zeros(2, 2), r: eye.clone() }; horizon],
                sigma_init: eye.clone(),
                p_final: eye,
                mu_init: Vector::zeros(2),
            },
        }
    }

    fn violations(err: Error) -> Vec<Violation> {
        match err {
            Error::Invalid(r) => r.violations,
            other => panic!("expected validation failure, got {other}"),
        }
    }

    #[test]
    fn decoupled_identity_system_is_valid() {
        assert!(validate(identity_spec(3)).is_ok());
    }

    #[test]
    fn tiny_upper_right_entry_is_a_structure_error() {
        let mut spec = identity_spec(3);
        spec.plant.dynamics[1].a[(0, 1)] = 1e-12;
        let v = violations(validate(spec).unwrap_err());
        assert_eq!(
            v,
            vec![Violation::Structure { t: 1, matrix: "A", block: "A12", row: 0, col: 1, value: 1e-12 }]
        );
    }

    #[test]
    fn singular_r_is_a_definiteness_error() {
        let mut spec = identity_spec(2);
        spec.plant.cost[0].r[(1, 1)] = 0.0;
        let v = violations(validate(spec).unwrap_err());
        assert!(v.iter().any(|x| matches!(
            x,
            Violation::Definiteness { t: Some(0), matrix: "R", .. }
        )));
    }

    #[test]
    fn wrong_shape_is_a_dimension_error() {
        let mut spec = identity_spec(2);
        spec.plant.dynamics[1].b = Mat::zeros(2, 3);
        let v = violations(validate(spec).unwrap_err());
        assert!(matches!(v[0], Violation::Dimension { t: Some(1), matrix: "B", .. }));
    }

    #[test]
    fn random_instances_validate_and_coupling_zero_is_block_diagonal() {
        let spec = random_instance(7, dims2(), 5, 0.0);
        let d = spec.dims;
        let valid = validate(spec).unwrap();
        for t in 0..5 {
            let s = &valid.plant;
            assert_eq!(block(&s.dynamics[t].a, d.x2(), d.x1()).amax(), 0.0);
            assert_eq!(block(&s.dynamics[t].b, d.x2(), d.u1()).amax(), 0.0);
            assert_eq!(block(&s.dynamics[t].c, d.y2(), d.x1()).amax(), 0.0);
            assert_eq!(block(&s.noise[t].w, d.x2(), d.x1()).amax(), 0.0);
            assert_eq!(block(&s.noise[t].u, d.y1(), d.x2()).amax(), 0.0);
            assert_eq!(block(&s.noise[t].u, d.y2(), d.x1()).amax(), 0.0);
            assert_eq!(block(&s.noise[t].v, d.y2(), d.y1()).amax(), 0.0);
            assert_eq!(block(&s.cost[t].q, d.x2(), d.x1()).amax(), 0.0);
            assert_eq!(block(&s.cost[t].s, d.x1(), d.u2()).amax(), 0.0);
            assert_eq!(block(&s.cost[t].s, d.x2(), d.u1()).amax(), 0.0);
            assert_eq!(block(&s.cost[t].r, d.u2(), d.u1()).amax(), 0.0);
        }
        assert_eq!(block(&valid.plant.sigma_init, d.x2(), d.x1()).amax(), 0.0);
        assert_eq!(block(&valid.plant.p_final, d.x2(), d.x1()).amax(), 0.0);
    }

    #[test]
    fn random_instance_is_deterministic_in_seed() {
        assert_eq!(random_instance(7, dims2(), 5, 0.5), random_instance(7, dims2(), 5, 0.5));
        assert_ne!(random_instance(7, dims2(), 5, 0.5), random_instance(8, dims2(), 5, 0.5));
    }

    #[test]
    fn constant_matrices_broadcast_and_mu_defaults_to_zero() {
        let doc = r#"{
            "horizon": 10,
            "dims": {"n1":1,"n2":1,"m1":1,"m2":1,"p1":1,"p2":1},
            "dynamics": {"A": [[1,0],[0.5,1]], "B": [[1,0],[0,1]], "C": [[1,0],[0,1]]},
            "noise": {"W": [[1,0],[0,1]], "U": [[0,0],[0,0]], "V": [[1,0],[0,1]]},
            "cost": {"Q": [[1,0],[0,1]], "S": [[0,0],[0,0]], "R": [[1,0],[0,1]]},
            "Sigma_init": [[1,0],[0,1]],
            "P_final": [[1,0],[0,1]]
        }"#;
        let spec = parse_spec(doc).unwrap();
        assert_eq!(spec.plant.dynamics.len(), 10);
        assert!(spec.plant.dynamics.iter().all(|s| s.a[(1, 0)] == 0.5));
        assert_eq!(spec.plant.mu_init, Vector::zeros(2));
        assert!(validate(spec).is_ok());
    }

    #[test]
    fn short_stage_array_is_a_schema_error() {
        let spec = random_instance(1, BlockDims::new(1, 1, 1, 1, 1, 1).unwrap(), 10, 0.5);
        let mut doc = spec_to_json(&spec);
        doc["dynamics"]["A"].as_array_mut().unwrap().pop();
        let err = parse_spec(&doc.to_string()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("\"A\" has 9 stages")), "{err}");
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(parse_spec("{not json"), Err(Error::Parse(_))));
        let spec = random_instance(1, BlockDims::new(1, 1, 1, 1, 1, 1).unwrap(), 2, 0.5);
        let mut doc = spec_to_json(&spec);
        doc.as_object_mut().unwrap().remove("P_final");
        assert!(matches!(parse_spec(&doc.to_string()), Err(Error::Schema(_))));
        let mut doc = spec_to_json(&spec);
        doc["Sigma_init"] = serde_json::json!([[1.0, 0.0], [0.0]]);
        assert!(matches!(parse_spec(&doc.to_string()), Err(Error::Schema(ref m)) if m.contains("rectangular")));
    }

    #[test]
    fn player1_only_variant_stays_valid() {
        let spec = random_instance(4, dims2(), 3, 1.0).with_player1_measurements_only();
        let d = spec.dims;
        assert_eq!(block(&spec.plant.dynamics[0].c, d.y2(), 0..d.n()).amax(), 0.0);
        assert!(validate(spec).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn save_then_load_is_identity(seed in 0u64..10_000, coupling in 0.0f64..=1.0, horizon in 1usize..4) {
                let spec = random_instance(seed, BlockDims::new(1, 2, 1, 1, 2, 1).unwrap(), horizon, coupling)
                    .with_mu_init(Vector::from_vec(vec![0.1, -2.5e-7, 3.0]));
                let text = serde_json::to_string(&spec_to_json(&spec)).unwrap();
                let back = parse_spec(&text).unwrap();
                prop_assert_eq!(back, spec);
            }

            #[test]
            fn generated_instances_satisfy_assumptions(seed in 0u64..10_000, coupling in 0.0f64..=1.0) {
                let spec = random_instance(seed, BlockDims::new(2, 1, 1, 2, 1, 2).unwrap(), 3, coupling);
                for nz in &spec.plant.noise {
                    let j = nz.joint();
                    prop_assert!(min_eigenvalue(&j) >= -1e-8 * (1.0 + j.norm()));
                    prop_assert!(min_eigenvalue(&nz.v) > 0.0);
                }
                for c in &spec.plant.cost {
                    let j = c.joint();
                    prop_assert!(min_eigenvalue(&j) >= -1e-8 * (1.0 + j.norm()));
                    prop_assert!(min_eigenvalue(&c.r) > 0.0);
                }
                prop_assert!(validate(spec).is_ok());
            }
        }
    }
}
