//! Search over direction configurations for maximal violation of the
//! closed-form objectives.
//!
//! Both objectives depend only on the three pairwise inner products, so the
//! search space is gauge-fixed: `a` sits on the +z axis, `b` in the xz-plane
//! at polar angle `theta_b`, and `c` anywhere at `(theta_c, phi_c)` — three
//! free angles. Grid scan, simplex refinement, and seeded multi-start all
//! operate on that parametrization and reduce deterministically.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Config, Direction};
use crate::inequality::{quantum_lhs_16, quantum_lhs_18};
use crate::{Error, Result};

/// Built-in closed-form objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "ineq16")]
    Ineq16,
    #[serde(rename = "ineq18")]
    Ineq18,
}

impl Objective {
    pub fn evaluate(&self, config: &Config) -> f64 {
        match self {
            Objective::Ineq16 => quantum_lhs_16(config),
            Objective::Ineq18 => quantum_lhs_18(config),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Ineq16 => "ineq16",
            Objective::Ineq18 => "ineq18",
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ineq16" => Ok(Objective::Ineq16),
            "ineq18" => Ok(Objective::Ineq18),
            other => Err(Error::Parse(format!(
                "unknown objective {other:?}, expected ineq16 or ineq18"
            ))),
        }
    }
}

/// Gauge-fixed angles `[theta_b, theta_c, phi_c]` in radians.
pub type Angles = [f64; 3];

/// Builds the configuration for gauge-fixed angles. Directions are
/// re-normalized on construction, so accumulated rounding in the angles
/// never leaks into the vectors.
pub fn config_from_angles(angles: Angles) -> Config {
    let [theta_b, theta_c, phi_c] = angles;
    Config {
        a: Direction::plus_z(),
        b: Direction::new(theta_b.sin(), 0.0, theta_b.cos())
            .expect("spherical components cannot all vanish"),
        c: Direction::new(
            theta_c.sin() * phi_c.cos(),
            theta_c.sin() * phi_c.sin(),
            theta_c.cos(),
        )
        .expect("spherical components cannot all vanish"),
    }
}

/// Recovers gauge-fixed angles reproducing the configuration's pairwise
/// inner products (the objectives see nothing else).
pub fn angles_from_config(config: &Config) -> Angles {
    let a = config.a.components();
    let ab = config.a.dot(&config.b);
    let theta_b = ab.acos();
    // In-plane unit vector: the component of b transverse to a, or an
    // arbitrary transverse axis when a and b are (anti)parallel.
    let b = config.b.components();
    let mut x_axis = [b[0] - ab * a[0], b[1] - ab * a[1], b[2] - ab * a[2]];
    let mut norm = (x_axis[0] * x_axis[0] + x_axis[1] * x_axis[1] + x_axis[2] * x_axis[2]).sqrt();
    if norm < 1e-9 {
        let k = (0..3)
            .min_by(|&i, &j| a[i].abs().partial_cmp(&a[j].abs()).unwrap())
            .unwrap();
        x_axis = [0.0; 3];
        x_axis[k] = 1.0;
        let proj = a[k];
        for i in 0..3 {
            x_axis[i] -= proj * a[i];
        }
        norm = (x_axis[0] * x_axis[0] + x_axis[1] * x_axis[1] + x_axis[2] * x_axis[2]).sqrt();
    }
    for component in &mut x_axis {
        *component /= norm;
    }
    let y_axis = [
        a[1] * x_axis[2] - a[2] * x_axis[1],
        a[2] * x_axis[0] - a[0] * x_axis[2],
        a[0] * x_axis[1] - a[1] * x_axis[0],
    ];
    let c = config.c.components();
    let theta_c = config.a.dot(&config.c).acos();
    let cx = c[0] * x_axis[0] + c[1] * x_axis[1] + c[2] * x_axis[2];
    let cy = c[0] * y_axis[0] + c[1] * y_axis[1] + c[2] * y_axis[2];
    let phi_c = if cx == 0.0 && cy == 0.0 {
        0.0
    } else {
        cy.atan2(cx)
    };
    [theta_b, theta_c, phi_c]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub value: f64,
}

/// Search settings actually used, recorded alongside each result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodParams {
    Grid {
        resolution_deg: f64,
        evaluations: u64,
        /// Grid points tying the maximum exactly (beyond the reported best);
        /// only the first few are kept in `ties_angles_rad`.
        ties: u64,
    },
    NelderMead {
        tolerance: f64,
        max_iterations: u64,
        initial_step_rad: f64,
        reflection: f64,
        expansion: f64,
        contraction: f64,
        shrink: f64,
    },
    MultiStart {
        starts: u32,
        seed: u64,
        tolerance: f64,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationResult {
    /// Identifier of the objective that was maximized.
    pub objective: String,
    pub best_config: Config,
    pub best_angles_rad: Angles,
    pub best_value: f64,
    /// False when refinement hit its iteration cap before the value spread
    /// fell under tolerance; the result is still the best found.
    pub converged: bool,
    /// (iteration, best value so far); non-decreasing in value.
    pub trace: Vec<TracePoint>,
    pub method_params: MethodParams,
    /// Other grid points achieving exactly the best value, capped.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ties_angles_rad: Vec<Angles>,
}

const MAX_RECORDED_TIES: usize = 64;
const DEFAULT_MAX_ITERATIONS: u64 = 10_000;
/// Five degrees: big enough to probe out of shallow saddles.
const DEFAULT_INITIAL_STEP_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;
// Standard simplex coefficients.
const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Exhaustive scan of the gauge-fixed grid at the given angular step (at
/// most 10 degrees). Returns the first-found maximum; exact ties are
/// recorded. Grid rows evaluate in parallel; the reduction is sequential in
/// row order, so the result never depends on thread scheduling.
pub fn grid_search(objective: &Objective, resolution_deg: f64) -> Result<OptimizationResult> {
    grid_search_with(objective.name(), |c| objective.evaluate(c), resolution_deg)
}

/// [`grid_search`] over an arbitrary objective function.
pub fn grid_search_with<F>(
    name: &str,
    objective: F,
    resolution_deg: f64,
) -> Result<OptimizationResult>
where
    F: Fn(&Config) -> f64 + Sync,
{
    if !(resolution_deg > 0.0 && resolution_deg <= 10.0) {
        return Err(Error::Domain(format!(
            "grid resolution {resolution_deg} deg out of range (0, 10]"
        )));
    }
    let n_theta = (180.0 / resolution_deg).floor() as u64 + 1;
    let n_phi = (360.0 / resolution_deg).ceil() as u64;
    let evaluations = n_theta * n_theta * n_phi;

    struct RowResult {
        best_value: f64,
        best_angles: Angles,
        /// Improvements over this row's running best, in scan order.
        improvements: Vec<(u64, f64, Angles)>,
        /// Points tying this row's final best, capped; total count alongside.
        ties: Vec<Angles>,
        tie_count: u64,
    }

    let rows: Vec<RowResult> = (0..n_theta)
        .into_par_iter()
        .map(|i_b| {
            let theta_b = (i_b as f64 * resolution_deg).to_radians();
            let a = Direction::plus_z();
            let b = Direction::new(theta_b.sin(), 0.0, theta_b.cos())
                .expect("spherical components cannot all vanish");
            let mut row = RowResult {
                best_value: f64::NEG_INFINITY,
                best_angles: [theta_b, 0.0, 0.0],
                improvements: Vec::new(),
                ties: Vec::new(),
                tie_count: 0,
            };
            for i_c in 0..n_theta {
                let theta_c = (i_c as f64 * resolution_deg).to_radians();
                for i_p in 0..n_phi {
                    let phi_c = (i_p as f64 * resolution_deg).to_radians();
                    let config = Config {
                        a,
                        b,
                        c: Direction::new(
                            theta_c.sin() * phi_c.cos(),
                            theta_c.sin() * phi_c.sin(),
                            theta_c.cos(),
                        )
                        .expect("spherical components cannot all vanish"),
                    };
                    let value = objective(&config);
                    let iteration = (i_b * n_theta + i_c) * n_phi + i_p;
                    let angles = [theta_b, theta_c, phi_c];
                    if value > row.best_value {
                        row.best_value = value;
                        row.best_angles = angles;
                        row.improvements.push((iteration, value, angles));
                        row.ties.clear();
                        row.tie_count = 0;
                    } else if value == row.best_value {
                        row.tie_count += 1;
                        if row.ties.len() < MAX_RECORDED_TIES {
                            row.ties.push(angles);
                        }
                    }
                }
            }
            row
        })
        .collect();

    // Sequential reduce in row order reproduces the single-threaded scan.
    let mut best_value = f64::NEG_INFINITY;
    let mut best_angles = [0.0; 3];
    let mut trace = Vec::new();
    for row in &rows {
        for (iteration, value, angles) in &row.improvements {
            if *value > best_value {
                best_value = *value;
                best_angles = *angles;
                trace.push(TracePoint {
                    iteration: *iteration,
                    value: *value,
                });
            }
        }
    }
    let mut ties_angles = Vec::new();
    let mut tie_total = 0u64;
    for row in &rows {
        if row.best_value == best_value {
            // The row best itself ties unless it IS the reported best.
            if row.best_angles != best_angles {
                tie_total += 1;
                if ties_angles.len() < MAX_RECORDED_TIES {
                    ties_angles.push(row.best_angles);
                }
            }
            tie_total += row.tie_count;
            for angles in &row.ties {
                if ties_angles.len() < MAX_RECORDED_TIES {
                    ties_angles.push(*angles);
                }
            }
        }
    }

    Ok(OptimizationResult {
        objective: name.to_string(),
        best_config: config_from_angles(best_angles),
        best_angles_rad: best_angles,
        best_value,
        converged: true,
        trace,
        method_params: MethodParams::Grid {
            resolution_deg,
            evaluations,
            ties: tie_total,
        },
        ties_angles_rad: ties_angles,
    })
}

/// Derivative-free simplex refinement from a starting configuration, on the
/// gauge-fixed angles, until the simplex value spread drops under
/// `tolerance` (or the iteration cap, reported via `converged = false`).
/// The returned value is never below the start's.
pub fn local_refine(
    objective: &Objective,
    start: &Config,
    tolerance: f64,
) -> Result<OptimizationResult> {
    local_refine_with(objective.name(), |c| objective.evaluate(c), start, tolerance)
}

/// [`local_refine`] over an arbitrary objective function.
pub fn local_refine_with<F>(
    name: &str,
    objective: F,
    start: &Config,
    tolerance: f64,
) -> Result<OptimizationResult>
where
    F: Fn(&Config) -> f64,
{
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance {tolerance} must be positive and finite"
        )));
    }
    let eval = |angles: Angles| objective(&config_from_angles(angles));
    let start_angles = angles_from_config(start);

    // Simplex vertices: the start plus one step along each angle.
    let mut simplex: Vec<(Angles, f64)> = Vec::with_capacity(4);
    simplex.push((start_angles, eval(start_angles)));
    for i in 0..3 {
        let mut v = start_angles;
        v[i] += DEFAULT_INITIAL_STEP_RAD;
        simplex.push((v, eval(v)));
    }

    let mut trace = vec![TracePoint {
        iteration: 0,
        value: simplex[0].1,
    }];
    let mut best_so_far = simplex[0].1;
    let mut converged = false;
    let mut iterations = 0u64;

    for iteration in 1..=DEFAULT_MAX_ITERATIONS {
        iterations = iteration;
        // Descending by value: index 0 is the best vertex, 3 the worst.
        simplex.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        if simplex[0].1 > best_so_far {
            best_so_far = simplex[0].1;
            trace.push(TracePoint {
                iteration,
                value: best_so_far,
            });
        }
        if simplex[0].1 - simplex[3].1 < tolerance {
            converged = true;
            break;
        }

        let centroid = {
            let mut c = [0.0; 3];
            for (v, _) in simplex.iter().take(3) {
                for i in 0..3 {
                    c[i] += v[i] / 3.0;
                }
            }
            c
        };
        let worst = simplex[3];
        let shifted = |coef: f64| {
            let mut p = [0.0; 3];
            for i in 0..3 {
                p[i] = centroid[i] + coef * (centroid[i] - worst.0[i]);
            }
            p
        };

        let reflected = shifted(REFLECTION);
        let reflected_value = eval(reflected);
        if reflected_value > simplex[0].1 {
            let expanded = shifted(EXPANSION);
            let expanded_value = eval(expanded);
            simplex[3] = if expanded_value > reflected_value {
                (expanded, expanded_value)
            } else {
                (reflected, reflected_value)
            };
        } else if reflected_value > simplex[2].1 {
            simplex[3] = (reflected, reflected_value);
        } else {
            let contracted = if reflected_value > worst.1 {
                shifted(CONTRACTION)
            } else {
                shifted(-CONTRACTION)
            };
            let contracted_value = eval(contracted);
            if contracted_value > worst.1.max(reflected_value) {
                simplex[3] = (contracted, contracted_value);
            } else {
                // Shrink everything toward the best vertex.
                let best = simplex[0];
                for vertex in simplex.iter_mut().skip(1) {
                    for i in 0..3 {
                        vertex.0[i] = best.0[i] + SHRINK * (vertex.0[i] - best.0[i]);
                    }
                    vertex.1 = eval(vertex.0);
                }
            }
        }
    }

    simplex.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    if simplex[0].1 > best_so_far {
        trace.push(TracePoint {
            iteration: iterations,
            value: simplex[0].1,
        });
    }
    let (best_angles, best_value) = simplex[0];
    Ok(OptimizationResult {
        objective: name.to_string(),
        best_config: config_from_angles(best_angles),
        best_angles_rad: best_angles,
        best_value,
        converged,
        trace,
        method_params: MethodParams::NelderMead {
            tolerance,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            initial_step_rad: DEFAULT_INITIAL_STEP_RAD,
            reflection: REFLECTION,
            expansion: EXPANSION,
            contraction: CONTRACTION,
            shrink: SHRINK,
        },
        ties_angles_rad: Vec::new(),
    })
}

/// Refines from `starts` random configurations (seeded, deterministic) and
/// returns the best result; ties go to the earliest start. Starts refine in
/// parallel.
pub fn multi_start(
    objective: &Objective,
    starts: u32,
    seed: u64,
    tolerance: f64,
) -> Result<OptimizationResult> {
    multi_start_with(
        objective.name(),
        |c| objective.evaluate(c),
        starts,
        seed,
        tolerance,
    )
}

/// [`multi_start`] over an arbitrary objective function.
pub fn multi_start_with<F>(
    name: &str,
    objective: F,
    starts: u32,
    seed: u64,
    tolerance: f64,
) -> Result<OptimizationResult>
where
    F: Fn(&Config) -> f64 + Sync,
{
    use rand::Rng;
    use rand::SeedableRng;
    if starts == 0 {
        return Err(Error::Domain("multi-start needs at least one start".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let start_angles: Vec<Angles> = (0..starts)
        .map(|_| {
            [
                rng.random::<f64>() * std::f64::consts::PI,
                rng.random::<f64>() * std::f64::consts::PI,
                rng.random::<f64>() * std::f64::consts::TAU,
            ]
        })
        .collect();
    let results: Vec<OptimizationResult> = start_angles
        .into_par_iter()
        .map(|angles| local_refine_with(name, &objective, &config_from_angles(angles), tolerance))
        .collect::<Result<_>>()?;
    let best_index = results
        .iter()
        .enumerate()
        .max_by(|(i, x), (j, y)| {
            x.best_value
                .partial_cmp(&y.best_value)
                .unwrap()
                // On exact ties prefer the earliest start.
                .then(j.cmp(i))
        })
        .map(|(i, _)| i)
        .unwrap();
    let winner = &results[best_index];
    Ok(OptimizationResult {
        objective: name.to_string(),
        best_config: winner.best_config,
        best_angles_rad: winner.best_angles_rad,
        best_value: winner.best_value,
        converged: winner.converged,
        trace: winner.trace.clone(),
        method_params: MethodParams::MultiStart {
            starts,
            seed,
            tolerance,
        },
        ties_angles_rad: Vec::new(),
    })
}

/// One reference configuration's closed-form check.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigCheck {
    pub config: Config,
    pub value: f64,
    pub expected: f64,
    pub delta: f64,
}

/// Both closed forms evaluated at their reference configurations.
#[derive(Clone, Debug, Serialize)]
pub struct PaperConfigCheck {
    pub ineq16: ConfigCheck,
    pub ineq18: ConfigCheck,
}

/// Evaluates the reference configurations — orthogonal `b`, `c` with
/// `a = (b-c)/sqrt(2)` for the expectation form, orthogonal `a`, `c` with
/// `b = (a+c)/sqrt(2)` for the probability form — and checks the exact
/// values sqrt(2) and sqrt(2) + 1/2 to 1e-12. A failure signals an
/// implementation bug, not bad input.
pub fn verify_paper_configs() -> Result<PaperConfigCheck> {
    let dir = |x: f64, y: f64, z: f64| Direction::new(x, y, z).expect("nonzero by construction");
    let config_16 = Config {
        b: dir(1.0, 0.0, 0.0),
        c: dir(0.0, 1.0, 0.0),
        a: dir(1.0, -1.0, 0.0),
    };
    let config_18 = Config {
        a: dir(1.0, 0.0, 0.0),
        c: dir(0.0, 1.0, 0.0),
        b: dir(1.0, 1.0, 0.0),
    };
    let sqrt2 = std::f64::consts::SQRT_2;
    let check_16 = ConfigCheck {
        config: config_16,
        value: quantum_lhs_16(&config_16),
        expected: sqrt2,
        delta: (quantum_lhs_16(&config_16) - sqrt2).abs(),
    };
    let check_18 = ConfigCheck {
        config: config_18,
        value: quantum_lhs_18(&config_18),
        expected: sqrt2 + 0.5,
        delta: (quantum_lhs_18(&config_18) - (sqrt2 + 0.5)).abs(),
    };
    for (name, check) in [("ineq16", &check_16), ("ineq18", &check_18)] {
        if check.delta > 1e-12 {
            return Err(Error::Domain(format!(
                "closed-form self-check failed: {name} evaluated to {} instead of {} \
                 (delta {:.3e}) — this indicates an implementation bug",
                check.value, check.expected, check.delta
            )));
        }
    }
    Ok(PaperConfigCheck {
        ineq16: check_16,
        ineq18: check_18,
    })
}
