//! Direction and state geometry: unit 3-vectors, dot products, and the
//! eigenstate decomposition used by the qubit model.

use std::fmt;
use std::ops::Neg;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Error;

/// Unit-norm tolerance accepted on stored directions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A measurement direction: a unit vector in R^3.
///
/// Constructors normalize, so any stored `Direction` satisfies
/// `x^2 + y^2 + z^2 = 1` within [`UNIT_TOLERANCE`]. Serializes as three
/// decimal reals `[x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    x: f64,
    y: f64,
    z: f64,
}

impl Direction {
    /// Normalizes `(x, y, z)`. A zero or non-finite vector is rejected.
    /// Already-unit input (to a few ulp) is kept verbatim, which makes
    /// serialization round-trips reproduce components exactly.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, Error> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::ZeroVector);
        }
        let norm_sq = x * x + y * y + z * z;
        if (norm_sq - 1.0).abs() <= 16.0 * f64::EPSILON {
            return Ok(Direction { x, y, z });
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Direction {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// The +z axis, the documented default reference direction.
    pub fn plus_z() -> Self {
        Direction {
            x: 0.0,
            y: 0.0,
            z: 1.0,
        }
    }

    /// The +x axis.
    pub fn plus_x() -> Self {
        Direction {
            x: 1.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Scalar product, clamped to [-1, 1] to protect downstream
    /// `acos`/probability formulas against rounding.
    pub fn dot(&self, other: &Direction) -> f64 {
        let d = self.x * other.x + self.y * other.y + self.z * other.z;
        d.clamp(-1.0, 1.0)
    }

    /// Cross product. Not unit in general; callers normalize when needed.
    pub fn cross_components(&self, other: &Direction) -> [f64; 3] {
        [
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        ]
    }
}

impl Neg for Direction {
    type Output = Direction;

    fn neg(self) -> Direction {
        Direction {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.z].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(deserializer)?;
        Direction::new(x, y, z).map_err(D::Error::custom)
    }
}

/// One of the two values of the dichotomic magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    /// The outcome as +1 or -1.
    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    /// The outcome as +1.0 or -1.0.
    pub fn sign(self) -> f64 {
        f64::from(self.value())
    }

    pub fn flip(self) -> Outcome {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    /// 0 for `Plus`, 1 for `Minus`; table index order.
    pub fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Outcome> {
        match index {
            0 => Some(Outcome::Plus),
            1 => Some(Outcome::Minus),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Plus => write!(f, "+1"),
            Outcome::Minus => write!(f, "-1"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "+1" | "+" | "1" => Ok(Outcome::Plus),
            "-1" | "-" => Ok(Outcome::Minus),
            other => Err(Error::Parse(format!("invalid outcome {other:?}"))),
        }
    }
}

/// One of the three external parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingLabel {
    A,
    B,
    C,
}

impl SettingLabel {
    pub const ALL: [SettingLabel; 3] = [SettingLabel::A, SettingLabel::B, SettingLabel::C];

    pub fn index(self) -> usize {
        match self {
            SettingLabel::A => 0,
            SettingLabel::B => 1,
            SettingLabel::C => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<SettingLabel> {
        match index {
            0 => Some(SettingLabel::A),
            1 => Some(SettingLabel::B),
            2 => Some(SettingLabel::C),
            _ => None,
        }
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettingLabel::A => write!(f, "A"),
            SettingLabel::B => write!(f, "B"),
            SettingLabel::C => write!(f, "C"),
        }
    }
}

impl FromStr for SettingLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "A" | "a" => Ok(SettingLabel::A),
            "B" | "b" => Ok(SettingLabel::B),
            "C" | "c" => Ok(SettingLabel::C),
            other => Err(Error::Parse(format!("invalid setting label {other:?}"))),
        }
    }
}

/// The triple of measurement directions bound to the labels A, B, C.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub a: Direction,
    pub b: Direction,
    pub c: Direction,
}

impl Config {
    pub fn new(a: Direction, b: Direction, c: Direction) -> Self {
        Config { a, b, c }
    }

    pub fn direction(&self, setting: SettingLabel) -> Direction {
        match setting {
            SettingLabel::A => self.a,
            SettingLabel::B => self.b,
            SettingLabel::C => self.c,
        }
    }

    /// True when two of the directions coincide or are antipodal. Such
    /// configs evaluate normally but reports flag them.
    pub fn is_degenerate(&self) -> bool {
        let pairs = [(self.a, self.b), (self.a, self.c), (self.b, self.c)];
        pairs
            .iter()
            .any(|(u, v)| u.dot(v).abs() >= 1.0 - UNIT_TOLERANCE)
    }
}

/// Coefficients of `|x+>` in the `e` eigenbasis:
/// `(sqrt((1 + x.e)/2), sqrt((1 - x.e)/2))`.
///
/// These are the real amplitudes of the coplanar (zero azimuthal phase)
/// decomposition; general probability computations in this crate go
/// through Bloch-vector dot products instead, which are phase-independent.
/// Kept as the documented formula and for test cross-checks.
pub fn eigen_amplitudes(x: &Direction, e: &Direction) -> (f64, f64) {
    let cos_alpha = x.dot(e);
    let plus = ((1.0 + cos_alpha) / 2.0).max(0.0).sqrt();
    let minus = ((1.0 - cos_alpha) / 2.0).max(0.0).sqrt();
    (plus, minus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual}"
        );
    }

    #[test]
    fn make_direction_normalizes() {
        let d = Direction::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(d.components(), [0.0, 0.0, 1.0]);

        let d = Direction::new(2.0, 0.0, 0.0).unwrap();
        assert_eq!(d.components(), [1.0, 0.0, 0.0]);

        let d = Direction::new(1.0, 1.0, 0.0).unwrap();
        assert_close(d.x(), std::f64::consts::FRAC_1_SQRT_2, 1e-15);
        assert_close(d.y(), std::f64::consts::FRAC_1_SQRT_2, 1e-15);
        assert_eq!(d.z(), 0.0);
    }

    #[test]
    fn zero_and_nonfinite_vectors_rejected() {
        assert!(matches!(
            Direction::new(0.0, 0.0, 0.0),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            Direction::new(f64::NAN, 0.0, 1.0),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            Direction::new(f64::INFINITY, 0.0, 0.0),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn dot_examples() {
        let z = Direction::plus_z();
        assert_eq!(z.dot(&z), 1.0);

        let x = Direction::plus_x();
        assert_eq!(z.dot(&x), 0.0);

        // Polar angle 60 degrees from the z axis.
        let tilted = Direction::new(60f64.to_radians().sin(), 0.0, 60f64.to_radians().cos())
            .unwrap();
        assert_close(z.dot(&tilted), 0.5, 1e-15);
    }

    #[test]
    fn dot_symmetric_and_clamped() {
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = || {
            // xorshift; test-local generator is enough here
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..200 {
            let u = Direction::new(next(), next(), next()).unwrap();
            let v = Direction::new(next(), next(), next()).unwrap();
            assert_eq!(u.dot(&v), v.dot(&u));
            assert!(u.dot(&v) >= -1.0 && u.dot(&v) <= 1.0);
            assert_close(u.dot(&u), 1.0, 1e-12);
        }
    }

    #[test]
    fn eigen_amplitudes_examples() {
        let e = Direction::plus_z();
        let (p, m) = eigen_amplitudes(&e, &e);
        assert_eq!((p, m), (1.0, 0.0));

        let x = Direction::plus_x();
        let (p, m) = eigen_amplitudes(&x, &e);
        assert_close(p, std::f64::consts::FRAC_1_SQRT_2, 1e-15);
        assert_close(m, std::f64::consts::FRAC_1_SQRT_2, 1e-15);

        let (p, m) = eigen_amplitudes(&-e, &e);
        assert_eq!((p, m), (0.0, 1.0));
    }

    #[test]
    fn eigen_amplitudes_squares_sum_to_one() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..500 {
            let x = Direction::new(next(), next(), next()).unwrap();
            let e = Direction::new(next(), next(), next()).unwrap();
            let (p, m) = eigen_amplitudes(&x, &e);
            assert!((0.0..=1.0).contains(&p));
            assert!((0.0..=1.0).contains(&m));
            assert_close(p * p + m * m, 1.0, 1e-12);
        }
    }

    #[test]
    fn degenerate_config_flagged() {
        let a = Direction::plus_z();
        let b = Direction::plus_x();
        let c = Direction::new(0.0, 1.0, 0.0).unwrap();
        assert!(!Config::new(a, b, c).is_degenerate());
        assert!(Config::new(a, a, c).is_degenerate());
        assert!(Config::new(a, -a, c).is_degenerate());
    }

    #[test]
    fn direction_serde_roundtrip() {
        let d = Direction::new(1.0, 2.0, -2.0).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: Direction = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);

        // Near-unit inputs with file rounding normalize rather than fail.
        let back: Direction = serde_json::from_str("[0.7071067,0.7071067,0.0]").unwrap();
        assert_close(back.dot(&back), 1.0, 1e-12);

        assert!(serde_json::from_str::<Direction>("[0.0,0.0,0.0]").is_err());
    }
}
