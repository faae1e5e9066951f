//! TSP / CVRP instances: generation, distances, symmetry augmentation and IO.

pub mod cvrplib;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Tsp,
    Cvrp,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Tsp => "tsp",
            Problem::Cvrp => "cvrp",
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(Problem::Tsp),
            "cvrp" => Ok(Problem::Cvrp),
            other => Err(Error::Argument(format!("unknown problem {other:?}"))),
        }
    }
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

fn unit() -> f64 {
    1.0
}

/// One routing problem. For CVRP, node 0 is the depot and `demands[0] == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub problem: Problem,
    pub id: String,
    pub coords: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demands: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    /// Length of one coordinate unit in the instance's original units.
    #[serde(default = "unit", skip_serializing_if = "is_unit")]
    pub unit_scale: f64,
}

impl Instance {
    pub fn tsp(id: impl Into<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        let inst = Instance {
            problem: Problem::Tsp,
            id: id.into(),
            coords,
            demands: None,
            capacity: None,
            unit_scale: 1.0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn cvrp(id: impl Into<String>, coords: Vec<[f64; 2]>, demands: Vec<u32>, capacity: u32) -> Result<Self> {
        let inst = Instance {
            problem: Problem::Cvrp,
            id: id.into(),
            coords,
            demands: Some(demands),
            capacity: Some(capacity),
            unit_scale: 1.0,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Number of nodes, including the CVRP depot.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Scale `N` fed to the adaptation bias: the node count.
    pub fn scale(&self) -> usize {
        self.coords.len()
    }

    pub fn customers(&self) -> usize {
        match self.problem {
            Problem::Tsp => self.coords.len(),
            Problem::Cvrp => self.coords.len() - 1,
        }
    }

    pub fn demand(&self, node: usize) -> u32 {
        self.demands.as_ref().map_or(0, |d| d[node])
    }

    pub fn capacity(&self) -> u32 {
        self.capacity.unwrap_or(0)
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    pub fn in_unit_square(&self) -> bool {
        self.coords
            .iter()
            .all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("{}: non-finite coordinate", self.id)));
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::Argument(format!("{}: unit_scale must be positive", self.id)));
        }
        match self.problem {
            Problem::Tsp => {
                if self.coords.len() < 2 {
                    return Err(Error::Argument(format!("{}: TSP needs at least 2 nodes", self.id)));
                }
                if self.demands.is_some() || self.capacity.is_some() {
                    return Err(Error::Argument(format!("{}: TSP instance carries demands", self.id)));
                }
            }
            Problem::Cvrp => {
                if self.coords.len() < 2 {
                    return Err(Error::Argument(format!(
                        "{}: CVRP needs a depot and at least one customer",
                        self.id
                    )));
                }
                let (Some(demands), Some(capacity)) = (&self.demands, self.capacity) else {
                    return Err(Error::Argument(format!("{}: CVRP needs demands and capacity", self.id)));
                };
                if capacity == 0 {
                    return Err(Error::Argument(format!("{}: capacity must be positive", self.id)));
                }
                if demands.len() != self.coords.len() {
                    return Err(Error::Argument(format!(
                        "{}: {} demands for {} nodes",
                        self.id,
                        demands.len(),
                        self.coords.len()
                    )));
                }
                if demands[0] != 0 {
                    return Err(Error::Argument(format!("{}: depot demand must be 0", self.id)));
                }
                if let Some(i) = demands.iter().position(|&d| d > capacity) {
                    return Err(Error::Argument(format!(
                        "{}: demand {} of node {i} exceeds capacity {capacity}",
                        self.id, demands[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::from_coords(&self.coords)
    }
}

/// Dense symmetric Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_coords(coords: &[[f64; 2]]) -> Self {
        let n = coords.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

/// How a generated CVRP instance gets its capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacityRule {
    Fixed { capacity: u32 },
    /// Discrete uniform over `[lo, hi]`, drawn once per instance.
    Uniform { lo: u32, hi: u32 },
    /// Test-set convention keyed by customer count.
    ByScale,
}

impl CapacityRule {
    /// Capacity used for `customers` under the test-set convention
    /// (100 → 50, 200 → 80, 500 → 100, 1000 → 250; smaller scales follow
    /// the 10/20/50 customer settings 20/30/40).
    pub fn capacity_for_scale(customers: usize) -> u32 {
        match customers {
            0..=10 => 20,
            11..=20 => 30,
            21..=50 => 40,
            51..=100 => 50,
            101..=200 => 80,
            201..=500 => 100,
            _ => 250,
        }
    }

    fn draw(self, customers: usize, rng: &mut impl Rng) -> Result<u32> {
        match self {
            CapacityRule::Fixed { capacity } if capacity > 0 => Ok(capacity),
            CapacityRule::Fixed { .. } => Err(Error::Argument("capacity must be positive".into())),
            CapacityRule::Uniform { lo, hi } if 0 < lo && lo <= hi => Ok(rng.gen_range(lo..=hi)),
            CapacityRule::Uniform { lo, hi } => Err(Error::Argument(format!("bad capacity range [{lo}, {hi}]"))),
            CapacityRule::ByScale => Ok(Self::capacity_for_scale(customers)),
        }
    }
}

pub const MAX_DEMAND: u32 = 9;

/// Samples one instance. `n` counts cities (TSP) or customers (CVRP).
/// Coordinates are i.i.d. uniform on the unit square; CVRP demands are
/// i.i.d. integers in `[1, min(9, capacity)]`.
pub fn generate_uniform(problem: Problem, n: usize, capacity: CapacityRule, seed: u64) -> Result<Instance> {
    let min = match problem {
        Problem::Tsp => 2,
        Problem::Cvrp => 1,
    };
    if n < min {
        return Err(Error::Argument(format!("{} needs n >= {min}, got {n}", problem.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = format!("{}{n}-{seed:016x}", problem.name());
    match problem {
        Problem::Tsp => {
            let coords = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            Instance::tsp(id, coords)
        }
        Problem::Cvrp => {
            let cap = capacity.draw(n, &mut rng)?;
            let coords = (0..=n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let top = MAX_DEMAND.min(cap);
            let demands = std::iter::once(0).chain((0..n).map(|_| rng.gen_range(1..=top))).collect();
            Instance::cvrp(id, coords, demands, cap)
        }
    }
}

/// Seed of the `index`-th instance of a generated set.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_set(problem: Problem, n: usize, capacity: CapacityRule, seed: u64, count: usize) -> Result<Vec<Instance>> {
    (0..count as u64)
        .map(|i| generate_uniform(problem, n, capacity, derive_seed(seed, i)))
        .collect()
}

/// The eight dihedral transforms of the unit square, identity first.
pub const DIHEDRAL: [fn([f64; 2]) -> [f64; 2]; 8] = [
    |[x, y]| [x, y],
    |[x, y]| [y, x],
    |[x, y]| [x, 1.0 - y],
    |[x, y]| [1.0 - y, x],
    |[x, y]| [1.0 - x, y],
    |[x, y]| [y, 1.0 - x],
    |[x, y]| [1.0 - x, 1.0 - y],
    |[x, y]| [1.0 - y, 1.0 - x],
];

/// The eight symmetry images of an instance; node indices are preserved.
pub fn augment_x8(inst: &Instance) -> Result<Vec<Instance>> {
    if !inst.in_unit_square() {
        return Err(Error::Argument(format!(
            "{}: augmentation needs coordinates in [0,1]^2",
            inst.id
        )));
    }
    Ok(DIHEDRAL
        .iter()
        .enumerate()
        .map(|(k, f)| Instance {
            id: if k == 0 { inst.id.clone() } else { format!("{}#aug{k}", inst.id) },
            coords: inst.coords.iter().map(|&c| f(c)).collect(),
            ..inst.clone()
        })
        .collect())
}
