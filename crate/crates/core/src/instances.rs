//! Canonical and randomly generated problem instances.
//!
//! Random rows draw integer weights in `1..=9` and normalize them; random
//! costs are multiples of `0.1` in `[0, 9.9]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ProblemSpec};

/// Alphabet sizes and horizon of a generated instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub controllers: usize,
    pub horizon: usize,
    pub delay: usize,
    pub x_size: usize,
    pub y_size: Vec<usize>,
    pub u_size: Vec<usize>,
}

impl Shape {
    pub fn binary(controllers: usize, horizon: usize, delay: usize) -> Self {
        Shape {
            controllers,
            horizon,
            delay,
            x_size: 2,
            y_size: vec![2; controllers],
            u_size: vec![2; controllers],
        }
    }

    fn joint(&self) -> usize {
        self.u_size.iter().product()
    }
}

fn random_row(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let w: Vec<u32> = (0..len).map(|_| rng.gen_range(1..=9)).collect();
    let total: u32 = w.iter().sum();
    w.into_iter().map(|v| v as f64 / total as f64).collect()
}

fn random_cost(rng: &mut impl Rng) -> f64 {
    rng.gen_range(0..100) as f64 / 10.0
}

/// A fully random instance of the given shape.
pub fn random_spec(shape: &Shape, rng: &mut impl Rng) -> ProblemSpec {
    let a = shape.joint();
    let x0_dist = random_row(rng, shape.x_size);
    let trans = (0..shape.horizon)
        .map(|_| {
            (0..shape.x_size)
                .map(|_| (0..a).map(|_| random_row(rng, shape.x_size)).collect())
                .collect()
        })
        .collect();
    let obs = (0..shape.controllers)
        .map(|k| {
            (0..shape.horizon)
                .map(|_| {
                    (0..shape.x_size)
                        .map(|_| random_row(rng, shape.y_size[k]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let cost = (0..shape.horizon)
        .map(|_| {
            (0..shape.x_size)
                .map(|_| (0..a).map(|_| random_cost(rng)).collect())
                .collect()
        })
        .collect();
    ProblemSpec {
        controllers: shape.controllers,
        horizon: shape.horizon,
        delay: shape.delay,
        x_size: shape.x_size,
        y_size: shape.y_size.clone(),
        u_size: shape.u_size.clone(),
        x0_dist,
        trans,
        obs,
        cost,
    }
}

/// Binary alphabets with uniform kernels and cost `(x + a) mod 3`.
pub fn uniform_binary(controllers: usize, horizon: usize, delay: usize) -> Result<Model> {
    let shape = Shape::binary(controllers, horizon, delay);
    let a = shape.joint();
    let spec = ProblemSpec {
        controllers,
        horizon,
        delay,
        x_size: 2,
        y_size: shape.y_size.clone(),
        u_size: shape.u_size.clone(),
        x0_dist: vec![0.5; 2],
        trans: vec![vec![vec![vec![0.5; 2]; a]; 2]; horizon],
        obs: vec![vec![vec![vec![0.5; 2]; 2]; horizon]; controllers],
        cost: (0..horizon)
            .map(|_| {
                (0..2)
                    .map(|x| (0..a).map(|j| ((x + j) % 3) as f64).collect())
                    .collect()
            })
            .collect(),
    };
    Model::new(spec)
}

/// Two-controller instance whose second controller has a single observation
/// and a single action.
pub fn io() -> ProblemSpec {
    let shape = Shape {
        controllers: 2,
        horizon: 2,
        delay: 1,
        x_size: 2,
        y_size: vec![2, 1],
        u_size: vec![2, 1],
    };
    random_spec(&shape, &mut ChaCha8Rng::seed_from_u64(100))
}

/// Two controllers, one-step delay, horizon two, binary alphabets.
pub fn i1() -> ProblemSpec {
    random_spec(&Shape::binary(2, 2, 1), &mut ChaCha8Rng::seed_from_u64(101))
}

/// Two controllers, two-step delay, horizon three, binary alphabets.
pub fn i2() -> ProblemSpec {
    random_spec(&Shape::binary(2, 3, 2), &mut ChaCha8Rng::seed_from_u64(102))
}

/// Two perfectly observed binary subsystems, `x = 2·x¹ + x²`, each
/// controller observing its own coordinate; transitions are deterministic.
pub fn ia() -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (controllers, horizon, delay, x_size, a) = (2, 3, 2, 4, 4);
    let x0_dist = random_row(&mut rng, x_size);
    let trans = (0..horizon)
        .map(|_| {
            (0..x_size)
                .map(|_| {
                    (0..a)
                        .map(|_| {
                            let mut row = vec![0.0; x_size];
                            row[rng.gen_range(0..x_size)] = 1.0;
                            row
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let obs = (0..controllers)
        .map(|k| {
            (0..horizon)
                .map(|_| {
                    (0..x_size)
                        .map(|x| {
                            let mut row = vec![0.0; 2];
                            row[subsystem(x, k)] = 1.0;
                            row
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let cost = (0..horizon)
        .map(|_| {
            (0..x_size)
                .map(|_| (0..a).map(|_| random_cost(&mut rng)).collect())
                .collect()
        })
        .collect();
    ProblemSpec {
        controllers,
        horizon,
        delay,
        x_size,
        y_size: vec![2, 2],
        u_size: vec![2, 2],
        x0_dist,
        trans,
        obs,
        cost,
    }
}

/// Coordinate `k` of a product state with binary components, controller 0
/// most significant.
pub fn subsystem(x: usize, k: usize) -> usize {
    (x >> (1 - k)) & 1
}

pub const CANONICAL: [&str; 4] = ["IO", "I1", "I2", "IA"];

pub fn canonical(name: &str) -> Result<ProblemSpec> {
    match name {
        "IO" => Ok(io()),
        "I1" => Ok(i1()),
        "I2" => Ok(i2()),
        "IA" => Ok(ia()),
        _ => Err(Error::Schema {
            field: "instance".into(),
            message: format!("unknown canonical instance `{name}`"),
        }),
    }
}

/// The shipped problem file of a canonical instance.
pub fn shipped(name: &str) -> Option<&'static str> {
    match name {
        "IO" => Some(include_str!("../instances/io.json")),
        "I1" => Some(include_str!("../instances/i1.json")),
        "I2" => Some(include_str!("../instances/i2.json")),
        "IA" => Some(include_str!("../instances/ia.json")),
        _ => None,
    }
}
