//! Oracle and invariant battery behind the `selftest` CLI subcommand.
//!
//! Each check is self-contained: it builds its own inputs from fixed seeds,
//! runs the relevant oracle (central differences, closed-form identities) and
//! reports pass/fail with a measured figure. The full battery is also the
//! backbone of the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::fd::finite_diff_check;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }
}

/// Uniform values in [-1, 1].
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64_vec(shape, data).expect("shape/len consistent")
}

/// Values bounded away from zero, |v| in [0.2, 1.2]; keeps ReLU-style kinks
/// farther than any finite-difference step.
pub fn rand_tensor_offzero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = 0.2 + rng.gen_range(0.0..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_f64_vec(shape, data).expect("shape/len consistent")
}

/// Pairwise-separated values (a shuffled grid spanning [-1, 1]) so argmax
/// selections cannot flip under finite-difference perturbations.
pub fn rand_tensor_separated(rng: &mut ChaCha8Rng, shape: Vec<usize>, lane: usize) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let lanes = n / lane;
    let mut data = Vec::with_capacity(n);
    for _ in 0..lanes {
        let mut grid: Vec<f64> =
            (0..lane).map(|i| -1.0 + 2.0 * (i as f64) / (lane as f64 - 1.0)).collect();
        for i in (1..grid.len()).rev() {
            let j = rng.gen_range(0..=i);
            grid.swap(i, j);
        }
        data.extend_from_slice(&grid);
    }
    Tensor::from_f64_vec(shape, data).expect("shape/len consistent")
}

type Builder = Box<dyn Fn(&mut Tape<f32>, &[NodeId]) -> Result<NodeId>>;

struct OpCase {
    name: &'static str,
    inputs: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f32>>>,
    builder: Builder,
}

fn scalarize(tape: &mut Tape<f32>, id: NodeId) -> Result<NodeId> {
    tape.sum_all(id)
}

fn op_cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let grad = |t: Tensor<f32>| t.with_grad();

    cases.push(OpCase {
        name: "add",
        inputs: Box::new(move |rng| {
            vec![rand_tensor(rng, vec![3, 4]).with_grad(), rand_tensor(rng, vec![3, 4]).with_grad()]
        }),
        builder: Box::new(|t, ids| {
            let y = t.add(ids[0], ids[1])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "sub",
        inputs: Box::new(move |rng| {
            vec![rand_tensor(rng, vec![3, 4]).with_grad(), rand_tensor(rng, vec![3, 4]).with_grad()]
        }),
        builder: Box::new(|t, ids| {
            let y = t.sub(ids[0], ids[1])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "mul",
        inputs: Box::new(move |rng| {
            vec![rand_tensor(rng, vec![3, 4]).with_grad(), rand_tensor(rng, vec![3, 4]).with_grad()]
        }),
        builder: Box::new(|t, ids| {
            let y = t.mul(ids[0], ids[1])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "scale",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![2, 5]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.scale(ids[0], 0.37)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "add_broadcast",
        inputs: Box::new(move |rng| {
            vec![rand_tensor(rng, vec![2, 3, 4]).with_grad(), rand_tensor(rng, vec![3, 4]).with_grad()]
        }),
        builder: Box::new(|t, ids| {
            let y = t.add_broadcast(ids[0], ids[1])?;
            scalarize(t, y)
        }),
    });
    for (name, ta, tb) in [
        ("matmul_nn", false, false),
        ("matmul_nt", false, true),
        ("matmul_tn", true, false),
        ("matmul_tt", true, true),
    ] {
        cases.push(OpCase {
            name,
            inputs: Box::new(move |rng| {
                let (m, k, n) = (3usize, 4usize, 2usize);
                let a = if ta { vec![k, m] } else { vec![m, k] };
                let b = if tb { vec![n, k] } else { vec![k, n] };
                vec![rand_tensor(rng, a).with_grad(), rand_tensor(rng, b).with_grad()]
            }),
            builder: Box::new(move |t, ids| {
                let y = t.matmul(ids[0], ids[1], ta, tb)?;
                scalarize(t, y)
            }),
        });
    }
    for (name, tb) in [("bmm_nn", false), ("bmm_nt", true)] {
        cases.push(OpCase {
            name,
            inputs: Box::new(move |rng| {
                let (nb, m, k, n) = (2usize, 3usize, 4usize, 2usize);
                let b = if tb { vec![nb, n, k] } else { vec![nb, k, n] };
                vec![rand_tensor(rng, vec![nb, m, k]).with_grad(), rand_tensor(rng, b).with_grad()]
            }),
            builder: Box::new(move |t, ids| {
                let y = t.bmm(ids[0], ids[1], tb)?;
                scalarize(t, y)
            }),
        });
    }
    cases.push(OpCase {
        name: "conv1d",
        inputs: Box::new(move |rng| {
            vec![
                rand_tensor(rng, vec![2, 3, 10]).with_grad(),
                rand_tensor(rng, vec![4, 3, 5]).with_grad(),
                rand_tensor(rng, vec![4]).with_grad(),
            ]
        }),
        builder: Box::new(|t, ids| {
            let y = t.conv1d(ids[0], ids[1], ids[2])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "maxpool1d",
        inputs: Box::new(move |rng| vec![rand_tensor_separated(rng, vec![2, 2, 12], 12).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.maxpool1d(ids[0], 3)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "relu",
        inputs: Box::new(move |rng| vec![rand_tensor_offzero(rng, vec![3, 6]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.relu(ids[0])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "gelu",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![3, 6]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.gelu(ids[0])?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "layer_norm",
        inputs: Box::new(move |rng| {
            let mut gamma = rand_tensor(rng, vec![6]);
            for g in gamma.data_mut() {
                *g += 1.5; // keep scales away from zero
            }
            vec![
                rand_tensor(rng, vec![4, 6]).with_grad(),
                gamma.with_grad(),
                rand_tensor(rng, vec![6]).with_grad(),
            ]
        }),
        builder: Box::new(|t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2])?;
            scalarize(t, y)
        }),
    });
    for (name, axis) in [("softmax_last", 1usize), ("softmax_axis0", 0usize)] {
        cases.push(OpCase {
            name,
            inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![4, 5]).with_grad()]),
            builder: Box::new(move |t, ids| {
                let y = t.softmax(ids[0], axis)?;
                // weight the probabilities so the gradient is nontrivial
                let n: usize = t.shape(y).iter().product();
                let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
                let wid = t.constant_f64(t.shape(y).to_vec(), w)?;
                let y = t.mul(y, wid)?;
                scalarize(t, y)
            }),
        });
    }
    cases.push(OpCase {
        name: "mean_axis",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![2, 5, 3]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.mean_axis(ids[0], 1)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "max_axis",
        inputs: Box::new(move |rng| vec![rand_tensor_separated(rng, vec![2, 8, 3], 24).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.max_axis(ids[0], 1)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "select_index",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![2, 5, 3]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.select_index(ids[0], 1, 4)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "sum_all",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![7]).with_grad()]),
        builder: Box::new(|t, ids| t.sum_all(ids[0])),
    });
    cases.push(OpCase {
        name: "concat",
        inputs: Box::new(move |rng| {
            vec![
                rand_tensor(rng, vec![2, 2, 5]).with_grad(),
                rand_tensor(rng, vec![2, 3, 5]).with_grad(),
                rand_tensor(rng, vec![2, 1, 5]).with_grad(),
            ]
        }),
        builder: Box::new(|t, ids| {
            let y = t.concat(ids, 1)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "permute",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![2, 3, 4]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.permute(ids[0], &[2, 0, 1])?;
            // break symmetry so each coordinate has a distinct gradient
            let n: usize = t.shape(y).iter().product();
            let w: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 1.0).collect();
            let wid = t.constant_f64(t.shape(y).to_vec(), w)?;
            let y = t.mul(y, wid)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "frequency_filter",
        inputs: Box::new(move |rng| {
            let mut mask = rand_tensor(rng, vec![3, 7]);
            for m in mask.data_mut() {
                *m = 1.0 + 0.5 * *m; // around the identity mask
            }
            vec![rand_tensor(rng, vec![2, 3, 12]).with_grad(), mask.with_grad()]
        }),
        builder: Box::new(|t, ids| {
            let y = t.frequency_filter(ids[0], ids[1])?;
            let n: usize = t.shape(y).iter().product();
            let w: Vec<f64> = (0..n).map(|i| 0.5 + 0.02 * i as f64).collect();
            let wid = t.constant_f64(t.shape(y).to_vec(), w)?;
            let y = t.mul(y, wid)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "row_normalize",
        inputs: Box::new(move |rng| vec![rand_tensor_offzero(rng, vec![4, 6]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.row_normalize(ids[0])?;
            let n: usize = t.shape(y).iter().product();
            let w: Vec<f64> = (0..n).map(|i| 0.2 + 0.05 * i as f64).collect();
            let wid = t.constant_f64(t.shape(y).to_vec(), w)?;
            let y = t.mul(y, wid)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "lse_last_axis",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![3, 4]).with_grad()]),
        builder: Box::new(|t, ids| {
            let y = t.lse_last_axis(ids[0], 0.5)?;
            scalarize(t, y)
        }),
    });
    cases.push(OpCase {
        name: "cross_entropy",
        inputs: Box::new(move |rng| {
            let t = rand_tensor(rng, vec![4, 3]).with_grad();
            vec![t]
        }),
        builder: Box::new(|t, ids| t.cross_entropy(ids[0], &[0, 2, 1, 2])),
    });
    cases.push(OpCase {
        name: "dropout",
        inputs: Box::new(move |rng| vec![rand_tensor(rng, vec![3, 5]).with_grad()]),
        builder: Box::new(|t, ids| {
            // fixed mask: deterministic sub-network, gradient well-defined
            let n: usize = t.shape(ids[0]).iter().product();
            let mask: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect();
            let y = t.dropout(ids[0], mask)?;
            scalarize(t, y)
        }),
    });
    let _ = grad;
    cases
}

/// Finite-difference check of every cataloged differentiable operation:
/// `instances` seeded random inputs each, 32-bit storage, `eps = 1e-3`,
/// tolerance `1e-3`.
pub fn gradient_checks(instances: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for case in op_cases() {
        let mut worst = 0.0f64;
        let mut failed = None;
        for inst in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + inst);
            let inputs = (case.inputs)(&mut rng);
            match finite_diff_check(&case.builder, &inputs, 1e-3) {
                Ok(report) => {
                    if report.max_rel_error > worst {
                        worst = report.max_rel_error;
                    }
                    if report.max_rel_error > 1e-3 && failed.is_none() {
                        failed = Some(format!(
                            "instance {inst}: rel error {:.3e} at input {} coord {} (analytic {:.6e}, numeric {:.6e})",
                            report.max_rel_error,
                            report.worst_coord.0,
                            report.worst_coord.1,
                            report.worst_analytic,
                            report.worst_numeric
                        ));
                    }
                }
                Err(e) => {
                    failed = Some(format!("instance {inst}: {e}"));
                    break;
                }
            }
        }
        results.push(CheckResult::new(
            format!("grad/{}", case.name),
            failed.is_none(),
            failed.unwrap_or_else(|| format!("max rel error {worst:.3e} over {instances} instances")),
        ));
    }
    results
}

/// Log-sum-exp closed-form identities and DFT inversion checks.
pub fn numeric_identity_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();

    let single = ops::lse_reduce(&[0.5], 0.1).unwrap();
    out.push(CheckResult::new(
        "lse/single_term",
        (single - 5.0).abs() < 1e-12,
        format!("lse([0.5], T=0.1) = {single}"),
    ));

    let pair = ops::lse_reduce(&[0.8, 0.8], 1.0).unwrap();
    let expect = 0.8 + std::f64::consts::LN_2;
    out.push(CheckResult::new(
        "lse/two_equal_terms",
        (pair - expect).abs() < 1e-12,
        format!("lse([0.8,0.8], T=1) = {pair}, expect {expect}"),
    ));

    let dom = ops::lse_reduce(&[1.0, -1.0], 0.07).unwrap();
    let lead = 1.0 / 0.07;
    out.push(CheckResult::new(
        "lse/stabilized_dominant",
        dom >= lead && (dom - lead).abs() < 1e-12,
        format!("lse([1,-1], T=0.07) = {dom}"),
    ));

    for l in [4usize, 24, 128, 1751] {
        let mut rng = ChaCha8Rng::seed_from_u64(91 + l as u64);
        let x = rand_tensor(&mut rng, vec![1, l]).map_precision::<f64>();
        let (re, im) = ops::rfft(&x).unwrap();
        let back = ops::irfft(&re, &im, l).unwrap();
        let err = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        out.push(CheckResult::new(
            format!("dft/inversion_l{l}"),
            err <= 1e-6,
            format!("max abs round-trip error {err:.3e}"),
        ));
    }
    out
}

/// Convenience: run a battery and fold into (passed, total).
pub fn summarize(results: &[CheckResult]) -> (usize, usize) {
    (results.iter().filter(|r| r.passed).count(), results.len())
}
