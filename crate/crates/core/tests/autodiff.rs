//! Gradient checks for every graph primitive against central finite
//! differences, plus jvp/vjp adjoint-identity and determinism checks.

mod common;

use common::{adjoint_check, fd_check, randn};
use lsda_core::graph::{grad, jvp, vjp, Graph, GraphError, Pad, Var};
use lsda_core::tensor::Tensor;

/// Reduce any output to a scalar by dotting with a fixed random tensor; a
/// random linear functional of the output exercises the full Jacobian.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var, GraphError> {
    let w = g.constant(randn(g.value(out).shape(), seed));
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

#[test]
fn fd_elementwise_ops() {
    let x = randn(&[2, 3], 1);
    let y = randn(&[2, 3], 2);
    fd_check("add", &[x.clone(), y.clone()], |g, v| {
        let o = g.add(v[0], v[1])?;
        probe(g, o, 10)
    });
    fd_check("sub", &[x.clone(), y.clone()], |g, v| {
        let o = g.sub(v[0], v[1])?;
        probe(g, o, 11)
    });
    fd_check("mul", &[x.clone(), y.clone()], |g, v| {
        let o = g.mul(v[0], v[1])?;
        probe(g, o, 12)
    });
    fd_check("neg", &[x.clone()], |g, v| {
        let o = g.neg(v[0])?;
        probe(g, o, 13)
    });
    fd_check("scale", &[x.clone()], |g, v| {
        let o = g.scale(v[0], -1.7)?;
        probe(g, o, 14)
    });
    fd_check("add_scalar", &[x.clone()], |g, v| {
        let o = g.add_scalar(v[0], 0.3)?;
        probe(g, o, 15)
    });
    fd_check("tanh", &[x.clone()], |g, v| {
        let o = g.tanh(v[0])?;
        probe(g, o, 16)
    });
    fd_check("gelu", &[x], |g, v| {
        let o = g.gelu(v[0])?;
        probe(g, o, 17)
    });
}

#[test]
fn fd_reductions() {
    let x = randn(&[3, 2], 3);
    fd_check("sum", &[x.clone()], |g, v| g.sum(v[0]));
    fd_check("mean", &[x], |g, v| g.mean(v[0]));
}

#[test]
fn fd_matmul_affine_rowscale() {
    let a = randn(&[2, 3], 4);
    let b = randn(&[3, 4], 5);
    fd_check("matmul", &[a.clone(), b.clone()], |g, v| {
        let o = g.matmul(v[0], v[1])?;
        probe(g, o, 20)
    });
    let bias = randn(&[4], 6);
    fd_check("affine", &[a.clone(), b, bias], |g, v| {
        let o = g.affine(v[0], v[1], v[2])?;
        probe(g, o, 21)
    });
    let s = randn(&[2], 7);
    fd_check("row_scale", &[a, s], |g, v| {
        let o = g.row_scale(v[0], v[1])?;
        probe(g, o, 22)
    });
}

#[test]
fn fd_shape_ops() {
    let x = randn(&[4, 3], 8);
    fd_check("reshape", &[x.clone()], |g, v| {
        let o = g.reshape(v[0], vec![2, 6])?;
        probe(g, o, 30)
    });
    fd_check("slice_rows", &[x.clone()], |g, v| {
        let o = g.slice_rows(v[0], 1, 2)?;
        probe(g, o, 31)
    });
    let y = randn(&[2, 3], 9);
    fd_check("concat_rows", &[x.clone(), y], |g, v| {
        let o = g.concat_rows(&[v[0], v[1]])?;
        probe(g, o, 32)
    });
    fd_check("index_select", &[x], |g, v| {
        let o = g.index_select(v[0], vec![0, 5, 7, 7, 11])?;
        probe(g, o, 33)
    });
}

#[test]
fn fd_conv1d_all_modes() {
    let x = randn(&[2, 2, 6], 40);
    let k = randn(&[3, 2, 3], 41);
    for (pad, pname) in [(Pad::Periodic, "periodic"), (Pad::Zero, "zero")] {
        for stride in [1usize, 2] {
            fd_check(
                &format!("conv1d_{pname}_s{stride}"),
                &[x.clone(), k.clone()],
                |g, v| {
                    let o = g.conv1d(v[0], v[1], stride, pad)?;
                    probe(g, o, 42)
                },
            );
        }
    }
}

#[test]
fn fd_conv2d_all_modes() {
    let x = randn(&[1, 2, 4, 4], 50);
    let k = randn(&[2, 2, 3, 3], 51);
    for (pad, pname) in [(Pad::Periodic, "periodic"), (Pad::Zero, "zero")] {
        for stride in [1usize, 2] {
            fd_check(
                &format!("conv2d_{pname}_s{stride}"),
                &[x.clone(), k.clone()],
                |g, v| {
                    let o = g.conv2d(v[0], v[1], stride, pad)?;
                    probe(g, o, 52)
                },
            );
        }
    }
}

#[test]
fn fd_bias_chan_and_upsample() {
    let x = randn(&[2, 3, 2, 2], 60);
    let b = randn(&[3], 61);
    fd_check("bias_chan", &[x.clone(), b], |g, v| {
        let o = g.bias_chan(v[0], v[1])?;
        probe(g, o, 62)
    });
    fd_check("upsample2d", &[x], |g, v| {
        let o = g.upsample2d(v[0], 2)?;
        probe(g, o, 63)
    });
}

#[test]
fn fd_two_layer_mlp_loss() {
    // A full network: affine -> gelu -> affine -> mse against a target.
    let x = randn(&[4, 3], 70);
    let w1 = randn(&[3, 8], 71);
    let b1 = randn(&[8], 72);
    let w2 = randn(&[8, 2], 73);
    let b2 = randn(&[2], 74);
    let target = randn(&[4, 2], 75);
    fd_check("mlp_loss", &[w1, b1, w2, b2], |g, v| {
        let xv = g.constant(x.clone());
        let tv = g.constant(target.clone());
        let h = g.affine(xv, v[0], v[1])?;
        let h = g.gelu(h)?;
        let out = g.affine(h, v[2], v[3])?;
        let r = g.sub(out, tv)?;
        let sq = g.mul(r, r)?;
        g.mean(sq)
    });
}

#[test]
fn adjoint_identity_per_primitive() {
    let x = randn(&[3, 4], 80);
    adjoint_check("tanh", &x, &[3, 4], 81, |g, v| g.tanh(v));
    adjoint_check("gelu", &x, &[3, 4], 82, |g, v| g.gelu(v));
    adjoint_check("slice", &x, &[2, 4], 83, |g, v| g.slice_rows(v, 1, 2));
    adjoint_check("matmul", &x, &[3, 2], 84, |g, v| {
        let m = g.constant(randn(&[4, 2], 840));
        g.matmul(v, m)
    });
    adjoint_check("index_select", &x, &[5], 85, |g, v| {
        g.index_select(v, vec![0, 3, 3, 9, 11])
    });
    let img = randn(&[1, 2, 4, 4], 86);
    adjoint_check("conv2d", &img, &[1, 3, 2, 2], 87, |g, v| {
        let k = g.constant(randn(&[3, 2, 3, 3], 870));
        g.conv2d(v, k, 2, Pad::Periodic)
    });
    adjoint_check("upsample2d", &img, &[1, 2, 8, 8], 88, |g, v| g.upsample2d(v, 2));
}

#[test]
fn adjoint_identity_random_mlp() {
    // u^T (J v) via jvp must equal (J^T u)^T v via vjp within 1e-10.
    let x = randn(&[6], 90);
    let w1 = randn(&[6, 10], 91);
    let b1 = randn(&[10], 92);
    let w2 = randn(&[10, 4], 93);
    let f = |g: &mut Graph<f64>, v: Var| -> Result<Var, GraphError> {
        let row = g.reshape(v, vec![1, 6])?;
        let w1v = g.constant(w1.clone());
        let b1v = g.constant(b1.clone());
        let w2v = g.constant(w2.clone());
        let h = g.affine(row, w1v, b1v)?;
        let h = g.tanh(h)?;
        let out = g.matmul(h, w2v)?;
        g.reshape(out, vec![4])
    };
    adjoint_check("mlp", &x, &[4], 94, f);
}

#[test]
fn jvp_matches_explicit_matrix() {
    // Linear f(x) = M x: jvp equals M v exactly.
    let m = randn(&[5, 3], 100);
    let x = randn(&[3], 101);
    let v = randn(&[3], 102);
    let out = jvp(&x, &v, |g, xv| {
        let mv = g.constant(m.clone());
        let col = g.reshape(xv, vec![3, 1])?;
        let prod = g.matmul(mv, col)?;
        g.reshape(prod, vec![5])
    })
    .unwrap();
    let expect = m
        .matmul(&v.clone().reshaped(vec![3, 1]).unwrap())
        .unwrap();
    for (a, b) in out.data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn vjp_shape_mismatch_is_error() {
    let x = randn(&[3], 110);
    let u = randn(&[7], 111);
    assert!(vjp(&x, &u, |g, v| g.neg(v)).is_err());
    let v = randn(&[2], 112);
    assert!(jvp(&x, &v, |g, xv| g.neg(xv)).is_err());
}

#[test]
fn gradients_are_deterministic() {
    let run = || {
        let x = randn(&[4, 4], 120);
        let w = randn(&[4, 4], 121);
        let (val, grads) = grad(&[x, w], |g, v| {
            let m = g.matmul(v[0], v[1])?;
            let t = g.tanh(m)?;
            g.sum(t)
        })
        .unwrap();
        (val, grads[0].data().to_vec(), grads[1].data().to_vec())
    };
    let (v1, g1a, g1b) = run();
    let (v2, g2a, g2b) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    assert!(g1a.iter().zip(&g2a).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(g1b.iter().zip(&g2b).all(|(a, b)| a.to_bits() == b.to_bits()));
}
