//! Shared helpers for integration tests.

use lsda_core::graph::{grad, Graph, GraphError, Var};
use lsda_core::tensor::Tensor;
use lsda_core::rng::stream;

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;

/// Central finite-difference check of reverse-mode gradients for a scalar
/// function of `params`. Panics with context if the relative error exceeds
/// `FD_RTOL` anywhere.
pub fn fd_check<F>(name: &str, params: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError>,
{
    let (_, grads) = grad(params, &f).unwrap_or_else(|e| panic!("{name}: grad failed: {e}"));
    let eval = |ps: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).data()[0]
    };
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[i] += FD_STEP;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let an = grads[pi].data()[i];
            let denom = 1.0f64.max(an.abs()).max(fd.abs());
            let rel = (an - fd).abs() / denom;
            assert!(
                rel < FD_RTOL,
                "{name}: param {pi} element {i}: analytic {an} vs fd {fd} (rel {rel:.2e})"
            );
        }
    }
}

/// Adjoint identity `<u, J v> = <J^T u, v>` for a vector function of one
/// input, checked to 1e-10 with random `u`, `v`.
pub fn adjoint_check<F>(name: &str, x: &Tensor<f64>, out_shape: &[usize], seed: u64, f: F)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, GraphError> + Copy,
{
    let mut rng = stream(seed, 0xad);
    let v = Tensor::randn(x.shape(), &mut rng);
    let u = Tensor::randn(out_shape, &mut rng);
    let jv = lsda_core::graph::jvp(x, &v, f).unwrap_or_else(|e| panic!("{name}: jvp failed: {e}"));
    let jtu = lsda_core::graph::vjp(x, &u, f).unwrap_or_else(|e| panic!("{name}: vjp failed: {e}"));
    let lhs = u.dot(&jv).unwrap();
    let rhs = jtu.dot(&v).unwrap();
    let denom = 1.0f64.max(lhs.abs());
    assert!(
        (lhs - rhs).abs() / denom < 1e-10,
        "{name}: <u, Jv> = {lhs} but <J^T u, v> = {rhs}"
    );
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut stream(seed, 0x7e))
}
