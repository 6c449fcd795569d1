use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (batch, rows, cols) of a 2-d or 3-d operand.
fn mat_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        _ => panic!("matmul operand must be 2-d or 3-d, got {shape:?}"),
    }
}

/// Batched product with batch-1 broadcasting. `ta`/`tb` read the operand
/// transposed.
#[allow(clippy::too_many_arguments)]
fn bmm<S: Scalar>(
    a: &[S],
    (ba, ar, ac): (usize, usize, usize),
    ta: bool,
    b: &[S],
    (bb, br, bc): (usize, usize, usize),
    tb: bool,
) -> (usize, usize, usize, Vec<S>) {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "matmul inner dimensions differ");
    assert!(ba == bb || ba == 1 || bb == 1, "matmul batch mismatch");
    let batch = ba.max(bb);
    let (a_rs, a_cs) = if ta { (1, ac) } else { (ac, 1) };
    let (b_rs, b_cs) = if tb { (1, bc) } else { (bc, 1) };
    let mut out = vec![S::zero(); batch * m * n];
    for i in 0..batch {
        let ai = if ba == 1 { 0 } else { i };
        let bi = if bb == 1 { 0 } else { i };
        S::gemm(
            m,
            k,
            n,
            &a[ai * ar * ac..(ai + 1) * ar * ac],
            a_rs,
            a_cs,
            &b[bi * br * bc..(bi + 1) * br * bc],
            b_rs,
            b_cs,
            &mut out[i * m * n..(i + 1) * m * n],
            false,
        );
    }
    (batch, m, n, out)
}

/// Sums a `[batch, r, c]` buffer over its batch axis.
fn sum_batches<S: Scalar>(data: Vec<S>, batch: usize, per: usize) -> Vec<S> {
    if batch == 1 {
        return data;
    }
    let mut out = data[..per].to_vec();
    for b in 1..batch {
        for (o, &v) in out.iter_mut().zip(&data[b * per..(b + 1) * per]) {
            *o += v;
        }
    }
    out
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Matrix product of 2-d or 3-d operands; a batch extent of 1 (or a
    /// 2-d operand) broadcasts against the other operand's batch.
    pub fn matmul(self, other: Var<'g, S>) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let (da, db) = (mat_dims(&sa), mat_dims(&sb));
        let (batch, m, n, y) = bmm(a.data(), da, false, b.data(), db, false);
        let out_shape = if sa.len() == 2 && sb.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        self.graph.push_op(
            Rc::new(Tensor::new(&out_shape, y)),
            &[self, other],
            Box::new(move |g, need| {
                let dg = (batch, m, n);
                let ga = need[0].then(|| {
                    // dA = G·Bᵀ
                    let (_, r, c, v) = bmm(g.data(), dg, false, b.data(), db, true);
                    Tensor::new(&sa, sum_batches(v, if da.0 == 1 { batch } else { 1 }, r * c))
                });
                let gb = need[1].then(|| {
                    // dB = Aᵀ·G
                    let (_, r, c, v) = bmm(a.data(), da, true, g.data(), dg, false);
                    Tensor::new(&sb, sum_batches(v, if db.0 == 1 { batch } else { 1 }, r * c))
                });
                vec![ga, gb]
            }),
        )
    }
}
