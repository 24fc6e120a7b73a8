use crate::diff::gemm::{gemm, rm, tr};
use crate::diff::tape::{Backward, BackwardArgs};
use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};

/// Rows and inner size of `a` viewed as a matrix over its last axis.
fn as_matrix(shape: &[usize]) -> (usize, usize) {
    let k = *shape.last().unwrap_or(&1);
    (shape.iter().rev().skip(1).product(), k)
}

pub(crate) fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || b.rank() != 2 {
        return Err(invalid!(
            "matmul needs A of rank >= 2 and B of rank 2, got {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (m, k) = as_matrix(a.shape());
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(invalid!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    let mut out = Tensor::zeros(shape);
    gemm(
        m,
        k,
        n,
        1.0,
        a.data(),
        rm(k),
        b.data(),
        rm(n),
        0.0,
        out.data_mut(),
        rm(n),
    );
    Ok(out)
}

struct MatmulOp;

impl Backward for MatmulOp {
    fn backward(&self, args: &BackwardArgs<'_>) -> Result<Vec<Option<Tensor>>> {
        let [a, b] = args.inputs else { unreachable!() };
        let g = args.grad;
        let (m, k) = as_matrix(a.shape());
        let n = b.shape()[1];
        let da = args.needs[0].then(|| {
            let mut da = Tensor::zeros(a.shape().to_vec());
            gemm(
                m,
                n,
                k,
                1.0,
                g.data(),
                rm(n),
                b.data(),
                tr(n),
                0.0,
                da.data_mut(),
                rm(k),
            );
            da
        });
        let db = args.needs[1].then(|| {
            let mut db = Tensor::zeros(b.shape().to_vec());
            gemm(
                k,
                m,
                n,
                1.0,
                a.data(),
                tr(k),
                g.data(),
                rm(n),
                0.0,
                db.data_mut(),
                rm(n),
            );
            db
        });
        Ok(vec![da, db])
    }
}

/// Matrix product `A[m,k] x B[k,n]`. Leading axes of `A` beyond the last
/// are treated as extra rows, so `[T, B, k] x [k, n] -> [T, B, n]`.
pub fn matmul(tape: &mut Tape<'_>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = matmul_forward(tape.value(a), tape.value(b))?;
    Ok(tape.push("matmul", out, &[a, b], MatmulOp))
}
