// SPDX-License-Identifier: Apache-2.0

//! Trailing-axis broadcasting for binary elementwise ops.

use crate::error::{Error, Result};

/// Index mapping from a broadcast output back into its two operands.
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    pub same: bool,
}

fn strides_into(shape: &[usize], out: &[usize]) -> Vec<usize> {
    // Right-align `shape` against `out`; broadcast axes get stride 0.
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast {
                out_shape: a.to_vec(),
                a_strides: vec![],
                b_strides: vec![],
                same: true,
            });
        }
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        for i in 0..rank {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            out[i] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(Error::dim(format!(
                        "cannot broadcast {a:?} with {b:?}"
                    )))
                }
            };
        }
        Ok(Broadcast {
            a_strides: strides_into(a, &out),
            b_strides: strides_into(b, &out),
            out_shape: out,
            same: false,
        })
    }

    /// Visit every output element with its operand offsets.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out_shape.iter().product();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        if n == 0 {
            return;
        }
        let rank = self.out_shape.len();
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let last = rank - 1;
        let inner = self.out_shape[last];
        let (sa, sb) = (self.a_strides[last], self.b_strides[last]);
        let mut idx = vec![0usize; rank];
        let (mut oa, mut ob) = (0usize, 0usize);
        let mut o = 0;
        loop {
            for j in 0..inner {
                f(o + j, oa + j * sa, ob + j * sb);
            }
            o += inner;
            if o >= n {
                break;
            }
            // odometer over the outer axes
            let mut ax = last;
            loop {
                ax -= 1;
                idx[ax] += 1;
                oa += self.a_strides[ax];
                ob += self.b_strides[ax];
                if idx[ax] < self.out_shape[ax] {
                    break;
                }
                oa -= self.a_strides[ax] * idx[ax];
                ob -= self.b_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
}
