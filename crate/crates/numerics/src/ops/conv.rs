//! Channel-last 3D cross-correlation (no kernel flip) lowered to GEMM via
//! im2col. Kernel taps that can never overlap the input (for example a
//! 3-wide kernel on an extent-1 axis with same padding) are pruned from the
//! column matrix; their weights simply receive zero gradient.

use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Zero padding per spatial axis, before (`lo`) and after (`hi`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding3 {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Padding3 {
    pub fn valid() -> Self {
        Self {
            lo: [0; 3],
            hi: [0; 3],
        }
    }

    /// Preserves extents at stride 1; odd surplus goes after.
    pub fn same(kernel: [usize; 3]) -> Self {
        let lo = kernel.map(|k| (k.saturating_sub(1)) / 2);
        let mut hi = [0; 3];
        for i in 0..3 {
            hi[i] = kernel[i].saturating_sub(1) - lo[i];
        }
        Self { lo, hi }
    }
}

#[derive(Clone, Debug)]
struct Geometry {
    batch: usize,
    dims: [usize; 3],
    cin: usize,
    kernel: [usize; 3],
    cout: usize,
    lo: [usize; 3],
    out: [usize; 3],
    /// Live taps as (offsets, flat kernel index).
    taps: Vec<([usize; 3], usize)>,
}

impl Geometry {
    fn positions(&self) -> usize {
        self.out.iter().product()
    }

    fn cols_width(&self) -> usize {
        self.taps.len() * self.cin
    }

    fn new(xs: &[usize], ws: &[usize], pad: Padding3) -> Result<Self> {
        if xs.len() != 5 || ws.len() != 5 {
            return shape_err("conv3d", format!("input {xs:?}, kernel {ws:?}"));
        }
        let dims = [xs[1], xs[2], xs[3]];
        let kernel = [ws[0], ws[1], ws[2]];
        if ws[3] != xs[4] {
            return shape_err(
                "conv3d",
                format!("kernel expects {} channels, input has {}", ws[3], xs[4]),
            );
        }
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = dims[i] + pad.lo[i] + pad.hi[i];
            if kernel[i] == 0 || padded < kernel[i] {
                return shape_err(
                    "conv3d",
                    format!("kernel {kernel:?} larger than padded input {dims:?}"),
                );
            }
            out[i] = padded - kernel[i] + 1;
        }
        let live = |i: usize| {
            let first = pad.lo[i].saturating_sub(out[i] - 1);
            let last = (kernel[i] - 1).min(pad.lo[i] + dims[i] - 1);
            first..=last
        };
        let mut taps = Vec::new();
        for a in live(0) {
            for b in live(1) {
                for c in live(2) {
                    taps.push(([a, b, c], (a * kernel[1] + b) * kernel[2] + c));
                }
            }
        }
        Ok(Self {
            batch: xs[0],
            dims,
            cin: xs[4],
            kernel,
            cout: ws[4],
            lo: pad.lo,
            out,
            taps,
        })
    }

    /// Visits every (column-matrix row, tap slot, input offset) triple whose
    /// input position is in bounds.
    fn for_each_in_bounds(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d1, d2, d3] = self.dims;
        let [o1, o2, o3] = self.out;
        let mut row = 0;
        for b in 0..self.batch {
            for p1 in 0..o1 {
                for p2 in 0..o2 {
                    for p3 in 0..o3 {
                        for (slot, (t, _)) in self.taps.iter().enumerate() {
                            let i1 = (p1 + t[0]) as isize - self.lo[0] as isize;
                            let i2 = (p2 + t[1]) as isize - self.lo[1] as isize;
                            let i3 = (p3 + t[2]) as isize - self.lo[2] as isize;
                            if i1 < 0
                                || i2 < 0
                                || i3 < 0
                                || i1 >= d1 as isize
                                || i2 >= d2 as isize
                                || i3 >= d3 as isize
                            {
                                continue;
                            }
                            let pos = ((b * d1 + i1 as usize) * d2 + i2 as usize) * d3 + i3 as usize;
                            f(row, slot, pos * self.cin);
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let width = self.cols_width();
        let cin = self.cin;
        let mut cols = vec![T::zero(); self.batch * self.positions() * width];
        self.for_each_in_bounds(|row, slot, src| {
            let dst = row * width + slot * cin;
            cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
        });
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let width = self.cols_width();
        let cin = self.cin;
        let mut dx = vec![T::zero(); self.batch * self.dims.iter().product::<usize>() * cin];
        self.for_each_in_bounds(|row, slot, dst| {
            let src = row * width + slot * cin;
            for (d, &s) in dx[dst..dst + cin].iter_mut().zip(&cols[src..src + cin]) {
                *d += s;
            }
        });
        dx
    }

    /// Rows of the weight matrix belonging to live taps: `[taps*cin, cout]`.
    fn gather_weights<T: Real>(&self, w: &[T]) -> Vec<T> {
        let block = self.cin * self.cout;
        if self.taps.len() == self.kernel.iter().product::<usize>() {
            return w.to_vec();
        }
        let mut out = Vec::with_capacity(self.taps.len() * block);
        for &(_, flat) in &self.taps {
            out.extend_from_slice(&w[flat * block..(flat + 1) * block]);
        }
        out
    }

    fn scatter_weights<T: Real>(&self, live: &[T]) -> Vec<T> {
        let block = self.cin * self.cout;
        let total = self.kernel.iter().product::<usize>();
        if self.taps.len() == total {
            return live.to_vec();
        }
        let mut out = vec![T::zero(); total * block];
        for (slot, &(_, flat)) in self.taps.iter().enumerate() {
            out[flat * block..(flat + 1) * block]
                .copy_from_slice(&live[slot * block..(slot + 1) * block]);
        }
        out
    }
}

struct ConvRule<T> {
    geom: Geometry,
    /// Column matrix, kept only when the kernel needs a gradient.
    cols: Option<Vec<T>>,
    has_bias: bool,
}

impl<T: Real> Backward<T> for ConvRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = &self.geom;
        let rows = geo.batch * geo.positions();
        let width = geo.cols_width();
        let g = ctx.grad.data();
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);

        let dx = if ctx.needs[0] {
            let wl = geo.gather_weights(w.data());
            let mut dcols = vec![T::zero(); rows * width];
            gemm(rows, geo.cout, width, g, false, &wl, true, T::zero(), &mut dcols);
            Some(Tensor::from_parts(x.shape().to_vec(), geo.col2im(&dcols)))
        } else {
            None
        };

        let dw = if ctx.needs[1] {
            let recomputed;
            let cols = match &self.cols {
                Some(c) => c,
                None => {
                    recomputed = geo.im2col(x.data());
                    &recomputed
                }
            };
            let mut dwl = vec![T::zero(); width * geo.cout];
            gemm(width, rows, geo.cout, cols, true, g, false, T::zero(), &mut dwl);
            Some(Tensor::from_parts(w.shape().to_vec(), geo.scatter_weights(&dwl)))
        } else {
            None
        };

        let mut out = vec![dx, dw];
        if self.has_bias {
            let db = ctx.needs[2].then(|| {
                let mut acc = vec![T::zero(); geo.cout];
                for row in g.chunks(geo.cout) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::from_parts(vec![geo.cout], acc)
            });
            out.push(db);
        }
        Ok(out)
    }
}

impl<T: Real> Graph<T> {
    /// 3D cross-correlation at stride 1.
    ///
    /// `x: [B, D1, D2, D3, Cin]`, `w: [K1, K2, K3, Cin, Cout]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, pad: Padding3) -> Result<Var> {
        let geom = Geometry::new(self.shape(x), self.shape(w), pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return shape_err("conv3d", format!("bias {:?}", self.shape(b)));
            }
        }
        let rows = geom.batch * geom.positions();
        let width = geom.cols_width();
        let cols = geom.im2col(self.value(x).data());
        let wl = geom.gather_weights(self.value(w).data());
        let mut out = vec![T::zero(); rows * geom.cout];
        if width > 0 {
            gemm(rows, width, geom.cout, &cols, false, &wl, false, T::zero(), &mut out);
        }
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(geom.cout) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let shape = vec![geom.batch, geom.out[0], geom.out[1], geom.out[2], geom.cout];
        let value = Tensor::from_parts(shape, out);
        let mut parents = vec![x, w];
        parents.extend(b);
        let keep_cols = self.needs_grad(w);
        let rule = ConvRule {
            geom,
            cols: keep_cols.then_some(cols),
            has_bias: b.is_some(),
        };
        Ok(self.op(&parents, value, rule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    /// Direct nested-loop convolution used as an oracle.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        pad: Padding3,
    ) -> Tensor<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let (bn, cin, cout) = (xs[0], xs[4], ws[4]);
        let d = [xs[1], xs[2], xs[3]];
        let k = [ws[0], ws[1], ws[2]];
        let o: Vec<usize> = (0..3).map(|i| d[i] + pad.lo[i] + pad.hi[i] - k[i] + 1).collect();
        let mut out = vec![0.0; bn * o[0] * o[1] * o[2] * cout];
        let xat = |bb: usize, i: [isize; 3], c: usize| -> f64 {
            if (0..3).any(|a| i[a] < 0 || i[a] >= d[a] as isize) {
                return 0.0;
            }
            let [a, b2, c2] = i.map(|v| v as usize);
            x.data()[(((bb * d[0] + a) * d[1] + b2) * d[2] + c2) * cin + c]
        };
        for bb in 0..bn {
            for p1 in 0..o[0] {
                for p2 in 0..o[1] {
                    for p3 in 0..o[2] {
                        for co in 0..cout {
                            let mut acc = b.map_or(0.0, |b| b.data()[co]);
                            for k1 in 0..k[0] {
                                for k2 in 0..k[1] {
                                    for k3 in 0..k[2] {
                                        for ci in 0..cin {
                                            let i = [
                                                (p1 + k1) as isize - pad.lo[0] as isize,
                                                (p2 + k2) as isize - pad.lo[1] as isize,
                                                (p3 + k3) as isize - pad.lo[2] as isize,
                                            ];
                                            let wi = (((k1 * k[1] + k2) * k[2] + k3) * cin + ci)
                                                * cout
                                                + co;
                                            acc += xat(bb, i, ci) * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            let oi = (((bb * o[0] + p1) * o[1] + p2) * o[2] + p3) * cout + co;
                            out[oi] = acc;
                        }
                    }
                }
            }
        }
        Tensor::new(&[bn, o[0], o[1], o[2], cout], out).unwrap()
    }

    fn rand_tensor(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 0.5) * 12.9898 + seed).sin() * 0.8)
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let cases: &[([usize; 5], [usize; 3], bool)] = &[
            ([2, 3, 5, 4, 2], [3, 3, 1], false),
            ([2, 1, 4, 5, 3], [3, 3, 3], true),
            ([1, 3, 1, 6, 2], [3, 3, 3], true),
            ([2, 6, 1, 1, 3], [3, 1, 1], true),
            ([1, 7, 1, 1, 2], [2, 1, 1], true),
        ];
        for (i, &(xs, k, same)) in cases.iter().enumerate() {
            let cout = 3;
            let x = rand_tensor(&xs, i as f64);
            let w = rand_tensor(&[k[0], k[1], k[2], xs[4], cout], 10.0 + i as f64);
            let b = rand_tensor(&[cout], 20.0);
            let pad = if same { Padding3::same(k) } else { Padding3::valid() };
            let mut g = Graph::<f64>::new(false, 0);
            let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
            let y = g.conv3d(xv, wv, Some(bv), pad).unwrap();
            let want = conv_oracle(&x, &w, Some(&b), pad);
            assert_eq!(g.shape(y), want.shape(), "case {i}");
            for (a, e) in g.value(y).data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "case {i}: {a} vs {e}");
            }
            if same {
                assert_eq!(&g.shape(y)[1..4], &xs[1..4]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = rand_tensor(&[2, 1, 4, 3, 2], 1.0);
        let w = rand_tensor(&[3, 3, 3, 2, 3], 2.0);
        let b = rand_tensor(&[3], 3.0);
        let r = rand_tensor(&[2, 1, 4, 3, 3], 4.0);
        let report = grad_check(
            |g, v| {
                let y = g.conv3d(v[0], v[1], Some(v[2]), Padding3::same([3, 3, 3]))?;
                let r = g.input(r.clone());
                let p = g.mul(y, r)?;
                g.sum_all(p)
            },
            &[x, w, b],
            1e-7,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn pruned_taps_get_zero_gradient() {
        let mut g = Graph::<f64>::new(false, 0);
        let x = g.input(rand_tensor(&[1, 1, 3, 3, 1], 0.0));
        let w = g.leaf(rand_tensor(&[3, 3, 3, 1, 1], 1.0), true);
        let y = g.conv3d(x, w, None, Padding3::same([3, 3, 3])).unwrap();
        let l = g.sum_all(y).unwrap();
        let grads = g.backward(l).unwrap();
        let dw = grads.wrt(w).unwrap();
        // Only the k1 = 1 slab can overlap an extent-1 first axis.
        for k1 in [0usize, 2] {
            for i in 0..9 {
                assert_eq!(dw.data()[k1 * 9 + i], 0.0);
            }
        }
        assert!(dw.data()[9..18].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new(false, 0);
        let x = g.input(Tensor::zeros(&[1, 3, 3, 3, 2]));
        let w = g.input(Tensor::zeros(&[3, 3, 3, 4, 1]));
        assert!(g.conv3d(x, w, None, Padding3::valid()).is_err());
    }

    #[test]
    fn same_padding_split() {
        assert_eq!(Padding3::same([3, 3, 1]), Padding3 { lo: [1, 1, 0], hi: [1, 1, 0] });
        assert_eq!(Padding3::same([8, 1, 1]), Padding3 { lo: [3, 0, 0], hi: [4, 0, 0] });
    }
}
