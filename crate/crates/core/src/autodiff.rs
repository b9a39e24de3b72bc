//! A small tape-based reverse-mode automatic differentiation engine.
//!
//! Every operation appends a node to a [`Graph`]; nodes hold their value and,
//! when any input is tracked, a closure mapping the output gradient to the
//! gradients of the inputs. Nodes are created in topological order, so the
//! backward sweep simply walks the tape in reverse.
//!
//! The engine is generic over [`Real`] so the same model and recognizer code
//! runs in `f32` (training, cache building) and `f64` (gradient checks).
//! All arithmetic is single-threaded with a fixed reduction order; identical
//! inputs give bit-identical outputs and gradients.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;

use ndarray::{linalg::general_mat_mul, Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn, LinalgScalar, ScalarOperand, Slice};
use num_traits::Float;

/// Floating point element type usable by the engine.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub type Tensor<F> = ArrayD<F>;

type Backward<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Real> {
    value: Rc<Tensor<F>>,
    parents: Vec<usize>,
    backward: Option<Backward<F>>,
    tracked: bool,
}

/// Computation tape. Create one per forward pass.
pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of tracked leaves after [`Graph::backward`].
pub struct Gradients<F: Real> {
    grads: HashMap<usize, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(&var.id)
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Untracked input; receives no gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.insert(Node { value: Rc::new(standard(value)), parents: vec![], backward: None, tracked: false })
    }

    /// Tracked input whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.insert(Node { value: Rc::new(standard(value)), parents: vec![], backward: None, tracked: true })
    }

    pub fn scalar(&self, v: F) -> Var<'_, F> {
        self.constant(Tensor::from_elem(IxDyn(&[]), v))
    }

    fn insert(&self, node: Node<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor<F>, parents: &[usize], backward: Backward<F>) -> Var<'_, F> {
        let tracked = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].tracked)
        };
        self.insert(Node {
            value: Rc::new(value),
            parents: parents.to_vec(),
            backward: if tracked { Some(backward) } else { None },
            tracked,
        })
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var<'_, F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward root must hold a single element");
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::from_elem(nodes[root.id].value.raw_dim(), F::one()));
        let mut out = HashMap::new();
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(back) => {
                    for (&p, pg) in node.parents.iter().zip(back(&g)) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p].tracked {
                            continue;
                        }
                        match &mut grads[p] {
                            Some(acc) => *acc += &pg,
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None if node.tracked => {
                    out.insert(id, g);
                }
                None => {}
            }
        }
        Gradients { grads: out }
    }
}

fn standard<F: Real>(t: Tensor<F>) -> Tensor<F> {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

/// Sums `g` down to `shape` after broadcasting.
fn unbroadcast<F: Real>(g: &Tensor<F>, shape: &[usize]) -> Tensor<F> {
    let mut r = g.clone();
    while r.ndim() > shape.len() {
        r = r.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && r.shape()[ax] != 1 {
            r = r.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    r
}

fn as2<F: Real>(t: &Tensor<F>) -> ArrayView2<'_, F> {
    t.view().into_dimensionality::<Ix2>().expect("expected a rank-2 tensor")
}

#[allow(clippy::should_implement_trait)]
impl<'g, F: Real> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> F {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.nodes.borrow()[self.id].tracked
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, F> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(self, value: Tensor<F>, back: impl Fn(&Tensor<F>) -> Tensor<F> + 'static) -> Var<'g, F> {
        self.graph.push(value, &[self.id], Box::new(move |g| vec![Some(back(g))]))
    }

    fn map_unary(self, f: impl Fn(F) -> F, df: impl Fn(F, F) -> F + 'static) -> Var<'g, F> {
        let x = self.value();
        let y = Rc::new(x.mapv(f));
        let y2 = Rc::clone(&y);
        let v = (*y).clone();
        self.unary(v, move |g| {
            let mut out = g.clone();
            ndarray::Zip::from(&mut out).and(&*x).and(&*y2).for_each(|o, &xi, &yi| *o *= df(xi, yi));
            out
        })
    }

    pub fn add(self, rhs: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), rhs.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let value = standard(&*a + &*b);
        self.graph.push(
            value,
            &[self.id, rhs.id],
            Box::new(move |g| vec![Some(unbroadcast(g, &sa)), Some(unbroadcast(g, &sb))]),
        )
    }

    pub fn sub(self, rhs: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), rhs.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let value = standard(&*a - &*b);
        self.graph.push(
            value,
            &[self.id, rhs.id],
            Box::new(move |g| vec![Some(unbroadcast(g, &sa)), Some(unbroadcast(&g.mapv(|v| -v), &sb))]),
        )
    }

    pub fn mul(self, rhs: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), rhs.value());
        let value = standard(&*a * &*b);
        self.graph.push(
            value,
            &[self.id, rhs.id],
            Box::new(move |g| {
                vec![Some(unbroadcast(&(g * &*b), a.shape())), Some(unbroadcast(&(g * &*a), b.shape()))]
            }),
        )
    }

    pub fn div(self, rhs: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), rhs.value());
        let value = standard(&*a / &*b);
        self.graph.push(
            value,
            &[self.id, rhs.id],
            Box::new(move |g| {
                let ga = g / &*b;
                let gb = -(&ga * &*a) / &*b;
                vec![Some(unbroadcast(&ga, a.shape())), Some(unbroadcast(&gb, b.shape()))]
            }),
        )
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        let value = self.value().mapv(|v| v * c);
        self.unary(value, move |g| g.mapv(|v| v * c))
    }

    pub fn add_scalar(self, c: F) -> Var<'g, F> {
        let value = self.value().mapv(|v| v + c);
        self.unary(value, |g| g.clone())
    }

    pub fn neg(self) -> Var<'g, F> {
        self.scale(-F::one())
    }

    pub fn exp(self) -> Var<'g, F> {
        self.map_unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'g, F> {
        self.map_unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn sqrt(self) -> Var<'g, F> {
        self.map_unary(|x| x.sqrt(), |_, y| F::lit(0.5) / y)
    }

    pub fn square(self) -> Var<'g, F> {
        self.map_unary(|x| x * x, |x, _| F::lit(2.0) * x)
    }

    pub fn abs(self) -> Var<'g, F> {
        self.map_unary(
            |x| x.abs(),
            |x, _| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn sigmoid(self) -> Var<'g, F> {
        self.map_unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn relu(self) -> Var<'g, F> {
        self.map_unary(|x| x.max(F::zero()), |x, _| if x > F::zero() { F::one() } else { F::zero() })
    }

    pub fn softplus(self) -> Var<'g, F> {
        self.map_unary(|x| x.max(F::zero()) + (-x.abs()).exp().ln_1p(), |x, _| sigmoid(x))
    }

    /// `max(x, c)`; gradient passes only where `x > c`.
    pub fn clamp_min(self, c: F) -> Var<'g, F> {
        self.map_unary(move |x| x.max(c), move |x, _| if x > c { F::one() } else { F::zero() })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'g, F> {
        let x = self.value();
        let shape = x.raw_dim();
        let s = x.iter().fold(F::zero(), |acc, &v| acc + v);
        self.unary(Tensor::from_elem(IxDyn(&[]), s), move |g| {
            let gv = *g.iter().next().unwrap();
            Tensor::from_elem(shape.clone(), gv)
        })
    }

    pub fn mean(self) -> Var<'g, F> {
        let n = self.value().len();
        self.sum().scale(F::one() / F::lit(n as f64))
    }

    /// Sum over one axis, keeping it with length one.
    pub fn sum_axis(self, axis: usize) -> Var<'g, F> {
        let x = self.value();
        let shape = x.raw_dim();
        let value = x.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.unary(value, move |g| standard(g.broadcast(shape.clone()).expect("broadcast").to_owned()))
    }

    pub fn matmul(self, rhs: Var<'g, F>) -> Var<'g, F> {
        let (a, b) = (self.value(), rhs.value());
        let value = as2(&a).dot(&as2(&b)).into_dyn();
        self.graph.push(
            value,
            &[self.id, rhs.id],
            Box::new(move |g| {
                let g2 = as2(g);
                let ga = g2.dot(&as2(&b).t()).into_dyn();
                let gb = as2(&a).t().dot(&g2).into_dyn();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let orig = x.shape().to_vec();
        let value = Tensor::from_shape_vec(IxDyn(shape), x.iter().copied().collect()).expect("reshape size mismatch");
        self.unary(value, move |g| Tensor::from_shape_vec(IxDyn(&orig), g.iter().copied().collect()).unwrap())
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let value = standard((*x).clone().permuted_axes(IxDyn(axes)));
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.unary(value, move |g| standard(g.clone().permuted_axes(IxDyn(&inverse))))
    }

    /// Half-open `[start, end)` range per axis.
    pub fn slice(self, ranges: &[(usize, usize)]) -> Var<'g, F> {
        let x = self.value();
        assert_eq!(ranges.len(), x.ndim());
        let shape = x.raw_dim();
        let ranges = ranges.to_vec();
        let value = x.slice_each_axis(|ax| Slice::from(ranges[ax.axis.index()].0..ranges[ax.axis.index()].1)).to_owned();
        self.unary(value, move |g| {
            let mut out = Tensor::zeros(shape.clone());
            out.slice_each_axis_mut(|ax| Slice::from(ranges[ax.axis.index()].0..ranges[ax.axis.index()].1)).assign(g);
            out
        })
    }

    /// Nearest-neighbour upsampling of an `(N, C, H, W)` tensor by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Var<'g, F> {
        let x = self.value();
        let s = x.shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let xs = x.as_slice().unwrap();
        let mut out = vec![F::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[(oy / factor) * w + ox / factor];
                }
            }
        }
        let value = Tensor::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).unwrap();
        self.unary(value, move |g| {
            let gs = g.as_slice().unwrap();
            let mut gx = vec![F::zero(); n * c * h * w];
            for plane in 0..n * c {
                let src = &gs[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        dst[(oy / factor) * w + ox / factor] += src[oy * ow + ox];
                    }
                }
            }
            Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), gx).unwrap()
        })
    }

    /// 2-D cross-correlation of `(N, C, H, W)` input with `(O, C, KH, KW)`
    /// weights, zero padding `pad` on every side.
    pub fn conv2d(self, weight: Var<'g, F>, stride: usize, pad: usize) -> Var<'g, F> {
        let x = self.value();
        let w = weight.value();
        let geo = ConvGeometry::new(x.shape(), w.shape(), stride, pad);
        let wmat = w.view().into_shape_with_order((geo.out_c, geo.patch())).unwrap().to_owned();
        let xs = x.as_slice().unwrap();
        let mut cols = Vec::with_capacity(geo.n);
        let mut out = Vec::with_capacity(geo.n * geo.out_c * geo.out_len());
        for b in 0..geo.n {
            let col = geo.im2col(&xs[b * geo.in_len()..(b + 1) * geo.in_len()]);
            let mut o = Array2::<F>::zeros((geo.out_c, geo.out_len()));
            general_mat_mul(F::one(), &wmat, &col, F::zero(), &mut o);
            out.extend(o.iter().copied());
            cols.push(col);
        }
        let value = Tensor::from_shape_vec(IxDyn(&[geo.n, geo.out_c, geo.oh, geo.ow]), out).unwrap();
        let wshape = w.shape().to_vec();
        self.graph.push(
            value,
            &[self.id, weight.id],
            Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let mut gw = Array2::<F>::zeros((geo.out_c, geo.patch()));
                let mut gx = vec![F::zero(); geo.n * geo.in_len()];
                let olen = geo.out_c * geo.out_len();
                for (b, col) in cols.iter().enumerate() {
                    let gb = ArrayView2::from_shape((geo.out_c, geo.out_len()), &gs[b * olen..(b + 1) * olen]).unwrap();
                    general_mat_mul(F::one(), &gb, &col.t(), F::one(), &mut gw);
                    let mut gcol = Array2::<F>::zeros((geo.patch(), geo.out_len()));
                    general_mat_mul(F::one(), &wmat.t(), &gb, F::zero(), &mut gcol);
                    geo.col2im(&gcol, &mut gx[b * geo.in_len()..(b + 1) * geo.in_len()]);
                }
                vec![
                    Some(Tensor::from_shape_vec(IxDyn(&[geo.n, geo.in_c, geo.h, geo.w]), gx).unwrap()),
                    Some(gw.into_shape_with_order(IxDyn(&wshape)).unwrap()),
                ]
            }),
        )
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be (N, C, H, W)");
        assert_eq!(w.len(), 4, "conv2d weight must be (O, C, KH, KW)");
        assert_eq!(x[1], w[1], "conv2d channel mismatch");
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "kernel larger than padded input");
        Self {
            n: x[0],
            in_c: x[1],
            h,
            w: wd,
            out_c: w[0],
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        }
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn in_len(&self) -> usize {
        self.in_c * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (patch row, output index, input index) triple inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, (c * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<F: Real>(&self, x: &[F]) -> Array2<F> {
        let mut col = Array2::<F>::zeros((self.patch(), self.out_len()));
        let olen = self.out_len();
        let cs = col.as_slice_mut().unwrap();
        self.for_each_tap(|row, o, i| cs[row * olen + o] = x[i]);
        col
    }

    fn col2im<F: Real>(&self, col: &Array2<F>, gx: &mut [F]) {
        let olen = self.out_len();
        let cs = col.as_slice().unwrap();
        self.for_each_tap(|row, o, i| gx[i] += cs[row * olen + o]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Array::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks the analytic gradient of `f` against central differences.
    fn check_grad(inputs: Vec<Tensor<f64>>, f: impl for<'g> Fn(&[Var<'g, f64>]) -> Var<'g, f64>) {
        let eval = |vals: &[Tensor<f64>]| {
            let g = Graph::new();
            let vars: Vec<_> = vals.iter().map(|v| g.constant(v.clone())).collect();
            f(&vars).item()
        };
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
        let out = f(&vars);
        let grads = g.backward(out);
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).expect("missing gradient");
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += 1e-6;
                minus[k].as_slice_mut().unwrap()[idx] -= 1e-6;
                let fd = (eval(&plus) - eval(&minus)) / 2e-6;
                let a = analytic.as_slice().unwrap()[idx];
                assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "input {k} idx {idx}: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[2, 3, 4], &mut rng);
        let b = random(&[1, 3, 1], &mut rng).mapv(|v| v + 2.0);
        check_grad(vec![a, b], |v| v[0].mul(v[1]).add(v[1]).div(v[1].square()).sub(v[0].exp()).sum());
    }

    #[test]
    fn unary_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[5, 3], &mut rng);
        check_grad(vec![a.clone()], |v| v[0].sigmoid().add(v[0].softplus()).add(v[0].scale(3.0).abs()).sum());
        check_grad(vec![a.mapv(|x| x + 2.0)], |v| v[0].ln().add(v[0].sqrt()).mean());
    }

    #[test]
    fn matmul_reshape_permute_slice_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 6], &mut rng);
        check_grad(vec![a, b], |v| {
            let m = v[0].matmul(v[1]).reshape(&[3, 2, 3]).permute(&[2, 0, 1]);
            m.slice(&[(1, 3), (0, 2), (1, 2)]).square().sum_axis(1).sum()
        });
    }

    #[test]
    fn conv_and_upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 2, 5, 6], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        check_grad(vec![x.clone(), w.clone()], |v| v[0].conv2d(v[1], 2, 1).square().sum());
        check_grad(vec![x, w], |v| v[0].upsample_nearest(2).conv2d(v[1], 1, 0).square().sum());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 2, 6, 7], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let g = Graph::new();
        let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), 2, 1).value();
        for o in 0..2 {
            for oy in 0..y.shape()[2] {
                for ox in 0..y.shape()[3] {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && iy < 6 && ix < 7 {
                                    acc += x[[0, c, iy as usize, ix as usize]] * w[[o, c, ky, kx]];
                                }
                            }
                        }
                    }
                    assert!((y[[0, o, oy, ox]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Tensor::from_elem(IxDyn(&[2]), 1.0));
        let c = g.constant(Tensor::from_elem(IxDyn(&[2]), 3.0));
        let grads = g.backward(a.mul(c).sum());
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap().as_slice().unwrap(), &[3.0, 3.0]);
    }
}
