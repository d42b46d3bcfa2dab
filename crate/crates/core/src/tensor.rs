//! Dense rank-4 tensors in NCHW layout.
//!
//! Every tensor is `(batch, channels, rows, cols)` with row-major storage.
//! Two element types are supported through [`Real`]: `f64` for gradient
//! checks and tests, `f32` for training.

use std::fmt;
use std::io::{BufRead, Write};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{dim_err, Error, Result};

/// Floating-point element type of a tensor.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    /// Short name used in configuration echoes.
    const NAME: &'static str;

    /// Raw strided `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing `m×k`, `k×n`
    /// and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix product `C (m×n) = op(A) · op(B) + beta · C`.
///
/// With `a_t` set, `a` holds the `k×m` matrix whose transpose is used; the
/// same holds for `b_t` and a stored `n×k` matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths are asserted above and the three slices cannot alias
    // because `c` is borrowed mutably.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Builds a shape, rejecting zero-sized dimensions.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(dim_err!("all dimensions must be >= 1, got ({n}, {c}, {h}, {w})"));
        }
        Ok(Self { n, c, h, w })
    }

    /// The `1×1×1×1` shape of a scalar.
    pub const fn scalar() -> Self {
        Self { n: 1, c: 1, h: 1, w: 1 }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Result<Self> {
        Self::new(d[0], d[1], d[2], d[3])
    }

    /// Flat index of element `(n, c, h, w)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// A dense NCHW array with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(dim_err!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            ));
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    /// Convenience constructor from raw dimensions.
    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        Self::new(Shape::from_dims(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.numel()], requires_grad: false, grad: None }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Fills the tensor from a function of its `(n, c, h, w)` index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data, requires_grad: false, grad: None }
    }

    /// Uniform random values in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(dim_err!("gradient length {} does not match tensor {}", g.len(), self.shape));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Same values, fresh gradient state.
    pub fn detached(&self) -> Self {
        Self { shape: self.shape, data: self.data.clone(), requires_grad: false, grad: None }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect(), requires_grad: false, grad: None }
    }

    /// Converts to another element type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x.as_f64()).collect()
    }

    /// Reshapes without moving data; the element count must be preserved.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(dim_err!("cannot reshape {} into {shape}", self.shape));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// One sample of the batch as a `(1, c, h, w)` tensor.
    pub fn sample(&self, index: usize) -> Result<Self> {
        let s = self.shape;
        if index >= s.n {
            return Err(dim_err!("sample {index} out of range for {s}"));
        }
        let len = s.c * s.h * s.w;
        Self::new(Shape { n: 1, ..s }, self.data[index * len..(index + 1) * len].to_vec())
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| dim_err!("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(dim_err!("cannot stack {ts} with {s}"));
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Self::new(Shape { n, ..s }, data)
    }

    /// Writes `n c h w` on one line followed by whitespace-separated values.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let s = self.shape;
        writeln!(out, "{} {} {} {}", s.n, s.c, s.h, s.w)?;
        for row in self.data.chunks(s.w) {
            let line: Vec<String> = row.iter().map(|v| format!("{:e}", v.as_f64())).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Tensor::write_text`].
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in input.lines() {
            tokens.extend(line?.split_whitespace().map(str::to_owned));
        }
        let parse_err = |t: &str| Error::Usage(format!("bad tensor text token `{t}`"));
        if tokens.len() < 4 {
            return Err(Error::Usage("tensor text needs an `n c h w` header".into()));
        }
        let mut dims = [0usize; 4];
        for (d, t) in dims.iter_mut().zip(&tokens[..4]) {
            *d = t.parse().map_err(|_| parse_err(t))?;
        }
        let data = tokens[4..]
            .iter()
            .map(|t| t.parse::<f64>().map(T::of).map_err(|_| parse_err(t)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(dims, data)
    }
}
