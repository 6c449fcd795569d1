//! Scalar types the tensor kernels are generic over.
//!
//! Besides `f32` and `f64`, [`Dual`] carries a forward-mode tangent. Running a
//! whole forward + backward pass over `Dual` numbers yields directional
//! derivatives of gradients, which is how second-order terms (gradient
//! penalties) are differentiated exactly.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    fn from_f64(v: f64) -> Self;
    /// Primal (real) part as `f64`.
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::default()
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn abs(self) -> Self {
        if self.re() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn is_finite(self) -> bool {
        self.re().is_finite()
    }

    /// `c = a·b` (or `c += a·b` when `accumulate`) for an `m×k` by `k×n`
    /// product. Strides are in elements; `c` is row-major contiguous.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        b_cs: usize,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * rs + (cols - 1) * cs;
        assert!(last < len, "gemm operand out of bounds");
    }
}

macro_rules! float_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn re(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_rs: usize,
                a_cs: usize,
                b: &[Self],
                b_rs: usize,
                b_cs: usize,
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_extent(a.len(), m, k, a_rs, a_cs);
                check_extent(b.len(), k, n, b_rs, b_cs);
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: extents checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_rs as isize,
                        a_cs as isize,
                        b.as_ptr(),
                        b_rs as isize,
                        b_cs as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

float_scalar!(f32, matrixmultiply::sgemm);
float_scalar!(f64, matrixmultiply::dgemm);

/// First-order dual number `re + ε·du` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Self { re, du }
    }

    pub fn constant(re: T) -> Self {
        Self { re, du: T::zero() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.du - q * o.du) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Sum for Dual<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }

    fn re(self) -> f64 {
        self.re.re()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, e * self.du)
    }

    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.du / self.re)
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.du / (T::from_f64(2.0) * s))
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, (T::one() - t * t) * self.du)
    }

    fn is_finite(self) -> bool {
        self.re.is_finite() && self.du.is_finite()
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        b_cs: usize,
        c: &mut [Self],
        accumulate: bool,
    ) {
        check_extent(a.len(), m, k, a_rs, a_cs);
        check_extent(b.len(), k, n, b_rs, b_cs);
        let split = |src: &[Self], rows: usize, cols: usize, rs: usize, cs: usize| {
            let mut re = Vec::with_capacity(rows * cols);
            let mut du = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for col in 0..cols {
                    let v = src[r * rs + col * cs];
                    re.push(v.re);
                    du.push(v.du);
                }
            }
            (re, du)
        };
        let (a_re, a_du) = split(a, m, k, a_rs, a_cs);
        let (b_re, b_du) = split(b, k, n, b_rs, b_cs);
        let mut c_re = vec![T::zero(); m * n];
        let mut c_du = vec![T::zero(); m * n];
        T::gemm(m, k, n, &a_re, k, 1, &b_re, n, 1, &mut c_re, false);
        T::gemm(m, k, n, &a_re, k, 1, &b_du, n, 1, &mut c_du, false);
        T::gemm(m, k, n, &a_du, k, 1, &b_re, n, 1, &mut c_du, true);
        for (i, out) in c[..m * n].iter_mut().enumerate() {
            let v = Self::new(c_re[i], c_du[i]);
            if accumulate {
                *out += v;
            } else {
                *out = v;
            }
        }
    }
}
