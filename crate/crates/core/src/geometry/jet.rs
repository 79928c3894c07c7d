//! Truncated Taylor (jet) arithmetic of order three.
//!
//! A `Jet` carries the Taylor coefficients c0..c3 of a scalar function of
//! one curve parameter, f(t) = c0 + c1 t + c2 t^2 + c3 t^3 + O(t^4), so the
//! k-th derivative at t = 0 is k! * ck. Seeding the coordinates along a
//! straight line x + t v and evaluating an expression in jet arithmetic
//! yields exact directional derivatives up to third order; mixed partials
//! are then assembled from a fixed family of seed directions by
//! polarization. This is forward-mode automatic differentiation truncated
//! at the order the curvature and splitting-operator formulas need.

/// Taylor coefficients of order <= 3 in a single direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    /// Coefficients c0..c3 of the truncated Taylor polynomial.
    pub c: [f64; 4],
}

impl Jet {
    /// Constant jet (all derivatives zero).
    #[inline]
    pub fn constant(v: f64) -> Jet {
        Jet { c: [v, 0.0, 0.0, 0.0] }
    }

    /// Seed a coordinate moving with rate `rate` along the curve parameter.
    #[inline]
    pub fn seeded(v: f64, rate: f64) -> Jet {
        Jet { c: [v, rate, 0.0, 0.0] }
    }

    /// Value at the base point.
    #[inline]
    pub fn value(self) -> f64 {
        self.c[0]
    }

    /// k-th derivative along the seeded direction (k! times the coefficient).
    #[inline]
    pub fn derivative(self, k: usize) -> f64 {
        const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];
        self.c[k] * FACT[k]
    }

    #[inline]
    pub fn add(self, o: Jet) -> Jet {
        Jet {
            c: [
                self.c[0] + o.c[0],
                self.c[1] + o.c[1],
                self.c[2] + o.c[2],
                self.c[3] + o.c[3],
            ],
        }
    }

    #[inline]
    pub fn sub(self, o: Jet) -> Jet {
        Jet {
            c: [
                self.c[0] - o.c[0],
                self.c[1] - o.c[1],
                self.c[2] - o.c[2],
                self.c[3] - o.c[3],
            ],
        }
    }

    #[inline]
    pub fn neg(self) -> Jet {
        Jet { c: [-self.c[0], -self.c[1], -self.c[2], -self.c[3]] }
    }

    /// Truncated Cauchy product.
    #[inline]
    pub fn mul(self, o: Jet) -> Jet {
        let a = self.c;
        let b = o.c;
        Jet {
            c: [
                a[0] * b[0],
                a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
                a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0],
            ],
        }
    }

    #[inline]
    pub fn scale(self, s: f64) -> Jet {
        Jet { c: [self.c[0] * s, self.c[1] * s, self.c[2] * s, self.c[3] * s] }
    }

    /// Truncated quotient; propagates NaN when the denominator vanishes.
    pub fn div(self, o: Jet) -> Jet {
        let a = self.c;
        let b = o.c;
        let inv = 1.0 / b[0];
        let mut d = [0.0; 4];
        for k in 0..4 {
            let mut acc = a[k];
            for j in 0..k {
                acc -= d[j] * b[k - j];
            }
            d[k] = acc * inv;
        }
        Jet { c: d }
    }

    pub fn recip(self) -> Jet {
        Jet::constant(1.0).div(self)
    }

    /// exp via the standard Taylor recurrence e' = e u'.
    pub fn exp(self) -> Jet {
        let u = self.c;
        let mut e = [0.0; 4];
        e[0] = u[0].exp();
        for k in 1..4 {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += (j as f64) * u[j] * e[k - j];
            }
            e[k] = acc / k as f64;
        }
        Jet { c: e }
    }

    /// Natural logarithm; NaN outside the domain.
    pub fn ln(self) -> Jet {
        let u = self.c;
        let mut l = [0.0; 4];
        l[0] = u[0].ln();
        let inv = 1.0 / u[0];
        for k in 1..4 {
            let mut acc = (k as f64) * u[k];
            for j in 1..k {
                acc -= (j as f64) * l[j] * u[k - j];
            }
            l[k] = acc * inv / k as f64;
        }
        Jet { c: l }
    }

    pub fn sqrt(self) -> Jet {
        let u = self.c;
        let r0 = u[0].sqrt();
        let mut r = [r0, 0.0, 0.0, 0.0];
        let inv = 1.0 / (2.0 * r0);
        for k in 1..4 {
            let mut acc = u[k];
            for j in 1..k {
                acc -= r[j] * r[k - j];
            }
            r[k] = acc * inv;
        }
        Jet { c: r }
    }

    /// Sine and cosine share a coupled recurrence; compute both at once.
    pub fn sin_cos(self) -> (Jet, Jet) {
        let u = self.c;
        let mut s = [0.0; 4];
        let mut c = [0.0; 4];
        s[0] = u[0].sin();
        c[0] = u[0].cos();
        for k in 1..4 {
            let mut sa = 0.0;
            let mut ca = 0.0;
            for j in 1..=k {
                sa += (j as f64) * u[j] * c[k - j];
                ca -= (j as f64) * u[j] * s[k - j];
            }
            s[k] = sa / k as f64;
            c[k] = ca / k as f64;
        }
        (Jet { c: s }, Jet { c: c })
    }

    pub fn sin(self) -> Jet {
        self.sin_cos().0
    }

    pub fn cos(self) -> Jet {
        self.sin_cos().1
    }

    /// Integer power by repeated multiplication; handles negative bases.
    pub fn powi(self, e: i32) -> Jet {
        if e == 0 {
            return Jet::constant(1.0);
        }
        let mut base = if e < 0 { self.recip() } else { self };
        let mut n = e.unsigned_abs();
        let mut acc = Jet::constant(1.0);
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        acc
    }

    /// Real power via exp(p ln u); requires a positive base.
    pub fn powf(self, p: f64) -> Jet {
        self.ln().scale(p).exp()
    }

    /// True when every coefficient is finite.
    pub fn is_finite(self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }
}

/// Value and partial derivatives of a list of scalar outputs at one point.
///
/// `grad`, `hess` and `third` are stored densely with all symmetric entries
/// filled, indexed `[out][a]`, `[out][a][b]`, `[out][a][b][c]` row-major.
#[derive(Debug, Clone)]
pub struct PointDerivatives {
    pub dim: usize,
    pub n_out: usize,
    pub order: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub third: Vec<f64>,
}

impl PointDerivatives {
    #[inline]
    pub fn value_of(&self, out: usize) -> f64 {
        self.value[out]
    }

    #[inline]
    pub fn grad_of(&self, out: usize, a: usize) -> f64 {
        self.grad[out * self.dim + a]
    }

    #[inline]
    pub fn hess_of(&self, out: usize, a: usize, b: usize) -> f64 {
        self.hess[(out * self.dim + a) * self.dim + b]
    }

    #[inline]
    pub fn third_of(&self, out: usize, a: usize, b: usize, c: usize) -> f64 {
        self.third[((out * self.dim + a) * self.dim + b) * self.dim + c]
    }
}

/// Evaluate `eval` on jets seeded along polarization directions and
/// assemble all partial derivatives up to `order` (0..=3).
///
/// Directions used: e_a for first order, e_a +- e_b for mixed second and
/// third order, e_a + e_b + e_c for the fully mixed third-order terms.
pub fn point_derivatives(
    dim: usize,
    n_out: usize,
    order: usize,
    x: &[f64],
    mut eval: impl FnMut(&[Jet], &mut [Jet]),
) -> PointDerivatives {
    assert!(order <= 3, "jet arithmetic is truncated at order 3");
    assert_eq!(x.len(), dim);
    let mut pd = PointDerivatives {
        dim,
        n_out,
        order,
        value: vec![0.0; n_out],
        grad: vec![0.0; if order >= 1 { n_out * dim } else { 0 }],
        hess: vec![0.0; if order >= 2 { n_out * dim * dim } else { 0 }],
        third: vec![0.0; if order >= 3 { n_out * dim * dim * dim } else { 0 }],
    };

    let mut seeds = vec![Jet::constant(0.0); dim];
    let mut out = vec![Jet::constant(0.0); n_out];
    let mut run = |dir: &[f64], eval: &mut dyn FnMut(&[Jet], &mut [Jet])| -> Vec<Jet> {
        for (k, s) in seeds.iter_mut().enumerate() {
            *s = Jet::seeded(x[k], dir[k]);
        }
        eval(&seeds, &mut out);
        out.clone()
    };

    let mut dir = vec![0.0; dim];
    if order == 0 {
        let jets = run(&dir, &mut eval);
        for (o, j) in jets.iter().enumerate() {
            pd.value[o] = j.value();
        }
        return pd;
    }

    // Axis directions: values, gradients, pure second and third derivatives.
    let mut axis = Vec::with_capacity(dim);
    for a in 0..dim {
        dir.iter_mut().for_each(|v| *v = 0.0);
        dir[a] = 1.0;
        axis.push(run(&dir, &mut eval));
    }
    for o in 0..n_out {
        pd.value[o] = axis[0][o].value();
        for a in 0..dim {
            pd.grad[o * dim + a] = axis[a][o].derivative(1);
        }
        if order >= 2 {
            for a in 0..dim {
                pd.hess[(o * dim + a) * dim + a] = axis[a][o].derivative(2);
            }
        }
        if order >= 3 {
            for a in 0..dim {
                pd.third[((o * dim + a) * dim + a) * dim + a] = axis[a][o].derivative(3);
            }
        }
    }
    if order == 1 {
        return pd;
    }

    // Pair directions e_a +- e_b fill f_ab, f_aab and f_abb.
    for a in 0..dim {
        for b in (a + 1)..dim {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[a] = 1.0;
            dir[b] = 1.0;
            let plus = run(&dir, &mut eval);
            dir[b] = -1.0;
            let minus = run(&dir, &mut eval);
            for o in 0..n_out {
                let fab = (plus[o].derivative(2) - minus[o].derivative(2)) / 4.0;
                pd.hess[(o * dim + a) * dim + b] = fab;
                pd.hess[(o * dim + b) * dim + a] = fab;
                if order >= 3 {
                    let faaa = pd.third_of(o, a, a, a);
                    let fbbb = pd.third_of(o, b, b, b);
                    let dp = plus[o].derivative(3);
                    let dm = minus[o].derivative(3);
                    // D3 along (a+b) = faaa + 3 faab + 3 fabb + fbbb,
                    // D3 along (a-b) = faaa - 3 faab + 3 fabb - fbbb.
                    let faab = (dp - dm - 2.0 * fbbb) / 6.0;
                    let fabb = (dp + dm - 2.0 * faaa) / 6.0;
                    for idx in [[a, a, b], [a, b, a], [b, a, a]] {
                        pd.third[((o * dim + idx[0]) * dim + idx[1]) * dim + idx[2]] = faab;
                    }
                    for idx in [[a, b, b], [b, a, b], [b, b, a]] {
                        pd.third[((o * dim + idx[0]) * dim + idx[1]) * dim + idx[2]] = fabb;
                    }
                }
            }
        }
    }
    if order == 2 {
        return pd;
    }

    // Triple directions finish the fully mixed third derivatives.
    for a in 0..dim {
        for b in (a + 1)..dim {
            for c in (b + 1)..dim {
                dir.iter_mut().for_each(|v| *v = 0.0);
                dir[a] = 1.0;
                dir[b] = 1.0;
                dir[c] = 1.0;
                let triple = run(&dir, &mut eval);
                for o in 0..n_out {
                    let pure = pd.third_of(o, a, a, a)
                        + pd.third_of(o, b, b, b)
                        + pd.third_of(o, c, c, c);
                    let mixed2 = pd.third_of(o, a, a, b)
                        + pd.third_of(o, a, b, b)
                        + pd.third_of(o, a, a, c)
                        + pd.third_of(o, a, c, c)
                        + pd.third_of(o, b, b, c)
                        + pd.third_of(o, b, c, c);
                    let fabc = triple[o].derivative(3) / 6.0 - pure / 6.0 - mixed2 / 2.0;
                    for perm in [
                        [a, b, c],
                        [a, c, b],
                        [b, a, c],
                        [b, c, a],
                        [c, a, b],
                        [c, b, a],
                    ] {
                        pd.third[((o * dim + perm[0]) * dim + perm[1]) * dim + perm[2]] = fabc;
                    }
                }
            }
        }
    }
    pd
}
