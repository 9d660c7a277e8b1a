//! Piecewise exponential-polynomial functions on `[0, inf)`.
//!
//! On each piece `[a, b)` the function is a finite sum of terms
//! `c * x^p * exp(-k x)` with `x = s - a`. The class is closed under
//! products and under `u -> int_u^inf f`, and every integral has a closed
//! form, which is all the deterministic chaos coefficients need.

use super::DetFn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Term {
    pub coef: f64,
    pub power: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Piece {
    pub start: f64,
    /// `f64::INFINITY` for the last piece.
    pub end: f64,
    pub terms: Vec<Term>,
}

impl Piece {
    fn eval_local(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * x.powi(t.power as i32) * (-t.rate * x).exp())
            .sum()
    }

    /// Same function with terms anchored at `start + shift`.
    fn rebased(&self, shift: f64) -> Vec<Term> {
        if shift == 0.0 {
            return self.terms.clone();
        }
        let mut out = Vec::new();
        for t in &self.terms {
            let scale = t.coef * (-t.rate * shift).exp();
            for j in 0..=t.power {
                let c = binomial(t.power, j) * shift.powi((t.power - j) as i32) * scale;
                out.push(Term {
                    coef: c,
                    power: j,
                    rate: t.rate,
                });
            }
        }
        out
    }

    /// Whether the piece is identically zero.
    fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coef == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PiecewiseExp {
    pieces: Vec<Piece>,
}

impl PiecewiseExp {
    pub fn from_detfn(f: &DetFn) -> Self {
        match f {
            DetFn::Exponential { amplitude, decay } => Self {
                pieces: vec![Piece {
                    start: 0.0,
                    end: f64::INFINITY,
                    terms: vec![Term {
                        coef: *amplitude,
                        power: 0,
                        rate: *decay,
                    }],
                }],
            },
            DetFn::Piecewise { knots, values, tail } => {
                let mut pieces: Vec<Piece> = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| Piece {
                        start: knots[i],
                        end: knots[i + 1],
                        terms: vec![Term {
                            coef: *v,
                            power: 0,
                            rate: 0.0,
                        }],
                    })
                    .collect();
                let (coef, rate) = tail.map_or((0.0, 0.0), |t| (t.amplitude, t.decay));
                pieces.push(Piece {
                    start: *knots.last().expect("validated knots"),
                    end: f64::INFINITY,
                    terms: vec![Term { coef, power: 0, rate }],
                });
                Self { pieces }
            }
        }
    }

    fn piece_index(&self, s: f64) -> usize {
        self.pieces.partition_point(|p| p.start <= s).saturating_sub(1)
    }

    #[cfg(test)]
    pub fn eval(&self, s: f64) -> f64 {
        let p = &self.pieces[self.piece_index(s)];
        p.eval_local(s - p.start)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        let mut cuts: Vec<f64> = self.pieces.iter().chain(&other.pieces).map(|p| p.start).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut pieces = Vec::with_capacity(cuts.len());
        for (i, &a) in cuts.iter().enumerate() {
            let b = cuts.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let pa = &self.pieces[self.piece_index(a)];
            let pb = &other.pieces[other.piece_index(a)];
            let ta = pa.rebased(a - pa.start);
            let tb = pb.rebased(a - pb.start);
            let mut terms = Vec::with_capacity(ta.len() * tb.len());
            for x in &ta {
                for y in &tb {
                    terms.push(Term {
                        coef: x.coef * y.coef,
                        power: x.power + y.power,
                        rate: x.rate + y.rate,
                    });
                }
            }
            pieces.push(Piece {
                start: a,
                end: b,
                terms,
            });
        }
        Self { pieces }
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    /// `int_x^y f(s) ds` for `0 <= x <= y <= inf`; `inf` if the tail diverges.
    pub fn integrate(&self, x: f64, y: f64) -> f64 {
        if y <= x {
            return 0.0;
        }
        let mut total = 0.0;
        for p in &self.pieces[self.piece_index(x)..] {
            if p.start >= y {
                break;
            }
            let lo = x.max(p.start) - p.start;
            let hi = y.min(p.end) - p.start;
            if hi <= lo {
                continue;
            }
            for t in &p.terms {
                if t.coef != 0.0 {
                    total += t.coef * int_term(t.power, t.rate, lo, hi);
                }
            }
        }
        total
    }

    /// `int_t^inf f(s) ds`.
    pub fn tail_integral(&self, t: f64) -> f64 {
        self.integrate(t, f64::INFINITY)
    }

    /// `H(u) = int_u^inf f(s) ds` as a piecewise function.
    ///
    /// Only defined for inputs whose terms all have power 0 (squares and
    /// products of [`DetFn`] representations). Returns `None` if the tail
    /// integral diverges.
    pub fn tail_antiderivative(&self) -> Option<Self> {
        let mut pieces: Vec<Piece> = Vec::with_capacity(self.pieces.len());
        let mut right_value = 0.0;
        for p in self.pieces.iter().rev() {
            let len = p.end - p.start;
            let mut terms = Vec::with_capacity(2 * p.terms.len() + 1);
            for t in &p.terms {
                assert_eq!(t.power, 0, "tail_antiderivative needs power-0 terms");
                if t.coef == 0.0 {
                    continue;
                }
                if len.is_infinite() {
                    if t.rate <= 0.0 {
                        return None;
                    }
                    terms.push(Term {
                        coef: t.coef / t.rate,
                        power: 0,
                        rate: t.rate,
                    });
                } else if t.rate == 0.0 {
                    // c * (len - x)
                    terms.push(Term {
                        coef: t.coef * len,
                        power: 0,
                        rate: 0.0,
                    });
                    terms.push(Term {
                        coef: -t.coef,
                        power: 1,
                        rate: 0.0,
                    });
                } else {
                    // (c / k) * (exp(-k x) - exp(-k len))
                    terms.push(Term {
                        coef: t.coef / t.rate,
                        power: 0,
                        rate: t.rate,
                    });
                    terms.push(Term {
                        coef: -t.coef * (-t.rate * len).exp() / t.rate,
                        power: 0,
                        rate: 0.0,
                    });
                }
            }
            if right_value != 0.0 {
                terms.push(Term {
                    coef: right_value,
                    power: 0,
                    rate: 0.0,
                });
            }
            let piece = Piece {
                start: p.start,
                end: p.end,
                terms,
            };
            right_value = piece.eval_local(0.0);
            pieces.push(piece);
        }
        pieces.reverse();
        Some(Self { pieces })
    }

    /// True when every term on the unbounded piece is either zero or decaying.
    pub fn has_finite_tail(&self) -> bool {
        let last = self.pieces.last().expect("at least one piece");
        last.terms.iter().all(|t| t.coef == 0.0 || t.rate > 0.0)
    }

    /// True when the function vanishes identically on the unbounded piece.
    pub fn vanishes_eventually(&self) -> bool {
        self.pieces.last().expect("at least one piece").is_zero()
    }

    /// True when the function is identically zero on `[0, inf)`.
    pub fn is_identically_zero(&self) -> bool {
        self.pieces.iter().all(Piece::is_zero)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `int_lo^hi x^p e^{-k x} dx`, evaluated as `e^{-k lo} * sum_j C(p,j) lo^{p-j} I_j(k, hi-lo)`
/// so that no large terms cancel.
fn int_term(p: u32, k: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    let mut s = 0.0;
    for j in 0..=p {
        s += binomial(p, j) * lo.powi((p - j) as i32) * int_monomial_exp(j, k, len);
    }
    (-k * lo).exp() * s
}

/// `I_j(k, L) = int_0^L x^j e^{-k x} dx`, with `L` possibly infinite.
fn int_monomial_exp(j: u32, k: f64, len: f64) -> f64 {
    if len.is_infinite() {
        return if k > 0.0 {
            factorial(j) / k.powi(j as i32 + 1)
        } else {
            f64::INFINITY
        };
    }
    let kl = k * len;
    if kl.abs() <= 2.0 {
        // sum_n (-k)^n L^{n+j+1} / (n! (n+j+1))
        let mut term = len.powi(j as i32 + 1); // (-kL)^n L^{j+1} / n!
        let mut sum = term / (j + 1) as f64;
        for n in 1..80 {
            term *= -kl / n as f64;
            let add = term / (n + j as usize + 1) as f64;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        // j!/k^{j+1} (1 - e^{-kL} sum_{i<=j} (kL)^i / i!)
        let mut partial = 0.0;
        let mut pow = 1.0;
        for i in 0..=j {
            if i > 0 {
                pow *= kl / i as f64;
            }
            partial += pow;
        }
        factorial(j) / k.powi(j as i32 + 1) * (1.0 - (-kl).exp() * partial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::ExpTail;

    /// Composite Simpson on `[a, b]` with `n` (even) panels; test-only oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn monomial_integrals_match_closed_forms() {
        // int_0^L e^{-kx} = (1 - e^{-kL})/k on both sides of the series switch.
        for &(k, l) in &[(0.5f64, 1.0f64), (0.5, 10.0), (3.0, 2.0), (-0.3, 4.0), (0.0, 2.5)] {
            let exact = if k == 0.0 { l } else { (1.0 - (-k * l).exp()) / k };
            let got = int_monomial_exp(0, k, l);
            assert!((got - exact).abs() < 1e-14 * exact.abs().max(1.0), "{k} {l}");
        }
        // int_0^L x e^{-kx} = (1 - e^{-kL}(1+kL))/k^2
        for &(k, l) in &[(0.7f64, 1.0f64), (0.7, 9.0), (2.0, 0.5)] {
            let exact = (1.0 - (-k * l).exp() * (1.0 + k * l)) / (k * k);
            assert!((int_monomial_exp(1, k, l) - exact).abs() < 1e-14);
        }
        assert!((int_monomial_exp(2, 2.0, f64::INFINITY) - 2.0 / 8.0).abs() < 1e-16);
    }

    #[test]
    fn exponential_tail_integral() {
        let f = PiecewiseExp::from_detfn(&DetFn::Exponential {
            amplitude: 1.0,
            decay: 0.5,
        })
        .square();
        assert!((f.tail_integral(1.0) - (-1.0f64).exp()).abs() < 1e-16);
        // relative accuracy far out in the tail
        let far = f.tail_integral(30.0);
        assert!((far / (-30.0f64).exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_integrals_against_simpson() {
        let f = PiecewiseExp::from_detfn(&DetFn::Piecewise {
            knots: vec![0.0, 1.0, 2.5],
            values: vec![0.4, -0.2],
            tail: Some(ExpTail {
                amplitude: 0.3,
                decay: 0.25,
            }),
        });
        let g = PiecewiseExp::from_detfn(&DetFn::Exponential {
            amplitude: 0.8,
            decay: 0.1,
        });
        let prod = f.mul(&g);
        let fe = |s: f64| f.eval(s) * g.eval(s);
        // Simpson piece by piece with one-sided values, since the integrand jumps at knots.
        let ge = |s: f64| g.eval(s);
        let oracle = simpson(|s| 0.4 * ge(s), 0.5, 1.0, 200)
            + simpson(|s| -0.2 * ge(s), 1.0, 2.5, 200)
            + simpson(|s| 0.3 * (-0.25 * (s - 2.5)).exp() * ge(s), 2.5, 6.0, 400);
        let got = prod.integrate(0.5, 6.0);
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        for s in [0.7, 1.0, 2.0, 2.5, 4.0] {
            assert!(
                (prod.eval(s) - fe(s)).abs() < 1e-15,
                "eval at {s}: {} vs {}",
                prod.eval(s),
                fe(s)
            );
        }
    }

    #[test]
    fn tail_antiderivative_and_double_integral() {
        // C(t) = int_t^inf g(u)^2 int_u^inf h(s)^2 ds du, g = 1 on [0, 2) then e^{-0.1(s-2)}, h = e^{-0.4 s}
        let g = PiecewiseExp::from_detfn(&DetFn::Piecewise {
            knots: vec![0.0, 2.0],
            values: vec![1.0],
            tail: Some(ExpTail {
                amplitude: 1.0,
                decay: 0.1,
            }),
        });
        let h2 = PiecewiseExp::from_detfn(&DetFn::Exponential {
            amplitude: 1.0,
            decay: 0.4,
        })
        .square();
        let hh = h2.tail_antiderivative().unwrap();
        for &u in &[0.0f64, 1.3, 2.0, 7.5] {
            let exact = (-0.8 * u).exp() / 0.8;
            assert!((hh.eval(u) - exact).abs() < 1e-15);
        }
        let c = g.square().mul(&hh);
        // closed form: int_t^2 e^{-0.8u}/0.8 du + int_2^inf e^{-0.2(u-2)} e^{-0.8u}/0.8 du
        let t = 0.5f64;
        let exact = ((-0.8 * t).exp() - (-1.6f64).exp()) / 0.64 + (-1.6f64).exp() / 0.8;
        assert!((c.tail_integral(t) - exact).abs() < 1e-14);
    }

    #[test]
    fn constant_piece_antiderivative_is_linear() {
        let f = PiecewiseExp::from_detfn(&DetFn::Piecewise {
            knots: vec![0.0, 3.0],
            values: vec![2.0],
            tail: Some(ExpTail {
                amplitude: 1.0,
                decay: 1.0,
            }),
        });
        let h = f.tail_antiderivative().unwrap();
        assert!((h.eval(1.0) - (2.0 * 2.0 + 1.0)).abs() < 1e-15);
        assert!((h.eval(3.0) - 1.0).abs() < 1e-15);
        assert!((h.eval(4.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn divergent_tail_detected() {
        let f = PiecewiseExp::from_detfn(&DetFn::Exponential {
            amplitude: 1.0,
            decay: 0.0,
        });
        assert!(!f.has_finite_tail());
        assert!(f.tail_antiderivative().is_none());
        assert!(f.tail_integral(0.0).is_infinite());
    }
}
