//! Multivariate polynomial entries over the components of the random vector.
//!
//! Matrix entries are written in a small arithmetic language:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := ['-'] (number | var | '(' expr ')') ['^' uint]
//! var    := 'x' uint            (1-based)
//! ```
//!
//! A leading minus binds looser than the power, so `-x1^2` is `-(x1^2)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("variable x{index} at {pos} is out of range (1..={num_vars})")]
    VarOutOfRange {
        pos: usize,
        index: usize,
        num_vars: usize,
    },
    #[error("exponent at {pos} must be a non-negative integer literal")]
    BadExponent { pos: usize },
    #[error("polynomials over {left} and {right} variables cannot be combined")]
    DimensionMismatch { left: usize, right: usize },
}

/// One monomial `coeff * prod_i x_i^degree[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub degree: Vec<u32>,
}

/// Canonical polynomial: terms sorted by multidegree, merged, no zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    num_vars: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn zero(num_vars: usize) -> Self {
        Self {
            num_vars,
            terms: Vec::new(),
        }
    }

    pub fn constant(value: f64, num_vars: usize) -> Self {
        Self::from_terms(
            num_vars,
            vec![Term {
                coeff: value,
                degree: vec![0; num_vars],
            }],
        )
    }

    /// The variable `x_{index+1}` (0-based index).
    pub fn var(index: usize, num_vars: usize) -> Self {
        assert!(index < num_vars, "variable index out of range");
        let mut degree = vec![0; num_vars];
        degree[index] = 1;
        Self {
            num_vars,
            terms: vec![Term { coeff: 1.0, degree }],
        }
    }

    /// Builds a canonical polynomial from arbitrary (possibly repeated) terms.
    pub fn from_terms(num_vars: usize, mut terms: Vec<Term>) -> Self {
        for t in &terms {
            assert_eq!(t.degree.len(), num_vars, "multidegree length mismatch");
        }
        terms.sort_by(|a, b| a.degree.cmp(&b.degree));
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.degree == t.degree => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        Self {
            num_vars,
            terms: merged,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(c)` when the polynomial does not depend on any variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [t] if t.degree.iter().all(|&d| d == 0) => Some(t.coeff),
            _ => None,
        }
    }

    /// Largest exponent of each variable across all terms.
    pub fn max_degrees(&self) -> Vec<u32> {
        let mut out = vec![0; self.num_vars];
        for t in &self.terms {
            for (o, &d) in out.iter_mut().zip(&t.degree) {
                *o = (*o).max(d);
            }
        }
        out
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        if point.len() != self.num_vars {
            return Err(ExprError::DimensionMismatch {
                left: self.num_vars,
                right: point.len(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.degree
                    .iter()
                    .zip(point)
                    .fold(t.coeff, |acc, (&d, &v)| acc * v.powi(d as i32))
            })
            .sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::from_terms(
            self.num_vars,
            self.terms
                .iter()
                .map(|t| Term {
                    coeff: t.coeff * factor,
                    degree: t.degree.clone(),
                })
                .collect(),
        )
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, ExprError> {
        self.check_dims(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self::from_terms(self.num_vars, terms))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, ExprError> {
        self.check_dims(other)?;
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Term {
                    coeff: a.coeff * b.coeff,
                    degree: a.degree.iter().zip(&b.degree).map(|(x, y)| x + y).collect(),
                });
            }
        }
        Ok(Self::from_terms(self.num_vars, terms))
    }

    pub fn pow(&self, exp: u32) -> Self {
        let mut acc = Self::constant(1.0, self.num_vars);
        for _ in 0..exp {
            acc = &acc * self;
        }
        acc
    }

    fn check_dims(&self, other: &Self) -> Result<(), ExprError> {
        if self.num_vars == other.num_vars {
            Ok(())
        } else {
            Err(ExprError::DimensionMismatch {
                left: self.num_vars,
                right: other.num_vars,
            })
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&-rhs).expect("polynomial dimension mismatch")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Canonical term list of `p * q`.
pub fn poly_product_monomials(p: &Polynomial, q: &Polynomial) -> Result<Vec<Term>, ExprError> {
    Ok(p.try_mul(q)?.terms)
}

impl fmt::Display for Polynomial {
    /// Writes the polynomial back in the input grammar, so output re-parses.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // constant term first reads more naturally ("1.3 + x2")
        let mut order: Vec<&Term> = self.terms.iter().collect();
        order.sort_by(|a, b| {
            let da: u32 = a.degree.iter().sum();
            let db: u32 = b.degree.iter().sum();
            da.cmp(&db).then_with(|| b.degree.cmp(&a.degree))
        });
        for (i, t) in order.iter().enumerate() {
            let mag = t.coeff.abs();
            if i == 0 {
                if t.coeff < 0.0 {
                    write!(f, "-")?;
                }
            } else if t.coeff < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let vars: Vec<String> = t
                .degree
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > 0)
                .map(|(v, &d)| match d {
                    1 => format!("x{}", v + 1),
                    _ => format!("x{}^{}", v + 1, d),
                })
                .collect();
            if vars.is_empty() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{mag}*{}", vars.join("*"))?;
            }
        }
        Ok(())
    }
}

pub fn parse_expr(text: &str, num_vars: usize) -> Result<Polynomial, ExprError> {
    let mut parser = Parser {
        src: text.as_bytes(),
        pos: 0,
        num_vars,
    };
    let p = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.src.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(p)
}

pub fn eval_poly(p: &Polynomial, point: &[f64]) -> Result<f64, ExprError> {
    p.eval(point)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    num_vars: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Polynomial, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ExprError> {
        let mut acc = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = &acc * &self.factor()?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial, ExprError> {
        let negate = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let base = match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                self.pos += 1;
                inner
            }
            Some(b'x') => self.variable()?,
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number()?,
            Some(_) => return Err(self.syntax("expected number, variable or '('")),
            None => return Err(self.syntax("unexpected end of input")),
        };
        let powered = if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.exponent()?;
            base.pow(exp)
        } else {
            base
        };
        Ok(if negate { -&powered } else { powered })
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        self.pos - start
    }

    fn exponent(&mut self) -> Result<u32, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.digits() == 0 {
            return Err(ExprError::BadExponent { pos: start });
        }
        if matches!(self.src.get(self.pos), Some(b'.') | Some(b'e') | Some(b'E')) {
            return Err(ExprError::BadExponent { pos: start });
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(ExprError::BadExponent { pos: start })
    }

    fn variable(&mut self) -> Result<Polynomial, ExprError> {
        let start = self.pos;
        self.pos += 1; // 'x'
        let digits_start = self.pos;
        if self.digits() == 0 {
            return Err(ExprError::Syntax {
                pos: start,
                msg: "expected variable index after 'x'".into(),
            });
        }
        let index: usize = std::str::from_utf8(&self.src[digits_start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(usize::MAX);
        if index == 0 || index > self.num_vars {
            return Err(ExprError::VarOutOfRange {
                pos: start,
                index,
                num_vars: self.num_vars,
            });
        }
        Ok(Polynomial::var(index - 1, self.num_vars))
    }

    fn number(&mut self) -> Result<Polynomial, ExprError> {
        let start = self.pos;
        let int_digits = self.digits();
        let mut frac_digits = 0;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac_digits = self.digits();
        }
        if int_digits + frac_digits == 0 {
            return Err(ExprError::Syntax {
                pos: start,
                msg: "malformed number".into(),
            });
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = save;
                return Err(self.syntax("malformed exponent in number"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("invalid number '{text}'"),
        })?;
        Ok(Polynomial::constant(value, self.num_vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn terms_of(p: &Polynomial) -> Vec<(f64, Vec<u32>)> {
        p.terms().iter().map(|t| (t.coeff, t.degree.clone())).collect()
    }

    #[test]
    fn parses_constant_plus_variable() {
        let p = parse_expr("1.3 + x2", 2).unwrap();
        assert_eq!(terms_of(&p), vec![(1.3, vec![0, 0]), (1.0, vec![0, 1])]);
    }

    #[test]
    fn parses_zero() {
        let p = parse_expr("0", 2).unwrap();
        assert!(p.is_zero());
        assert!(p.terms().is_empty());
    }

    #[test]
    fn parses_product_and_power() {
        let p = parse_expr("x1*x2 - x1^2", 2).unwrap();
        let mut got = terms_of(&p);
        got.sort_by(|a, b| a.1.cmp(&b.1));
        assert_eq!(got, vec![(1.0, vec![1, 1]), (-1.0, vec![2, 0])]);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let p = parse_expr("-x1^2", 1).unwrap();
        assert_eq!(p.eval(&[3.0]).unwrap(), -9.0);
        let q = parse_expr("(-x1)^3 + 2*-x1", 1).unwrap();
        assert_eq!(q.eval(&[2.0]).unwrap(), -12.0);
    }

    #[test]
    fn cancellation_leaves_zero_polynomial() {
        let p = parse_expr("x1 - x1 + 0*x2", 2).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn scientific_literals() {
        let p = parse_expr("2.5e-1*x1 + .5", 1).unwrap();
        assert_eq!(p.eval(&[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_expr("x3", 2),
            Err(ExprError::VarOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            parse_expr("x0", 2),
            Err(ExprError::VarOutOfRange { index: 0, .. })
        ));
        assert!(matches!(
            parse_expr("x1^2.5", 1),
            Err(ExprError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_expr("x1^-1", 1),
            Err(ExprError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_expr("x1 / 2", 1),
            Err(ExprError::Syntax { pos: 3, .. })
        ));
        assert!(matches!(parse_expr("(x1", 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("", 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("sin(x1)", 1), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn evaluation_examples() {
        let p = parse_expr("x1*x2", 2).unwrap();
        assert_eq!(eval_poly(&p, &[2.0, 3.0]).unwrap(), 6.0);
        let q = parse_expr("1.3 + x2", 2).unwrap();
        assert_eq!(eval_poly(&q, &[0.0, 0.0]).unwrap(), 1.3);
        let r = parse_expr("-1.2 + x1^2", 2).unwrap();
        assert!((eval_poly(&r, &[0.2, 0.0]).unwrap() + 1.16).abs() < 1e-15);
        assert!(matches!(
            eval_poly(&r, &[0.2]),
            Err(ExprError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn product_monomial_examples() {
        let x1 = parse_expr("x1", 2).unwrap();
        let got = poly_product_monomials(&x1, &x1).unwrap();
        assert_eq!(got, vec![Term { coeff: 1.0, degree: vec![2, 0] }]);

        let a = parse_expr("1 + x1", 2).unwrap();
        let b = parse_expr("1 - x1", 2).unwrap();
        let got = poly_product_monomials(&a, &b).unwrap();
        assert_eq!(
            got,
            vec![
                Term { coeff: 1.0, degree: vec![0, 0] },
                Term { coeff: -1.0, degree: vec![2, 0] },
            ]
        );

        let s = parse_expr("x1 + x2", 2).unwrap();
        let m = parse_expr("x1*x2", 2).unwrap();
        let mut got = poly_product_monomials(&s, &m).unwrap();
        got.sort_by(|a, b| b.degree.cmp(&a.degree));
        assert_eq!(
            got,
            vec![
                Term { coeff: 1.0, degree: vec![2, 1] },
                Term { coeff: 1.0, degree: vec![1, 2] },
            ]
        );

        let other = parse_expr("x1", 3).unwrap();
        assert!(poly_product_monomials(&x1, &other).is_err());
    }

    #[test]
    fn display_reparses() {
        let p = parse_expr("1.3 + x2 - 0.5*x1^2*x2 - 3", 2).unwrap();
        let q = parse_expr(&p.to_string(), 2).unwrap();
        assert_eq!(p, q);
        assert_eq!(Polynomial::zero(2).to_string(), "0");
    }

    // Independent evaluator working directly on the text, used as the oracle
    // for the canonical representation.
    mod direct {
        pub fn eval(text: &str, point: &[f64]) -> f64 {
            let mut it = Eval { s: text.as_bytes(), i: 0, point };
            it.expr()
        }
        struct Eval<'a> {
            s: &'a [u8],
            i: usize,
            point: &'a [f64],
        }
        impl Eval<'_> {
            fn ws(&mut self) {
                while self.i < self.s.len() && self.s[self.i] == b' ' {
                    self.i += 1;
                }
            }
            fn expr(&mut self) -> f64 {
                let mut v = self.term();
                loop {
                    self.ws();
                    match self.s.get(self.i) {
                        Some(b'+') => {
                            self.i += 1;
                            v += self.term();
                        }
                        Some(b'-') => {
                            self.i += 1;
                            v -= self.term();
                        }
                        _ => return v,
                    }
                }
            }
            fn term(&mut self) -> f64 {
                let mut v = self.factor();
                loop {
                    self.ws();
                    if self.s.get(self.i) == Some(&b'*') {
                        self.i += 1;
                        v *= self.factor();
                    } else {
                        return v;
                    }
                }
            }
            fn factor(&mut self) -> f64 {
                self.ws();
                let neg = if self.s[self.i] == b'-' {
                    self.i += 1;
                    self.ws();
                    true
                } else {
                    false
                };
                let base = if self.s[self.i] == b'(' {
                    self.i += 1;
                    let v = self.expr();
                    self.ws();
                    self.i += 1;
                    v
                } else if self.s[self.i] == b'x' {
                    self.i += 1;
                    let idx = self.uint();
                    self.point[idx - 1]
                } else {
                    let st = self.i;
                    while self.i < self.s.len()
                        && (self.s[self.i].is_ascii_digit() || self.s[self.i] == b'.')
                    {
                        self.i += 1;
                    }
                    std::str::from_utf8(&self.s[st..self.i]).unwrap().parse().unwrap()
                };
                self.ws();
                let v = if self.s.get(self.i) == Some(&b'^') {
                    self.i += 1;
                    self.ws();
                    let e = self.uint();
                    base.powi(e as i32)
                } else {
                    base
                };
                if neg {
                    -v
                } else {
                    v
                }
            }
            fn uint(&mut self) -> usize {
                let st = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                    self.i += 1;
                }
                std::str::from_utf8(&self.s[st..self.i]).unwrap().parse().unwrap()
            }
        }
    }

    fn arb_expr(depth: u32) -> BoxedStrategy<String> {
        let leaf = prop_oneof![
            (0u32..100, 0u32..100).prop_map(|(a, b)| format!("{a}.{b:02}")),
            (1usize..=3).prop_map(|i| format!("x{i}")),
        ];
        if depth == 0 {
            return leaf.boxed();
        }
        let sub = arb_expr(depth - 1);
        prop_oneof![
            leaf,
            (sub.clone(), sub.clone(), prop_oneof![Just("+"), Just("-"), Just("*")])
                .prop_map(|(a, b, op)| format!("({a}) {op} ({b})")),
            sub.clone().prop_map(|a| format!("-({a})")),
            (sub, 0u32..4).prop_map(|(a, e)| format!("({a})^{e}")),
        ]
        .boxed()
    }

    proptest! {
        #[test]
        fn canonical_form_matches_direct_evaluation(
            text in arb_expr(3),
            point in proptest::collection::vec(-1.5f64..1.5, 3),
        ) {
            let p = parse_expr(&text, 3).unwrap();
            let want = direct::eval(&text, &point);
            let got = p.eval(&point).unwrap();
            let scale: f64 = p.terms().iter().map(|t| {
                t.degree.iter().zip(&point).fold(t.coeff.abs(), |a, (&d, &v)| a * v.abs().powi(d as i32))
            }).sum::<f64>().max(1.0);
            prop_assert!((got - want).abs() <= 1e-12 * scale, "{text}: {got} vs {want}");
            // canonical: multidegrees strictly increasing, no zero coefficients
            for w in p.terms().windows(2) {
                prop_assert!(w[0].degree < w[1].degree);
            }
            prop_assert!(p.terms().iter().all(|t| t.coeff != 0.0));
        }

        #[test]
        fn product_evaluates_to_product_of_values(
            a in arb_expr(2),
            b in arb_expr(2),
            point in proptest::collection::vec(-1.5f64..1.5, 3),
        ) {
            let p = parse_expr(&a, 3).unwrap();
            let q = parse_expr(&b, 3).unwrap();
            let prod = Polynomial::from_terms(3, poly_product_monomials(&p, &q).unwrap());
            let want = p.eval(&point).unwrap() * q.eval(&point).unwrap();
            let got = prod.eval(&point).unwrap();
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }
}
