//! Exact arithmetic in multi-quadratic number fields.
//!
//! An [`ExactScalar`] is a finite sum `Σ c_r √r` with rational coefficients
//! `c_r` and distinct square-free radicands `r ≥ 1` (`r = 1` is the rational
//! part). Because square roots of distinct square-free integers are linearly
//! independent over Q, this representation is canonical: equality is
//! coefficient equality and a value is zero iff every coefficient is zero.
//!
//! The set is closed under `+ - * /`, so Q(√2), Q(√5), Q(√2, √3), ... all
//! live in the same type. Signs are decided exactly by splitting off one
//! prime `p` at a time (`x = α + β√p`) and comparing `α²` with `pβ²` in the
//! smaller field; inverses use the conjugation `√p ↦ -√p`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseExactError {
    #[error("unexpected end of input in {0:?}")]
    UnexpectedEnd(String),
    #[error("unexpected character {ch:?} at offset {pos} in {input:?}")]
    UnexpectedChar { input: String, pos: usize, ch: char },
    #[error("unknown constant {0:?}")]
    UnknownName(String),
    #[error("square root of a negative or irrational quantity in {0:?}")]
    BadSqrt(String),
    #[error("division by zero in {0:?}")]
    DivisionByZero(String),
}

/// Element of a multi-quadratic field, stored as radicand → coefficient.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct ExactScalar {
    terms: BTreeMap<u64, BigRational>,
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Writes `n = s² · r` with `r` square-free.
fn split_square(mut n: u64) -> (u64, u64) {
    let mut square = 1u64;
    let mut free = 1u64;
    let mut p = 2u64;
    while p * p <= n {
        let mut e = 0;
        while n.is_multiple_of(p) {
            n /= p;
            e += 1;
        }
        for _ in 0..e / 2 {
            square *= p;
        }
        if e % 2 == 1 {
            free *= p;
        }
        p += 1;
    }
    free *= n;
    (square, free)
}

fn largest_prime_factor(mut n: u64) -> u64 {
    let mut best = 1;
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            best = p;
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        best = n;
    }
    best
}

impl ExactScalar {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::from_rational(BigRational::one())
    }

    pub fn from_integer(n: i64) -> Self {
        Self::from_rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_ratio(n: i64, d: i64) -> Self {
        assert!(d != 0, "zero denominator");
        Self::from_rational(ratio(n, d))
    }

    /// `n / d` for wide integers, e.g. the numerator and denominator of a `Ratio<i128>`.
    pub fn from_i128_ratio(n: i128, d: i128) -> Self {
        assert!(d != 0, "zero denominator");
        Self::from_rational(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn from_rational(q: BigRational) -> Self {
        let mut s = Self::default();
        s.push(1, q);
        s
    }

    /// `c · √n` for any positive integer `n`; square factors are pulled out.
    pub fn sqrt_int(n: u64) -> Self {
        assert!(n > 0, "sqrt of zero requested via sqrt_int");
        let (square, free) = split_square(n);
        let mut s = Self::default();
        s.push(free, BigRational::from_integer(BigInt::from(square)));
        s
    }

    /// `√q` for a non-negative rational whose numerator and denominator fit in `u64`.
    pub fn sqrt_rational(q: &BigRational) -> Option<Self> {
        if q.is_negative() {
            return None;
        }
        if q.is_zero() {
            return Some(Self::zero());
        }
        // √(a/b) = √(ab) / b
        let a = q.numer().to_u64()?;
        let b = q.denom().to_u64()?;
        let ab = a.checked_mul(b)?;
        let root = Self::sqrt_int(ab);
        Some(root.scale(&BigRational::new(BigInt::one(), BigInt::from(b))))
    }

    /// Golden rotation number `(√5 − 1)/2`.
    pub fn golden() -> Self {
        (Self::sqrt_int(5) - Self::one()).scale(&ratio(1, 2))
    }

    fn push(&mut self, radicand: u64, coeff: BigRational) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(radicand) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get() + coeff;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value as a rational, if it has no irrational part.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&1).cloned(),
            _ => None,
        }
    }

    pub fn is_rational(&self) -> bool {
        self.as_rational().is_some()
    }

    /// Coefficient of `√radicand` (radicand 1 is the rational part).
    pub fn coefficient(&self, radicand: u64) -> BigRational {
        self.terms.get(&radicand).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Iterator over `(radicand, coefficient)` pairs with nonzero coefficient.
    pub fn terms(&self) -> impl Iterator<Item = (u64, &BigRational)> {
        self.terms.iter().map(|(r, c)| (*r, c))
    }

    pub fn scale(&self, q: &BigRational) -> Self {
        if q.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(r, c)| (*r, c * q)).collect(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.terms
            .iter()
            .map(|(r, c)| c.to_f64().unwrap_or(f64::NAN) * (*r as f64).sqrt())
            .sum()
    }

    fn approx_sign(&self) -> Option<Ordering> {
        let mut value = 0.0f64;
        let mut magnitude = 0.0f64;
        for (r, c) in &self.terms {
            let t = c.to_f64()? * (*r as f64).sqrt();
            if !t.is_finite() {
                return None;
            }
            value += t;
            magnitude += t.abs();
        }
        let tol = magnitude * 1e-12 + f64::MIN_POSITIVE;
        if value > tol {
            Some(Ordering::Greater)
        } else if value < -tol {
            Some(Ordering::Less)
        } else {
            None
        }
    }

    /// Exact sign: `Less`, `Equal` or `Greater` than zero.
    pub fn sign(&self) -> Ordering {
        if self.terms.is_empty() {
            return Ordering::Equal;
        }
        if let Some(q) = self.as_rational() {
            return q.cmp(&BigRational::zero());
        }
        if let Some(s) = self.approx_sign() {
            return s;
        }
        self.exact_sign()
    }

    fn exact_sign(&self) -> Ordering {
        if let Some(q) = self.as_rational() {
            return q.cmp(&BigRational::zero());
        }
        let p = self.split_prime();
        let (alpha, beta) = self.split(p);
        let sa = alpha.exact_sign();
        let sb = beta.exact_sign();
        if sb == Ordering::Equal {
            return sa;
        }
        if sa == Ordering::Equal || sa == sb {
            return sb;
        }
        // opposite signs: compare α² with pβ²
        let p_q = ExactScalar::from_integer(p as i64);
        let d = &(&alpha * &alpha) - &(&p_q * &(&beta * &beta));
        match d.exact_sign() {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            Ordering::Equal => Ordering::Equal,
        }
    }

    fn split_prime(&self) -> u64 {
        self.terms
            .keys()
            .map(|r| largest_prime_factor(*r))
            .max()
            .unwrap_or(1)
    }

    /// `self = α + β√p` with `α, β` free of `p`.
    fn split(&self, p: u64) -> (Self, Self) {
        let mut alpha = Self::zero();
        let mut beta = Self::zero();
        for (r, c) in &self.terms {
            if r % p == 0 {
                beta.push(r / p, c.clone());
            } else {
                alpha.push(*r, c.clone());
            }
        }
        (alpha, beta)
    }

    fn conjugate(&self, p: u64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|(r, c)| (*r, if r % p == 0 { -c.clone() } else { c.clone() }))
                .collect(),
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        if let Some(q) = self.as_rational() {
            return Some(Self::from_rational(q.recip()));
        }
        let p = self.split_prime();
        let conj = self.conjugate(p);
        let reduced = self * &conj;
        let inv = reduced.inverse()?;
        Some(&conj * &inv)
    }

    pub fn checked_div(&self, other: &Self) -> Option<Self> {
        other.inverse().map(|inv| self * &inv)
    }

    pub fn abs(&self) -> Self {
        if self.sign() == Ordering::Less {
            -self
        } else {
            self.clone()
        }
    }

    pub fn floor(&self) -> BigInt {
        if let Some(q) = self.as_rational() {
            return q.floor().to_integer();
        }
        let approx = self.to_f64();
        let mut n = if approx.is_finite() {
            BigInt::from(approx.floor() as i64)
        } else {
            BigInt::zero()
        };
        loop {
            let below = self - &ExactScalar::from_rational(BigRational::from_integer(n.clone()));
            if below.sign() == Ordering::Less {
                n -= 1;
                continue;
            }
            let above = &below - &ExactScalar::one();
            if above.sign() != Ordering::Less {
                n += 1;
                continue;
            }
            return n;
        }
    }

    /// Fractional part in `[0, 1)`.
    pub fn fract(&self) -> Self {
        let n = self.floor();
        self - &ExactScalar::from_rational(BigRational::from_integer(n))
    }

    /// Distance to the nearest integer, `‖x‖`.
    pub fn dist_to_int(&self) -> Self {
        let f = self.fract();
        let g = &ExactScalar::one() - &f;
        if f <= g {
            f
        } else {
            g
        }
    }

    /// Parses an exact scalar; see the [`FromStr`] impl for the grammar.
    pub fn parse(s: &str) -> Result<Self, ParseExactError> {
        s.parse()
    }
}

impl PartialOrd for ExactScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactScalar {
    fn cmp(&self, other: &Self) -> Ordering {
        (self - other).sign()
    }
}

impl fmt::Debug for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self} (~{:.6})", self.to_f64())
    }
}

impl fmt::Display for ExactScalar {
    /// Canonical text: `(a+b*sqrt(D)+...)/c` with a common denominator,
    /// parentheses omitted when `c = 1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let den = self
            .terms
            .values()
            .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let mut body = String::new();
        for (i, (r, c)) in self.terms.iter().enumerate() {
            let num = (c * BigRational::from_integer(den.clone())).to_integer();
            let neg = num.is_negative();
            let mag = num.abs();
            if i == 0 {
                if neg {
                    body.push('-');
                }
            } else {
                body.push(if neg { '-' } else { '+' });
            }
            if *r == 1 {
                body.push_str(&mag.to_string());
            } else if mag.is_one() {
                body.push_str(&format!("sqrt({r})"));
            } else {
                body.push_str(&format!("{mag}*sqrt({r})"));
            }
        }
        if den.is_one() {
            write!(f, "{body}")
        } else if self.terms.len() == 1 && !body.contains('+') && !body[1..].contains('-') {
            write!(f, "{body}/{den}")
        } else {
            write!(f, "({body})/{den}")
        }
    }
}

impl Serialize for ExactScalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactScalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<i64> for ExactScalar {
    fn from(n: i64) -> Self {
        Self::from_integer(n)
    }
}

impl From<BigRational> for ExactScalar {
    fn from(q: BigRational) -> Self {
        Self::from_rational(q)
    }
}

impl Neg for &ExactScalar {
    type Output = ExactScalar;
    fn neg(self) -> ExactScalar {
        ExactScalar {
            terms: self.terms.iter().map(|(r, c)| (*r, -c.clone())).collect(),
        }
    }
}

impl Neg for ExactScalar {
    type Output = ExactScalar;
    fn neg(self) -> ExactScalar {
        -&self
    }
}

impl Add for &ExactScalar {
    type Output = ExactScalar;
    fn add(self, rhs: &ExactScalar) -> ExactScalar {
        let mut out = self.clone();
        for (r, c) in &rhs.terms {
            out.push(*r, c.clone());
        }
        out
    }
}

impl Sub for &ExactScalar {
    type Output = ExactScalar;
    fn sub(self, rhs: &ExactScalar) -> ExactScalar {
        let mut out = self.clone();
        for (r, c) in &rhs.terms {
            out.push(*r, -c.clone());
        }
        out
    }
}

impl Mul for &ExactScalar {
    type Output = ExactScalar;
    fn mul(self, rhs: &ExactScalar) -> ExactScalar {
        let mut out = ExactScalar::zero();
        for (r, c) in &self.terms {
            for (s, d) in &rhs.terms {
                // √r √s = g √(r s / g²), g = gcd(r, s)
                let g = r.gcd(s);
                let radicand = (r / g) * (s / g);
                let coeff = c * d * BigRational::from_integer(BigInt::from(g));
                out.push(radicand, coeff);
            }
        }
        out
    }
}

impl Div for &ExactScalar {
    type Output = ExactScalar;
    fn div(self, rhs: &ExactScalar) -> ExactScalar {
        self.checked_div(rhs).expect("division by zero ExactScalar")
    }
}

macro_rules! forward_owned {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for ExactScalar {
            type Output = ExactScalar;
            fn $m(self, rhs: ExactScalar) -> ExactScalar { (&self).$m(&rhs) }
        }
        impl $tr<&ExactScalar> for ExactScalar {
            type Output = ExactScalar;
            fn $m(self, rhs: &ExactScalar) -> ExactScalar { (&self).$m(rhs) }
        }
        impl $tr<ExactScalar> for &ExactScalar {
            type Output = ExactScalar;
            fn $m(self, rhs: ExactScalar) -> ExactScalar { self.$m(&rhs) }
        }
    )*};
}
forward_owned!(Add add, Sub sub, Mul mul, Div div);

impl std::iter::Sum for ExactScalar {
    fn sum<I: Iterator<Item = ExactScalar>>(iter: I) -> Self {
        iter.fold(ExactScalar::zero(), |a, b| a + b)
    }
}

impl<'a> std::iter::Sum<&'a ExactScalar> for ExactScalar {
    fn sum<I: Iterator<Item = &'a ExactScalar>>(iter: I) -> Self {
        iter.fold(ExactScalar::zero(), |a, b| a + b)
    }
}

/// Grammar (usual precedence, `√` binds tighter than `*`):
///
/// ```text
/// expr   := term (('+' | '-') term)*
/// term   := unary (('*' | '/') unary)*
/// unary  := ('-' | '+') unary | atom
/// atom   := integer | '(' expr ')' | 'sqrt' '(' expr ')' | '√' atom | name
/// name   := golden | phi | sqrt2m1
/// ```
impl FromStr for ExactScalar {
    type Err = ParseExactError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            input: s,
            chars: s.char_indices().filter(|(_, c)| !c.is_whitespace()).collect(),
            pos: 0,
        };
        let v = p.expr()?;
        if let Some(&(at, ch)) = p.chars.get(p.pos) {
            return Err(ParseExactError::UnexpectedChar {
                input: s.to_string(),
                pos: at,
                ch,
            });
        }
        Ok(v)
    }
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn unexpected(&self) -> ParseExactError {
        match self.chars.get(self.pos) {
            Some(&(at, ch)) => ParseExactError::UnexpectedChar {
                input: self.input.to_string(),
                pos: at,
                ch,
            },
            None => ParseExactError::UnexpectedEnd(self.input.to_string()),
        }
    }

    fn expect(&mut self, ch: char) -> Result<(), ParseExactError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<ExactScalar, ParseExactError> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                '+' => {
                    self.pos += 1;
                    acc = acc + self.term()?;
                }
                '-' => {
                    self.pos += 1;
                    acc = acc - self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<ExactScalar, ParseExactError> {
        let mut acc = self.unary()?;
        while let Some(c) = self.peek() {
            match c {
                '*' => {
                    self.pos += 1;
                    acc = acc * self.unary()?;
                }
                '/' => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = acc
                        .checked_div(&rhs)
                        .ok_or_else(|| ParseExactError::DivisionByZero(self.input.to_string()))?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<ExactScalar, ParseExactError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn sqrt_of(&self, v: ExactScalar) -> Result<ExactScalar, ParseExactError> {
        let q = v
            .as_rational()
            .ok_or_else(|| ParseExactError::BadSqrt(self.input.to_string()))?;
        ExactScalar::sqrt_rational(&q).ok_or_else(|| ParseExactError::BadSqrt(self.input.to_string()))
    }

    fn atom(&mut self) -> Result<ExactScalar, ParseExactError> {
        match self.peek() {
            None => Err(self.unexpected()),
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(')')?;
                Ok(v)
            }
            Some('√') => {
                self.pos += 1;
                let v = self.atom()?;
                self.sqrt_of(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let mut n = BigInt::zero();
                while let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                    n = n * 10 + d;
                    self.pos += 1;
                }
                Ok(ExactScalar::from_rational(BigRational::from_integer(n)))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let mut name = String::new();
                while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
                    name.push(c);
                    self.pos += 1;
                }
                match name.as_str() {
                    "sqrt" => {
                        self.expect('(')?;
                        let v = self.expr()?;
                        self.expect(')')?;
                        self.sqrt_of(v)
                    }
                    "golden" => Ok(ExactScalar::golden()),
                    "phi" => Ok(ExactScalar::golden() + ExactScalar::one()),
                    "sqrt2m1" => Ok(ExactScalar::sqrt_int(2) - ExactScalar::one()),
                    _ => Err(ParseExactError::UnknownName(name)),
                }
            }
            Some(_) => Err(self.unexpected()),
        }
    }
}
