//! Test functions `f` for linear spectral statistics `Σ f(λᵢ)`.

use num_complex::Complex64;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ComplexFn = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;

#[derive(Clone)]
pub enum FunctionKind {
    /// Coefficients in ascending powers: `c₀ + c₁x + c₂x² + …`.
    Polynomial(Vec<f64>),
    Analytic { f: ComplexFn, derivative: Option<ComplexFn> },
}

#[derive(Clone)]
pub struct TestFunction {
    pub kind: FunctionKind,
    pub label: String,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FunctionKind::Polynomial(c) => write!(f, "TestFunction({}, {:?})", self.label, c),
            FunctionKind::Analytic { .. } => write!(f, "TestFunction({}, analytic)", self.label),
        }
    }
}

impl Serialize for TestFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("TestFunction", 2)?;
        st.serialize_field("label", &self.label)?;
        match &self.kind {
            FunctionKind::Polynomial(c) => st.serialize_field("coefficients", c)?,
            FunctionKind::Analytic { .. } => st.serialize_field("coefficients", &Option::<Vec<f64>>::None)?,
        }
        st.end()
    }
}

impl TestFunction {
    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("polynomial coefficients must be finite".into()));
        }
        let label = format_polynomial(&coefficients);
        Ok(Self { kind: FunctionKind::Polynomial(trim(coefficients)), label })
    }

    /// `x^k`.
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Self::polynomial(c).expect("finite coefficients")
    }

    pub fn analytic<F>(label: &str, f: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    {
        Self { kind: FunctionKind::Analytic { f: Arc::new(f), derivative: None }, label: label.to_string() }
    }

    pub fn with_derivative<F>(mut self, d: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    {
        if let FunctionKind::Analytic { derivative, .. } = &mut self.kind {
            *derivative = Some(Arc::new(d));
        }
        self
    }

    /// Parses polynomials such as `"x^2"` or `"2*x^3 + x - 0.5"`.
    pub fn parse(text: &str) -> Result<Self> {
        let coefficients = Parser::new(text).parse()?;
        let mut f = Self::polynomial(coefficients)?;
        f.label = text.trim().to_string();
        Ok(f)
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.kind {
            FunctionKind::Polynomial(c) => Some(c),
            FunctionKind::Analytic { .. } => None,
        }
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        match &self.kind {
            FunctionKind::Polynomial(c) => c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * z + a),
            FunctionKind::Analytic { f, .. } => f(z),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            FunctionKind::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * x + a),
            FunctionKind::Analytic { f, .. } => f(Complex64::new(x, 0.0)).re,
        }
    }

    /// `c · f`.
    pub fn scaled(&self, c: f64) -> Self {
        let label = format!("{c}*({})", self.label);
        match &self.kind {
            FunctionKind::Polynomial(coef) => Self {
                kind: FunctionKind::Polynomial(coef.iter().map(|a| a * c).collect()),
                label,
            },
            FunctionKind::Analytic { f, derivative } => {
                let f = f.clone();
                let derivative = derivative.clone().map(|d| -> ComplexFn { Arc::new(move |z| d(z) * c) });
                Self { kind: FunctionKind::Analytic { f: Arc::new(move |z| f(z) * c), derivative }, label }
            }
        }
    }
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && c.last() == Some(&0.0) {
        c.pop();
    }
    if c.is_empty() {
        c.push(0.0);
    }
    c
}

fn format_polynomial(c: &[f64]) -> String {
    let terms: Vec<String> = c
        .iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(k, a)| match k {
            0 => format!("{a}"),
            1 if *a == 1.0 => "x".to_string(),
            1 => format!("{a}*x"),
            _ if *a == 1.0 => format!("x^{k}"),
            _ => format!("{a}*x^{k}"),
        })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

fn poly_add(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += sign * v;
    }
    out
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Recursive-descent parser:
/// `expr := term (('+'|'-') term)*`, `term := unary ('*' unary)*`,
/// `unary := '-' unary | power`, `power := atom ('^' integer)?`,
/// `atom := number | 'x' | '(' expr ')'`. Juxtaposition `2x` is a product.
struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn err(&self, what: &str) -> Error {
        Error::InvalidArgument(format!("cannot parse polynomial {:?} at byte {}: {what}", self.src, self.pos))
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn parse(mut self) -> Result<Vec<f64>> {
        let p = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.err("trailing input"));
        }
        Ok(p)
    }

    fn expr(&mut self) -> Result<Vec<f64>> {
        let mut acc = self.term()?;
        loop {
            if self.eat('+') {
                let t = self.term()?;
                acc = poly_add(&acc, &t, 1.0);
            } else if self.eat('-') {
                let t = self.term()?;
                acc = poly_add(&acc, &t, -1.0);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Vec<f64>> {
        let mut acc = self.unary()?;
        loop {
            if self.eat('*') {
                let f = self.unary()?;
                acc = poly_mul(&acc, &f);
                continue;
            }
            self.skip_ws();
            if matches!(self.peek(), Some('x') | Some('(')) {
                let f = self.unary()?;
                acc = poly_mul(&acc, &f);
                continue;
            }
            return Ok(acc);
        }
    }

    fn unary(&mut self) -> Result<Vec<f64>> {
        if self.eat('-') {
            let v = self.unary()?;
            return Ok(v.iter().map(|a| -a).collect());
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Vec<f64>> {
        let base = self.atom()?;
        if self.eat('^') {
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            let k: u32 = self.src[start..self.pos].parse().map_err(|_| self.err("expected integer exponent"))?;
            if k > 64 {
                return Err(self.err("exponent too large"));
            }
            let mut out = vec![1.0];
            for _ in 0..k {
                out = poly_mul(&out, &base);
            }
            return Ok(out);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Vec<f64>> {
        self.skip_ws();
        match self.peek() {
            Some('x') => {
                self.pos += 1;
                Ok(vec![0.0, 1.0])
            }
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                    self.pos += 1;
                }
                if matches!(self.peek(), Some('e') | Some('E')) {
                    self.pos += 1;
                    if matches!(self.peek(), Some('+') | Some('-')) {
                        self.pos += 1;
                    }
                    while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
                let v: f64 = self.src[start..self.pos].parse().map_err(|_| self.err("bad number"))?;
                Ok(vec![v])
            }
            _ => Err(self.err("expected number, 'x' or '('")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_examples() {
        assert_eq!(TestFunction::parse("x^2").unwrap().coefficients().unwrap(), &[0.0, 0.0, 1.0]);
        assert_eq!(
            TestFunction::parse("2*x^3 + x").unwrap().coefficients().unwrap(),
            &[0.0, 1.0, 0.0, 2.0]
        );
        assert_eq!(TestFunction::parse("-x + 0.5").unwrap().coefficients().unwrap(), &[0.5, -1.0]);
        assert_eq!(TestFunction::parse("(x+1)^2").unwrap().coefficients().unwrap(), &[1.0, 2.0, 1.0]);
        assert_eq!(TestFunction::parse("3x^2 - 1e-1").unwrap().coefficients().unwrap(), &[-0.1, 0.0, 3.0]);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "x^", "y", "x^2 +", "(x", "x^1.5", "2 3"] {
            assert!(TestFunction::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn evaluation_matches_powers() {
        let f = TestFunction::parse("2*x^3 + x").unwrap();
        assert_eq!(f.eval(2.0), 18.0);
        let z = Complex64::new(0.5, -1.0);
        assert!((f.eval_complex(z) - (2.0 * z * z * z + z)).norm() < 1e-15);
        let g = f.scaled(3.0);
        assert_eq!(g.eval(2.0), 54.0);
    }
}
