//! Closed-form data given as arithmetic expressions in `x1..x3`, `y1..y3`
//! and `t`, compiled once and evaluated at grid nodes.

use std::collections::BTreeSet;
use std::fmt;

use fasteval::{Compiler, Evaler};

use crate::error::{Error, Result};

const VARIABLES: [&str; 7] = ["x1", "x2", "x3", "y1", "y2", "y3", "t"];
const FUNCTIONS: [&str; 4] = ["exp", "sqrt", "pi", "e"];

/// Evaluation point: macro coordinate, cell coordinate and time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Point {
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub t: f64,
}

fn lookup(p: &Point, name: &str, args: &[f64]) -> Option<f64> {
    match (name, args) {
        ("x1", []) => Some(p.x[0]),
        ("x2", []) => Some(p.x[1]),
        ("x3", []) => Some(p.x[2]),
        ("y1", []) => Some(p.y[0]),
        ("y2", []) => Some(p.y[1]),
        ("y3", []) => Some(p.y[2]),
        ("t", []) => Some(p.t),
        ("pi", []) => Some(std::f64::consts::PI),
        ("e", []) => Some(std::f64::consts::E),
        ("exp", [a]) => Some(a.exp()),
        ("sqrt", [a]) => Some(a.sqrt()),
        _ => None,
    }
}

/// A compiled scalar expression.
pub struct Expr {
    source: String,
    slab: fasteval::Slab,
    instr: fasteval::Instruction,
    vars: BTreeSet<String>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Expr").field(&self.source).finish()
    }
}

impl Clone for Expr {
    fn clone(&self) -> Self {
        Self::parse(&self.source).expect("expression parsed once already")
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let err = |message: String| Error::Expression {
            expr: source.to_string(),
            message,
        };
        let parser = fasteval::Parser::new();
        let mut slab = fasteval::Slab::new();
        let instr = parser
            .parse(source, &mut slab.ps)
            .map_err(|e| err(e.to_string()))?
            .from(&slab.ps)
            .compile(&slab.ps, &mut slab.cs);
        let vars = instr.var_names(&slab);
        if let Some(unknown) = vars
            .iter()
            .find(|v| !VARIABLES.contains(&v.as_str()) && !FUNCTIONS.contains(&v.as_str()))
        {
            return Err(err(format!("unknown name `{unknown}`")));
        }
        let out = Self {
            source: source.to_string(),
            slab,
            instr,
            vars,
        };
        // Catches arity errors such as `exp(1, 2)` up front.
        out.eval(&Point::default())?;
        Ok(out)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, p: &Point) -> Result<f64> {
        let mut ns = |name: &str, args: Vec<f64>| lookup(p, name, &args);
        self.instr.eval(&self.slab, &mut ns).map_err(|e| Error::Expression {
            expr: self.source.clone(),
            message: e.to_string(),
        })
    }

    /// Constant value when the expression references no variables.
    pub fn constant(&self) -> Option<f64> {
        match self.instr {
            fasteval::Instruction::IConst(c) => Some(c),
            _ if self.vars.iter().all(|v| !VARIABLES.contains(&v.as_str())) => {
                self.eval(&Point::default()).ok()
            }
            _ => None,
        }
    }

    pub fn uses(&self, var: &str) -> bool {
        self.vars.contains(var)
    }

    pub fn depends_on_y(&self) -> bool {
        ["y1", "y2", "y3"].iter().any(|v| self.uses(v))
    }

    pub fn depends_on_t(&self) -> bool {
        self.uses("t")
    }
}

/// One expression per vector component.
#[derive(Debug, Clone)]
pub struct VectorExpr {
    components: Vec<Expr>,
}

impl VectorExpr {
    pub fn parse<S: AsRef<str>>(sources: &[S]) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("vector expression needs at least one component"));
        }
        let components = sources.iter().map(|s| Expr::parse(s.as_ref())).collect::<Result<_>>()?;
        Ok(Self { components })
    }

    pub fn zero(dim: usize) -> Self {
        Self::parse(&vec!["0"; dim]).expect("literal zero parses")
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn sources(&self) -> Vec<String> {
        self.components.iter().map(|e| e.source().to_string()).collect()
    }

    pub fn eval_into(&self, p: &Point, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.components) {
            *o = e.eval(p)?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|e| e.constant() == Some(0.0))
    }

    pub fn depends_on_y(&self) -> bool {
        self.components.iter().any(Expr::depends_on_y)
    }

    pub fn depends_on_t(&self) -> bool {
        self.components.iter().any(Expr::depends_on_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_trig_and_constants() {
        let e = Expr::parse("sin(pi*x1)*(1 + 0.5*cos(2*pi*y1))").unwrap();
        let p = Point {
            x: [0.5, 0.0, 0.0],
            y: [0.0; 3],
            t: 0.0,
        };
        assert!((e.eval(&p).unwrap() - 1.5).abs() < 1e-15);
        assert!(e.depends_on_y());
        assert!(!e.depends_on_t());
    }

    #[test]
    fn exp_sqrt_and_power() {
        let e = Expr::parse("exp(t) + sqrt(4) + 2^3").unwrap();
        let p = Point {
            t: 1.0,
            ..Point::default()
        };
        assert!((e.eval(&p).unwrap() - (std::f64::consts::E + 10.0)).abs() < 1e-14);
    }

    #[test]
    fn constants_are_detected() {
        assert_eq!(Expr::parse("0").unwrap().constant(), Some(0.0));
        assert_eq!(Expr::parse("2*3").unwrap().constant(), Some(6.0));
        assert_eq!(Expr::parse("x1").unwrap().constant(), None);
        assert!(VectorExpr::parse(&["0", "0.0"]).unwrap().is_zero());
    }

    #[test]
    fn rejects_unknown_names_and_bad_syntax() {
        assert!(Expr::parse("z + 1").is_err());
        assert!(Expr::parse("sin(").is_err());
        assert!(Expr::parse("exp(1, 2)").is_err());
    }
}
