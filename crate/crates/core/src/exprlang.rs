//! A small expression language for user-defined maps.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | var | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-t1^2`
//! is `-(t1^2)`. Variables are `t1, t2, ...`.

use std::fmt;

use crate::error::{Error, Result};
use crate::funcspace::{Domain, PhiMap, POLE_STRIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Abs,
    Exp,
    Log,
    Sign,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Expression tree. Literals are non-negative; negation is always [`Expr::Neg`].
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based variable index (`t1` is `Var(0)`).
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Value at `t` together with the domain classification of `t`.
    ///
    /// Guards: a zero divisor or a negative `sqrt`/`log` argument is outside;
    /// divisors within the pole strip, zero `sqrt` arguments and kinks of
    /// `abs`, `sign`, `min`, `max` are boundary.
    pub fn eval_guarded(&self, t: &[f64]) -> (f64, Domain) {
        match self {
            Expr::Num(v) => (*v, Domain::Inside),
            Expr::Var(i) => match t.get(*i) {
                Some(v) => (*v, Domain::Inside),
                None => (f64::NAN, Domain::Outside),
            },
            Expr::Neg(e) => {
                let (v, d) = e.eval_guarded(t);
                (-v, d)
            }
            Expr::Bin(op, a, b) => {
                let (x, da) = a.eval_guarded(t);
                let (y, db) = b.eval_guarded(t);
                let mut dom = da.worst(db);
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            dom = Domain::Outside;
                        } else if y.abs() < POLE_STRIP {
                            dom = dom.worst(Domain::Boundary);
                        }
                        x / y
                    }
                    BinOp::Pow => pow(x, y, &mut dom),
                };
                (v, finite_or_outside(v, dom))
            }
            Expr::Call(f, args) => {
                let (x, mut dom) = args[0].eval_guarded(t);
                let v = match f {
                    Func::Sqrt => {
                        if x < 0.0 {
                            dom = Domain::Outside;
                        } else if x == 0.0 {
                            dom = dom.worst(Domain::Boundary);
                        }
                        x.sqrt()
                    }
                    Func::Log => {
                        if x <= 0.0 {
                            dom = Domain::Outside;
                        }
                        x.ln()
                    }
                    Func::Exp => x.exp(),
                    Func::Abs => {
                        if x == 0.0 {
                            dom = dom.worst(Domain::Boundary);
                        }
                        x.abs()
                    }
                    Func::Sign => {
                        if x == 0.0 {
                            dom = dom.worst(Domain::Boundary);
                            0.0
                        } else {
                            x.signum()
                        }
                    }
                    Func::Min | Func::Max => {
                        let (y, db) = args[1].eval_guarded(t);
                        dom = dom.worst(db);
                        if x == y {
                            dom = dom.worst(Domain::Boundary);
                        }
                        if *f == Func::Min {
                            x.min(y)
                        } else {
                            x.max(y)
                        }
                    }
                };
                (v, finite_or_outside(v, dom))
            }
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        self.eval_guarded(t).0
    }

    /// Largest zero-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut vars = Vec::new();
        self.collect_vars(&mut vars);
        vars.into_iter().max()
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(i) => out.push(*i),
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }
}

fn pow(x: f64, y: f64, dom: &mut Domain) -> f64 {
    let integral = y.fract() == 0.0 && y.abs() <= i32::MAX as f64;
    if x < 0.0 && !integral {
        *dom = Domain::Outside;
    }
    if x == 0.0 && y < 0.0 {
        *dom = Domain::Outside;
    }
    if x == 0.0 && y > 0.0 && y < 1.0 {
        *dom = dom.worst(Domain::Boundary);
    }
    if integral {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

fn finite_or_outside(v: f64, dom: Domain) -> Domain {
    if v.is_finite() {
        dom
    } else {
        Domain::Outside
    }
}

/// Fully parenthesized form; parsing it back yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "t{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

pub fn parse(src: &str) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        src,
        pos: 0,
        tok: Tok::End,
        tok_start: 0,
    };
    p.advance()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.tok_start,
            message: message.to_string(),
        }
    }

    fn advance(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut look = self.pos + 1;
                if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                    look += 1;
                }
                if look < bytes.len() && bytes[look].is_ascii_digit() {
                    self.pos = look;
                    while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                }
            }
            let text = &self.src[start..self.pos];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.tok = Tok::Num(v);
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len()
                && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            self.tok = Tok::Sym(c as char);
        } else {
            let ch = self.src[self.pos..].chars().next().unwrap_or('?');
            return Err(Error::Syntax {
                offset: self.pos,
                message: format!("unexpected character `{ch}`"),
            });
        }
        Ok(())
    }

    fn eat(&mut self, sym: char) -> Result<bool> {
        if self.tok == Tok::Sym(sym) {
            self.advance()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expect(&mut self, sym: char) -> Result<()> {
        if self.eat(sym)? {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{sym}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat('-')? {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.eat('^')? {
            let exponent = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let offset = self.tok_start;
                if let Some(index) = variable_index(&name) {
                    self.advance()?;
                    return Ok(Expr::Var(index));
                }
                let func = Func::lookup(&name).ok_or(Error::UnknownFunction {
                    name: name.clone(),
                    offset,
                })?;
                self.advance()?;
                self.expect('(')?;
                let mut args = vec![self.expr()?];
                if self.eat(',')? {
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if args.len() != func.arity() {
                    return Err(Error::Arity {
                        name,
                        expected: func.arity(),
                        found: args.len(),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Tok::End => Err(self.error("unexpected end of input")),
            Tok::Sym(c) => Err(self.error(&format!("unexpected `{c}`"))),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('t')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

/// Component expressions compiled into a [`PhiMap`] with finite-difference
/// Jacobian and guard-derived domain.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExprPhi {
    pub components: Vec<Expr>,
    pub d_in: usize,
}

impl VectorExprPhi {
    pub fn new(components: Vec<Expr>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("no component expressions".into()));
        }
        let mut used = Vec::new();
        for c in &components {
            c.collect_vars(&mut used);
        }
        used.sort_unstable();
        used.dedup();
        let d_in = used.len();
        if d_in == 0 {
            return Err(Error::Dimension("expressions use no variables".into()));
        }
        if let Some(gap) = (0..d_in).find(|i| used[*i] != *i) {
            return Err(Error::Dimension(format!(
                "variable t{} is missing (indices must be contiguous from t1)",
                gap + 1
            )));
        }
        Ok(VectorExprPhi { components, d_in })
    }

    pub fn domain(&self, t: &[f64]) -> Domain {
        self.components
            .iter()
            .map(|c| c.eval_guarded(t).1)
            .fold(Domain::Inside, Domain::worst)
    }

    pub fn into_phi(self, name: impl Into<String>) -> Result<PhiMap> {
        let d_in = self.d_in;
        let d_out = self.components.len();
        let for_eval = self.clone();
        PhiMap::new(
            name,
            d_in,
            d_out,
            move |t| for_eval.components.iter().map(|c| c.eval(t)).collect(),
            move |t| self.domain(t),
        )
    }
}

/// Parses and compiles component expressions into a map.
pub fn compile_phi<S: AsRef<str>>(components: &[S]) -> Result<PhiMap> {
    let exprs = components
        .iter()
        .map(|c| parse(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let name = components
        .iter()
        .map(|c| c.as_ref().trim())
        .collect::<Vec<_>>()
        .join("; ");
    VectorExprPhi::new(exprs)?.into_phi(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::builtin;

    #[test]
    fn examples() {
        assert_eq!(parse("t1/t2").unwrap().eval(&[1.0, 2.0]), 0.5);
        assert_eq!(parse("-t1^2").unwrap().eval(&[3.0]), -9.0);
        assert_eq!(
            parse("sqrt("),
            Err(Error::Syntax {
                offset: 5,
                message: "unexpected end of input".into()
            })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("2^3^2").unwrap().eval(&[]), 512.0);
        assert_eq!(parse("1 - 2 - 3").unwrap().eval(&[]), -4.0);
        assert_eq!(parse("8 / 4 / 2").unwrap().eval(&[]), 1.0);
        assert_eq!(parse("2 ^ -1").unwrap().eval(&[]), 0.5);
        assert_eq!(parse("--t1").unwrap().eval(&[2.0]), 2.0);
        assert_eq!(parse("max(-t1, 0)").unwrap().eval(&[-3.0]), 3.0);
        assert_eq!(parse("1.5e2 + .5").unwrap().eval(&[]), 150.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse("foo(t1)"),
            Err(Error::UnknownFunction { offset: 0, .. })
        ));
        assert!(matches!(parse("min(t1)"), Err(Error::Arity { expected: 2, found: 1, .. })));
        assert!(matches!(parse("abs(t1, t2)"), Err(Error::Arity { .. })));
        assert!(matches!(parse("t1 $ 2"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse("t0"), Err(Error::UnknownFunction { .. })));
        assert!(matches!(parse("(t1"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse("t1 t2"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse(""), Err(Error::Syntax { offset: 0, .. })));
    }

    #[test]
    fn compile_examples() {
        let iv = compile_phi(&["t1/t2"]).unwrap();
        let reference = builtin("iv_ratio").unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let t = [-2.0 + 0.21 * i as f64, -2.0 + 0.21 * j as f64];
                assert_eq!(iv.domain(&t), reference.domain(&t));
                if reference.domain(&t).is_inside() {
                    let a = iv.eval(&t).unwrap()[0];
                    let b = reference.eval(&t).unwrap()[0];
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }

        let abs = compile_phi(&["abs(t1)"]).unwrap();
        let reference = builtin("absval").unwrap();
        for i in 0..101 {
            let t = [-1.0 + 0.02 * i as f64];
            assert_eq!(abs.domain(&t), reference.domain(&t));
            if reference.domain(&t).is_inside() {
                assert_eq!(abs.eval(&t).unwrap(), reference.eval(&t).unwrap());
            }
        }

        assert!(matches!(compile_phi(&["t1", "t3"]), Err(Error::Dimension(_))));
        assert!(matches!(compile_phi(&["3"]), Err(Error::Dimension(_))));
        let two = compile_phi(&["t1 + t2", "t1 * t2"]).unwrap();
        assert_eq!((two.d_in(), two.d_out()), (2, 2));
    }

    #[test]
    fn guards_match_evaluation() {
        let phi = compile_phi(&["log(t1) + sqrt(t2) / (t1 - 1)"]).unwrap();
        assert_eq!(phi.domain(&[-1.0, 1.0]), Domain::Outside);
        assert_eq!(phi.domain(&[2.0, -1.0]), Domain::Outside);
        assert_eq!(phi.domain(&[1.0, 1.0]), Domain::Outside);
        assert_eq!(phi.domain(&[2.0, 0.0]), Domain::Boundary);
        assert_eq!(phi.domain(&[2.0, 4.0]), Domain::Inside);
        assert!((phi.eval(&[2.0, 4.0]).unwrap()[0] - (2f64.ln() + 2.0)).abs() < 1e-15);
        assert_eq!(compile_phi(&["t1^0.5"]).unwrap().domain(&[-1.0]), Domain::Outside);
        assert_eq!(compile_phi(&["t1^-1"]).unwrap().domain(&[0.0]), Domain::Outside);
        assert_eq!(compile_phi(&["exp(t1)"]).unwrap().domain(&[1e6]), Domain::Outside);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0.0f64..1e6).prop_map(Expr::Num),
                (0usize..4).prop_map(Expr::Var),
            ];
            leaf.prop_recursive(5, 48, 2, |inner| {
                let funcs = prop_oneof![
                    Just(Func::Sqrt),
                    Just(Func::Abs),
                    Just(Func::Exp),
                    Just(Func::Log),
                    Just(Func::Sign),
                    Just(Func::Min),
                    Just(Func::Max),
                ];
                let ops = prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow),
                ];
                prop_oneof![
                    inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                    (ops, inner.clone(), inner.clone())
                        .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                    (funcs, inner.clone(), inner).prop_map(|(f, a, b)| {
                        let args = if f.arity() == 2 { vec![a, b] } else { vec![a] };
                        Expr::Call(f, args)
                    }),
                ]
            })
        }

        proptest! {
            #[test]
            fn print_then_parse_is_identity(e in arb_expr()) {
                let printed = e.to_string();
                prop_assert_eq!(parse(&printed).unwrap(), e);
            }

            #[test]
            fn inside_points_evaluate_finitely(
                e in arb_expr(),
                t in prop::collection::vec(-5.0f64..5.0, 4),
            ) {
                let (v, dom) = e.eval_guarded(&t);
                if dom == Domain::Inside {
                    prop_assert!(v.is_finite());
                }
            }
        }
    }
}
