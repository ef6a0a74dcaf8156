use super::{Expr, Node, Site};
use num_complex::Complex64;
use pest::iterators::Pair;
use pest::Parser;
use pest_derive::Parser;
use std::fmt;
use thiserror::Error;

#[derive(Parser)]
#[grammar = "expr/grammar.pest"]
struct Grammar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    UnknownFunction(String),
    VariableOutOfRange { index: usize, dim: usize },
    Arity { function: String, expected: usize, found: usize },
    NonIntegerExponent,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier `{s}`"),
            ParseErrorKind::UnknownFunction(s) => write!(f, "unknown function `{s}`"),
            ParseErrorKind::VariableOutOfRange { index, dim } => {
                write!(f, "variable x{index} out of range for dimension {dim}")
            }
            ParseErrorKind::Arity {
                function,
                expected,
                found,
            } => write!(f, "`{function}` takes {expected} argument(s), found {found}"),
            ParseErrorKind::NonIntegerExponent => {
                write!(f, "exponent must be an integer literal")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

fn err(p: &Pair<Rule>, kind: ParseErrorKind) -> ParseError {
    let (line, col) = p.as_span().start_pos().line_col();
    ParseError { line, col, kind }
}

fn site(p: &Pair<Rule>) -> Option<Site> {
    let (line, col) = p.as_span().start_pos().line_col();
    Some(Site { line, col })
}

/// Parse `src` as a function of the coordinates `x1..x{dim}`.
///
/// Grammar: numbers, `x1..xn`, `pi`, the imaginary unit `i`, the binary
/// operators `+ - * /`, unary `-`, integer powers `a^n`, `a^(-n)` and
/// `pow(a, n)`, and the functions `exp log sin cos sqrt`.
pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut pairs = Grammar::parse(Rule::input, src).map_err(|e| {
        let (line, col) = match e.line_col {
            pest::error::LineColLocation::Pos(p) => p,
            pest::error::LineColLocation::Span(p, _) => p,
        };
        ParseError {
            line,
            col,
            kind: ParseErrorKind::Syntax(e.variant.message().into_owned()),
        }
    })?;
    let input = pairs.next().expect("input rule");
    let sum = input.into_inner().next().expect("sum rule");
    build_sum(sum, dim)
}

fn build_sum(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let mut it = p.into_inner();
    let mut acc = build_product(it.next().expect("term"), dim)?;
    while let Some(op) = it.next() {
        let rhs = build_product(it.next().expect("term"), dim)?;
        acc = match op.as_str() {
            "+" => Expr::from_node(Node::Add(acc, rhs)),
            _ => Expr::from_node(Node::Sub(acc, rhs)),
        };
    }
    Ok(acc)
}

fn build_product(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let mut it = p.into_inner();
    let mut acc = build_unary(it.next().expect("factor"), dim)?;
    while let Some(op) = it.next() {
        let s = site(&op);
        let rhs = build_unary(it.next().expect("factor"), dim)?;
        acc = match op.as_str() {
            "*" => Expr::from_node(Node::Mul(acc, rhs)),
            _ => Expr::from_node(Node::Div(acc, rhs, s)),
        };
    }
    Ok(acc)
}

fn build_unary(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let mut negs = 0;
    let mut out = None;
    for q in p.into_inner() {
        match q.as_rule() {
            Rule::neg => negs += 1,
            _ => out = Some(build_power(q, dim)?),
        }
    }
    let mut e = out.expect("power");
    for _ in 0..negs {
        e = Expr::from_node(Node::Neg(e));
    }
    Ok(e)
}

fn build_power(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let s = site(&p);
    let mut it = p.into_inner();
    let base = build_atom(it.next().expect("atom"), dim)?;
    match it.next() {
        None => Ok(base),
        Some(ex) => {
            let lit = ex.into_inner().next().expect("exponent literal");
            let n: i32 = lit
                .as_str()
                .parse()
                .map_err(|_| err(&lit, ParseErrorKind::NonIntegerExponent))?;
            Ok(Expr::from_node(Node::Pow(base, n, s)))
        }
    }
}

fn build_atom(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let inner = p.into_inner().next().expect("atom content");
    match inner.as_rule() {
        Rule::number => {
            let v: f64 = inner
                .as_str()
                .parse()
                .map_err(|_| err(&inner, ParseErrorKind::Syntax("bad number".into())))?;
            Ok(Expr::constant(v))
        }
        Rule::ident => build_ident(inner, dim),
        Rule::call => build_call(inner, dim),
        Rule::sum => build_sum(inner, dim),
        r => unreachable!("unexpected rule {r:?}"),
    }
}

fn build_ident(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let name = p.as_str();
    match name {
        "pi" => return Ok(Expr::constant(std::f64::consts::PI)),
        "i" => return Ok(Expr::complex(Complex64::new(0.0, 1.0))),
        _ => {}
    }
    if let Some(digits) = name.strip_prefix('x') {
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            let index: usize = digits
                .parse()
                .map_err(|_| err(&p, ParseErrorKind::UnknownIdentifier(name.into())))?;
            if index == 0 || index > dim {
                return Err(err(&p, ParseErrorKind::VariableOutOfRange { index, dim }));
            }
            return Ok(Expr::var(index - 1));
        }
    }
    Err(err(&p, ParseErrorKind::UnknownIdentifier(name.into())))
}

fn int_literal(e: &Expr) -> Option<i32> {
    match e.node() {
        Node::Const(c) if c.im == 0.0 && c.re.fract() == 0.0 && c.re.abs() < 1e6 => {
            Some(c.re as i32)
        }
        Node::Neg(a) => int_literal(a).map(|n| -n),
        _ => None,
    }
}

fn build_call(p: Pair<Rule>, dim: usize) -> Result<Expr, ParseError> {
    let s = site(&p);
    let mut it = p.clone().into_inner();
    let name_pair = it.next().expect("function name");
    let name = name_pair.as_str().to_string();
    let arg_pairs: Vec<Pair<Rule>> = it.collect();
    let expected = match name.as_str() {
        "exp" | "log" | "sin" | "cos" | "sqrt" => 1,
        "pow" => 2,
        _ => return Err(err(&name_pair, ParseErrorKind::UnknownFunction(name))),
    };
    if arg_pairs.len() != expected {
        return Err(err(
            &p,
            ParseErrorKind::Arity {
                function: name,
                expected,
                found: arg_pairs.len(),
            },
        ));
    }
    let exp_pair = arg_pairs.get(1).cloned();
    let mut args = Vec::with_capacity(expected);
    for a in arg_pairs {
        args.push(build_sum(a, dim)?);
    }
    let a = args[0].clone();
    Ok(match name.as_str() {
        "exp" => Expr::from_node(Node::Exp(a)),
        "log" => Expr::from_node(Node::Log(a, s)),
        "sin" => Expr::from_node(Node::Sin(a)),
        "cos" => Expr::from_node(Node::Cos(a)),
        "sqrt" => Expr::from_node(Node::Sqrt(a, s)),
        _ => {
            let n = int_literal(&args[1]).ok_or_else(|| {
                err(
                    exp_pair.as_ref().expect("exponent"),
                    ParseErrorKind::NonIntegerExponent,
                )
            })?;
            Expr::from_node(Node::Pow(a, n, s))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_variable() {
        let e = parse("x3", 2).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::VariableOutOfRange { index: 3, dim: 2 });
        assert_eq!((e.line, e.col), (1, 1));
        assert!(parse("x0", 2).is_err());
    }

    #[test]
    fn unknown_identifier_position() {
        let e = parse("x1 +\n  2*y", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("y".into()));
        assert_eq!((e.line, e.col), (2, 5));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse("x1 + * 2", 1).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        assert_eq!(e.line, 1);
        assert!(parse("sin(x1", 1).is_err());
        assert!(parse("", 1).is_err());
    }

    #[test]
    fn functions_and_powers() {
        assert!(matches!(
            parse("tan(x1)", 1).unwrap_err().kind,
            ParseErrorKind::UnknownFunction(_)
        ));
        assert!(matches!(
            parse("pow(x1, 1.5)", 1).unwrap_err().kind,
            ParseErrorKind::NonIntegerExponent
        ));
        assert!(matches!(
            parse("sin(x1, x1)", 1).unwrap_err().kind,
            ParseErrorKind::Arity { .. }
        ));
        let e = parse("-x1^2 + x1^(-1) + pow(x1, -2) + 2e-1*pi", 1).unwrap();
        let v: f64 = e.eval(&[2.0]).unwrap();
        assert!((v - (-4.0 + 0.5 + 0.25 + 0.2 * std::f64::consts::PI)).abs() < 1e-15);
    }
}
