//! Canonical form: folded constants, flattened `+`/`×` chains with sorted
//! operands, subtraction and negation expressed through a `-1` factor.

use std::cmp::Ordering;

use super::{protected_div, BinaryOp, Expr, UnaryOp, Var};

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Param(usize),
    Var(Var),
    Func(UnaryOp, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Prod(Vec<Node>),
    Sum(Vec<Node>),
}

impl Node {
    fn rank(&self) -> u8 {
        match self {
            Node::Const(_) => 0,
            Node::Param(_) => 1,
            Node::Var(_) => 2,
            Node::Func(..) => 3,
            Node::Div(..) => 4,
            Node::Prod(_) => 5,
            Node::Sum(_) => 6,
        }
    }
}

/// Total order: shape first (constants and placeholders all alike), then
/// constant values as a tie-break. Ordering by shape first keeps a skeleton's
/// term order unchanged when its constants become placeholders.
fn cmp(a: &Node, b: &Node) -> Ordering {
    cmp_by(a, b, false).then_with(|| cmp_by(a, b, true))
}

fn shape_rank(n: &Node) -> u8 {
    match n {
        Node::Param(_) => 0,
        other => other.rank(),
    }
}

fn cmp_by(a: &Node, b: &Node, values: bool) -> Ordering {
    let rank = if values { a.rank().cmp(&b.rank()) } else { shape_rank(a).cmp(&shape_rank(b)) };
    rank.then_with(|| match (a, b) {
        (Node::Const(x), Node::Const(y)) if values => x.total_cmp(y),
        (Node::Var(x), Node::Var(y)) => x.cmp(y),
        (Node::Func(f, x), Node::Func(g, y)) => f.cmp(g).then_with(|| cmp_by(x, y, values)),
        (Node::Div(n1, d1), Node::Div(n2, d2)) => cmp_by(n1, n2, values).then_with(|| cmp_by(d1, d2, values)),
        (Node::Prod(xs), Node::Prod(ys)) | (Node::Sum(xs), Node::Sum(ys)) => xs.len().cmp(&ys.len()).then_with(|| {
            xs.iter().zip(ys).map(|(x, y)| cmp_by(x, y, values)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        }),
        _ => Ordering::Equal,
    })
}

fn sum(terms: Vec<Node>) -> Node {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        match t {
            Node::Sum(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    let mut constant = 0.0;
    let mut has_const = false;
    let mut rest = Vec::with_capacity(flat.len());
    for t in flat {
        match t {
            Node::Const(c) => {
                constant += c;
                has_const = true;
            }
            other => rest.push(other),
        }
    }
    if has_const && constant != 0.0 {
        rest.push(Node::Const(constant));
    }
    match rest.len() {
        0 => Node::Const(if has_const { constant } else { 0.0 }),
        1 => rest.pop().unwrap(),
        _ => {
            rest.sort_by(cmp);
            Node::Sum(rest)
        }
    }
}

fn prod(factors: Vec<Node>) -> Node {
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        match f {
            Node::Prod(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    let mut constant = 1.0;
    let mut rest = Vec::with_capacity(flat.len());
    for f in flat {
        match f {
            Node::Const(c) => constant *= c,
            other => rest.push(other),
        }
    }
    if constant == 0.0 || rest.is_empty() {
        return Node::Const(constant);
    }
    if constant == -1.0 && rest.len() == 1 && matches!(rest[0], Node::Sum(_)) {
        let Some(Node::Sum(terms)) = rest.pop() else { unreachable!() };
        return sum(terms.into_iter().map(negate).collect());
    }
    if rest.len() == 1 && constant == 1.0 {
        return rest.pop().unwrap();
    }
    rest.sort_by(cmp);
    if constant != 1.0 {
        rest.insert(0, Node::Const(constant));
    }
    Node::Prod(rest)
}

fn negate(n: Node) -> Node {
    match n {
        Node::Const(c) => Node::Const(-c),
        Node::Sum(terms) => sum(terms.into_iter().map(negate).collect()),
        other => prod(vec![Node::Const(-1.0), other]),
    }
}

fn build(e: &Expr) -> Node {
    match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Param(k) => Node::Param(*k),
        Expr::Var(v) => Node::Var(*v),
        Expr::Unary(UnaryOp::Neg, a) => negate(build(a)),
        Expr::Unary(op, a) => match build(a) {
            Node::Const(c) => Node::Const(op.apply(c)),
            inner => Node::Func(*op, Box::new(inner)),
        },
        Expr::Binary(BinaryOp::Add, l, r) => sum(vec![build(l), build(r)]),
        Expr::Binary(BinaryOp::Sub, l, r) => sum(vec![build(l), negate(build(r))]),
        Expr::Binary(BinaryOp::Mul, l, r) => prod(vec![build(l), build(r)]),
        Expr::Binary(BinaryOp::Div, l, r) => match (build(l), build(r)) {
            (Node::Const(a), Node::Const(b)) => Node::Const(protected_div(a, b)),
            (num, Node::Const(b)) if b == 1.0 => num,
            (num, den) => Node::Div(Box::new(num), Box::new(den)),
        },
    }
}

fn emit(n: Node) -> Expr {
    fn chain(op: BinaryOp, items: Vec<Node>) -> Expr {
        let mut it = items.into_iter().map(emit);
        let first = it.next().expect("non-empty chain");
        it.fold(first, |acc, x| Expr::binary(op, acc, x))
    }
    match n {
        Node::Const(c) => Expr::Const(if c == 0.0 { 0.0 } else { c }),
        Node::Param(k) => Expr::Param(k),
        Node::Var(v) => Expr::Var(v),
        Node::Func(op, a) => Expr::unary(op, emit(*a)),
        Node::Div(a, b) => Expr::binary(BinaryOp::Div, emit(*a), emit(*b)),
        Node::Prod(xs) => chain(BinaryOp::Mul, xs),
        Node::Sum(xs) => chain(BinaryOp::Add, xs),
    }
}

/// Canonical form of `e`. Semantics are preserved up to floating-point
/// reassociation of folded constants and sorted sums.
pub fn canonicalize(e: &Expr) -> Expr {
    emit(build(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn c(s: &str) -> Expr {
        canonicalize(&parse(s).unwrap())
    }

    #[test]
    fn commutative_operands_are_sorted() {
        assert_eq!(c("x_j*(1-x_i)"), c("(1-x_i)*x_j"));
        assert_eq!(c("x_j + sin(x_i) + 2"), c("2 + (sin(x_i) + x_j)"));
    }

    #[test]
    fn folds_constants() {
        assert_eq!(c("(0.25+0.25)*x_i"), parse("0.5*x_i").unwrap());
        assert_eq!(c("sin(0) + x_i"), parse("x_i").unwrap());
        assert_eq!(c("2 * 3 * x_i * 0.5"), parse("3 * x_i").unwrap());
        assert_eq!(c("6 / 3"), parse("2").unwrap());
    }

    #[test]
    fn identities() {
        assert_eq!(c("x_i * 1"), parse("x_i").unwrap());
        assert_eq!(c("x_i + 0"), parse("x_i").unwrap());
        assert_eq!(c("x_i * 0 + x_j"), parse("x_j").unwrap());
        assert_eq!(c("--x_i"), parse("x_i").unwrap());
        assert_eq!(c("x_i / 1"), parse("x_i").unwrap());
    }

    #[test]
    fn subtraction_becomes_negated_addition() {
        assert_eq!(c("x_i - x_j"), c("x_i + (-1)*x_j"));
        assert_eq!(c("-(x_i + x_j)"), c("-x_i - x_j"));
        assert_eq!(c("x_i - (x_j - 1)"), c("1 + x_i - x_j"));
        assert_eq!(c("-0.5*x_i"), c("-(0.5*x_i)"));
    }

    #[test]
    fn division_is_kept() {
        let e = c("x_j / x_i");
        assert!(matches!(e, Expr::Binary(BinaryOp::Div, _, _)));
        assert_ne!(c("x_i / x_j"), c("x_j / x_i"));
    }

    #[test]
    fn idempotent_on_examples() {
        for s in ["x_i - x_j*(2 - x_i)", "sin(x_i - x_j) * 3 - (x_i / (1 + x_j))", "-(-(x_i - 1))", "0.3*(0.2*x_i)"] {
            let once = c(s);
            assert_eq!(canonicalize(&once), once, "{s}");
        }
    }
}
