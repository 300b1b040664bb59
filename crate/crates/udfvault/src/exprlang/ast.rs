//! Syntax tree and the built-in function table.

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Built-in functions, in bytecode table order: the `CALL` operand is the
/// discriminant. `pow` is a function rather than an operator so the grammar
/// carries no precedence question for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs = 0,
    Sqrt = 1,
    Floor = 2,
    Ceil = 3,
    Min = 4,
    Max = 5,
    Pow = 6,
}

pub const FUNCS: [(&str, Func, usize); 7] = [
    ("abs", Func::Abs, 1),
    ("sqrt", Func::Sqrt, 1),
    ("floor", Func::Floor, 1),
    ("ceil", Func::Ceil, 1),
    ("min", Func::Min, 2),
    ("max", Func::Max, 2),
    ("pow", Func::Pow, 2),
];

impl Func {
    pub fn lookup(name: &str) -> Option<(Func, usize)> {
        FUNCS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(_, f, arity)| (f, arity))
    }

    pub fn from_index(idx: u8) -> Option<Func> {
        FUNCS.get(idx as usize).map(|&(_, f, _)| f)
    }

    pub fn arity(self) -> usize {
        FUNCS[self as usize].2
    }

    /// IEEE semantics throughout. `min`/`max` are fully specified so two
    /// evaluators can agree bit for bit: a NaN side yields the other
    /// operand, and ties (which only signed zeros can produce) keep the
    /// first operand.
    pub fn apply(self, args: &[f64]) -> f64 {
        match self {
            Func::Abs => args[0].abs(),
            Func::Sqrt => args[0].sqrt(),
            Func::Floor => args[0].floor(),
            Func::Ceil => args[0].ceil(),
            Func::Min => match (args[0], args[1]) {
                (a, b) if a.is_nan() => b,
                (a, b) if b.is_nan() => a,
                (a, b) if b < a => b,
                (a, _) => a,
            },
            Func::Max => match (args[0], args[1]) {
                (a, b) if a.is_nan() => b,
                (a, b) if b.is_nan() => a,
                (a, b) if b > a => b,
                (a, _) => a,
            },
            Func::Pow => args[0].powf(args[1]),
        }
    }
}

/// Expression tree. Input references hold the position of the alias in the
/// compile-time alias list; names are resolved away during parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    InputRef(usize),
    /// Row-major coordinate `dK` of the element being computed.
    Coord(usize),
    /// Flat element index `i`.
    FlatIndex,
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Vec<Ast>),
}
