//! The bundled math tool corpus: ten modules of ten tools each, plus
//! in-process implementations that follow the interpreter's numeric rules
//! (integer results stay integers, division always yields a float).

use serde_json::{Number, Value};

use crate::pyrepr::complex_repr;

pub const MODULES: [(&str, &str); 10] = [
    ("algebra", include_str!("../corpus/algebra.tdf")),
    ("arithmetic", include_str!("../corpus/arithmetic.tdf")),
    ("calculus", include_str!("../corpus/calculus.tdf")),
    ("conversions", include_str!("../corpus/conversions.tdf")),
    ("exponents", include_str!("../corpus/exponents.tdf")),
    ("geometry", include_str!("../corpus/geometry.tdf")),
    ("number_theory", include_str!("../corpus/number_theory.tdf")),
    ("probability", include_str!("../corpus/probability.tdf")),
    ("statistics", include_str!("../corpus/statistics.tdf")),
    ("trigonometry", include_str!("../corpus/trigonometry.tdf")),
];

pub fn sources() -> Vec<crate::toollib::ModuleSource> {
    MODULES
        .iter()
        .map(|(name, text)| crate::toollib::ModuleSource::new(*name, *text))
        .collect()
}

pub type NativeFn = fn(&[Value]) -> Result<Value, String>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Num {
    I(i64),
    F(f64),
}

use Num::{F, I};

const ZERO_DIV: &str = "ZeroDivisionError: division by zero";
const FLOAT_ZERO_DIV: &str = "ZeroDivisionError: float division by zero";
const DOMAIN: &str = "ValueError: math domain error";
const RANGE: &str = "OverflowError: math range error";
const INT_OVERFLOW: &str = "OverflowError: integer result exceeds 64 bits";

impl Num {
    fn f(self) -> f64 {
        match self {
            I(i) => i as f64,
            F(x) => x,
        }
    }

    fn value(self) -> Value {
        match self {
            I(i) => Value::from(i),
            F(x) => float(x),
        }
    }
}

fn float(x: f64) -> Value {
    match Number::from_f64(x) {
        Some(n) => Value::Number(n),
        None => Value::String(crate::pyrepr::float_repr(x)),
    }
}

fn num(v: &Value) -> Result<Num, String> {
    if let Some(i) = v.as_i64() {
        return Ok(I(i));
    }
    v.as_f64().map(F).ok_or_else(|| format!("TypeError: expected a number, got {v}"))
}

fn int(v: &Value) -> Result<i64, String> {
    v.as_i64().ok_or_else(|| format!("TypeError: expected an integer, got {v}"))
}

fn list(v: &Value) -> Result<Vec<Num>, String> {
    v.as_array()
        .ok_or_else(|| format!("TypeError: expected a list, got {v}"))?
        .iter()
        .map(num)
        .collect()
}

fn checked(r: Option<i64>) -> Result<Num, String> {
    r.map(I).ok_or_else(|| INT_OVERFLOW.to_string())
}

fn add(a: Num, b: Num) -> Result<Num, String> {
    match (a, b) {
        (I(x), I(y)) => checked(x.checked_add(y)),
        _ => Ok(F(a.f() + b.f())),
    }
}

fn sub(a: Num, b: Num) -> Result<Num, String> {
    match (a, b) {
        (I(x), I(y)) => checked(x.checked_sub(y)),
        _ => Ok(F(a.f() - b.f())),
    }
}

fn mul(a: Num, b: Num) -> Result<Num, String> {
    match (a, b) {
        (I(x), I(y)) => checked(x.checked_mul(y)),
        _ => Ok(F(a.f() * b.f())),
    }
}

fn div(a: Num, b: Num) -> Result<Num, String> {
    if b.f() == 0.0 {
        return Err(match (a, b) {
            (I(_), I(_)) => ZERO_DIV,
            _ => FLOAT_ZERO_DIV,
        }
        .into());
    }
    Ok(F(a.f() / b.f()))
}

fn neg(a: Num) -> Result<Num, String> {
    match a {
        I(x) => checked(x.checked_neg()),
        F(x) => Ok(F(-x)),
    }
}

fn gt(a: Num, b: Num) -> bool {
    match (a, b) {
        (I(x), I(y)) => x > y,
        _ => a.f() > b.f(),
    }
}

fn lt(a: Num, b: Num) -> bool {
    gt(b, a)
}

fn floor_mod(x: i64, y: i64) -> Result<i64, String> {
    if y == 0 {
        return Err("ZeroDivisionError: integer division or modulo by zero".into());
    }
    let r = x.wrapping_rem(y);
    Ok(if r != 0 && ((r < 0) != (y < 0)) { r + y } else { r })
}

fn floor_div(x: i64, y: i64) -> Result<i64, String> {
    if y == 0 {
        return Err("ZeroDivisionError: integer division or modulo by zero".into());
    }
    let q = x.checked_div(y).ok_or(INT_OVERFLOW)?;
    Ok(if (x % y != 0) && ((x < 0) != (y < 0)) { q - 1 } else { q })
}

/// The `**` operator. A negative base with a fractional exponent yields a
/// complex number, rendered as text.
fn pow(a: Num, b: Num) -> Result<Value, String> {
    if let (I(x), I(y)) = (a, b) {
        if y >= 0 {
            let e = u32::try_from(y).map_err(|_| INT_OVERFLOW.to_string())?;
            return checked(x.checked_pow(e)).map(Num::value);
        }
        if x == 0 {
            return Err("ZeroDivisionError: 0.0 cannot be raised to a negative power".into());
        }
    }
    let (x, y) = (a.f(), b.f());
    if x == 0.0 && y < 0.0 {
        return Err("ZeroDivisionError: 0.0 cannot be raised to a negative power".into());
    }
    if x < 0.0 && y.is_finite() && y.fract() != 0.0 {
        // complex(x) ** y via polar form
        let len = (-x).powf(y);
        let phase = std::f64::consts::PI * y;
        return Ok(Value::String(complex_repr(len * phase.cos(), len * phase.sin())));
    }
    let r = x.powf(y);
    if r.is_infinite() && x.is_finite() && y.is_finite() {
        return Err("OverflowError: (34, 'Numerical result out of range')".into());
    }
    Ok(float(r))
}

fn pow_num(a: Num, b: Num) -> Result<Num, String> {
    match pow(a, b)? {
        Value::String(s) => Err(format!("TypeError: complex result {s}")),
        v => num(&v),
    }
}

/// A libm call that reports domain and range errors like `math.*`.
fn math1(x: Num, f: fn(f64) -> f64) -> Result<Value, String> {
    let x = x.f();
    let r = f(x);
    if r.is_nan() && !x.is_nan() {
        return Err(DOMAIN.into());
    }
    if r.is_infinite() && x.is_finite() {
        return Err(RANGE.into());
    }
    Ok(float(r))
}

fn log(x: Num) -> Result<f64, String> {
    if x.f() <= 0.0 {
        return Err(DOMAIN.into());
    }
    Ok(x.f().ln())
}

fn sqrt(x: f64) -> Result<f64, String> {
    if x < 0.0 {
        return Err(DOMAIN.into());
    }
    Ok(x.sqrt())
}

fn sum(items: &[Num]) -> Result<Num, String> {
    items.iter().try_fold(I(0), |acc, &x| add(acc, x))
}

fn max_of(items: &[Num]) -> Result<Num, String> {
    let (first, rest) = items.split_first().ok_or("ValueError: max() arg is an empty sequence")?;
    Ok(rest.iter().fold(*first, |m, &x| if gt(x, m) { x } else { m }))
}

fn min_of(items: &[Num]) -> Result<Num, String> {
    let (first, rest) = items.split_first().ok_or("ValueError: min() arg is an empty sequence")?;
    Ok(rest.iter().fold(*first, |m, &x| if lt(x, m) { x } else { m }))
}

fn mean(items: &[Num]) -> Result<Num, String> {
    div(sum(items)?, I(items.len() as i64))
}

fn variance(items: &[Num]) -> Result<Num, String> {
    let m = mean(items)?;
    let mut acc = I(0);
    for &x in items {
        acc = add(acc, pow_num(sub(x, m)?, I(2))?)?;
    }
    div(acc, I(items.len() as i64))
}

fn comb(n: i64, k: i64) -> Result<i64, String> {
    if n < 0 || k < 0 {
        return Err("ValueError: n and k must be non-negative".into());
    }
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut r: i64 = 1;
    for i in 0..k {
        // exact at each step: r * (n - i) is divisible by (i + 1)
        r = r.checked_mul(n - i).ok_or(INT_OVERFLOW)? / (i + 1);
    }
    Ok(r)
}

fn factorial(n: i64) -> Result<i64, String> {
    if n < 0 {
        return Err("ValueError: n must be non-negative".into());
    }
    (2..=n).try_fold(1i64, |acc, i| acc.checked_mul(i).ok_or_else(|| INT_OVERFLOW.to_string()))
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.unsigned_abs(), b.unsigned_abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a as i64
}

fn horner(coefficients: &[Num], x: Num) -> Result<Num, String> {
    coefficients.iter().try_fold(I(0), |acc, &c| add(mul(acc, x)?, c))
}

fn python_round(x: f64, digits: i64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if digits >= 0 {
        let digits = digits.min(340) as usize;
        // exact decimal expansion, ties to even
        format!("{x:.digits$}").parse().unwrap_or(x)
    } else {
        let scale = 10f64.powi((-digits).min(308) as i32);
        let r = (x / scale).round_ties_even() * scale;
        if r == 0.0 {
            0.0f64.copysign(x)
        } else {
            r
        }
    }
}

macro_rules! natives {
    ($( $name:literal => |$a:ident| $body:expr ),* $(,)?) => {
        /// In-process implementation of a corpus tool, by unqualified name.
        pub fn native(name: &str) -> Option<NativeFn> {
            match name {
                $( $name => Some({ fn f($a: &[Value]) -> Result<Value, String> { $body } f }), )*
                _ => None,
            }
        }

        pub const NATIVE_NAMES: &[&str] = &[$($name),*];
    };
}

natives! {
    // arithmetic
    "add" => |a| Ok(add(num(&a[0])?, num(&a[1])?)?.value()),
    "subtract" => |a| Ok(sub(num(&a[0])?, num(&a[1])?)?.value()),
    "multiply" => |a| Ok(mul(num(&a[0])?, num(&a[1])?)?.value()),
    "divide" => |a| Ok(div(num(&a[0])?, num(&a[1])?)?.value()),
    "power" => |a| pow(num(&a[0])?, num(&a[1])?),
    "modulo" => |a| Ok(Value::from(floor_mod(int(&a[0])?, int(&a[1])?)?)),
    "negate" => |a| Ok(neg(num(&a[0])?)?.value()),
    "absolute_value" => |a| {
        let x = num(&a[0])?;
        Ok(if lt(x, I(0)) { neg(x)? } else if let F(v) = x { F(v.abs()) } else { x }.value())
    },
    "reciprocal" => |a| Ok(div(I(1), num(&a[0])?)?.value()),
    "integer_division" => |a| Ok(Value::from(floor_div(int(&a[0])?, int(&a[1])?)?)),

    // exponents
    "square" => |a| { let x = num(&a[0])?; Ok(mul(x, x)?.value()) },
    "cube" => |a| { let x = num(&a[0])?; Ok(mul(mul(x, x)?, x)?.value()) },
    "square_root" => |a| Ok(float(sqrt(num(&a[0])?.f())?)),
    "cube_root" => |a| { let x = num(&a[0])?.f(); Ok(float(x.abs().powf(1.0 / 3.0).copysign(x))) },
    "nth_root" => |a| {
        let x = num(&a[0])?;
        if lt(x, I(0)) {
            return Err("ValueError: x must be non-negative".into());
        }
        let n = int(&a[1])?;
        let e = div(I(1), I(n))?;
        pow(x, e)
    },
    "exponential" => |a| math1(num(&a[0])?, f64::exp),
    "natural_logarithm" => |a| Ok(float(log(num(&a[0])?)?)),
    "logarithm" => |a| Ok(div(F(log(num(&a[0])?)?), F(log(num(&a[1])?)?))?.value()),
    "common_logarithm" => |a| { let x = num(&a[0])?; log(x)?; Ok(float(x.f().log10())) },
    "hypotenuse" => |a| Ok(float(num(&a[0])?.f().hypot(num(&a[1])?.f()))),

    // number_theory
    "factorial" => |a| Ok(Value::from(factorial(int(&a[0])?)?)),
    "fibonacci_recursive" => |a| {
        let n = int(&a[0])?;
        if n < 0 {
            return Err("ValueError: n must be non-negative".into());
        }
        let (mut x, mut y) = (0i64, 1i64);
        for _ in 0..n {
            (x, y) = (y, x.checked_add(y).ok_or(INT_OVERFLOW)?);
        }
        Ok(Value::from(x))
    },
    "greatest_common_divisor" => |a| Ok(Value::from(gcd(int(&a[0])?, int(&a[1])?))),
    "least_common_multiple" => |a| {
        let (x, y) = (int(&a[0])?, int(&a[1])?);
        if x == 0 || y == 0 {
            return Ok(Value::from(0));
        }
        let p = x.checked_mul(y).ok_or(INT_OVERFLOW)?.abs();
        Ok(Value::from(p / gcd(x, y)))
    },
    "is_prime" => |a| {
        let n = int(&a[0])?;
        if n < 2 {
            return Ok(Value::Bool(false));
        }
        let mut i = 2i64;
        while i * i <= n {
            if n % i == 0 {
                return Ok(Value::Bool(false));
            }
            i += 1;
        }
        Ok(Value::Bool(true))
    },
    "count_divisors" => |a| {
        let n = int(&a[0])?;
        if n < 1 {
            return Err("ValueError: n must be positive".into());
        }
        Ok(Value::from((1..=n).filter(|i| n % i == 0).count() as i64))
    },
    "sum_of_divisors" => |a| {
        let n = int(&a[0])?;
        if n < 1 {
            return Err("ValueError: n must be positive".into());
        }
        Ok(Value::from((1..=n).filter(|i| n % i == 0).sum::<i64>()))
    },
    "digit_sum" => |a| {
        let n = int(&a[0])?;
        Ok(Value::from(n.unsigned_abs().to_string().bytes().map(|d| (d - b'0') as i64).sum::<i64>()))
    },
    "is_perfect_square" => |a| {
        let n = int(&a[0])?;
        if n < 0 {
            return Ok(Value::Bool(false));
        }
        let r = n.isqrt();
        Ok(Value::Bool(r * r == n))
    },
    "binomial_coefficient" => |a| Ok(Value::from(comb(int(&a[0])?, int(&a[1])?)?)),

    // statistics
    "mean" => |a| Ok(mean(&list(&a[0])?)?.value()),
    "median" => |a| {
        let mut xs = list(&a[0])?;
        if xs.is_empty() {
            return Err("ValueError: numbers must not be empty".into());
        }
        xs.sort_by(|x, y| x.f().total_cmp(&y.f()));
        let mid = xs.len() / 2;
        if xs.len() % 2 == 1 {
            return Ok(xs[mid].value());
        }
        Ok(div(add(xs[mid - 1], xs[mid])?, I(2))?.value())
    },
    "variance" => |a| Ok(variance(&list(&a[0])?)?.value()),
    "standard_deviation" => |a| Ok(float(sqrt(variance(&list(&a[0])?)?.f())?)),
    "coefficient_of_variation" => |a| {
        let xs = list(&a[0])?;
        let stdev = sqrt(variance(&xs)?.f())?;
        Ok(div(F(stdev), mean(&xs)?)?.value())
    },
    "value_range" => |a| { let xs = list(&a[0])?; Ok(sub(max_of(&xs)?, min_of(&xs)?)?.value()) },
    "list_sum" => |a| Ok(sum(&list(&a[0])?)?.value()),
    "list_product" => |a| Ok(list(&a[0])?.into_iter().try_fold(I(1), mul)?.value()),
    "list_minimum" => |a| Ok(min_of(&list(&a[0])?)?.value()),
    "list_maximum" => |a| Ok(max_of(&list(&a[0])?)?.value()),

    // geometry
    "circle_area" => |a| Ok(mul(F(std::f64::consts::PI), pow_num(num(&a[0])?, I(2))?)?.value()),
    "circle_circumference" => |a| Ok(mul(F(2.0 * std::f64::consts::PI), num(&a[0])?)?.value()),
    "rectangle_area" => |a| Ok(mul(num(&a[0])?, num(&a[1])?)?.value()),
    "rectangle_perimeter" => |a| Ok(mul(I(2), add(num(&a[0])?, num(&a[1])?)?)?.value()),
    "triangle_area" => |a| Ok(div(mul(num(&a[0])?, num(&a[1])?)?, I(2))?.value()),
    "sphere_volume" => |a| {
        let k = mul(F(4.0 / 3.0), F(std::f64::consts::PI))?;
        Ok(mul(k, pow_num(num(&a[0])?, I(3))?)?.value())
    },
    "cylinder_volume" => |a| {
        let base = mul(F(std::f64::consts::PI), pow_num(num(&a[0])?, I(2))?)?;
        Ok(mul(base, num(&a[1])?)?.value())
    },
    "cube_volume" => |a| Ok(pow_num(num(&a[0])?, I(3))?.value()),
    "distance_between_points" => |a| {
        let dx = sub(num(&a[2])?, num(&a[0])?)?.f();
        let dy = sub(num(&a[3])?, num(&a[1])?)?.f();
        Ok(float(dx.hypot(dy)))
    },
    "degrees_to_radians" => |a| Ok(float(num(&a[0])?.f().to_radians())),

    // algebra
    "solve_linear_equation" => |a| Ok(div(neg(num(&a[1])?)?, num(&a[0])?)?.value()),
    "quadratic_discriminant" => |a| {
        let (x, y, z) = (num(&a[0])?, num(&a[1])?, num(&a[2])?);
        Ok(sub(mul(y, y)?, mul(mul(I(4), x)?, z)?)?.value())
    },
    "quadratic_roots" => |a| {
        let (x, y, z) = (num(&a[0])?, num(&a[1])?, num(&a[2])?);
        let d = sub(mul(y, y)?, mul(mul(I(4), x)?, z)?)?;
        if lt(d, I(0)) {
            return Ok(Value::Array(Vec::new()));
        }
        let s = sqrt(d.f())?;
        let two_a = mul(I(2), x)?;
        let r1 = div(sub(neg(y)?, F(s))?, two_a)?.f();
        let r2 = div(add(neg(y)?, F(s))?, two_a)?.f();
        let mut roots = vec![r1, r2];
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        Ok(Value::Array(roots.into_iter().map(float).collect()))
    },
    "arithmetic_series_sum" => |a| {
        let (first, d, n) = (num(&a[0])?, num(&a[1])?, I(int(&a[2])?));
        let inner = add(mul(I(2), first)?, mul(sub(n, I(1))?, d)?)?;
        Ok(div(mul(n, inner)?, I(2))?.value())
    },
    "geometric_series_sum" => |a| {
        let (first, r, n) = (num(&a[0])?, num(&a[1])?, I(int(&a[2])?));
        if r.f() == 1.0 {
            return Ok(mul(first, n)?.value());
        }
        let top = mul(first, sub(I(1), pow_num(r, n)?)?)?;
        Ok(div(top, sub(I(1), r)?)?.value())
    },
    "percentage_of" => |a| Ok(mul(div(num(&a[0])?, I(100))?, num(&a[1])?)?.value()),
    "percentage_change" => |a| {
        let (old, new) = (num(&a[0])?, num(&a[1])?);
        Ok(mul(div(sub(new, old)?, old)?, I(100))?.value())
    },
    "average_of_two" => |a| Ok(div(add(num(&a[0])?, num(&a[1])?)?, I(2))?.value()),
    "linear_interpolation" => |a| {
        let (s, e, t) = (num(&a[0])?, num(&a[1])?, num(&a[2])?);
        Ok(add(s, mul(sub(e, s)?, t)?)?.value())
    },
    "slope" => |a| {
        let dy = sub(num(&a[3])?, num(&a[1])?)?;
        let dx = sub(num(&a[2])?, num(&a[0])?)?;
        Ok(div(dy, dx)?.value())
    },

    // trigonometry
    "sine" => |a| math1(num(&a[0])?, f64::sin),
    "cosine" => |a| math1(num(&a[0])?, f64::cos),
    "tangent" => |a| math1(num(&a[0])?, f64::tan),
    "arcsine" => |a| math1(num(&a[0])?, f64::asin),
    "arccosine" => |a| math1(num(&a[0])?, f64::acos),
    "arctangent" => |a| math1(num(&a[0])?, f64::atan),
    "radians_to_degrees" => |a| Ok(float(num(&a[0])?.f().to_degrees())),
    "hyperbolic_sine" => |a| math1(num(&a[0])?, f64::sinh),
    "hyperbolic_cosine" => |a| math1(num(&a[0])?, f64::cosh),
    "hyperbolic_tangent" => |a| math1(num(&a[0])?, f64::tanh),

    // calculus
    "evaluate_polynomial" => |a| Ok(horner(&list(&a[0])?, num(&a[1])?)?.value()),
    "polynomial_derivative_at" => |a| {
        let cs = list(&a[0])?;
        let x = num(&a[1])?;
        let degree = cs.len() as i64 - 1;
        let mut acc = I(0);
        for (i, &c) in cs.iter().take(cs.len().saturating_sub(1)).enumerate() {
            acc = add(mul(acc, x)?, mul(c, I(degree - i as i64))?)?;
        }
        Ok(acc.value())
    },
    "polynomial_definite_integral" => |a| {
        let cs = list(&a[0])?;
        let degree = cs.len() as i64 - 1;
        let anti = |x: Num| -> Result<Num, String> {
            let mut total = I(0);
            for (i, &c) in cs.iter().enumerate() {
                let p = I(degree - i as i64 + 1);
                total = add(total, div(mul(c, pow_num(x, p)?)?, p)?)?;
            }
            Ok(total)
        };
        Ok(sub(anti(num(&a[2])?)?, anti(num(&a[1])?)?)?.value())
    },
    "trapezoidal_rule" => |a| {
        let vs = list(&a[0])?;
        if vs.len() < 2 {
            return Err("ValueError: at least two values are required".into());
        }
        let ends = div(add(vs[0], vs[vs.len() - 1])?, I(2))?;
        Ok(mul(num(&a[1])?, sub(sum(&vs)?, ends)?)?.value())
    },
    "simpson_rule" => |a| {
        let vs = list(&a[0])?;
        let n = vs.len();
        if n < 3 || n % 2 == 0 {
            return Err("ValueError: an odd number of at least three values is required".into());
        }
        let mut total = add(vs[0], vs[n - 1])?;
        for (i, &v) in vs.iter().enumerate().take(n - 1).skip(1) {
            total = add(total, mul(I(if i % 2 == 1 { 4 } else { 2 }), v)?)?;
        }
        Ok(mul(div(num(&a[1])?, I(3))?, total)?.value())
    },
    "average_rate_of_change" => |a| {
        let df = sub(num(&a[1])?, num(&a[0])?)?;
        let dx = sub(num(&a[3])?, num(&a[2])?)?;
        Ok(div(df, dx)?.value())
    },
    "cumulative_sum" => |a| {
        let mut running = I(0);
        let mut out = Vec::new();
        for x in list(&a[0])? {
            running = add(running, x)?;
            out.push(running.value());
        }
        Ok(Value::Array(out))
    },
    "finite_differences" => |a| {
        let xs = list(&a[0])?;
        let out: Result<Vec<Value>, String> = xs.windows(2).map(|w| Ok(sub(w[1], w[0])?.value())).collect();
        Ok(Value::Array(out?))
    },
    "dot_product" => |a| {
        let (u, v) = (list(&a[0])?, list(&a[1])?);
        if u.len() != v.len() {
            return Err("ValueError: vectors must have the same length".into());
        }
        let products: Result<Vec<Num>, String> = u.iter().zip(&v).map(|(&x, &y)| mul(x, y)).collect();
        Ok(sum(&products?)?.value())
    },
    "vector_norm" => |a| {
        let v = list(&a[0])?;
        let squares: Result<Vec<Num>, String> = v.iter().map(|&x| mul(x, x)).collect();
        Ok(float(sum(&squares?)?.f().sqrt()))
    },

    // probability
    "permutations" => |a| {
        let (n, k) = (int(&a[0])?, int(&a[1])?);
        if n < 0 || k < 0 {
            return Err("ValueError: n and k must be non-negative".into());
        }
        if k > n {
            return Ok(Value::from(0));
        }
        let p = ((n - k + 1)..=n).try_fold(1i64, |acc, i| acc.checked_mul(i).ok_or(INT_OVERFLOW))?;
        Ok(Value::from(p))
    },
    "complement_probability" => |a| Ok(sub(I(1), num(&a[0])?)?.value()),
    "independent_events_probability" => |a| Ok(mul(num(&a[0])?, num(&a[1])?)?.value()),
    "union_probability" => |a| Ok(sub(add(num(&a[0])?, num(&a[1])?)?, num(&a[2])?)?.value()),
    "binomial_probability" => |a| {
        let (n, k, p) = (int(&a[0])?, int(&a[1])?, num(&a[2])?);
        let c = I(comb(n, k)?);
        let success = pow_num(p, I(k))?;
        let failure = pow_num(sub(I(1), p)?, I(n - k))?;
        Ok(mul(mul(c, success)?, failure)?.value())
    },
    "expected_value" => |a| {
        let (vs, ps) = (list(&a[0])?, list(&a[1])?);
        if vs.len() != ps.len() {
            return Err("ValueError: values and probabilities must have the same length".into());
        }
        let products: Result<Vec<Num>, String> = vs.iter().zip(&ps).map(|(&v, &p)| mul(v, p)).collect();
        Ok(sum(&products?)?.value())
    },
    "geometric_probability" => |a| {
        let (p, k) = (num(&a[0])?, int(&a[1])?);
        if k < 1 {
            return Err("ValueError: k must be at least 1".into());
        }
        Ok(mul(pow_num(sub(I(1), p)?, I(k - 1))?, p)?.value())
    },
    "poisson_probability" => |a| {
        let (rate, k) = (num(&a[0])?, int(&a[1])?);
        if k < 0 {
            return Err("ValueError: k must be non-negative".into());
        }
        let top = mul(pow_num(rate, I(k))?, F((-rate.f()).exp()))?;
        Ok(div(top, I(factorial(k)?))?.value())
    },
    "bayes_theorem" => |a| Ok(div(mul(num(&a[0])?, num(&a[1])?)?, num(&a[2])?)?.value()),
    "uniform_probability" => |a| Ok(div(I(int(&a[0])?), I(int(&a[1])?))?.value()),

    // conversions
    "celsius_to_fahrenheit" => |a| Ok(add(div(mul(num(&a[0])?, I(9))?, I(5))?, I(32))?.value()),
    "fahrenheit_to_celsius" => |a| Ok(div(mul(sub(num(&a[0])?, I(32))?, I(5))?, I(9))?.value()),
    "round_to_decimals" => |a| {
        let digits = int(&a[1])?;
        match num(&a[0])? {
            I(x) if digits >= 0 => Ok(Value::from(x)),
            I(x) => {
                let scale = 10i64.checked_pow((-digits) as u32).ok_or(INT_OVERFLOW)?;
                let q = floor_div(x, scale)?;
                let r = x - q * scale;
                let up = 2 * r > scale || (2 * r == scale && q % 2 != 0);
                Ok(Value::from((q + up as i64) * scale))
            }
            F(x) => Ok(float(python_round(x, digits))),
        }
    },
    "floor_value" => |a| match num(&a[0])? {
        I(x) => Ok(Value::from(x)),
        F(x) if x.is_nan() => Err("ValueError: cannot convert float NaN to integer".into()),
        F(x) if x.is_infinite() => Err("OverflowError: cannot convert float infinity to integer".into()),
        F(x) => Ok(Value::from(x.floor() as i64)),
    },
    "ceiling_value" => |a| match num(&a[0])? {
        I(x) => Ok(Value::from(x)),
        F(x) if x.is_nan() => Err("ValueError: cannot convert float NaN to integer".into()),
        F(x) if x.is_infinite() => Err("OverflowError: cannot convert float infinity to integer".into()),
        F(x) => Ok(Value::from(x.ceil() as i64)),
    },
    "sign" => |a| {
        let x = num(&a[0])?;
        Ok(Value::from(if gt(x, I(0)) { 1 } else if lt(x, I(0)) { -1 } else { 0 }))
    },
    "maximum_of_two" => |a| Ok(max_of(&[num(&a[0])?, num(&a[1])?])?.value()),
    "minimum_of_two" => |a| Ok(min_of(&[num(&a[0])?, num(&a[1])?])?.value()),
    "clamp" => |a| {
        let (x, lower, upper) = (num(&a[0])?, num(&a[1])?, num(&a[2])?);
        Ok(max_of(&[lower, min_of(&[x, upper])?])?.value())
    },
    "is_even" => |a| Ok(Value::Bool(floor_mod(int(&a[0])?, 2)? == 0)),
}
