"""Extended-real arithmetic and exact-number helpers shared by the solver modules."""
from fractions import Fraction
from functools import reduce
from math import gcd, isinf
import numbers

NEG_INF = float("-inf")
POS_INF = float("inf")

_SMALL_PRIMES = (2, 3, 5)


def is_exact(x):
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def is_neg_inf(x):
    return isinstance(x, float) and x == NEG_INF


def ext_add(a, b):
    """Sum with -inf absorbing (so -inf + inf = -inf)."""
    if is_neg_inf(a) or is_neg_inf(b):
        return NEG_INF
    return a + b


def weighted_sum(weights, values):
    """sum_j w_j v_j over extended reals; zero weights are skipped, -inf absorbs."""
    pos_inf = False
    total = 0
    for w, v in zip(weights, values):
        if w == 0:
            continue
        if isinstance(v, float) and isinf(v):
            if v < 0:
                return NEG_INF
            pos_inf = True
            continue
        total += w * v
    return POS_INF if pos_inf else total


def ext_expectation(weights, values):
    """E[X] = E[X+] - E[X-], with -inf when both parts are infinite."""
    pos = 0
    neg = 0
    pos_inf = neg_inf = False
    for w, v in zip(weights, values):
        if w == 0:
            continue
        if isinstance(v, float) and isinf(v):
            if v > 0:
                pos_inf = True
            else:
                neg_inf = True
        elif v >= 0:
            pos += w * v
        else:
            neg += w * (-v)
    if neg_inf:
        return NEG_INF
    if pos_inf:
        return POS_INF
    return pos - neg


def denominator(x):
    if isinstance(x, int):
        return 1
    if isinstance(x, Fraction):
        return x.denominator
    raise TypeError(f"not an exact number: {x!r}")


def lcm(values):
    return reduce(lambda a, b: a * b // gcd(a, b), values, 1)


def smooth_denominator(d):
    """True when d has no prime factors outside 2, 3, 5."""
    for p in _SMALL_PRIMES:
        while d % p == 0:
            d //= p
    return d == 1


def parse_number(text):
    """Parse a decimal or ratio string.

    Exact (Fraction/int) when the reduced denominator only has prime factors 2, 3, 5,
    float otherwise. ``"-inf"``/``"inf"`` map to the float infinities.
    """
    if isinstance(text, bool):
        raise ValueError(f"not a number: {text!r}")
    if isinstance(text, numbers.Integral):
        return int(text)
    if isinstance(text, Fraction):
        return text if text.denominator != 1 else int(text)
    if isinstance(text, float):
        if isinf(text):
            return text
        text = repr(text)
    if not isinstance(text, str):
        raise ValueError(f"not a number: {text!r}")
    s = text.strip().lower()
    if s in ("inf", "+inf", "infinity"):
        return POS_INF
    if s in ("-inf", "-infinity"):
        return NEG_INF
    try:
        q = Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc
    if not smooth_denominator(q.denominator):
        return float(q)
    return int(q) if q.denominator == 1 else q


def fmt_number(x):
    """Canonical text for a number: exact decimals where they terminate, else repr."""
    if isinstance(x, bool):
        raise TypeError("bool is not a number")
    if isinstance(x, float):
        if isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    if isinstance(x, int):
        return str(x)
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return str(x.numerator)
        d = x.denominator
        twos = fives = 0
        while d % 2 == 0:
            d //= 2
            twos += 1
        while d % 5 == 0:
            d //= 5
            fives += 1
        if d != 1:
            return f"{x.numerator}/{x.denominator}"
        digits = max(twos, fives)
        scaled = x * 10**digits
        sign = "-" if scaled < 0 else ""
        n = abs(scaled.numerator)
        whole, frac = divmod(n, 10**digits)
        return f"{sign}{whole}.{frac:0{digits}d}"
    return repr(x)
