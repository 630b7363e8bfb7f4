"""Sparse multivariate polynomials with float coefficients.

Monomials are exponent tuples; variables are positional. A polynomial is an
immutable mapping ``exponents -> coefficient`` kept in canonical form: terms
with ``|coef| < DROP_TOL`` are discarded on construction.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

DROP_TOL = 1e-12

Monomial = tuple[int, ...]


def grlex_key(m: Monomial) -> tuple:
    """Graded lexicographic sort key (x1 > x2 > ... within a degree)."""
    return (sum(m), tuple(-e for e in m))


def monomials_up_to(nvars: int, max_degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials with ``min_degree <= deg <= max_degree`` in grlex order."""
    out = []
    for d in range(min_degree, max_degree + 1):
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    out.sort(key=grlex_key)
    return out


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        self.nvars = int(nvars)
        clean: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                m = tuple(int(e) for e in m)
                if len(m) != self.nvars:
                    raise ValueError(f"monomial {m} has length {len(m)}, expected {self.nvars}")
                if any(e < 0 for e in m):
                    raise ValueError(f"negative exponent in {m}")
                c = float(c)
                if abs(c) >= DROP_TOL:
                    clean[m] = clean.get(m, 0.0) + c
        self._terms = {m: c for m, c in clean.items() if abs(c) >= DROP_TOL}
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def var(cls, nvars: int, index: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, m: Monomial, coef: float = 1.0) -> "Polynomial":
        return cls(len(m), {tuple(m): coef})

    @classmethod
    def from_coefficients(cls, monomials: Sequence[Monomial], coefs: Iterable[float]) -> "Polynomial":
        monomials = list(monomials)
        if not monomials:
            raise ValueError("need at least one monomial to infer nvars")
        terms: dict[Monomial, float] = {}
        for m, c in zip(monomials, coefs):
            terms[m] = terms.get(m, 0.0) + float(c)
        return cls(len(monomials[0]), terms)

    # -- basic queries ----------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def monomials(self) -> list[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def items(self) -> list[tuple[Monomial, float]]:
        return [(m, self._terms[m]) for m in self.monomials()]

    def coef(self, m: Monomial) -> float:
        return self._terms.get(tuple(m), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def min_degree(self) -> int:
        return min((sum(m) for m in self._terms), default=0)

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            k = float(other)
            return Polynomial(self.nvars, {m: k * c for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = mono_mul(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def __pow__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.nvars, 1.0)
        base = self
        n = int(n)
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    # -- comparison -------------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def max_abs_diff(self, other: "Polynomial") -> float:
        """Largest coefficient-wise absolute difference."""
        d = self - other
        return max((abs(c) for c in d._terms.values()), default=0.0)

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        return self.max_abs_diff(other) <= atol

    # -- calculus ---------------------------------------------------------
    def differentiate(self, var: int) -> "Polynomial":
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable index {var} out of range for {self.nvars} variables")
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            e = m[var]
            if e == 0:
                continue
            dm = m[:var] + (e - 1,) + m[var + 1:]
            out[dm] = out.get(dm, 0.0) + c * e
        return Polynomial(self.nvars, out)

    def gradient(self) -> list["Polynomial"]:
        return [self.differentiate(i) for i in range(self.nvars)]

    # -- evaluation -------------------------------------------------------
    def evaluate(self, point) -> float | np.ndarray:
        """Evaluate at one point (shape ``(nvars,)``) or many (``(N, nvars)``).

        Terms are summed in grlex order so results do not depend on dict
        insertion history.
        """
        x = np.asarray(point, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.nvars:
            raise ValueError(f"point has {x.shape[-1]} coordinates, expected {self.nvars}")
        total = np.zeros(x.shape[0])
        for m, c in self.items():
            term = np.full(x.shape[0], c)
            for i, e in enumerate(m):
                if e:
                    term = term * x[:, i] ** e
            total = total + term
        return float(total[0]) if single else total

    __call__ = evaluate

    def substitute(self, values: Mapping[int, float]) -> "Polynomial":
        """Fix some variables to numbers; the variable count is unchanged."""
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            e = list(m)
            for i, v in values.items():
                if e[i]:
                    c *= float(v) ** e[i]
                    e[i] = 0
            t = tuple(e)
            out[t] = out.get(t, 0.0) + c
        return Polynomial(self.nvars, out)

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Replace variable i by ``subs[i]`` (all sharing a common nvars)."""
        if len(subs) != self.nvars:
            raise ValueError(f"need {self.nvars} substitutions, got {len(subs)}")
        target = subs[0].nvars if subs else 0
        out = Polynomial.zero(target)
        cache: dict[tuple[int, int], Polynomial] = {}
        for m, c in self.items():
            term = Polynomial.constant(target, c)
            for i, e in enumerate(m):
                if e:
                    if (i, e) not in cache:
                        cache[(i, e)] = subs[i] ** e
                    term = term * cache[(i, e)]
            out = out + term
        return out

    def homogeneous_part(self, degree: int) -> "Polynomial":
        return Polynomial(self.nvars, {m: c for m, c in self._terms.items() if sum(m) == degree})

    # -- rendering --------------------------------------------------------
    def to_string(self, labels: Sequence[str] | None = None, fmt: str = ".6g") -> str:
        if labels is None:
            labels = [f"z{i + 1}" for i in range(self.nvars)]
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.items():
            factors = []
            for i, e in enumerate(m):
                if e == 1:
                    factors.append(labels[i])
                elif e > 1:
                    factors.append(f"{labels[i]}^{e}")
            mag = format(abs(c), fmt)
            body = "*".join(([mag] if (mag != "1" or not factors) else []) + factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    def __repr__(self):
        return f"Polynomial({self.to_string()})"

    def to_json(self) -> dict:
        return {
            "nvars": self.nvars,
            "terms": [[list(m), c] for m, c in self.items()],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Polynomial":
        return cls(int(data["nvars"]), {tuple(m): float(c) for m, c in data["terms"]})


def variables(nvars: int) -> list[Polynomial]:
    return [Polynomial.var(nvars, i) for i in range(nvars)]


def dot(a: Sequence[Polynomial], b: Sequence[Polynomial]) -> Polynomial:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty sequences")
    out = Polynomial.zero(a[0].nvars)
    for x, y in zip(a, b):
        out = out + x * y
    return out


def differentiate(p: Polynomial, var: int) -> Polynomial:
    return p.differentiate(var)


def lie_derivative(V: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """Derivative of V along the vector field f: sum_i dV/dz_i * f_i."""
    if len(f) != V.nvars:
        raise ValueError(f"vector field has {len(f)} components, V has {V.nvars} variables")
    out = Polynomial.zero(V.nvars)
    for i, fi in enumerate(f):
        if fi.nvars != V.nvars:
            raise ValueError("vector field component has wrong variable count")
        dv = V.differentiate(i)
        if not dv.is_zero() and not fi.is_zero():
            out = out + dv * fi
    return out


def evaluate(p: Polynomial, point) -> float | np.ndarray:
    return p.evaluate(point)


def squared_norm(nvars: int) -> Polynomial:
    """z^T z."""
    return Polynomial(nvars, {tuple(2 if k == i else 0 for k in range(nvars)): 1.0 for i in range(nvars)})
