"""Exact symbolic expansion of the corrected cone metric near the divisor.

Expressions are finite sums of terms

    c(t, t') * |z|^(p0 + p1 t + p2 t') * z^q * zbar^r * tag

where ``t`` stands for the cone angle, ``t'`` for the correction exponent,
``z`` is the cone coordinate ``z_1`` and ``c`` is a Laurent polynomial with
rational coefficients. The tag is a product of Kronecker deltas ``D[a]``
(meaning ``delta_{1a}``) and derivative atoms such as ``K[a,c|b]`` (meaning
``K_{,a bbar c}``). ``K = a^t`` and ``M = a^t'`` are powers of the line-bundle
weight and ``Phi0`` is the potential of the smooth background metric.

Index labels are strings: ``"1"`` is the cone direction, other digits are
smooth directions and letters are free indices. Exponents and coefficients are
exact, so cancellations are decided in rational arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product as iproduct
from typing import Iterable, Mapping

import sympy

MAX_TAG_ORDER = 4
CONE = "1"


# ---------------------------------------------------------------------------
# coefficients


class LPoly:
    """Laurent polynomial in ``(t, t')`` with ``Fraction`` coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[tuple, Fraction] | None = None):
        self.terms = {k: Fraction(v) for k, v in (terms or {}).items() if v != 0}

    @classmethod
    def const(cls, c) -> "LPoly":
        return cls({(0, 0): Fraction(c)})

    @classmethod
    def t(cls) -> "LPoly":
        return cls({(1, 0): Fraction(1)})

    @classmethod
    def tp(cls) -> "LPoly":
        return cls({(0, 1): Fraction(1)})

    @classmethod
    def affine(cls, p) -> "LPoly":
        p0, p1, p2 = p
        return cls({(0, 0): Fraction(p0), (1, 0): Fraction(p1), (0, 1): Fraction(p2)})

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other):
        if not isinstance(other, LPoly):
            other = LPoly.const(other)
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __add__(self, other):
        if not isinstance(other, LPoly):
            other = LPoly.const(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return LPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return LPoly({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, LPoly) else LPoly.const(-Fraction(other)))

    def __mul__(self, other):
        if not isinstance(other, LPoly):
            return LPoly({k: v * Fraction(other) for k, v in self.terms.items()})
        out: dict = {}
        for (i1, j1), a in self.terms.items():
            for (i2, j2), b in other.terms.items():
                k = (i1 + i2, j1 + j2)
                out[k] = out.get(k, 0) + a * b
        return LPoly(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = LPoly.const(1)
        for _ in range(n):
            out = out * self
        return out

    def inverse_monomial(self) -> "LPoly":
        """Inverse of a single-monomial polynomial."""
        if len(self.terms) != 1:
            raise ValueError("only monomials are invertible")
        ((i, j), c), = self.terms.items()
        return LPoly({(-i, -j): 1 / c})

    def evaluate(self, t, tp):
        return sum(c * t ** i * tp ** j for (i, j), c in self.terms.items())

    def evaluate_float(self, t: float, tp: float) -> float:
        return sum(float(c) * t ** i * tp ** j for (i, j), c in self.terms.items())

    def to_sympy(self):
        t, tp = sympy.symbols("t tp")
        return sum((sympy.Rational(c.numerator, c.denominator) * t ** i * tp ** j
                    for (i, j), c in self.terms.items()), sympy.Integer(0))

    def sort_key(self):
        return tuple(sorted((k, c) for k, c in self.terms.items()))

    def __str__(self):
        return format_lpoly(self)

    __repr__ = __str__


def _monomial_str(i: int, j: int) -> list:
    parts = []
    if i:
        parts.append("t" if i == 1 else f"t^{i}")
    if j:
        parts.append("t'" if j == 1 else f"t'^{j}")
    return parts


def format_lpoly(poly: LPoly) -> str:
    if poly.is_zero():
        return "0"
    keys = sorted(poly.terms, key=lambda k: (k[0] + k[1], k[1], k[0]))
    out = []
    for n, k in enumerate(keys):
        c = poly.terms[k]
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        mono = _monomial_str(*k)
        if mag == 1 and mono:
            body = "*".join(mono)
        else:
            body = "*".join([str(mag)] + mono)
        if n == 0:
            out.append(("-" if sign == "-" else "") + body)
        else:
            out.append(f" {sign} {body}")
    return "".join(out)


_MONO_RE = re.compile(r"^(?:(\d+(?:/\d+)?))?\*?(.*)$")


def parse_lpoly(text: str) -> LPoly:
    text = text.strip()
    if text == "0":
        return LPoly()
    tokens = re.split(r"\s+([+-])\s+", text)
    signs = ["+"]
    first = tokens[0]
    if first.startswith("-"):
        signs = ["-"]
        first = first[1:]
    bodies = [first]
    for k in range(1, len(tokens), 2):
        signs.append(tokens[k])
        bodies.append(tokens[k + 1])
    out: dict = {}
    for s, body in zip(signs, bodies):
        c = Fraction(1)
        i = j = 0
        for factor in body.split("*"):
            factor = factor.strip()
            if not factor:
                continue
            if factor[0].isdigit():
                c *= Fraction(factor)
            elif factor.startswith("t'"):
                j += int(factor[3:]) if factor.startswith("t'^") else 1
            elif factor.startswith("t"):
                i += int(factor[2:]) if factor.startswith("t^") else 1
            else:
                raise ValueError(f"cannot parse coefficient factor {factor!r}")
        out[(i, j)] = out.get((i, j), 0) + (c if s == "+" else -c)
    return LPoly(out)


# ---------------------------------------------------------------------------
# tags


@dataclass(frozen=True, order=True)
class Atom:
    """``base`` differentiated along ``holo`` and ``anti`` index labels."""

    base: str
    holo: tuple = ()
    anti: tuple = ()

    @property
    def order(self) -> int:
        return len(self.holo) + len(self.anti)

    def bump(self, label: str, holomorphic: bool) -> "Atom":
        if self.order + 1 > MAX_TAG_ORDER:
            raise ValueError(f"derivative order above {MAX_TAG_ORDER} on {self}")
        if holomorphic:
            return Atom(self.base, tuple(sorted(self.holo + (label,))), self.anti)
        return Atom(self.base, self.holo, tuple(sorted(self.anti + (label,))))

    def relabel(self, mapping: Mapping[str, str]) -> "Atom":
        return Atom(self.base,
                    tuple(sorted(mapping.get(x, x) for x in self.holo)),
                    tuple(sorted(mapping.get(x, x) for x in self.anti)))

    def __str__(self):
        return f"{self.base}[{','.join(self.holo)}|{','.join(self.anti)}]"


@dataclass(frozen=True, order=True)
class Tag:
    deltas: tuple = ()
    atoms: tuple = ()

    def __mul__(self, other: "Tag") -> "Tag":
        return Tag(tuple(sorted(set(self.deltas) | set(other.deltas))),
                   tuple(sorted(self.atoms + other.atoms)))

    def with_delta(self, label: str) -> "Tag":
        if label == CONE or label in self.deltas:
            return self
        return Tag(tuple(sorted(self.deltas + (label,))), self.atoms)

    def replace_atom(self, k: int, atom: Atom | None) -> "Tag":
        atoms = list(self.atoms)
        if atom is None:
            del atoms[k]
        else:
            atoms[k] = atom
        return Tag(self.deltas, tuple(sorted(atoms)))

    def __str__(self):
        parts = [f"D[{d}]" for d in self.deltas] + [str(a) for a in self.atoms]
        return "*".join(parts) if parts else "1"


NO_TAG = Tag()


def atom_tag(base: str, holo=(), anti=()) -> Tag:
    return Tag((), (Atom(base, tuple(sorted(holo)), tuple(sorted(anti))),))


_ATOM_RE = re.compile(r"^([A-Za-z0-9_]+)\[([^|\]]*)\|([^\]]*)\]$")


def parse_tag(text: str) -> Tag:
    text = text.strip()
    if text == "1":
        return NO_TAG
    deltas, atoms = [], []
    for part in text.split("*"):
        part = part.strip()
        if part.startswith("D[") and part.endswith("]"):
            deltas.append(part[2:-1])
            continue
        m = _ATOM_RE.match(part)
        if not m:
            raise ValueError(f"cannot parse tag factor {part!r}")
        holo = tuple(x for x in m.group(2).split(",") if x)
        anti = tuple(x for x in m.group(3).split(",") if x)
        atoms.append(Atom(m.group(1), tuple(sorted(holo)), tuple(sorted(anti))))
    return Tag(tuple(sorted(set(deltas))), tuple(sorted(atoms)))


# ---------------------------------------------------------------------------
# terms and expressions


@dataclass(frozen=True)
class SymTerm:
    coef: LPoly
    p: tuple = (0, 0, 0)
    q: int = 0
    r: int = 0
    tag: Tag = NO_TAG

    def key(self):
        return (self.p, self.q, self.r, self.tag)

    def canonical(self) -> "SymTerm":
        k = min(self.q, self.r)
        if k == 0:
            return self
        p0, p1, p2 = self.p
        return SymTerm(self.coef, (p0 + 2 * k, p1, p2), self.q - k, self.r - k, self.tag)

    def __mul__(self, other: "SymTerm") -> "SymTerm":
        p = tuple(a + b for a, b in zip(self.p, other.p))
        return SymTerm(self.coef * other.coef, p, self.q + other.q, self.r + other.r,
                       self.tag * other.tag).canonical()

    def __str__(self):
        p0, p1, p2 = self.p

        def s(x):
            return f"+ {x}" if x >= 0 else f"- {-x}"

        return (f"({format_lpoly(self.coef)}) * |z|^({p0} {s(p1)}*t {s(p2)}*t') "
                f"* z^{self.q} * zbar^{self.r} * {self.tag}")


_TERM_RE = re.compile(
    r"^\((.*)\) \* \|z\|\^\((-?\d+) ([+-]) (\d+)\*t ([+-]) (\d+)\*t'\) "
    r"\* z\^(\d+) \* zbar\^(\d+) \* (.+)$"
)


def parse_term(line: str) -> SymTerm:
    m = _TERM_RE.match(line.strip())
    if not m:
        raise ValueError(f"cannot parse term {line!r}")
    p1 = int(m.group(4)) * (1 if m.group(3) == "+" else -1)
    p2 = int(m.group(6)) * (1 if m.group(5) == "+" else -1)
    return SymTerm(parse_lpoly(m.group(1)), (int(m.group(2)), p1, p2),
                   int(m.group(7)), int(m.group(8)), parse_tag(m.group(9))).canonical()


class SymExpr:
    """Canonical sum of ``SymTerm`` objects.

    Terms with equal ``(p, q, r, tag)`` are merged and zero terms dropped;
    the stored order is sorted by ``(p0, p1, p2, q, r, tag)``.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[SymTerm] = ()):
        acc: dict = {}
        for t in terms:
            t = t.canonical()
            k = t.key()
            acc[k] = acc[k] + t.coef if k in acc else t.coef
        self.terms = tuple(
            SymTerm(c, *k) for k, c in sorted(acc.items(), key=lambda kv: kv[0]) if not c.is_zero()
        )

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        return isinstance(other, SymExpr) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __add__(self, other: "SymExpr") -> "SymExpr":
        return SymExpr(self.terms + other.terms)

    def __neg__(self) -> "SymExpr":
        return SymExpr(SymTerm(-t.coef, t.p, t.q, t.r, t.tag) for t in self.terms)

    def __sub__(self, other: "SymExpr") -> "SymExpr":
        return self + (-other)

    def __mul__(self, other) -> "SymExpr":
        if isinstance(other, SymExpr):
            return SymExpr(a * b for a in self.terms for b in other.terms)
        c = other if isinstance(other, LPoly) else LPoly.const(other)
        return SymExpr(SymTerm(t.coef * c, t.p, t.q, t.r, t.tag) for t in self.terms)

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not self.terms

    def to_text(self) -> str:
        return "".join(str(t) + "\n" for t in self.terms)

    @classmethod
    def from_text(cls, text: str) -> "SymExpr":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        return cls(parse_term(ln) for ln in lines)

    def __str__(self):
        return self.to_text() or "0\n"

    __repr__ = __str__

    def exponents(self) -> list:
        return sorted({t.p for t in self.terms})

    def coefficient_at(self, p, q: int = 0, r: int = 0, tag: Tag = NO_TAG) -> LPoly:
        for t in self.terms:
            if t.p == tuple(p) and t.q == q and t.r == r and t.tag == tag:
                return t.coef
        return LPoly()

    def terms_at(self, p) -> "SymExpr":
        return SymExpr(t for t in self.terms if t.p == tuple(p))

    def shift(self, dp) -> "SymExpr":
        return SymExpr(SymTerm(t.coef, tuple(a + b for a, b in zip(t.p, dp)), t.q, t.r, t.tag)
                       for t in self.terms)


def canonicalize(expr: SymExpr) -> SymExpr:
    return SymExpr(expr.terms)


def monomial(coef, p=(0, 0, 0), q: int = 0, r: int = 0, tag: Tag = NO_TAG) -> SymExpr:
    c = coef if isinstance(coef, LPoly) else LPoly.const(coef)
    return SymExpr([SymTerm(c, tuple(p), q, r, tag)])


# ---------------------------------------------------------------------------
# operations


def sym_potential(correction_sign: int = -1) -> SymExpr:
    """``K |z|^(2t) + sign * M |z|^(2t')`` (the corrected cone potential)."""
    return SymExpr([
        SymTerm(LPoly.const(1), (0, 2, 0), tag=atom_tag("K")),
        SymTerm(LPoly.const(correction_sign), (0, 0, 2), tag=atom_tag("M")),
    ])


def background_metric(alpha: str, beta: str) -> SymExpr:
    return monomial(1, tag=atom_tag("Phi0", (alpha,), (beta,)))


def _d_term(t: SymTerm, label: str, holomorphic: bool) -> list:
    out = []
    for k, atom in enumerate(t.tag.atoms):
        out.append(SymTerm(t.coef, t.p, t.q, t.r, t.tag.replace_atom(k, atom.bump(label, holomorphic))))
    if label == CONE or label.isalpha():
        tag = t.tag.with_delta(label)
        p0, p1, p2 = t.p
        half_p = LPoly.affine(t.p) * Fraction(1, 2)
        if holomorphic:
            if not half_p.is_zero():
                out.append(SymTerm(t.coef * half_p, (p0 - 2, p1, p2), t.q, t.r + 1, tag))
            if t.q:
                out.append(SymTerm(t.coef * t.q, t.p, t.q - 1, t.r, tag))
        else:
            if not half_p.is_zero():
                out.append(SymTerm(t.coef * half_p, (p0 - 2, p1, p2), t.q + 1, t.r, tag))
            if t.r:
                out.append(SymTerm(t.coef * t.r, t.p, t.q, t.r - 1, tag))
    return out


def sym_d(expr: SymExpr, label: str, holomorphic: bool = True) -> SymExpr:
    """Wirtinger derivative along ``z_label`` (or ``zbar_label``)."""
    return SymExpr(s for t in expr.terms for s in _d_term(t, label, holomorphic))


def sym_ddbar(expr: SymExpr, index_pair: tuple) -> SymExpr:
    """``d_alpha dbar_beta`` of ``expr`` for ``index_pair = (alpha, beta)``."""
    alpha, beta = index_pair
    return sym_d(sym_d(expr, beta, holomorphic=False), alpha, holomorphic=True)


def specialize(expr: SymExpr, mapping: Mapping[str, str]) -> SymExpr:
    """Replace free index labels by concrete ones, evaluating the deltas."""
    out = []
    for t in expr.terms:
        deltas = []
        dead = False
        for d in t.tag.deltas:
            v = mapping.get(d, d)
            if v == CONE:
                continue
            if v.isalpha():
                deltas.append(v)
            else:
                dead = True
                break
        if dead:
            continue
        atoms = tuple(sorted(a.relabel(mapping) for a in t.tag.atoms))
        out.append(SymTerm(t.coef, t.p, t.q, t.r, Tag(tuple(sorted(set(deltas))), atoms)))
    return SymExpr(out)


def sym_adapted_evaluate(expr: SymExpr) -> SymExpr:
    """Evaluate at a point where the weight is normalized.

    There ``K = M = 1``, their first derivatives vanish and so do their
    holomorphic-holomorphic and antiholomorphic-antiholomorphic second
    derivatives. Mixed second and higher derivatives stay symbolic, as do
    all derivatives of ``Phi0``.
    """
    out = []
    for t in expr.terms:
        atoms = []
        keep = True
        for a in t.tag.atoms:
            if a.base not in ("K", "M"):
                atoms.append(a)
            elif a.order == 0:
                continue
            elif a.order == 1 or (a.order == 2 and (not a.holo or not a.anti)):
                keep = False
                break
            else:
                atoms.append(a)
        if keep:
            out.append(SymTerm(t.coef, t.p, t.q, t.r, Tag(t.tag.deltas, tuple(sorted(atoms)))))
    return SymExpr(out)


def substitute(expr: SymExpr, values: Mapping[str, Fraction | int]) -> SymExpr:
    """Replace atoms (by their string form, e.g. ``"Phi0[1|1]"``) with rationals.

    Atoms absent from ``values`` stay symbolic. Bare ``K``/``M`` may be given
    as ``"K"``/``"M"``.
    """
    vals = {}
    for k, v in values.items():
        vals[str(parse_tag(k + "[|]").atoms[0]) if "[" not in k else k] = Fraction(v)
    out = []
    for t in expr.terms:
        c = t.coef
        atoms = []
        for a in t.tag.atoms:
            s = str(a)
            if s in vals:
                c = c * vals[s]
            else:
                atoms.append(a)
        out.append(SymTerm(c, t.p, t.q, t.r, Tag(t.tag.deltas, tuple(atoms))))
    return SymExpr(out)


# ---------------------------------------------------------------------------
# metric, inverse, curvature


def sym_metric(alpha: str = "a", beta: str = "b", correction_sign: int = -1) -> SymExpr:
    """Full (unadapted) metric component ``g_{alpha betabar}``."""
    return background_metric(alpha, beta) + sym_ddbar(sym_potential(correction_sign), (alpha, beta))


def sym_metric_derivative(holo: Iterable[str] = (), anti: Iterable[str] = (),
                          alpha: str = "a", beta: str = "b", correction_sign: int = -1) -> SymExpr:
    e = sym_metric(alpha, beta, correction_sign)
    for lab in holo:
        e = sym_d(e, lab, True)
    for lab in anti:
        e = sym_d(e, lab, False)
    return e


class DominationError(ValueError):
    """The leading metric term does not dominate the remainder near the divisor."""


_TRIANGLE = ((0, 0), (0, 1), (1, 1))


def positive_on_triangle(p) -> bool:
    """Affine ``p0 + p1 t + p2 t'`` is positive on ``0 < t < t' < 1``."""
    vals = [p[0] + p[1] * a + p[2] * b for a, b in _TRIANGLE]
    return min(vals) >= 0 and max(vals) > 0


def sym_inverse_11(metric_terms: SymExpr, order: int = 1,
                   tau: float | None = None, tau_prime: float | None = None) -> SymExpr:
    """Geometric-series expansion of ``1 / g_{1 1bar}`` about its dominant term.

    The dominant term is the tag-free ``t^2 |z|^(2t - 2)``. Every other term
    must be of strictly higher order in ``|z|`` on the whole parameter
    region, and additionally at ``(tau, tau_prime)`` when these are given.

    Raises
    ------
    DominationError
        If some term is not dominated (for example ``tau_prime <= tau``).
    """
    if tau is not None and tau_prime is not None and tau_prime <= tau:
        raise DominationError(f"need tau < tau_prime, got {tau} and {tau_prime}")
    lead_p = (-2, 2, 0)
    lead = metric_terms.coefficient_at(lead_p)
    if lead.is_zero() or len(lead.terms) != 1:
        raise DominationError("no monomial leading term t^2 |z|^(2t-2) present")
    inv_lead = lead.inverse_monomial()
    rel = []
    for t in metric_terms.terms:
        if t.key() == (lead_p, 0, 0, NO_TAG):
            continue
        dp = (t.p[0] - lead_p[0] + t.q + t.r, t.p[1] - lead_p[1], t.p[2] - lead_p[2])
        ok = positive_on_triangle(dp)
        if tau is not None and tau_prime is not None:
            ok = ok and dp[0] + dp[1] * tau + dp[2] * tau_prime > 0
        if not ok:
            raise DominationError(f"term {t} is not dominated by the leading term")
        rel.append(SymTerm(-t.coef * inv_lead, (t.p[0] - lead_p[0], t.p[1] - lead_p[1],
                                                 t.p[2] - lead_p[2]), t.q, t.r, t.tag))
    x = SymExpr(rel)
    series = monomial(1)
    power = monomial(1)
    for _ in range(order):
        power = power * x
        series = series + power
    return monomial(inv_lead, (2, -2, 0)) * series


@lru_cache(maxsize=None)
def cone_metric_derivatives(correction_sign: int = -1, adapted: bool = True):
    """``(g, d g, dbar g, d dbar g)`` of ``g_{1 1bar}``, optionally at an adapted point."""
    g = sym_metric(CONE, CONE, correction_sign)
    g1 = sym_d(g, CONE, True)
    g1b = sym_d(g, CONE, False)
    g11 = sym_d(g1, CONE, False)
    out = (g, g1, g1b, g11)
    return tuple(sym_adapted_evaluate(e) for e in out) if adapted else out


def sym_curvature_1111(correction_sign: int = -1, order: int = 2, normalized: bool = True) -> SymExpr:
    """``R_{1 1bar 1 1bar}`` at an adapted point, cone direction only.

    Uses ``R = -g_{11bar,11bar} + g^{11bar} g_{11bar,1} g_{11bar,1bar}`` with the
    inverse truncated at ``order``. With ``normalized`` each pair of unit
    vectors contributes ``|z|^(2 - 2t)``, i.e. exponents are shifted by
    ``4 - 4t`` and coefficients left unchanged.
    """
    g, g1, g1b, g11 = cone_metric_derivatives(correction_sign)
    inv = sym_inverse_11(g, order)
    R = -g11 + inv * g1 * g1b
    return R.shift((4, -4, 0)) if normalized else R


def sym_curvature_1111_exact(correction_sign: int = -1):
    """Untruncated curvature as ``(numerator, denominator)`` with ``R = N / g_{11bar}``.

    The weight is left unadapted so that ``K``, ``M`` and their derivatives
    can be given arbitrary values afterwards.
    """
    g, g1, g1b, g11 = cone_metric_derivatives(correction_sign, adapted=False)
    return (-g11) * g + g1 * g1b, g


def curvature_contributions(correction_sign: int = -1, order: int = 2) -> dict:
    """The two pieces of the curvature before they are summed."""
    g, g1, g1b, g11 = cone_metric_derivatives(correction_sign)
    inv = sym_inverse_11(g, order)
    return {"second_derivative": (-g11).shift((4, -4, 0)),
            "inverse_product": (inv * g1 * g1b).shift((4, -4, 0))}


WORST_EXPONENT = (0, -2, 0)          # -2t after normalization
NEXT_EXPONENT = (0, -4, 2)           # 2t' - 4t after normalization


def leading_exponent(expr: SymExpr):
    """The exponent below or equal to all others on the parameter region."""
    exps = expr.exponents()
    for e in exps:
        if all(positive_on_triangle(tuple(b - a for a, b in zip(e, f))) or f == e for f in exps):
            return e
    raise ValueError("no exponent dominates on the whole region")


def verify_cancellation(correction_sign: int = -1, order: int = 2) -> dict:
    """Check that the most singular curvature term cancels exactly."""
    R = sym_curvature_1111(correction_sign, order)
    parts = curvature_contributions(correction_sign, order)
    coef = R.coefficient_at(WORST_EXPONENT)
    return {
        "exponent": WORST_EXPONENT,
        "cancellation_coefficient": format_lpoly(coef),
        "contributions": [format_lpoly(parts[k].coefficient_at(WORST_EXPONENT))
                          for k in ("second_derivative", "inverse_product")],
        "terms_at_exponent": len(R.terms_at(WORST_EXPONENT)),
        "passed": coef.is_zero() and R.terms_at(WORST_EXPONENT).is_zero(),
    }


def _orient(poly):
    """Fix the sign of a factor so that its leading coefficient in ``tp`` is positive."""
    t, tp = sympy.symbols("t tp")
    P = sympy.Poly(poly, tp, t)
    return (-poly, -1) if P.LC() < 0 else (poly, 1)


def _format_factor(f) -> str:
    t, tp = sympy.symbols("t tp")
    P = sympy.Poly(f, tp, t)
    parts = []
    for (j, i), c in sorted(P.terms(), key=lambda kv: (-kv[0][0], -kv[0][1])):
        mono = "*".join(_monomial_str(i, j))
        mag = abs(c)
        body = mono if (mag == 1 and mono) else "*".join(x for x in (str(mag), mono) if x)
        sign = "-" if c < 0 else "+"
        parts.append((sign, body))
    s = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for sign, body in parts[1:]:
        s += f"{sign}{body}"
    return s


def factor_string(poly: LPoly) -> tuple:
    """Factored form as ``(string, sign_constant, factors)``; factors are sympy exprs."""
    expr = poly.to_sympy()
    const, facs = sympy.factor_list(sympy.together(expr))
    out = []
    for f, m in facs:
        g, s = _orient(f)
        if m % 2:
            const *= s
        out.append((g, m))
    # monomial factors first, then by degree
    out.sort(key=lambda fm: (len(sympy.Add.make_args(fm[0])) > 1,
                             sympy.Poly(fm[0], *sympy.symbols("tp t")).total_degree(), str(fm[0])))
    pieces = []
    for f, m in out:
        body = _format_factor(f)
        if len(sympy.Add.make_args(f)) > 1:
            body = f"({body})"
        pieces.append(body + (f"^{m}" if m > 1 else ""))
    if const != 1:
        pieces.insert(0, "-" if const == -1 else str(const))
    text = "*".join(pieces).replace("-*", "-")
    return text, const, out


def sign_on_region(poly: LPoly) -> int:
    """Sign of ``poly`` on ``0 < t < t' < 1`` from its factorization.

    Returns +1 or -1 when the sign is constant and nonzero on the open region,
    0 otherwise. Each factor is checked by vertex evaluation, which is exact
    for affine factors; other factors are accepted only when their expanded
    coefficients all share one sign (monomials are positive on the region).
    """
    _, const, factors = factor_string(poly)
    t, tp = sympy.symbols("t tp")
    sign = 1 if const > 0 else -1
    for f, m in factors:
        P = sympy.Poly(f, t, tp)
        if P.total_degree() <= 1:
            vals = [f.subs({t: a, tp: b}) for a, b in _TRIANGLE]
            if min(vals) >= 0 and max(vals) > 0:
                s = 1
            elif max(vals) <= 0 and min(vals) < 0:
                s = -1
            else:
                return 0
        else:
            coeffs = [c for c in P.coeffs()]
            if all(c > 0 for c in coeffs):
                s = 1
            elif all(c < 0 for c in coeffs):
                s = -1
            else:
                return 0
        sign *= s ** int(m)
    return sign


def verify_positivity(correction_sign: int = -1, order: int = 2) -> dict:
    """Leading surviving curvature coefficient, its factorization and sign."""
    R = sym_curvature_1111(correction_sign, order)
    exp = leading_exponent(R)
    lead = R.terms_at(exp)
    coef = lead.coefficient_at(exp)
    text, _, _ = factor_string(coef)
    sign = sign_on_region(coef)
    expected = correction_sign * -1
    return {
        "exponent": exp,
        "leading_coefficient": text,
        "expanded": format_lpoly(coef),
        "sign": sign,
        "tag_free": len(lead) == 1 and lead.terms[0].tag == NO_TAG,
        "passed": sign == expected and len(lead) == 1,
    }


# ---------------------------------------------------------------------------
# numerics


def atom_values_for_constant_weight(base_diag: float, c_coef: float, a_coef: float = 1.0) -> dict:
    """Tag values reproducing a constant weight with flat background ``base_diag``."""
    vals = {"K[|]": a_coef, "M[|]": c_coef, "Phi0[1|1]": base_diag}
    for n in range(1, MAX_TAG_ORDER + 1):
        for hol in range(n + 1):
            atom_h = ",".join([CONE] * hol)
            atom_a = ",".join([CONE] * (n - hol))
            for base in ("K", "M"):
                vals[f"{base}[{atom_h}|{atom_a}]"] = 0.0
            if n > 2:
                vals[f"Phi0[{atom_h}|{atom_a}]"] = 0.0
    return vals


def sym_eval_numeric(expr: SymExpr, tau: float, tau_prime: float, radius: float,
                     weight_bounds: Mapping[str, float] | None = None,
                     theta: float = 0.0) -> float:
    """Evaluate ``expr`` numerically at ``z_1 = radius * exp(i theta)``.

    ``weight_bounds`` maps atom strings (``"K[|]"``, ``"Phi0[1|1]"``, ...)
    to values. Free-index deltas are not allowed.
    """
    import cmath

    vals = dict(weight_bounds or {})
    z = cmath.rect(radius, theta)
    total = 0j
    for t in expr.terms:
        if t.tag.deltas:
            raise ValueError("specialize free indices before numeric evaluation")
        w = 1.0
        for a in t.tag.atoms:
            key = str(a)
            if key not in vals:
                raise KeyError(f"no value supplied for {key}")
            w *= vals[key]
        if w == 0:
            continue
        p = t.p[0] + t.p[1] * tau + t.p[2] * tau_prime
        total += t.coef.evaluate_float(tau, tau_prime) * radius ** p * z ** t.q * z.conjugate() ** t.r * w
    return total.real


def eval_exact_curvature(tau: float, tau_prime: float, radius: float,
                         weight_bounds: Mapping[str, float], correction_sign: int = -1,
                         normalized: bool = False) -> float:
    """``R_{11bar11bar}`` from the untruncated rational form.

    With ``normalized`` the value is divided by ``g_{11bar}^2`` (unit vectors).
    """
    num, den = sym_curvature_1111_exact(correction_sign)
    N = sym_eval_numeric(num, tau, tau_prime, radius, weight_bounds)
    g = sym_eval_numeric(den, tau, tau_prime, radius, weight_bounds)
    R = N / g
    return R / g ** 2 if normalized else R


# ---------------------------------------------------------------------------
# named expansions


def expansion(name: str) -> SymExpr:
    """Named expansions with free indices ``a, b, c, d`` (alpha, beta, gamma, delta)."""
    if name == "tilde-omega":
        return sym_metric("a", "b")
    if name == "tilde-omega-good-coord":
        return sym_adapted_evaluate(sym_metric("a", "b"))
    if name == "g-first-deriv":
        return sym_adapted_evaluate(sym_metric_derivative(holo=("c",)))
    if name == "g-first-deriv-bar":
        return sym_adapted_evaluate(sym_metric_derivative(anti=("d",)))
    if name == "g-second-deriv":
        return sym_adapted_evaluate(sym_metric_derivative(holo=("c",), anti=("d",)))
    if name == "g-inverse-expansion":
        return sym_inverse_11(sym_adapted_evaluate(sym_metric(CONE, CONE)), order=1)
    if name == "curvature-1111":
        return sym_curvature_1111()
    raise KeyError(f"unknown expansion {name!r}")


EXPANSION_NAMES = ("tilde-omega", "tilde-omega-good-coord", "g-first-deriv",
                   "g-first-deriv-bar", "g-second-deriv", "g-inverse-expansion",
                   "curvature-1111")


def expansion_diff(derived: SymExpr, printed: SymExpr) -> str:
    """Readable term diff: lines only in ``printed`` (-) and only in ``derived`` (+)."""
    d = {str(t) for t in derived}
    p = {str(t) for t in printed}
    lines = [f"- {s}" for s in sorted(p - d)] + [f"+ {s}" for s in sorted(d - p)]
    return "\n".join(lines) + ("\n" if lines else "")


def enumerate_specializations(labels=("a", "b", "c", "d"), values=("1", "2")):
    for combo in iproduct(values, repeat=len(labels)):
        yield dict(zip(labels, combo))
