import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

from sympy import QQ, Poly, Rational, Symbol, resultant
from sympy.parsing.sympy_parser import (
    convert_xor,
    implicit_multiplication_application,
    parse_expr,
    standard_transformations,
)

from src.errors import ReducibleDefiningPolynomial, SchemaMismatch

logger = logging.getLogger(__name__)

MAX_DEGREE = 24

x = Symbol("x")

_TRANSFORMATIONS = standard_transformations + (
    convert_xor,
    implicit_multiplication_application,
)


def _parse(text: str, variable: str) -> Poly:
    try:
        expr = parse_expr(text, local_dict={variable: x}, transformations=_TRANSFORMATIONS)
        return Poly(expr, x, domain=QQ)
    except Exception as e:
        raise SchemaMismatch(f"多項式 '{text}'", str(e))


@dataclass(frozen=True)
class EigenvalueField:
    """Hecke 固有値体 Q_f = Q[x]/(g)"""

    defining_poly: Poly
    variable: str = "x"

    @classmethod
    def from_string(cls, text: str, variable: str = "x") -> "EigenvalueField":
        return _eigenvalue_field(text.strip(), variable)

    @classmethod
    def rationals(cls) -> "EigenvalueField":
        return _eigenvalue_field("x - 1", "x")

    @property
    def degree(self) -> int:
        return self.defining_poly.degree()

    @property
    def is_rational(self) -> bool:
        return self.degree == 1

    def element(self, value: Union[int, str, Rational]) -> "FieldElement":
        """整数・有理数または LMFDB 形式の文字列 ("-e + 1") から元を作る"""
        if isinstance(value, str):
            poly = _parse(value, self.variable)
        else:
            poly = Poly(value, x, domain=QQ)
        return FieldElement(self, poly.rem(self.defining_poly))

    def zero(self) -> "FieldElement":
        return self.element(0)

    def __str__(self) -> str:
        return str(self.defining_poly.as_expr()).replace("**", "^")


@lru_cache(maxsize=512)
def _eigenvalue_field(text: str, variable: str) -> EigenvalueField:
    g = _parse(text, variable)
    if g.degree() < 1 or g.degree() > MAX_DEGREE:
        raise SchemaMismatch(f"定義多項式 '{text}'", f"次数 {g.degree()} は 1..{MAX_DEGREE} の範囲外です")
    if g.LC() != 1 or any(not c.is_integer for c in g.all_coeffs()):
        raise SchemaMismatch(f"定義多項式 '{text}'", "モニックな整数係数多項式ではありません")
    if not g.is_irreducible:
        raise ReducibleDefiningPolynomial(text)
    return EigenvalueField(g, variable)


@dataclass(frozen=True)
class FieldElement:
    """Q_f の元（根の冪基底での有理係数）"""

    field: EigenvalueField = field(repr=False)
    poly: Poly

    def _lift(self, other) -> "FieldElement":
        if isinstance(other, FieldElement):
            return other
        return self.field.element(other)

    def __add__(self, other) -> "FieldElement":
        return FieldElement(self.field, self.poly + self._lift(other).poly)

    __radd__ = __add__

    def __sub__(self, other) -> "FieldElement":
        return FieldElement(self.field, self.poly - self._lift(other).poly)

    def __rsub__(self, other) -> "FieldElement":
        return FieldElement(self.field, self._lift(other).poly - self.poly)

    def __neg__(self) -> "FieldElement":
        return FieldElement(self.field, -self.poly)

    def __mul__(self, other) -> "FieldElement":
        product = self.poly * self._lift(other).poly
        return FieldElement(self.field, product.rem(self.field.defining_poly))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldElement):
            other = self._lift(other)
        return self.poly.as_expr() == other.poly.as_expr()

    def __hash__(self) -> int:
        return hash(tuple(self.poly.all_coeffs()))

    def is_zero(self) -> bool:
        return self.poly.is_zero

    def is_rational(self) -> bool:
        return self.poly.degree() <= 0

    def as_rational(self) -> Rational:
        if not self.is_rational():
            raise ValueError(f"{self} は有理数ではありません")
        return Rational(self.poly.as_expr())

    def coordinates(self):
        """冪基底 1, x, ..., x^{n-1} での座標"""
        coeffs = list(reversed(self.poly.all_coeffs())) if not self.poly.is_zero else []
        return tuple(coeffs + [Rational(0)] * (self.field.degree - len(coeffs)))

    def __str__(self) -> str:
        text = str(self.poly.as_expr()).replace("**", "^")
        return text.replace("x", self.field.variable) if self.field.variable != "x" else text


def element_norm(F: EigenvalueField, e: FieldElement) -> Rational:
    """絶対ノルム N(e) = Res(g, h)（g はモニック）"""
    if e.is_zero():
        return Rational(0)
    if e.is_rational():
        return e.as_rational() ** F.degree
    g = F.defining_poly
    return Rational(resultant(g.as_expr(), e.poly.as_expr(), x))


def subtract_int(e: FieldElement, a: int) -> FieldElement:
    return e - a


def integral_norm(e: FieldElement) -> int:
    """代数的整数のノルム（整数でなければ SchemaMismatch）"""
    value = element_norm(e.field, e)
    if value.q != 1:
        raise SchemaMismatch(f"固有値 {e}", f"ノルム {value} が整数ではありません")
    return int(value)


def satisfies_hecke_bound(value: int, norm: int) -> bool:
    """有理固有値の Hecke 上界 |a| ≤ 2√N"""
    return value * value <= 4 * norm
