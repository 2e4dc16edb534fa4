import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

from src.errors import OddValuation, PreconditionViolated, ZeroElement
from src.quadfield import (
    AlgebraicInteger,
    FieldSpec,
    IdealLattice,
    PrimeIdeal,
    find_generator,
    valuation,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalSqrtExtension:
    """局所二次拡大 K_𝔭(√λ)/K_𝔭"""

    field: FieldSpec
    prime: PrimeIdeal
    lam: AlgebraicInteger
    disc_valuation: int

    @classmethod
    def of(cls, K: FieldSpec, P: PrimeIdeal, lam: AlgebraicInteger) -> "LocalSqrtExtension":
        return cls(K, P, lam, sqrt_ext_disc_valuation(K, P, lam))

    @property
    def is_trivial_or_unramified(self) -> bool:
        return self.disc_valuation == 0

    @property
    def conductor_exponent(self) -> int:
        return conductor_exponent_potmult(self.disc_valuation)


@dataclass(frozen=True)
class TateStep3:
    """Tate のアルゴリズム第3段による 𝔭 指数の証明"""

    permutation: str  # "identity" | "swap_ab"
    exponent: int
    a6_valuation: int
    c4_valuation: int


@lru_cache(maxsize=64)
def _lattice_power(P: PrimeIdeal, k: int) -> IdealLattice:
    return P.lattice() ** k


@lru_cache(maxsize=64)
def _square_residues(P: PrimeIdeal, k: int) -> frozenset:
    """mod 𝔭^k の単数の平方全体"""
    L = _lattice_power(P, k)
    squares = set()
    for z in L.residues():
        if P.contains(z):
            continue
        s = L.reduce(z * z)
        squares.add((s.x, s.y))
    return frozenset(squares)


def _is_square_mod(P: PrimeIdeal, lam: AlgebraicInteger, k: int) -> bool:
    L = _lattice_power(P, k)
    r = L.reduce(lam)
    return (r.x, r.y) in _square_residues(P, k)


def max_square_level(K: FieldSpec, P: PrimeIdeal, lam: AlgebraicInteger) -> int:
    """λ ≡ x² mod 𝔭^k となる最大の k

    上限は 2e+1。𝔭^{2e+1} を法として平方なら 𝔭 進平方なので、2e+3 まで調べても値は変わらない。
    """
    if P.contains(lam):
        raise PreconditionViolated(f"λ={lam} は {P.label} の単数ではありません")
    top = 2 * P.e + 1
    level = 0
    for k in range(1, top + 1):
        if not _is_square_mod(P, lam, k):
            break
        level = k
    return level


def strip_square_part(P: PrimeIdeal, lam: AlgebraicInteger) -> AlgebraicInteger:
    """λ を 𝔭 の生成元の偶数冪で割り、𝔭 単数にする"""
    if not lam:
        raise ZeroElement()
    v = valuation(lam, P)
    if v % 2:
        raise OddValuation(v)
    if v == 0:
        return lam
    pi = find_generator(P)
    quotient = lam.div_exact(pi**v)
    if quotient is None:
        raise PreconditionViolated(f"{lam} が {pi}^{v} で割り切れません")
    return quotient


def sqrt_ext_disc_valuation(K: FieldSpec, P: PrimeIdeal, lam: AlgebraicInteger) -> int:
    """K_𝔭(√λ)/K_𝔭 の相対判別式の付値"""
    if P.residue_char != 2:
        raise PreconditionViolated(f"{P.label} は 2 の上の素イデアルではありません")
    unit = strip_square_part(P, lam)
    k = max_square_level(K, P, unit)
    if k >= 2 * P.e:
        n = 0
    else:
        n = 2 * P.e + 1 - k
    logger.debug(f"d={K.d} 𝔭={P.label} λ={lam}: 平方レベル {k}, 判別式付値 {n}")
    return n


def conductor_exponent_potmult(n: int) -> int:
    """潜在的乗法的還元での導手指数"""
    if n < 0:
        raise ValueError(f"判別式の付値は非負です: {n}")
    return 1 if n == 0 else 2 * n


def _local_inverse(P: PrimeIdeal, g: AlgebraicInteger, k: int) -> AlgebraicInteger:
    L = _lattice_power(P, k)
    target = L.reduce(g.field.one())
    for z in L.residues():
        if L.reduce(z * g) == target:
            return z
    raise PreconditionViolated(f"{g} は mod {P.label}^{k} で可逆ではありません")


def square_class_gamma(
    A: AlgebraicInteger, B: AlgebraicInteger, P: Optional[PrimeIdeal] = None
) -> AlgebraicInteger:
    """λ_E = (A²+AB+B²)(B-A)(A+B/2)(A+2B)、−c4·c6 = 2¹⁰·λ_E

    B/2 が整数でないときは P を指定すると mod 𝔭^{2e+1} で同じ平方類の元を返す。
    """
    half_b = B.div_int(2)
    if half_b is None:
        if P is None:
            raise PreconditionViolated(f"B={B} は 2 で割り切れません（𝔭 を指定してください）")
        e = P.e
        if valuation(B, P) <= e:
            raise PreconditionViolated(f"v_𝔭(B) が v_𝔭(2)={e} 以下です")
        pi = find_generator(P)
        cofactor = A.field.element(2).div_exact(pi**e)
        reduced = B.div_exact(pi**e)
        half_b = reduced * _local_inverse(P, cofactor, 2 * e + 1)
    return (A * A + A * B + B * B) * (B - A) * (A + half_b) * (A + 2 * B)


def translated_a6(
    A: AlgebraicInteger, B: AlgebraicInteger, C: AlgebraicInteger
) -> AlgebraicInteger:
    """X → X + C, Y → Y + 1 で平行移動したモデルの a6"""
    return C * C * C + (B - A) * C * C - A * B * C - 1


def tate_step3_permutation(
    A: AlgebraicInteger, B: AlgebraicInteger, C: AlgebraicInteger, P: PrimeIdeal
) -> TateStep3:
    """2 が惰性かつ 2∤ABC のとき、𝔭² ∤ a6 となる並べ替えを選ぶ"""
    if P.residue_char != 2 or P.f != 2:
        raise PreconditionViolated(f"{P.label} は 2 の上の惰性素イデアルではありません")
    if A + B + C:
        raise PreconditionViolated("A + B + C ≠ 0 です")
    for name, value in (("A", A), ("B", B), ("C", C)):
        if P.contains(value):
            raise PreconditionViolated(f"{name}={value} が 𝔭 で割り切れます")

    c4 = 16 * (A * A + A * B + B * B)
    c4_valuation = valuation(c4, P)

    candidates: Tuple[Tuple[str, AlgebraicInteger], ...] = (
        ("identity", translated_a6(A, B, C)),
        ("swap_ab", translated_a6(B, A, C)),
    )
    for permutation, a6 in candidates:
        v = valuation(a6, P) if a6 else None
        if v is not None and v < 2:
            logger.debug(f"Tate 第3段: {permutation}, v(a6)={v}, v(c4)={c4_valuation}")
            return TateStep3(permutation, 4, v, c4_valuation)
    raise PreconditionViolated("どの並べ替えでも 𝔭² | a6 となりました")
