import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from sympy import factorint, isprime, prevprime

from src.errors import (
    DegenerateTriple,
    NormalizationMissing,
    PreconditionViolated,
    UnsupportedField,
)
from src.local2 import (
    conductor_exponent_potmult,
    sqrt_ext_disc_valuation,
    square_class_gamma,
    tate_step3_permutation,
)
from src.quadfield import (
    AlgebraicInteger,
    FactoredIdeal,
    FieldSpec,
    PrimeIdeal,
    odd_primes_dividing,
    split_rational_prime,
    valuation,
)
from src.residue import (
    build_b_ideal,
    is_complete_system,
    orbit_discriminants,
    tabulated_representatives,
    unit_square_cokernel,
)

logger = logging.getLogger(__name__)

EVEN_ABC = "even_abc"
ODD_ABC = "odd_abc"
PARITY_CASES = (EVEN_ABC, ODD_ABC)

POLICIES = ("tabulated", "exhaustive", "minimal")

# 𝔭⁴𝔇 を避けるために a6 の追加仮定を置く体
A6_HYPOTHESIS_FIELDS = (-67,)
A6_HYPOTHESIS_FLAG = "a6_valuation_hypothesis"


@dataclass(frozen=True)
class SymbolicValuation:
    """p について一次式の付値 const + coeff_p·p"""

    const: int
    coeff_p: int = 0

    def at(self, p: int) -> int:
        return self.const + self.coeff_p * p

    def divisible_by_p(self, p: Optional[int] = None) -> bool:
        """p | const + coeff·p（p が未定なら const = 0 のときのみ真）"""
        if p is not None:
            return self.at(p) % p == 0
        return self.const == 0

    def __add__(self, other: "SymbolicValuation") -> "SymbolicValuation":
        return SymbolicValuation(self.const + other.const, self.coeff_p + other.coeff_p)

    def __str__(self) -> str:
        if self.coeff_p == 0:
            return str(self.const)
        if self.const == 0:
            return f"{self.coeff_p}p"
        sign = "+" if self.coeff_p > 0 else "-"
        return f"{self.const} {sign} {abs(self.coeff_p)}p"


@dataclass(frozen=True)
class FreySolution:
    """d^r·a^p + b^p + c^p = 0 の（仮想的な）解"""

    field: FieldSpec
    r: int
    parity_case: str
    p: Optional[int] = None
    a: Optional[AlgebraicInteger] = None
    b: Optional[AlgebraicInteger] = None
    c: Optional[AlgebraicInteger] = None
    coefficient: Optional[int] = None
    b_valuation_at_two: int = 1
    abc_support: Tuple[PrimeIdeal, ...] = ()
    normalized: bool = True

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"r は 1 以上です: {self.r}")
        if self.parity_case not in PARITY_CASES:
            raise ValueError(f"不明なパリティ: {self.parity_case}")
        if self.p is not None and (self.p < 3 or not isprime(self.p)):
            raise ValueError(f"p は奇素数です: {self.p}")

    def d_coefficient(self) -> int:
        return self.coefficient if self.coefficient is not None else self.field.d

    @property
    def is_concrete(self) -> bool:
        return self.p is not None and self.a is not None and self.b is not None

    def terms(self) -> Tuple[AlgebraicInteger, AlgebraicInteger, AlgebraicInteger]:
        """(A, B, C) = (d^r a^p, b^p, -A-B)"""
        if not self.is_concrete:
            raise PreconditionViolated("具体的な p, a, b が必要です")
        A = self.a**self.p * (self.d_coefficient() ** self.r)
        B = self.b**self.p
        C = -A - B
        if self.c is not None and self.c**self.p != C:
            raise PreconditionViolated("c^p ≠ -(d^r a^p + b^p) です")
        return A, B, C

    def with_unit(self, u: AlgebraicInteger) -> "FreySolution":
        """(a, b, c) を単数 u 倍した解"""
        if not self.is_concrete:
            raise PreconditionViolated("具体的な解が必要です")
        c = self.c * u if self.c is not None else None
        return FreySolution(
            self.field, self.r, self.parity_case, self.p, self.a * u, self.b * u, c,
            self.coefficient, self.b_valuation_at_two, self.abc_support, self.normalized,
        )  # fmt: skip


@dataclass(frozen=True)
class FreyInvariants:
    """Frey 曲線 y² = x(x - A)(x + B) の不変量"""

    Delta: AlgebraicInteger
    c4: AlgebraicInteger
    c6: AlgebraicInteger
    j: Tuple[AlgebraicInteger, AlgebraicInteger]

    def j_valuation(self, P: PrimeIdeal) -> int:
        if not self.c4:
            raise PreconditionViolated("j = 0 の付値は無限大です")
        return 3 * valuation(self.c4, P) - valuation(self.Delta, P)

    def check_identity(self) -> bool:
        return self.c4**3 - self.c6**2 == self.Delta * 1728


@dataclass(frozen=True)
class FreyModel:
    """平行移動前の Weierstrass モデル"""

    A: AlgebraicInteger
    B: AlgebraicInteger
    C: AlgebraicInteger
    a_invariants: Tuple[AlgebraicInteger, ...]
    invariants: FreyInvariants


@dataclass(frozen=True)
class ReductionType:
    prime: PrimeIdeal
    kind: str  # "good" | "multiplicative" | "additive"
    potential: str  # "good" | "multiplicative"
    conductor_exponent: int
    j_valuation: Optional[SymbolicValuation] = None
    exponent_options: Tuple[int, ...] = ()
    certificate: str = ""


@dataclass(frozen=True)
class LevelCandidate:
    """低下レベルの候補"""

    level: FactoredIdeal
    exponents: Tuple[int, ...]
    source: str
    hypotheses: Tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return self.level.key


def invariants(A: AlgebraicInteger, B: AlgebraicInteger) -> FreyInvariants:
    """A, B から Δ, c4, c6, j を計算"""
    C = -A - B
    if not A or not B or not C:
        raise DegenerateTriple(A, B)
    c4 = (A * A + A * B + B * B) * 16
    c6 = (B - A) * (A * 2 + B) * (A + B * 2) * (-32)
    ABC = A * B * C
    Delta = ABC * ABC * 16
    numerator, denominator = c4 * c4 * c4, Delta
    g = math.gcd(numerator.x, numerator.y, denominator.x, denominator.y)
    if g > 1:
        numerator, denominator = numerator.div_int(g), denominator.div_int(g)
    return FreyInvariants(Delta, c4, c6, (numerator, denominator))


def frey_model(sol: FreySolution) -> FreyModel:
    A, B, C = sol.terms()
    a1 = a3 = a6 = sol.field.element(0)
    a2, a4 = B - A, -(A * B)
    return FreyModel(A, B, C, (a1, a2, a3, a4, a6), invariants(A, B))


def _two_primes(K: FieldSpec) -> List[PrimeIdeal]:
    return split_rational_prime(K, 2)


def _coefficient_primes(K: FieldSpec, coefficient: int) -> List[PrimeIdeal]:
    return odd_primes_dividing(K, coefficient)


def validate_coefficient(K: FieldSpec, coefficient: Optional[int]) -> int:
    """係数 d（または l）が扱える形か確認して返す"""
    if coefficient is None:
        if K.d % 2 == 0:
            raise UnsupportedField(K.d, "d が偶数のときは --coefficient で奇素数 l を指定してください")
        return K.d
    if coefficient == K.d:
        return coefficient
    factors = factorint(abs(coefficient))
    if coefficient < 0 or len(factors) != 1 or 2 in factors or sum(factors.values()) != 1:
        raise UnsupportedField(K.d, f"係数 {coefficient} は奇素数ではありません")
    if K.discriminant % coefficient:
        raise UnsupportedField(K.d, f"係数 {coefficient} は K で分岐しません")
    return coefficient


def _check_parity(K: FieldSpec, parity_case: str) -> None:
    if parity_case not in PARITY_CASES:
        raise ValueError(f"不明なパリティ: {parity_case}")
    primes = _two_primes(K)
    if parity_case == ODD_ABC:
        if K.is_real or primes[0].split_type != "inert":
            raise UnsupportedField(K.d, "2∤abc は 2 が惰性な虚二次体でのみ扱えます")


def _exponent_vector(K: FieldSpec, lam: AlgebraicInteger) -> Tuple[int, ...]:
    return tuple(
        conductor_exponent_potmult(sqrt_ext_disc_valuation(K, P, lam)) for P in _two_primes(K)
    )


def _n_to_exponents(vector: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(conductor_exponent_potmult(n) for n in vector)


def two_adic_exponent_options(
    K: FieldSpec, policy: Optional[str] = None
) -> Tuple[List[Tuple[int, ...]], str]:
    """2 の上の素イデアルでの導手指数ベクトルの候補と、その出典"""
    policy = policy or os.getenv("TWO_ADIC_POLICY", "tabulated")
    if policy not in POLICIES:
        raise ValueError(f"不明なポリシー: {policy}（{', '.join(POLICIES)}）")
    cokernel = unit_square_cokernel(K, build_b_ideal(K))

    if policy == "tabulated":
        tabulated = tabulated_representatives(K)
        if tabulated is not None:
            source, reps = tabulated
            if is_complete_system(cokernel, reps):
                vectors = sorted({_exponent_vector(K, lam) for lam in reps})
                return vectors, source
            logger.warning(f"d={K.d} の表の代表元が完全代表系ではないため全列挙に切り替えます")
        policy = "exhaustive"

    orbits = orbit_discriminants(K, cokernel)
    if policy == "exhaustive":
        vectors = {_n_to_exponents(v) for attained in orbits.values() for v in attained}
    else:
        vectors = {
            _n_to_exponents(min(attained, key=lambda v: (sum(v), v)))
            for attained in orbits.values()
        }
    return sorted(vectors), policy


def two_adic_exponent(sol: FreySolution) -> Dict[PrimeIdeal, int]:
    """具体的なモデルの 2 の上での導手指数"""
    K = sol.field
    A, B, C = sol.terms()
    result = {}
    for P in _two_primes(K):
        if sol.parity_case == ODD_ABC:
            result[P] = tate_step3_permutation(A, B, C, P).exponent
            continue
        if not P.contains(B):
            raise NormalizationMissing(f"𝔭={P.label} が b を割るように正規化してください")
        lam = square_class_gamma(A, B, P)
        result[P] = conductor_exponent_potmult(sqrt_ext_disc_valuation(K, P, lam))
    return result


def discriminant_valuation(sol: FreySolution, P: PrimeIdeal) -> SymbolicValuation:
    """v_P(Δ) = 4v(2) + 2r·v(d) + 2p·v(abc)"""
    if sol.is_concrete:
        A, B, C = sol.terms()
        ABC = A * B * C
        return SymbolicValuation(valuation(ABC * ABC * 16, P))
    const = 4 * valuation(2, P) + 2 * sol.r * valuation(sol.d_coefficient(), P)
    if P.residue_char == 2 and sol.parity_case == EVEN_ABC:
        return SymbolicValuation(const, 2 * sol.b_valuation_at_two)
    return SymbolicValuation(const, 2 if P in sol.abc_support else 0)


def reduction_type(
    sol: FreySolution, P: PrimeIdeal, policy: Optional[str] = None
) -> ReductionType:
    """P での還元型と導手指数"""
    K = sol.field
    coefficient = sol.d_coefficient()
    if P.residue_char == 2:
        if sol.parity_case == EVEN_ABC:
            v2 = valuation(2, P)
            vb = sol.b_valuation_at_two
            if sol.is_concrete:
                vb = valuation(sol.b, P)
                if vb == 0:
                    raise NormalizationMissing(f"𝔭={P.label} ∤ b です")
            j_val = SymbolicValuation(8 * v2, -2 * vb)
            index = _two_primes(K).index(P)
            if sol.is_concrete:
                options = (two_adic_exponent(sol)[P],)
            else:
                vectors, _ = two_adic_exponent_options(K, policy)
                options = tuple(sorted({vec[index] for vec in vectors}))
            exponent = max(options)
            kind = "multiplicative" if exponent == 1 else "additive"
            return ReductionType(
                P, kind, "multiplicative", exponent, j_val, options,
                f"v_𝔭(j) = {j_val} < 0",
            )  # fmt: skip
        # 2∤abc かつ 2 が惰性：v(Δ)=4, v(c4) ≥ 5
        j_val = SymbolicValuation(11)
        return ReductionType(
            P, "additive", "good", 4, j_val, (4,), "v_𝔭(j) ≥ 11, Tate 第3段より指数 4"
        )
    if valuation(coefficient, P) > 0:
        v_delta = discriminant_valuation(sol, P)
        return ReductionType(
            P, "multiplicative", "multiplicative", 1, None, (1,),
            f"v(c4) = 0, v(Δ) = {v_delta}",
        )  # fmt: skip
    divides = False
    if sol.is_concrete:
        A, B, C = sol.terms()
        divides = P.contains(A * B * C)
    else:
        divides = P in sol.abc_support
    if divides:
        return ReductionType(
            P, "multiplicative", "multiplicative", 1, None, (1,),
            f"v(c4) = 0, v(Δ) = {discriminant_valuation(sol, P)}",
        )  # fmt: skip
    return ReductionType(P, "good", "good", 0, None, (0,), "𝔮 ∤ Δ")


def conductor(sol: FreySolution, policy: Optional[str] = None) -> FactoredIdeal:
    """N_E（2 の上の指数は候補の最大値、具体解なら実際の値）"""
    K = sol.field
    _check_parity(K, sol.parity_case)
    coefficient = validate_coefficient(K, sol.coefficient)
    if not sol.normalized:
        raise NormalizationMissing("𝔭 | b となるよう正規化された解が必要です")
    pairs = []
    for P in _two_primes(K):
        pairs.append((P, reduction_type(sol, P, policy).conductor_exponent))
    for P in _coefficient_primes(K, coefficient):
        pairs.append((P, 1))
    if sol.is_concrete:
        A, B, C = sol.terms()
        ABC = A * B * C
        for q in sorted(factorint(abs(ABC.norm()))):
            if q == 2 or coefficient % q == 0:
                continue
            pairs.extend((P, 1) for P in split_rational_prime(K, q) if P.contains(ABC))
    else:
        pairs.extend((P, 1) for P in sol.abc_support if P.residue_char != 2)
    return FactoredIdeal.of(K, *pairs)


def serre_conductor(
    sol: FreySolution, p_divides_r: Optional[bool] = None, policy: Optional[str] = None
) -> FactoredIdeal:
    """Kraus の処方による Serre 導手 N_p"""
    K = sol.field
    if p_divides_r is None:
        p_divides_r = sol.p is not None and sol.r % sol.p == 0
    N = conductor(sol, policy)
    pairs = []
    for P, e in N.factors:
        rt = reduction_type(sol, P, policy)
        if rt.kind != "multiplicative":
            pairs.append((P, e))
            continue
        if P.residue_char == 2:
            # v(Δ_min) = -v(j) = 2p·v(b) - 8v(2)、p ≥ 5 では p で割れない
            pairs.append((P, e))
            continue
        if valuation(sol.d_coefficient(), P) > 0:
            f_P = 1 if p_divides_r else 0
        else:
            f_P = 1
        if e - f_P:
            pairs.append((P, e - f_P))
    result = FactoredIdeal.of(K, *pairs)
    logger.debug(f"d={K.d} Serre 導手: {result}")
    return result


def potential_multiplicative_guard(K: FieldSpec) -> int:
    """4·max v_𝔭(2) 以下の最大の素数"""
    top = 4 * max(P.e for P in _two_primes(K))
    return prevprime(top + 1)


def lowered_level(
    K: FieldSpec,
    parity_case: str,
    coefficient: Optional[int] = None,
    p_divides_r: bool = False,
    policy: Optional[str] = None,
    a6_hypothesis: bool = False,
) -> List[LevelCandidate]:
    """低下レベルの候補一覧"""
    _check_parity(K, parity_case)
    coefficient = validate_coefficient(K, coefficient)
    odd_part = [] if p_divides_r else [(P, 1) for P in _coefficient_primes(K, coefficient)]
    two_primes = _two_primes(K)

    if K.is_real:
        vectors, source = two_adic_exponent_options(K, policy)
        candidates = []
        for vec in vectors:
            pairs = list(zip(two_primes, vec)) + odd_part
            candidates.append(LevelCandidate(FactoredIdeal.of(K, *pairs), vec, source))
        return candidates

    if two_primes[0].split_type != "inert":
        raise UnsupportedField(K.d, "虚二次体では 2 が惰性な場合のみ扱えます")
    P = two_primes[0]
    if parity_case == EVEN_ABC:
        vectors, _ = two_adic_exponent_options(K, policy)
        top = max(vec[0] for vec in vectors)
    else:
        top = 4
    hypotheses: Tuple[str, ...] = ()
    if a6_hypothesis:
        if K.d not in A6_HYPOTHESIS_FIELDS:
            raise UnsupportedField(K.d, "a6 の追加仮定は d=-67 でのみ使います")
        top -= 1
        hypotheses = (A6_HYPOTHESIS_FLAG,)
    return [
        LevelCandidate(FactoredIdeal.of(K, (P, i), *odd_part), (i,), "serre_range", hypotheses)
        for i in range(top + 1)
    ]
