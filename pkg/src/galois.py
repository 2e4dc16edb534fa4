import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from sympy import Poly, factorint, isprime, prevprime, primerange, resultant, symbols

from src.errors import NonPrincipalPrime, UnsupportedCase, UnsupportedPrime
from src.frey import EVEN_ABC, two_adic_exponent_options
from src.quadfield import FactoredIdeal, FieldSpec, find_generator, split_rational_prime
from src.residue import ray_class_group

logger = logging.getLogger(__name__)

x = symbols("x")

# 二次体上の有理点がある体（d の集合）と出典
MODULAR_CURVE_EXCEPTIONS: Dict[int, Tuple[str, FrozenSet[int], str]] = {
    7: ("X0(28)", frozenset({-3, -7, -23}), "Bruin–Najman, hyperelliptic X0(n), quadratic points"),
    11: ("X0(44)", frozenset({-7}), "Özman–Siksek, quadratic points on X0(44)"),
    13: ("X0(52)", frozenset({-1, -3}), "Özman–Siksek, quadratic points on X0(52)"),
    17: ("X0(34)", frozenset({-1, -2, -15}), "Özman–Siksek, quadratic points on X0(34)"),
}

# ねじれ点の位数の上界
QUADRATIC_TORSION_BOUND = 13  # Kamienny
QUARTIC_TORSION_BOUND = 17  # Derickx–Kamienny–Stein–Stoll

REAL_FIELD_BOUND = 17
IMAGINARY_EVEN_BOUND = 17

# 2∤abc の虚二次体で使う x^m - c（Frobenius の 24 乗と Norm(𝔭)=4）
ODD_ABC_EXPONENT_POLY = (24, 4)

ASSUMPTION_CLASS_NUMBER_ONE = "class_number_one"
ASSUMPTION_P_SPLITS = "p_splits"
ASSUMPTION_P_3_MOD_4 = "p_3_mod_4"
ASSUMPTION_P_1_MOD_4 = "p_1_mod_4"
ASSUMPTION_LARSON = "larson_M_K"
ASSUMPTION_ORDER_FOUR_TWIST = "order_four_character_twist"


@dataclass(frozen=True)
class CharPolyCandidate:
    """Frobenius の特性多項式候補 x² + s·x + n"""

    s: int
    n: int
    supersingular: bool = False

    @property
    def coefficients(self) -> Tuple[int, int, int]:
        return 1, self.s, self.n

    def as_poly(self) -> Poly:
        return Poly(x**2 + self.s * x + self.n, x)

    def __str__(self) -> str:
        if self.s == 0:
            return f"x^2 + {self.n}"
        sign = "+" if self.s > 0 else "-"
        coeff = "" if abs(self.s) == 1 else str(abs(self.s))
        return f"x^2 {sign} {coeff}x + {self.n}"


@dataclass(frozen=True)
class ResultantRow:
    candidate: CharPolyCandidate
    value: int
    factorization: Dict[int, int]


@dataclass(frozen=True)
class ResultantBound:
    max_prime: int
    rows: Tuple[ResultantRow, ...]


@dataclass(frozen=True)
class MethodStep:
    criterion: str
    certificate: str
    citation: str = ""


@dataclass(frozen=True)
class IrreducibilityVerdict:
    """ρ̄_{E,p} の既約性の判定（p > p_threshold で既約）"""

    p_threshold: int
    effective_threshold: int
    certified_small: FrozenSet[int]
    method_trace: Tuple[MethodStep, ...]
    assumptions: Tuple[str, ...] = ()
    flags: Tuple[str, ...] = ()
    resultant: Optional[ResultantBound] = field(default=None, repr=False)

    def certifies(self, p: int) -> bool:
        if p > self.p_threshold:
            return True
        return p in self.certified_small


def modular_curve_obstruction(p: int, K: FieldSpec) -> bool:
    """X0(4p) などに K 有理点がないことで既約性が保証されるか"""
    if p not in MODULAR_CURVE_EXCEPTIONS:
        raise UnsupportedPrime(p)
    _, exceptions, _ = MODULAR_CURVE_EXCEPTIONS[p]
    return K.d not in exceptions


def frobenius_charpoly_candidates(
    n: int, residue_char: Optional[int] = None
) -> List[CharPolyCandidate]:
    """|根| ≤ √n となる x² + s·x + n の全候補"""
    if n < 2:
        raise ValueError(f"ノルムは 2 以上です: {n}")
    if residue_char is None:
        factors = factorint(n)
        residue_char = next(iter(factors)) if len(factors) == 1 else None
    bound = math.isqrt(4 * n)
    return [
        CharPolyCandidate(s, n, residue_char is not None and s % residue_char == 0)
        for s in range(-bound, bound + 1)
    ]


def _reduce_power(m: int, s: int, n: int) -> Tuple[int, int]:
    """x^m mod (x² + s·x + n) = u·x + v"""
    u, v = 0, 1
    bu, bv = 1, 0  # x
    while m:
        if m & 1:
            # (u x + v)(bu x + bv), x² = -s x - n
            uu = u * bu
            u, v = u * bv + v * bu - s * uu, v * bv - n * uu
        bb = bu * bu
        bu, bv = 2 * bu * bv - s * bb, bv * bv - n * bb
        m >>= 1
    return u, v


def resultant_by_roots(m: int, c: int, candidate: CharPolyCandidate) -> int:
    """Res(x^m - c, g) = Π_{g(ρ)=0} (ρ^m - c) を根の対称式で計算"""
    u, v = _reduce_power(m, candidate.s, candidate.n)
    w = v - c
    return w * w - candidate.s * u * w + candidate.n * u * u


def resultant_prime_bound(
    m: int, c: int, candidates: Iterable[CharPolyCandidate]
) -> ResultantBound:
    """各候補について Res(x^m - c, P) を素因数分解し、最大の素因数を返す"""
    if m < 1 or c == 0:
        raise ValueError(f"x^{m} - {c} は扱えません")
    f = Poly(x**m - c, x)
    rows = []
    max_prime = 1
    for cand in candidates:
        value = resultant_by_roots(m, c, cand)
        check = int(resultant(f.as_expr(), cand.as_poly().as_expr(), x))
        if check != value:
            logger.error(f"終結式が一致しません: {cand}: {value} != {check}")
            raise ArithmeticError(f"終結式の検算に失敗しました: {cand}")
        if value == 0:
            raise UnsupportedCase(f"Res(x^{m} - {c}, {cand}) = 0 なので素数の上界が得られません")
        factors = factorint(abs(value))
        rows.append(ResultantRow(cand, value, factors))
        max_prime = max([max_prime, *factors])
        logger.debug(f"Res(x^{m} - {c}, {cand}) = {value}")
    return ResultantBound(max_prime, tuple(rows))


def unit_norm_obstruction(K: FieldSpec) -> Tuple[FrozenSet[int], bool]:
    """Norm(b_K)² - 1 の素因数と、2 が惰性のとき立てる不一致フラグ"""
    P = split_rational_prime(K, 2)[0]
    try:
        b_K = find_generator(P)
    except NonPrincipalPrime:
        logger.error(f"d={K.d} で 2 の上の素イデアルの生成元が見つかりません")
        raise
    value = b_K.norm() ** 2 - 1
    primes = frozenset(factorint(abs(value)))
    return primes, P.split_type == "inert"


def absolute_irreducibility_flags(assumptions: Iterable[str]) -> Tuple[str, ...]:
    """2∤abc で絶対既約性に必要な仮定"""
    given = set(assumptions)
    flags = [ASSUMPTION_LARSON]
    if {ASSUMPTION_P_SPLITS, ASSUMPTION_P_3_MOD_4} <= given:
        flags.append("absolute_irreducibility:p_splits_and_3_mod_4")
    elif ASSUMPTION_P_1_MOD_4 in given:
        flags.append("absolute_irreducibility:p_1_mod_4")
    else:
        flags.append(f"requires:{ASSUMPTION_P_SPLITS}+{ASSUMPTION_P_3_MOD_4}")
    return tuple(flags)


def _ray_class_steps(K: FieldSpec) -> Tuple[List[MethodStep], bool]:
    """同種指標の導手候補 N_θ ∈ {1, 𝔭^{l/2}} に対する射類群"""
    steps = []
    order_four = False
    primes = split_rational_prime(K, 2)
    places = (0, 1) if K.is_real else ()
    halves = {tuple(0 for _ in primes)}
    if K.is_real:
        vectors, _ = two_adic_exponent_options(K)
        # 乗法的（指数 1）なら N_θ の 𝔭 成分は 0、加法的なら指数の半分
        halves |= {tuple(e // 2 if e % 2 == 0 else 0 for e in vec) for vec in vectors}
    for half in sorted(halves):
        modulus = FactoredIdeal.of(K, *zip(primes, half))
        group = ray_class_group(K, modulus, places)
        order_four = order_four or group.has_order_four_character
        steps.append(
            MethodStep(
                "ray_class_group",
                f"法 {modulus}·∞ の射類群 {list(group.invariants) or [1]}",
            )
        )
    return steps, order_four


def irreducibility_bound(
    K: FieldSpec,
    parity_case: str,
    p_K: Optional[int] = None,
    assumptions: Iterable[str] = (),
) -> IrreducibilityVerdict:
    """B_K と各判定法の記録"""
    assumptions = tuple(sorted(set(assumptions) | {ASSUMPTION_CLASS_NUMBER_ONE}))
    trace: List[MethodStep] = []
    flags: List[str] = []
    resultant_bound = None

    if K.is_real:
        if parity_case != EVEN_ABC:
            raise UnsupportedCase(f"実二次体 d={K.d} では 2∤abc を扱いません")
        B_K = REAL_FIELD_BOUND
        trace.append(
            MethodStep(
                "torsion_bound",
                f"θ の位数は 1 か 2: p ≤ {QUADRATIC_TORSION_BOUND} または p ≤ {QUARTIC_TORSION_BOUND}",
                "Kamienny; Derickx–Kamienny–Stein–Stoll",
            )
        )
    elif parity_case == EVEN_ABC:
        B_K = max(IMAGINARY_EVEN_BOUND, p_K or 0)
        trace.append(MethodStep("torsion_bound", f"B_K = max({IMAGINARY_EVEN_BOUND}, p_K={p_K})"))
    else:
        P = split_rational_prime(K, 2)[0]
        if P.split_type != "inert":
            raise UnsupportedCase(f"d={K.d} では 2 が惰性ではありません")
        m, c = ODD_ABC_EXPONENT_POLY
        candidates = [
            cand for cand in frobenius_charpoly_candidates(P.norm, 2) if cand.supersingular
        ]
        resultant_bound = resultant_prime_bound(m, c, candidates)
        B_K = max(resultant_bound.max_prime, p_K or 0)
        trace.append(
            MethodStep(
                "resultant",
                f"Res(x^{m} - {c}, P_𝔭) の最大素因数 {resultant_bound.max_prime}"
                f"（超特異な候補 {len(candidates)} 個）",
            )
        )
        flags.extend(absolute_irreducibility_flags(assumptions))

    ray_steps, order_four = _ray_class_steps(K)
    trace.extend(ray_steps)
    if order_four:
        flags.append(ASSUMPTION_ORDER_FOUR_TWIST)
        trace.append(
            MethodStep(
                "order_four_twist",
                f"θ² が切り出す二次拡大上の二次ひねりで p ≤ {QUARTIC_TORSION_BOUND}",
                "Derickx–Kamienny–Stein–Stoll",
            )
        )

    obstruction, inert_discrepancy = unit_norm_obstruction(K)
    trace.append(
        MethodStep("unit_norm", f"Norm(b_K)² - 1 の素因数 {sorted(obstruction)}")
    )
    if inert_discrepancy:
        flags.append("unit_norm_inert_discrepancy")

    certified = set()
    for p in MODULAR_CURVE_EXCEPTIONS:
        name, _, citation = MODULAR_CURVE_EXCEPTIONS[p]
        ok = modular_curve_obstruction(p, K)
        trace.append(MethodStep(f"modular_curve_{p}", f"{name}(K) {'有理点なし' if ok else '例外体'}", citation))
        if ok:
            certified.add(p)

    if B_K > max(MODULAR_CURVE_EXCEPTIONS):
        effective = prevprime(B_K + 1)
    else:
        uncertified = [p for p in primerange(5, B_K + 1) if p not in certified]
        effective = max(uncertified) if uncertified else 5
    verdict = IrreducibilityVerdict(
        B_K, max(effective, 5), frozenset(certified), tuple(trace),
        assumptions, tuple(flags), resultant_bound,
    )  # fmt: skip
    logger.info(f"d={K.d} {parity_case}: B_K={B_K}, 実効閾値={verdict.effective_threshold}")
    return verdict


@dataclass(frozen=True)
class SurjectivityCertificate:
    surjective: bool
    chain: Tuple[str, ...]


def surjectivity_preconditions(
    K: FieldSpec, p: int, verdict: IrreducibilityVerdict, parity_case: str = EVEN_ABC
) -> SurjectivityCertificate:
    """全射性の前提条件の連鎖"""
    chain = []
    if parity_case != EVEN_ABC:
        return SurjectivityCertificate(False, ("2∤abc では潜在的乗法的還元がありません",))
    if not isprime(p) or p < 17:
        return SurjectivityCertificate(False, (f"p={p} < 17",))
    if not verdict.certifies(p):
        return SurjectivityCertificate(False, (f"p={p} で既約性が未証明",))
    chain.append("p | #ρ̄(I_𝔭)（𝔭 で潜在的乗法的還元）")
    p_star = p if p % 4 == 1 else -p
    if K.discriminant == p_star:
        return SurjectivityCertificate(False, (*chain, f"K ∩ Q(ζ_{p}) ≠ Q"))
    chain.append(f"K ∩ Q(ζ_{p}) = Q")
    chain.append("像は SL₂(F_p) を含む")
    chain.append("det = 円分指標")
    return SurjectivityCertificate(True, tuple(chain))
