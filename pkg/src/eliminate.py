import asyncio
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial, reduce
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from sympy import factorint, prevprime

from src.errors import (
    DataError,
    DataGap,
    IncompleteData,
    MissingCurveData,
    NotCached,
    ZeroDifference,
)
from src.frey import (
    A6_HYPOTHESIS_FIELDS,
    EVEN_ABC,
    ODD_ABC,
    LevelCandidate,
    lowered_level,
    potential_multiplicative_guard,
    validate_coefficient,
)
from src.galois import IrreducibilityVerdict, irreducibility_bound
from src.newforms import CurveRecord, LevelForms, NewformRecord, NewformStore
from src.numfield import FieldElement, integral_norm
from src.quadfield import (
    FactoredIdeal,
    FieldSpec,
    PrimeIdeal,
    odd_primes_dividing,
    primes_up_to_norm,
    split_rational_prime,
)

logger = logging.getLogger(__name__)

ELIMINATED_BY_CF = "eliminated_by_Cf"
ELIMINATED_BY_INERTIA = "eliminated_by_inertia"
ELIMINATED_BY_TRACE = "eliminated_by_trace"
UNRESOLVED = "unresolved"

# 二次体上の Frey 曲線は 2 等分点をすべて持つ
FULL_TWO_TORSION_T = 4

# 偽楕円曲線の分岐で除ける p の下限（p > 13）
FAKE_CURVE_FLOOR = 13
# 虚二次体で全射性から要る下限（p > 13）
SURJECTIVITY_FLOOR = 13

CONJECTURE_SERRE = "serre_modularity_conjecture"
CONJECTURE_EICHLER_SHIMURA = "eichler_shimura_analogue"
CONJECTURE_FAKE_CURVE = "fake_elliptic_curve_dichotomy"

PROVENANCE_SYNTHETIC = "synthetic-fixture"
PROVENANCE_LMFDB = "lmfdb"
PROVENANCE_UNKNOWN = "unknown"

# p ≠ d を仮定しない d（準安定な 𝔇 で p | v(Δ) が別途示せる）
NO_EXCLUSION_D = (3, 5, 7, 19)

# 判定ごとの出典アンカー
ANCHORS = {
    ELIMINATED_BY_CF: "C_f lemma: p | Norm(B_f)",
    ELIMINATED_BY_INERTIA: "inertia argument: p | #ρ̄(I_𝔭) vs potentially good E'",
    ELIMINATED_BY_TRACE: "trace comparison at q: p | a - a_q or p | ±(N(q)+1) - a_q",
    UNRESOLVED: "limitations of the modular method: no contradiction at this level",
}


@dataclass(frozen=True)
class HasseSet:
    """𝒜_q = {a : |a| ≤ 2√N, N + 1 - a ≡ 0 (mod t)}"""

    norm: int
    t: int
    members: Tuple[int, ...]

    def __contains__(self, a: int) -> bool:
        return a in self.members


def hasse_set(norm: int, t: int) -> HasseSet:
    if norm < 2 or t < 1:
        raise ValueError(f"norm ≥ 2, t ≥ 1 が必要です: norm={norm}, t={t}")
    bound = math.isqrt(4 * norm)
    members = tuple(a for a in range(-bound, bound + 1) if (norm + 1 - a) % t == 0)
    return HasseSet(norm, t, members)


@dataclass(frozen=True)
class BqValue:
    prime: PrimeIdeal
    value: FieldElement
    norm: int


def bq(form: NewformRecord, q: PrimeIdeal, t: int = FULL_TWO_TORSION_T) -> BqValue:
    """B_{f,q} = N(q)·((N(q)+1)² - a_q²)·Π_{a∈𝒜_q}(a - a_q) とその絶対ノルム"""
    if not form.level.is_coprime_to(q):
        raise ValueError(f"{q.label} はレベル {form.level} を割ります")
    a_q = form.eigenvalue(q)
    if a_q is None:
        raise DataGap(form.source_label, q.label)
    N = q.norm
    value = (a_q * a_q - (N + 1) ** 2) * (-N)
    for a in hasse_set(N, t).members:
        value = value * (a_q - a) * (-1)
    return BqValue(q, value, abs(integral_norm(value)))


def cf(form: NewformRecord, T: Sequence[PrimeIdeal], t: int = FULL_TWO_TORSION_T) -> int:
    """C_f = gcd_{q∈T} |Norm(B_{f,q})|（すべて 0 なら 0）"""
    return reduce(math.gcd, (bq(form, q, t).norm for q in T), 0)


def prime_support(n: int) -> Tuple[int, ...]:
    return tuple(sorted(factorint(abs(n)))) if n not in (0, 1, -1) else ()


@dataclass(frozen=True)
class Verdict:
    """1つの形式に対する判定"""

    form_label: str
    kind: str
    primes: Tuple[int, ...] = ()
    reason: str = ""
    c_f: Optional[int] = None
    floor: int = 0
    flags: Tuple[str, ...] = ()
    data_gaps: Tuple[str, ...] = ()

    @property
    def eliminated(self) -> bool:
        return self.kind != UNRESOLVED

    @property
    def anchor(self) -> str:
        return ANCHORS[self.kind]


def inertia_eliminate(
    form: NewformRecord,
    curves: Sequence[CurveRecord],
    potmult_primes: Sequence[PrimeIdeal],
    imaginary: bool = False,
) -> Verdict:
    """C_f = 0 の有理形式を慣性群の位数で除く"""
    if not curves:
        raise MissingCurveData(form.source_label)
    if not potmult_primes:
        return Verdict(form.source_label, UNRESOLVED, reason="InertiaInapplicable: Frey 曲線が 𝔭 で潜在的に良い還元")
    good = [
        E for E in curves if all(E.j_valuation(P) >= 0 for P in potmult_primes)
    ]
    if not good:
        labels = ", ".join(P.label for P in potmult_primes)
        logger.info(f"{form.source_label}: すべての曲線が v(j) < 0 ({labels})")
        return Verdict(
            form.source_label,
            UNRESOLVED,
            reason=f"InertiaInapplicable: 同種類の {len(curves)} 曲線すべて v_𝔭(j) < 0",
            c_f=0,
        )
    if imaginary:
        return Verdict(
            form.source_label,
            ELIMINATED_BY_INERTIA,
            reason=f"{good[0].source_label} は潜在的に良い還元、偽楕円曲線は p > {FAKE_CURVE_FLOOR} で除外",
            c_f=0,
            floor=FAKE_CURVE_FLOOR,
            flags=(CONJECTURE_FAKE_CURVE,),
        )
    return Verdict(
        form.source_label,
        ELIMINATED_BY_INERTIA,
        reason=f"{good[0].source_label} は潜在的に良い還元",
        c_f=0,
    )


@dataclass(frozen=True)
class TraceComparison:
    prime: PrimeIdeal
    a_q: int
    good: Tuple[int, ...]
    multiplicative: Tuple[int, ...]

    @property
    def primes(self) -> FrozenSet[int]:
        result = set()
        for diff in self.good + self.multiplicative:
            result.update(factorint(abs(diff)))
        return frozenset(result)


def trace_compare_eliminate(
    form: NewformRecord, q: PrimeIdeal, full_two_torsion: bool = True
) -> TraceComparison:
    """有理形式の a_q と Frey 曲線の Frobenius 跡の候補を比べる"""
    if q.residue_char == 2:
        raise ValueError(f"{q.label} は奇素イデアルではありません")
    if not form.level.is_coprime_to(q):
        raise ValueError(f"{q.label} はレベル {form.level} を割ります")
    value = form.eigenvalue(q)
    if value is None:
        raise DataGap(form.source_label, q.label)
    a_q = int(value.as_rational())
    N = q.norm
    H = hasse_set(N, 4 if full_two_torsion else 2)
    good = tuple(a - a_q for a in H.members)
    multiplicative = (N + 1 - a_q, -(N + 1) - a_q)
    for a, diff in zip(H.members, good):
        if diff == 0:
            raise ZeroDifference("good", a)
    for sign, diff in zip((1, -1), multiplicative):
        if diff == 0:
            raise ZeroDifference("multiplicative", sign * (N + 1))
    return TraceComparison(q, a_q, good, multiplicative)


@dataclass(frozen=True)
class FormOutcome:
    """1段目（C_f）の結果"""

    form: NewformRecord
    c_f: Optional[int]
    missing: Tuple[str, ...]


@dataclass(frozen=True)
class LevelReport:
    candidate: LevelCandidate
    verdicts: Tuple[Verdict, ...]
    incomplete: bool = False
    new_dimension: Optional[int] = None
    available: int = 0
    data_gap: str = ""
    provenance: str = ""

    @property
    def key(self) -> str:
        return self.candidate.key


@dataclass(frozen=True)
class Unbounded:
    reasons: Tuple[str, ...]

    def __str__(self) -> str:
        return "∞ (未解決の形式あり)"


@dataclass(frozen=True)
class BoundExpression:
    """p > max{known, symbolic...}（excluded は別途 p ≠ の仮定）"""

    known: int
    symbolic: Tuple[str, ...] = ()
    excluded_primes: Tuple[int, ...] = ()
    contributions: Dict[str, int] = field(default_factory=dict, hash=False)

    def __str__(self) -> str:
        if self.symbolic:
            return "max{" + ", ".join([str(self.known), *self.symbolic]) + "}"
        return str(self.known)


Bound = Union[BoundExpression, Unbounded]


@dataclass(frozen=True)
class EliminationLedger:
    field_label: str
    d: int
    parity_case: str
    coefficient: int
    levels: Tuple[LevelReport, ...]
    surviving_primes: FrozenSet[int]
    final_bound: Bound
    assumptions: Tuple[str, ...]
    irreducibility: IrreducibilityVerdict = field(repr=False)
    p_K: Optional[int] = None
    data_gaps: Tuple[str, ...] = ()
    incomplete_levels: Tuple[str, ...] = ()
    method: str = "gcd-of-norms"
    data_provenance: str = PROVENANCE_UNKNOWN

    @property
    def per_form(self) -> List[Verdict]:
        return [v for level in self.levels for v in level.verdicts]

    @property
    def unresolved(self) -> List[Verdict]:
        return [v for v in self.per_form if not v.eliminated]


def data_provenance(sources: Sequence[str]) -> str:
    """forms ドキュメントの provenance から台帳の出典を決める（合成が1つでもあれば合成扱い）"""
    sources = [s for s in sources if s]
    if any(s.lower().startswith("synthetic") for s in sources):
        return PROVENANCE_SYNTHETIC
    if sources and all(s.startswith("LMFDB") for s in sources):
        return PROVENANCE_LMFDB
    return PROVENANCE_UNKNOWN


def excluded_primes(K: FieldSpec, coefficient: int, p_divides_r: bool = False) -> Tuple[int, ...]:
    """p ≠ d の仮定が要る素数"""
    if p_divides_r or K.d in NO_EXCLUSION_D or K.d < 0:
        return ()
    ramified = {P.residue_char for P in odd_primes_dividing(K, K.discriminant)}
    return (K.d,) if K.d in ramified and coefficient == K.d else ()


def assemble_bound(
    K: FieldSpec,
    parity_case: str,
    verdict: IrreducibilityVerdict,
    levels: Sequence[LevelReport],
    p_K: Optional[int] = None,
    coefficient: Optional[int] = None,
    p_divides_r: bool = False,
) -> Bound:
    """各段の閾値と生き残った素数から最終的な上界を組み立てる"""
    unresolved = [v for level in levels for v in level.verdicts if not v.eliminated]
    gaps = [level.key for level in levels if level.data_gap]
    if unresolved or gaps:
        reasons = tuple(f"{v.form_label}: {v.reason}" for v in unresolved)
        reasons += tuple(f"{key}: データなし" for key in gaps)
        return Unbounded(reasons)

    contributions = {"irreducibility": verdict.effective_threshold}
    if parity_case == EVEN_ABC:
        contributions["potential_multiplicative"] = potential_multiplicative_guard(K)
        if not K.is_real:
            contributions["surjectivity"] = SURJECTIVITY_FLOOR
    if p_K:
        contributions["torsion_p_K"] = p_K
    verdicts = [v for level in levels for v in level.verdicts]
    support = [p for v in verdicts for p in v.primes]
    if support:
        contributions["newforms"] = max(support)
    floors = [v.floor for v in verdicts if v.floor]
    if floors:
        contributions["fake_curve"] = max(floors)

    symbolic: Tuple[str, ...] = ()
    if any(level.incomplete for level in levels):
        symbolic = ("C_K",)
    coefficient = coefficient if coefficient is not None else K.d
    bound = BoundExpression(
        max(contributions.values()),
        symbolic,
        excluded_primes(K, coefficient, p_divides_r),
        contributions,
    )
    logger.info(f"{K.label} {parity_case}: 上界 p > {bound} ({contributions})")
    return bound


def conjecture_flags(K: FieldSpec, levels: Sequence[LevelReport]) -> Tuple[str, ...]:
    if K.is_real:
        return ()
    flags = [CONJECTURE_SERRE, CONJECTURE_EICHLER_SHIMURA]
    for level in levels:
        for v in level.verdicts:
            flags.extend(f for f in v.flags if f not in flags)
    return tuple(flags)


def elimination_set(K: FieldSpec, level: FactoredIdeal, coefficient: int, bound: int) -> List[PrimeIdeal]:
    """T: ノルム < bound で 2·係数·レベルと素な素イデアル"""
    return [
        q
        for q in primes_up_to_norm(K, bound)
        if q.residue_char != 2 and coefficient % q.residue_char and level.is_coprime_to(q)
    ]


def first_pass(form: NewformRecord, T: Sequence[PrimeIdeal]) -> FormOutcome:
    """固有値がそろっていれば C_f を計算する（CPU 処理、スレッドで実行）"""
    missing = tuple(q.label for q in T if form.eigenvalue(q) is None)
    if missing:
        return FormOutcome(form, None, missing)
    value = cf(form, T)
    logger.debug(f"{form.source_label}: C_f = {value}")
    return FormOutcome(form, value, ())


def trace_fallback(form: NewformRecord, T: Sequence[PrimeIdeal], missing: Tuple[str, ...]) -> Verdict:
    """固有値が欠けている有理形式を、手元にある素イデアルでの跡比較で除く"""
    surviving: Optional[FrozenSet[int]] = None
    used = []
    for q in T:
        if form.eigenvalue(q) is None:
            continue
        try:
            comparison = trace_compare_eliminate(form, q)
        except ZeroDifference as e:
            logger.debug(f"{form.source_label} q={q.label}: {e}")
            continue
        surviving = comparison.primes if surviving is None else surviving & comparison.primes
        used.append(q.label)
    if surviving is None:
        return Verdict(
            form.source_label, UNRESOLVED, reason="固有値が不足し跡比較もできません", data_gaps=missing
        )
    return Verdict(
        form.source_label,
        ELIMINATED_BY_TRACE,
        primes=tuple(sorted(surviving)),
        reason=f"q ∈ {{{', '.join(used)}}} で跡比較",
        data_gaps=missing,
    )


class EliminationEngine:
    """低下レベルごとに形式を取得し判定する"""

    def __init__(
        self,
        store: NewformStore,
        t_norm_bound: Optional[int] = None,
        workers: Optional[int] = None,
    ):
        self.store = store
        self.t_norm_bound = t_norm_bound or int(os.getenv("T_NORM_BOUND", "50"))
        self.workers = workers or int(os.getenv("ELIMINATION_WORKERS", "4"))

    async def _curves(self, K: FieldSpec, form: NewformRecord) -> List[CurveRecord]:
        if not form.curve_class:
            raise MissingCurveData(form.source_label)
        return await self.store.fetch_isogeny_class(K, form.curve_class)

    async def _second_pass(
        self, K: FieldSpec, parity_case: str, outcome: FormOutcome, T: Sequence[PrimeIdeal]
    ) -> Verdict:
        form = outcome.form
        if outcome.c_f is None:
            if form.is_rational:
                logger.warning(f"{form.source_label}: 固有値不足 {list(outcome.missing)}、跡比較に切り替えます")
                return trace_fallback(form, T, outcome.missing)
            return Verdict(
                form.source_label, UNRESOLVED, reason="無理数体の固有値が不足しています",
                data_gaps=outcome.missing,
            )  # fmt: skip
        if outcome.c_f != 0:
            return Verdict(
                form.source_label, ELIMINATED_BY_CF, primes=prime_support(outcome.c_f), c_f=outcome.c_f
            )
        if not form.is_rational:
            return Verdict(form.source_label, UNRESOLVED, reason="C_f = 0 の無理数形式", c_f=0)
        potmult = split_rational_prime(K, 2) if parity_case == EVEN_ABC else []
        try:
            curves = await self._curves(K, form)
        except (MissingCurveData, NotCached) as e:
            logger.warning(f"{form.source_label}: 曲線データなし ({e})")
            return Verdict(
                form.source_label, UNRESOLVED, reason="C_f = 0 で曲線データがありません", c_f=0,
                data_gaps=(f"curves:{form.curve_class}",),
            )  # fmt: skip
        try:
            return inertia_eliminate(form, curves, potmult, imaginary=not K.is_real)
        except MissingCurveData as e:
            logger.warning(f"{form.source_label}: {e}")
            return Verdict(form.source_label, UNRESOLVED, reason=str(e), c_f=0, data_gaps=(str(e),))

    async def eliminate_level(
        self, K: FieldSpec, parity_case: str, candidate: LevelCandidate, coefficient: int
    ) -> LevelReport:
        try:
            level_forms: LevelForms = await self.store.fetch_newforms(K, candidate.level)
        except DataError as e:
            logger.warning(f"{K.label} レベル {candidate.level}: {e}")
            return LevelReport(candidate, (), data_gap=str(e))
        T = elimination_set(K, candidate.level, coefficient, self.t_norm_bound)
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            outcomes = await asyncio.gather(
                *(loop.run_in_executor(pool, partial(first_pass, form, T)) for form in level_forms.forms)
            )
        verdicts = []
        for outcome in outcomes:
            verdicts.append(await self._second_pass(K, parity_case, outcome, T))
        incomplete = level_forms.incomplete
        return LevelReport(
            candidate,
            tuple(verdicts),
            incomplete=incomplete is not None,
            new_dimension=incomplete.new_dimension if incomplete else None,
            available=incomplete.available if incomplete else len(level_forms.forms),
            provenance=level_forms.provenance,
        )

    async def run(
        self,
        K: FieldSpec,
        parity_case: str = EVEN_ABC,
        coefficient: Optional[int] = None,
        p_divides_r: bool = False,
        policy: Optional[str] = None,
        assumptions: Sequence[str] = (),
        a6_hypothesis: Optional[bool] = None,
        level_filter: Optional[Sequence[str]] = None,
        strict: bool = False,
    ) -> EliminationLedger:
        """低下レベルをすべて処理して台帳を作る

        strict なら不完全なレベルが1つでもあれば IncompleteData を送出する。
        """
        coefficient = validate_coefficient(K, coefficient)
        if a6_hypothesis is None:
            a6_hypothesis = K.d in A6_HYPOTHESIS_FIELDS and parity_case == ODD_ABC
            if a6_hypothesis:
                logger.warning(f"d={K.d} では a6 の追加仮定を置いて 𝔭⁴𝔇 を避けます")
        candidates = lowered_level(
            K, parity_case, coefficient, p_divides_r, policy, a6_hypothesis
        )
        if level_filter:
            wanted = set(level_filter)
            candidates = [c for c in candidates if c.key in wanted or str(c.level.norm()) in wanted]

        p_K = None
        gaps: List[str] = []
        if not K.is_real:
            torsion = await self.store.fetch_torsion(K)
            if torsion is None:
                gaps.append("torsion")
            else:
                p_K = torsion.p_K
        verdict = irreducibility_bound(K, parity_case, p_K, assumptions)

        levels = []
        for candidate in candidates:
            levels.append(await self.eliminate_level(K, parity_case, candidate, coefficient))

        incomplete = [level.key for level in levels if level.incomplete]
        if incomplete:
            if strict:
                raise IncompleteData(incomplete)
            logger.warning(f"{K.label} {parity_case}: 不完全なレベル {incomplete}")

        for level in levels:
            if level.data_gap:
                gaps.append(level.key)
            for v in level.verdicts:
                gaps.extend(f"{v.form_label}:{g}" for g in v.data_gaps)
        surviving = frozenset(p for level in levels for v in level.verdicts for p in v.primes)
        bound = assemble_bound(K, parity_case, verdict, levels, p_K, coefficient, p_divides_r)
        if gaps and "torsion" in gaps and isinstance(bound, BoundExpression):
            bound = BoundExpression(bound.known, bound.symbolic + ("p_K",), bound.excluded_primes, bound.contributions)
        all_assumptions = tuple(verdict.assumptions) + tuple(verdict.flags) + conjecture_flags(K, levels)
        for candidate in candidates:
            all_assumptions += tuple(h for h in candidate.hypotheses if h not in all_assumptions)
        return EliminationLedger(
            K.label,
            K.d,
            parity_case,
            coefficient,
            tuple(levels),
            surviving,
            bound,
            all_assumptions,
            verdict,
            p_K,
            tuple(gaps),
            tuple(incomplete),
            data_provenance=data_provenance([level.provenance for level in levels]),
        )
