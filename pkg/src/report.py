import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from sympy import factorint

from src.eliminate import BoundExpression, EliminationLedger, LevelReport, Unbounded
from src.frey import two_adic_exponent_options
from src.local2 import conductor_exponent_potmult, sqrt_ext_disc_valuation
from src.quadfield import FieldSpec, split_rational_prime, unit_generators
from src.residue import (
    build_b_ideal,
    is_complete_system,
    tabulated_representatives,
    unit_square_cokernel,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_UNRESOLVED = 2
EXIT_DATA_GAP = 3
EXIT_USAGE = 4

KIND_LABELS = {
    "eliminated_by_Cf": "C_f で消去",
    "eliminated_by_inertia": "慣性群で消去",
    "eliminated_by_trace": "跡比較で消去",
    "unresolved": "未解決",
}


@dataclass(frozen=True)
class FieldProfile:
    """体ごとの基本データ（2 と d の分解、単数、𝔟、余核、導手指数）"""

    field: FieldSpec
    two_splitting: Tuple[str, ...]
    d_splitting: Tuple[str, ...]
    units: Tuple[str, ...]
    b_ideal: str
    b_key: str
    cokernel_invariants: Tuple[int, ...]
    representatives: Tuple[str, ...]
    representative_source: str
    tabulated_complete: Optional[bool]
    local_discriminants: Tuple[Tuple[int, ...], ...]
    exponent_vectors: Tuple[Tuple[int, ...], ...]
    exponent_source: str

    @property
    def cokernel_order(self) -> int:
        order = 1
        for n in self.cokernel_invariants:
            order *= n
        return order


def _splitting(K: FieldSpec, q: int) -> Tuple[str, ...]:
    return tuple(f"{P.label} ({P.split_type}, e={P.e}, f={P.f})" for P in split_rational_prime(K, q))


def build_field_profile(K: FieldSpec, policy: Optional[str] = None) -> FieldProfile:
    b = build_b_ideal(K)
    cokernel = unit_square_cokernel(K, b)
    tabulated = tabulated_representatives(K)
    if tabulated is not None:
        source, reps = tabulated
        complete = is_complete_system(cokernel, reps)
    else:
        source, reps, complete = "computed", list(cokernel.representatives), None
    two_primes = split_rational_prime(K, 2)
    discriminants = tuple(
        tuple(sqrt_ext_disc_valuation(K, P, lam) for P in two_primes) for lam in reps
    )
    vectors, exponent_source = two_adic_exponent_options(K, policy)
    profile = FieldProfile(
        K,
        _splitting(K, 2),
        tuple(s for q in sorted(factorint(abs(K.d))) for s in _splitting(K, q)),
        tuple(str(u) for u in unit_generators(K)),
        str(b),
        b.key,
        cokernel.group_invariants,
        tuple(str(lam) for lam in reps),
        source,
        complete,
        discriminants,
        tuple(vectors),
        exponent_source,
    )
    logger.info(f"d={K.d} の体プロファイルを作成しました")
    return profile


def profile_to_dict(profile: FieldProfile) -> Dict[str, Any]:
    K = profile.field
    return {
        "schema_version": SCHEMA_VERSION,
        "d": K.d,
        "field_label": K.label,
        "defining_polynomial": K.defining_polynomial,
        "discriminant": K.discriminant,
        "two_splitting": list(profile.two_splitting),
        "d_splitting": list(profile.d_splitting),
        "units": list(profile.units),
        "b_ideal": profile.b_key,
        "cokernel_invariants": list(profile.cokernel_invariants),
        "cokernel_order": profile.cokernel_order,
        "representatives": list(profile.representatives),
        "representative_source": profile.representative_source,
        "tabulated_complete": profile.tabulated_complete,
        "local_discriminants": [list(v) for v in profile.local_discriminants],
        "conductor_exponents": [
            [conductor_exponent_potmult(n) for n in v] for v in profile.local_discriminants
        ],
        "exponent_vectors": [list(v) for v in profile.exponent_vectors],
        "exponent_source": profile.exponent_source,
    }


def render_profile(profile: FieldProfile) -> str:
    """体プロファイルを人間向けに整形"""
    K = profile.field
    reps = "\n".join(
        f"- λ = {lam}: 局所判別式の付値 {list(n)}"
        for lam, n in zip(profile.representatives, profile.local_discriminants)
    )
    vectors = ", ".join(str(list(v)) for v in profile.exponent_vectors)
    complete = {True: "完全代表系", False: "完全代表系ではない", None: "計算で選んだ代表系"}[
        profile.tabulated_complete
    ]
    return f"""# Q(√{K.d}) の体プロファイル

**体ラベル**: {K.label}
**定義多項式**: {K.defining_polynomial}
**判別式**: {K.discriminant}

## 素数の分解
- 2: {", ".join(profile.two_splitting)}
- {abs(K.d)}: {", ".join(profile.d_splitting)}

## 単数
{", ".join(profile.units)}

## 余核
- 𝔟 = {profile.b_ideal}
- Coker(Φ) ≅ {" × ".join(f"Z/{n}" for n in profile.cokernel_invariants) or "1"} (位数 {profile.cokernel_order})
- 代表元の出典: {profile.representative_source} ({complete})
{reps}

## 導手指数
- v_𝔭(N_E) の候補: {vectors} (出典: {profile.exponent_source})
"""


# ---------------------------------------------------------------------------
# 消去の台帳
# ---------------------------------------------------------------------------


def render_bound(bound) -> str:
    return "unbounded" if isinstance(bound, Unbounded) else str(bound)


def _bound_to_dict(bound) -> Dict[str, Any]:
    if isinstance(bound, Unbounded):
        return {"unbounded": True, "reasons": list(bound.reasons), "rendered": render_bound(bound)}
    return {
        "unbounded": False,
        "known": bound.known,
        "symbolic": list(bound.symbolic),
        "excluded_primes": list(bound.excluded_primes),
        "contributions": dict(bound.contributions),
        "rendered": render_bound(bound),
    }


def _level_to_dict(level: LevelReport) -> Dict[str, Any]:
    candidate = level.candidate
    return {
        "key": level.key,
        "norm": candidate.level.norm(),
        "exponents": list(candidate.exponents),
        "source": candidate.source,
        "hypotheses": list(candidate.hypotheses),
        "incomplete": level.incomplete,
        "new_dimension": level.new_dimension,
        "available": level.available,
        "data_gap": level.data_gap or None,
        "provenance": level.provenance or None,
        "verdicts": [
            {
                "form_label": v.form_label,
                "kind": v.kind,
                "primes": list(v.primes),
                "reason": v.reason,
                "c_f": v.c_f,
                "floor": v.floor,
                "flags": list(v.flags),
                "data_gaps": list(v.data_gaps),
                "anchor": v.anchor,
            }
            for v in level.verdicts
        ],
    }


def ledger_to_dict(ledger: EliminationLedger) -> Dict[str, Any]:
    verdict = ledger.irreducibility
    return {
        "schema_version": SCHEMA_VERSION,
        "field_label": ledger.field_label,
        "d": ledger.d,
        "parity_case": ledger.parity_case,
        "coefficient": ledger.coefficient,
        "method": ledger.method,
        "data_provenance": ledger.data_provenance,
        "assumptions": list(ledger.assumptions),
        "p_K": ledger.p_K,
        "irreducibility": {
            "p_threshold": verdict.p_threshold,
            "effective_threshold": verdict.effective_threshold,
            "certified_small": sorted(verdict.certified_small),
            "flags": list(verdict.flags),
            "method_trace": [
                {"criterion": s.criterion, "certificate": s.certificate, "citation": s.citation}
                for s in verdict.method_trace
            ],
        },
        "levels": [_level_to_dict(level) for level in ledger.levels],
        "surviving_primes": sorted(ledger.surviving_primes),
        "final_bound": _bound_to_dict(ledger.final_bound),
        "data_gaps": list(ledger.data_gaps),
        "incomplete_levels": list(ledger.incomplete_levels),
    }


def dump_json(doc: Dict[str, Any]) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def render_json(ledger: EliminationLedger) -> str:
    return dump_json(ledger_to_dict(ledger))


def _verdict_line(v) -> str:
    primes = f" p ∈ {{{', '.join(map(str, v.primes))}}}" if v.primes else ""
    c_f = f" C_f={v.c_f}" if v.c_f not in (None, 0) else ""
    reason = f": {v.reason}" if v.reason else ""
    return f"- `{v.form_label}`: {KIND_LABELS[v.kind]}{primes}{c_f}{reason} 〔{v.anchor}〕"


def _level_section(level: LevelReport) -> str:
    header = f"### {level.candidate.level} (ノルム {level.candidate.level.norm()})"
    lines = [header]
    if level.data_gap:
        lines.append(f"- データなし: {level.data_gap}")
    elif level.incomplete:
        dim = level.new_dimension if level.new_dimension is not None else "不明"
        lines.append(f"- 不完全なレベル: 新形式次元 {dim}, 取得 {level.available}")
    if not level.verdicts and not level.data_gap:
        lines.append("- 新形式なし")
    lines.extend(_verdict_line(v) for v in level.verdicts)
    return "\n".join(lines)


def render_report(ledger: EliminationLedger) -> str:
    """消去の台帳を人間向けに整形"""
    verdict = ledger.irreducibility
    bound = ledger.final_bound
    if isinstance(bound, BoundExpression):
        bound_text = f"p > {bound}"
        if bound.excluded_primes:
            bound_text += f"（ただし p ≠ {', '.join(map(str, bound.excluded_primes))}）"
        contributions = "\n".join(f"- {k}: {v}" for k, v in sorted(bound.contributions.items()))
    else:
        bound_text = str(bound)
        contributions = "\n".join(f"- {r}" for r in bound.reasons)
    levels = "\n\n".join(_level_section(level) for level in ledger.levels) or "（レベルなし）"
    assumptions = "\n".join(f"- {a}" for a in ledger.assumptions) or "- なし"
    gaps = "\n".join(f"- {g}" for g in ledger.data_gaps) or "- なし"
    p_K = ledger.p_K if ledger.p_K is not None else "なし"
    return f"""# Q(√{ledger.d}) 消去レポート

**体ラベル**: {ledger.field_label}
**場合**: {ledger.parity_case}
**係数**: {ledger.coefficient}
**方法**: {ledger.method}
**データ出典**: {ledger.data_provenance}

## 既約性
- B_K = {verdict.p_threshold}, 実効閾値 {verdict.effective_threshold}, p_K = {p_K}

## レベルと判定
{levels}

## 上界
**{bound_text}**
{contributions}

## 仮定・予想
{assumptions}

## データ欠損
{gaps}
"""


def summarize(ledger: EliminationLedger) -> str:
    """上界と判定の内訳を1行で（verify-tables の出力用）"""
    counts: Dict[str, int] = {}
    for v in ledger.per_form:
        counts[v.kind] = counts.get(v.kind, 0) + 1
    parts = ", ".join(f"{KIND_LABELS[k]} {n}" for k, n in sorted(counts.items()))
    summary = f"上界 {render_bound(ledger.final_bound)}"
    return f"{summary}（{parts}）" if parts else summary


def hard_data_gaps(ledger: EliminationLedger) -> List[str]:
    """上界を記号で残せない欠損（レベル全体の欠落とねじれ素数表の欠落）"""
    gaps = [level.key for level in ledger.levels if level.data_gap]
    if "torsion" in ledger.data_gaps:
        gaps.append("torsion")
    return gaps


def ledger_exit_code(ledger: EliminationLedger) -> int:
    # 未解決はデータ欠損より優先
    if ledger.unresolved:
        return EXIT_UNRESOLVED
    if hard_data_gaps(ledger):
        return EXIT_DATA_GAP
    return EXIT_OK
