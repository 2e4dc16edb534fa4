import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from sympy import Poly, Rational, SympifyError, Symbol, factorint, ilcm
from sympy.parsing.sympy_parser import parse_expr

from src.errors import (
    DataGap,
    FixtureIoError,
    HeckeBoundViolation,
    MissingCurveData,
    NotCached,
    SchemaMismatch,
)
from src.lmfdb_client import DataProvider, create_data_provider
from src.numfield import EigenvalueField, FieldElement, satisfies_hecke_bound
from src.quadfield import (
    FactoredIdeal,
    FieldSpec,
    PrimeIdeal,
    primes_up_to_norm,
    split_rational_prime,
    valuation,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KINDS = ("forms", "curves", "torsion")
TORSION_KEY = "serre_levels"

# j = 0 の付値
INFINITE_VALUATION = 10**9

DEFAULT_FIXTURE_DIR = Path(__file__).parent / "fixtures"

# 同じノルムのイデアルが複数ある体での LMFDB レベルラベル
LEVEL_LABEL_OVERRIDES: Dict[Tuple[str, str], str] = {
    ("2.2.17.1", "2.0e1-2.1e1-17.9e1"): "68.1",
}

_w = Symbol("w")


@dataclass(frozen=True)
class NewformRecord:
    """保型形式1つ分の Hecke 固有値"""

    source_label: str
    field_label: str
    level: FactoredIdeal
    eigen_field: EigenvalueField
    eigenvalues: Dict[str, FieldElement] = field(hash=False)
    curve_class: Optional[str] = None

    @property
    def is_rational(self) -> bool:
        return self.eigen_field.is_rational

    def eigenvalue(self, q: PrimeIdeal) -> Optional[FieldElement]:
        return self.eigenvalues.get(q.label)


@dataclass(frozen=True)
class CurveRecord:
    source_label: str
    conductor_norm: int
    j_valuations: Dict[str, int] = field(hash=False)
    torsion_structure: Tuple[int, ...] = ()

    def j_valuation(self, P: PrimeIdeal) -> int:
        try:
            return self.j_valuations[P.label]
        except KeyError:
            raise MissingCurveData(f"{self.source_label} (v_{P.label}(j))")

    @property
    def j_valuation_at_2(self) -> int:
        """2 の上の素イデアルでの v(j) の最小値"""
        values = [v for label, v in self.j_valuations.items() if label.split(".")[0] in ("2", "4")]
        if not values:
            raise MissingCurveData(self.source_label)
        return min(values)

    @property
    def potentially_good_at_2(self) -> bool:
        return self.j_valuation_at_2 >= 0


@dataclass(frozen=True)
class Incomplete:
    """データが一部しかないレベルの印"""

    new_dimension: Optional[int]
    available: int
    missing: Optional[int]


@dataclass(frozen=True)
class LevelForms:
    level: FactoredIdeal
    forms: Tuple[NewformRecord, ...]
    incomplete: Optional[Incomplete] = None
    provenance: str = ""

    @property
    def complete(self) -> bool:
        return self.incomplete is None


@dataclass(frozen=True)
class TorsionRecord:
    """Γ0(N)^ab のねじれに現れる素数"""

    field_label: str
    levels: Tuple[str, ...]
    primes: Tuple[int, ...]
    provenance: str = ""

    @property
    def p_K(self) -> int:
        return max(self.primes)


@dataclass(frozen=True)
class CacheEntry:
    key: Tuple[str, str, str]  # (field_label, kind, key)
    payload: Dict[str, Any] = field(hash=False)
    fetched_at: str = ""
    source: str = "remote"  # "remote" | "fixture"


# ---------------------------------------------------------------------------
# ドキュメントの読み書き
# ---------------------------------------------------------------------------


def document_path(root: Path, field_label: str, kind: str, key: str) -> Path:
    return Path(root) / field_label / kind / f"{key}.json"


def _validate_document(doc: Any, where: str) -> Dict[str, Any]:
    if not isinstance(doc, dict):
        raise SchemaMismatch(where, "JSON オブジェクトではありません")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(where, f"schema_version={doc.get('schema_version')} は未対応です")
    if doc.get("kind") not in KINDS:
        raise SchemaMismatch(where, f"kind={doc.get('kind')} は未対応です")
    required = {
        "forms": ("field_label", "forms", "complete"),
        "curves": ("field_label", "class_label", "curves"),
        "torsion": ("field_label", "levels", "primes"),
    }[doc["kind"]]
    missing = [name for name in required if name not in doc]
    if missing:
        raise SchemaMismatch(where, f"必須フィールドがありません: {missing}")
    return doc


def load_fixture(path) -> Dict[str, Any]:
    """フィクスチャ/キャッシュの JSON を読み込み、スキーマを確認する"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"壊れたドキュメント: {path}: {e}")
        raise SchemaMismatch(str(path), f"JSON として読めません: {e}")
    except OSError as e:
        logger.error(f"ドキュメント読込エラー: {path}: {e}")
        raise FixtureIoError(str(path), str(e))
    return _validate_document(doc, str(path))


def dump_document(doc: Dict[str, Any]) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def write_cache(entry: CacheEntry, cache_dir=None) -> str:
    """キャッシュに書き込む。同じ内容なら何もしない（"written" / "unchanged"）"""
    cache_dir = Path(cache_dir or os.getenv("CACHE_DIR", "cache"))
    field_label, kind, key = entry.key
    path = document_path(cache_dir, field_label, kind, key)
    payload = dict(entry.payload)
    payload.setdefault("fetched_at", entry.fetched_at)
    payload.setdefault("source", entry.source)
    _validate_document(payload, str(path))
    if path.exists():
        try:
            existing = load_fixture(path)
        except (SchemaMismatch, FixtureIoError):
            logger.warning(f"壊れたキャッシュを上書きします: {path}")
        else:
            strip = {"fetched_at"}
            if {k: v for k, v in existing.items() if k not in strip} == {
                k: v for k, v in payload.items() if k not in strip
            }:
                return "unchanged"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(dump_document(payload), encoding="utf-8")
        tmp.replace(path)
    except OSError as e:
        logger.error(f"キャッシュ書込エラー: {path}: {e}")
        raise FixtureIoError(str(path), str(e))
    logger.debug(f"キャッシュに保存しました: {path}")
    return "written"


# ---------------------------------------------------------------------------
# レコードへの変換
# ---------------------------------------------------------------------------


def _check_hecke_bound(label: str, q: PrimeIdeal, value: FieldElement, level: FactoredIdeal):
    if not value.is_rational():
        return
    r = value.as_rational()
    if r.q != 1:
        raise SchemaMismatch(f"{label} a_{q.label}", f"{r} は整数ではありません")
    if not satisfies_hecke_bound(int(r), q.norm):
        raise HeckeBoundViolation(label, q.label, int(r))


def forms_from_document(K: FieldSpec, level: FactoredIdeal, doc: Dict[str, Any]) -> LevelForms:
    """forms ドキュメントを NewformRecord の列に変換"""
    known = {P.label: P for P in primes_up_to_norm(K, 1000)}
    records = []
    for raw in doc["forms"]:
        try:
            label = raw["label"]
            F = EigenvalueField.from_string(raw.get("hecke_poly", "x"), raw.get("variable", "e"))
            eigenvalues = {}
            for prime_label, text in raw.get("eigenvalues", {}).items():
                value = F.element(str(text))
                if prime_label in known:
                    _check_hecke_bound(label, known[prime_label], value, level)
                eigenvalues[prime_label] = value
        except KeyError as e:
            raise SchemaMismatch(f"{K.label} {level.key}", f"フィールド {e} がありません")
        if raw.get("is_rational") is not None and bool(raw["is_rational"]) != F.is_rational:
            raise SchemaMismatch(label, "is_rational が固有値体の次数と一致しません")
        records.append(
            NewformRecord(label, K.label, level, F, eigenvalues, raw.get("curve_class"))
        )
    incomplete = None
    if not doc["complete"]:
        dim = doc.get("new_dimension")
        available = sum(r.eigen_field.degree for r in records)
        missing = dim - available if dim is not None else None
        incomplete = Incomplete(dim, available, missing)
    return LevelForms(level, tuple(records), incomplete, doc.get("provenance", ""))


def curves_from_document(doc: Dict[str, Any]) -> List[CurveRecord]:
    curves = []
    for raw in doc["curves"]:
        try:
            curves.append(
                CurveRecord(
                    raw["label"],
                    int(raw["conductor_norm"]),
                    {k: int(v) for k, v in raw["j_valuations"].items()},
                    tuple(int(n) for n in raw.get("torsion", [])),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatch(doc.get("class_label", "?"), f"曲線データが不正です: {e}")
    return curves


def torsion_from_document(doc: Dict[str, Any]) -> TorsionRecord:
    return TorsionRecord(
        doc["field_label"],
        tuple(doc["levels"]),
        tuple(sorted(int(p) for p in doc["primes"])),
        doc.get("provenance", ""),
    )


# ---------------------------------------------------------------------------
# LMFDB 形式からの翻訳
# ---------------------------------------------------------------------------

_PRIME_RE = re.compile(r"^\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(.+?)\s*\]$")


def translate_prime_label(K: FieldSpec, text: str) -> PrimeIdeal:
    """LMFDB の素イデアル表記 "[N, q, a+b*w]" を素イデアルに変換"""
    m = _PRIME_RE.match(text.strip())
    if not m:
        raise SchemaMismatch(f"素イデアル '{text}'", "形式が [N, q, 生成元] ではありません")
    norm, q = int(m.group(1)), int(m.group(2))
    try:
        gen = Poly(parse_expr(m.group(3).replace("^", "**"), local_dict={"w": _w}), _w)
    except Exception as e:
        raise SchemaMismatch(f"素イデアル '{text}'", str(e))
    coeffs = dict(gen.terms())
    x, y = int(coeffs.get((0,), 0)), int(coeffs.get((1,), 0))
    if gen.degree() > 1:
        raise SchemaMismatch(f"素イデアル '{text}'", "生成元が w の一次式ではありません")
    element = K.element(x, y)
    for P in split_rational_prime(K, q):
        if P.norm == norm and P.contains(element):
            return P
    raise SchemaMismatch(f"素イデアル '{text}'", f"{K.label} に該当する素イデアルがありません")


def ideals_of_norm(K: FieldSpec, n: int) -> int:
    """ノルム n の整イデアルの個数"""
    count = 1
    for q, k in factorint(n).items():
        primes = split_rational_prime(K, q)
        kind = primes[0].split_type
        if kind == "split":
            count *= k + 1
        elif kind == "inert" and k % 2:
            return 0
    return count


def level_label_for(K: FieldSpec, level: FactoredIdeal) -> Optional[str]:
    """レベルに対応する LMFDB レベルラベル（ノルムだけで決まらなければ上書き表から）"""
    override = LEVEL_LABEL_OVERRIDES.get((K.label, level.key))
    if override:
        return override
    if ideals_of_norm(K, level.norm()) == 1:
        return f"{level.norm()}.1"
    return None


def _select_level_rows(K: FieldSpec, level: FactoredIdeal, rows: List[Dict]) -> List[Dict]:
    label = level_label_for(K, level)
    if label is None:
        labels = sorted({r.get("level_label") for r in rows})
        if len(labels) > 1:
            raise SchemaMismatch(
                f"{K.label} レベル {level}", f"ノルムが同じレベルが複数あります: {labels}"
            )
        return rows
    return [r for r in rows if r.get("level_label") == label]


def _short_label(label: str) -> str:
    """"2.2.5.1-1280.1-a" → "1280.1-a\""""
    return label.split("-", 1)[1] if label.count("-") >= 2 else label


def hilbert_document(K: FieldSpec, level: FactoredIdeal, rows: List[Dict]) -> Dict[str, Any]:
    """hmf_forms の行を forms ドキュメントに翻訳"""
    selected = _select_level_rows(K, level, rows)
    forms = []
    for row in selected:
        primes = [translate_prime_label(K, text) for text in row.get("primes", [])]
        values = row.get("hecke_eigenvalues", [])
        eigenvalues = {P.label: str(v) for P, v in zip(primes, values)}
        poly = (row.get("hecke_polynomial") or "x").replace("**", "^")
        dimension = int(row.get("dimension", 1))
        forms.append(
            {
                "label": row["label"],
                "hecke_poly": poly,
                "variable": "e",
                "is_rational": dimension == 1,
                "eigenvalues": eigenvalues,
                "curve_class": _short_label(row["label"]) if dimension == 1 else None,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "forms",
        "field_label": K.label,
        "key": level.key,
        "level_norm": level.norm(),
        "provenance": "LMFDB hmf_forms",
        "complete": True,
        "new_dimension": sum(int(r.get("dimension", 1)) for r in selected),
        "forms": forms,
    }


def bianchi_eigenvalues(K: FieldSpec, row: Dict[str, Any]) -> Dict[str, str]:
    """hecke_eigs を素イデアルのラベルに対応させる

    行に素イデアル表記 (primes) があればそれに従う。なければ (ノルム, 根) 順に並べるが、
    同じノルムの分解素イデアルは順序が決まらないので捨てる。
    """
    eigs = row.get("hecke_eigs", [])
    labels = row.get("primes")
    if labels is not None:
        if len(labels) < len(eigs):
            raise DataGap(row["label"], f"#{len(labels) + 1}")
        primes = [translate_prime_label(K, text) for text in labels]
        return {P.label: str(v) for P, v in zip(primes, eigs) if v is not None}
    ordered = primes_up_to_norm(K, 1000)
    shared = Counter(P.norm for P in ordered)
    eigenvalues = {}
    dropped = []
    for P, v in zip(ordered, eigs):
        if v is None:
            continue
        if shared[P.norm] > 1:
            dropped.append(P.label)
            continue
        eigenvalues[P.label] = str(v)
    if dropped:
        logger.warning(f"{row['label']}: 素イデアルの順序が決まらない固有値を捨てました {dropped}")
    return eigenvalues


def bianchi_document(
    K: FieldSpec, level: FactoredIdeal, rows: List[Dict], dims: Optional[Dict]
) -> Dict[str, Any]:
    """bmf_forms の行を forms ドキュメントに翻訳"""
    forms = []
    for row in _select_level_rows(K, level, rows):
        eigenvalues = bianchi_eigenvalues(K, row)
        dimension = int(row.get("dimension", 1))
        forms.append(
            {
                "label": row["label"],
                "hecke_poly": "x" if dimension == 1 else row.get("hecke_poly", "x"),
                "variable": "e",
                "is_rational": dimension == 1,
                "eigenvalues": eigenvalues,
                "curve_class": _short_label(row["label"]) if dimension == 1 else None,
            }
        )
    new_dim = None
    if dims:
        new_dim = dims.get("new_dim")
        if new_dim is None:
            new_dim = dims.get("gl2_dims", {}).get("2", {}).get("new_dim")
    available = sum(int(r.get("dimension", 1)) for r in _select_level_rows(K, level, rows))
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "forms",
        "field_label": K.label,
        "key": level.key,
        "level_norm": level.norm(),
        "provenance": "LMFDB bmf_forms",
        "complete": new_dim is not None and new_dim == available,
        "new_dimension": new_dim,
        "forms": forms,
    }


def j_valuation_from_jinv(K: FieldSpec, P: PrimeIdeal, jinv) -> int:
    """LMFDB の jinv（w 基底の有理座標 "a/b,c/d"）から v_𝔭(j) を計算"""
    parts = jinv.split(",") if isinstance(jinv, str) else list(jinv)
    try:
        coords = [Rational(str(c).strip()) for c in parts]
    except (TypeError, ValueError, SympifyError) as e:
        raise SchemaMismatch(f"jinv {jinv}", str(e))
    coords += [Rational(0)] * (2 - len(coords))
    if all(c == 0 for c in coords):
        return INFINITE_VALUATION
    denominator = int(ilcm(*(c.q for c in coords)))
    numerator = K.element(int(coords[0] * denominator), int(coords[1] * denominator))
    return valuation(numerator, P) - valuation(denominator, P)


def curves_document(K: FieldSpec, class_label: str, rows: List[Dict]) -> Dict[str, Any]:
    """ec_nfcurves の行を curves ドキュメントに翻訳"""
    if not rows:
        raise MissingCurveData(f"{K.label}-{class_label}")
    two_primes = split_rational_prime(K, 2)
    curves = []
    for row in rows:
        if "jinv" not in row:
            raise SchemaMismatch(row.get("label", class_label), "jinv がありません")
        jv = {P.label: j_valuation_from_jinv(K, P, row["jinv"]) for P in two_primes}
        curves.append(
            {
                "label": row["label"],
                "conductor_norm": int(row.get("conductor_norm", 0)),
                "j_valuations": jv,
                "torsion": list(row.get("torsion_structure", [])),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "curves",
        "field_label": K.label,
        "key": class_label,
        "provenance": "LMFDB ec_nfcurves",
        "class_label": class_label,
        "curves": curves,
    }


# ---------------------------------------------------------------------------
# ストア
# ---------------------------------------------------------------------------


class NewformStore:
    """フィクスチャ → キャッシュ → LMFDB の順にデータを探す"""

    def __init__(
        self,
        provider: Optional[DataProvider] = None,
        fixture_dir=None,
        cache_dir=None,
        offline: Optional[bool] = None,
    ):
        if offline is None:
            offline = os.getenv("DFERMAT_OFFLINE", "false").lower() == "true"
        self.offline = offline
        self.fixture_dir = Path(fixture_dir or os.getenv("FIXTURE_DIR") or DEFAULT_FIXTURE_DIR)
        self.cache_dir = Path(cache_dir or os.getenv("CACHE_DIR", "cache"))
        self._provider = provider
        logger.debug(
            f"NewformStore: fixtures={self.fixture_dir} cache={self.cache_dir} offline={offline}"
        )

    @property
    def provider(self) -> DataProvider:
        if self._provider is None:
            self._provider = create_data_provider("offline" if self.offline else None)
        return self._provider

    def _local(self, field_label: str, kind: str, key: str) -> Optional[Dict[str, Any]]:
        for root, source in ((self.fixture_dir, "fixture"), (self.cache_dir, "cache")):
            path = document_path(root, field_label, kind, key)
            if path.exists():
                logger.debug(f"{source} から読み込み: {path}")
                return load_fixture(path)
        return None

    def _store(self, field_label: str, kind: str, key: str, doc: Dict[str, Any]) -> None:
        fetched_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        write_cache(CacheEntry((field_label, kind, key), doc, fetched_at, "remote"), self.cache_dir)

    async def fetch_newforms(self, K: FieldSpec, level: FactoredIdeal) -> LevelForms:
        doc = self._local(K.label, "forms", level.key)
        if doc is None:
            if self.offline:
                raise NotCached(f"{K.label}/forms/{level.key}")
            try:
                if K.is_real:
                    rows = await self.provider.fetch_hilbert_forms(K.label, level.norm())
                    doc = hilbert_document(K, level, rows)
                else:
                    rows = await self.provider.fetch_bianchi_forms(K.label, level.norm())
                    label = level_label_for(K, level) or f"{level.norm()}.1"
                    dims = await self.provider.fetch_bianchi_dimension(K.label, label)
                    doc = bianchi_document(K, level, rows, dims)
            except Exception as e:
                logger.error(f"{K.label} レベル {level} の取得に失敗しました: {e}")
                raise
            self._store(K.label, "forms", level.key, doc)
        result = forms_from_document(K, level, doc)
        if result.incomplete:
            logger.warning(
                f"{K.label} レベル {level} は不完全です "
                f"(新形式次元 {result.incomplete.new_dimension}, 取得 {result.incomplete.available})"
            )
        logger.info(f"{K.label} レベル {level} (ノルム {level.norm()}): {len(result.forms)} 個の形式")
        return result

    async def fetch_isogeny_class(self, K: FieldSpec, class_label: str) -> List[CurveRecord]:
        doc = self._local(K.label, "curves", class_label)
        if doc is None:
            if self.offline:
                raise NotCached(f"{K.label}/curves/{class_label}")
            rows = await self.provider.fetch_isogeny_class(K.label, class_label)
            doc = curves_document(K, class_label, rows)
            self._store(K.label, "curves", class_label, doc)
        curves = curves_from_document(doc)
        if not curves:
            raise MissingCurveData(f"{K.label}-{class_label}")
        return curves

    async def fetch_torsion(self, K: FieldSpec) -> Optional[TorsionRecord]:
        """取り込み済みのねじれ素数表（LMFDB にはないのでローカルのみ）"""
        doc = self._local(K.label, "torsion", TORSION_KEY)
        if doc is None:
            logger.warning(f"{K.label} のねじれ素数表がありません")
            return None
        return torsion_from_document(doc)

    async def aclose(self) -> None:
        if self._provider is not None and hasattr(self._provider, "aclose"):
            await self._provider.aclose()

    def manifest(self) -> Dict[str, Any]:
        path = self.fixture_dir / "manifest.json"
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaMismatch(str(path), str(e))
        except OSError as e:
            raise FixtureIoError(str(path), str(e))


async def fetch_newforms(store: NewformStore, K: FieldSpec, level: FactoredIdeal) -> LevelForms:
    return await store.fetch_newforms(K, level)


async def fetch_isogeny_class(
    store: NewformStore, K: FieldSpec, class_label: str
) -> List[CurveRecord]:
    return await store.fetch_isogeny_class(K, class_label)
