import argparse
import asyncio
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from src.eliminate import (
    ELIMINATED_BY_CF,
    ELIMINATED_BY_INERTIA,
    BoundExpression,
    EliminationEngine,
)
from src.errors import DataError, DFermatError, InvalidInputError, NotCached
from src.frey import EVEN_ABC, ODD_ABC, POLICIES, lowered_level
from src.galois import (
    ASSUMPTION_P_1_MOD_4,
    ASSUMPTION_P_3_MOD_4,
    ASSUMPTION_P_SPLITS,
    ODD_ABC_EXPONENT_POLY,
    frobenius_charpoly_candidates,
    resultant_prime_bound,
)
from src.newforms import NewformStore, document_path, load_fixture
from src.quadfield import FactoredIdeal, make_field, split_rational_prime
from src.report import (
    EXIT_DATA_GAP,
    EXIT_OK,
    EXIT_UNRESOLVED,
    EXIT_USAGE,
    build_field_profile,
    dump_json,
    hard_data_gaps,
    ledger_exit_code,
    profile_to_dict,
    render_bound,
    render_json,
    render_profile,
    render_report,
    summarize,
)

load_dotenv()

logger = logging.getLogger(__name__)


def configure_logging() -> None:
    """ログ設定（標準出力はレポート専用なのでストリームは stderr）"""
    log_level = getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper())
    log_file = os.getenv("LOG_FILE", "dfermat.log")

    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file, encoding="utf-8"),
            logging.StreamHandler(sys.stderr),
        ],
    )


class CliParser(argparse.ArgumentParser):
    """使い方の誤りを終了コード 4 で返すパーサー"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: エラー: {message}\n")


def build_parser() -> CliParser:
    data = CliParser(add_help=False)
    data.add_argument("--offline", action="store_true", help="ネットワークを使わない")
    data.add_argument("--fixtures", metavar="PATH", help="フィクスチャのディレクトリ")
    data.add_argument("--cache", metavar="PATH", help="キャッシュのディレクトリ")

    parser = CliParser(
        prog="dfermat",
        description="x^p + y^p = d^r z^p の係数体上のモジュラー法",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    profile = sub.add_parser("field-profile", help="体の基本データを表示")
    profile.add_argument("-d", type=int, required=True, help="平方因子を含まない整数 d")
    profile.add_argument("--policy", choices=POLICIES)
    profile.add_argument("--json", action="store_true", help="JSON で出力")

    eliminate = sub.add_parser("eliminate", parents=[data], help="新形式の消去を実行")
    eliminate.add_argument("-d", type=int, required=True, help="平方因子を含まない整数 d")
    parity = eliminate.add_mutually_exclusive_group()
    parity.add_argument(
        "--even-abc", dest="parity_case", action="store_const", const=EVEN_ABC
    )
    parity.add_argument(
        "--odd-abc", dest="parity_case", action="store_const", const=ODD_ABC
    )
    eliminate.set_defaults(parity_case=EVEN_ABC)
    eliminate.add_argument(
        "--coefficient", type=int, metavar="L", help="l-Fermat 変形の係数（奇素数）"
    )
    eliminate.add_argument("--policy", choices=POLICIES)
    eliminate.add_argument("--p-divides-r", action="store_true", help="p | r の場合")
    eliminate.add_argument("--assume-split", action="store_true", help="p は K で分解")
    eliminate.add_argument("--assume-3mod4", action="store_true", help="p ≡ 3 (mod 4)")
    eliminate.add_argument("--assume-1mod4", action="store_true", help="p ≡ 1 (mod 4)")
    eliminate.add_argument(
        "--level-filter",
        metavar="KEYS",
        help="レベルのキーまたはノルムをカンマ区切りで指定",
    )
    eliminate.add_argument(
        "--strict", action="store_true", help="不完全なレベルがあればデータ欠損として終了"
    )
    eliminate.add_argument("--json", action="store_true", help="台帳を JSON で出力")

    sub.add_parser("verify-tables", parents=[data], help="同梱データで既知の値を照合")
    return parser


def _store(args) -> NewformStore:
    offline = True if getattr(args, "offline", False) else None
    return NewformStore(fixture_dir=args.fixtures, cache_dir=args.cache, offline=offline)


def _assumptions(args) -> List[str]:
    chosen = []
    if args.assume_split:
        chosen.append(ASSUMPTION_P_SPLITS)
    if args.assume_3mod4:
        chosen.append(ASSUMPTION_P_3_MOD_4)
    if args.assume_1mod4:
        chosen.append(ASSUMPTION_P_1_MOD_4)
    return chosen


def _level_filter(args) -> Optional[List[str]]:
    if not args.level_filter:
        return None
    return [k.strip() for k in args.level_filter.split(",") if k.strip()]


def cmd_field_profile(args) -> int:
    """体プロファイルを表示"""
    K = make_field(args.d)
    profile = build_field_profile(K, args.policy)
    if args.json:
        print(dump_json(profile_to_dict(profile)), end="")
    else:
        print(render_profile(profile), end="")
    return EXIT_OK


async def cmd_eliminate(args) -> int:
    """消去を実行して台帳を表示"""
    K = make_field(args.d)
    store = _store(args)
    engine = EliminationEngine(store)
    try:
        ledger = await engine.run(
            K,
            args.parity_case,
            coefficient=args.coefficient,
            p_divides_r=args.p_divides_r,
            policy=args.policy,
            assumptions=_assumptions(args),
            level_filter=_level_filter(args),
            strict=args.strict,
        )
    finally:
        await store.aclose()

    print(render_json(ledger) if args.json else render_report(ledger), end="")
    code = ledger_exit_code(ledger)
    logger.info(f"d={K.d} {args.parity_case}: 上界 {ledger.final_bound} (終了コード {code})")
    return code


# ---------------------------------------------------------------------------
# verify-tables
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    missing: bool = False

    def line(self) -> str:
        mark = "✓" if self.passed else "✗"
        return f"{mark} {self.name}" + (f": {self.detail}" if self.detail else "")


def _diff(name: str, expected: Any, actual: Any) -> str:
    return f"{name} 期待値 {expected} / 実際 {actual}"


def check_profiles(entries: Sequence[Dict[str, Any]]) -> List[CheckResult]:
    results = []
    for entry in entries:
        K = make_field(entry["d"])
        profile = build_field_profile(K)
        diffs = []
        if profile.b_key != entry["b"]:
            diffs.append(_diff("𝔟", entry["b"], profile.b_key))
        if profile.cokernel_order != entry["cokernel_order"]:
            diffs.append(_diff("余核の位数", entry["cokernel_order"], profile.cokernel_order))
        exponents = sorted({n for vec in profile.exponent_vectors for n in vec})
        if exponents != entry["exponents"]:
            diffs.append(_diff("導手指数", entry["exponents"], exponents))
        if "local_discriminants" in entry:
            local = sorted(n for v in profile.local_discriminants for n in v)
            if local != sorted(entry["local_discriminants"]):
                diffs.append(_diff("局所判別式", entry["local_discriminants"], local))
        results.append(CheckResult(f"体プロファイル d={K.d}", not diffs, "; ".join(diffs)))
    return results


def check_resultant(entry: Dict[str, Any]) -> CheckResult:
    m, c = ODD_ABC_EXPONENT_POLY
    polynomial = f"x^{m} - {c}"
    if entry["polynomial"] != polynomial:
        return CheckResult("終結式", False, _diff("多項式", entry["polynomial"], polynomial))
    candidates = [
        cand for cand in frobenius_charpoly_candidates(entry["norm"], 2) if cand.supersingular
    ]
    bound = resultant_prime_bound(m, c, candidates)
    ok = bound.max_prime == entry["bound"]
    return CheckResult(
        f"終結式 Res({polynomial}, P) の最大素因数",
        ok,
        "" if ok else _diff("最大素因数", entry["bound"], bound.max_prime),
    )


def check_serre_levels(ds: Sequence[int]) -> List[CheckResult]:
    results = []
    for d in ds:
        K = make_field(d)
        P = split_rational_prime(K, 2)[0]
        D = split_rational_prime(K, abs(d))[0]
        expected = FactoredIdeal.of(K, (P, 4), (D, 1))
        top = lowered_level(K, EVEN_ABC)[-1].level
        ok = top.key == expected.key
        results.append(
            CheckResult(
                f"Serre 導手 d={d}: 𝔭⁴𝔇",
                ok,
                "" if ok else _diff("レベル", expected, top),
            )
        )
    return results


def check_documents(store: NewformStore, documents: Dict[str, Any]) -> List[CheckResult]:
    counted = {"forms": "forms", "curves": "curves", "torsion": "primes"}
    results = []
    for name, meta in sorted(documents.items()):
        field_label, kind, key = name.split("/", 2)
        path = document_path(store.fixture_dir, field_label, kind, key)
        if not path.exists():
            error = NotCached(name)
            logger.error(f"フィクスチャがありません: {path}")
            results.append(CheckResult(f"ドキュメント {name}", False, str(error), missing=True))
            continue
        try:
            doc = load_fixture(path)
        except DataError as e:
            results.append(CheckResult(f"ドキュメント {name}", False, str(e)))
            continue
        field = counted[kind]
        diffs = []
        if len(doc[field]) != meta[field]:
            diffs.append(_diff(field, meta[field], len(doc[field])))
        if kind == "forms" and doc["complete"] != meta["complete"]:
            diffs.append(_diff("complete", meta["complete"], doc["complete"]))
        if diffs:
            results.append(CheckResult(f"ドキュメント {name}", False, "; ".join(diffs)))
    if all(r.passed for r in results):
        results = [CheckResult(f"ドキュメント {len(documents)} 件", True)]
    return results


def _short_label(form_label: str) -> str:
    return form_label.split("-", 1)[1] if "-" in form_label else form_label


async def check_ledger(engine: EliminationEngine, entry: Dict[str, Any]) -> CheckResult:
    K = make_field(entry["d"])
    name = f"消去 d={K.d} {entry['parity_case']}"
    ledger = await engine.run(K, entry["parity_case"], coefficient=entry.get("coefficient"))
    code = ledger_exit_code(ledger)
    if code == EXIT_DATA_GAP and entry["exit_code"] != EXIT_DATA_GAP:
        return CheckResult(name, False, f"データ欠損 {hard_data_gaps(ledger)}", missing=True)

    diffs = []
    rendered = render_bound(ledger.final_bound)
    if rendered != entry["bound"]:
        diffs.append(_diff("上界", entry["bound"], rendered))
    if code != entry["exit_code"]:
        diffs.append(_diff("終了コード", entry["exit_code"], code))
    if "excluded" in entry and isinstance(ledger.final_bound, BoundExpression):
        excluded = list(ledger.final_bound.excluded_primes)
        if excluded != entry["excluded"]:
            diffs.append(_diff("除外素数", entry["excluded"], excluded))
    missing_flags = [f for f in entry.get("flags", []) if f not in ledger.assumptions]
    if missing_flags:
        diffs.append(f"フラグがありません: {missing_flags}")
    if "inertia" in entry:
        count = sum(1 for v in ledger.per_form if v.kind == ELIMINATED_BY_INERTIA)
        if count != entry["inertia"]:
            diffs.append(_diff("慣性群で消去", entry["inertia"], count))
    if "support" in entry:
        support = {p for v in ledger.per_form if v.kind == ELIMINATED_BY_CF for p in v.primes}
        if not support <= set(entry["support"]):
            diffs.append(_diff("C_f の素因数", entry["support"], sorted(support)))
    if "unresolved" in entry:
        unresolved = sorted(_short_label(v.form_label) for v in ledger.unresolved)
        if unresolved != sorted(entry["unresolved"]):
            diffs.append(_diff("未解決", entry["unresolved"], unresolved))
    if "incomplete" in entry and bool(ledger.incomplete_levels) != entry["incomplete"]:
        diffs.append(_diff("不完全なレベル", entry["incomplete"], list(ledger.incomplete_levels)))
    if diffs:
        return CheckResult(name, False, "; ".join(diffs))
    return CheckResult(name, True, summarize(ledger))


async def cmd_verify_tables(args) -> int:
    """同梱フィクスチャで表・上界・終結式を照合"""
    store = NewformStore(fixture_dir=args.fixtures, cache_dir=args.cache, offline=True)
    manifest = store.manifest()
    results: List[CheckResult] = []
    results.extend(check_profiles(manifest["profiles"]))
    results.append(check_resultant(manifest["resultant"]))
    results.extend(check_serre_levels([e["d"] for e in manifest["profiles"] if e["d"] < 0]))
    results.extend(check_documents(store, manifest["documents"]))
    engine = EliminationEngine(store)
    for entry in manifest["expected"]:
        results.append(await check_ledger(engine, entry))

    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} 件が一致")
    if any(not r.missing for r in failed):
        return EXIT_UNRESOLVED
    if failed:
        return EXIT_DATA_GAP
    return EXIT_OK


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """引数を解析してコマンドを実行し、終了コードを返す"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        if args.command == "field-profile":
            return cmd_field_profile(args)
        if args.command == "eliminate":
            return asyncio.run(cmd_eliminate(args))
        return asyncio.run(cmd_verify_tables(args))
    except (InvalidInputError, ValueError) as e:
        logger.error(f"入力エラー: {e}")
        print(f"エラー: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        logger.error(f"データエラー: {e}")
        print(f"データエラー: {e}", file=sys.stderr)
        return EXIT_DATA_GAP
    except DFermatError as e:
        logger.error(f"計算を続けられません: {e}", exc_info=True)
        print(f"エラー: {e}", file=sys.stderr)
        return EXIT_DATA_GAP


def main() -> None:
    configure_logging()
    try:
        sys.exit(run_cli())
    except KeyboardInterrupt:
        logger.info("中断しました")
        sys.exit(1)


if __name__ == "__main__":
    main()
