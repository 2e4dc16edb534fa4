"""dfermat-modular の例外階層"""


class DFermatError(Exception):
    """全例外の基底クラス"""


class InvalidInputError(DFermatError, ValueError):
    """入力値の検証エラー"""


# --- quadfield ---


class NotSquarefree(InvalidInputError):
    def __init__(self, d: int):
        self.d = d
        super().__init__(f"d={d} は平方因子を含むか 0/1 です")


class ClassNumberNotOne(InvalidInputError):
    def __init__(self, d: int):
        self.d = d
        super().__init__(f"Q(√{d}) は類数1の体ではありません")


class ZeroElement(InvalidInputError):
    def __init__(self):
        super().__init__("0 の付値は定義されません")


class ImaginaryField(InvalidInputError):
    def __init__(self, d: int):
        self.d = d
        super().__init__(f"Q(√{d}) は虚二次体なので基本単数はありません")


class UnitSearchExhausted(DFermatError):
    def __init__(self, d: int, limit: int):
        super().__init__(f"d={d} の基本単数探索が {limit} 回で終わりませんでした")


class NonPrincipalPrime(DFermatError):
    def __init__(self, label: str):
        super().__init__(f"素イデアル {label} の生成元が見つかりません")


# --- residue ---


class ModulusTooLarge(InvalidInputError):
    def __init__(self, norm: int, limit: int):
        super().__init__(f"法のノルム {norm} が列挙上限 {limit} を超えています")


# --- local2 ---


class OddValuation(InvalidInputError):
    def __init__(self, valuation: int):
        super().__init__(f"λ の付値 {valuation} が奇数です（平方部分を先に除去してください）")


class PreconditionViolated(InvalidInputError):
    def __init__(self, message: str):
        super().__init__(message)


# --- frey ---


class DegenerateTriple(InvalidInputError):
    def __init__(self, A, B):
        super().__init__(f"A·B·(A+B) = 0 です: A={A}, B={B}")


class NormalizationMissing(InvalidInputError):
    def __init__(self, message: str):
        super().__init__(message)


class UnsupportedField(InvalidInputError):
    def __init__(self, d: int, reason: str = ""):
        self.d = d
        suffix = f": {reason}" if reason else ""
        super().__init__(f"d={d} はサポート対象外です{suffix}")


# --- galois ---


class UnsupportedPrime(InvalidInputError):
    def __init__(self, p: int):
        super().__init__(f"p={p} のモジュラー曲線表はありません（7, 11, 13, 17 のみ）")


class UnsupportedCase(InvalidInputError):
    def __init__(self, message: str):
        super().__init__(message)


# --- numfield ---


class ReducibleDefiningPolynomial(InvalidInputError):
    def __init__(self, poly: str):
        super().__init__(f"定義多項式 {poly} は既約ではありません")


# --- newforms ---


class DataError(DFermatError):
    """データ取得・読込に関するエラーの基底"""


class NetworkError(DataError):
    def __init__(self, url: str, reason: str):
        self.url = url
        super().__init__(f"LMFDB への接続に失敗しました: {url} ({reason})")


class NotCached(DataError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"オフラインモードでキャッシュ/フィクスチャがありません: {key}")


class SchemaMismatch(DataError):
    def __init__(self, where: str, reason: str):
        self.where = where
        super().__init__(f"スキーマ不一致 {where}: {reason}")


class FixtureIoError(DataError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"ファイル入出力エラー {path}: {reason}")


class HeckeBoundViolation(DataError):
    def __init__(self, label: str, prime: str, value: int):
        super().__init__(
            f"{label} の固有値 a_{prime}={value} が Hecke 上界を超えています"
        )


class MissingCurveData(DataError):
    def __init__(self, label: str):
        super().__init__(f"{label} に対応する楕円曲線データがありません")


# --- eliminate ---


class DataGap(DataError):
    def __init__(self, label: str, prime: str):
        self.label = label
        self.prime = prime
        super().__init__(f"{label} の固有値 a_{prime} がありません")


class ZeroDifference(DFermatError):
    def __init__(self, branch: str, a: int):
        self.branch = branch
        self.a = a
        super().__init__(f"{branch} 分岐で差が 0 になりました (a={a})")


class IncompleteData(DataError):
    def __init__(self, levels):
        self.levels = list(levels)
        super().__init__(f"不完全なレベルがあります: {', '.join(self.levels)}")
