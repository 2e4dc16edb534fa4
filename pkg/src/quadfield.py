import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, List, Optional, Tuple, Union

from sympy import factorint, primerange
from sympy.ntheory.residue_ntheory import sqrt_mod

from src.errors import (
    ClassNumberNotOne,
    ImaginaryField,
    NonPrincipalPrime,
    NotSquarefree,
    UnitSearchExhausted,
    ZeroElement,
)

logger = logging.getLogger(__name__)

# 類数1の虚二次体（Baker–Heegner–Stark）
IMAGINARY_CLASS_NUMBER_ONE = (-1, -2, -3, -7, -11, -19, -43, -67, -163)

# 類数1の実二次体 Q(√d), d ≤ 200
REAL_CLASS_NUMBER_ONE = (
    2, 3, 5, 6, 7, 11, 13, 14, 17, 19, 21, 22, 23, 29, 31, 33, 37, 38, 41, 43,
    46, 47, 53, 57, 59, 61, 62, 67, 69, 71, 73, 77, 83, 86, 89, 93, 94, 97, 101,
    103, 107, 109, 113, 118, 127, 129, 131, 133, 134, 137, 139, 141, 149, 151,
    157, 158, 161, 163, 166, 167, 173, 177, 179, 181, 191, 193, 197, 199,
)  # fmt: skip

FUNDAMENTAL_UNIT_MAX_STEPS = 10**6


def _extra_class_number_one() -> Tuple[int, ...]:
    """EXTRA_CLASS_NUMBER_ONE 環境変数から追加の d を読み込む"""
    raw = os.getenv("EXTRA_CLASS_NUMBER_ONE", "")
    values = []
    for item in raw.split(","):
        item = item.strip()
        if item:
            values.append(int(item))
    return tuple(values)


def is_squarefree(d: int) -> bool:
    if d in (0, 1):
        return False
    return all(e == 1 for e in factorint(abs(d)).values())


@dataclass(frozen=True)
class FieldSpec:
    """二次体 Q(√d) と整数環の基底 {1, ω}"""

    d: int
    discriminant: int
    basis_mode: str  # "sqrt_d" | "half_integer"
    signature: str  # "real" | "imaginary"
    class_number_one: bool = True

    @property
    def omega_trace(self) -> int:
        """ω² = tr·ω + nn の tr"""
        return 1 if self.basis_mode == "half_integer" else 0

    @property
    def omega_norm(self) -> int:
        """ω² = tr·ω + nn の nn"""
        return (self.d - 1) // 4 if self.basis_mode == "half_integer" else self.d

    @property
    def is_real(self) -> bool:
        return self.signature == "real"

    @property
    def label(self) -> str:
        """LMFDB 形式の体ラベル"""
        if self.is_real:
            return f"2.2.{self.discriminant}.1"
        return f"2.0.{abs(self.discriminant)}.1"

    @property
    def defining_polynomial(self) -> str:
        if self.basis_mode == "half_integer":
            c = -self.omega_norm
            sign = "+" if c >= 0 else "-"
            return f"x^2 - x {sign} {abs(c)}"
        sign = "-" if self.d > 0 else "+"
        return f"x^2 {sign} {abs(self.d)}"

    def element(self, x: int, y: int = 0) -> "AlgebraicInteger":
        return AlgebraicInteger(x, y, self)

    def one(self) -> "AlgebraicInteger":
        return AlgebraicInteger(1, 0, self)

    def omega(self) -> "AlgebraicInteger":
        return AlgebraicInteger(0, 1, self)

    def from_sqrt(self, u: int, v: int, denominator: int = 1) -> "AlgebraicInteger":
        """(u + v√d)/denominator を ω 座標に変換"""
        # u + v√d = (u - v) + 2v·ω （half_integer の場合）
        if self.basis_mode == "half_integer":
            x, y = u - v, 2 * v
        else:
            x, y = u, v
        if x % denominator or y % denominator:
            raise ValueError(
                f"({u}+{v}√{self.d})/{denominator} は整数環の元ではありません"
            )
        return AlgebraicInteger(x // denominator, y // denominator, self)

    def from_omega(self, x: int, y: int) -> "AlgebraicInteger":
        """x + y·ω から元を作る"""
        return self.element(x, y)


def make_field(d: int) -> FieldSpec:
    """類数1の二次体を構成"""
    if not is_squarefree(d):
        raise NotSquarefree(d)
    supported = set(IMAGINARY_CLASS_NUMBER_ONE) | set(REAL_CLASS_NUMBER_ONE)
    supported |= set(_extra_class_number_one())
    if d not in supported:
        raise ClassNumberNotOne(d)
    if d % 4 == 1:
        basis_mode, discriminant = "half_integer", d
    else:
        basis_mode, discriminant = "sqrt_d", 4 * d
    signature = "real" if d > 0 else "imaginary"
    return FieldSpec(d, discriminant, basis_mode, signature)


IntLike = Union[int, "AlgebraicInteger"]


@dataclass(frozen=True)
class AlgebraicInteger:
    """整数環の元 x + y·ω"""

    x: int
    y: int
    field: FieldSpec = field(repr=False)

    def _coerce(self, other: IntLike) -> "AlgebraicInteger":
        if isinstance(other, AlgebraicInteger):
            return other
        if isinstance(other, int):
            return AlgebraicInteger(other, 0, self.field)
        return NotImplemented

    def __add__(self, other: IntLike) -> "AlgebraicInteger":
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return AlgebraicInteger(self.x + o.x, self.y + o.y, self.field)

    __radd__ = __add__

    def __neg__(self) -> "AlgebraicInteger":
        return AlgebraicInteger(-self.x, -self.y, self.field)

    def __sub__(self, other: IntLike) -> "AlgebraicInteger":
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return AlgebraicInteger(self.x - o.x, self.y - o.y, self.field)

    def __rsub__(self, other: IntLike) -> "AlgebraicInteger":
        return (-self) + other

    def __mul__(self, other: IntLike) -> "AlgebraicInteger":
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        tr, nn = self.field.omega_trace, self.field.omega_norm
        yy = self.y * o.y
        return AlgebraicInteger(
            self.x * o.x + nn * yy,
            self.x * o.y + self.y * o.x + tr * yy,
            self.field,
        )

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "AlgebraicInteger":
        if n < 0:
            raise ValueError("負の冪は整数環の外に出ます")
        result = self.field.one()
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __bool__(self) -> bool:
        return bool(self.x or self.y)

    def norm(self) -> int:
        tr, nn = self.field.omega_trace, self.field.omega_norm
        return self.x * self.x + tr * self.x * self.y - nn * self.y * self.y

    def trace(self) -> int:
        return 2 * self.x + self.field.omega_trace * self.y

    def conjugate(self) -> "AlgebraicInteger":
        tr = self.field.omega_trace
        return AlgebraicInteger(self.x + tr * self.y, -self.y, self.field)

    def is_unit(self) -> bool:
        return abs(self.norm()) == 1

    def is_rational(self) -> bool:
        return self.y == 0

    def div_int(self, n: int) -> Optional["AlgebraicInteger"]:
        """有理整数 n で割り切れれば商を返す"""
        if self.x % n or self.y % n:
            return None
        return AlgebraicInteger(self.x // n, self.y // n, self.field)

    def div_exact(self, other: IntLike) -> Optional["AlgebraicInteger"]:
        """整数環の中で割り切れれば商を返す"""
        o = self._coerce(other)
        n = o.norm()
        if n == 0:
            raise ZeroElement()
        return (self * o.conjugate()).div_int(n)

    def sqrt_coordinates(self) -> Tuple[int, int, int]:
        """(u, v, den) で x + yω = (u + v√d)/den"""
        if self.field.basis_mode == "half_integer":
            return 2 * self.x + self.y, self.y, 2
        return self.x, self.y, 1

    def __str__(self) -> str:
        if self.field.basis_mode == "half_integer":
            return _format_linear(self.x, self.y, "ω")
        return _format_linear(self.x, self.y, f"√{self.field.d}")


def _format_linear(x: int, y: int, symbol: str) -> str:
    if y == 0:
        return str(x)
    coeff = {1: "", -1: "-"}.get(y, str(y))
    tail = f"{coeff}{symbol}"
    if x == 0:
        return tail
    return f"{x}{tail}" if tail.startswith("-") else f"{x}+{tail}"


def exact_sign(u: int, v: int, d: int) -> int:
    """u + v√d (d > 0) の符号を浮動小数点なしで判定"""
    if v == 0 or u == 0:
        s = u if v == 0 else v
        return (s > 0) - (s < 0)
    if (u > 0) == (v > 0):
        return 1 if u > 0 else -1
    # 符号が異なるので u² と v²d の大小で決まる
    if u * u > v * v * d:
        return 1 if u > 0 else -1
    return 1 if v > 0 else -1


def real_embeddings_signs(x: AlgebraicInteger) -> Tuple[int, int]:
    """二つの実埋め込み (√d ↦ ±√d) での符号"""
    K = x.field
    if not K.is_real:
        raise ImaginaryField(K.d)
    u, v, _ = x.sqrt_coordinates()
    return exact_sign(u, v, K.d), exact_sign(u, -v, K.d)


# ---------------------------------------------------------------------------
# Z-格子としてのイデアル
# ---------------------------------------------------------------------------


def _egcd(a: int, b: int) -> Tuple[int, int, int]:
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


@dataclass(frozen=True)
class IdealLattice:
    """ω 座標の Hermite 標準形 {(A, B), (0, C)}"""

    A: int
    B: int
    C: int
    field: FieldSpec = field(repr=False)

    @classmethod
    def from_vectors(cls, K: FieldSpec, vectors) -> "IdealLattice":
        A = B = C = 0
        for x, y in vectors:
            if x == 0:
                C = math.gcd(C, y)
                continue
            if A == 0:
                A, B = x, y
                continue
            g, s, t = _egcd(A, x)
            # 第一座標が 0 になる組み合わせは C に吸収
            C = math.gcd(C, (x // g) * B - (A // g) * y)
            A, B = g, s * B + t * y
        if A < 0:
            A, B = -A, -B
        C = abs(C)
        if A == 0 or C == 0:
            raise ValueError("階数2の格子ではありません（0 イデアル）")
        return cls(A, B % C, C, K)

    @classmethod
    def from_generators(cls, K: FieldSpec, generators) -> "IdealLattice":
        omega = K.omega()
        vectors = []
        for g in generators:
            g = K.element(g) if isinstance(g, int) else g
            for h in (g, g * omega):
                vectors.append((h.x, h.y))
        return cls.from_vectors(K, vectors)

    @classmethod
    def unit(cls, K: FieldSpec) -> "IdealLattice":
        return cls(1, 0, 1, K)

    def basis(self) -> Tuple[AlgebraicInteger, AlgebraicInteger]:
        K = self.field
        return K.element(self.A, self.B), K.element(0, self.C)

    def norm(self) -> int:
        return self.A * self.C

    def __mul__(self, other: "IdealLattice") -> "IdealLattice":
        gens = [a * b for a in self.basis() for b in other.basis()]
        return IdealLattice.from_generators(self.field, gens)

    def __pow__(self, n: int) -> "IdealLattice":
        result = IdealLattice.unit(self.field)
        for _ in range(n):
            result = result * self
        return result

    def reduce(self, z: AlgebraicInteger) -> AlgebraicInteger:
        """剰余類の標準代表 (0 ≤ x < A, 0 ≤ y < C)"""
        k = z.x // self.A
        y = (z.y - k * self.B) % self.C
        return AlgebraicInteger(z.x - k * self.A, y, self.field)

    def contains(self, z: AlgebraicInteger) -> bool:
        if z.x % self.A:
            return False
        return (z.y - (z.x // self.A) * self.B) % self.C == 0

    def residues(self) -> Iterator[AlgebraicInteger]:
        K = self.field
        for x in range(self.A):
            for y in range(self.C):
                yield AlgebraicInteger(x, y, K)


# ---------------------------------------------------------------------------
# 素イデアル
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrimeIdeal:
    """整数環の素イデアル（二元生成表示）"""

    residue_char: int
    split_type: str  # "split" | "inert" | "ramified"
    norm: int
    e: int
    f: int
    root: Optional[int]
    field: FieldSpec = field(repr=False)

    @property
    def label(self) -> str:
        if self.f == 2:
            return str(self.norm)
        return f"{self.norm}.{self.root}"

    @property
    def generators(self) -> Tuple[AlgebraicInteger, ...]:
        K = self.field
        q = K.element(self.residue_char)
        if self.f == 2:
            return (q,)
        return (q, K.omega() - self.root)

    def lattice(self) -> IdealLattice:
        return IdealLattice.from_generators(self.field, self.generators)

    def contains(self, z: AlgebraicInteger) -> bool:
        if self.f == 2:
            return z.x % self.residue_char == 0 and z.y % self.residue_char == 0
        return self.lattice().contains(z)

    def sort_key(self) -> Tuple[int, int]:
        return self.norm, -1 if self.root is None else self.root

    def __str__(self) -> str:
        return f"𝔮[{self.label}]"


def _omega_roots(K: FieldSpec, q: int) -> List[int]:
    """ω の最小多項式 t² - tr·t - nn の mod q での根"""
    tr, nn = K.omega_trace, K.omega_norm
    if q == 2:
        return [t for t in range(2) if (t * t - tr * t - nn) % 2 == 0]
    disc = (tr * tr + 4 * nn) % q
    half = pow(2, -1, q)
    roots = sqrt_mod(disc, q, all_roots=True) or []
    return sorted({((tr + s) * half) % q for s in roots})


@lru_cache(maxsize=4096)
def split_rational_prime(K: FieldSpec, q: int) -> List[PrimeIdeal]:
    """有理素数 q の分解"""
    roots = _omega_roots(K, q)
    if K.discriminant % q == 0:
        return [PrimeIdeal(q, "ramified", q, 2, 1, roots[0], K)]
    if len(roots) == 2:
        return [PrimeIdeal(q, "split", q, 1, 1, r, K) for r in roots]
    return [PrimeIdeal(q, "inert", q * q, 1, 2, None, K)]


def prime_above(K: FieldSpec, q: int) -> PrimeIdeal:
    """q の上の素イデアル（分岐・惰性のとき一意）"""
    primes = split_rational_prime(K, q)
    if len(primes) != 1:
        raise ValueError(f"{q} は Q(√{K.d}) で分解するので素イデアルは一意ではありません")
    return primes[0]


def primes_up_to_norm(K: FieldSpec, bound: int) -> List[PrimeIdeal]:
    """ノルム < bound の素イデアル（ノルム, ラベル順）"""
    primes = []
    for q in primerange(2, bound):
        primes.extend(P for P in split_rational_prime(K, q) if P.norm < bound)
    return sorted(primes, key=PrimeIdeal.sort_key)


def valuation(x: Union[int, AlgebraicInteger], P: PrimeIdeal) -> int:
    """𝔭 進付値（二元表示による厳密な割り算）"""
    K = P.field
    if isinstance(x, int):
        x = K.element(x)
    if not x:
        raise ZeroElement()
    q = P.residue_char
    if P.f == 2:
        v = 0
        while x.x % q == 0 and x.y % q == 0:
            x = AlgebraicInteger(x.x // q, x.y // q, K)
            v += 1
        return v
    # γ = conj(ω - r) は x ∈ 𝔭 ⇔ xγ ∈ qO を満たす
    gamma = (K.omega() - P.root).conjugate()
    v = 0
    while True:
        quotient = (x * gamma).div_int(q)
        if quotient is None:
            return v
        x = quotient
        v += 1


def fundamental_unit(K: FieldSpec) -> AlgebraicInteger:
    """連分数展開による基本単数（>1 となる実埋め込みで）"""
    if not K.is_real:
        raise ImaginaryField(K.d)
    return _fundamental_unit(K)


@lru_cache(maxsize=256)
def _fundamental_unit(K: FieldSpec) -> AlgebraicInteger:
    d = K.d
    root = math.isqrt(d)
    P0, Q0 = (1, 2) if K.basis_mode == "half_integer" else (0, 1)
    P, Q = P0, Q0
    h_prev, h = 0, 1
    k_prev, k = 1, 0
    for _ in range(FUNDAMENTAL_UNIT_MAX_STEPS):
        a = (P + root) // Q
        h_prev, h = h, a * h + h_prev
        k_prev, k = k, a * k + k_prev
        P = a * Q - P
        Q = (d - P * P) // Q
        if Q == Q0:
            unit = AlgebraicInteger(h - k * K.omega_trace, k, K)
            logger.debug(f"d={d} の基本単数: {unit} (ノルム {unit.norm()})")
            return unit
    raise UnitSearchExhausted(d, FUNDAMENTAL_UNIT_MAX_STEPS)


def torsion_units(K: FieldSpec) -> List[AlgebraicInteger]:
    """1 の冪根"""
    one = K.one()
    if K.d == -1:
        i = K.omega()
        return [one, i, -one, -i]
    if K.d == -3:
        w = K.omega()
        return [w**k for k in range(6)]
    return [one, -one]


def unit_generators(K: FieldSpec) -> List[AlgebraicInteger]:
    """単数群の生成元"""
    if K.is_real:
        return [-K.one(), fundamental_unit(K)]
    if K.d in (-1, -3):
        return [K.omega()]
    return [-K.one()]


@lru_cache(maxsize=1024)
def find_generator(P: PrimeIdeal, search_limit: int = 200000) -> AlgebraicInteger:
    """単項イデアル 𝔭 の生成元を探索"""
    K = P.field
    if P.f == 2:
        return K.element(P.residue_char)
    tr, nn = K.omega_trace, K.omega_norm
    targets = (P.norm, -P.norm) if K.is_real else (P.norm,)
    for y in range(0, search_limit):
        for target in targets:
            # x² + tr·x·y - nn·y² = target を x について解く
            disc = tr * tr * y * y + 4 * (nn * y * y + target)
            if disc < 0:
                continue
            s = math.isqrt(disc)
            if s * s != disc:
                continue
            for num in (-tr * y + s, -tr * y - s):
                if num % 2:
                    continue
                for cand in (K.element(num // 2, y), K.element(num // 2, -y)):
                    if abs(cand.norm()) == P.norm and P.contains(cand):
                        return cand
    raise NonPrincipalPrime(P.label)


@dataclass(frozen=True)
class FactoredIdeal:
    """素イデアル分解で表したイデアル"""

    field: FieldSpec
    factors: Tuple[Tuple[PrimeIdeal, int], ...] = ()

    @classmethod
    def of(cls, K: FieldSpec, *pairs: Tuple[PrimeIdeal, int]) -> "FactoredIdeal":
        merged = {}
        for P, e in pairs:
            if e:
                merged[P] = merged.get(P, 0) + e
        ordered = sorted(merged.items(), key=lambda item: item[0].sort_key())
        return cls(K, tuple(ordered))

    def norm(self) -> int:
        n = 1
        for P, e in self.factors:
            n *= P.norm**e
        return n

    def exponent(self, P: PrimeIdeal) -> int:
        return dict(self.factors).get(P, 0)

    def primes(self) -> List[PrimeIdeal]:
        return [P for P, _ in self.factors]

    def lattice(self) -> IdealLattice:
        result = IdealLattice.unit(self.field)
        for P, e in self.factors:
            result = result * (P.lattice() ** e)
        return result

    def __mul__(self, other: "FactoredIdeal") -> "FactoredIdeal":
        return FactoredIdeal.of(self.field, *self.factors, *other.factors)

    def is_coprime_to(self, P: PrimeIdeal) -> bool:
        return self.exponent(P) == 0

    @property
    def key(self) -> str:
        """ファイル名に使えるレベルキー"""
        if not self.factors:
            return "1"
        return "-".join(f"{P.label}e{e}" for P, e in self.factors)

    def __str__(self) -> str:
        if not self.factors:
            return "(1)"
        parts = []
        for P, e in self.factors:
            parts.append(f"[{P.label}]" + (f"^{e}" if e > 1 else ""))
        return "·".join(parts)


def odd_primes_dividing(K: FieldSpec, n: int) -> List[PrimeIdeal]:
    """n の奇素因子の上の素イデアル"""
    result = []
    for q in sorted(factorint(abs(n))):
        if q != 2:
            result.extend(split_rational_prime(K, q))
    return result
