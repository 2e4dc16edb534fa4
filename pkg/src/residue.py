import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from sympy import factorint

from src.errors import ModulusTooLarge
from src.quadfield import (
    AlgebraicInteger,
    FactoredIdeal,
    FieldSpec,
    IdealLattice,
    real_embeddings_signs,
    split_rational_prime,
    unit_generators,
)

logger = logging.getLogger(__name__)

# 列挙する剰余環のノルム上限
ENUMERATION_LIMIT = 2**16

# 余核の代表元（ω 座標）。出典文字列はレポートの監査用
TABULATED_REPRESENTATIVES: Dict[int, Tuple[str, Tuple[Tuple[int, int], ...]]] = {
    3: ("published", ((1, 0), (-1, 2))),
    5: ("published", ((1, 0), (3, 1))),
    7: ("published", ((1, 0), (-21, -8), (-1, 2), (37, 14))),
    11: ("published", ((1, 0), (-1, 2))),
    13: ("published", ((1, 0), (1, 4))),
    19: ("published", ((1, 0), (-1, 2))),
    23: ("published", ((1, 0), (-115, -24), (-1, 2), (163, 34))),
    -3: ("published", ((1, 0), (-2, 3), (1, 4), (2, -1))),
    -11: ("published", ((1, 0), (-1, 1), (-3, 4), (-1, -3))),
    -19: ("published", ((1, 0), (-3, 1), (-3, 4), (-3, -3))),
    -43: ("published", ((1, 0), (1, 4), (4, 3), (0, -1))),
    # 2 が分解する体や係数付き変種で使う代表系
    6: ("curated", ((1, 0), (3, 1))),
    14: ("curated", ((1, 0), (1, 1), (1, 3), (3, 2))),
    17: ("curated", ((1, 0), (1, 2), (1, 4), (1, 6))),
    21: ("curated", ((1, 0), (0, 1), (1, 1), (1, 2))),
    29: ("curated", ((1, 0), (1, 1))),
}

Residue = Tuple[int, int]


@dataclass(frozen=True)
class QuotientRing:
    """剰余環 O_K/𝔟"""

    field: FieldSpec
    modulus: FactoredIdeal
    lattice: IdealLattice = field(repr=False)

    @classmethod
    def of(cls, modulus: FactoredIdeal) -> "QuotientRing":
        norm = modulus.norm()
        if norm > ENUMERATION_LIMIT:
            raise ModulusTooLarge(norm, ENUMERATION_LIMIT)
        return cls(modulus.field, modulus, modulus.lattice())

    @property
    def size(self) -> int:
        return self.lattice.norm()

    def reduce(self, z: AlgebraicInteger) -> Residue:
        r = self.lattice.reduce(z)
        return r.x, r.y

    def lift(self, r: Residue) -> AlgebraicInteger:
        return self.field.element(*r)

    def mul(self, a: Residue, b: Residue) -> Residue:
        return self.reduce(self.lift(a) * self.lift(b))

    def one(self) -> Residue:
        return self.reduce(self.field.one())

    def elements(self) -> List[Residue]:
        return [(z.x, z.y) for z in self.lattice.residues()]

    def is_unit(self, r: Residue) -> bool:
        z = self.lift(r)
        return not any(P.contains(z) for P in self.modulus.primes())

    def units(self) -> List[Residue]:
        return [r for r in self.elements() if self.is_unit(r)]

    def unit_count(self) -> int:
        """|(O/𝔟)^×| = N(𝔟)·Π(1 - 1/N(𝔭))"""
        count = self.size
        for P in self.modulus.primes():
            count = count // P.norm * (P.norm - 1)
        return count


@dataclass(frozen=True)
class CokernelPhi:
    """(O_K)^× → (O_K/𝔟)^×/平方 の余核"""

    group_invariants: Tuple[int, ...]
    representatives: Tuple[AlgebraicInteger, ...]
    ring: QuotientRing = field(repr=False)
    subgroup: FrozenSet[Residue] = field(repr=False)

    @property
    def order(self) -> int:
        order = 1
        for n in self.group_invariants:
            order *= n
        return order

    def class_of(self, z: AlgebraicInteger) -> Residue:
        """z の属する剰余類の標準代表（剰余）"""
        r = self.ring.reduce(z)
        return min(self.ring.mul(r, h) for h in self.subgroup)

    def same_class(self, u: AlgebraicInteger, v: AlgebraicInteger) -> bool:
        return self.class_of(u) == self.class_of(v)

    def coset(self, z: AlgebraicInteger) -> List[Residue]:
        r = self.ring.reduce(z)
        return sorted({self.ring.mul(r, h) for h in self.subgroup})


@dataclass(frozen=True)
class RayClassGroup:
    """射類群（有限部分と実素点の符号）"""

    modulus: FactoredIdeal
    infinite_places: Tuple[int, ...]
    invariants: Tuple[int, ...]

    @property
    def order(self) -> int:
        order = 1
        for n in self.invariants:
            order *= n
        return order

    @property
    def exponent(self) -> int:
        return self.invariants[-1] if self.invariants else 1

    @property
    def has_order_four_character(self) -> bool:
        return any(n % 4 == 0 for n in self.invariants)


def _closure(generators: Iterable, mul: Callable, identity) -> Set:
    """生成元から部分群を閉包として求める"""
    gens = list(set(generators))
    group = {identity}
    frontier = [identity]
    while frontier:
        nxt = []
        for h in frontier:
            for g in gens:
                x = mul(h, g)
                if x not in group:
                    group.add(x)
                    nxt.append(x)
        frontier = nxt
    return group


def _quotient_invariants(elements: List, subgroup: Set, mul: Callable) -> Tuple[int, ...]:
    """有限アーベル群 G/H の不変因子（n を割る位数の元の個数から決定）"""
    orders = []
    for g in elements:
        x, k = g, 1
        while x not in subgroup:
            x = mul(x, g)
            k += 1
        orders.append(k)
    quotient_order = len(elements) // len(subgroup)
    if quotient_order == 1:
        return ()
    primary: List[int] = []
    for ell in factorint(quotient_order):
        previous, j = 0, 1
        parts: List[int] = []
        while True:
            n = ell**j
            killed = sum(1 for o in orders if n % o == 0) // len(subgroup)
            s = 0
            while killed > 1:
                killed //= ell
                s += 1
            if s == previous:
                break
            parts.append(s - previous)
            previous, j = s, j + 1
        # parts[j-1] = 位数 ℓ^j 以上の巡回因子の個数
        for j in range(len(parts)):
            later = parts[j + 1] if j + 1 < len(parts) else 0
            primary.extend([ell ** (j + 1)] * (parts[j] - later))
    # 素冪成分を不変因子 d1 | d2 | ... にまとめる
    by_prime: Dict[int, List[int]] = {}
    for q in primary:
        (ell,) = factorint(q)
        by_prime.setdefault(ell, []).append(q)
    width = max(len(v) for v in by_prime.values())
    invariants = [1] * width
    for qs in by_prime.values():
        for i, q in enumerate(sorted(qs, reverse=True)):
            invariants[width - 1 - i] *= q
    return tuple(invariants)


def build_b_ideal(K: FieldSpec) -> FactoredIdeal:
    """𝔟 = Π_{𝔭|2} 𝔭^{2v_𝔭(2)+1}"""
    return FactoredIdeal.of(K, *((P, 2 * P.e + 1) for P in split_rational_prime(K, 2)))


def _unit_images(ring: QuotientRing) -> List[Residue]:
    return [ring.reduce(u) for u in unit_generators(ring.field)]


def _canonical_representative(cok_class: Set[Residue], ring: QuotientRing):
    """(|ノルム|, 座標) が最小となる小さな持ち上げを選ぶ"""
    L = ring.lattice
    best = None
    for r in cok_class:
        for i in (-1, 0):
            for j in (-1, 0):
                z = ring.field.element(r[0] + i * L.A, r[1] + i * L.B + j * L.C)
                key = (abs(z.norm()), abs(z.x) + abs(z.y), z.x, z.y)
                if best is None or key < best[0]:
                    best = (key, z)
    return best[1]


@lru_cache(maxsize=128)
def unit_square_cokernel(K: FieldSpec, b: FactoredIdeal) -> CokernelPhi:
    """Φ の余核を全列挙で計算"""
    ring = QuotientRing.of(b)
    units = ring.units()
    squares = {ring.mul(u, u) for u in units}
    subgroup = _closure(list(squares) + _unit_images(ring), ring.mul, ring.one())
    invariants = _quotient_invariants(units, subgroup, ring.mul)

    classes: Dict[Residue, Set[Residue]] = {}
    for u in units:
        key = min(ring.mul(u, h) for h in subgroup)
        classes.setdefault(key, set()).add(u)
    reps = sorted(
        (_canonical_representative(members, ring) for members in classes.values()),
        key=lambda z: (abs(z.norm()), abs(z.x) + abs(z.y), z.x, z.y),
    )
    logger.debug(f"d={K.d} 余核 {invariants} 代表元 {[str(r) for r in reps]}")
    return CokernelPhi(invariants, tuple(reps), ring, frozenset(subgroup))


def tabulated_representatives(K: FieldSpec) -> Optional[Tuple[str, List[AlgebraicInteger]]]:
    """表にある代表元（出典, 元のリスト）"""
    entry = TABULATED_REPRESENTATIVES.get(K.d)
    if entry is None:
        return None
    source, coords = entry
    return source, [K.element(x, y) for x, y in coords]


def is_complete_system(cokernel: CokernelPhi, reps: List[AlgebraicInteger]) -> bool:
    """reps が余核の完全代表系になっているか"""
    if len(reps) != cokernel.order:
        return False
    if not all(cokernel.ring.is_unit(cokernel.ring.reduce(z)) for z in reps):
        return False
    return len({cokernel.class_of(z) for z in reps}) == cokernel.order


def orbit_discriminants(
    K: FieldSpec, cokernel: CokernelPhi
) -> Dict[AlgebraicInteger, FrozenSet[Tuple[int, ...]]]:
    """各剰余類の中で現れる局所判別式の付値ベクトル"""
    from src.local2 import sqrt_ext_disc_valuation

    primes = split_rational_prime(K, 2)
    result = {}
    for rep in cokernel.representatives:
        vectors = set()
        for r in cokernel.coset(rep):
            z = cokernel.ring.lift(r)
            vectors.add(tuple(sqrt_ext_disc_valuation(K, P, z) for P in primes))
        result[rep] = frozenset(vectors)
    return result


def ray_class_group(
    K: FieldSpec, m: FactoredIdeal, inf: Iterable[int] = ()
) -> RayClassGroup:
    """射類群 (O/m)^× × {±1}^inf を大域単数の像で割った群"""
    places = tuple(sorted(set(inf)))
    if places and not K.is_real:
        raise ValueError("虚二次体に実素点はありません")
    ring = QuotientRing.of(m)

    def signs(z: AlgebraicInteger) -> Tuple[int, ...]:
        if not places:
            return ()
        s = real_embeddings_signs(z)
        return tuple(s[i] for i in places)

    def mul(a, b):
        return ring.mul(a[0], b[0]), tuple(x * y for x, y in zip(a[1], b[1]))

    sign_vectors = [()]
    for _ in places:
        sign_vectors = [v + (s,) for v in sign_vectors for s in (1, -1)]
    elements = [(r, s) for r in ring.units() for s in sign_vectors]
    identity = (ring.one(), tuple(1 for _ in places))
    images = [(ring.reduce(u), signs(u)) for u in unit_generators(K)]
    subgroup = _closure(images, mul, identity)
    invariants = _quotient_invariants(elements, subgroup, mul)
    logger.debug(f"d={K.d} 射類群 法 {m} 実素点 {places}: {invariants}")
    return RayClassGroup(m, places, invariants)
