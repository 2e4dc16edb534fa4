import os
from unittest.mock import patch

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import ClassNumberNotOne, ImaginaryField, NotSquarefree, ZeroElement
from src.quadfield import (
    FactoredIdeal,
    find_generator,
    fundamental_unit,
    make_field,
    odd_primes_dividing,
    prime_above,
    primes_up_to_norm,
    real_embeddings_signs,
    split_rational_prime,
    torsion_units,
    unit_generators,
    valuation,
)

FIELDS = (3, 5, 7, 11, 13, 17, 19, 23, -3, -11, -19, -43, -67)

coords = st.integers(min_value=-50, max_value=50)


class TestMakeField:
    def test_real_sqrt_basis(self):
        """d ≡ 3 (mod 4) は Z[√d]"""
        K = make_field(3)
        assert K.basis_mode == "sqrt_d"
        assert K.discriminant == 12
        assert K.label == "2.2.12.1"
        assert K.is_real

    def test_half_integer_basis(self):
        """d ≡ 1 (mod 4) は Z[(1+√d)/2]"""
        K = make_field(5)
        assert K.basis_mode == "half_integer"
        assert K.discriminant == 5
        assert K.label == "2.2.5.1"
        assert K.defining_polynomial == "x^2 - x - 1"

    def test_imaginary_label(self):
        """虚二次体のラベル"""
        assert make_field(-3).label == "2.0.3.1"
        assert make_field(-1).label == "2.0.4.1"
        assert not make_field(-43).is_real

    @pytest.mark.parametrize("d", [0, 1, 12, -4, 18])
    def test_not_squarefree(self, d):
        """平方因子を含む d はエラー"""
        with pytest.raises(NotSquarefree):
            make_field(d)

    def test_class_number_not_one(self):
        """類数が1でない体はエラー"""
        with pytest.raises(ClassNumberNotOne):
            make_field(10)
        with pytest.raises(ClassNumberNotOne):
            make_field(-5)

    def test_extra_class_number_one_env(self):
        """環境変数で類数1の表を上書きできる"""
        with patch.dict(os.environ, {"EXTRA_CLASS_NUMBER_ONE": "10, 15"}):
            assert make_field(10).d == 10

    def test_errors_are_value_errors(self):
        """入力エラーは ValueError としても捕まえられる"""
        with pytest.raises(ValueError):
            make_field(10)


class TestArithmetic:
    @settings(max_examples=200)
    @given(
        d=st.sampled_from(FIELDS),
        a=st.tuples(coords, coords),
        b=st.tuples(coords, coords),
        c=st.tuples(coords, coords),
    )
    def test_ring_axioms(self, d, a, b, c):
        """結合法則・分配法則・ノルムの乗法性"""
        K = make_field(d)
        x, y, z = K.element(*a), K.element(*b), K.element(*c)
        assert (x * y) * z == x * (y * z)
        assert x * (y + z) == x * y + x * z
        assert x * y == y * x
        assert (x * y).norm() == x.norm() * y.norm()
        assert x * x.conjugate() == K.element(x.norm())
        assert x - x == K.element(0)

    def test_power(self):
        """冪乗"""
        K = make_field(2)
        u = K.element(1, 1)
        assert u**2 == K.element(3, 2)
        assert u**0 == K.one()
        with pytest.raises(ValueError):
            u ** (-1)

    def test_div_exact(self):
        """整数環の中での割り算"""
        K = make_field(-1)
        z = K.element(3, 4)
        w = K.element(1, 2)
        assert (z * w).div_exact(w) == z
        assert K.element(1).div_exact(K.element(2)) is None

    def test_str(self):
        """文字列表現"""
        K = make_field(3)
        assert str(K.element(2, 1)) == "2+√3"
        assert str(K.element(0, -1)) == "-√3"
        assert str(make_field(5).element(1, -2)) == "1-2ω"


class TestPrimes:
    def test_two_inert_in_q_sqrt5(self):
        """Q(√5) で 2 は惰性"""
        (P,) = split_rational_prime(make_field(5), 2)
        assert P.split_type == "inert"
        assert P.norm == 4
        assert P.label == "4"

    def test_two_ramified_in_q_sqrt3(self):
        """Q(√3) で 2 と 3 は分岐"""
        K = make_field(3)
        (P,) = split_rational_prime(K, 2)
        assert (P.split_type, P.e, P.label) == ("ramified", 2, "2.1")
        assert split_rational_prime(K, 3)[0].label == "3.0"

    def test_two_splits_in_q_sqrt17(self):
        """Q(√17) で 2 は分解"""
        K = make_field(17)
        labels = [P.label for P in split_rational_prime(K, 2)]
        assert labels == ["2.0", "2.1"]
        assert split_rational_prime(K, 17)[0].label == "17.9"

    def test_imaginary_labels(self):
        """Q(√-3) での 2 と 3"""
        K = make_field(-3)
        assert split_rational_prime(K, 2)[0].label == "4"
        assert split_rational_prime(K, 3)[0].label == "3.2"

    def test_primes_up_to_norm(self):
        """ノルム < 20 の素イデアル"""
        norms = [P.norm for P in primes_up_to_norm(make_field(5), 20)]
        assert norms == [4, 5, 9, 11, 11, 19, 19]

    def test_odd_primes_dividing(self):
        """奇素因子の上の素イデアル"""
        K = make_field(-11)
        assert [P.residue_char for P in odd_primes_dividing(K, 12)] == [3, 3]

    @pytest.mark.parametrize("d", FIELDS)
    def test_generators(self, d):
        """単項イデアルの生成元"""
        K = make_field(d)
        for P in primes_up_to_norm(K, 60):
            g = find_generator(P)
            assert abs(g.norm()) == P.norm
            assert P.contains(g)


class TestValuation:
    def test_valuation_of_two(self):
        """v_𝔭(2) = e"""
        assert valuation(2, split_rational_prime(make_field(3), 2)[0]) == 2
        assert valuation(8, split_rational_prime(make_field(5), 2)[0]) == 3

    def test_zero_raises(self):
        """0 の付値はエラー"""
        with pytest.raises(ZeroElement):
            valuation(0, split_rational_prime(make_field(5), 2)[0])

    @settings(max_examples=150)
    @given(
        d=st.sampled_from(FIELDS),
        a=st.tuples(coords, coords),
        b=st.tuples(coords, coords),
    )
    def test_valuation_is_additive(self, d, a, b):
        """v(xy) = v(x) + v(y)"""
        K = make_field(d)
        x, y = K.element(*a), K.element(*b)
        if not x or not y:
            return
        for P in primes_up_to_norm(K, 12):
            assert valuation(x * y, P) == valuation(x, P) + valuation(y, P)


class TestUnits:
    def test_fundamental_units(self):
        """連分数による基本単数"""
        assert fundamental_unit(make_field(2)) == make_field(2).element(1, 1)
        assert fundamental_unit(make_field(3)) == make_field(3).element(2, 1)
        assert fundamental_unit(make_field(5)) == make_field(5).omega()

    @pytest.mark.parametrize("d", [6, 7, 13, 14, 19, 21, 23, 29, 94])
    def test_fundamental_unit_is_unit(self, d):
        """基本単数のノルムは ±1"""
        assert fundamental_unit(make_field(d)).is_unit()

    def test_imaginary_has_no_fundamental_unit(self):
        """虚二次体では基本単数はない"""
        with pytest.raises(ImaginaryField):
            fundamental_unit(make_field(-3))

    def test_roots_of_unity(self):
        """1 の冪根"""
        assert len(torsion_units(make_field(-3))) == 6
        assert len(torsion_units(make_field(-1))) == 4
        assert len(torsion_units(make_field(-11))) == 2
        assert unit_generators(make_field(-11)) == [make_field(-11).element(-1)]


class TestFactoredIdeal:
    def test_key_and_norm(self):
        """レベルキーとノルム"""
        K = make_field(5)
        P2 = split_rational_prime(K, 2)[0]
        P5 = split_rational_prime(K, 5)[0]
        N = FactoredIdeal.of(K, (P5, 1), (P2, 4))
        assert N.key == "4e4-5.3e1"
        assert N.norm() == 1280
        assert str(N) == "[4]^4·[5.3]"
        assert N.exponent(P2) == 4
        assert not N.is_coprime_to(P5)

    def test_merge(self):
        """同じ素イデアルの指数はまとめる"""
        K = make_field(-3)
        P = split_rational_prime(K, 2)[0]
        assert FactoredIdeal.of(K, (P, 1), (P, 2)).exponent(P) == 3
        assert FactoredIdeal.of(K).key == "1"

    def test_lattice_norm(self):
        """格子のノルムと一致"""
        K = make_field(-11)
        pairs = [(P, 2) for P in split_rational_prime(K, 3)]
        N = FactoredIdeal.of(K, *pairs)
        assert N.lattice().norm() == N.norm() == 81


class TestConversions:
    def test_from_sqrt(self):
        """x + y√d 表記からの変換"""
        K = make_field(5)
        assert K.from_sqrt(1, 1, 2) == K.omega()
        assert make_field(3).from_sqrt(2, 1) == make_field(3).element(2, 1)
        with pytest.raises(ValueError):
            K.from_sqrt(1, 0, 2)

    def test_from_omega(self):
        """ω 座標と √d 表記は同じ元を表す"""
        K = make_field(-3)
        assert K.from_omega(0, 1) == K.omega()
        assert K.from_omega(-1, 2) == K.from_sqrt(0, 1)

    def test_real_embedding_signs(self):
        """実埋め込みでの符号（浮動小数点なし）"""
        K = make_field(2)
        assert real_embeddings_signs(K.element(1, 1)) == (1, -1)
        assert real_embeddings_signs(K.element(-3, 2)) == (-1, -1)
        with pytest.raises(ImaginaryField):
            real_embeddings_signs(make_field(-3).one())

    def test_prime_above(self):
        """分解しない素数の上の素イデアル"""
        assert prime_above(make_field(5), 2).label == "4"
        with pytest.raises(ValueError):
            prime_above(make_field(17), 2)
