import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from sympy import factorint

from src.errors import (
    DegenerateTriple,
    NormalizationMissing,
    PreconditionViolated,
    UnsupportedField,
)
from src.frey import (
    A6_HYPOTHESIS_FLAG,
    EVEN_ABC,
    ODD_ABC,
    FreySolution,
    SymbolicValuation,
    conductor,
    discriminant_valuation,
    invariants,
    lowered_level,
    potential_multiplicative_guard,
    reduction_type,
    serre_conductor,
    two_adic_exponent_options,
    validate_coefficient,
)
from src.quadfield import (
    FactoredIdeal,
    fundamental_unit,
    make_field,
    primes_up_to_norm,
    split_rational_prime,
    unit_generators,
    valuation,
)

FIELDS = (3, 5, 7, 11, 13, 19, 23, -3, -11, -19, -43)

small = st.integers(min_value=-30, max_value=30)
tiny = st.integers(min_value=-6, max_value=6)


class TestInvariants:
    @settings(max_examples=1000)
    @given(
        d=st.sampled_from(FIELDS),
        a=st.tuples(small, small),
        b=st.tuples(small, small),
    )
    def test_frey_identity(self, d, a, b):
        """c4³ - c6² = 1728Δ、Δ = 16(ABC)²"""
        K = make_field(d)
        A, B = K.element(*a), K.element(*b)
        assume(A and B and (A + B))
        inv = invariants(A, B)
        assert inv.check_identity()
        C = -A - B
        assert inv.Delta == (A * B * C) * (A * B * C) * 16

    def test_j_1728_for_equal_terms(self):
        """A = B なら j = 1728"""
        K = make_field(5)
        inv = invariants(K.one(), K.one())
        assert inv.j == (K.element(1728), K.one())

    def test_degenerate(self):
        """A·B·C = 0 はエラー"""
        K = make_field(5)
        with pytest.raises(DegenerateTriple):
            invariants(K.one(), K.element(-1))


class TestFreySolution:
    def test_validation(self):
        """r, p, パリティの検証"""
        K = make_field(5)
        with pytest.raises(ValueError):
            FreySolution(K, 0, EVEN_ABC)
        with pytest.raises(ValueError):
            FreySolution(K, 1, EVEN_ABC, p=4)
        with pytest.raises(ValueError):
            FreySolution(K, 1, "both")

    @settings(max_examples=500)
    @given(
        d=st.sampled_from(FIELDS),
        r=st.integers(min_value=1, max_value=40),
        p=st.sampled_from([5, 7, 11, 13, 17, 19, 23]),
        index=st.integers(min_value=0, max_value=200),
    )
    def test_p_divides_discriminant_away_from_2d(self, d, r, p, index):
        """2d を割らない 𝔮 では p | v_𝔮(Δ)"""
        K = make_field(d)
        primes = [
            q
            for q in primes_up_to_norm(K, 200)
            if q.residue_char != 2 and d % q.residue_char
        ]
        q = primes[index % len(primes)]
        sol = FreySolution(K, r, EVEN_ABC, abc_support=(q,))
        v = discriminant_valuation(sol, q)
        assert v.divisible_by_p()
        assert v.at(p) % p == 0

    def test_valuation_at_d(self):
        """𝔇 での付値は 2r·v(d) + 4v(2)"""
        K = make_field(-11)
        D = split_rational_prime(K, 11)[0]
        sol = FreySolution(K, 3, EVEN_ABC)
        assert discriminant_valuation(sol, D) == SymbolicValuation(12)


class TestConcreteTriples:
    @settings(max_examples=200)
    @given(
        d=st.sampled_from(FIELDS),
        r=st.integers(min_value=1, max_value=3),
        p=st.sampled_from([3, 5, 7]),
        a=st.tuples(tiny, tiny),
        b=st.tuples(tiny, tiny),
    )
    def test_p_divides_discriminant(self, d, r, p, a, b):
        """具体的な原始的三つ組で、2d を割らない 𝔮 | ab では v_𝔮(Δ) = 2p·v_𝔮(ab)"""
        K = make_field(d)
        a, b = K.element(*a), K.element(*b)
        assume(a and b)
        sol = FreySolution(K, r, EVEN_ABC, p=p, a=a, b=b)
        A, B, C = sol.terms()
        assume(C)
        inv = invariants(A, B)
        ab = a * b
        for q in factorint(abs(ab.norm())):
            if q == 2 or d % q == 0:
                continue
            for Q in split_rational_prime(K, q):
                if not Q.contains(ab) or (Q.contains(a) and Q.contains(b)):
                    continue
                v = valuation(inv.Delta, Q)
                assert v % p == 0
                assert v == 2 * p * valuation(ab, Q)
                assert discriminant_valuation(sol, Q).at(p) == v

    @settings(max_examples=200)
    @given(
        d=st.sampled_from(FIELDS),
        p=st.sampled_from([3, 5, 7]),
        a=st.tuples(tiny, tiny),
        b=st.tuples(tiny, tiny),
    )
    def test_two_adic_valuations(self, d, p, a, b):
        """𝔭 | b なら v_𝔭(c4) = 4v(2)、v_𝔭(j) = 8v(2) - 2p·v(b)"""
        K = make_field(d)
        P = split_rational_prime(K, 2)[0]
        a, b = K.element(*a), K.element(*b) * 2
        assume(a and b and not P.contains(a))
        sol = FreySolution(K, 1, EVEN_ABC, p=p, a=a, b=b)
        A, B, _ = sol.terms()
        inv = invariants(A, B)
        v2 = valuation(2, P)
        assert valuation(inv.c4, P) == 4 * v2
        assert inv.j_valuation(P) == 8 * v2 - 2 * p * valuation(b, P)


class TestUnitScaling:
    @settings(max_examples=100, deadline=None)
    @given(
        d=st.sampled_from(FIELDS),
        p=st.sampled_from([3, 5]),
        index=st.integers(min_value=0, max_value=3),
        a=st.tuples(tiny, tiny),
        b=st.tuples(tiny, tiny),
    )
    def test_invariants_scale_with_unit(self, d, p, index, a, b):
        """単数 u 倍で c4 は u^{2p}、Δ は u^{6p}、γ は u^p 倍"""
        K = make_field(d)
        generators = unit_generators(K)
        u = generators[index % len(generators)]
        a, b = K.element(*a), K.element(*b)
        assume(a and b and (a**p * d + b**p))
        sol = FreySolution(K, 1, EVEN_ABC, p=p, a=a, b=b)
        scaled = sol.with_unit(u)
        before = invariants(*sol.terms()[:2])
        after = invariants(*scaled.terms()[:2])
        assert after.c4 == before.c4 * u ** (2 * p)
        assert after.Delta == before.Delta * u ** (6 * p)
        # γ = -c6/(4c4) なので c6'·c4 = u^p·c6·c4'
        assert after.c6 * before.c4 == before.c6 * after.c4 * u**p

    def test_requires_concrete_solution(self):
        """記号的な解は単数倍できない"""
        K = make_field(5)
        with pytest.raises(PreconditionViolated):
            FreySolution(K, 1, EVEN_ABC).with_unit(fundamental_unit(K))


class TestReductionType:
    def odd_prime(self, K):
        return next(
            q for q in primes_up_to_norm(K, 100) if q.residue_char not in (2, abs(K.d))
        )

    def test_q_sqrt13_exponent_one(self):
        """d=13 では 𝔭 の指数は 1 のみ"""
        K = make_field(13)
        P = split_rational_prime(K, 2)[0]
        sol = FreySolution(K, 1, EVEN_ABC, abc_support=(self.odd_prime(K),))
        rt = reduction_type(sol, P)
        assert rt.exponent_options == (1,)
        assert rt.conductor_exponent == 1
        assert rt.kind == "multiplicative"
        assert rt.j_valuation == SymbolicValuation(8, -2)

    def test_q_sqrt3_exponent_options(self):
        """d=3 では 𝔭 の指数は 1 か 4、v_𝔭(j) = 16 - 2p"""
        K = make_field(3)
        P = split_rational_prime(K, 2)[0]
        rt = reduction_type(FreySolution(K, 1, EVEN_ABC), P)
        assert rt.exponent_options == (1, 4)
        assert rt.conductor_exponent == 4
        assert rt.potential == "multiplicative"
        assert rt.j_valuation == SymbolicValuation(16, -2)

    def test_odd_case_exponent_four(self):
        """2∤abc で 2 が惰性なら 𝔭 の指数は 4"""
        K = make_field(-3)
        P = split_rational_prime(K, 2)[0]
        rt = reduction_type(FreySolution(K, 1, ODD_ABC), P)
        assert rt.kind == "additive"
        assert rt.conductor_exponent == 4

    @pytest.mark.parametrize("d", [13, -3, -11])
    def test_multiplicative_at_d(self, d):
        """𝔇 | d では乗法的還元で指数 1"""
        K = make_field(d)
        D = split_rational_prime(K, abs(d))[0]
        rt = reduction_type(FreySolution(K, 2, EVEN_ABC), D)
        assert rt.kind == "multiplicative"
        assert rt.conductor_exponent == 1

    def test_good_away_from_support(self):
        """abc も 2d も割らない 𝔮 では良い還元"""
        K = make_field(5)
        q = self.odd_prime(K)
        rt = reduction_type(FreySolution(K, 1, EVEN_ABC), q)
        assert rt.kind == "good"
        assert rt.conductor_exponent == 0


class TestConductor:
    def test_q_sqrt13(self):
        """N_E = 𝔭·𝔇·𝔮"""
        K = make_field(13)
        P = split_rational_prime(K, 2)[0]
        D = split_rational_prime(K, 13)[0]
        q = next(Q for Q in primes_up_to_norm(K, 100) if Q.residue_char not in (2, 13))
        N = conductor(FreySolution(K, 1, EVEN_ABC, abc_support=(q,)))
        assert N == FactoredIdeal.of(K, (P, 1), (D, 1), (q, 1))
        assert N.norm() == 4 * 13 * q.norm

    def test_odd_case(self):
        """d=-3, 2∤abc では N_E = 𝔭⁴𝔇"""
        K = make_field(-3)
        P = split_rational_prime(K, 2)[0]
        D = split_rational_prime(K, 3)[0]
        assert conductor(FreySolution(K, 1, ODD_ABC)) == FactoredIdeal.of(K, (P, 4), (D, 1))

    def test_requires_normalization(self):
        """正規化されていない解はエラー"""
        with pytest.raises(NormalizationMissing):
            conductor(FreySolution(make_field(5), 1, EVEN_ABC, normalized=False))


class TestCoefficient:
    def test_default_is_d(self):
        """係数を省略すると d"""
        assert validate_coefficient(make_field(5), None) == 5

    def test_even_d_requires_coefficient(self):
        """d が偶数なら係数が必要"""
        with pytest.raises(UnsupportedField):
            validate_coefficient(make_field(6), None)
        assert validate_coefficient(make_field(6), 3) == 3
        assert validate_coefficient(make_field(14), 7) == 7

    @pytest.mark.parametrize("coefficient", [5, 9, -3, 2])
    def test_bad_coefficient(self, coefficient):
        """分岐しない・素数でない係数はエラー"""
        with pytest.raises(UnsupportedField):
            validate_coefficient(make_field(6), coefficient)


class TestExponents:
    def test_unknown_policy(self):
        """未知のポリシーはエラー"""
        with pytest.raises(ValueError):
            two_adic_exponent_options(make_field(5), "bogus")

    def test_tabulated_source(self):
        """表の代表元を使ったときは出典が返る"""
        vectors, source = two_adic_exponent_options(make_field(5), "tabulated")
        assert source == "published"
        assert vectors == [(1,), (4,)]

    def test_exhaustive_contains_tabulated(self):
        """全列挙は表の値を含む"""
        K = make_field(3)
        tabulated, _ = two_adic_exponent_options(K, "tabulated")
        exhaustive, source = two_adic_exponent_options(K, "exhaustive")
        assert source == "exhaustive"
        assert set(tabulated) <= set(exhaustive)

    def test_potential_multiplicative_guard(self):
        """4·max v_𝔭(2) 以下の最大の素数"""
        assert potential_multiplicative_guard(make_field(3)) == 7
        assert potential_multiplicative_guard(make_field(5)) == 3
        assert potential_multiplicative_guard(make_field(17)) == 3


class TestLoweredLevel:
    def test_real_field(self):
        """実二次体では指数ベクトルごとに1つ"""
        keys = [c.key for c in lowered_level(make_field(5), EVEN_ABC)]
        assert keys == ["4e1-5.3e1", "4e4-5.3e1"]

    def test_imaginary_range(self):
        """虚二次体では 𝔭^i𝔇 (i = 0..4)"""
        candidates = lowered_level(make_field(-3), EVEN_ABC)
        assert [c.key for c in candidates] == [
            "3.2e1",
            "3.2e1-4e1",
            "3.2e1-4e2",
            "3.2e1-4e3",
            "3.2e1-4e4",
        ]

    def test_p_divides_r_drops_d(self):
        """p | r なら 𝔇 は現れない"""
        keys = [c.key for c in lowered_level(make_field(5), EVEN_ABC, p_divides_r=True)]
        assert keys == ["4e1", "4e4"]

    def test_a6_hypothesis(self):
        """a6 の追加仮定で 𝔭⁴ を避ける"""
        candidates = lowered_level(make_field(-67), ODD_ABC, a6_hypothesis=True)
        assert len(candidates) == 4
        assert all(A6_HYPOTHESIS_FLAG in c.hypotheses for c in candidates)
        with pytest.raises(UnsupportedField):
            lowered_level(make_field(-3), EVEN_ABC, a6_hypothesis=True)

    def test_odd_case_needs_inert_two(self):
        """2∤abc は 2 が惰性な虚二次体のみ"""
        with pytest.raises(UnsupportedField):
            lowered_level(make_field(5), ODD_ABC)
        with pytest.raises(UnsupportedField):
            lowered_level(make_field(-7), EVEN_ABC)

    def test_coefficient_variant(self):
        """l-Fermat 変形では 𝔩 がレベルに入り、表の代表系を使う"""
        K = make_field(6)
        L = split_rational_prime(K, 3)[0]
        candidates = lowered_level(K, EVEN_ABC, coefficient=3)
        assert candidates
        assert all(c.level.exponent(L) == 1 for c in candidates)
        assert all(c.source == "curated" for c in candidates)

    def test_coefficient_variant_exhaustive(self):
        """exhaustive を指定すれば表を使わず全列挙する"""
        K = make_field(6)
        L = split_rational_prime(K, 3)[0]
        tabulated = {c.exponents for c in lowered_level(K, EVEN_ABC, coefficient=3)}
        candidates = lowered_level(K, EVEN_ABC, coefficient=3, policy="exhaustive")
        assert all(c.source == "exhaustive" for c in candidates)
        assert all(c.level.exponent(L) == 1 for c in candidates)
        assert tabulated <= {c.exponents for c in candidates}


class TestSerreConductor:
    def test_imaginary_p_not_dividing_r(self):
        """p ∤ r なら N_p = 𝔭⁴𝔇"""
        for d in (-3, -11, -19, -43):
            K = make_field(d)
            P = split_rational_prime(K, 2)[0]
            D = split_rational_prime(K, abs(d))[0]
            q = next(
                Q for Q in primes_up_to_norm(K, 100) if Q.residue_char not in (2, abs(d))
            )
            sol = FreySolution(K, 1, EVEN_ABC, abc_support=(q,))
            assert serre_conductor(sol, p_divides_r=False) == FactoredIdeal.of(
                K, (P, 4), (D, 1)
            )

    def test_p_divides_r(self):
        """p | r なら 𝔇 も消える"""
        K = make_field(-11)
        P = split_rational_prime(K, 2)[0]
        sol = FreySolution(K, 5, EVEN_ABC, p=5)
        assert serre_conductor(sol) == FactoredIdeal.of(K, (P, 4))
