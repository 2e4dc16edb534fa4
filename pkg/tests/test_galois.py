import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy import resultant, symbols

from src.errors import UnsupportedCase, UnsupportedPrime
from src.frey import EVEN_ABC, ODD_ABC
from src.galois import (
    ASSUMPTION_P_3_MOD_4,
    ASSUMPTION_P_SPLITS,
    CharPolyCandidate,
    frobenius_charpoly_candidates,
    irreducibility_bound,
    modular_curve_obstruction,
    resultant_by_roots,
    resultant_prime_bound,
    surjectivity_preconditions,
    unit_norm_obstruction,
)
from src.quadfield import make_field

x = symbols("x")


class TestCharPolyCandidates:
    def test_norm_four(self):
        """Norm(𝔭) = 4 の候補は 9 個、うち超特異は 5 個"""
        candidates = frobenius_charpoly_candidates(4, 2)
        assert len(candidates) == 9
        assert [c.s for c in candidates if c.supersingular] == [-4, -2, 0, 2, 4]

    def test_residue_char_inferred(self):
        """素数冪なら標数を推定する"""
        candidates = frobenius_charpoly_candidates(9)
        assert sum(c.supersingular for c in candidates) == 5

    def test_small_norm(self):
        """ノルム 1 はエラー"""
        with pytest.raises(ValueError):
            frobenius_charpoly_candidates(1)

    def test_str(self):
        """文字列表現"""
        assert str(CharPolyCandidate(0, 4)) == "x^2 + 4"
        assert str(CharPolyCandidate(-1, 4)) == "x^2 - x + 4"
        assert str(CharPolyCandidate(3, 4)) == "x^2 + 3x + 4"


class TestResultant:
    @settings(max_examples=200)
    @given(
        m=st.integers(min_value=1, max_value=30),
        c=st.integers(min_value=-20, max_value=20).filter(bool),
        s=st.integers(min_value=-10, max_value=10),
        n=st.integers(min_value=1, max_value=25),
    )
    def test_matches_sympy(self, m, c, s, n):
        """根の対称式による計算が sympy の終結式と一致"""
        expected = int(resultant(x**m - c, x**2 + s * x + n, x))
        assert resultant_by_roots(m, c, CharPolyCandidate(s, n)) == expected

    def test_supersingular_bound(self):
        """超特異な候補だけなら最大素因数は 683"""
        candidates = [c for c in frobenius_charpoly_candidates(4, 2) if c.supersingular]
        bound = resultant_prime_bound(24, 4, candidates)
        assert bound.max_prime == 683
        assert len(bound.rows) == 5

    def test_all_candidates_bound(self):
        """全候補では上界がはるかに大きい"""
        bound = resultant_prime_bound(24, 4, frobenius_charpoly_candidates(4, 2))
        assert bound.max_prime == 8394593

    def test_zero_constant(self):
        """x^m - 0 はエラー"""
        with pytest.raises(ValueError):
            resultant_prime_bound(24, 0, [])


class TestModularCurves:
    def test_unsupported_prime(self):
        """表にない p はエラー"""
        with pytest.raises(UnsupportedPrime):
            modular_curve_obstruction(5, make_field(5))

    def test_exceptional_fields(self):
        """例外体では保証されない"""
        assert not modular_curve_obstruction(7, make_field(-3))
        assert not modular_curve_obstruction(13, make_field(-1))
        assert modular_curve_obstruction(7, make_field(5))
        assert modular_curve_obstruction(11, make_field(-43))


class TestUnitNorm:
    def test_q_sqrt5(self):
        """Q(√5) では b_K = 2 なので 15 の素因数"""
        primes, inert = unit_norm_obstruction(make_field(5))
        assert primes == frozenset({3, 5})
        assert inert

    def test_ramified(self):
        """2 が分岐すると不一致フラグは立たない"""
        _, inert = unit_norm_obstruction(make_field(3))
        assert not inert


class TestIrreducibilityBound:
    def test_real_field(self):
        """実二次体では B_K = 17"""
        verdict = irreducibility_bound(make_field(5), EVEN_ABC)
        assert verdict.p_threshold == 17
        assert verdict.certifies(19)

    def test_real_field_odd_case(self):
        """実二次体の 2∤abc は扱わない"""
        with pytest.raises(UnsupportedCase):
            irreducibility_bound(make_field(5), ODD_ABC)

    def test_imaginary_even_uses_p_k(self):
        """虚二次体では B_K = max(17, p_K)"""
        verdict = irreducibility_bound(make_field(-43), EVEN_ABC, p_K=101)
        assert verdict.p_threshold == 101
        assert verdict.effective_threshold == 101

    def test_effective_threshold_uses_modular_curves(self):
        """例外体でない p は個別に既約性が保証される"""
        assert irreducibility_bound(make_field(-11), EVEN_ABC).effective_threshold == 5
        assert irreducibility_bound(make_field(-3), EVEN_ABC).effective_threshold == 13

    def test_odd_case_resultant(self):
        """2∤abc では終結式の上界と絶対既約性の仮定"""
        verdict = irreducibility_bound(make_field(-11), ODD_ABC)
        assert verdict.p_threshold == 683
        assert "larson_M_K" in verdict.flags
        assert "requires:p_splits+p_3_mod_4" in verdict.flags
        assert "unit_norm_inert_discrepancy" in verdict.flags

    def test_odd_case_with_assumptions(self):
        """仮定を与えると必要条件のフラグが変わる"""
        verdict = irreducibility_bound(
            make_field(-11), ODD_ABC, assumptions=[ASSUMPTION_P_SPLITS, ASSUMPTION_P_3_MOD_4]
        )
        assert "absolute_irreducibility:p_splits_and_3_mod_4" in verdict.flags
        assert ASSUMPTION_P_SPLITS in verdict.assumptions

    def test_odd_case_needs_inert_two(self):
        """2 が分解する虚二次体はエラー"""
        with pytest.raises(UnsupportedCase):
            irreducibility_bound(make_field(-7), ODD_ABC)


class TestSurjectivity:
    def test_small_prime(self):
        """p < 17 は対象外"""
        K = make_field(-11)
        verdict = irreducibility_bound(K, EVEN_ABC)
        assert not surjectivity_preconditions(K, 13, verdict).surjective

    def test_cyclotomic_intersection(self):
        """K = Q(√p*) では円分体と交わる"""
        K = make_field(-19)
        verdict = irreducibility_bound(K, EVEN_ABC)
        assert not surjectivity_preconditions(K, 19, verdict).surjective

    def test_surjective(self):
        """条件がそろえば全射"""
        K = make_field(-11)
        verdict = irreducibility_bound(K, EVEN_ABC)
        certificate = surjectivity_preconditions(K, 19, verdict)
        assert certificate.surjective
        assert certificate.chain[-1] == "det = 円分指標"

    def test_odd_case(self):
        """2∤abc では前提が成り立たない"""
        K = make_field(-11)
        verdict = irreducibility_bound(K, EVEN_ABC)
        assert not surjectivity_preconditions(K, 19, verdict, ODD_ABC).surjective
