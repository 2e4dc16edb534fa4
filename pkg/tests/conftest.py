import json

import pytest

from src.newforms import DEFAULT_FIXTURE_DIR, NewformRecord, NewformStore
from src.numfield import EigenvalueField
from src.quadfield import FactoredIdeal, make_field


@pytest.fixture
def fixture_store(tmp_path):
    """同梱フィクスチャを読むオフラインのストア"""
    return NewformStore(
        fixture_dir=DEFAULT_FIXTURE_DIR, cache_dir=tmp_path / "cache", offline=True
    )


@pytest.fixture
def manifest():
    """同梱フィクスチャの manifest.json"""
    with open(DEFAULT_FIXTURE_DIR / "manifest.json", "r", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture
def make_form():
    """固有値を指定して NewformRecord を作るヘルパー"""

    def _make(K, level, eigenvalues, poly="x", label="test-form", curve_class=None):
        F = EigenvalueField.from_string(poly, "e")
        values = {name: F.element(str(v)) for name, v in eigenvalues.items()}
        return NewformRecord(label, K.label, level, F, values, curve_class)

    return _make


@pytest.fixture
def field_m43():
    return make_field(-43)


@pytest.fixture
def unit_level(field_m43):
    """レベル (1)（どの素イデアルとも素）"""
    return FactoredIdeal.of(field_m43)
