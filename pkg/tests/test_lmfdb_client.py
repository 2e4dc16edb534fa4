import os
from unittest.mock import AsyncMock, Mock, patch

import httpx
import pytest

from src.errors import NetworkError, NotCached
from src.lmfdb_client import (
    LMFDBProvider,
    OfflineProvider,
    create_data_provider,
)


def json_response(payload):
    response = Mock()
    response.raise_for_status = Mock()
    response.json = Mock(return_value=payload)
    return response


class TestCreateDataProvider:
    def test_offline(self):
        """オフラインプロバイダーの作成"""
        provider = create_data_provider("offline")
        assert isinstance(provider, OfflineProvider)
        assert provider.provider_name == "offline"

    def test_lmfdb(self):
        """LMFDB プロバイダーの作成"""
        provider = create_data_provider("lmfdb")
        assert isinstance(provider, LMFDBProvider)
        assert provider.provider_name == "LMFDB"

    def test_unsupported(self):
        """未知のプロバイダーはエラー"""
        with pytest.raises(ValueError, match="サポートされていないデータプロバイダー"):
            create_data_provider("sage")

    def test_offline_from_env(self):
        """DFERMAT_OFFLINE=true ならオフライン"""
        with patch.dict(os.environ, {"DFERMAT_OFFLINE": "TRUE"}):
            assert isinstance(create_data_provider(), OfflineProvider)
        with patch.dict(os.environ, {"DFERMAT_OFFLINE": "false"}):
            assert isinstance(create_data_provider(), LMFDBProvider)


class TestLMFDBProvider:
    def test_env_configuration(self):
        """環境変数から設定を読む"""
        env = {
            "LMFDB_API_BASE": "https://mirror.example.org/api/",
            "LMFDB_REQUEST_DELAY": "0.5",
            "LMFDB_MAX_RETRIES": "5",
            "LMFDB_TIMEOUT": "10",
        }
        with patch.dict(os.environ, env):
            provider = LMFDBProvider()
        assert provider.api_base == "https://mirror.example.org/api"
        assert provider.request_delay == 0.5
        assert provider.max_retries == 5
        assert provider.timeout == 10.0

    @pytest.mark.asyncio
    async def test_query_success(self):
        """1ページの検索"""
        with patch.dict(os.environ, {"LMFDB_REQUEST_DELAY": "0"}):
            provider = LMFDBProvider(api_base="https://lmfdb.test/api")
        payload = {"data": [{"label": "2.0.11.1-4.0.a"}], "next": None}
        with patch.object(
            httpx.AsyncClient, "get", new_callable=AsyncMock
        ) as mock_get:
            mock_get.return_value = json_response(payload)
            rows = await provider.fetch_bianchi_forms("2.0.11.1", 4)
        await provider.aclose()

        assert rows == payload["data"]
        mock_get.assert_called_once()
        args, kwargs = mock_get.call_args
        assert args[0] == "https://lmfdb.test/api/bmf_forms/"
        assert kwargs["params"]["level_norm"] == "i4"
        assert "_offset" not in kwargs["params"]

    @pytest.mark.asyncio
    async def test_pagination(self):
        """next があれば _offset を進めて続きを取得"""
        with patch.dict(os.environ, {"LMFDB_REQUEST_DELAY": "0"}):
            provider = LMFDBProvider(api_base="https://lmfdb.test/api")
        pages = [
            json_response({"data": [{"label": "a"}, {"label": "b"}], "next": "more"}),
            json_response({"data": [{"label": "c"}], "next": None}),
        ]
        with patch.object(
            httpx.AsyncClient, "get", new_callable=AsyncMock
        ) as mock_get:
            mock_get.side_effect = pages
            rows = await provider.fetch_isogeny_class("2.2.5.1", "80.1-a")
        await provider.aclose()

        assert [row["label"] for row in rows] == ["a", "b", "c"]
        assert mock_get.call_count == 2
        assert mock_get.call_args_list[1].kwargs["params"]["_offset"] == 2

    @pytest.mark.asyncio
    async def test_retries_then_network_error(self):
        """再試行を使い切ると NetworkError"""
        env = {"LMFDB_REQUEST_DELAY": "0", "LMFDB_MAX_RETRIES": "2"}
        with patch.dict(os.environ, env):
            provider = LMFDBProvider(api_base="https://lmfdb.test/api")
        with patch.object(
            httpx.AsyncClient, "get", new_callable=AsyncMock
        ) as mock_get:
            mock_get.side_effect = httpx.ConnectError("connection refused")
            with pytest.raises(NetworkError):
                await provider.fetch_bianchi_dimension("2.0.3.1", "4.0.1")
        await provider.aclose()

        assert mock_get.call_count == 3

    @pytest.mark.asyncio
    async def test_recovers_after_failure(self):
        """一時的な失敗の後に成功"""
        with patch.dict(os.environ, {"LMFDB_REQUEST_DELAY": "0"}):
            provider = LMFDBProvider(api_base="https://lmfdb.test/api")
        with patch.object(
            httpx.AsyncClient, "get", new_callable=AsyncMock
        ) as mock_get:
            mock_get.side_effect = [
                httpx.ConnectError("reset"),
                json_response({"data": [{"new_dim": 2}], "next": None}),
            ]
            row = await provider.fetch_bianchi_dimension("2.0.3.1", "4.0.1")
        await provider.aclose()

        assert row == {"new_dim": 2}
        assert mock_get.call_count == 2


class TestOfflineProvider:
    @pytest.mark.asyncio
    async def test_never_fetches(self):
        """オフラインではどの取得も NotCached"""
        provider = OfflineProvider()
        with pytest.raises(NotCached):
            await provider.fetch_hilbert_forms("2.2.5.1", 80)
        with pytest.raises(NotCached):
            await provider.fetch_isogeny_class("2.2.5.1", "80.1-a")
