from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional
import asyncio
import logging
import os

import httpx

from src.errors import NetworkError, NotCached

logger = logging.getLogger(__name__)

DEFAULT_API_BASE = "https://www.lmfdb.org/api"


class DataProvider(ABC):
    """保型形式・楕円曲線データの取得元の基底クラス"""

    @abstractmethod
    async def fetch_hilbert_forms(
        self, field_label: str, level_norm: int
    ) -> List[Dict[str, Any]]:
        """Hilbert 保型形式（固有値付き）を取得"""
        pass

    @abstractmethod
    async def fetch_bianchi_forms(
        self, field_label: str, level_norm: int
    ) -> List[Dict[str, Any]]:
        """Bianchi 保型形式を取得"""
        pass

    @abstractmethod
    async def fetch_bianchi_dimension(
        self, field_label: str, level_label: str
    ) -> Optional[Dict[str, Any]]:
        """Bianchi 新形式空間の次元を取得"""
        pass

    @abstractmethod
    async def fetch_isogeny_class(
        self, field_label: str, class_label: str
    ) -> List[Dict[str, Any]]:
        """同種類の楕円曲線を取得"""
        pass

    @property
    @abstractmethod
    def provider_name(self) -> str:
        """プロバイダー名を返す"""
        pass


class LMFDBProvider(DataProvider):
    """LMFDB の JSON API"""

    def __init__(self, api_base: Optional[str] = None):
        self.api_base = (api_base or os.getenv("LMFDB_API_BASE", DEFAULT_API_BASE)).rstrip("/")
        self.request_delay = float(os.getenv("LMFDB_REQUEST_DELAY", "1.0"))
        self.max_retries = int(os.getenv("LMFDB_MAX_RETRIES", "3"))
        self.timeout = float(os.getenv("LMFDB_TIMEOUT", "30"))
        # 同時に 1 リクエストまで
        self._semaphore = asyncio.Semaphore(1)
        self._client: Optional[httpx.AsyncClient] = None

    def _get_client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.timeout)
        return self._client

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None

    async def _get_json(self, url: str, params: Optional[Dict[str, Any]] = None) -> Dict:
        """レート制限と指数バックオフ付きの GET"""
        last_error = ""
        async with self._semaphore:
            for attempt in range(self.max_retries + 1):
                try:
                    response = await self._get_client().get(url, params=params)
                    response.raise_for_status()
                    await asyncio.sleep(self.request_delay)
                    return response.json()
                except (httpx.HTTPError, ValueError) as e:
                    last_error = str(e) or type(e).__name__
                    if attempt < self.max_retries:
                        wait = self.request_delay * (2**attempt)
                        logger.warning(
                            f"LMFDB リクエスト失敗 ({attempt + 1}/{self.max_retries + 1}): "
                            f"{url} {last_error}、{wait:.1f}秒後に再試行します"
                        )
                        await asyncio.sleep(wait)
        logger.error(f"LMFDB リクエストを諦めました: {url} ({last_error})")
        raise NetworkError(url, last_error)

    async def _query(self, collection: str, **filters: Any) -> List[Dict[str, Any]]:
        """コレクションを検索し、ページを辿って全件返す"""
        url = f"{self.api_base}/{collection}/"
        params: Dict[str, Any] = {"_format": "json", **filters}
        rows: List[Dict[str, Any]] = []
        offset = 0
        while True:
            page = await self._get_json(url, {**params, "_offset": offset} if offset else params)
            data = page.get("data", [])
            rows.extend(data)
            if not page.get("next") or not data:
                break
            offset += len(data)
        logger.debug(f"{collection} {filters}: {len(rows)} 件")
        return rows

    async def fetch_hilbert_forms(
        self, field_label: str, level_norm: int
    ) -> List[Dict[str, Any]]:
        forms = await self._query("hmf_forms", field_label=field_label, level_norm=f"i{level_norm}")
        field_rows = await self._query("hmf_fields", label=field_label)
        primes = field_rows[0].get("primes", []) if field_rows else []
        for form in forms:
            hecke = await self._query("hmf_hecke", label=form["label"])
            if hecke:
                form["hecke_polynomial"] = hecke[0].get("hecke_polynomial")
                form["hecke_eigenvalues"] = hecke[0].get("hecke_eigenvalues", [])
            form["primes"] = primes
        return forms

    async def fetch_bianchi_forms(
        self, field_label: str, level_norm: int
    ) -> List[Dict[str, Any]]:
        return await self._query("bmf_forms", field_label=field_label, level_norm=f"i{level_norm}")

    async def fetch_bianchi_dimension(
        self, field_label: str, level_label: str
    ) -> Optional[Dict[str, Any]]:
        rows = await self._query("bmf_dims", field_label=field_label, level_label=level_label)
        return rows[0] if rows else None

    async def fetch_isogeny_class(
        self, field_label: str, class_label: str
    ) -> List[Dict[str, Any]]:
        return await self._query("ec_nfcurves", field_label=field_label, class_label=class_label)

    @property
    def provider_name(self) -> str:
        return "LMFDB"


class OfflineProvider(DataProvider):
    """オフラインモード：どの取得もネットワークに出ない"""

    async def fetch_hilbert_forms(self, field_label: str, level_norm: int):
        raise NotCached(f"{field_label}/forms/norm{level_norm}")

    async def fetch_bianchi_forms(self, field_label: str, level_norm: int):
        raise NotCached(f"{field_label}/forms/norm{level_norm}")

    async def fetch_bianchi_dimension(self, field_label: str, level_label: str):
        raise NotCached(f"{field_label}/dims/{level_label}")

    async def fetch_isogeny_class(self, field_label: str, class_label: str):
        raise NotCached(f"{field_label}/curves/{class_label}")

    @property
    def provider_name(self) -> str:
        return "offline"


def create_data_provider(provider_name: str = None) -> DataProvider:
    """データプロバイダーのファクトリー関数"""
    if provider_name is None:
        offline = os.getenv("DFERMAT_OFFLINE", "false").lower() == "true"
        provider_name = "offline" if offline else "lmfdb"

    if provider_name == "lmfdb":
        return LMFDBProvider()
    elif provider_name == "offline":
        return OfflineProvider()
    else:
        raise ValueError(f"サポートされていないデータプロバイダー: {provider_name}")
