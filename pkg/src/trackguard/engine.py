"""Live state shared by the proxy, the control API and the updater."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

from .canonical import CanonicalUrl
from .lists import Updater
from .policy import (
    Decision,
    OverrideRegistry,
    PolicyConfig,
    Reason,
    RequestMeta,
    Telemetry,
    classify,
)
from .psl import PublicSuffixList, bundled
from .sessions import SessionRegistry
from .store import CorruptSnapshot, PrefixStore, StoreHolder, deserialize, lookup

log = logging.getLogger(__name__)

Address = Tuple[str, int]


class StartupError(Exception):
    pass


@dataclass
class ProxyConfig:
    listen: Address = ("127.0.0.1", 8888)
    third_party_only: bool = False
    block_status: int = 403
    snapshot_path: Optional[str] = None
    overrides_path: Optional[str] = None
    update_url: Optional[str] = None
    update_interval: float = 45 * 60.0
    control: Optional[Address] = ("127.0.0.1", 8899)
    # host or "host:port" -> upstream address, bypassing DNS
    resolve: Dict[str, Address] = field(default_factory=dict)
    connect_timeout: float = 10.0
    idle_timeout: float = 60.0

    def __post_init__(self):
        if not 400 <= self.block_status <= 599:
            raise ValueError("block_status must be a 4xx/5xx code")
        if self.overrides_path is None and self.snapshot_path:
            self.overrides_path = os.path.join(
                os.path.dirname(os.path.abspath(self.snapshot_path)), "overrides.json")

    def echo(self) -> dict:
        d = asdict(self)
        d["resolve"] = {k: list(v) for k, v in self.resolve.items()}
        return d


class Engine:
    def __init__(self, cfg: ProxyConfig, store: Optional[PrefixStore] = None,
                 psl: Optional[PublicSuffixList] = None):
        self.cfg = cfg
        self.psl = psl or bundled()
        if store is None:
            store = self._load_snapshot(cfg.snapshot_path)
        self.holder = StoreHolder(store)
        self.policy = PolicyConfig(third_party_only=cfg.third_party_only)
        self.overrides = OverrideRegistry(cfg.overrides_path, self.psl)
        self.telemetry = Telemetry()
        self.sessions = SessionRegistry(on_finalize=self._record)
        self.updater: Optional[Updater] = None
        if cfg.update_url:
            self.updater = Updater(self.holder, cfg.update_url, cfg.update_interval,
                                   snapshot_path=cfg.snapshot_path)
        self.started = time.time()

    @staticmethod
    def _load_snapshot(path) -> PrefixStore:
        if not path:
            return PrefixStore()
        try:
            with open(path, "rb") as fh:
                return deserialize(fh.read())
        except FileNotFoundError:
            raise StartupError(f"snapshot not found: {path}") from None
        except CorruptSnapshot as exc:
            raise StartupError(f"corrupt snapshot {path}: {exc}") from None

    def _record(self, session) -> None:
        self.telemetry.record(session, self.overrides.current, self.psl)

    @property
    def store(self) -> PrefixStore:
        return self.holder.current

    def classify(self, req: RequestMeta) -> Decision:
        return classify(req, self.holder.current, self.overrides.current, self.policy, self.psl)

    def would_match(self, url: CanonicalUrl) -> bool:
        return lookup(self.holder.current, url).matched

    def decide(self, req: RequestMeta):
        """Decision plus whether the URL is on the list at all (for telemetry)."""
        decision = self.classify(req)
        if decision.blocked:
            return decision, True
        if decision.reason == Reason.SITE_OVERRIDE:
            return decision, self.would_match(req.url)
        return decision, False

    def status(self) -> dict:
        store = self.holder.current
        updater = None
        if self.updater is not None:
            st = self.updater.state
            updater = {
                "endpoint": st.endpoint,
                "last_success": st.last_success,
                "consecutive_failures": st.consecutive_failures,
                "last_error": st.last_error,
                "interval": st.interval,
            }
        return {
            "store_version": store.version,
            "expression_count": store.expression_count,
            "updater": updater or {"last_success": None, "consecutive_failures": 0},
            "uptime": time.time() - self.started,
            "config": self.cfg.echo(),
        }

    def start_background(self) -> None:
        if self.updater is not None:
            self.updater.start()

    def stop_background(self) -> None:
        if self.updater is not None:
            self.updater.stop()
