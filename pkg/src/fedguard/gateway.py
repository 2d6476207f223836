"""Network service: live job state, telemetry stream, ledger, and signed overrides.

A single tick-driver task owns the session and advances it at a configurable
real-time interval (default one second per tick).  Request handlers read
immutable snapshots; operator overrides are verified, queued, and injected
into the next tick's act phase, never applied mid-tick.  The only write path
is ``POST /api/v1/override``, restricted to the three existing command kinds,
so every state reachable under operator input is a state of the verified
machine product.
"""

from __future__ import annotations

import asyncio
import json
import logging
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, JSONResponse

from .canon import canonical_json_bytes
from .fsm import COMMAND_KINDS
from .signing import KeyRing, Signer, UnknownParticipantError, derive_seed
from .simulator import Session, SimConfig

logger = logging.getLogger(__name__)

API_PREFIX = "/api/v1"


@dataclass(frozen=True)
class OverrideRequest:
    """A signed operator command; the signature covers all other fields."""

    operator_id: str
    kind: str
    target: str
    nonce: str
    sig: str

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(
            {
                "operator_id": self.operator_id,
                "kind": self.kind,
                "target": self.target,
                "nonce": self.nonce,
            }
        )


def load_operators(path: str | Path) -> KeyRing:
    """Load the operator registry: a JSON list of {operator_id, public_key}."""
    entries = json.loads(Path(path).read_text())
    ring = KeyRing()
    for entry in entries:
        ring.register(entry["operator_id"], entry["public_key"])
    return ring


def write_operator_files(directory: str | Path, operator_id: str = "op-demo",
                         seed: int = 1) -> tuple[Path, Path]:
    """Generate a demo operator identity: registry file plus private key file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    key_seed = derive_seed("operator", operator_id, seed)
    signer = Signer.from_seed(operator_id, key_seed)
    registry_path = directory / "operators.json"
    registry_path.write_text(
        json.dumps([{"operator_id": operator_id, "public_key": signer.public_hex}], indent=2)
        + "\n"
    )
    key_path = directory / f"{operator_id}.key.json"
    key_path.write_text(
        json.dumps({"operator_id": operator_id, "private_seed": key_seed.hex()}, indent=2)
        + "\n"
    )
    return registry_path, key_path


class GatewayService:
    """Owns the session, the override registry, and the tick driver."""

    def __init__(self, config: SimConfig, operators: KeyRing, tick_ms: int = 1000):
        self.session = Session(config)
        self.operators = operators
        self.tick_ms = tick_ms
        self._seen_overrides: dict[str, str] = {}  # nonce -> request digest
        self._subscribers: set[asyncio.Queue] = set()
        self._driver: asyncio.Task | None = None

    # -- tick driving ------------------------------------------------------

    async def run_ticks(self) -> None:
        if not self.session.admitted:
            logger.warning("job rejected at admission; nothing to drive")
            return
        while not self.session.terminal:
            await asyncio.sleep(self.tick_ms / 1000.0)
            if self.session.terminal:
                break
            self.session.tick()
            snapshot = self.session.state_view()
            for queue in list(self._subscribers):
                try:
                    queue.put_nowait(snapshot)
                except asyncio.QueueFull:
                    pass
        logger.info("job terminal: %s", self.session.verdict)

    def subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue(maxsize=600)
        self._subscribers.add(queue)
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        self._subscribers.discard(queue)

    # -- overrides ------------------------------------------------------------

    def handle_override(self, request: OverrideRequest) -> tuple[str, str]:
        """Returns (status, reason): accepted | accepted-duplicate | rejected."""
        if request.kind not in COMMAND_KINDS:
            return "rejected", "unknown-command-kind"
        digest = request.canonical_bytes().hex()
        if request.nonce in self._seen_overrides:
            if self._seen_overrides[request.nonce] == digest:
                return "accepted-duplicate", ""
            return "rejected", "replayed-nonce"
        try:
            valid = self.operators.verify(
                request.operator_id, request.canonical_bytes(), request.sig
            )
        except UnknownParticipantError:
            return "rejected", "unknown-operator"
        if not valid:
            return "rejected", "bad-signature"
        if self.session.terminal:
            return "rejected", "job-terminal"
        accepted = self.session.enqueue_override(
            request.operator_id, request.kind, request.target, request.nonce
        )
        if not accepted:
            return "rejected", "job-terminal"
        self._seen_overrides[request.nonce] = digest
        return "accepted", ""


def create_app(service: GatewayService, static_dir: Path | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service._driver = asyncio.get_running_loop().create_task(service.run_ticks())
        yield
        service._driver.cancel()

    app = FastAPI(title="fedguard gateway", lifespan=lifespan)

    @app.get(API_PREFIX + "/manifest")
    async def get_manifest():
        return {
            "manifest": service.session.manifest.to_json_dict(),
            "manifest_hash": service.session.manifest_hash,
            "admission": service.session.admission.to_json_dict(),
        }

    @app.get(API_PREFIX + "/state")
    async def get_state():
        return service.session.state_view()

    @app.get(API_PREFIX + "/ledger")
    async def get_ledger():
        return service.session.ledger.to_json_dict()

    @app.get(API_PREFIX + "/ledger/verify")
    async def get_ledger_verify():
        ledger = service.session.ledger
        ok = True
        detail = ""
        from .audit import merkle_root, record_leaf_hash

        prev = "0" * 64
        for block in ledger.blocks:
            leaves = [record_leaf_hash(b) for b in ledger.record_bytes[block.start:block.end]]
            if merkle_root(leaves) != block.merkle_root or block.prev_block_root != prev:
                ok = False
                detail = f"block {block.block_index} failed verification"
                break
            prev = block.merkle_root
        return {"ok": ok, "detail": detail, "blocks": len(ledger.blocks)}

    @app.post(API_PREFIX + "/override")
    async def post_override(body: dict):
        try:
            request = OverrideRequest(
                operator_id=body["operator_id"],
                kind=body["kind"],
                target=body["target"],
                nonce=body["nonce"],
                sig=body["sig"],
            )
        except (KeyError, TypeError):
            return JSONResponse({"status": "rejected", "reason": "malformed-request"}, 400)
        status, reason = service.handle_override(request)
        if status == "rejected":
            return JSONResponse({"status": status, "reason": reason}, 400)
        return JSONResponse({"status": status}, 202)

    @app.websocket(API_PREFIX + "/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        queue = service.subscribe()
        await ws.send_json(service.session.state_view())
        try:
            while True:
                snapshot = await queue.get()
                await ws.send_json(snapshot)
        except WebSocketDisconnect:
            pass
        finally:
            service.unsubscribe(queue)

    if static_dir is not None and Path(static_dir).exists():
        static_root = Path(static_dir)

        @app.get("/")
        async def index():
            return FileResponse(static_root / "index.html")

        @app.get("/{asset_path:path}")
        async def assets(asset_path: str):
            target = (static_root / asset_path).resolve()
            if static_root.resolve() in target.parents and target.is_file():
                return FileResponse(target)
            return JSONResponse({"detail": "not found"}, 404)

    return app


def serve(
    config: SimConfig,
    operators: KeyRing,
    host: str = "127.0.0.1",
    port: int = 8000,
    tick_ms: int = 1000,
    static_dir: Path | None = None,
) -> None:
    """Run the gateway under uvicorn until interrupted."""
    import uvicorn

    service = GatewayService(config, operators, tick_ms=tick_ms)
    app = create_app(service, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
