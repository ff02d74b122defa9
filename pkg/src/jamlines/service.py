"""The live system: per-session audio ingestion, 10-second windows, and the
clip -> spectrogram -> latent -> lines -> rank pipeline behind a websocket.

Sessions are replayable: every clip's randomness derives from the session
seed and the clip index, and every emitted result is appended to the
session's log before any client sees it.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .aligner import LatentAligner
from .audio import MelSpectrogram, SpectrogramParams, StreamSegmenter, to_mel_spectrogram
from .ranking import LikelihoodRanker, QualityClassifier, RankedLine, score_lines, top_k
from .specvae import SpecVae
from .textcvae import TextCvae

MODES = ("baseline", "gan", "topology")

DATA_DIR_ENV = "JAMLINES_DATA_DIR"


class ConfigurationError(RuntimeError):
    """A generation mode was requested without its required checkpoints."""


def resolve_data_dir(configured=None) -> Path:
    """Data directory: the env override wins, then the configured value."""
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path(configured) if configured else Path("data")


def derive_clip_seed(session_seed: int, clip_index: int) -> int:
    """Stable per-clip seed so any session clip can be regenerated."""
    ss = np.random.SeedSequence(entropy=(int(session_seed), int(clip_index)))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class GenerationResult:
    clip_id: str
    timestamp: str
    mode: str
    lines: tuple[RankedLine, ...]
    latency_ms: float = 0.0

    def __post_init__(self):
        if not self.lines:
            raise ValueError("a result must carry at least one line")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be non-negative")

    def to_message(self) -> str:
        """The wire "lines" message; also the persisted log record."""
        return json.dumps(
            {
                "type": "lines",
                "clip_id": self.clip_id,
                "timestamp": self.timestamp,
                "lines": [
                    {"text": l.text, "score": l.score, "rank": l.rank}
                    for l in self.lines
                ],
                "mode": self.mode,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_message(cls, raw: str) -> "GenerationResult":
        msg = json.loads(raw)
        return cls(
            clip_id=msg["clip_id"],
            timestamp=msg["timestamp"],
            mode=msg["mode"],
            lines=tuple(
                RankedLine(text=l["text"], score=l["score"], rank=l["rank"])
                for l in msg["lines"]
            ),
            latency_ms=0.0,
        )


@dataclass
class ModelBundle:
    """Every checkpoint the service needs, loaded once and shared read-only."""

    spec_vae: SpecVae
    text_models: dict[str, TextCvae] = field(default_factory=dict)
    aligner: LatentAligner | None = None
    params: SpectrogramParams = field(default_factory=SpectrogramParams)
    classifier: QualityClassifier | None = None

    def text_model_for(self, mode: str) -> TextCvae:
        key = "topology" if mode == "topology" else "baseline"
        model = self.text_models.get(key)
        if model is None:
            raise ConfigurationError(
                f"mode {mode!r} needs the {key!r} text model checkpoint"
            )
        return model

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.spec_vae.save(directory / "spec_vae")
        for key, model in self.text_models.items():
            model.save(directory / f"text_{key}")
        if self.aligner is not None:
            self.aligner.save(directory / "aligner")
        if self.classifier is not None:
            self.classifier.save(directory / "classifier")
        (directory / "spectrogram.json").write_text(json.dumps(self.params.to_dict()))

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        spec = SpecVae.load(directory / "spec_vae")
        text_models = {}
        for key in ("baseline", "topology"):
            if (directory / f"text_{key}.json").exists():
                text_models[key] = TextCvae.load(directory / f"text_{key}")
        aligner = None
        if (directory / "aligner.json").exists():
            aligner = LatentAligner.load(directory / "aligner")
        classifier = None
        if (directory / "classifier.json").exists():
            classifier = QualityClassifier.load(directory / "classifier")
        params = SpectrogramParams(
            **json.loads((directory / "spectrogram.json").read_text())
        )
        return cls(
            spec_vae=spec,
            text_models=text_models,
            aligner=aligner,
            params=params,
            classifier=classifier,
        )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def generate_for_clip(
    bundle: ModelBundle,
    spectrogram: MelSpectrogram,
    mode: str,
    n: int = 100,
    k: int = 2,
    seed: int = 0,
    clip_id: str = "clip",
    timestamp: str | None = None,
    ranker: str = "likelihood",
) -> GenerationResult:
    """Run the full per-clip pipeline: n candidates, ranked, top k kept.

    Candidate latents per mode:
      baseline: z_s ~ spec posterior, z_t ~ N(0, I)
      gan:      z_s ~ spec posterior, z_t = G(z_s)
      topology: z_s ~ spec posterior, z_t an independent posterior draw
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if n < k:
        raise ValueError("need n >= k candidates")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    text_model = bundle.text_model_for(mode)
    posterior = bundle.spec_vae.encode(spectrogram)
    tau = bundle.spec_vae.temperature
    d = posterior.dim
    Z_s = posterior.mean + tau * rng.standard_normal((n, d)) * posterior.stddev
    if mode == "baseline":
        Z_t = rng.standard_normal((n, d))
    elif mode == "gan":
        if bundle.aligner is None:
            raise ConfigurationError("mode 'gan' needs the aligner checkpoint")
        Z_t = bundle.aligner.predict(Z_s)
    else:
        Z_t = posterior.mean + tau * rng.standard_normal((n, d)) * posterior.stddev
    lines = text_model.decode_batch(Z_t, Z_s, strategy="greedy")
    if ranker == "classifier":
        if bundle.classifier is None:
            raise ConfigurationError("classifier ranking needs its checkpoint")
        scorer = bundle.classifier
    else:
        if mode == "gan":
            z_t_ctx = bundle.aligner.predict(posterior.mean)
        elif mode == "topology":
            z_t_ctx = posterior.mean
        else:
            z_t_ctx = np.zeros(d)
        scorer = LikelihoodRanker(text_model, z_t_ctx, posterior.mean)
    ranked = top_k(lines, score_lines(scorer, lines), k)
    return GenerationResult(
        clip_id=clip_id,
        timestamp=timestamp if timestamp is not None else _utc_now(),
        mode=mode,
        lines=tuple(ranked),
        latency_ms=(time.perf_counter() - t0) * 1000.0,
    )


class Session:
    """One musician's stream: segmentation, generation, history, and log.

    Ingestion and generation are serialized by default: feed() runs the
    pipeline inline for every window it completes, so results come back in
    order.  With live_worker=True generation moves to a worker thread and
    only the newest completed window is kept while one is in flight; each
    displaced window bumps drop_count.
    """

    def __init__(
        self,
        session_id: str,
        mode: str,
        sample_rate: int,
        channels: int = 1,
        *,
        generate_fn,
        window_seconds: float = 10.0,
        log_path=None,
        live_worker: bool = False,
        on_result=None,
    ):
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        self.id = session_id
        self.mode = mode
        self.created_at = _utc_now()
        self.segmenter = StreamSegmenter(sample_rate, channels, window_seconds)
        self.history: list[GenerationResult] = []
        self.drop_count = 0
        self.clip_index = 0
        self._generate_fn = generate_fn
        self._on_result = on_result
        self._log_path = Path(log_path) if log_path else None
        self._log_fh = None
        if self._log_path:
            self._log_path.parent.mkdir(parents=True, exist_ok=True)
            self._log_fh = open(self._log_path, "a", encoding="utf-8")
        self._lock = threading.Lock()
        self._pending: deque = deque()
        self._worker = None
        self._closed = False
        if live_worker:
            self._wakeup = threading.Condition(self._lock)
            self._worker = threading.Thread(target=self._worker_loop, daemon=True)
            self._worker.start()

    # --- ingestion ----------------------------------------------------------

    def feed(self, chunk) -> list[GenerationResult]:
        """Buffer audio; process every window that completes.

        chunk is int16 PCM: raw little-endian bytes or an ndarray shaped
        (frames,) / (frames, channels).
        """
        if isinstance(chunk, (bytes, bytearray)):
            chunk = np.frombuffer(chunk, dtype="<i2").reshape(
                -1, self.segmenter.channels
            )
        results = []
        for clip in self.segmenter.push(chunk):
            out = self._submit(clip)
            if out is not None:
                results.append(out)
        return results

    def flush(self) -> GenerationResult | None:
        """Zero-pad and process the trailing partial window, if any."""
        clip = self.segmenter.flush()
        if clip is None:
            return None
        return self._submit(clip)

    def _submit(self, clip):
        index = self.clip_index
        self.clip_index += 1
        if self._worker is None:
            return self._process(clip, index)
        with self._lock:
            if self._pending:
                self._pending.clear()
                self.drop_count += 1
            self._pending.append((clip, index))
            self._wakeup.notify()
        return None

    def _process(self, clip, index) -> GenerationResult:
        result = self._generate_fn(clip, index)
        self._persist(result)
        with self._lock:
            self.history.append(result)
        if self._on_result is not None:
            self._on_result(result)
        return result

    def _persist(self, result) -> None:
        if self._log_fh is not None:
            self._log_fh.write(result.to_message() + "\n")
            self._log_fh.flush()

    def _worker_loop(self):
        while True:
            with self._lock:
                while not self._pending and not self._closed:
                    self._wakeup.wait()
                if self._closed and not self._pending:
                    return
                clip, index = self._pending.popleft()
            self._process(clip, index)

    def close(self) -> None:
        self._closed = True
        if self._worker is not None:
            with self._lock:
                self._wakeup.notify()
            self._worker.join(timeout=30)
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def wait_idle(self, timeout: float = 30.0) -> None:
        """Block until the worker has drained the pending window (tests)."""
        if self._worker is None:
            return
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._pending:
                    return
            time.sleep(0.01)


@dataclass
class ServerConfig:
    port: int = 8765
    k: int = 2
    n_candidates: int = 100
    default_mode: str = "baseline"
    models_dir: str = "models"
    data_dir: str | None = None
    session_seed: int = 0
    ranker: str = "likelihood"
    window_seconds: float = 10.0

    def __post_init__(self):
        if not 1 <= self.k <= self.n_candidates:
            raise ValueError("need 1 <= k <= n_candidates")
        if self.default_mode not in MODES:
            raise ValueError(f"default_mode must be one of {MODES}")

    @classmethod
    def from_json(cls, path) -> "ServerConfig":
        blob = json.loads(Path(path).read_text())
        return cls(**blob.get("server", blob))


class LyricService:
    """Holds the shared model bundle and the live session registry."""

    def __init__(self, bundle: ModelBundle, config: ServerConfig | None = None):
        self.bundle = bundle
        self.config = config or ServerConfig()
        self.data_dir = resolve_data_dir(self.config.data_dir)
        self.sessions: dict[str, Session] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def _session_log(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / f"{session_id}.jsonl"

    def open_session(
        self,
        session_id: str | None = None,
        mode: str | None = None,
        sample_rate: int = 44100,
        channels: int = 1,
        live_worker: bool = False,
        on_result=None,
    ) -> Session:
        mode = mode or self.config.default_mode
        with self._lock:
            if session_id is None:
                session_id = f"session-{int(time.time())}-{self._counter}"
                self._counter += 1
            if session_id in self.sessions:
                raise ValueError(f"session {session_id!r} already open")

            def generate(clip, index, _sid=session_id, _mode=mode):
                grid = to_mel_spectrogram(clip, self.bundle.params)
                return generate_for_clip(
                    self.bundle,
                    grid,
                    _mode,
                    n=self.config.n_candidates,
                    k=self.config.k,
                    seed=derive_clip_seed(self.config.session_seed, index),
                    clip_id=f"{_sid}/{index:06d}",
                    ranker=self.config.ranker,
                )

            session = Session(
                session_id,
                mode,
                sample_rate,
                channels,
                generate_fn=generate,
                window_seconds=self.config.window_seconds,
                log_path=self._session_log(session_id),
                live_worker=live_worker,
                on_result=on_result,
            )
            self.sessions[session_id] = session
            return session

    def close_session(self, session_id: str) -> None:
        session = self.sessions.pop(session_id, None)
        if session is not None:
            session.close()

    def history(self, session_id: str) -> list[GenerationResult]:
        """Time-ordered results for a live or persisted session."""
        session = self.sessions.get(session_id)
        if session is not None:
            with session._lock:
                return list(session.history)
        log = self._session_log(session_id)
        if not log.exists():
            raise KeyError(f"unknown session {session_id!r}")
        return [
            GenerationResult.from_message(line)
            for line in log.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]


def build_app(service: LyricService):
    """FastAPI app speaking the JSON websocket protocol at /ws."""
    import asyncio

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="jamlines")
    app.state.service = service

    async def send_error(ws, code, message):
        await ws.send_text(
            json.dumps({"type": "error", "code": code, "message": message})
        )

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        loop = asyncio.get_event_loop()
        session = None
        last_seq = None
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    msg = json.loads(raw)
                    kind = msg["type"]
                except (ValueError, KeyError):
                    await send_error(websocket, "bad_message", "not a protocol message")
                    continue
                if kind == "hello":
                    if session is not None:
                        await send_error(
                            websocket, "protocol", "session already negotiated"
                        )
                        continue
                    try:
                        session = service.open_session(
                            session_id=msg.get("session") or None,
                            mode=msg.get("mode"),
                            sample_rate=int(msg["sample_rate"]),
                            channels=int(msg.get("channels", 1)),
                        )
                    except (KeyError, ValueError, ConfigurationError) as exc:
                        await send_error(websocket, "bad_hello", str(exc))
                        continue
                elif kind == "audio":
                    if session is None:
                        await send_error(websocket, "no_session", "hello first")
                        continue
                    seq = msg.get("seq")
                    if seq is not None and last_seq is not None and seq <= last_seq:
                        await send_error(
                            websocket, "sequence", f"seq {seq} not increasing"
                        )
                        continue
                    last_seq = seq if seq is not None else last_seq
                    try:
                        data = base64.b64decode(msg["payload"])
                        results = await loop.run_in_executor(None, session.feed, data)
                    except (KeyError, ValueError) as exc:
                        await send_error(websocket, "format", str(exc))
                        continue
                    except Exception as exc:  # pipeline failure: session stays open
                        await send_error(websocket, "pipeline", str(exc))
                        continue
                    for result in results:
                        await websocket.send_text(result.to_message())
                elif kind == "flush":
                    if session is None:
                        await send_error(websocket, "no_session", "hello first")
                        continue
                    result = await loop.run_in_executor(None, session.flush)
                    if result is not None:
                        await websocket.send_text(result.to_message())
                else:
                    await send_error(websocket, "bad_message", f"unknown type {kind!r}")
        except WebSocketDisconnect:
            pass
        finally:
            if session is not None:
                service.close_session(session.id)

    return app
