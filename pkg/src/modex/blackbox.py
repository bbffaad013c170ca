"""Querying predictors on masked inputs.

A *model* here is anything callable on an ``(n, K)`` array of 0/1 masks
that returns an ``(n, C)`` array of raw outputs. Baseline substitution
happens on the model side: the engine only ever sends masks and receives
output vectors. This module provides

* synthetic oracles with known ground-truth attributions (for tests and
  demos),
* clients for the newline-delimited JSON wire protocol, over a
  subprocess's standard streams or HTTP POST,
* :class:`BlackBoxSession`, which selects/transforms the explained output
  component and counts every forward call in a :class:`QueryLedger`.
"""
from __future__ import annotations

import json
import subprocess
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BadParams,
    BlackBoxError,
    DimensionMismatch,
    EndpointUnreachable,
    MalformedResponse,
)
from .space import InstanceSpec, check_masks

LOGIT_EPS = 1e-7

Model = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# target selection and call accounting


@dataclass(frozen=True)
class TargetSelector:
    """Picks one component of the model output and optionally transforms it."""

    output_index: int = 0
    transform: str = "identity"

    def __post_init__(self):
        if self.transform not in ("identity", "logit"):
            raise BadParams(f"unknown target transform {self.transform!r}")
        if self.output_index < 0:
            raise BadParams("output_index must be non-negative")

    def apply(self, outputs: np.ndarray) -> np.ndarray:
        outputs = np.asarray(outputs, dtype=float)
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        if outputs.shape[1] <= self.output_index:
            raise DimensionMismatch(
                f"predictor returned {outputs.shape[1]} outputs, "
                f"cannot select index {self.output_index}"
            )
        y = outputs[:, self.output_index]
        if self.transform == "logit":
            p = np.clip(y, LOGIT_EPS, 1.0 - LOGIT_EPS)
            y = np.log(p) - np.log1p(-p)
        return y

    def to_dict(self) -> dict:
        return {"output_index": self.output_index, "transform": self.transform}


@dataclass
class QueryLedger:
    """Running count of forward calls, split by purpose."""

    explanation_calls: int = 0
    metric_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, n: int, purpose: str = "explanation") -> None:
        with self._lock:
            if purpose == "explanation":
                self.explanation_calls += n
            elif purpose == "metric":
                self.metric_calls += n
            else:
                raise ValueError(f"unknown call purpose {purpose!r}")

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "explanation_calls": self.explanation_calls,
                "metric_calls": self.metric_calls,
            }


class BlackBoxSession:
    """Counts and batches queries against one model for one instance.

    Parameters
    ----------
    model : callable
        Maps an ``(n, K)`` mask array to an ``(n, C)`` output array.
    spec : InstanceSpec
        Layout the masks must conform to.
    batch_size : int
        Masks per sub-batch sent to the model.
    max_workers : int
        Sub-batches dispatched concurrently when > 1. Results are always
        reassembled in request order.
    """

    def __init__(self, model: Model, spec: InstanceSpec, batch_size: int = 32, max_workers: int = 1):
        if batch_size < 1:
            raise BadParams("batch_size must be >= 1")
        self.model = model
        self.spec = spec
        self.batch_size = int(batch_size)
        self.max_workers = max(1, int(max_workers))
        self.ledger = QueryLedger()

    def _run(self, chunk: np.ndarray) -> np.ndarray:
        out = np.asarray(self.model(chunk), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.ndim != 2 or out.shape[0] != chunk.shape[0]:
            raise MalformedResponse(
                f"model returned shape {out.shape} for {chunk.shape[0]} masks"
            )
        return out

    def query_raw(self, masks, purpose: str = "explanation") -> np.ndarray:
        """Raw ``(n, C)`` outputs for ``masks``; counts ``n`` calls."""
        masks = check_masks(masks, self.spec)
        chunks = [masks[i:i + self.batch_size] for i in range(0, len(masks), self.batch_size)]
        if not chunks:
            return np.zeros((0, 1))
        if self.max_workers == 1 or len(chunks) == 1:
            outs = []
            for c in chunks:
                outs.append(self._run(c))
                self.ledger.record(len(c), purpose)
        else:
            def job(c):
                o = self._run(c)
                self.ledger.record(len(c), purpose)
                return o

            with ThreadPoolExecutor(self.max_workers) as pool:
                outs = list(pool.map(job, chunks))
        width = min(o.shape[1] for o in outs)
        return np.vstack([o[:, :width] for o in outs])

    def query_batch(self, masks, selector: TargetSelector, purpose: str = "explanation") -> np.ndarray:
        """Scalar targets ``phi(f(P(x, z)))`` for each mask, in order."""
        return selector.apply(self.query_raw(masks, purpose))


# ---------------------------------------------------------------------------
# synthetic oracles


class LinearOracle:
    def __init__(self, weights, bias: float = 0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)

    def __call__(self, masks):
        return (np.asarray(masks, dtype=float) @ self.weights + self.bias)[:, None]


class NoisyLinearOracle(LinearOracle):
    """Linear oracle plus zero-mean Gaussian noise from a seeded generator."""

    def __init__(self, weights, bias: float = 0.0, noise_std: float = 0.1, seed: int = 0):
        super().__init__(weights, bias)
        if noise_std < 0:
            raise BadParams("noise_std must be non-negative")
        self.noise_std = float(noise_std)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def __call__(self, masks):
        clean = super().__call__(masks)
        if self.noise_std == 0:
            return clean
        with self._lock:
            noise = self._rng.normal(0.0, self.noise_std, size=clean.shape)
        return clean + noise


class GroupAndOracle:
    """Outputs ``high`` iff every unit in ``units`` is present, else ``low``."""

    def __init__(self, units, high: float = 1.0, low: float = 0.0):
        self.units = np.asarray(units, dtype=int)
        if self.units.size == 0:
            raise BadParams("group_and needs at least one unit")
        self.high = float(high)
        self.low = float(low)

    def __call__(self, masks):
        masks = np.asarray(masks)
        on = masks[:, self.units].all(axis=1)
        return np.where(on, self.high, self.low)[:, None]


class UnimodalCollapseOracle:
    """Linear in one modality's units, blind to every other modality."""

    def __init__(self, units, weights, bias: float = 0.0):
        self.units = np.asarray(units, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)

    def __call__(self, masks):
        sub = np.asarray(masks, dtype=float)[:, self.units]
        return (sub @ self.weights + self.bias)[:, None]


class EchoOracle:
    """Returns the mask itself as the output vector (protocol testing)."""

    def __call__(self, masks):
        return np.asarray(masks, dtype=float)


SYNTHETIC_KINDS = ("linear", "group_and", "noisy_linear", "unimodal_collapse", "echo")


def make_synthetic(kind: str, spec: InstanceSpec, **params) -> Model:
    """Build a synthetic oracle over ``spec``'s interpretable space.

    Parameters by kind:

    ``linear``
        ``weights`` (length K, default all ones), ``bias``.
    ``noisy_linear``
        as linear, plus ``noise_std`` and ``seed``.
    ``group_and``
        ``modality`` (name or index; default 0) or explicit ``units``;
        optional ``high`` / ``low``.
    ``unimodal_collapse``
        ``modality`` (default 0), ``weights`` of length ``K_m`` (default
        ones), ``bias``.
    ``echo``
        no parameters.
    """
    K = spec.total_units
    try:
        if kind in ("linear", "noisy_linear"):
            w = np.asarray(params.pop("weights", np.ones(K)), dtype=float)
            if w.shape != (K,):
                raise BadParams(f"{kind} weights must have length {K}, got {w.shape}")
            bias = params.pop("bias", 0.0)
            if kind == "linear":
                model = LinearOracle(w, bias)
            else:
                model = NoisyLinearOracle(
                    w, bias, noise_std=params.pop("noise_std", 0.1), seed=params.pop("seed", 0)
                )
        elif kind == "group_and":
            if "units" in params:
                units = np.asarray(params.pop("units"), dtype=int)
                params.pop("modality", None)
                if units.size and (units.min() < 0 or units.max() >= K):
                    raise BadParams("group_and units out of range")
            else:
                units = spec.group(params.pop("modality", 0))
            model = GroupAndOracle(units, params.pop("high", 1.0), params.pop("low", 0.0))
        elif kind == "unimodal_collapse":
            units = spec.group(params.pop("modality", 0))
            w = np.asarray(params.pop("weights", np.ones(len(units))), dtype=float)
            if w.shape != (len(units),):
                raise BadParams(
                    f"unimodal_collapse weights must have length {len(units)}, got {w.shape}"
                )
            model = UnimodalCollapseOracle(units, w, params.pop("bias", 0.0))
        elif kind == "echo":
            model = EchoOracle()
        else:
            raise BadParams(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    except BadParams:
        raise
    except Exception as exc:  # spec lookups and numpy coercions
        raise BadParams(str(exc)) from exc
    if params:
        raise BadParams(f"unused parameters for {kind}: {sorted(params)}")
    return model


# ---------------------------------------------------------------------------
# wire protocol


def encode_request(req_id: int, mask: Sequence[int]) -> str:
    return json.dumps({"id": int(req_id), "mask": [int(b) for b in mask]}, separators=(",", ":"))


def decode_response(line: str) -> tuple[int, list[float]]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"invalid JSON from endpoint: {line[:200]!r}") from exc
    if not isinstance(obj, dict) or "id" not in obj:
        raise MalformedResponse(f"response without id: {line[:200]!r}")
    if "error" in obj:
        raise BlackBoxError(f"endpoint error for request {obj['id']}: {obj['error']}")
    out = obj.get("output")
    if not isinstance(out, list) or not out:
        raise MalformedResponse(f"response {obj['id']} has no output vector")
    try:
        vec = [float(v) for v in out]
    except (TypeError, ValueError) as exc:
        raise MalformedResponse(f"non-numeric output in response {obj['id']}") from exc
    return int(obj["id"]), vec


def _assemble(ids: list[int], replies: dict[int, list[float]]) -> np.ndarray:
    missing = [i for i in ids if i not in replies]
    if missing:
        raise MalformedResponse(f"no response for request ids {missing[:5]}")
    rows = [replies[i] for i in ids]
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise MalformedResponse(f"inconsistent output lengths {sorted(width)}")
    return np.asarray(rows, dtype=float)


class SubprocessEndpoint:
    """Client for a model served over a subprocess's stdin/stdout.

    The child reads one JSON request per line and writes one JSON reply
    per line. Replies may arrive in any order; they are matched by id.
    """

    def __init__(self, command: Sequence[str] | str, cwd: str | None = None):
        if isinstance(command, str):
            import shlex

            command = shlex.split(command)
        self.command = list(command)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
                cwd=cwd,
            )
        except OSError as exc:
            raise EndpointUnreachable(f"cannot start endpoint {self.command}: {exc}") from exc
        self._next_id = 0
        self._lock = threading.Lock()

    def __call__(self, masks) -> np.ndarray:
        masks = np.asarray(masks)
        with self._lock:
            ids = list(range(self._next_id, self._next_id + len(masks)))
            self._next_id += len(masks)
            lines = [encode_request(i, m) + "\n" for i, m in zip(ids, masks)]
            write_error: list[BaseException] = []

            def writer():
                try:
                    self._proc.stdin.writelines(lines)
                    self._proc.stdin.flush()
                except (BrokenPipeError, OSError, ValueError) as exc:
                    write_error.append(exc)

            t = threading.Thread(target=writer, daemon=True)
            t.start()
            replies: dict[int, list[float]] = {}
            pending = set(ids)
            while pending:
                line = self._proc.stdout.readline()
                if not line:
                    t.join(timeout=1.0)
                    raise EndpointUnreachable(
                        f"endpoint closed its output with {len(pending)} requests pending"
                    )
                if not line.strip():
                    continue
                rid, vec = decode_response(line)
                if rid not in pending:
                    raise MalformedResponse(f"unexpected or duplicate response id {rid}")
                pending.discard(rid)
                replies[rid] = vec
            t.join()
            if write_error:
                raise EndpointUnreachable(f"failed writing to endpoint: {write_error[0]}")
        return _assemble(ids, replies)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HttpEndpoint:
    """Client for a model behind an HTTP POST endpoint.

    Each mask is POSTed as one JSON request body; the response body is one
    JSON reply. Up to ``max_workers`` requests are in flight at once.
    """

    def __init__(self, url: str, timeout: float = 30.0, max_workers: int = 4):
        self.url = url
        self.timeout = timeout
        self.max_workers = max(1, int(max_workers))
        self._next_id = 0
        self._lock = threading.Lock()

    def _post(self, req_id: int, mask) -> tuple[int, list[float]]:
        body = encode_request(req_id, mask).encode()
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = resp.read().decode()
        except urllib.error.HTTPError as exc:
            raise BlackBoxError(f"endpoint returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise EndpointUnreachable(f"cannot reach {self.url}: {exc}") from exc
        return decode_response(text)

    def __call__(self, masks) -> np.ndarray:
        masks = np.asarray(masks)
        with self._lock:
            ids = list(range(self._next_id, self._next_id + len(masks)))
            self._next_id += len(masks)
        with ThreadPoolExecutor(self.max_workers) as pool:
            results = list(pool.map(self._post, ids, masks))
        replies = {}
        for rid, vec in results:
            if rid in replies:
                raise MalformedResponse(f"duplicate response id {rid}")
            replies[rid] = vec
        if set(replies) != set(ids):
            raise MalformedResponse("response ids do not match request ids")
        return _assemble(ids, replies)

    def close(self) -> None:
        pass
