"""Single-file tensor container and the typed bundles stored in it.

Layout::

    VBTC\\n
    <header byte length>\\n
    <JSON header: format, version, entries[name, shape, dtype, offset, nbytes], meta>
    <payload: little-endian float64, row-major, entries back to back>

Offsets are relative to the start of the payload.  JSON is written with
sorted keys so identical content gives identical bytes.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .ard import (
    AlphaPosterior,
    ElboReport,
    Hyper,
    LoadingPosterior,
    MinDivStats,
)
from .exceptions import (
    ContainerError,
    CorruptContainerError,
    HashMismatchError,
    ShapeMismatchError,
    VersionMismatchError,
)
from .stats import GlobalStats, GmmBackend, StatsBatch

__all__ = [
    "FORMAT_VERSION",
    "TensorContainer",
    "ModelBundle",
    "save_backend",
    "load_backend",
    "save_sessions",
    "load_sessions",
    "save_stats",
    "load_stats",
    "save_model",
    "load_model",
    "save_prior",
    "load_prior",
]

MAGIC = b"VBTC\n"
FORMAT = "vbtc"
FORMAT_VERSION = "1"
_DTYPES = {"<f8": np.dtype("<f8")}


class TensorContainer:
    """Named arrays plus JSON-serializable metadata."""

    def __init__(self, entries=None, meta=None):
        self.entries = {}
        self.meta = dict(meta or {})
        for name, arr in (entries or {}).items():
            self[name] = arr

    def __setitem__(self, name, arr):
        self.entries[str(name)] = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))

    def __getitem__(self, name):
        try:
            return self.entries[name]
        except KeyError:
            raise ContainerError(f"container has no entry {name!r}") from None

    def __contains__(self, name):
        return name in self.entries

    def names(self):
        return list(self.entries)

    def to_bytes(self):
        specs = []
        offset = 0
        for name, arr in self.entries.items():
            nbytes = arr.nbytes
            specs.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.str,
                    "offset": offset,
                    "nbytes": nbytes,
                }
            )
            offset += nbytes
        header = {"format": FORMAT, "version": FORMAT_VERSION, "entries": specs, "meta": self.meta}
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, b"%d\n" % len(hbytes), hbytes]
        parts.extend(arr.tobytes(order="C") for arr in self.entries.values())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        if not buf.startswith(MAGIC):
            raise CorruptContainerError("not a tensor container (bad magic)")
        pos = len(MAGIC)
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise CorruptContainerError("truncated header length")
        try:
            hlen = int(buf[pos:nl])
        except ValueError:
            raise CorruptContainerError("malformed header length") from None
        start = nl + 1
        if hlen < 0 or start + hlen > len(buf):
            raise CorruptContainerError("truncated header")
        try:
            header = json.loads(buf[start : start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptContainerError(f"unreadable header: {exc}") from None
        if not isinstance(header, dict) or header.get("format") != FORMAT:
            raise CorruptContainerError("header is not a tensor container header")
        if "version" not in header:
            raise CorruptContainerError("header has no format version")
        if header["version"] != FORMAT_VERSION:
            raise VersionMismatchError(
                f"container version {header['version']!r}, expected {FORMAT_VERSION!r}"
            )
        payload = memoryview(buf)[start + hlen :]
        specs = header.get("entries", [])
        spans = []
        entries = {}
        if not isinstance(specs, list):
            raise CorruptContainerError("header entries must be a list")
        for spec in specs:
            if not isinstance(spec, dict):
                raise CorruptContainerError(f"malformed entry {spec!r}")
            if spec.get("dtype") not in _DTYPES:
                raise CorruptContainerError(f"unsupported element type {spec.get('dtype')!r}")
            try:
                name = spec["name"]
                shape = tuple(int(s) for s in spec["shape"])
                dtype = _DTYPES[spec["dtype"]]
                off = int(spec["offset"])
                nbytes = int(spec["nbytes"])
            except (KeyError, TypeError, ValueError):
                raise CorruptContainerError(f"malformed entry {spec!r}") from None
            if any(s < 0 for s in shape) or int(np.prod(shape, dtype=np.int64)) * dtype.itemsize != nbytes:
                raise ShapeMismatchError(f"entry {name!r}: shape {shape} does not match {nbytes} bytes")
            if off < 0 or off + nbytes > len(payload):
                raise CorruptContainerError(f"entry {name!r} extends past end of file")
            spans.append((off, off + nbytes, name))
            entries[name] = np.frombuffer(payload[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        spans.sort()
        for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise CorruptContainerError(f"entries {n0!r} and {n1!r} overlap")
        end = spans[-1][1] if spans else 0
        if end != len(payload):
            raise CorruptContainerError(f"payload has {len(payload)} bytes, entries cover {end}")
        out = cls(meta=header.get("meta", {}))
        out.entries = entries
        return out

    def write(self, path):
        """Atomic write: temp file in the target directory, then rename."""
        data = self.to_bytes()
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".vbtc-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _kind(tc, expected):
    kind = tc.meta.get("kind")
    if kind != expected:
        raise ContainerError(f"expected a {expected!r} container, found {kind!r}")


def save_backend(path, backend):
    tc = TensorContainer({"means": backend.means, "precisions": backend.precisions}, {"kind": "backend"})
    if backend.weights is not None:
        tc["weights"] = backend.weights
    tc.write(path)


def load_backend(path):
    tc = TensorContainer.read(path)
    _kind(tc, "backend")
    weights = tc["weights"] if "weights" in tc else None
    return GmmBackend(tc["means"], tc["precisions"], weights)


def save_sessions(path, arrays, kind, extra=None):
    """Per-session matrices (frames or responsibilities), one entry per session id."""
    tc = TensorContainer(meta={"kind": kind, **(extra or {})})
    for sid, arr in arrays.items():
        tc[sid] = arr
    tc.write(path)


def load_sessions(path, kind):
    tc = TensorContainer.read(path)
    _kind(tc, kind)
    return {name: tc[name] for name in tc.names()}


def save_stats(path, stats):
    tc = TensorContainer(
        {"N": stats.N, "Fbar": stats.Fbar, "Sbar": stats.glob.Sbar, "Ntot": stats.glob.Ntot},
        {"kind": "stats", "session_ids": list(stats.session_ids), "backend_hash": stats.backend_hash},
    )
    tc.write(path)


def load_stats(path):
    tc = TensorContainer.read(path)
    _kind(tc, "stats")
    N = tc["N"]
    glob = GlobalStats(tc["Sbar"], tc["Ntot"], N.shape[0])
    ids = list(tc.meta.get("session_ids", []))
    if ids and len(ids) != N.shape[0]:
        raise ShapeMismatchError(f"{len(ids)} session ids for {N.shape[0]} sessions")
    return StatsBatch(N, tc["Fbar"], glob, ids, tc.meta.get("backend_hash", ""))


@dataclass
class ModelBundle:
    variant: str
    backend_hash: str
    loadings: LoadingPosterior
    alpha: AlphaPosterior = None
    hyper: Hyper = None
    mindiv: MinDivStats = None
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def check_backend(self, backend_hash):
        if self.backend_hash and backend_hash and self.backend_hash != backend_hash:
            raise HashMismatchError(
                f"model was trained against backend {self.backend_hash[:12]}, "
                f"statistics use {backend_hash[:12]}"
            )

    def history_terms(self):
        return list(self.history[0].terms) if self.history else []


def _history_array(history):
    if not history:
        return np.zeros((0, 1)), []
    names = list(history[0].terms)
    return np.array([r.row(names) for r in history], dtype=np.float64), names


def save_model(path, bundle):
    lp = bundle.loadings
    if lp.prec is None:
        raise ContainerError("cannot store a point-mass loading posterior")
    hist, names = _history_array(bundle.history)
    meta = {
        "kind": "model",
        "variant": bundle.variant,
        "backend_hash": bundle.backend_hash,
        "K": lp.K,
        "d": lp.d,
        "n_y": lp.n,
        "config": bundle.config,
        "history_terms": names,
    }
    tc = TensorContainer({"W": lp.stacked, "L_W": lp.prec}, meta)
    if bundle.alpha is not None:
        tc["alpha_a"] = np.array([bundle.alpha.a_post])
        tc["alpha_b"] = bundle.alpha.b_post
    if bundle.hyper is not None:
        tc["hyper"] = np.array([bundle.hyper.a, bundle.hyper.b])
    if bundle.mindiv is not None:
        tc["mu_y"] = bundle.mindiv.mu
        tc["Sigma_y"] = bundle.mindiv.sigma
        tc["offset"] = bundle.mindiv.offset
    tc["history"] = hist
    tc.write(path)


def _history_from(tc):
    names = list(tc.meta.get("history_terms", []))
    hist = tc["history"] if "history" in tc else np.zeros((0, 1))
    if hist.shape[0] and hist.shape[1] != len(names) + 1:
        raise ShapeMismatchError("history columns do not match the stored term names")
    return [ElboReport(float(row[0]), dict(zip(names, map(float, row[1:])))) for row in hist]


def load_model(path):
    tc = TensorContainer.read(path)
    _kind(tc, "model")
    K, d, n = int(tc.meta["K"]), int(tc.meta["d"]), int(tc.meta["n_y"])
    W = tc["W"]
    L = tc["L_W"]
    if W.shape != (K * d, n) or L.shape != (K, n, n):
        raise ShapeMismatchError(f"model arrays {W.shape}, {L.shape} disagree with K={K}, d={d}, n_y={n}")
    loadings = LoadingPosterior.from_precision(W.reshape(K, d, n), L)
    alpha = AlphaPosterior(tc["alpha_a"][0], tc["alpha_b"]) if "alpha_a" in tc else None
    hyper = Hyper(*tc["hyper"]) if "hyper" in tc else None
    mindiv = None
    if "mu_y" in tc:
        sigma = tc["Sigma_y"]
        mindiv = MinDivStats(tc["mu_y"], sigma, np.linalg.cholesky(sigma), tc["offset"])
    return ModelBundle(
        tc.meta["variant"],
        tc.meta.get("backend_hash", ""),
        loadings,
        alpha,
        hyper,
        mindiv,
        tc.meta.get("config", {}),
        _history_from(tc),
    )


def load_history(path):
    """Bound history from a model file (or any container with a ``history`` entry)."""
    return _history_from(TensorContainer.read(path))


def save_prior(path, prior, backend_hash=""):
    K, d, n = prior.wbar0.shape
    tc = TensorContainer(
        {"w0": prior.wbar0.reshape(K * d, n), "L0": prior.prec0},
        {"kind": "prior", "K": K, "d": d, "n_y": n, "backend_hash": backend_hash},
    )
    tc.write(path)


def load_prior(path):
    """A prior file (``w0``, ``L0``) or a trained model (``L0 := L_W``).

    Returns ``(LoadingPrior, backend_hash)``.
    """
    from .adapt import LoadingPrior

    tc = TensorContainer.read(path)
    kind = tc.meta.get("kind")
    if kind == "prior":
        K, d, n = int(tc.meta["K"]), int(tc.meta["d"]), int(tc.meta["n_y"])
        w0 = tc["w0"]
        if w0.shape != (K * d, n):
            raise ShapeMismatchError(f"w0 shape {w0.shape} does not match K={K}, d={d}, n_y={n}")
        return LoadingPrior(w0.reshape(K, d, n), tc["L0"]), tc.meta.get("backend_hash", "")
    if kind == "model":
        bundle = load_model(path)
        return LoadingPrior.from_posterior(bundle.loadings), bundle.backend_hash
    raise ContainerError(f"expected a prior or model container, found {kind!r}")
