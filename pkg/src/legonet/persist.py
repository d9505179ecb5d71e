"""Canonical checkpoint serialization.

Byte layout: magic "LGCK", u16 version, u8 system kind, a length-prefixed
canonical-JSON config block, a table of named binary sections (parameters as
raw IEEE 754 f32 little-endian, id lists as u64 little-endian), and a
trailing sha256 over everything before it.

Canonical means: a state serializes to exactly one byte string, so state
equality IS file equality. That is the mechanism behind the package's
removal guarantee: "unlearned" and "retrained from scratch" are compared as
files, not through tolerances. Floats never pass through decimal text;
derived fields (per-sub-model seeds, id-list digests) are recomputed on
load rather than stored, so they cannot go stale.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .adapter import AdapterModel, TrainerConfig, ids_digest
from .baselines import FixSisaModel, SingleHeadModel
from .errors import DigestMismatchError, FormatError, IoError
from .keys import KeySet
from .model import LegoConfig, LegoModel
from .seeding import mix_seed

MAGIC = b"LGCK"
VERSION = 1
_KINDS = {"lego": 1, "single": 2, "fixsisa": 3}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}

_HEADER = struct.Struct("<4sHB")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _u64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<u8").tobytes()


def _trainer_dict(t: TrainerConfig) -> dict:
    return {
        "epochs": t.epochs,
        "batch_size": t.batch_size,
        "learning_rate": t.learning_rate,
        "l2_penalty": t.l2_penalty,
        "use_bias": t.use_bias,
        "init_std": t.init_std,
    }


def _trainer_from(d: dict) -> TrainerConfig:
    return TrainerConfig(
        epochs=int(d["epochs"]),
        batch_size=int(d["batch_size"]),
        learning_rate=float(d["learning_rate"]),
        l2_penalty=float(d["l2_penalty"]),
        use_bias=bool(d["use_bias"]),
        init_std=float(d["init_std"]),
    )


def _adapter_sections(prefix: str, a: AdapterModel) -> list[tuple[str, bytes]]:
    out = [(f"{prefix}/weights", _f32_bytes(a.weights))]
    if a.bias is not None:
        out.append((f"{prefix}/bias", _f32_bytes(a.bias)))
    return out


def _describe(state) -> tuple[int, dict, list[tuple[str, bytes]]]:
    """(kind, config dict, ordered named sections) for any supported state."""
    if isinstance(state, LegoModel):
        c = state.config
        config = {
            "n_adapters": c.n_adapters,
            "k_active": c.k_active,
            "seed": c.seed,
            "perturb_scale": c.perturb_scale,
            "ensemble": c.ensemble,
            "trainer": _trainer_dict(c.trainer),
            "key_init_seed": state.keys.init_seed,
            "num_classes": state.num_classes,
            "dim": state.dim,
        }
        sections = [
            ("keys", _f32_bytes(state.keys.keys)),
            ("key_perturb_std", _f64_bytes(state.keys.perturb_std)),
            ("dataset_digest", state.dataset_digest),
            ("retained", _u64_bytes(state.retained_ids)),
        ]
        for j, a in enumerate(state.adapters):
            sections.extend(_adapter_sections(f"adapter{j}", a))
            sections.append((f"adapter{j}/records", _u64_bytes(state.records[j])))
        return _KINDS["lego"], config, sections

    if isinstance(state, SingleHeadModel):
        config = {
            "seed": state.seed,
            "trainer": _trainer_dict(state.trainer),
            "num_classes": state.num_classes,
            "dim": state.dim,
            "exact": state.exact,
        }
        sections = [
            ("dataset_digest", state.dataset_digest),
            ("retained", _u64_bytes(state.trained_ids)),
        ]
        sections.extend(_adapter_sections("head", state.head))
        return _KINDS["single"], config, sections

    if isinstance(state, FixSisaModel):
        config = {
            "num_shards": state.num_shards,
            "seed": state.seed,
            "trainer": _trainer_dict(state.trainer),
            "num_classes": state.num_classes,
            "dim": state.dim,
        }
        sections = [("dataset_digest", state.dataset_digest)]
        for j, a in enumerate(state.shards):
            sections.extend(_adapter_sections(f"shard{j}", a))
            sections.append((f"shard{j}/ids", _u64_bytes(state.shard_ids[j])))
        return _KINDS["fixsisa"], config, sections

    raise FormatError(f"cannot serialize object of type {type(state).__name__}")


def to_bytes(state) -> bytes:
    kind, config, sections = _describe(state)
    buf = bytearray(_HEADER.pack(MAGIC, VERSION, kind))
    cj = _canon_json(config)
    buf += _U32.pack(len(cj)) + cj
    buf += _U32.pack(len(sections))
    for name, data in sections:
        nb = name.encode()
        buf += _U16.pack(len(nb)) + nb + _U64.pack(len(data)) + data
    buf += hashlib.sha256(bytes(buf)).digest()
    return bytes(buf)


def save(state, path) -> bytes:
    """Write the state's canonical bytes; returns the content digest."""
    raw = to_bytes(state)
    try:
        with open(path, "wb") as f:
            f.write(raw)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e
    return raw[-32:]


class _Cursor:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.raw) - self.pos}"
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def parse(raw: bytes) -> tuple[int, dict, list[tuple[str, bytes]]]:
    """Verify framing and digest; return (kind, config, ordered sections)."""
    if len(raw) < _HEADER.size + 32:
        raise FormatError("checkpoint too short")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatchError("checkpoint content digest does not verify")
    cur = _Cursor(body)
    magic, version, kind = cur.unpack(_HEADER)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if kind not in _KIND_NAMES:
        raise FormatError(f"unknown system kind {kind}")
    (clen,) = cur.unpack(_U32)
    try:
        config = json.loads(cur.take(clen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"config block is not canonical JSON: {e}") from e
    (nsec,) = cur.unpack(_U32)
    sections = []
    for _ in range(nsec):
        (nlen,) = cur.unpack(_U16)
        name = cur.take(nlen).decode()
        (dlen,) = cur.unpack(_U64)
        sections.append((name, cur.take(dlen)))
    if cur.pos != len(body):
        raise FormatError(f"{len(body) - cur.pos} trailing bytes after last section")
    return kind, config, sections


def _f32_mat(data: bytes, shape: tuple[int, ...], name: str) -> np.ndarray:
    want = int(np.prod(shape)) * 4
    if len(data) != want:
        raise FormatError(f"section {name}: expected {want} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def _u64_list(data: bytes, name: str) -> np.ndarray:
    if len(data) % 8:
        raise FormatError(f"section {name}: length {len(data)} is not a multiple of 8")
    return np.frombuffer(data, dtype="<u8").copy()


def _f64_vec(data: bytes, length: int, name: str) -> np.ndarray:
    if len(data) != length * 8:
        raise FormatError(f"section {name}: expected {length * 8} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8").copy()


def _rebuild_adapter(
    sec: dict[str, bytes], prefix: str, rec: np.ndarray, C: int, d: int, use_bias: bool, seed: int
) -> AdapterModel:
    w = _f32_mat(_need(sec, f"{prefix}/weights"), (C, d), f"{prefix}/weights")
    b = None
    if use_bias:
        b = _f32_mat(_need(sec, f"{prefix}/bias"), (C,), f"{prefix}/bias")
    elif f"{prefix}/bias" in sec:
        raise FormatError(f"section {prefix}/bias present but config has use_bias=false")
    return AdapterModel(w, b, seed, ids_digest(rec))


def _need(sec: dict[str, bytes], name: str) -> bytes:
    if name not in sec:
        raise FormatError(f"missing section {name}")
    return sec[name]


def from_bytes(raw: bytes):
    kind, config, section_list = parse(raw)
    sec = dict(section_list)
    try:
        trainer = _trainer_from(config["trainer"])
        C = int(config["num_classes"])
        d = int(config["dim"])
        seed = int(config["seed"])
        if kind == _KINDS["lego"]:
            n = int(config["n_adapters"])
            cfg = LegoConfig(
                n_adapters=n,
                k_active=int(config["k_active"]),
                seed=seed,
                perturb_scale=float(config["perturb_scale"]),
                ensemble=str(config["ensemble"]),
                trainer=trainer,
            )
            keys = KeySet(
                keys=_f32_mat(_need(sec, "keys"), (n, d), "keys"),
                init_seed=int(config["key_init_seed"]),
                perturb_std=_f64_vec(_need(sec, "key_perturb_std"), d, "key_perturb_std"),
            )
            records = tuple(
                _u64_list(_need(sec, f"adapter{j}/records"), f"adapter{j}/records")
                for j in range(n)
            )
            adapters = tuple(
                _rebuild_adapter(
                    sec, f"adapter{j}", records[j], C, d, trainer.use_bias, mix_seed(seed, j)
                )
                for j in range(n)
            )
            return LegoModel(
                config=cfg,
                keys=keys,
                adapters=adapters,
                records=records,
                retained_ids=_u64_list(_need(sec, "retained"), "retained"),
                num_classes=C,
                dataset_digest=_need(sec, "dataset_digest"),
            )
        if kind == _KINDS["single"]:
            retained = _u64_list(_need(sec, "retained"), "retained")
            head = _rebuild_adapter(sec, "head", retained, C, d, trainer.use_bias, mix_seed(seed, 0))
            return SingleHeadModel(
                head=head,
                trained_ids=retained,
                trainer=trainer,
                num_classes=C,
                dataset_digest=_need(sec, "dataset_digest"),
                seed=seed,
                exact=bool(config["exact"]),
            )
        s = int(config["num_shards"])
        shard_ids = tuple(
            _u64_list(_need(sec, f"shard{j}/ids"), f"shard{j}/ids") for j in range(s)
        )
        shards = tuple(
            _rebuild_adapter(
                sec, f"shard{j}", shard_ids[j], C, d, trainer.use_bias, mix_seed(seed, j)
            )
            for j in range(s)
        )
        return FixSisaModel(
            num_shards=s,
            shards=shards,
            shard_ids=shard_ids,
            trainer=trainer,
            num_classes=C,
            dataset_digest=_need(sec, "dataset_digest"),
            seed=seed,
        )
    except KeyError as e:
        raise FormatError(f"config block is missing field {e.args[0]!r}") from e


def load(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(raw)


def _first_diff(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    arr_a = np.frombuffer(a[:n], dtype=np.uint8)
    arr_b = np.frombuffer(b[:n], dtype=np.uint8)
    where = np.nonzero(arr_a != arr_b)[0]
    return int(where[0]) if where.size else n


def diff_bytes(raw_a: bytes, raw_b: bytes) -> str | None:
    """None when the checkpoints encode the same state; otherwise a one-line
    diagnostic naming the first differing field."""
    if raw_a == raw_b:
        return None
    kind_a, config_a, secs_a = parse(raw_a)
    kind_b, config_b, secs_b = parse(raw_b)
    if kind_a != kind_b:
        return f"kind differs: {_KIND_NAMES[kind_a]} vs {_KIND_NAMES[kind_b]}"
    if config_a != config_b:
        keys = sorted(set(config_a) | set(config_b))
        for k in keys:
            if config_a.get(k) != config_b.get(k):
                return f"config field {k!r} differs: {config_a.get(k)!r} vs {config_b.get(k)!r}"
    names_a = [n for n, _ in secs_a]
    names_b = [n for n, _ in secs_b]
    if names_a != names_b:
        extra_a = [n for n in names_a if n not in names_b]
        extra_b = [n for n in names_b if n not in names_a]
        return f"section lists differ: only-left={extra_a} only-right={extra_b}"
    for (name, da), (_, db) in zip(secs_a, secs_b):
        if da != db:
            if len(da) != len(db):
                return f"section {name} differs: {len(da)} vs {len(db)} bytes"
            return f"section {name} differs at byte {_first_diff(da, db)}"
    # Same kind, config, and sections: the states are identical and the raw
    # difference is non-canonical encoding (for example JSON whitespace).
    return None


def states_equal(path_a, path_b) -> tuple[bool, str]:
    """Compare two checkpoints; (True, "") when they encode identical state,
    else (False, diagnostic naming the first differing field)."""
    try:
        with open(path_a, "rb") as f:
            raw_a = f.read()
        with open(path_b, "rb") as f:
            raw_b = f.read()
    except OSError as e:
        raise IoError(f"cannot read checkpoint: {e}") from e
    d = diff_bytes(raw_a, raw_b)
    return (True, "") if d is None else (False, d)
