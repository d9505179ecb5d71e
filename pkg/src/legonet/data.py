"""Embedding datasets: the fixed encoder's outputs, stored as files.

The encoder itself is out of scope here — any pretrained backbone run
elsewhere can produce these files. Everything downstream (keys, adapters,
unlearning) consumes only the (id, label, encoding) triples.

LGEM binary format, little-endian:

    magic "LGEM" | u16 version=1 | u32 N | u32 d | u32 C
    then N records of (u64 id, u32 label, d x f32 encoding)

Records must be strictly ascending by id; that canonical order is what makes
save-then-load byte-stable. A CSV form with header ``id,label,e0..e{d-1}``
is accepted for hand-written fixtures (rows are sorted on load, and the
class count is inferred as max(label)+1).
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, IoError, ValidationError
from .seeding import rng_from

LGEM_MAGIC = b"LGEM"
LGEM_VERSION = 1
_HEADER = struct.Struct("<4sHIII")

# Center placement draws from N(0, c^2 I) with c = separation * sqrt(2/d),
# which puts the typical pairwise center distance near 2x the required
# separation, so rejection sampling converges quickly in low dimensions
# without spreading clusters so far apart that every fixture saturates.
CENTER_RETRY_BUDGET = 10_000


@dataclass(frozen=True)
class Sample:
    """One encoded training instance."""

    id: int
    label: int
    encoding: np.ndarray  # (d,) float32


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian-mixture generator settings (desk-scale encoder stand-in)."""

    num_classes: int
    dim: int
    samples_per_class: int
    cluster_separation: float
    noise_std: float
    seed: int

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 1 or self.samples_per_class < 1:
            raise ConfigError("dim and samples_per_class must be >= 1")
        if not (self.cluster_separation > 0):
            raise ConfigError("cluster_separation must be > 0")
        if not (self.noise_std > 0):
            raise ConfigError("noise_std must be > 0")


class EmbeddingDataset:
    """Immutable id-sorted collection of encoded samples.

    Stored as parallel arrays (ids uint64, labels uint32, encodings
    float32 NxD) rather than Sample objects; ``sample(i)`` and iteration
    provide the per-record view.
    """

    def __init__(
        self,
        ids: np.ndarray,
        labels: np.ndarray,
        encodings: np.ndarray,
        num_classes: int,
        provenance: str = "",
        _sort: bool = False,
    ):
        ids = np.ascontiguousarray(ids, dtype=np.uint64)
        labels = np.ascontiguousarray(labels, dtype=np.uint32)
        encodings = np.ascontiguousarray(encodings, dtype=np.float32)
        if encodings.ndim != 2:
            raise ValidationError("encodings must be a 2-d array")
        if not (len(ids) == len(labels) == len(encodings)):
            raise ValidationError("ids, labels and encodings must have equal length")
        if _sort:
            order = np.argsort(ids, kind="stable")
            ids, labels, encodings = ids[order], labels[order], encodings[order]
        self.ids = ids
        self.labels = labels
        self.encodings = encodings
        self.num_classes = int(num_classes)
        self.provenance = provenance
        self._validate()
        for arr in (self.ids, self.labels, self.encodings):
            arr.setflags(write=False)

    def _validate(self) -> None:
        if self.encodings.shape[1] < 1:
            raise ValidationError("encoding dimension must be >= 1")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.ids) > 1:
            diffs_ok = np.all(self.ids[1:] > self.ids[:-1])
            if not diffs_ok:
                bad = int(np.flatnonzero(self.ids[1:] <= self.ids[:-1])[0]) + 1
                if self.ids[bad] == self.ids[bad - 1]:
                    raise ValidationError(f"duplicate id {int(self.ids[bad])}")
                raise ValidationError(
                    f"ids not strictly ascending at record {bad} (id {int(self.ids[bad])})"
                )
        bad_label = np.flatnonzero(self.labels >= self.num_classes)
        if bad_label.size:
            i = int(bad_label[0])
            raise ValidationError(
                f"label {int(self.labels[i])} out of range [0, {self.num_classes}) "
                f"for id {int(self.ids[i])}"
            )
        finite = np.isfinite(self.encodings).all(axis=1)
        if not finite.all():
            i = int(np.flatnonzero(~finite)[0])
            raise ValidationError(f"non-finite encoding component for id {int(self.ids[i])}")

    # -- views ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.encodings.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(int(self.ids[i]), int(self.labels[i]), self.encodings[i])

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))

    def rows_for_ids(self, ids: np.ndarray) -> np.ndarray:
        """Row indices of the given ids (which must all be present)."""
        ids = np.asarray(ids, dtype=np.uint64)
        rows = np.searchsorted(self.ids, ids)
        oob = rows >= len(self.ids)
        if np.any(oob):
            raise ValidationError(f"id {int(ids[np.flatnonzero(oob)[0]])} not present in dataset")
        wrong = self.ids[rows] != ids
        if np.any(wrong):
            raise ValidationError(f"id {int(ids[np.flatnonzero(wrong)[0]])} not present in dataset")
        return rows

    def subset(self, ids: np.ndarray, provenance: str | None = None) -> "EmbeddingDataset":
        """Dataset restricted to the given ids, keeping dim and num_classes."""
        rows = self.rows_for_ids(np.sort(np.asarray(ids, dtype=np.uint64)))
        return EmbeddingDataset(
            self.ids[rows],
            self.labels[rows],
            self.encodings[rows],
            self.num_classes,
            provenance if provenance is not None else self.provenance,
        )

    # -- canonical bytes ---------------------------------------------------

    def to_lgem_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(LGEM_MAGIC, LGEM_VERSION, len(self), self.dim, self.num_classes))
        rec = np.zeros(
            len(self),
            dtype=np.dtype([("id", "<u8"), ("label", "<u4"), ("enc", "<f4", (self.dim,))]),
        )
        rec["id"] = self.ids
        rec["label"] = self.labels
        rec["enc"] = self.encodings
        buf.write(rec.tobytes())
        return buf.getvalue()

    def digest(self) -> bytes:
        """sha256 over the canonical LGEM bytes; identifies dataset content."""
        return hashlib.sha256(self.to_lgem_bytes()).digest()


# ---------------------------------------------------------------------------
# file IO


def save_dataset(dataset: EmbeddingDataset, path) -> None:
    try:
        with open(path, "wb") as f:
            f.write(dataset.to_lgem_bytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def save_dataset_csv(dataset: EmbeddingDataset, path) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "label"] + [f"e{i}" for i in range(dataset.dim)])
            for s in dataset:
                w.writerow([s.id, s.label] + [repr(float(v)) for v in s.encoding])
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_dataset(path, provenance: str | None = None) -> EmbeddingDataset:
    """Load an LGEM or CSV dataset, checking every invariant."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if raw[:4] == LGEM_MAGIC:
        return _parse_lgem(raw, provenance if provenance is not None else str(path))
    return _parse_csv(raw, provenance if provenance is not None else str(path))


def _parse_lgem(raw: bytes, provenance: str) -> EmbeddingDataset:
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, n, d, c = _HEADER.unpack_from(raw)
    if magic != LGEM_MAGIC:
        raise FormatError("bad magic")
    if version != LGEM_VERSION:
        raise FormatError(f"unsupported version {version}")
    if d < 1:
        raise FormatError("dimension must be >= 1")
    rec_dtype = np.dtype([("id", "<u8"), ("label", "<u4"), ("enc", "<f4", (d,))])
    body = raw[_HEADER.size :]
    expected = n * rec_dtype.itemsize
    if len(body) != expected:
        raise FormatError(
            f"declared {n} records ({expected} payload bytes) but found {len(body)} bytes"
        )
    rec = np.frombuffer(body, dtype=rec_dtype)
    enc = rec["enc"].reshape(n, d) if n else np.zeros((0, d), dtype=np.float32)
    return EmbeddingDataset(rec["id"], rec["label"], enc, c, provenance)


def _parse_csv(raw: bytes, provenance: str) -> EmbeddingDataset:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"neither LGEM magic nor readable CSV: {e}") from e
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty CSV")
    header = rows[0]
    if len(header) < 3 or header[0] != "id" or header[1] != "label":
        raise FormatError("CSV header must be id,label,e0..e{d-1}")
    d = len(header) - 2
    if header[2:] != [f"e{i}" for i in range(d)]:
        raise FormatError("CSV header must be id,label,e0..e{d-1}")
    ids, labels, enc = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise FormatError(f"line {lineno}: expected {d + 2} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            enc.append([np.float32(v) for v in row[2:]])
        except ValueError as e:
            raise FormatError(f"line {lineno}: {e}") from e
    if not ids:
        raise FormatError("CSV has no data rows")
    labels_arr = np.asarray(labels, dtype=np.uint32)
    return EmbeddingDataset(
        np.asarray(ids, dtype=np.uint64),
        labels_arr,
        np.asarray(enc, dtype=np.float32),
        int(labels_arr.max()) + 1,
        provenance,
        _sort=True,
    )


# ---------------------------------------------------------------------------
# synthesis and splitting


def synth_generate(config: SynthConfig) -> EmbeddingDataset:
    """Deterministic Gaussian-mixture embeddings.

    Cluster centers are rejection-sampled (pairwise distance >=
    cluster_separation) from a seeded generator; samples are center +
    noise_std * standard normal, labelled by generating cluster. Ids are
    assigned 0..N-1 in class order.
    """
    config.validate()
    rng = rng_from(config.seed)
    c_std = config.cluster_separation * np.sqrt(2.0 / config.dim)
    centers = np.zeros((config.num_classes, config.dim), dtype=np.float64)
    placed = 0
    retries = 0
    while placed < config.num_classes:
        cand = rng.standard_normal(config.dim) * c_std
        if placed and np.min(np.linalg.norm(centers[:placed] - cand, axis=1)) < config.cluster_separation:
            retries += 1
            if retries > CENTER_RETRY_BUDGET:
                raise ConfigError(
                    f"could not place {config.num_classes} centers at separation "
                    f"{config.cluster_separation} in {config.dim} dims "
                    f"within {CENTER_RETRY_BUDGET} retries"
                )
            continue
        centers[placed] = cand
        placed += 1
    per = config.samples_per_class
    n = config.num_classes * per
    enc = np.empty((n, config.dim), dtype=np.float64)
    labels = np.empty(n, dtype=np.uint32)
    for c in range(config.num_classes):
        block = slice(c * per, (c + 1) * per)
        enc[block] = centers[c] + rng.standard_normal((per, config.dim)) * config.noise_std
        labels[block] = c
    return EmbeddingDataset(
        np.arange(n, dtype=np.uint64),
        labels,
        enc.astype(np.float32),
        config.num_classes,
        provenance=f"synth(seed={config.seed})",
    )


def split(
    dataset: EmbeddingDataset, test_fraction: float, seed: int
) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Stratified train/test partition, deterministic for a fixed seed."""
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = rng_from(seed)
    test_mask = np.zeros(len(dataset), dtype=bool)
    for c in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == c)
        if rows.size == 0:
            continue
        n_test = int(round(test_fraction * rows.size))
        picked = rng.permutation(rows.size)[:n_test]
        test_mask[rows[picked]] = True
    n_test_total = int(test_mask.sum())
    if n_test_total == 0 or n_test_total == len(dataset):
        raise ConfigError(
            f"test_fraction {test_fraction} produces an empty split "
            f"({len(dataset) - n_test_total} train / {n_test_total} test)"
        )
    train = dataset.subset(dataset.ids[~test_mask], provenance=dataset.provenance + "/train")
    test = dataset.subset(dataset.ids[test_mask], provenance=dataset.provenance + "/test")
    return train, test
