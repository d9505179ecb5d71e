"""Dataset container, LGEM/CSV round trips, synthesis, splitting."""

import numpy as np
import pytest

from legonet import (
    EmbeddingDataset,
    FormatError,
    SynthConfig,
    ValidationError,
    load_dataset,
    save_dataset,
    save_dataset_csv,
    split,
    synth_generate,
)
from legonet.errors import ConfigError


def _toy(ids=(1, 2, 3), labels=(0, 1, 0), num_classes=2, d=3):
    rng = np.random.default_rng(0)
    enc = rng.standard_normal((len(ids), d)).astype(np.float32)
    return EmbeddingDataset(
        np.asarray(ids, dtype=np.uint64),
        np.asarray(labels, dtype=np.uint32),
        enc,
        num_classes,
    )


# -- container invariants ----------------------------------------------------


def test_duplicate_id_rejected_naming_the_id():
    with pytest.raises(ValidationError, match="duplicate id 7"):
        _toy(ids=(3, 7, 7, 9), labels=(0, 1, 0, 1))


def test_unsorted_ids_rejected():
    with pytest.raises(ValidationError, match="ascending"):
        _toy(ids=(5, 2, 9), labels=(0, 1, 0))


def test_label_out_of_range_names_offending_id():
    with pytest.raises(ValidationError, match=r"label 2 out of range.*id 2"):
        _toy(ids=(1, 2, 3), labels=(0, 2, 1), num_classes=2)


def test_non_finite_encoding_rejected():
    enc = np.zeros((2, 3), dtype=np.float32)
    enc[1, 2] = np.nan
    with pytest.raises(ValidationError, match="non-finite.*id 8"):
        EmbeddingDataset(
            np.array([4, 8], dtype=np.uint64), np.array([0, 1], dtype=np.uint32), enc, 2
        )


def test_arrays_are_read_only(blobs):
    for arr in (blobs.ids, blobs.labels, blobs.encodings):
        with pytest.raises(ValueError):
            arr[0] = 0


def test_rows_for_ids_roundtrip(blobs):
    ids = blobs.ids[[5, 0, 17]]
    rows = blobs.rows_for_ids(ids)
    assert np.array_equal(blobs.ids[rows], ids)


def test_rows_for_ids_missing_id(blobs):
    absent = int(blobs.ids.max()) + 10
    with pytest.raises(ValidationError, match=f"id {absent} not present"):
        blobs.rows_for_ids(np.array([int(blobs.ids[0]), absent], dtype=np.uint64))


def test_subset_sorts_input_and_keeps_metadata(blobs):
    want = np.array([int(blobs.ids[9]), int(blobs.ids[2]), int(blobs.ids[30])], dtype=np.uint64)
    sub = blobs.subset(want)
    assert np.array_equal(sub.ids, np.sort(want))
    assert sub.dim == blobs.dim and sub.num_classes == blobs.num_classes
    rows = blobs.rows_for_ids(sub.ids)
    assert np.array_equal(sub.encodings, blobs.encodings[rows])
    assert np.array_equal(sub.labels, blobs.labels[rows])


# -- LGEM bytes ---------------------------------------------------------------


def test_lgem_roundtrip_byte_identical(tmp_path, blobs):
    p = tmp_path / "d.lgem"
    save_dataset(blobs, p)
    again = load_dataset(p)
    assert again.to_lgem_bytes() == blobs.to_lgem_bytes()
    assert again.digest() == blobs.digest()
    assert again.num_classes == blobs.num_classes


def test_digest_is_sha256_of_lgem_bytes(blobs):
    import hashlib

    assert blobs.digest() == hashlib.sha256(blobs.to_lgem_bytes()).digest()


def test_lgem_declared_count_mismatch(tmp_path, tiny):
    raw = bytearray(tiny.to_lgem_bytes())
    # Patch the declared record count from N to N+1 without adding payload.
    import struct

    struct.pack_into("<I", raw, 6, len(tiny) + 1)
    p = tmp_path / "bad.lgem"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="declared"):
        load_dataset(p)


def test_lgem_bad_version(tmp_path, tiny):
    raw = bytearray(tiny.to_lgem_bytes())
    raw[4] = 9
    p = tmp_path / "bad.lgem"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_dataset(p)


def test_lgem_truncated_payload(tmp_path, tiny):
    raw = tiny.to_lgem_bytes()
    p = tmp_path / "bad.lgem"
    p.write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        load_dataset(p)


# -- CSV form -----------------------------------------------------------------


def test_csv_roundtrip_exact(tmp_path, tiny):
    p = tmp_path / "d.csv"
    save_dataset_csv(tiny, p)
    again = load_dataset(p)
    # repr() of a float32 value round-trips exactly through float32 parsing.
    assert again.digest() == tiny.digest()


def test_csv_rows_sorted_on_load(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,label,e0,e1\n9,1,0.5,0.5\n2,0,1.0,0.0\n5,1,0.0,1.0\n")
    ds = load_dataset(p)
    assert np.array_equal(ds.ids, np.array([2, 5, 9], dtype=np.uint64))
    assert ds.num_classes == 2


def test_csv_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("ident,label,e0\n1,0,0.5\n")
    with pytest.raises(FormatError, match="header"):
        load_dataset(p)


def test_csv_duplicate_id_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,label,e0\n7,0,0.5\n7,1,0.25\n")
    with pytest.raises(ValidationError, match="duplicate id 7"):
        load_dataset(p)


def test_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,label,e0,e1\n1,0,0.5\n")
    with pytest.raises(FormatError, match="line 2"):
        load_dataset(p)


# -- synthesis ----------------------------------------------------------------


def test_synth_well_separated_is_nearest_centroid_pure():
    cfg = SynthConfig(
        num_classes=5,
        dim=16,
        samples_per_class=40,
        cluster_separation=10.0,
        noise_std=0.1,
        seed=42,
    )
    ds = synth_generate(cfg)
    enc = ds.encodings.astype(np.float64)
    centroids = np.stack([enc[ds.labels == c].mean(axis=0) for c in range(cfg.num_classes)])
    d2 = ((enc[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(d2.argmin(axis=1), ds.labels.astype(np.int64))


def test_synth_huge_noise_still_valid():
    cfg = SynthConfig(
        num_classes=2,
        dim=4,
        samples_per_class=10,
        cluster_separation=1.0,
        noise_std=1e6,
        seed=1,
    )
    ds = synth_generate(cfg)
    assert len(ds) == 20
    assert np.isfinite(ds.encodings).all()


def test_synth_deterministic():
    cfg = SynthConfig(3, 8, 15, 4.0, 1.0, seed=99)
    assert synth_generate(cfg).digest() == synth_generate(cfg).digest()
    other = SynthConfig(3, 8, 15, 4.0, 1.0, seed=100)
    assert synth_generate(other).digest() != synth_generate(cfg).digest()


def test_synth_ids_are_contiguous():
    ds = synth_generate(SynthConfig(2, 4, 7, 3.0, 0.5, seed=0))
    assert np.array_equal(ds.ids, np.arange(14, dtype=np.uint64))


def test_synth_rejects_bad_config():
    with pytest.raises(ConfigError):
        SynthConfig(1, 4, 7, 3.0, 0.5, seed=0).validate()
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(2, 4, 7, -1.0, 0.5, seed=0))


# -- splitting ----------------------------------------------------------------


def test_split_is_stratified_and_partitions(blobs):
    train, test = split(blobs, test_fraction=0.25, seed=3)
    assert not np.intersect1d(train.ids, test.ids).size
    assert np.array_equal(np.union1d(train.ids, test.ids), blobs.ids)
    for c in range(blobs.num_classes):
        m_c = int((blobs.labels == c).sum())
        want = int(round(0.25 * m_c))
        assert int((test.labels == c).sum()) == want


def test_split_deterministic(blobs):
    a = split(blobs, 0.25, seed=3)
    b = split(blobs, 0.25, seed=3)
    assert a[0].digest() == b[0].digest() and a[1].digest() == b[1].digest()
    c = split(blobs, 0.25, seed=4)
    assert c[0].digest() != a[0].digest()


def test_split_rejects_degenerate_fraction(blobs):
    with pytest.raises(ConfigError):
        split(blobs, 0.0, seed=0)
    with pytest.raises(ConfigError):
        split(blobs, 1.0, seed=0)
