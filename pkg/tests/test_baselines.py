"""Comparison systems: exact scratch-equivalence for the retrain paths,
deliberate non-exactness for the gradient shortcuts, shard bookkeeping."""

import numpy as np
import pytest

from legonet import (
    LegoConfig,
    TrainerConfig,
    fit,
    fixsisa_fit,
    fixsisa_predict_proba,
    fixsisa_unlearn,
    ngrad,
    single_fit,
    single_predict_proba,
    single_retrain,
    tune,
)
from legonet.adapter import loss_and_grad
from legonet.baselines import (
    check_dataset,
    fixsisa_predict_label,
    shard_of,
    single_predict_label,
    split_forget,
)
from legonet.errors import (
    ConfigError,
    DigestMismatchError,
    UnknownIdError,
    ValidationError,
)


@pytest.fixture(scope="module")
def head(blobs_split, fast_trainer):
    train, _ = blobs_split
    return single_fit(train, fast_trainer, seed=9), train


@pytest.fixture(scope="module")
def sharded(blobs_split, fast_trainer):
    train, _ = blobs_split
    return fixsisa_fit(train, 5, fast_trainer, seed=9), train


def mean_loss(model, dataset):
    return loss_and_grad(model.head, dataset.encodings, dataset.labels, model.trainer)[0]


# -- single head ----------------------------------------------------------------


def test_single_fit_deterministic(blobs_split, fast_trainer):
    train, _ = blobs_split
    a = single_fit(train, fast_trainer, seed=9)
    b = single_fit(train, fast_trainer, seed=9)
    assert a.head.params_bytes() == b.head.params_bytes()
    c = single_fit(train, fast_trainer, seed=10)
    assert a.head.params_bytes() != c.head.params_bytes()


def test_single_retrain_matches_scratch(head):
    model, train = head
    victims = train.ids[5:15]
    after = single_retrain(model, victims, train)
    keep = train.ids[~np.isin(train.ids, victims)]
    want = single_fit(train.subset(keep), model.trainer, seed=model.seed)
    assert after.head.params_bytes() == want.head.params_bytes()
    assert after.dataset_digest == want.dataset_digest
    assert after.exact


def test_single_retrain_everything_gives_zero_model(head):
    model, train = head
    after = single_retrain(model, train.ids, train)
    assert not after.head.weights.any()
    assert len(after.trained_ids) == 0


def test_single_retrain_unknown_id(head):
    model, train = head
    with pytest.raises(UnknownIdError):
        single_retrain(model, [int(train.ids.max()) + 1], train)


def test_single_retrain_wrong_dataset(head, blobs_split):
    model, _ = blobs_split[1], None
    fitted, _ = head
    with pytest.raises(DigestMismatchError):
        single_retrain(fitted, [int(blobs_split[1].ids[0])], blobs_split[1])


def test_single_head_learns(head, blobs_split):
    model, _ = head
    _, test = blobs_split
    preds = [single_predict_label(model, e) for e in test.encodings]
    acc = float(np.mean(np.asarray(preds) == test.labels.astype(np.int64)))
    assert acc >= 0.9


# -- tune -------------------------------------------------------------------------


def test_tune_zero_steps_is_identity(head, blobs_split):
    model, train = head
    assert tune(model, train, model.trainer, seed=1, epochs=0) is model


def test_tune_marks_inexact_and_moves_parameters(head):
    model, train = head
    tuned = tune(model, train, model.trainer, seed=1, epochs=2)
    assert not tuned.exact
    assert tuned.head.params_bytes() != model.head.params_bytes()


def test_tune_on_training_set_does_not_increase_loss(head):
    model, train = head
    gentle = TrainerConfig(epochs=1, batch_size=len(train), learning_rate=0.01)
    before = mean_loss(model, train)
    tuned = tune(model, train, gentle, seed=0, epochs=1)
    after = mean_loss(tuned, train)
    assert after <= before + 1e-9


def test_tune_never_matches_scratch(head):
    model, train = head
    victims = train.ids[:10]
    keep = train.ids[~np.isin(train.ids, victims)]
    tuned = tune(model, train.subset(keep), model.trainer, seed=model.seed, epochs=2)
    want = single_fit(train.subset(keep), model.trainer, seed=model.seed)
    assert tuned.head.params_bytes() != want.head.params_bytes()


# -- ngrad ------------------------------------------------------------------------


def test_ngrad_zero_steps_is_identity(head, blobs_split):
    model, train = head
    assert ngrad(model, train.subset(train.ids[:3]), model.trainer, seed=1, epochs=0) is model


def test_ngrad_increases_loss_on_its_target(head):
    model, train = head
    one = train.subset(train.ids[:1])
    gentle = TrainerConfig(epochs=1, batch_size=1, learning_rate=0.01)
    before = mean_loss(model, one)
    after = mean_loss(ngrad(model, one, gentle, seed=0, epochs=1), one)
    assert after > before


def test_ngrad_degrades_target_class_but_is_not_exact(blobs_split, fast_trainer):
    train, _ = blobs_split
    model = single_fit(train, fast_trainer, seed=9)
    victims = train.ids[train.labels == 1]
    forget = train.subset(victims)
    keep = train.ids[~np.isin(train.ids, victims)]

    hit = ngrad(model, forget, fast_trainer, seed=4, epochs=5)
    before = np.mean([single_predict_label(model, e) == 1 for e in forget.encodings])
    after = np.mean([single_predict_label(hit, e) == 1 for e in forget.encodings])
    assert after < before

    want = single_fit(train.subset(keep), fast_trainer, seed=model.seed)
    assert hit.head.params_bytes() != want.head.params_bytes()
    assert not hit.exact


# -- sharded ensemble ----------------------------------------------------------------


def test_shards_partition_the_ids(sharded):
    model, train = sharded
    allids = np.concatenate(model.shard_ids)
    assert len(allids) == len(train)
    assert np.array_equal(np.sort(allids), train.ids)
    for j, rec in enumerate(model.shard_ids):
        for i in rec:
            assert shard_of(model.seed, model.num_shards, int(i)) == j


def test_shard_assignment_ignores_other_ids(sharded):
    model, _ = sharded
    # Hash sharding: the shard of an id is independent of the rest of the
    # dataset, which is what keeps deletions from reshuffling survivors.
    assert shard_of(model.seed, model.num_shards, 12345) == shard_of(
        model.seed, model.num_shards, 12345
    )


def test_single_shard_degenerates_to_single_head(blobs_split, fast_trainer):
    train, _ = blobs_split
    s1 = fixsisa_fit(train, 1, fast_trainer, seed=9)
    single = single_fit(train, fast_trainer, seed=9)
    assert s1.shards[0].params_bytes() == single.head.params_bytes()


def test_one_deletion_retrains_exactly_one_shard(sharded):
    model, train = sharded
    victim = int(train.ids[8])
    after, impacted = fixsisa_unlearn(model, [victim], train)
    assert impacted == [shard_of(model.seed, model.num_shards, victim)]
    for j in range(model.num_shards):
        if j in impacted:
            assert after.shards[j].params_bytes() != model.shards[j].params_bytes() or len(
                model.shard_ids[j]
            ) == len(after.shard_ids[j])
            assert victim not in after.shard_ids[j]
        else:
            assert after.shards[j] is model.shards[j]


def test_fixsisa_unlearn_matches_scratch(sharded):
    model, train = sharded
    victims = train.ids[20:30]
    after, _ = fixsisa_unlearn(model, victims, train)
    keep = train.ids[~np.isin(train.ids, victims)]
    want = fixsisa_fit(train.subset(keep), model.num_shards, model.trainer, seed=model.seed)
    got = b"".join(a.params_bytes() for a in after.shards)
    assert got == b"".join(a.params_bytes() for a in want.shards)
    assert after.dataset_digest == want.dataset_digest


def test_fixsisa_parallel_matches_serial(blobs_split, fast_trainer):
    train, _ = blobs_split
    a = fixsisa_fit(train, 6, fast_trainer, seed=2, jobs=1)
    b = fixsisa_fit(train, 6, fast_trainer, seed=2, jobs=4)
    assert b"".join(x.params_bytes() for x in a.shards) == b"".join(
        x.params_bytes() for x in b.shards
    )


def test_fixsisa_shard_count_validated(blobs_split, fast_trainer):
    train, _ = blobs_split
    with pytest.raises(ConfigError):
        fixsisa_fit(train, 0, fast_trainer, seed=0)
    with pytest.raises(ConfigError):
        fixsisa_fit(train, len(train) + 1, fast_trainer, seed=0)


def test_fixsisa_prediction_is_mean_over_all_shards(sharded, blobs_split):
    model, _ = sharded
    _, test = blobs_split
    from legonet.adapter import predict as adapter_predict

    for e in test.encodings[:10]:
        want = np.mean([adapter_predict(a, e) for a in model.shards], axis=0)
        assert np.allclose(fixsisa_predict_proba(model, e), want, rtol=1e-12, atol=0)
        p = fixsisa_predict_proba(model, e)
        assert abs(p.sum() - 1.0) <= 1e-9


def test_fixsisa_prediction_quality(sharded, blobs_split):
    model, _ = sharded
    _, test = blobs_split
    preds = [fixsisa_predict_label(model, e) for e in test.encodings]
    acc = float(np.mean(np.asarray(preds) == test.labels.astype(np.int64)))
    assert acc >= 0.85


def test_lego_k1_assigns_each_sample_once(blobs_split, fast_trainer):
    train, _ = blobs_split
    model = fit(train, LegoConfig(n_adapters=10, k_active=1, seed=1, trainer=fast_trainer))
    allids = np.concatenate([r for r in model.records if len(r)])
    assert len(allids) == len(train)
    assert np.array_equal(np.sort(allids), train.ids)


# -- shared helpers -------------------------------------------------------------------


def test_split_forget_validates(head):
    model, train = head
    with pytest.raises(ValidationError):
        split_forget(train.ids, [])
    with pytest.raises(UnknownIdError, match=str(int(train.ids.max()) + 5)):
        split_forget(train.ids, [int(train.ids.max()) + 5])
    retained, arr = split_forget(train.ids, [int(train.ids[0])])
    assert len(retained) == len(train.ids) - 1
    assert arr.tolist() == [int(train.ids[0])]


def test_check_dataset_accepts_superset(head, blobs):
    model, _ = head
    check_dataset(model, blobs)


def test_check_dataset_rejects_mismatch(sharded, blobs_split):
    model, _ = sharded
    _, test = blobs_split
    with pytest.raises(DigestMismatchError):
        check_dataset(model, test)
