import numpy as np
import pytest

from rdasim.canbus import (BusSpec, CanLog, InsufficientTrainingError,
                           WindowOutOfRangeError, decode_accel, encode_accel,
                           evaluate, generate_log, inject_flood,
                           inject_overwrite, log_from_csv, score_frequency,
                           score_transition, train_frequency,
                           train_transition)

ACC_ID = 0x343


@pytest.fixture(scope="module")
def benign():
    return generate_log(BusSpec(), duration=120.0, seed=3)


def split_80_20(log):
    cut = int(0.8 * len(log))
    mask = np.zeros(len(log), dtype=bool)
    mask[:cut] = True
    return log.slice(mask), log.slice(~mask)


def test_single_id_message_count():
    spec = BusSpec(periods={0x10: 0.01}, jitter=0.0, acc_command_id=0x10)
    log = generate_log(spec, duration=1.0, seed=0)
    assert len(log) == 100


def test_two_ids_count_ratio():
    spec = BusSpec(periods={0x10: 0.01, 0x20: 0.02}, jitter=0.0,
                   acc_command_id=0x10)
    log = generate_log(spec, duration=10.0, seed=0)
    n_fast = int((log.ids == 0x10).sum())
    n_slow = int((log.ids == 0x20).sum())
    assert n_fast / n_slow == pytest.approx(2.0, rel=0.01)


def test_jittered_period_mean_within_one_percent():
    spec = BusSpec(periods={0x10: 0.01}, jitter=0.1, acc_command_id=0x10)
    log = generate_log(spec, duration=120.0, seed=1)
    assert len(log) > 10_000
    assert np.diff(log.timestamps).mean() == pytest.approx(0.01, rel=0.01)


def test_timestamps_nondecreasing(benign):
    assert np.all(np.diff(benign.timestamps) >= 0.0)


def test_generation_deterministic():
    a = generate_log(BusSpec(), 30.0, seed=5)
    b = generate_log(BusSpec(), 30.0, seed=5)
    np.testing.assert_array_equal(a.timestamps, b.timestamps)
    np.testing.assert_array_equal(a.payloads, b.payloads)


def test_accel_encoding_round_trip():
    for v in (-2.0, -1.5, -0.25, 0.0, 1.0):
        assert decode_accel(encode_accel(v)) == pytest.approx(v, abs=0.001)


# ----------------------------------------------------------------------
def test_overwrite_touches_only_payload(benign):
    injected = inject_overwrite(benign, (40.0, 60.0), -1.5, ACC_ID)
    np.testing.assert_array_equal(injected.ids, benign.ids)
    np.testing.assert_array_equal(injected.timestamps, benign.timestamps)
    assert len(injected) == len(benign)
    hit = injected.labels == "injected-overwrite"
    assert hit.sum() > 0
    assert np.all(injected.ids[hit] == ACC_ID)
    for p in injected.payloads[hit]:
        assert decode_accel(p) == pytest.approx(-1.5, abs=0.001)
    untouched = ~hit
    np.testing.assert_array_equal(injected.payloads[untouched],
                                  benign.payloads[untouched])


def test_overwrite_empty_window_changes_nothing(benign):
    injected = inject_overwrite(benign, (40.0, 40.0), -1.5, 0x9999)
    np.testing.assert_array_equal(injected.payloads, benign.payloads)
    assert np.all(injected.labels == "benign")


def test_overwrite_window_out_of_range(benign):
    with pytest.raises(WindowOutOfRangeError):
        inject_overwrite(benign, (-10.0, 500.0), -1.5, ACC_ID)


def test_overwrite_preserves_windowed_frequencies(benign):
    injected = inject_overwrite(benign, (40.0, 60.0), -1.5, ACC_ID)
    bins = np.arange(0.0, 120.0, 1.0)
    for mid in np.unique(benign.ids):
        a, _ = np.histogram(benign.timestamps[benign.ids == mid], bins)
        b, _ = np.histogram(injected.timestamps[injected.ids == mid], bins)
        np.testing.assert_array_equal(a, b)


def test_flood_inserts_exact_count(benign):
    flooded = inject_flood(benign, (40.0, 41.0), 100.0, ACC_ID)
    assert len(flooded) == len(benign) + 100
    assert (flooded.labels == "injected-flood").sum() == 100
    assert np.all(np.diff(flooded.timestamps) >= 0.0)


def test_flood_roughly_doubles_windowed_count(benign):
    nominal = 1.0 / BusSpec().periods[ACC_ID]
    flooded = inject_flood(benign, (40.0, 50.0), nominal, ACC_ID)
    in_win = (flooded.timestamps >= 40.0) & (flooded.timestamps < 50.0) \
        & (flooded.ids == ACC_ID)
    base = (benign.timestamps >= 40.0) & (benign.timestamps < 50.0) \
        & (benign.ids == ACC_ID)
    assert in_win.sum() == pytest.approx(2 * base.sum(), rel=0.05)


# ----------------------------------------------------------------------
def test_transition_clean_replay_unflagged():
    t = np.arange(6, dtype=float)
    ids = np.array([1, 2, 3, 1, 2, 3])
    log = CanLog(t, ids, np.zeros((6, 8), np.uint8),
                 np.full(6, "benign", object))
    model = train_transition(log)
    test = CanLog(t[:5], np.array([1, 2, 3, 1, 2]),
                  np.zeros((5, 8), np.uint8), np.full(5, "benign", object))
    assert not score_transition(model, test).any()


def test_transition_unseen_adjacency_flagged():
    t = np.arange(6, dtype=float)
    log = CanLog(t, np.array([1, 2, 3, 1, 2, 3]),
                 np.zeros((6, 8), np.uint8), np.full(6, "benign", object))
    model = train_transition(log)
    test = CanLog(np.arange(3, dtype=float), np.array([1, 2, 1]),
                  np.zeros((3, 8), np.uint8), np.full(3, "benign", object))
    flags = score_transition(model, test)
    # (2, 1) never seen: the third message flags; (3->1) seen so first ok
    np.testing.assert_array_equal(flags, [False, False, True])


def test_transition_zero_fps_on_training_suffix(benign):
    model = train_transition(benign)
    cut = int(0.6 * len(benign))
    mask = np.zeros(len(benign), dtype=bool)
    mask[cut:] = True
    suffix = benign.slice(mask)
    assert not score_transition(model, suffix).any()


def test_overwrite_invisible_to_transition(benign):
    train_log, holdout = split_80_20(benign)
    model = train_transition(train_log)
    injected = inject_overwrite(holdout, (100.0, 110.0), -1.5, ACC_ID)
    flags_clean = score_transition(model, holdout)
    flags_attacked = score_transition(model, injected)
    np.testing.assert_array_equal(flags_clean, flags_attacked)
    truth = injected.labels == "injected-overwrite"
    assert truth.sum() > 0
    tpr = (flags_attacked & truth).sum() / truth.sum()
    assert tpr == 0.0


# ----------------------------------------------------------------------
def test_frequency_needs_enough_training_span():
    spec = BusSpec(periods={0x10: 0.01}, acc_command_id=0x10)
    short = generate_log(spec, duration=5.0, seed=0)
    with pytest.raises(InsufficientTrainingError):
        train_frequency(short, window=1.0)


def test_frequency_benign_holdout_unflagged(benign):
    train_log, holdout = split_80_20(benign)
    model = train_frequency(train_log, window=1.0, k=4.0)
    flags = score_frequency(model, holdout)
    assert flags.mean() < 0.01


def test_overwrite_invisible_to_frequency(benign):
    train_log, holdout = split_80_20(benign)
    model = train_frequency(train_log, window=1.0, k=4.0)
    injected = inject_overwrite(holdout, (100.0, 110.0), -1.5, ACC_ID)
    flags = score_frequency(model, injected)
    truth = injected.labels == "injected-overwrite"
    assert (flags & truth).sum() == 0


def test_flood_caught_by_frequency(benign):
    train_log, holdout = split_80_20(benign)
    model = train_frequency(train_log, window=1.0, k=4.0)
    nominal = 1.0 / BusSpec().periods[ACC_ID]
    flooded = inject_flood(holdout, (100.0, 110.0), 2 * nominal, ACC_ID)
    flags = score_frequency(model, flooded)
    truth = flooded.labels == "injected-flood"
    tpr = (flags & truth).sum() / truth.sum()
    assert tpr > 0.9


def test_flood_caught_by_transition(benign):
    # a saturation flood self-pairs the ACC id, an adjacency benign
    # traffic never produces
    train_log, holdout = split_80_20(benign)
    model = train_transition(train_log)
    flooded = inject_flood(holdout, (100.0, 104.0), 2500.0, ACC_ID)
    flags = score_transition(model, flooded)
    truth = flooded.labels == "injected-flood"
    assert truth.sum() >= 10
    tpr = (flags & truth).sum() / truth.sum()
    assert tpr >= 0.9


# ----------------------------------------------------------------------
def test_evaluate_perfect_scores_auc_one():
    out = evaluate(np.array([False, False, True]),
                   np.array([False, False, True]),
                   scores=np.array([0.1, 0.2, 0.9]))
    assert out["auc"] == 1.0


def test_evaluate_tied_scores_auc_half():
    out = evaluate(np.array([False, True, False, True]),
                   np.array([False, False, True, True]),
                   scores=np.zeros(4))
    assert out["auc"] == 0.5


def test_evaluate_frequency_table_row():
    # 36% malicious truth, all-benign predictions
    n = 10_000
    truth = np.zeros(n, dtype=bool)
    truth[:3600] = True
    preds = np.zeros(n, dtype=bool)
    out = evaluate(preds, truth)
    assert out["accuracy"] == pytest.approx(0.64)
    assert out["tpr"] == 0.0
    assert out["fnr"] == pytest.approx(0.36)
    assert out["fpr"] == 0.0
    assert out["tnr"] == pytest.approx(0.64)
    assert out["auc"] == 0.5


def test_evaluate_single_class_truth_has_no_auc():
    out = evaluate(np.array([False, True]), np.array([False, False]))
    assert out["auc"] is None


def test_evaluate_length_mismatch():
    with pytest.raises(ValueError):
        evaluate(np.array([True]), np.array([True, False]))


def test_log_csv_round_trip(tmp_path, benign):
    injected = inject_overwrite(benign, (40.0, 60.0), -1.5, ACC_ID)
    path = tmp_path / "log.csv"
    injected.to_csv(path)
    back = log_from_csv(path)
    np.testing.assert_array_equal(back.ids, injected.ids)
    np.testing.assert_array_equal(back.labels, injected.labels)
    np.testing.assert_array_equal(back.payloads, injected.payloads)
    np.testing.assert_allclose(back.timestamps, injected.timestamps,
                               atol=1e-6)
