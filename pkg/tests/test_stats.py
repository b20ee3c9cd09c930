import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats as sps

from gradeseg.dataset import Grade
from gradeseg.errors import ManifestError, PairingError, ShapeError
from gradeseg.stats import (STRATIFIED, RegionKind, ScoreTable, better_ratio, compare, dice,
                            per_epoch_curves, region_mask, score_runs, wilcoxon_one_sided)
from gradeseg.training import Manifest, Regime, make_folds, run_all, TrainConfig
from gradeseg.model import ModelSpec
from oracles import brute_force_wilcoxon, set_dice

LABELS = np.array([[0, 2], [1, 4]])


@pytest.mark.parametrize("region,expected", [
    (RegionKind.CE, [[False, False], [False, True]]),
    (RegionKind.CORE, [[False, False], [True, True]]),
    (RegionKind.WHOLE, [[False, True], [True, True]]),
])
def test_region_mask_examples(region, expected):
    assert region_mask(LABELS, region).tolist() == expected


@settings(max_examples=50)
@given(st.lists(st.sampled_from([0, 1, 2, 4]), min_size=1, max_size=64))
def test_region_masks_nested(values):
    labels = np.array(values)
    ce, core, whole = (region_mask(labels, r) for r in RegionKind)
    assert not (ce & ~core).any() and not (core & ~whole).any()


def test_dice_examples():
    a = np.array([[1, 1, 0, 0]], bool)
    assert dice(a, a) == 1.0
    assert dice(a, np.array([[0, 1, 1, 0]], bool)) == 0.5
    assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    assert dice(np.zeros((3, 3)), np.eye(3)) == 0.0
    with pytest.raises(ShapeError):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))


masks = st.integers(1, 16).flatmap(lambda h: st.integers(1, 16).flatmap(
    lambda w: st.tuples(*(st.lists(st.lists(st.booleans(), min_size=w, max_size=w), min_size=h, max_size=h)
                          for _ in range(2)))))


@settings(max_examples=150)
@given(masks)
def test_dice_properties(pair):
    a, b = (np.array(m, bool) for m in pair)
    value = dice(a, b)
    assert 0.0 <= value <= 1.0
    assert value == dice(b, a)
    assert dice(a, a) == 1.0
    assert value == set_dice(a.tolist(), b.tolist())


def test_wilcoxon_examples():
    assert wilcoxon_one_sided([1, 2, 3, 4, 5]) == (15.0, 0.03125)
    assert wilcoxon_one_sided([-1, 2]) == (2.0, 0.5)
    assert wilcoxon_one_sided([0, 0, 0]) == (0.0, 1.0)
    with pytest.raises(ValueError):
        wilcoxon_one_sided([])


@pytest.mark.parametrize("n", range(1, 13))
def test_wilcoxon_all_positive_is_two_to_minus_n(n):
    w, p = wilcoxon_one_sided(np.arange(1, n + 1) * 0.37)
    assert p == 2.0 ** -n
    assert w == n * (n + 1) / 2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=1, max_size=10))
def test_wilcoxon_exact_matches_enumeration_with_ties(values):
    w, p = wilcoxon_one_sided(values)
    w_ref, p_ref = brute_force_wilcoxon(values)
    assert w == w_ref
    assert abs(p - p_ref) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=12, unique=True))
def test_wilcoxon_exact_matches_scipy_without_ties(values):
    d = np.array(values)
    assume(np.all(d != 0) and len(np.unique(np.abs(d))) == len(d))
    expected = sps.wilcoxon(d, alternative="greater", method="exact").pvalue
    assert wilcoxon_one_sided(d)[1] == pytest.approx(expected, abs=1e-12)


def test_wilcoxon_normal_approximation_matches_scipy(rng):
    for n, zeros in ((26, 0), (40, 3), (120, 5)):
        d = rng.normal(0.05, 1, n)
        d[:6] = np.round(d[:6]) + 0.5  # ties
        d[6:6 + zeros] = 0.0
        assert np.count_nonzero(d) > 25  # stays on the approximate path
        ref = sps.wilcoxon(d, alternative="greater", method="approx", correction=True, zero_method="wilcox")
        w, p = wilcoxon_one_sided(d)
        assert w == ref.statistic
        assert p == pytest.approx(ref.pvalue, rel=1e-12)


def test_better_ratio_examples():
    assert better_ratio([0.9, 0.8, 0.7], [0.85, 0.85, 0.6]) == pytest.approx(200 / 3)
    assert better_ratio([0.3, 0.4], [0.3, 0.4]) == 0.0
    assert better_ratio([1, 2, 3, 4], [0, 1, 2, 3]) == 100.0
    with pytest.raises(PairingError):
        better_ratio([1, 2], [1])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1000)), min_size=1, max_size=30))
def test_better_ratio_invariant_under_monotone_maps(pairs):
    # Dice-like values on a grid coarse enough that the maps stay strictly monotone in floating point
    v, b = (np.array(x) / 1000.0 for x in zip(*pairs))
    ref = better_ratio(v, b)
    assert 0 <= ref <= 100
    assert better_ratio(np.exp(3 * v), np.exp(3 * b)) == ref
    assert better_ratio(v ** 3 + 2, b ** 3 + 2) == ref


def _synthetic_table(ids_by_grade, epochs=3, seed=0):
    rng = np.random.default_rng(seed)
    table = ScoreTable()
    for grade, ids in ids_by_grade.items():
        for i, sid in enumerate(ids):
            for epoch in range(1, epochs + 1):
                for region in RegionKind:
                    base = rng.uniform(0.2, 0.8)
                    table.add(sid, "BASELINE", i % 5, epoch, region, base)
                    table.add(sid, "TYPE_AWARE", i % 5, epoch, region, min(1.0, base + rng.uniform(0, 0.2)))
                    own = "HGG_ONLY" if grade == "HGG" else "LGG_ONLY"
                    table.add(sid, own, i % 5, epoch, region, rng.uniform(0, 1))
    return table


IDS = {"HGG": [f"h{i}" for i in range(12)], "LGG": [f"l{i}" for i in range(6)]}


def test_compare_self_is_null():
    table = _synthetic_table(IDS)
    out = compare(table, "BASELINE", "BASELINE", IDS["HGG"] + IDS["LGG"], epoch=2)
    for r in out.values():
        assert r.better_ratio == 0.0 and r.p_value == 1.0 and not r.significant


def test_compare_detects_improvement_and_is_order_invariant():
    table = _synthetic_table(IDS)
    ids = IDS["HGG"] + IDS["LGG"]
    a = compare(table, "TYPE_AWARE", "BASELINE", ids, epoch=3)
    b = compare(table, "TYPE_AWARE", "BASELINE", list(reversed(ids)), epoch=3)
    assert a == b
    assert all(r.better_ratio == 100.0 and r.significant and r.n == 18 for r in a.values())


def test_stratified_routes_by_available_scores():
    table = _synthetic_table(IDS)
    out = compare(table, STRATIFIED, "BASELINE", IDS["HGG"] + IDS["LGG"], epoch=1)
    assert out[RegionKind.CORE].n == 18
    with pytest.raises(PairingError, match="l0"):
        compare(table, "HGG_ONLY", "BASELINE", ["h1", "l0"], epoch=1)


def test_curves():
    table = _synthetic_table(IDS, epochs=4)
    ids = IDS["HGG"]
    assert per_epoch_curves(table, "TYPE_AWARE", "BASELINE", ids, RegionKind.CE) == [(e, 100.0) for e in range(1, 5)]
    assert per_epoch_curves(table, "BASELINE", "BASELINE", ids, RegionKind.CE) == [(e, 0.0) for e in range(1, 5)]


def test_score_table_csv_round_trip(tmp_path):
    table = _synthetic_table(IDS, epochs=2)
    table.to_csv(tmp_path / "s.csv")
    again = ScoreTable.from_csv(tmp_path / "s.csv")
    assert again.entries == table.entries
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "subject_id,regime,fold,epoch,region,dice"


@pytest.fixture(scope="module")
def tiny_manifest(tiny_cohort):
    plan = make_folds(tiny_cohort, 5, seed=1)
    spec = ModelSpec(base_width=2, seed=1)
    return run_all(tiny_cohort, spec, ModelSpec(in_channels=5, base_width=2, seed=1),
                   TrainConfig(epochs=2, batch_size=4), plan)


def test_score_runs_with_stub_predictors(tiny_cohort, tiny_manifest):
    by_id = {s.id: s for s in tiny_cohort}
    perfect = score_runs(tiny_manifest, tiny_cohort, lambda rec, e, subs: np.stack([s.labels for s in subs]))
    assert set(perfect.entries.values()) == {1.0}
    # each subject tested by baseline, its own stratified model and the type-aware model
    assert len(perfect) == 3 * len(tiny_cohort) * tiny_manifest.epochs * 3
    empty = score_runs(tiny_manifest, tiny_cohort, lambda rec, e, subs: np.zeros((len(subs), 16, 16), np.uint8))
    for (sid, _, _, region), value in empty.entries.items():
        if region is RegionKind.WHOLE:
            assert value == 0.0
        if region is RegionKind.CE and not (by_id[sid].labels == 4).any():
            assert value == 1.0


def test_score_runs_with_models(tiny_cohort, tiny_manifest):
    table = score_runs(tiny_manifest, tiny_cohort)
    assert table.epochs == [1, 2]
    assert all(0.0 <= v <= 1.0 for v in table.entries.values())
    assert {k[1] for k in table.entries} == {r.value for r in Regime}


def test_score_runs_rejects_missing_checkpoints(tiny_cohort, tiny_manifest, tmp_path):
    broken = Manifest(tmp_path, tiny_manifest.k, 2, [])
    with pytest.raises(ManifestError, match=r"\(BASELINE, fold 0, epoch 1\)"):
        score_runs(broken, tiny_cohort)
