import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demonoise.ckm import INTERIOR, PerturbationTable, build_ptable, perturb, perturb_batch, stream_key
from demonoise.errors import InfeasibleConfig
from demonoise.uncertainty import NoiseConfig

configs = st.builds(
    lambda v, d, js: NoiseConfig(v, d, js),
    st.sampled_from([0.25, 0.5, 1.0, 2.0, 3.0, 5.0]),
    st.integers(3, 6),
    st.integers(0, 3),
)


def draw_many(table, count, n, seed):
    """n independent draws for one count: same stream, distinct cell ids."""
    return perturb(np.full(n, count), table, seed=seed, cell_ids=np.arange(n)) - count


def check_invariants(table, js):
    p = table.probabilities
    v = table.noise_values
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(p @ v) <= 1e-9)
    assert np.all(p >= 0)
    assert p[0, table.max_deviation] == 1.0
    for i in range(p.shape[0]):
        targets = i + v
        band = (targets >= 1) & (targets <= js)
        assert np.all(p[i, band] == 0.0), f"row {i} lands in 1..{js}"
        assert np.all(p[i, targets < 0] == 0.0), f"row {i} goes negative"


@pytest.mark.parametrize("v", [0.5, 1.0, 2.0, 3.0, 5.0, 9.0])
@pytest.mark.parametrize("js", [0, 1, 2, 3])
def test_table_invariants(v, js):
    d = max(5, int(np.ceil(np.sqrt(v))))
    table = build_ptable(NoiseConfig(v, d, js))
    check_invariants(table, js)
    assert table.achieved_variance[-1] == pytest.approx(v, abs=1e-9)


def test_reference_parameters():
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    assert abs(table.row_mean()[-1]) < 1e-9
    assert abs(table.achieved_variance[-1] - 2.0) < 1e-9
    assert table.row_classes[-1] == INTERIOR
    assert table.probabilities.shape == (9, 11)


def test_zero_variance_is_point_mass():
    table = build_ptable(NoiseConfig(0.0, 5, 2))
    assert np.all(table.probabilities[:, 5] == 1.0)
    out = perturb(np.arange(20), table, seed=1)
    np.testing.assert_array_equal(out, np.arange(20))


def test_forced_rows_record_achieved_variance():
    # count 1 with js=2 must move to 0 or to >= 3: mean zero forces variance 2
    table = build_ptable(NoiseConfig(1.0, 5, 2))
    assert table.achieved_variance[1] == pytest.approx(2.0, abs=1e-12)
    assert table.achieved_variance[-1] == pytest.approx(1.0, abs=1e-12)


def test_infeasible_configs():
    with pytest.raises(InfeasibleConfig):
        build_ptable(NoiseConfig(1.0, 2, 3))
    with pytest.raises(InfeasibleConfig):
        NoiseConfig(10.0, 3, 0)


def test_row_sampling_v1_d3_row2():
    table = build_ptable(NoiseConfig(1.0, 3, 0))
    n = 10**6
    noise = draw_many(table, 2, n, seed=99).astype(float)
    row_var = table.achieved_variance[2]
    se_mean = np.sqrt(row_var / n)
    assert abs(noise.mean()) < 3 * se_mean
    # s.e. of a sample variance: sqrt((mu4 - var^2) / n)
    v = table.noise_values
    mu4 = table.probabilities[2] @ (v.astype(float) ** 4)
    se_var = np.sqrt((mu4 - row_var**2) / n)
    assert abs(noise.var(ddof=1) - row_var) < 3 * se_var


def test_interior_sampling_variance():
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    noise = draw_many(table, 1000, 10**5, seed=7)
    assert noise.var(ddof=1) == pytest.approx(2.0, rel=0.02)


def test_zeros_preserved_and_deterministic():
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    np.testing.assert_array_equal(perturb([0, 0, 0], table, seed=3), [0, 0, 0])
    counts = np.arange(50)
    a = perturb(counts, table, seed=12)
    b = perturb(counts, table, seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, perturb(counts, table, seed=13))


def test_cell_draw_depends_only_on_cell_id():
    table = build_ptable(NoiseConfig(2.0, 5, 0))
    full = perturb(np.full(40, 100), table, seed=4, cell_ids=np.arange(40))
    part = perturb(np.full(5, 100), table, seed=4, cell_ids=np.arange(10, 15))
    np.testing.assert_array_equal(full[10:15], part)


@settings(max_examples=40, deadline=None)
@given(configs, st.lists(st.integers(0, 60), min_size=1, max_size=40), st.integers(0, 2**32))
def test_perturb_properties(cfg, count_list, seed):
    if cfg.small_count_threshold > cfg.max_deviation:
        with pytest.raises(InfeasibleConfig):
            build_ptable(cfg)
        return
    table = build_ptable(cfg)
    counts = np.array(count_list)
    out = perturb(counts, table, seed=seed)
    assert np.all(out >= 0)
    assert np.all(np.abs(out - counts) <= cfg.max_deviation)
    assert np.all(out[counts == 0] == 0)
    js = cfg.small_count_threshold
    assert not np.any((out >= 1) & (out <= js))


def test_csv_round_trip(tmp_path):
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    path = tmp_path / "ptable.csv"
    table.to_csv(path)
    back = PerturbationTable.from_csv(path)
    np.testing.assert_array_equal(back.probabilities, table.probabilities)
    assert back.max_deviation == 5
    assert back.small_count_threshold == 2
    assert back.variance == pytest.approx(2.0, abs=1e-12)
    path2 = tmp_path / "again.csv"
    back.to_csv(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_perturb_input_validation():
    table = build_ptable(NoiseConfig(1.0, 5, 0))
    with pytest.raises(ValueError):
        perturb([-1], table)
    with pytest.raises(ValueError):
        perturb([1, 2], table, cell_ids=[1])


def test_batch_rows_match_single_streams():
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    counts = np.array([0, 1, 3, 8, 250])
    keys = np.array([stream_key((9, r)) for r in range(4)], dtype=np.uint64)
    batch = perturb_batch(counts, table, keys)
    assert batch.shape == (4, 5)
    for r in range(4):
        np.testing.assert_array_equal(batch[r], perturb(counts, table, seed=(9, r)))
