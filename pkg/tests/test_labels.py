import numpy as np
import pytest

from seiseg import labels as lb
from seiseg.errors import ContractError, FormatError, SamplingError


def counting_oracle(h):
    """Independent per-pixel rasterization: count horizons above each pixel."""
    out = np.zeros((h.n_z, h.n_x), dtype=np.int64)
    for z in range(h.n_z):
        for x in range(h.n_x):
            c = 0
            for k in range(h.n_horizons):
                if int(np.floor(h.depths[k, x] + 0.5)) <= z:
                    c += 1
            out[z, x] = c
    return out


def random_valid_horizons(rng, n_z=24, n_x=8, n_h=3):
    base = np.sort(rng.uniform(1, n_z - 2, size=(n_h, 1)), axis=0)
    wiggle = rng.uniform(-0.8, 0.8, size=(n_h, n_x))
    depths = np.clip(base + wiggle, 0, n_z - 1e-9)
    depths = np.maximum.accumulate(depths, axis=0)
    return lb.HorizonSet(n_z=n_z, n_x=n_x, depths=depths)


class TestValidateHorizons:
    def test_constant_ordered_ok(self):
        h = lb.HorizonSet(n_z=10, n_x=4, depths=np.array([[3.0] * 4, [6.0] * 4]))
        assert lb.validate_horizons(h) is None

    def test_swapped_reports_column_zero(self):
        h = lb.HorizonSet(n_z=10, n_x=4, depths=np.array([[6.0] * 4, [3.0] * 4]))
        v = lb.validate_horizons(h)
        assert v is not None
        assert v.kind == "ordering"
        assert v.column == 0

    def test_out_of_bounds(self):
        h = lb.HorizonSet(n_z=10, n_x=3, depths=np.array([[2.0, 11.0, 3.0]]))
        v = lb.validate_horizons(h)
        assert v is not None and v.kind == "bounds" and v.column == 1

    def test_touching_horizons_allowed(self):
        h = lb.HorizonSet(n_z=10, n_x=2, depths=np.array([[4.0, 4.0], [4.0, 5.0]]))
        assert lb.validate_horizons(h) is None


class TestRasterize:
    def test_single_column_convention(self):
        h = lb.HorizonSet(n_z=10, n_x=1, depths=np.array([[3.0], [6.0]]))
        img = lb.rasterize(h)
        np.testing.assert_array_equal(img.classes[:, 0], [0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
        assert img.n_class == 3

    def test_zero_horizons_all_class_zero(self):
        h = lb.HorizonSet(n_z=5, n_x=3, depths=np.empty((0, 3)))
        img = lb.rasterize(h)
        np.testing.assert_array_equal(img.classes, np.zeros((5, 3), dtype=np.int64))
        assert img.n_class == 1

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            h = random_valid_horizons(rng)
            img = lb.rasterize(h)
            np.testing.assert_array_equal(img.classes, counting_oracle(h))

    def test_column_monotone(self):
        rng = np.random.default_rng(43)
        for _ in range(30):
            img = lb.rasterize(random_valid_horizons(rng))
            assert (np.diff(img.classes, axis=0) >= 0).all()

    def test_invalid_set_raises_contract_error(self):
        h = lb.HorizonSet(n_z=10, n_x=2, depths=np.array([[6.0, 6.0], [3.0, 3.0]]))
        with pytest.raises(ContractError, match="horizon"):
            lb.rasterize(h)


class TestSampleScattered:
    def test_paper_quota_split(self):
        # budget 100 over 6 classes: four classes get 17, two get 16
        h = lb.HorizonSet(
            n_z=60, n_x=40, depths=np.array([[10.0] * 40, [20.0] * 40, [30.0] * 40, [40.0] * 40, [50.0] * 40])
        )
        full = lb.rasterize(h)
        pl = lb.sample_scattered(full, lb.AnnotationBudget(100), seed=0)
        counts = np.bincount(pl.entries[:, 2], minlength=6)
        np.testing.assert_array_equal(counts, [17, 17, 17, 17, 16, 16])
        assert len(pl) == 100

    def test_full_budget_single_class_covers_everything(self):
        full = lb.LabelImage(classes=np.zeros((4, 5), dtype=np.int64), n_class=1)
        pl = lb.sample_scattered(full, 20, seed=1)
        assert len(pl) == 20
        got = set(map(tuple, pl.entries[:, :2]))
        assert got == {(z, x) for z in range(4) for x in range(5)}

    def test_draws_are_duplicate_free_and_label_correct(self):
        rng = np.random.default_rng(44)
        h = random_valid_horizons(rng, n_z=20, n_x=12, n_h=2)
        full = lb.rasterize(h)
        for seed in range(1000):
            pl = lb.sample_scattered(full, 9, seed=seed)
            flat = pl.entries[:, 0] * full.n_x + pl.entries[:, 1]
            assert np.unique(flat).size == len(pl)
            assert (full.classes[pl.entries[:, 0], pl.entries[:, 1]] == pl.entries[:, 2]).all()

    def test_quota_error_names_class_and_count(self):
        classes = np.zeros((4, 4), dtype=np.int64)
        classes[0, 0] = 1  # class 1 has a single pixel
        full = lb.LabelImage(classes=classes, n_class=2)
        with pytest.raises(SamplingError, match=r"class 1 has only 1"):
            lb.sample_scattered(full, 10, seed=0)

    def test_same_seed_same_entries(self):
        rng = np.random.default_rng(45)
        full = lb.rasterize(random_valid_horizons(rng))
        a = lb.sample_scattered(full, 8, seed=7)
        b = lb.sample_scattered(full, 8, seed=7)
        np.testing.assert_array_equal(a.entries, b.entries)


class TestSampleColumns:
    def make_horizons(self, n_z=1088, n_x=40, n_h=5):
        depths = np.vstack([np.full(n_x, (k + 1) * n_z / (n_h + 1)) for k in range(n_h)])
        return lb.HorizonSet(n_z=n_z, n_x=n_x, depths=depths)

    def test_budget_100_with_5_horizons_gives_20_columns(self):
        h = self.make_horizons()
        pl = lb.sample_columns(h, 100, seed=0)
        assert np.unique(pl.entries[:, 1]).size == 20
        assert len(pl) == 20 * 1088  # 21760 labeled pixels

    def test_entries_reproduce_rasterize_columns(self):
        h = self.make_horizons(n_z=32, n_x=16, n_h=3)
        full = lb.rasterize(h)
        pl = lb.sample_columns(h, 9, seed=3)
        for c in np.unique(pl.entries[:, 1]):
            got = pl.entries[pl.entries[:, 1] == c]
            order = np.argsort(got[:, 0])
            np.testing.assert_array_equal(got[order, 2], full.classes[:, c])

    def test_indivisible_budget_states_cost(self):
        h = self.make_horizons(n_h=5)
        with pytest.raises(SamplingError, match="5 clicks"):
            lb.sample_columns(h, 101, seed=0)

    def test_too_many_columns(self):
        h = self.make_horizons(n_z=16, n_x=4, n_h=2)
        with pytest.raises(SamplingError, match="4"):
            lb.sample_columns(h, 10, seed=0)

    def test_same_seed_identical(self):
        h = self.make_horizons(n_z=16, n_x=12, n_h=2)
        a = lb.sample_columns(h, 6, seed=9)
        b = lb.sample_columns(h, 6, seed=9)
        np.testing.assert_array_equal(a.entries, b.entries)


class TestAnnotationYield:
    def test_scattered_is_budget(self):
        h = lb.HorizonSet(n_z=16, n_x=8, depths=np.full((2, 8), 5.0))
        assert lb.annotation_yield("scattered", 100, h) == 100

    def test_columns_formula(self):
        h = lb.HorizonSet(n_z=1088, n_x=40, depths=np.vstack([np.full(40, 100.0 + 50 * k) for k in range(5)]))
        assert lb.annotation_yield("columns", 100, h) == 21760

    def test_single_column(self):
        h = lb.HorizonSet(n_z=33, n_x=8, depths=np.full((4, 8), 10.0) + np.arange(4)[:, None] * 5)
        assert lb.annotation_yield("columns", 4, h) == 33

    def test_matches_sampler_sizes_and_ratio(self):
        rng = np.random.default_rng(46)
        h = random_valid_horizons(rng, n_z=24, n_x=10, n_h=3)
        for budget in (3, 6, 9):
            assert lb.annotation_yield("columns", budget, h) == len(lb.sample_columns(h, budget, 0))
            assert lb.annotation_yield("scattered", budget, h) == budget
            ratio = lb.annotation_yield("columns", budget, h) / lb.annotation_yield("scattered", budget, h)
            assert ratio == h.n_z / h.n_horizons


class TestSubsetInvariant:
    def test_sampled_entries_subset_of_rasterization(self):
        rng = np.random.default_rng(47)
        for seed in range(20):
            h = random_valid_horizons(rng, n_z=20, n_x=10, n_h=2)
            full = lb.rasterize(h)
            truth = {(z, x, full.classes[z, x]) for z in range(h.n_z) for x in range(h.n_x)}
            for strategy, budget in (("scattered", 6), ("columns", 4)):
                pl = lb.sample_partial(strategy, h, budget, seed)
                assert set(map(tuple, pl.entries)) <= truth


class TestCsvFormats:
    def test_partial_labels_round_trip(self, tmp_path):
        entries = np.array([[0, 1, 2], [3, 2, 0], [5, 0, 1]])
        pl = lb.PartialLabels(entries=entries, n_z=8, n_x=4, n_class=3)
        path = tmp_path / "labels.csv"
        lb.save_partial_labels(path, pl)
        back = lb.load_partial_labels(path, n_z=8, n_x=4, n_class=3)
        np.testing.assert_array_equal(back.entries, pl.entries)
        text = path.read_text()
        assert text.startswith("row,column,class_id\n")
        assert "\r" not in text

    def test_partial_labels_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("r,c,k\n1,2,0\n")
        with pytest.raises(FormatError, match="header"):
            lb.load_partial_labels(path, 4, 4, 2)

    def test_horizon_picks_round_trip(self, tmp_path):
        rng = np.random.default_rng(48)
        sets = [random_valid_horizons(rng, n_z=16, n_x=6, n_h=2) for _ in range(3)]
        path = tmp_path / "horizons.csv"
        lb.save_horizon_picks(path, sets)
        back = lb.load_horizon_picks(path, n_z=16)
        assert len(back) == 3
        for a, b in zip(sets, back):
            np.testing.assert_array_equal(a.depths, b.depths)

    def test_horizon_picks_incomplete_grid(self, tmp_path):
        path = tmp_path / "horizons.csv"
        path.write_text("image_id,horizon_id,column,depth\n0,0,0,3.0\n0,0,2,4.0\n")
        with pytest.raises(FormatError, match="complete"):
            lb.load_horizon_picks(path, n_z=8)


class TestPartialLabelsValidation:
    def test_out_of_bounds_entry(self):
        with pytest.raises(ContractError, match=r"\(9, 0\)"):
            lb.PartialLabels(entries=np.array([[9, 0, 0]]), n_z=4, n_x=4, n_class=2)

    def test_duplicate_positions(self):
        with pytest.raises(ContractError, match="duplicate"):
            lb.PartialLabels(entries=np.array([[1, 1, 0], [1, 1, 1]]), n_z=4, n_x=4, n_class=2)

    def test_empty_is_legal(self):
        pl = lb.PartialLabels(entries=np.empty((0, 3), dtype=np.int64), n_z=4, n_x=4, n_class=2)
        assert len(pl) == 0
