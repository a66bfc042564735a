import math

import numpy as np
import pytest

from seiseg.errors import ContractError, FormatError, ShapeError
from seiseg.evaluation import (
    ExperimentReport,
    SweepCell,
    budget_sweep,
    class_iou,
    class_map_pgm,
    confusion,
    error_map,
    error_map_pgm,
    evaluate_params,
    load_report,
    mean_class_accuracy,
    mean_iou,
    pixel_accuracy,
    read_pgm,
    report_header,
    save_report,
    write_pgm8,
    write_pgm16,
)
from seiseg.labels import LabelImage
from seiseg.network import ArchConfig
from seiseg.synth import GeoModelConfig, gen_dataset
from seiseg.training import TrainConfig


def lab(classes, n_class=None):
    arr = np.asarray(classes, dtype=np.int64)
    return LabelImage(classes=arr, n_class=n_class or int(arr.max()) + 1)


class TestConfusion:
    def test_perfect_prediction_is_diagonal(self):
        truth = lab([[0, 1], [2, 1]])
        cm = confusion(truth, truth)
        assert cm.sum() == 4
        np.testing.assert_array_equal(cm, np.diag([1, 2, 1]))
        assert pixel_accuracy(cm) == 1.0

    def test_constant_prediction_fills_one_column(self):
        truth = lab([[0, 1], [2, 1]])
        pred = lab(np.ones((2, 2), dtype=np.int64), n_class=3)
        cm = confusion(pred, truth)
        assert cm[:, 1].sum() == 4
        assert cm[:, 0].sum() == cm[:, 2].sum() == 0

    def test_matches_per_pixel_tally_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.integers(0, 4, size=(8, 8))
            p = rng.integers(0, 4, size=(8, 8))
            cm = confusion(lab(p, 4), lab(t, 4))
            oracle = np.zeros((4, 4), dtype=np.int64)
            for z in range(8):
                for x in range(8):
                    oracle[t[z, x], p[z, x]] += 1
            np.testing.assert_array_equal(cm, oracle)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(lab(np.zeros((2, 3), dtype=np.int64), 2), lab(np.zeros((3, 2), dtype=np.int64), 2))

    def test_total_equals_pixel_count(self):
        rng = np.random.default_rng(1)
        t = rng.integers(0, 3, size=(6, 7))
        p = rng.integers(0, 3, size=(6, 7))
        assert confusion(lab(p, 3), lab(t, 3)).sum() == 42


class TestMetrics:
    def test_two_class_worked_example(self):
        cm = np.array([[1, 1], [1, 1]])
        assert pixel_accuracy(cm) == 0.5
        np.testing.assert_allclose(class_iou(cm), [1 / 3, 1 / 3])
        assert mean_iou(cm) == pytest.approx(1 / 3)

    def test_diagonal_gives_unit_scores(self):
        cm = np.diag([5, 2, 9])
        assert pixel_accuracy(cm) == 1.0
        np.testing.assert_allclose(class_iou(cm), 1.0)
        assert mean_class_accuracy(cm) == 1.0

    def test_absent_class_is_nan_and_excluded(self):
        cm = np.array([[4, 0, 0], [1, 3, 0], [0, 0, 0]])
        iou = class_iou(cm)
        assert math.isnan(iou[2])
        assert mean_iou(cm) == pytest.approx(np.nanmean(iou[:2]))

    def test_random_matches_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            cm = rng.integers(0, 30, size=(5, 5))
            cm += np.eye(5, dtype=np.int64)  # keep all classes present
            acc = pixel_accuracy(cm)
            assert acc == pytest.approx(np.trace(cm) / cm.sum())
            iou = class_iou(cm)
            for c in range(5):
                denom = cm[c].sum() + cm[:, c].sum() - cm[c, c]
                assert iou[c] == pytest.approx(cm[c, c] / denom)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ContractError):
            pixel_accuracy(np.zeros((3, 3), dtype=np.int64))

    def test_accuracy_is_one_minus_mean_error(self):
        rng = np.random.default_rng(3)
        t = rng.integers(0, 3, size=(10, 10))
        p = rng.integers(0, 3, size=(10, 10))
        cm = confusion(lab(p, 3), lab(t, 3))
        err = error_map(lab(p, 3), lab(t, 3))
        assert pixel_accuracy(cm) == pytest.approx(1.0 - err.mean())


class TestErrorMap:
    def test_identical_maps_all_zero(self):
        m = lab([[0, 1], [1, 0]])
        assert not error_map(m, m).any()

    def test_disjoint_constants_all_one(self):
        a = lab(np.zeros((3, 3), dtype=np.int64), 2)
        b = lab(np.ones((3, 3), dtype=np.int64), 2)
        assert error_map(a, b).all()

    def test_error_count_equals_offdiagonal_mass(self):
        rng = np.random.default_rng(4)
        t = rng.integers(0, 4, size=(9, 9))
        p = rng.integers(0, 4, size=(9, 9))
        cm = confusion(lab(p, 4), lab(t, 4))
        err = error_map(lab(p, 4), lab(t, 4))
        assert err.sum() == cm.sum() - np.trace(cm)


def tiny_sweep_setup():
    # deliberately small so a sweep cell runs in well under a second
    cfg = GeoModelConfig(n_z=16, n_x=24, n_horizons=2, seed=0)
    ds = gen_dataset(cfg, n_ex=3, seed=11)
    arch = ArchConfig(n_class=3, seed=0)
    tc = TrainConfig(epochs=2, base_lr=1.0, seed=0)
    return ds, arch, tc


class TestBudgetSweep:
    def test_report_structure_and_determinism(self):
        ds, arch, tc = tiny_sweep_setup()
        args = dict(
            dataset=ds,
            split=([0, 1], [2]),
            strategies=("columns",),
            budgets=(4,),
            seeds=(0, 1),
            arch=arch,
            train_cfg=tc,
        )
        r1 = budget_sweep(**args)
        r2 = budget_sweep(**args)
        assert len(r1.cells) == 2
        for a, b in zip(r1.cells, r2.cells):
            assert a == b
        for c in r1.cells:
            assert 0.0 <= c.test_accuracy <= 1.0
            assert len(c.iou) == 3

    def test_overlapping_split_rejected(self):
        ds, arch, tc = tiny_sweep_setup()
        with pytest.raises(ContractError, match="overlap"):
            budget_sweep(ds, ([0, 1], [1, 2]), ("columns",), (4,), (0,), arch, tc)

    def test_out_of_range_split_rejected(self):
        ds, arch, tc = tiny_sweep_setup()
        with pytest.raises(ContractError, match="indices"):
            budget_sweep(ds, ([0], [7]), ("columns",), (4,), (0,), arch, tc)

    def test_aggregate_groups_by_cell(self):
        cells = [
            SweepCell("columns", 100, 0, 0.9, 0.8, 0.85, (0.8,)),
            SweepCell("columns", 100, 1, 0.8, 0.7, 0.75, (0.7,)),
            SweepCell("scattered", 100, 0, 0.7, 0.6, 0.65, (0.6,)),
        ]
        agg = ExperimentReport(cells=cells, n_class=1).aggregate()
        mean, std, n = agg[("columns", 100)]
        assert mean == pytest.approx(0.85)
        assert std == pytest.approx(0.05)
        assert n == 2
        assert agg[("scattered", 100)][0] == pytest.approx(0.7)

    def test_single_cell_equals_manual_pipeline(self):
        import dataclasses

        from seiseg.evaluation import pixel_accuracy as acc_of
        from seiseg.labels import sample_partial, sampling_seed
        from seiseg.seeding import STREAM_INIT, STREAM_TRAIN, mix64
        from seiseg.training import train

        ds, arch, tc = tiny_sweep_setup()
        report = budget_sweep(ds, ([0, 1], [2]), ("columns",), (4,), (5,), arch, tc)
        cell = report.cells[0]

        pairs = []
        for i, idx in enumerate([0, 1]):
            pl = sample_partial("columns", ds.horizons[idx], 4, seed=sampling_seed(5, "columns", i))
            pairs.append((ds.images[idx].data, pl))
        cfg = dataclasses.replace(tc, seed=mix64(5, STREAM_TRAIN))
        params, _ = train(pairs, cfg, arch, init_seed=mix64(5, STREAM_INIT))
        cm = evaluate_params(params, [ds.images[2].data], [ds.horizons[2]])
        assert cell.test_accuracy == acc_of(cm)

    def test_parallel_jobs_match_serial(self):
        ds, arch, tc = tiny_sweep_setup()
        args = dict(
            dataset=ds,
            split=([0, 1], [2]),
            strategies=("columns", "scattered"),
            budgets=(4,),
            seeds=(0,),
            arch=arch,
            train_cfg=tc,
        )
        serial = budget_sweep(**args, jobs=1)
        parallel = budget_sweep(**args, jobs=2)
        assert serial.cells == parallel.cells


class TestReportCsv:
    def test_round_trip(self, tmp_path):
        cells = [
            SweepCell("columns", 100, 0, 0.925, 0.81, 0.9, (0.9, 0.72, float("nan"))),
            SweepCell("scattered", 600, 3, 0.875, 0.77, 0.8, (0.8, 0.74, 0.77)),
        ]
        report = ExperimentReport(cells=cells, n_class=3)
        path = tmp_path / "report.csv"
        save_report(path, report)
        text = path.read_text()
        assert text.startswith(report_header(3) + "\n")
        back = load_report(path)
        assert back.n_class == 3
        for a, b in zip(back.cells, cells):
            assert (a.strategy, a.budget, a.seed) == (b.strategy, b.budget, b.seed)
            assert a.test_accuracy == b.test_accuracy
            for x, y in zip(a.iou, b.iou):
                assert (math.isnan(x) and math.isnan(y)) or x == y

    def test_bad_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("foo,bar\n")
        with pytest.raises(FormatError, match="header"):
            load_report(p)

    def test_bad_row(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text(report_header(2) + "\ncolumns,100,0,0.5\n")
        with pytest.raises(FormatError, match="row"):
            load_report(p)


class TestPgm:
    def test_8bit_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        arr = rng.integers(0, 6, size=(9, 13))
        p = tmp_path / "m.pgm"
        write_pgm8(p, arr, maxval=5)
        back, maxval = read_pgm(p)
        assert maxval == 5
        np.testing.assert_array_equal(back, arr)
        assert p.read_bytes().startswith(b"P5\n13 9\n5\n")

    def test_8bit_range_check(self, tmp_path):
        with pytest.raises(ContractError, match="maxval"):
            write_pgm8(tmp_path / "m.pgm", np.array([[7]]), maxval=5)

    def test_16bit_round_trip_scaling(self, tmp_path):
        arr = np.array([[0.0, 1.0], [2.0, 4.0]])
        p = tmp_path / "s.pgm"
        write_pgm16(p, arr)
        back, maxval = read_pgm(p)
        assert maxval == 65535
        assert back[0, 0] == 0 and back[1, 1] == 65535
        assert back[0, 1] == round(65535 / 4)

    def test_16bit_constant_image(self, tmp_path):
        p = tmp_path / "c.pgm"
        write_pgm16(p, np.full((3, 3), 2.5))
        back, _ = read_pgm(p)
        assert not back.any()

    def test_class_and_error_helpers(self, tmp_path):
        classes = lab([[0, 1, 2], [2, 1, 0]])
        class_map_pgm(tmp_path / "cls.pgm", classes)
        back, maxval = read_pgm(tmp_path / "cls.pgm")
        assert maxval == 2
        np.testing.assert_array_equal(back, classes.classes)

        err = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        error_map_pgm(tmp_path / "err.pgm", err)
        back, maxval = read_pgm(tmp_path / "err.pgm")
        assert maxval == 255
        np.testing.assert_array_equal(back, err * 255)

    def test_not_pgm(self, tmp_path):
        p = tmp_path / "x.pgm"
        p.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 12)
        with pytest.raises(FormatError, match="PGM"):
            read_pgm(p)
