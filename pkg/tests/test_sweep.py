import json
import shutil
import tempfile
from pathlib import Path

import pytest

from gridloc.client import (
    CachedBackend,
    DiskCache,
    MockEchoBackend,
    MockPerturbBackend,
    PerturbParams,
    ReplayBackend,
)
from gridloc.compositor import GridConfig
from gridloc.dataset import sample_subset
from gridloc.errors import AuthenticationError, ConfigurationError, MissingFileError, TransientBackendError
from gridloc.sweep import (
    BASELINE_LABEL,
    EvalDataset,
    EvalRecord,
    SweepConfig,
    SweepSpec,
    enumerate_configs,
    read_records,
    rescore,
    run_sweep,
    run_trial,
    score_response,
    summarize,
)

SMALL = SweepSpec(sizes=(3, 9), colors=("black",), alphas=(0.3, 1.0), parallelism=1)


class Fixed:
    kind = identity = "fixed"

    def __init__(self, text):
        self.text = text

    def query(self, request):
        return self.text


class TestEnumerate:
    def test_paper_grid(self):
        configs = enumerate_configs(SweepSpec())
        assert len(configs) == 61
        assert configs[0].label == BASELINE_LABEL
        assert configs[1].label == "3×3 - black - 0.1"
        assert configs[6].label == "3×3 - white - 0.1"
        assert configs[-1].label == "30×30 - white - 1.0"
        assert len({c.key for c in configs}) == 61

    def test_singleton(self):
        configs = enumerate_configs(SweepSpec(sizes=(9,), colors=("black",), alphas=(0.3,), include_baseline=False))
        assert [c.label for c in configs] == ["9×9 - black - 0.3"]
        assert configs[0].key == "9x9-black-0.3"

    @pytest.mark.parametrize("axis", ["sizes", "colors", "alphas"])
    def test_empty_axis(self, axis):
        with pytest.raises(ConfigurationError):
            enumerate_configs(SweepSpec(**{axis: ()}))

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            SweepSpec(failure_policy="harsh")
        with pytest.raises(ConfigurationError):
            SweepSpec(parallelism=0)

    def test_config_dict_round_trip(self):
        for c in enumerate_configs(SweepSpec()):
            assert SweepConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
        wide = SweepConfig(GridConfig(5, (255, 0, 0), 0.5, 3))
        assert wide.key == "5x5-ff0000-0.5-w3"


class TestTrial:
    def test_echo_scores_one(self, square_dataset):
        entry = square_dataset.subset.entries[0]
        rec = run_trial(SweepConfig(GridConfig(9)), entry, MockEchoBackend(), square_dataset)
        assert rec.status == "scored" and rec.iou == 1.0 and rec.giou == 1.0
        assert rec.gt == (50, 50, 150, 150) and rec.image_size == (320, 240)
        assert rec.category == "person" and "person" in rec.prompt

    def test_perturb_matches_direct_metric(self, square_dataset):
        entry = square_dataset.subset.entries[0]
        backend = MockPerturbBackend(PerturbParams(offset=(10, 10, 10, 10)))
        for config in enumerate_configs(SMALL):
            rec = run_trial(config, entry, backend, square_dataset)
            assert rec.pred == (60, 60, 160, 160)
            assert rec.iou == pytest.approx(8100 / 11900, abs=1e-9)
            assert rec.giou == pytest.approx(8100 / 11900 - 200 / 12100, abs=1e-9)

    def test_parse_failure_recorded(self, square_dataset):
        rec = run_trial(SweepConfig(), square_dataset.subset.entries[0], Fixed("no idea"), square_dataset)
        assert rec.status == "parse-failed" and rec.failure == "no-tuple-found"
        assert rec.iou is None and rec.metric_pair is None

    def test_backend_error_recorded(self, square_dataset):
        class Broken(Fixed):
            def query(self, request):
                raise TransientBackendError("503")

        rec = run_trial(SweepConfig(), square_dataset.subset.entries[0], Broken(""), square_dataset)
        assert rec.status == "backend-error" and "503" in rec.failure

    def test_auth_error_propagates(self, square_dataset):
        class Denied(Fixed):
            def query(self, request):
                raise AuthenticationError("401")

        with pytest.raises(AuthenticationError):
            run_trial(SweepConfig(), square_dataset.subset.entries[0], Denied(""), square_dataset)

    def test_record_json_round_trip(self, square_dataset):
        rec = run_trial(SweepConfig(GridConfig(3)), square_dataset.subset.entries[0], MockEchoBackend(),
                        square_dataset)
        assert EvalRecord.from_json(rec.to_json()) == rec


class TestSweep:
    def test_echo_closure(self, fixture_dataset, tmp_path):
        report = run_sweep(SMALL, fixture_dataset, MockEchoBackend(), tmp_path)
        assert len(report.rows) == 5
        for row in report.rows:
            assert row.summary.mean_iou == pytest.approx(1.0, abs=1e-9)
            assert row.summary.n_scored == len(fixture_dataset.subset.entries)
        for name in ("records.jsonl", "report.csv", "report.txt", "run.json"):
            assert (tmp_path / name).is_file()
        meta = json.loads((tmp_path / "run.json").read_text())
        assert meta["n_configs"] == 5 and meta["backend_identity"] == "mock-echo"

    def test_parallelism_does_not_change_results(self, fixture_dataset, tmp_path):
        backend = MockPerturbBackend(PerturbParams(jitter=4.0, failure_prob=0.2, seed=3))
        reports, orders = [], []
        for par in (1, 4):
            spec = SweepSpec(sizes=(3, 9), colors=("black", "white"), alphas=(0.5,), parallelism=par)
            reports.append(run_sweep(spec, fixture_dataset, backend, tmp_path / str(par)))
            orders.append([(r.config_index, r.entry_index, r.response)
                           for r in read_records(tmp_path / str(par) / "records.jsonl")])
        assert reports[0].to_csv() == reports[1].to_csv()
        assert reports[0].to_table() == reports[1].to_table()
        assert orders[0] == orders[1]

    def test_replay_and_rescore(self, fixture_dataset, tmp_path):
        backend = CachedBackend(MockPerturbBackend(PerturbParams(jitter=3.0, seed=1)), DiskCache(tmp_path / "cache"))
        first = run_sweep(SMALL, fixture_dataset, backend, tmp_path / "a")
        replay = ReplayBackend(DiskCache(tmp_path / "cache"), backend.identity)
        second = run_sweep(SMALL, fixture_dataset, replay, tmp_path / "b")
        for name in ("report.csv", "report.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert rescore(read_records(tmp_path / "a" / "records.jsonl")).to_csv() == first.to_csv()
        assert second.to_csv() == first.to_csv()

    def test_strict_vs_lenient(self, fixture_dataset):
        backend = MockPerturbBackend(PerturbParams(failure_prob=0.5, seed=9))
        lenient = run_sweep(SMALL, fixture_dataset, backend)
        strict = run_sweep(SweepSpec(**{**SMALL.__dict__, "failure_policy": "strict"}), fixture_dataset, backend)
        for a, b in zip(lenient.rows, strict.rows):
            assert a.summary.n_failed == b.summary.n_failed > 0
            assert a.summary.mean_iou == pytest.approx(1.0)
            n = a.summary.total
            assert b.summary.mean_iou == pytest.approx(a.summary.n_scored / n)
            assert b.summary.mean_giou == pytest.approx((a.summary.n_scored - a.summary.n_failed) / n)

    def test_all_failed_row_is_undefined(self, fixture_dataset):
        report = run_sweep(SMALL, fixture_dataset, Fixed("nothing here"))
        for row in report.rows:
            assert row.summary.mean_iou is None and not row.summary.defined
        assert "NA" in report.to_csv()

    def test_partial_flush_on_dataset_error(self, fixture_root, fixture_index, tmp_path):
        images = tmp_path / "images"
        shutil.copytree(fixture_root / "images", images)
        subset = sample_subset(fixture_index, 10, seed=0)
        (images / fixture_index.images[subset.image_ids[-1]].file_name).unlink()
        dataset = EvalDataset(fixture_index, subset, images)
        with pytest.raises(MissingFileError):
            run_sweep(SMALL, dataset, MockEchoBackend(), tmp_path / "out")
        partial = read_records(tmp_path / "out" / "records.partial.jsonl")
        assert partial and all(r.image_id != subset.image_ids[-1] for r in partial)
        assert partial == sorted(partial, key=lambda r: (r.config_index, r.entry_index))
        assert not (tmp_path / "out" / "report.csv").exists()


class TestRescore:
    def test_invariance(self, fixture_dataset):
        backend = MockPerturbBackend(PerturbParams(jitter=2.0, failure_prob=0.1, seed=5))
        report = run_sweep(SMALL, fixture_dataset, backend)
        assert rescore(_records(SMALL, fixture_dataset, backend)).to_csv() == report.to_csv()

    def test_extended_grammar_recovers(self):
        rec = EvalRecord(0, {"baseline": True}, BASELINE_LABEL, 0, 1, 1, "cup", (100, 100), "p",
                         "x1=10, y1=10, x2=20, y2=20", "parse-failed", (10, 10, 20, 20))
        assert score_response(rec).status == "parse-failed"
        assert score_response(rec, extended=True).iou == 1.0

    def test_summarize_orders_by_config(self):
        recs = [EvalRecord(i % 2, {"baseline": True} if i % 2 == 0 else {"cells": 3, "color": [0, 0, 0], "alpha": 0.5},
                           "", i, 1, i, "cup", (10, 10), "p", "[1, 1, 5, 5]", "scored", (1, 1, 5, 5), (1, 1, 5, 5), 1.0, 1.0)
                for i in range(6)][::-1]
        report = summarize(recs)
        assert [r.config.label for r in report.rows] == [BASELINE_LABEL, "3×3 - black - 0.5"]


def _records(spec, dataset, backend):
    with tempfile.TemporaryDirectory() as d:
        run_sweep(spec, dataset, backend, d)
        return read_records(Path(d) / "records.jsonl")
