import json

import pytest

from gridloc.cli import main
from gridloc.compositor import ImageBuffer
from gridloc.sweep import read_records

from .conftest import random_image

SMALL = ["--sizes", "3,9", "--colors", "black", "--alphas", "0.5", "--parallelism", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", str(root), "--n-images", "6", "--seed", "4"]) == 0
    return root


def sweep_args(synth, out, *extra):
    return ["sweep", "--annotations", synth / "instances.json", "--images", synth / "images",
            "--subset", 6, "--out", out, *SMALL, *extra]


class TestScore:
    def test_worked_pair(self, capsys):
        code, out, _ = run(capsys, "score", "--gt", "[0, 0, 10, 10]", "--pred", "(5, 5, 15, 15)")
        assert code == 0
        assert out.splitlines() == ["iou=0.142857", "giou=-0.079365"]

    def test_identical(self, capsys):
        code, out, _ = run(capsys, "score", "--gt", "[1, 2, 3, 4]", "--pred", "[1, 2, 3, 4]")
        assert code == 0 and out.splitlines() == ["iou=1", "giou=1"]

    @pytest.mark.parametrize("gt,pred", [("[0, 0, 10]", "[0, 0, 1, 1]"), ("[0, 0, 10, 10]", "[5, 5, 5, 9]"),
                                         ("nonsense", "[0, 0, 1, 1]")])
    def test_bad_boxes(self, capsys, gt, pred):
        code, _, err = run(capsys, "score", "--gt", gt, "--pred", pred)
        assert code == 1 and err

    def test_missing_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["score", "--gt", "[0, 0, 1, 1]"])
        assert info.value.code == 1


class TestOverlay:
    def test_writes_grid(self, capsys, tmp_path, rng):
        src = random_image(rng, 90, 60).save(tmp_path / "in.png")
        code, _, _ = run(capsys, "overlay", src, "-o", tmp_path / "out.png", "--cells", 3, "--alpha", 1.0)
        assert code == 0
        out = ImageBuffer.open(tmp_path / "out.png")
        assert (out.pixels[:, 30] == 0).all() and (out.pixels[20, :] == 0).all()

    def test_invalid_cells(self, capsys, tmp_path, rng):
        src = random_image(rng, 20, 20).save(tmp_path / "in.png")
        code, _, _ = run(capsys, "overlay", src, "-o", tmp_path / "o.png", "--cells", 1)
        assert code == 1

    def test_missing_input(self, capsys, tmp_path):
        code, _, err = run(capsys, "overlay", tmp_path / "nope.png", "-o", tmp_path / "o.png")
        assert code == 2 and "MissingFileError" in err


class TestSweep:
    def test_echo_run_and_rescore(self, capsys, synth, tmp_path):
        out = tmp_path / "run"
        code, stdout, _ = run(capsys, *sweep_args(synth, out))
        assert code == 0 and "9×9 - black - 0.5" in stdout
        for name in ("records.jsonl", "report.csv", "report.txt", "run.json", "manifest.jsonl",
                     "resolved_config.toml"):
            assert (out / name).is_file()
        code, _, _ = run(capsys, "rescore", out / "records.jsonl", "--out", tmp_path / "re")
        assert code == 0
        assert (tmp_path / "re" / "report.csv").read_bytes() == (out / "report.csv").read_bytes()

    def test_warm_replay_is_byte_identical(self, capsys, synth, tmp_path):
        cache = tmp_path / "cache"
        args = ["--backend", "mock-perturb", "--jitter", 3, "--cache", cache]
        assert run(capsys, *sweep_args(synth, tmp_path / "a", *args))[0] == 0
        code, _, _ = run(capsys, *sweep_args(synth, tmp_path / "b", "--backend", "replay", "--cache", cache,
                                             "--manifest", tmp_path / "a" / "manifest.jsonl"))
        assert code == 0
        for name in ("report.csv", "report.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_cache_misses_exit_partial(self, capsys, synth, tmp_path):
        cache = tmp_path / "cache"
        assert run(capsys, *sweep_args(synth, tmp_path / "a", "--cache", cache))[0] == 0
        code, _, err = run(capsys, *sweep_args(synth, tmp_path / "b", "--backend", "replay", "--cache", cache),
                           "--sizes", "3,5")
        assert code == 3 and "failed at the backend" in err
        statuses = {r.config_label: r.status for r in read_records(tmp_path / "b" / "records.jsonl")}
        assert statuses["5×5 - black - 0.5"] == "backend-error"
        assert statuses["3×3 - black - 0.5"] == "scored"

    def test_config_file_and_flag_precedence(self, capsys, synth, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            f'annotations = "{synth / "instances.json"}"\nimages = "{synth / "images"}"\nsubset = 3\n'
            'parallelism = 1\n[sweep]\nsizes = [5]\ncolors = ["white"]\nalphas = [0.7]\nbaseline = false\n'
        )
        out = tmp_path / "run"
        code, _, _ = run(capsys, "sweep", "--config", cfg, "--out", out, "--alphas", "0.1")
        assert code == 0
        lines = (out / "report.csv").read_text().splitlines()
        assert [l.split(",")[0] for l in lines[1:]] == ["5×5 - white - 0.1"]
        header = json.loads((out / "manifest.jsonl").read_text().splitlines()[0])
        assert header["n_images"] == 3

    def test_panels(self, capsys, synth, tmp_path):
        out = tmp_path / "run"
        code, _, _ = run(capsys, *sweep_args(synth, out, "--panels", 1))
        assert code == 0
        pngs = list((out / "panels" / "9x9-black-0.5").glob("*.png"))
        assert any(p.name.endswith("_compare.png") for p in pngs)
        code, stdout, _ = run(capsys, "compare", "--run", out, "--top", 1, "-o", tmp_path / "panels")
        assert code == 0 and "panel" in stdout
        assert sorted(p.name for p in (tmp_path / "panels" / "9x9-black-0.5").iterdir()) == sorted(p.name for p in pngs)

    @pytest.mark.parametrize("extra", [["--sizes", "1"], ["--alphas", "1.5"], ["--colors", "mauve"],
                                       ["--backend", "replay", "--cache", "{tmp}/empty-cache"]])
    def test_usage_errors(self, capsys, synth, tmp_path, extra):
        extra = [a.format(tmp=tmp_path) for a in extra]
        code, _, err = run(capsys, *sweep_args(synth, tmp_path / "o", *extra))
        assert code == 1 and err

    def test_missing_dataset_args(self, capsys, tmp_path):
        assert run(capsys, "sweep", "--out", tmp_path)[0] == 1

    def test_missing_annotations_is_infra(self, capsys, synth, tmp_path):
        code, _, err = run(capsys, "sweep", "--annotations", tmp_path / "none.json", "--images", synth / "images",
                           "--out", tmp_path / "o", *SMALL)
        assert code == 2 and "MissingFileError" in err

    def test_auth_failure_is_infra(self, capsys, synth, tmp_path, monkeypatch):
        monkeypatch.delenv("GRIDLOC_TEST_NO_KEY", raising=False)
        code, _, err = run(capsys, *sweep_args(synth, tmp_path / "o", "--backend", "live",
                                               "--api-key-env", "GRIDLOC_TEST_NO_KEY"))
        assert code == 2 and "AuthenticationError" in err
        assert (tmp_path / "o" / "records.partial.jsonl").is_file()


class TestCompare:
    def test_single_image(self, capsys, tmp_path, rng):
        src = random_image(rng, 50, 40).save(tmp_path / "in.png")
        code, _, _ = run(capsys, "compare", "--image", src, "--gt", "[5, 5, 20, 20]", "--pred-grid",
                         "[6, 6, 21, 21]", "-o", tmp_path / "cmp.png")
        assert code == 0
        assert ImageBuffer.open(tmp_path / "cmp.png").size == (108, 40)

    def test_needs_inputs(self, capsys, tmp_path):
        assert run(capsys, "compare", "-o", tmp_path / "x.png")[0] == 1


class TestRescoreAndSynth:
    def test_missing_log(self, capsys, tmp_path):
        assert run(capsys, "rescore", tmp_path / "none.jsonl")[0] == 1

    def test_synth_prints_paths(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", tmp_path / "s", "--n-images", 2)
        assert code == 0
        paths = json.loads(out)
        assert paths["annotations"].endswith("instances.json")
        assert len(list((tmp_path / "s" / "images").glob("*.png"))) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 1
