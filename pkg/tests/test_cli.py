import csv
import io
import math
import os
import re

import numpy as np
import pytest

from hganlab.checkpoint import load_checkpoint
from hganlab.cli import COMPARE_HEADER, main, pgm_bytes
from hganlab.defense import SWEEP_HEADER
from hganlab.metrics import EVAL_HEADER, read_reports_csv
from hganlab.training import METRICS_HEADER

SMALL = """
[model]
latent_dim = 4
generator_hidden = 16
discriminator_hidden = 16
ar_hidden = 16
[training]
variant = {variant}
steps = {steps}
n_train = 600
metrics_every = 5
[evaluation]
n_samples = 400
classifier_samples = 1000
classifier_epochs = 2
"""

PATTERNS = """
[dataset]
kind = patterns
k = 4
quadrants = 1
noise = 0.0
[defense]
L_values = 2, 4
R_values = 1, 2
seeds = 0, 1
n_test = 40
classifier_samples = 400
classifier_epochs = 3
"""


def _config(tmp_path, variant="hgan", steps=12, extra=""):
    path = tmp_path / f"{variant}-{steps}.cfg"
    path.write_text(SMALL.format(variant=variant, steps=steps) + extra)
    return str(path)


def _run_dir(tmp_path, capsys, *argv):
    assert main(list(argv)) == 0
    return capsys.readouterr().out.strip().splitlines()[-1]


def _rows(text, header, types):
    reader = csv.reader(io.StringIO(text))
    assert next(reader) == header
    rows = list(reader)
    for row in rows:
        assert len(row) == len(header)
        for value, kind in zip(row, types):
            kind(value)
    return rows


METRIC_TYPES = [int] + [float] * 7
EVAL_TYPES = [str, int, float, float, int, float, float, int, float]
SWEEP_TYPES = [int, int, int, float, float, float, str, float]
COMPARE_TYPES = [str, str, float, float, float, int]


def test_train_writes_run_directory(tmp_path, capsys):
    cfg = _config(tmp_path)
    run = _run_dir(tmp_path, capsys, "train", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "runs"))
    assert re.fullmatch(r"hgan-7-\d{8}-\d{6}(-\d+)?", os.path.basename(run))
    assert sorted(os.listdir(run)) == ["config.txt", "metrics.csv", "model.hgck"]
    echo = open(os.path.join(run, "config.txt")).read()
    assert "seed = 7" in echo and "learning_rate = 0.0002" in echo and "adam_beta1 = 0.5" in echo
    rows = _rows(open(os.path.join(run, "metrics.csv")).read(), METRICS_HEADER, METRIC_TYPES)
    assert [int(r[0]) for r in rows] == [0, 5, 10, 11]
    est, tc = load_checkpoint(os.path.join(run, "model.hgck"))
    assert est.steps_done_ == 12 and tc.seed == 7


def test_rerun_reproduces_metrics_bitwise(tmp_path, capsys):
    cfg = _config(tmp_path)
    a = _run_dir(tmp_path, capsys, "train", "--config", cfg, "--out", str(tmp_path / "runs"))
    b = _run_dir(tmp_path, capsys, "train", "--config", cfg, "--out", str(tmp_path / "runs"))
    assert a != b
    read = lambda d: open(os.path.join(d, "metrics.csv"), "rb").read()
    assert read(a) == read(b)


def test_missing_required_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[training]\nsteps = 3\n")
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "variant" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[training]\nvariant = gan\nlearning_rat = 0.1\n")
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_nan_abort_exits_3(tmp_path, capsys):
    cfg = _config(tmp_path, extra="[model]\ninit_std = 1e200\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "runs")]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_incompatible_checkpoint_exits_4(tmp_path, capsys):
    run = _run_dir(tmp_path, capsys, "train", "--config", _config(tmp_path, steps=2), "--out", str(tmp_path / "runs"))
    ck = os.path.join(run, "model.hgck")
    grid = tmp_path / "grid.cfg"
    grid.write_text("[dataset]\nkind = patterns\nk = 4\n[training]\nvariant = hgan\n")
    assert main(["eval", "--checkpoint", ck, "--config", str(grid)]) == 4
    broken = tmp_path / "broken.hgck"
    broken.write_bytes(open(ck, "rb").read()[:-3])
    assert main(["sample", "--checkpoint", str(broken)]) == 4


def test_sample_csv_is_unfiltered_stream(tmp_path, capsys):
    run = _run_dir(tmp_path, capsys, "train", "--config", _config(tmp_path, steps=3), "--out", str(tmp_path / "runs"))
    ck = os.path.join(run, "model.hgck")
    path = _run_dir(tmp_path, capsys, "sample", "--checkpoint", ck, "-n", "9", "--seed", "2", "--out", str(tmp_path / "s"))
    rows = _rows(open(path).read(), ["x0", "x1"], [float, float])
    est, _ = load_checkpoint(ck)
    np.testing.assert_array_equal(np.array(rows, dtype=float), est.sample(9, random_state=2))
    path = _run_dir(tmp_path, capsys, "sample", "--checkpoint", ck, "-n", "0", "--out", str(tmp_path / "e"))
    assert open(path).read() == "x0,x1\n"


@pytest.mark.parametrize("n, cells", [(0, 0), (1, 1), (4, 2), (5, 3), (10, 4)])
def test_pgm_grid_layout(n, cells):
    imgs = np.linspace(0, 1, n * 9).reshape(n, 9)
    raw = pgm_bytes(imgs, 3)
    header = f"P5\n{3 * cells} {3 * cells}\n255\n".encode()
    assert raw.startswith(header)
    pix = np.frombuffer(raw[len(header) :], np.uint8).reshape(3 * cells, 3 * cells)
    for i in range(n):
        r, c = divmod(i, cells)
        np.testing.assert_array_equal(pix[3 * r : 3 * r + 3, 3 * c : 3 * c + 3].ravel(), np.round(imgs[i] * 255))


def test_sample_pgm_for_pattern_data(tmp_path, capsys):
    cfg = _config(tmp_path, steps=2, extra=PATTERNS)
    run = _run_dir(tmp_path, capsys, "train", "--config", cfg, "--out", str(tmp_path / "runs"))
    path = _run_dir(tmp_path, capsys, "sample", "--checkpoint", os.path.join(run, "model.hgck"), "-n", "5")
    raw = open(path, "rb").read()
    assert path.endswith(".pgm") and raw.startswith(b"P5\n9 9\n255\n") and len(raw) == 11 + 81


def test_eval_and_single_compare_agree(tmp_path, capsys):
    cfg = _config(tmp_path, steps=10)
    run = _run_dir(tmp_path, capsys, "train", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "runs"))
    assert main(["eval", "--checkpoint", os.path.join(run, "model.hgck"), "--config", cfg]) == 0
    capsys.readouterr()
    text = open(os.path.join(run, "eval.csv")).read()
    _rows(text, EVAL_HEADER, EVAL_TYPES)
    (single,) = read_reports_csv(text)
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--variants", "hgan", "--seeds", "3", "--out", str(out)]) == 0
    (same,) = read_reports_csv(open(out / "eval.csv").read())
    assert same == single
    rows = _rows(open(out / "compare.csv").read(), COMPARE_HEADER, COMPARE_TYPES)
    kl = [r for r in rows if r[1] == "kl_divergence"][0]
    assert float(kl[2]) == float(kl[3]) == float(kl[4]) == single.kl_divergence


def test_compare_aggregates_over_seeds(tmp_path, capsys):
    out = tmp_path / "cmp"
    cfg = _config(tmp_path, steps=4)
    assert main(["compare", "--config", cfg, "--variants", "gan,autogan", "--seeds", "0,1,2", "--out", str(out)]) == 0
    reports = read_reports_csv(open(out / "eval.csv").read())
    rows = _rows(open(out / "compare.csv").read(), COMPARE_HEADER, COMPARE_TYPES)
    assert len(rows) == 2 * 5
    for variant, metric, med, lo, hi, n in rows:
        vals = [getattr(r, metric) for r in reports if r.variant == variant]
        assert int(n) == 3
        assert float(med) == float(np.median(vals)) and float(lo) == min(vals) and float(hi) == max(vals)


def test_defend_sweep_csv(tmp_path, capsys):
    cfg = _config(tmp_path, steps=5, extra=PATTERNS)
    out = tmp_path / "def"
    assert main(["defend", "--config", cfg, "--out", str(out)]) == 0
    rows = _rows(open(out / "sweep.csv").read(), SWEEP_HEADER, SWEEP_TYPES)
    assert len(rows) == 2 * 2 * 2
    assert {(r[0], r[1]) for r in rows} == {("2", "1"), ("2", "2"), ("4", "1"), ("4", "2")}
    assert all(r[6] == "fgsm" and float(r[7]) == 0.3 for r in rows)
    assert all(0 <= float(v) <= 1 for r in rows for v in r[3:6])


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--states", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert any("projection residual" in line for line in lines)


def test_metrics_nan_sentinels_parse(tmp_path, capsys):
    run = _run_dir(tmp_path, capsys, "train", "--config", _config(tmp_path, "gan", 3), "--out", str(tmp_path / "runs"))
    rows = _rows(open(os.path.join(run, "metrics.csv")).read(), METRICS_HEADER, METRIC_TYPES)
    assert all(math.isnan(float(r[3])) for r in rows)
