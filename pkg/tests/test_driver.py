import csv
import hashlib
import json
import os

import numpy as np
import pytest

from conftest import FIXTURES, ROT_ALPHA, rotenberg
from kinetra.config import parse_config
from kinetra.driver import Scheduler, Table, execute, format_value, run_command
from kinetra.errors import ConfigError, NumericalFailure, OutsideHalfPlane
from kinetra.numerics import weighted_adjoint
from kinetra.resolvent import resolvent_matrix

ROT_MODEL = """\
[model]
kind = rotenberg
a = 0.1
b = 1.0
sigma = 1.0
n_s = {n}
n_v = {n}
"""

BOUNDARY = f"""
[boundary]
beta = const(0.5)
g = bump(0.55, 0.4)
k = bump(0.55, 0.4)
alpha = {ROT_ALPHA!r}
"""

COLLISION = """
[collision]
term1 = const(2.0) ; bump(0.55, 0.4) ; bump(0.55, 0.4)
"""


def cfg_text(command, n=12, boundary=True, collision=True):
    return (ROT_MODEL.format(n=n) + (BOUNDARY if boundary else "") + (COLLISION if collision else "")
            + "\n[command]\n" + command)


SMALL_DECAY = cfg_text("name = decay\nalpha = 0.0\nbeta_min = 1\nbeta_max = 1000\nn_beta = 6\n")


def read_csv(data: bytes):
    return list(csv.reader(data.decode("utf-8").splitlines()))


def test_format_value():
    assert format_value(True) == "true" and format_value(np.bool_(False)) == "false"
    assert format_value(3) == "3" and format_value(np.int64(7)) == "7"
    assert format_value(0.1) == "0.1" and format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(None) == ""
    assert format_value(float("nan")) == "nan"
    # shortest round trip: parsing gives back the same double
    x = 0.1 + 0.2
    assert float(format_value(x)) == x


def test_table_bytes():
    t = Table("t", ["a", "b"], [[1, 0.5], [2, None]])
    assert t.to_bytes() == b"a,b\n1,0.5\n2,\n"
    assert Table("e", ["x"]).to_bytes() == b"x\n"


def test_scheduler_order():
    items = list(range(20))
    seen = []

    def job(i):
        seen.append(i)
        return i * i

    out = Scheduler(1, permute=True).map(job, items)
    assert out == [i * i for i in items]
    assert seen != items and sorted(seen) == items
    assert Scheduler(3).map(lambda i: -i, items) == [-i for i in items]
    assert Scheduler(1, permute=True).order(10) == Scheduler(2, permute=True).order(10)
    with pytest.raises(ValueError):
        Scheduler(0)


def test_resolve_without_collision_section():
    cfg = parse_config(cfg_text("name = resolve\nlambda = 0.5\noracle = true\n", collision=False))
    files = run_command(cfg)
    rows = read_csv(files["resolve.csv"])
    assert rows[0] == ["n_s", "n_v", "lambda_re", "lambda_im", "margin", "solution_norm", "oracle_gap",
                       "norm_times_margin"]
    assert float(rows[1][4]) == 1.5
    # the continuous oracle differs from the 12 x 12 solution by the velocity quadrature error
    assert float(rows[1][6]) < 1e-3
    field = read_csv(files["field.csv"])
    assert len(field) == 1 + 144 and field[0] == ["coord_1", "coord_2", "re", "im"]


def test_resolve_refused_in_left_half_plane():
    cfg = parse_config(cfg_text("name = resolve\nlambda = -1.5\n"))
    with pytest.raises(OutsideHalfPlane):
        run_command(cfg)


def test_spectrum_without_boundary_is_empty():
    cfg = parse_config(cfg_text("name = spectrum\nregion = -0.9, 1.0, -2.0, 2.0\ngrid = 8, 8\n",
                                boundary=False, collision=False))
    files = run_command(cfg)
    assert files["eigenvalues.csv"].count(b"\n") == 1


def test_decay_golden_and_oracle():
    files = run_command(parse_config(SMALL_DECAY))
    golden = (FIXTURES / "decay_small.csv").read_bytes()
    assert files["decay.csv"] == golden
    # the frozen values agree with a dense weighted-norm oracle
    m = rotenberg(12)
    sw = np.sqrt(m.weights)
    B = m.B.matrix.entries
    Bs = weighted_adjoint(m.B.matrix).entries
    for row in read_csv(golden)[1:]:
        beta, left = float(row[0]), float(row[1])
        R = resolvent_matrix(m, complex(0.0, beta)).entries
        S = sw[:, None] * (Bs @ R @ B) / sw[None, :]
        assert left == pytest.approx(np.linalg.svd(S, compute_uv=False)[0], rel=1e-9)


def test_execute_writes_manifest_last(tmp_out):
    man = execute(parse_config(SMALL_DECAY), tmp_out, seed_check=True)
    assert man.status == "ok" and man.seed_check is True
    names = sorted(os.listdir(tmp_out))
    assert names == ["decay.csv", "decay_summary.csv", "manifest.json"]
    mtime = os.stat(os.path.join(tmp_out, "manifest.json")).st_mtime_ns
    for art in man.artifacts:
        path = os.path.join(tmp_out, art["file"])
        data = open(path, "rb").read()
        assert hashlib.sha256(data).hexdigest() == art["sha256"] and len(data) == art["bytes"]
        assert os.stat(path).st_mtime_ns <= mtime
    on_disk = json.load(open(os.path.join(tmp_out, "manifest.json")))
    assert on_disk["config"]["command"]["name"] == "decay"
    assert on_disk["version"] and "run_s" in on_disk["timings"] and "seed_check_s" in on_disk["timings"]


def test_output_prefix(tmp_out):
    man = execute(parse_config(SMALL_DECAY + "\n[output]\nprefix = run1_\n"), tmp_out)
    assert [a["file"] for a in man.artifacts] == ["run1_decay.csv", "run1_decay_summary.csv"]


def test_failure_manifest(tmp_out):
    cfg = parse_config(cfg_text("name = resolve\nlambda = -1.5\n"))
    with pytest.raises(OutsideHalfPlane):
        execute(cfg, tmp_out)
    man = json.load(open(os.path.join(tmp_out, "manifest.json")))
    assert man["status"] == "failed" and man["exit_code"] == 3 and man["artifacts"] == []
    assert os.listdir(tmp_out) == ["manifest.json"]


def test_seed_check_detects_order_dependence(tmp_out, monkeypatch):
    import kinetra.driver as drv

    calls = []
    original = drv._cmd_oscint

    def flaky(cfg, sched):
        calls.append(sched.permute)
        tables = original(cfg, sched)
        if sched.permute:
            tables[0].rows[0][1] += 1e-16
        return tables

    monkeypatch.setitem(drv._COMMANDS, "oscint", flaky)
    cfg = parse_config(cfg_text("name = oscint\nf = bump(0.0, 0.5)\nphase = poly(0, 0, 1)\na = -1\nb = 1\n"
                                "n_xi = 6\n", boundary=False, collision=False))
    with pytest.raises(NumericalFailure, match="seed check"):
        execute(cfg, tmp_out, seed_check=True)
    assert calls == [False, True]
    assert json.load(open(os.path.join(tmp_out, "manifest.json")))["seed_check"] is False


def test_dyson_and_remainder_tables():
    files = run_command(parse_config(cfg_text("name = dyson\nt = 1.0\nn = 3\nt_small = 0.05, 0.1\n", n=8)))
    rows = read_csv(files["dyson.csv"])
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3"]
    assert rows[1][3] == "nan"
    files = run_command(parse_config(cfg_text("name = remainder\nt = 1.0\nrefinements = 8, 10\ncount = 5\n")))
    rows = read_csv(files["remainder.csv"])
    assert rows[0] == ["n", "index", "sv_R1", "sv_U"] and len(rows) == 11


def test_evolve_tables():
    files = run_command(parse_config(cfg_text("name = evolve\nt_values = 0.5, 1.0\n", n=8)))
    norms = read_csv(files["norms.csv"])
    assert len(norms) == 3
    for r in norms[1:]:
        assert float(r[1]) <= float(r[2]) + 1e-12


def test_library_argument_errors_become_config_errors(tmp_out):
    cfg = parse_config(cfg_text("name = decay\nalpha = 0.0\nbeta_min = 1\nbeta_max = 5\nn_beta = 4\n"))
    with pytest.raises(ConfigError, match="decades"):
        execute(cfg, tmp_out)
    assert json.load(open(os.path.join(tmp_out, "manifest.json")))["exit_code"] == 2
