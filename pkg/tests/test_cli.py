import io
import json
import re
from contextlib import redirect_stdout
from importlib import resources

import jsonschema
import pytest

from merw.cli import run

IID = '{"kind":"iid","nu":{"bernoulli":{"p":0.3,"M":2}},"seed":1}'
STEP = '{"kind":"step","M":2}'
HEADER = re.compile(r"^# merw \S+ config=[0-9a-f]{16} seed=-?\d+$")


def call(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = run(list(argv))
    return rc, buf.getvalue()


def schema(name):
    return json.loads(resources.files("merw").joinpath(f"schemas/{name}.schema.json").read_text())


def test_eigen_csv_has_header_and_window():
    rc, out = call("eigen", "--env", STEP, "--window=-2:2")
    lines = out.splitlines()
    assert rc == 0 and HEADER.match(lines[0])
    assert lines[1].startswith("i,w_i,log_psi_plus,log_psi_minus")
    assert [ln.split(",")[0] for ln in lines[2:]] == ["-2", "-1", "0", "1", "2"]


def test_kernel_rows_sum_to_one():
    rc, out = call("kernel", "--env", IID, "--kappa", "0.5", "--window=-20:20")
    assert rc == 0
    for ln in out.splitlines()[2:]:
        _, l, s, r, _ = map(float, ln.split(","))
        assert abs(l + s + r - 1) < 1e-12


def test_simulate_summary_validates(tmp_path):
    path = tmp_path / "s.json"
    rc, _ = call("simulate", "--env", IID, "--steps", "200", "--replicas", "30",
                 "--seed", "4", "--summary", str(path))
    assert rc == 0
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, schema("simulate_summary"))
    assert doc["replicas"] == 30 and len(doc["returns"]["per_replica"]) == 30


def test_simulate_csv_to_stdout():
    rc, out = call("simulate", "--env", STEP, "--steps", "3", "--replicas", "2", "--seed", "1")
    assert rc == 0 and len(out.splitlines()) == 2 + 2 * 4


def test_periodic_validates_and_handles_huge_normaliser():
    rc, out = call("periodic", "--ell", "5", "--M", "2", "--eps", "0.1", "0.01")
    doc = json.loads(out)
    jsonschema.validate(doc, schema("periodic"))
    assert abs(doc["entropy_rate"] - doc["log_lambda"]) < 1e-10
    rc, out = call("periodic", "--ell", "400", "--M", "20")
    doc = json.loads(out)
    jsonschema.validate(doc, schema("periodic"))
    assert doc["Z"] is None and doc["log_Z"] > 700


def test_speed_quenched_validates():
    rc, out = call("speed", "--env", IID, "--terms", "200")
    assert rc == 0
    jsonschema.validate(json.loads(out), schema("speed_quenched"))


def test_oracle_outputs():
    rc, out = call("oracle", "count-excursions", "--n", "3")
    assert rc == 0 and "3,1,1,6" in out.splitlines()
    rc, out = call("oracle", "green", "--env", IID, "--N", "64")
    jsonschema.validate(json.loads(out), schema("green"))
    rc, out = call("oracle", "lambda", "--env", '{"kind":"constant","c":2}', "--n-max", "60")
    doc = json.loads(out)
    jsonschema.validate(doc, schema("lambda"))
    assert doc["relative_gap"] <= 0.05


@pytest.mark.parametrize("argv", [
    ("speed", "--nu", "bernoulli:0.5,2", "--reps", "500", "--seed", "7"),
    ("simulate", "--env", IID, "--steps", "300", "--replicas", "3", "--seed", "2"),
    ("figure1", "--p", "0.3", "--M", "2", "--replicas", "2", "--steps", "50", "--seed", "1"),
    ("periodic", "--ell", "8", "--M", "2"),
])
def test_byte_identical_reruns(argv):
    assert call(*argv) == call(*argv)


def test_seed_changes_output_and_header():
    a = call("speed", "--nu", "bernoulli:0.5,2", "--reps", "500", "--seed", "1")[1]
    b = call("speed", "--nu", "bernoulli:0.5,2", "--reps", "500", "--seed", "2")[1]
    assert a != b and "seed=1" in a.splitlines()[0] and "seed=2" in b.splitlines()[0]


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("MERW_SEED", "42")
    _, out = call("speed", "--nu", "bernoulli:0.5,2", "--reps", "100")
    assert "seed=42" in out.splitlines()[0]


@pytest.mark.parametrize("argv,code", [
    (("speed", "--nu", "bernoulli:1.0,2", "--reps", "100"), 2),
    (("eigen", "--env", "/no/such/file.json"), 2),
    (("eigen", "--env", '{"kind":"single_loop","M":2}'), 2),
    (("simulate", "--env", IID, "--kappa", "1.5"), 2),
])
def test_errors_give_exit_codes(argv, code, capsys):
    assert run(list(argv)) == code
    assert capsys.readouterr().err.strip()


def test_selfcheck_detects_corrupted_beta():
    rc, out = call("selfcheck", "--mutate-beta")
    assert rc == 1
    assert any(ln.startswith("FAIL  eigen residuals") for ln in out.splitlines())
