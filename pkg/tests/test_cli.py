import json
import subprocess
import sys

import pytest

from volflow.cli import EXIT_FAIL, EXIT_IMPOSSIBLE, EXIT_INVALID, EXIT_PASS, main


def run(tmp_path, *argv, name="report.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (out.read_text() if out.exists() else None)


def test_verify_perturb_pass(tmp_path):
    code, text = run(tmp_path, "verify-perturb", "--samples", "20000")
    assert code == EXIT_PASS
    rep = json.loads(text)
    assert rep["pass"] and rep["support_defect"] == 0.0
    assert set(rep["cr_norm"]) == {"0", "1", "2"}


def test_verify_perturb_bad_xi(tmp_path):
    code, _ = run(tmp_path, "verify-perturb", "--xi", "0.3")
    assert code == EXIT_INVALID


def test_verify_perturb_zero_theta(tmp_path):
    code, text = run(tmp_path, "verify-perturb", "--theta", "0", "--samples", "5000")
    rep = json.loads(text)
    assert code == EXIT_PASS
    assert rep["support_defect"] == 0.0 and rep["divergence_max"] == 0.0
    assert all(v == 0.0 for v in rep["cr_norm"].values())


def test_flowbox(tmp_path):
    code, text = run(tmp_path, "flowbox", "--boxes", "5", "--mc-samples", "5000")
    assert code == EXIT_PASS
    assert set(json.loads(text)) >= {"pushforward_defect", "volume_rel_error", "section_defect", "pass"}


def test_flowbox_exp_last(tmp_path):
    code, _ = run(tmp_path, "flowbox", "--density", "exp-last")
    assert code == EXIT_INVALID


def test_chain_torus_and_orbits(tmp_path):
    code, text = run(tmp_path, "chain", "--seed", "1", "--emit-orbits")
    rep = json.loads(text)
    assert code == EXIT_PASS and rep["pass"]
    hops = sorted(tmp_path.glob("report_hop*.csv"))
    assert len(hops) == len(rep["hop_times"])
    assert hops[0].read_text().splitlines()[0].startswith("t,")


def test_chain_saddle_pair(tmp_path):
    code, text = run(tmp_path, "chain", "--field", "saddle-pair-demo", "--eps", "0.01",
                     "--p", "0.99,0,0.1", "--q", "0.01,0,0.1")
    assert code == EXIT_IMPOSSIBLE
    rep = json.loads(text)
    assert not rep["pass"] and len(rep["gap"]) == 3


def test_chain_trivial_loop(tmp_path):
    code, _ = run(tmp_path, "chain", "--p", "0.2,0.3,0.4", "--q", "0.2,0.3,0.4")
    assert code == EXIT_PASS


def test_chain_csv(tmp_path):
    code, text = run(tmp_path, "chain", "--seed", "2", "--format", "csv", name="c.csv")
    assert code == EXIT_PASS
    assert text.splitlines()[0] == "x1,x2,x3,hop_time"


def test_return_demo(tmp_path):
    code, text = run(tmp_path, "return-demo")
    rep = json.loads(text)
    assert code == EXIT_PASS and 1 <= len(rep["trail"]) <= 5
    assert rep["verification"]["pass"]


def test_genericity_catmap(tmp_path):
    code, text = run(tmp_path, "genericity", "--field", "catmap-suspension", "--k", "5", "--m", "3",
                     "--per-axis", "4")
    rep = json.loads(text)
    assert code == (EXIT_PASS if rep["pass_A1"] and rep["pass_A2"] else EXIT_FAIL)


def test_genericity_saddle(tmp_path):
    code, text = run(tmp_path, "genericity", "--field", "saddle-demo", "--domain", "element")
    assert code == EXIT_FAIL
    assert not json.loads(text)["pass_A2"]


def test_manifold_csv(tmp_path):
    code, text = run(tmp_path, "manifold", "--field", "catmap-suspension", "--count", "4",
                     "--format", "csv", name="m.csv")
    assert code == EXIT_PASS
    assert len(text.splitlines()) > 4


def test_unknown_field(tmp_path):
    code, _ = run(tmp_path, "chain", "--field", "no-such-field")
    assert code == EXIT_INVALID


def test_bad_arguments():
    assert main(["chain", "--eps", "abc"]) == EXIT_INVALID
    assert main(["nope"]) == EXIT_INVALID


@pytest.mark.parametrize("argv", [
    ["chain", "--seed", "4"],
    ["verify-perturb", "--samples", "5000"],
    ["return-demo", "--seed", "1"],
])
def test_deterministic_output(tmp_path, argv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main([*argv, "--out", str(a)]) == main([*argv, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "volflow", "chain", "--p", "0.1,0.1,0.1",
                          "--q", "0.1,0.1,0.1"], capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert json.loads(res.stdout)["pass"]
