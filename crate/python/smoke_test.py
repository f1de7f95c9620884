"""Smoke test for the tariffopt extension module."""

import json
import math
import pathlib
import tempfile

import tariffopt

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def main():
    s = tariffopt.Scenario.load(str(SCENARIOS / "constant_residential.json"))
    boundary = json.loads(s.boundary_json())
    assert boundary["kind"] == "threshold", boundary
    x0 = boundary["x0"]
    assert 0.0 < x0 < 1.0
    assert s.components == [(x0, 1.0)]

    report = json.loads(s.report_json())
    assert math.isclose(report["principal_utility"], s.relaxed_value, rel_tol=1e-6)

    served = 0.5 * (x0 + 1.0)
    assert s.total_surplus(served) >= s.reservation(served) - 1e-9
    assert s.total_surplus(0.5 * x0) <= s.reservation(0.5 * x0) + 1e-9
    c, surplus = s.best_response(0, served)
    assert c > 0.0
    assert math.isclose(s.indirect_utility(0, served), surplus, rel_tol=1e-6, abs_tol=1e-9)
    assert s.price(0, c) > 0.0

    typed = tariffopt.Scenario.load(str(SCENARIOS / "sqrt_industrial.json"))
    assert json.loads(typed.boundary_json())["b0"] == 0.0

    config = (SCENARIOS / "constant_residential.json").read_text()
    rows = json.loads(tariffopt.sweep_json(config, "k_scale", [2.0, 1.0]))
    assert [r["value"] for r in rows] == [1.0, 2.0]
    assert rows[0]["principal_utility"] >= rows[1]["principal_utility"]

    bad = json.loads(config)
    bad["model"]["gamma"] = 0.0
    try:
        tariffopt.Scenario(json.dumps(bad))
    except tariffopt.ConfigError:
        pass
    else:
        raise AssertionError("gamma = 0 accepted")
    assert issubclass(tariffopt.ConfigError, tariffopt.SolverError)

    with tempfile.TemporaryDirectory() as out:
        tariffopt.run_scenario(str(SCENARIOS / "log_residential.json"), out)
        assert (pathlib.Path(out) / "tariff.csv").exists()

    print("smoke test passed")


if __name__ == "__main__":
    main()
