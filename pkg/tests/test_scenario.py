import pytest
import yaml

from odeftc.exceptions import ScenarioError
from odeftc.scenario import (SimConfig, builtin_scenarios, dump_scenario, load_scenario,
                             scenario_from_dict)

from conftest import small_doc


def test_builtins():
    assert {"paper-ltv", "paper-lti"} <= set(builtin_scenarios())


def test_paper_ltv_matrices(ltv):
    assert ltv.N == 7 and ltv.n == 4
    assert not ltv.is_time_invariant
    R1 = ltv.sensors[0].R
    assert R1(0.0)[0, 0] == pytest.approx(0.05)
    assert ltv.config.h == 1e-4 and ltv.config.realizations == 100


def test_paper_lti_is_time_invariant(lti):
    assert lti.is_time_invariant


def test_round_trip(ltv, tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(dump_scenario(ltv))
    again = load_scenario(path)
    assert again.to_dict() == ltv.to_dict()


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.pop("plant"), "plant"),
    (lambda d: d["plant"].pop("A"), "A"),
    (lambda d: d["plant"].__setitem__("A", [["0.5*tan(t)", 0], [0, 0]]), "unknown function"),
    (lambda d: d["sensors"].append(d["sensors"][0]), "sensors"),
    (lambda d: d["graph"].__setitem__("edges", [[1, 1]]), "graph"),
    (lambda d: d["sensors"][0].__setitem__("R", [[-1.0]]), "sensor 1"),
    (lambda d: d["sim"].__setitem__("realizations", 0), "realizations"),
    (lambda d: d["params"].__setitem__("gamma", 1.5), "gamma"),
])
def test_invalid_documents(mutate, match):
    doc = small_doc(N=2, edges=[(1, 2)])
    mutate(doc)
    with pytest.raises(ScenarioError, match=match):
        scenario_from_dict(doc)


def test_missing_file_or_name(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario("no-such-scenario")
    bad = tmp_path / "bad.yaml"
    bad.write_text("plant: [unclosed")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


@pytest.mark.parametrize("kw", [dict(h=0), dict(t_end=1e-6, h=1e-4), dict(realizations=0), dict(stride=0),
                                dict(kappa=-1), dict(init="zeros"), dict(scheme="rk4"), dict(seed=-1)])
def test_sim_config_validation(kw):
    with pytest.raises(ScenarioError):
        SimConfig(**kw)


def test_steps_and_replace():
    c = SimConfig(h=1e-3, t_end=0.5)
    assert c.steps == 500
    assert c.replace(kappa=3.0).kappa == 3.0
    assert yaml.safe_load(yaml.safe_dump(c.to_dict()))["consensus"]["alpha"] == 20.0
