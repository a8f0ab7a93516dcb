import pytest

from mdgice.config import (
    TEMPLATES,
    CaseConfig,
    ConfigError,
    MeshSpec,
    dump_config,
    load_config,
    parse_config,
)
from mdgice.solver import SolverConfig


@pytest.mark.parametrize("name", sorted(TEMPLATES))
def test_templates_round_trip(name):
    cfg = TEMPLATES[name]
    assert parse_config(dump_config(cfg)) == cfg


def test_minimal_config_uses_defaults():
    cfg = parse_config('case = "burgers"\n')
    assert cfg.case == "burgers"
    assert cfg.mesh == MeshSpec()
    assert cfg.solver == SolverConfig()


def test_sections_are_typed():
    cfg = parse_config("""
case = "viscous_shock"
p_y = 3
continuation = [1e-2]

[params]
mach = 3.0

[mesh]
nx = 12
domain = [-0.05, 0.02]

[solver]
lambda_u = 1e-6
max_iter = 10
""")
    assert cfg.p_y == 3
    assert cfg.continuation == (1e-2,)
    assert cfg.mesh.domain == (-0.05, 0.02)
    assert cfg.solver.max_iter == 10
    assert cfg.params == {"mach": 3.0}


@pytest.mark.parametrize("text, match", [
    ('case = "euler"\n', "unknown case"),
    ("version = 2\n", "version"),
    ("p_y = -1\n", "non-negative"),
    ("bogus = 1\n", "unknown keys"),
    ("[mesh]\nnx = 4\ncells = 3\n", r"\[mesh\]"),
    ("[solver]\nlambda_u = 0.0\n", r"\[solver\]"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config('case = "burgers"\np_y = = 3\n', "bad.toml")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


def test_load_from_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(dump_config(TEMPLATES["burgers"]))
    assert load_config(path) == TEMPLATES["burgers"]


def test_direct_construction_validates():
    with pytest.raises(ConfigError):
        CaseConfig(case="nope")
