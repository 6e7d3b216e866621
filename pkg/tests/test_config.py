import pytest
from hypothesis import given, strategies as st

from poemlab import config as C
from poemlab.errors import ConfigError
from poemlab.runner import RunConfig


def test_parse_values():
    text = """
# comment
epochs = 12
lr = 0.01
sampler = random
name = "quoted string"
hidden = [16, 8]
standardize = false
note = hello  # trailing comment
"""
    got = C.parse_text(text)
    assert got == {"epochs": 12, "lr": 0.01, "sampler": "random", "name": "quoted string",
                   "hidden": [16, 8], "standardize": False, "note": "hello"}


@pytest.mark.parametrize("text", ["epochs 12", "epochs = 1\nepochs = 2", "9x = 1", " = 3"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        C.parse_text(text)


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "absent.cfg"
    with pytest.raises(ConfigError, match="absent.cfg"):
        C.load(path)


def test_build_and_coerce():
    cfg = C.build(RunConfig, {"epochs": 3, "lr": 1, "hidden": [4, 4], "snapshot_epochs": 2})
    assert cfg.epochs == 3 and cfg.lr == 1.0 and cfg.hidden == (4, 4) and cfg.snapshot_epochs == (2,)
    with pytest.raises(ConfigError) as err:
        C.build(RunConfig, {"epochs": 2.5})
    assert err.value.field == "epochs"
    with pytest.raises(ConfigError) as err:
        C.build(RunConfig, {"bogus": 1})
    assert err.value.field == "bogus"
    with pytest.raises(ConfigError):
        C.build(RunConfig, {"standardize": 3})


def test_merge_precedence(monkeypatch):
    monkeypatch.setenv(C.SEED_ENV, "17")
    assert C.merge({}, {})["seed"] == 17
    assert C.merge({"seed": 2}, {})["seed"] == 2
    assert C.merge({"seed": 2}, {"seed": 5})["seed"] == 5
    assert C.merge({"epochs": 4}, {"epochs": None})["epochs"] == 4
    monkeypatch.setenv(C.SEED_ENV, "abc")
    with pytest.raises(ConfigError):
        C.merge({}, {})


values = st.one_of(st.integers(-10 ** 6, 10 ** 6), st.floats(allow_nan=False, allow_infinity=False),
                   st.booleans(), st.text(alphabet="abc xyz_-.", max_size=10),
                   st.lists(st.integers(0, 100), max_size=4))


@given(st.dictionaries(st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True), values, max_size=6))
def test_dump_parse_roundtrip(d):
    assert C.parse_text(C.dump(d)) == d


def test_shipped_configs_load():
    from pathlib import Path

    from poemlab.cli import ExperimentManifest, TheoremSettings
    root = Path(__file__).resolve().parents[1] / "configs"
    C.build(RunConfig, C.load(root / "toy.cfg")).validate()
    assert len(ExperimentManifest.from_values(C.load(root / "compare.cfg")).cells()) == 15
    C.build(TheoremSettings, C.load(root / "theorem.cfg")).validate()
