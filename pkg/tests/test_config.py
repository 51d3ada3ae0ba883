import json
import os

import pytest

from mdaqa import config, exceptions
from mdaqa.config import RunConfig


@pytest.fixture
def pyproject_factory(cwd):
    def factory(body):
        p = cwd / "pyproject.toml"
        p.write_text(body)
        return p

    return factory


def test_find_config_current_directory(pyproject_factory):
    p = pyproject_factory("[tool.mdaqa]\nepochs = 3\n")

    assert config.find_config() == p


def test_find_config_parent_directory(cwd, pyproject_factory):
    p = pyproject_factory("[tool.mdaqa]\nepochs = 3\n")
    subdir = cwd / "sub"
    subdir.mkdir()
    os.chdir(str(subdir))

    assert config.find_config() == p


@pytest.mark.usefixtures("cwd")
def test_find_config_not_found():
    assert config.find_config() is None


@pytest.mark.usefixtures("cwd")
def test_load_config_defaults():
    assert config.load_config() == RunConfig()


def test_load_config_other_tool(pyproject_factory):
    pyproject_factory("[tool.other]\nepochs = 3\n")
    assert config.load_config() == RunConfig()


def test_load_config_pyproject(pyproject_factory):
    pyproject_factory("[tool.mdaqa]\nepochs = 3\nlam = 1\nuse_mask = false\n")

    c = config.load_config()

    assert c.epochs == 3
    assert c.lam == 1.0
    assert isinstance(c.lam, float)
    assert c.use_mask is False


def test_load_config_json_overrides_pyproject(cwd, pyproject_factory):
    pyproject_factory("[tool.mdaqa]\nepochs = 3\nrounds = 2\n")
    p = cwd / "run.json"
    p.write_text(json.dumps({"epochs": 7}))

    c = config.load_config(p)

    assert c.epochs == 7
    assert c.rounds == 2


def test_load_config_invalid_toml(pyproject_factory):
    pyproject_factory("[tool.mdaqa\n")

    with pytest.raises(exceptions.InvalidConfigurationError) as e:
        config.load_config()

    assert "invalid toml" in str(e.value)


def test_load_config_unknown_key(pyproject_factory):
    p = pyproject_factory("[tool.mdaqa]\nepochz = 3\nfoo = 1\n")

    with pytest.raises(exceptions.InvalidConfigurationError) as e:
        config.load_config()

    assert str(e.value) == f"{p} [tool.mdaqa]: unknown key(s) epochz, foo"


@pytest.mark.parametrize(
    ("data", "message"),
    [
        ({"epochs": 2.5}, "run.json: epochs must be int, got 2.5"),
        ({"epochs": True}, "run.json: epochs must be int, got True"),
        ({"lam": "high"}, "run.json: lam must be float, got 'high'"),
        ({"use_mask": 1}, "run.json: use_mask must be bool, got 1"),
        ({"domain": 1}, "run.json: domain must be str, got 1"),
        ({"sweep_values": [0.1, 0.5]}, "run.json: sweep_values must be str, got [0.1, 0.5]"),
    ],
)
def test_load_config_bad_type(cwd, data, message):
    p = cwd / "run.json"
    p.write_text(json.dumps(data))

    with pytest.raises(exceptions.InvalidConfigurationError) as e:
        config.load_config(p)

    assert str(e.value).endswith(message)


@pytest.mark.parametrize(("text", "message"), [("{not json", "invalid JSON"), ("[1]", "expected a JSON object")])
def test_load_config_bad_json(cwd, text, message):
    p = cwd / "run.json"
    p.write_text(text)

    with pytest.raises(exceptions.InvalidConfigurationError) as e:
        config.load_config(p)

    assert message in str(e.value)


def test_load_config_missing_json(cwd):
    with pytest.raises(exceptions.InvalidConfigurationError) as e:
        config.load_config(cwd / "missing.json")

    assert str(e.value) == f"config file {cwd / 'missing.json'} not found"


class TestThreads:
    @pytest.mark.usefixtures("cwd")
    def test_env(self, monkeypatch):
        monkeypatch.setenv("MDAQA_THREADS", "4")
        assert config.load_config().threads == 4

    def test_file_wins_over_env(self, monkeypatch, pyproject_factory):
        monkeypatch.setenv("MDAQA_THREADS", "4")
        pyproject_factory("[tool.mdaqa]\nthreads = 2\n")

        assert config.load_config().threads == 2

    @pytest.mark.usefixtures("cwd")
    @pytest.mark.parametrize("value", ["0", "-1", "many"])
    def test_invalid_env(self, monkeypatch, value):
        monkeypatch.setenv("MDAQA_THREADS", value)

        with pytest.raises(exceptions.InvalidConfigurationError) as e:
            config.load_config()

        assert str(e.value) == f"MDAQA_THREADS must be a positive integer, got {value!r}"

    def test_invalid_file_value(self, pyproject_factory):
        pyproject_factory("[tool.mdaqa]\nthreads = 0\n")

        with pytest.raises(exceptions.InvalidConfigurationError):
            config.load_config()


class TestRunConfig:
    def test_with_overrides_ignores_none(self):
        c = RunConfig().with_overrides(epochs=None, lam=0.5)

        assert c.epochs == RunConfig().epochs
        assert c.lam == 0.5

    def test_with_overrides_unknown(self):
        with pytest.raises(exceptions.InvalidConfigurationError) as e:
            RunConfig().with_overrides(nope=1)

        assert str(e.value) == "flags: unknown key(s) nope"

    def test_write_resolved(self, cwd):
        p = RunConfig(epochs=4).write_resolved(cwd / "out" / "run.config.json")

        data = json.loads(p.read_text())
        assert data["epochs"] == 4
        assert list(data) == sorted(data)
        assert RunConfig.from_dict(data) == RunConfig(epochs=4)

    def test_builders(self):
        c = RunConfig(shift=0.3, seed=9, bottleneck=8, rounds=2, adapt_lr_mask=0.7, lam=0.5)

        spec = c.domain_spec()
        assert (spec.shift, spec.seed) == (0.3, 9)
        assert c.domain_spec(shift=0.0, seed=1).shift == 0.0
        assert c.source_spec(seed=1).shift == 0.0
        assert RunConfig(source_shift=0.2).source_spec().shift == 0.2
        assert c.model_shape().bottleneck == 8
        assert c.optimizer_config().lam == 0.5
        adapt = c.adapt_config()
        assert (adapt.rounds, adapt.lr_mask, adapt.lam) == (2, 0.7, 0.5)

    def test_invalid_values_surface_from_builders(self):
        with pytest.raises(exceptions.InvalidConfigurationError):
            RunConfig(alpha=1.5).adapt_config()
