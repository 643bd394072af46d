"""
test_config.py
==============
Tests for ``fsimlab.config``.
"""

from __future__ import annotations

import json

import pytest

from fsimlab.config import (
    DEFAULT_PROFILE,
    SEED_ENV,
    RunConfig,
    config_hash,
    load_device_model,
    resolve_seed,
    save_device_model,
)
from fsimlab.device_sim import DeviceModel
from fsimlab.errors import ConfigError


class TestRunConfigDefaults:

    def test_default_construction(self):
        cfg = RunConfig()
        assert cfg.experiment == "scan"
        assert cfg.seed == 0
        assert cfg.shots == 2000
        assert cfg.noise is True
        assert cfg.workers == 1
        assert not cfg.expectation

    def test_expectation_mode(self):
        assert RunConfig(shots=None).expectation

    def test_to_dict_is_json_serialisable(self):
        cfg = RunConfig(experiment="xeb", params={"depths": [5, 10]})
        assert json.loads(json.dumps(cfg.to_dict()))["params"] == {"depths": [5, 10]}


class TestRunConfigValidation:

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            RunConfig(experiment="teleport")

    @pytest.mark.parametrize("shots", [0, -5])
    def test_bad_shots(self, shots):
        with pytest.raises(ConfigError):
            RunConfig(shots=shots)

    def test_bad_workers(self):
        with pytest.raises(ConfigError):
            RunConfig(workers=0)

    def test_missing_device_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig(device=str(tmp_path / "nope.json"))


class TestDeviceProfiles:

    def test_packaged_profile_matches_defaults(self):
        loaded = load_device_model()
        reference = DeviceModel()
        assert DEFAULT_PROFILE.is_file()
        assert loaded.eta == reference.eta
        assert loaded.t1 == reference.t1
        assert loaded.single_qubit_error == reference.single_qubit_error
        assert loaded.coupler.g_direct == pytest.approx(reference.coupler.g_direct)
        assert loaded.coupler.g(0.0) == pytest.approx(6.0)
        assert loaded.coupler.g(0.45) == pytest.approx(-50.0)
        assert loaded.settling_q0.taus == reference.settling_q0.taus

    def test_save_and_reload(self, tmp_path):
        model = DeviceModel(eta=220.0, t_phi=None, dac_bits=None)
        back = load_device_model(save_device_model(model, tmp_path / "dev.json"))
        assert back.to_dict() == model.to_dict()

    def test_partial_profile_keeps_defaults(self, tmp_path):
        path = tmp_path / "dev.json"
        path.write_text(json.dumps({"description": "warm fridge", "t1": 12.0}))
        model = load_device_model(path)
        assert model.t1 == 12.0
        assert model.eta == DeviceModel().eta

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_device_model(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "dev.json"
        path.write_text("{eta: 1")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_device_model(path)

    @pytest.mark.parametrize("payload", [{"eta": -1.0}, {"flux_noise": 3}])
    def test_invalid_fields(self, tmp_path, payload):
        path = tmp_path / "dev.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError, match="invalid device profile"):
            load_device_model(path)


class TestSeeds:

    def test_env_absent(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        assert resolve_seed(11) == 11

    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "42")
        assert resolve_seed(11) == 42

    def test_env_must_be_integer(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "forty-two")
        with pytest.raises(ConfigError):
            resolve_seed(11)


class TestConfigHash:

    def test_stable_and_short(self):
        a = config_hash(RunConfig(seed=3), DeviceModel())
        assert a == config_hash(RunConfig(seed=3), DeviceModel())
        assert len(a) == 16

    def test_ignores_output_dir(self):
        assert (config_hash(RunConfig(output_dir="a"), DeviceModel())
                == config_hash(RunConfig(output_dir="b"), DeviceModel()))

    def test_ignores_worker_count(self):
        assert (config_hash(RunConfig(seed=3, workers=1), DeviceModel())
                == config_hash(RunConfig(seed=3, workers=4), DeviceModel()))

    def test_sensitive_to_seed_and_device(self):
        base = config_hash(RunConfig(seed=3), DeviceModel())
        assert config_hash(RunConfig(seed=4), DeviceModel()) != base
        assert config_hash(RunConfig(seed=3), DeviceModel(t1=30.0)) != base
