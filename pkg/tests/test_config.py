import numpy as np
import pytest

from apolab.config import config_hash, expand, load_spec, parse_spec, parse_text
from apolab.engine import RunConfig
from apolab.errors import ConfigError
from apolab.instance import Instance, generate


class TestParse:
    def test_comments_and_alternatives(self):
        parsed = parse_text("# header\nalpha = 0, 0.3 , 0.6  # sweep\n\nloss = sppo\n")
        assert parsed == {"alpha": [0.0, 0.3, 0.6], "loss": ["sppo"]}

    @pytest.mark.parametrize(
        "text,line,column",
        [
            ("alpha 0.5\n", 1, 1),
            ("beta = 1\n  gamma = 2\n", 2, 3),
            ("beta = 1\nbeta = 2\n", 2, 1),
            ("T = ten\n", 1, 5),
            ("alpha = 0.1, nope\n", 1, 14),
        ],
    )
    def test_error_positions(self, text, line, column):
        with pytest.raises(ConfigError) as info:
            parse_text(text)
        assert (info.value.line, info.value.column) == (line, column)
        assert str(info.value).startswith(f"line {line}, column {column}: ")

    def test_beta_schedule_is_one_value(self):
        spec = parse_spec("beta_schedule = 0.01 0.1 1.0\nT = 3\n")
        assert len(spec.runs) == 1 and spec.runs[0].beta_schedule == (0.01, 0.1, 1.0)

    def test_window(self):
        assert parse_spec("window = 4 9\n").window == (4, 9)
        with pytest.raises(ConfigError):
            parse_spec("window = 9 4\n")


class TestExpand:
    def test_cartesian_product(self):
        runs = expand(parse_text("alpha = 0, 0.5\nbeta = 0.5, 1, 2\nseed = 1, 2\n"))
        assert len(runs) == 12
        assert len(set(runs)) == 12

    def test_defaults(self):
        assert expand({}) == [RunConfig()]

    def test_empty_alternatives(self):
        assert parse_spec("alpha =\n").runs == []

    def test_invalid_value_is_config_error(self):
        with pytest.raises(ConfigError):
            parse_spec("alpha = 1.0\n")

    def test_inner_solver_keys(self):
        (cfg,) = expand(parse_text("inner_solver.max_steps = 7\ninner_solver.grad_tol = 1e-6\nloss = ipo\nipo_tau = 2\n"))
        assert cfg.inner_solver.max_steps == 7 and cfg.inner_solver.grad_tol == 1e-6
        assert cfg.loss.tag == "ipo" and cfg.loss.ipo_tau == 2.0


class TestInstances:
    def test_generated_source(self):
        spec = parse_spec("gen_kind = general\ngen_seed = 4\ngen_delta = 0.2\nnum_prompts = 2\nnum_responses = 4\n")
        inst = spec.load_instance()
        assert inst.kind == "general" and inst.world.shape == (2, 4)

    def test_fixture_relative_to_spec(self, tmp_path):
        inst = generate("bt", 2, 0.5, 1, 3)
        inst.save(tmp_path / "inst.json")
        (tmp_path / "spec.cfg").write_text("instance = inst.json\n")
        loaded = load_spec(tmp_path / "spec.cfg").load_instance()
        np.testing.assert_array_equal(loaded.model.rewards, inst.model.rewards)

    def test_missing_fixture(self, tmp_path):
        (tmp_path / "spec.cfg").write_text("instance = nowhere.json\n")
        with pytest.raises(ConfigError):
            load_spec(tmp_path / "spec.cfg").load_instance()

    def test_missing_spec_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_spec(tmp_path / "absent.cfg")

    @pytest.mark.parametrize("kind", ["bt", "general"])
    def test_instance_json_round_trip(self, kind):
        inst = generate(kind, 7, 0.2, 2, 3, ref="random")
        back = Instance.from_json(inst.to_json())
        np.testing.assert_array_equal(back.pi_ref.log_probs, inst.pi_ref.log_probs)
        np.testing.assert_array_equal(back.preferences.probs, inst.preferences.probs)


def test_config_hash_stable_and_sensitive():
    a, b = RunConfig(alpha=0.3), RunConfig(alpha=0.3)
    assert config_hash(a) == config_hash(b) and len(config_hash(a)) == 16
    assert config_hash(a) != config_hash(RunConfig(alpha=0.31))
