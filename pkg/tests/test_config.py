import pytest

from beltrami.config import parse_config, parse_number
from beltrami.errors import ConfigError


class TestParseConfig:
    def test_minimal_classify(self):
        (cfg,) = parse_config("[run.b1]\nmode = classify\nfield = b1-classical\n")
        assert cfg.mode == "classify" and cfg.name == "b1"
        assert cfg.H0 == "zero" and cfg.D == 1.0 and cfg.samples == 1000
        assert cfg.boundary == ("periodic",) * 3

    def test_h_theorem_preset(self):
        (cfg,) = parse_config("[run]\nmode = sde\nfield = b1-classical\npreset = h-theorem\nD = 1\ngamma = 0.5\n")
        assert cfg.kappa == 1.0 and cfg.preset == "h-theorem"
        assert cfg.dt == 1e-3 and cfg.N == 1000

    def test_negative_d_names_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[run]\nmode = fpe\nfield = b1-classical\nD = -1\n")
        assert any("D" in e for e in exc.value.errors)

    def test_all_errors_listed(self):
        text = "[run]\nmode = sde\nfield = nowhere\nD = -1\nsteps = 1.5\nbogus = 3\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        joined = " ".join(exc.value.errors)
        for key in ("field", "D", "steps", "bogus"):
            assert key in joined
        assert len(exc.value.errors) >= 4

    def test_kappa_inconsistent_with_preset(self):
        with pytest.raises(ConfigError, match="inconsistent"):
            parse_config("[run]\nmode = fpe\nfield = b1-classical\npreset = h-theorem\nD = 1\ngamma = 0.5\nkappa = 2\n")

    def test_missing_keys(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[run]\nmode = fpe\n")
        assert any("field" in e for e in exc.value.errors)
        with pytest.raises(ConfigError, match="mode"):
            parse_config("[run]\nfield = b1-classical\n")

    def test_multiple_runs_and_defaults(self):
        text = "[DEFAULT]\nfield = b1-classical\n[run.a]\nmode = classify\n[run.b]\nmode = fpe\ngrid = 16 16 16\n"
        a, b = parse_config(text)
        assert (a.name, b.name) == ("a", "b")
        assert b.field == "b1-classical" and b.grid == (16, 16, 16) and b.tol == 1e-9

    def test_bounds_and_assertions(self):
        text = ("[run]\nmode = fpe\nfield = nb-simple\nbounds = 0 2pi -3 3 0 2*pi\nboundary = periodic zero-flux periodic\n"
                "assert.linf_error = <= 0.02\nassert.converged = == true\nH0 = cos(x) + y\n")
        (cfg,) = parse_config(text)
        assert cfg.upper[0] == pytest.approx(6.283185307179586)
        assert cfg.boundary[1] == "zero-flux"
        assert [str(a) for a in cfg.assertions] == ["linf_error <= 0.02", "converged == True"]
        assert cfg.assertions[0].check(0.01) and not cfg.assertions[0].check(None)

    @pytest.mark.parametrize("line", ["grid = 4 8 8", "bounds = 1 0 0 1 0 1", "boundary = open open open",
                                      "H0 = sin(", "preset = magic", "scheme = rk4", "seed = -1",
                                      "assert.x = about 3"])
    def test_invalid_values(self, line):
        with pytest.raises(ConfigError):
            parse_config(f"[run]\nmode = fpe\nfield = b1-classical\n{line}\n")

    def test_syntax_and_sections(self):
        with pytest.raises(ConfigError):
            parse_config("mode = fpe\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[other]\nx = 1\n[run]\nmode = catalog-report\n")
        with pytest.raises(ConfigError, match="no \\[run\\]"):
            parse_config("")


class TestNumbers:
    @pytest.mark.parametrize("text,value", [("1.5", 1.5), ("pi", 3.141592653589793), ("2pi", 6.283185307179586),
                                            ("-0.5*pi", -1.5707963267948966), ("1e-3", 1e-3)])
    def test_parse(self, text, value):
        assert parse_number(text) == pytest.approx(value, rel=1e-15)

    def test_bad(self):
        with pytest.raises(ValueError):
            parse_number("two")
