import numpy as np
import pytest

from photonfilter.config import (PRESETS, ConfigError, dump_config, parse_complex_list,
                                 parse_config, parse_text)


def test_preset_a():
    cfg = parse_config(preset="atom-2photon-a")
    assert cfg.n == 2 and cfg.dt == 1e-3 and cfg.t_final == 12.0
    assert [(p.omega, p.center) for p in cfg.pulses] == [(1.46, 3.0), (1.46, 3.0)]
    assert np.allclose(cfg.initial_state, [0, 1])
    assert set(cfg.observables) == {"P_e"}


def test_preset_d_pulses():
    cfg = parse_config(preset="atom-2photon-d")
    assert [(p.omega, p.center) for p in cfg.pulses] == [(2.92, 3.0), (2.92, 5.5)]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip(name):
    cfg = parse_config(preset=name)
    back = parse_text(dump_config(cfg, ["generated"]))
    assert back.equivalent(cfg)


def test_file_overrides_preset(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("preset = atom-2photon-a\ntime.dt = 0.002\nfield.n = 1\n"
                    "pulse.1 = gaussian(2.0, 4.0)\n")
    cfg = parse_config(path)
    assert cfg.dt == 0.002 and cfg.n == 1 and cfg.pulses[0].omega == 2.0


def test_tabulated_pulse_relative_to_config(tmp_path):
    t = np.linspace(0, 10, 2001)
    v = (2.0**2 / (2 * np.pi)) ** 0.25 * np.exp(-(2.0**2) / 4 * (t - 4) ** 2)
    (tmp_path / "p.csv").write_text("t,re\n" + "".join(f"{a},{b}\n" for a, b in zip(t, v)))
    path = tmp_path / "run.cfg"
    path.write_text("preset = atom-1photon\npulse.1 = file(p.csv)\ntime.t_final = 10\n")
    pulses = parse_config(path).pulse_set()
    assert pulses.n == 1 and abs(pulses.gram()[0, 0] - 1) < 1e-12


@pytest.mark.parametrize("line,key", [
    ("system.H = (0,0) (1,0) (0,0) (0,0)", "system.H"),
    ("system.S = 2 0 0 2", "system.S"),
    ("system.initial_state = 1 1", "system.initial_state"),
    ("system.L = 1 2 3", "system.L"),
    ("time.dt = -1", "time.dt"),
    ("time.dt = 0.0007", "time.dt"),
    ("detection.mode = heterodyne", "detection.mode"),
    ("pulse.2 = gaussian(1, 3)", "pulse.2"),
    ("pulse.1 = gaussian(1.46, 0.5)", "pulse.1"),
    ("pulse.1 = lorentzian(1, 2)", "pulse.1"),
    ("observable.X = 0 1 0 0", "observable.X"),
    ("colour = blue", "colour"),
])
def test_errors_name_the_key_and_line(line, key):
    text = f"preset = atom-1photon\n{line}\n"
    with pytest.raises(ConfigError) as info:
        parse_text(text, source="run.cfg")
    assert info.value.key == key
    assert str(info.value).startswith("run.cfg:2: " + key)


def test_duplicate_and_syntax_errors():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("time.dt = 0.1\ntime.dt = 0.2\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_text("just words\n")
    with pytest.raises(ConfigError, match="unknown preset"):
        parse_config(preset="nope")
    with pytest.raises(ConfigError, match="missing"):
        parse_text("system.dim = 2\n")


def test_complex_literals():
    assert np.allclose(parse_complex_list("(1,2) 3 (-0.5,1e-3)"), [1 + 2j, 3, -0.5 + 1e-3j])
    with pytest.raises(ValueError):
        parse_complex_list("(1,2")
    with pytest.raises(ValueError):
        parse_complex_list("nan")
