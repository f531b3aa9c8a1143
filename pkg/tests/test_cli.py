import csv
import json

import numpy as np
import pytest

from bilinsde import ConfigError, ConfigParseError, build_W_ladder, make_triad, save_model
from bilinsde.cli import main, run
from bilinsde.config import OUTPUT_ENV, parse_config, parse_model_spec


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "triad.json"
    save_model(make_triad(), path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# parse_config


def test_minimal_config_defaults(model_file):
    cfg = parse_config(f"kind: validate\nmodel: {{file: {model_file}}}\n", env={})
    assert cfg.kind == "validate"
    assert cfg["dt"] == 0.01 and cfg["seed"] == 0
    assert cfg.provenance["dt"] == "default"
    assert cfg["output_dir"] == "bilinsde_out"
    assert cfg["workers"] >= 1
    assert all(v == "default" for k, v in cfg.provenance.items())


def test_output_dir_from_env(model_file):
    cfg = parse_config(f"kind: validate\nmodel: {{file: {model_file}}}\n", env={OUTPUT_ENV: "/tmp/x"})
    assert cfg["output_dir"] == "/tmp/x"
    assert cfg.provenance["output_dir"] == f"env:{OUTPUT_ENV}"


@pytest.mark.parametrize("dt", ["0", "-0.5"])
def test_nonpositive_dt(dt):
    with pytest.raises(ConfigError) as exc:
        parse_config(f"kind: simulate\nmodel: {{builtin: triad}}\ndt: {dt}\n")
    assert exc.value.field == "dt"
    assert "dt" in str(exc.value)


def test_unknown_key_suggests():
    with pytest.raises(ConfigError) as exc:
        parse_config("kind: simulate\nmodel: {builtin: triad}\npaths_: 3\n")
    assert "paths" in str(exc.value)
    assert exc.value.field == "paths_"


def test_parse_error_location():
    with pytest.raises(ConfigParseError) as exc:
        parse_config("kind: validate\nmodel: [1, 2\n")
    assert exc.value.line is not None and exc.value.column is not None
    assert exc.value.error_class == "config.parse"


def test_missing_model_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(f"kind: validate\nmodel: {{file: {tmp_path / 'nope.json'}}}\n")
    assert exc.value.field == "model.file"


def test_bad_kind_and_ranges():
    with pytest.raises(ConfigError) as exc:
        parse_config("kind: simulat\nmodel: {builtin: triad}\n")
    assert exc.value.field == "kind"
    with pytest.raises(ConfigError) as exc:
        parse_config("kind: simulate\nmodel: {builtin: triad}\nT: 1.0\ndt: 0.3\n")
    assert exc.value.field == "dt"
    with pytest.raises(ConfigError) as exc:
        parse_config("kind: simulate\nmodel: {builtin: triad}\nu0: [1, 2]\n")
    assert exc.value.field == "u0"


def test_inline_model():
    from bilinsde.model import model_to_dict
    import yaml

    doc = {"kind": "validate", "model": {"inline": model_to_dict(make_triad())}}
    cfg = parse_config(yaml.safe_dump(doc))
    assert cfg.model.dim == 3


def test_model_spec_strings(model_file):
    assert parse_model_spec(str(model_file)) == {"file": str(model_file)}
    spec = parse_model_spec("nse2d:K=2;forced_modes=[[1,0],[1,1]]")
    assert spec == {"builtin": "nse2d", "params": {"K": 2, "forced_modes": [[1, 0], [1, 1]]}}
    with pytest.raises(ConfigError):
        parse_model_spec("quartic")


# ---------------------------------------------------------------------------
# run


def test_validate_run(tmp_path):
    cfg = parse_config(f"kind: validate\nmodel: {{builtin: triad}}\noutput_dir: {tmp_path}\n")
    res = run(cfg)
    assert res.exit_code == 0
    rows = read_csv(tmp_path / "validate.csv")
    assert rows[0][-1] == "ok" and rows[1][-1] == "true"
    man = json.loads((tmp_path / "validate.csv.manifest.json").read_text())
    assert man["seed"] == 0 and "numpy" in man["versions"] and man["wall_time_s"] >= 0
    assert man["inputs"]["kind"] == "validate"


def test_hormander_nonspanning_empty_column(tmp_path):
    cfg = parse_config(
        f"kind: hormander\nmodel: {{builtin: triad, params: {{forced_axes: [1]}}}}\noutput_dir: {tmp_path}\n"
    )
    assert run(cfg).exit_code == 0
    rows = read_csv(tmp_path / "hormander.csv")
    assert rows[0] == ["level", "new_vectors", "span_dim", "spanning_level"]
    ladder = build_W_ladder(make_triad(forced_axes=(1,)), 10)
    assert [int(r[2]) for r in rows[1:]] == ladder.span_dim
    assert all(r[3] == "" for r in rows[1:])


def test_simulate_blowup_exit(tmp_path, capsys):
    code = main(["simulate", "--model", "triad:nu=0.01", "--u0", "1000,1000,1000", "--T", "2", "--dt", "0.5",
                 "--scheme", "explicit_em", "--out", str(tmp_path)])
    assert code == 3
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error_class"] == "integration.blowup"
    man = json.loads((tmp_path / "simulate.manifest.json").read_text())
    assert man["error"]["error_class"] == "integration.blowup"


def test_config_error_exit(capsys):
    assert main(["simulate", "--model", "triad", "--dt", "-1"]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "dt"


def test_singular_control_exit_code():
    from bilinsde.cli import _error_record
    from bilinsde import SingularityError

    code, rec = _error_record(SingularityError("x", 0.0, 1.0))
    assert code == 3 and rec["error_class"] == "malliavin.singular"
    code, rec = _error_record(RuntimeError("boom"))
    assert code == 4 and rec["error_class"] == "internal"


def test_simulate_csv_layout(tmp_path):
    out = tmp_path / "paths.csv"
    assert main(["simulate", "--model", "triad", "--T", "0.1", "--dt", "0.01", "--paths", "3",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["path", "time", "U_1", "U_2", "U_3"]
    assert len(rows) == 1 + 3 * 11
    assert (tmp_path / "paths.csv.manifest.json").exists()


def test_u0_from_csv_file(tmp_path):
    f = tmp_path / "u0.csv"
    f.write_text("U_1,U_2,U_3\n1.0,2.0,3.0\n")
    assert main(["simulate", "--model", "triad", "--u0", str(f), "--T", "0.01", "--dt", "0.01",
                 "--out", str(tmp_path / "s.csv")]) == 0
    rows = read_csv(tmp_path / "s.csv")
    assert [float(x) for x in rows[1][2:]] == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("argv, files", [
    (["malliavin", "--paths", "8", "--eps-grid", "1e-6,1e-2"], ["malliavin.csv", "malliavin_tail.csv"]),
    (["ergodic", "--T", "5", "--observables", "energy,coord0"], ["ergodic.csv", "ergodic_running.csv"]),
    (["probe", "moments", "--paths", "50", "--K-grid", "2,4"], ["probe_moments.csv"]),
    (["probe", "gradient", "--paths", "20", "--observables", "energy"], ["probe_gradient.csv"]),
    (["probe", "mixing", "--paths", "20", "--T", "1"], ["probe_mixing.csv"]),
    (["probe", "irreducibility", "--paths", "10", "--n-init", "3"], ["probe_irreducibility.csv"]),
])
def test_every_csv_has_header_and_sidecar(tmp_path, argv, files):
    assert main(argv[:1] + (argv[1:2] if argv[0] == "probe" else []) + ["--model", "triad", "--out", str(tmp_path)]
                + argv[(2 if argv[0] == "probe" else 1):]) == 0
    for name in files:
        rows = read_csv(tmp_path / name)
        assert len(rows) >= 2 and not rows[0][0].replace(".", "").isdigit()
        assert (tmp_path / f"{name}.manifest.json").exists()


def test_byte_identical_across_workers(tmp_path):
    text = "kind: {kind}\nmodel: {{builtin: triad}}\nT: 1.0\npaths: 600\nseed: 5\nworkers: {w}\noutput_dir: {out}\n"
    for kind in ("simulate", "malliavin", "probe.moments"):
        outs = []
        for k, w in enumerate((1, 1, 4)):
            out = tmp_path / f"{kind}_{k}"
            run(parse_config(text.format(kind=kind, w=w, out=out)))
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        assert outs[0] == outs[1] == outs[2]


def test_run_subcommand_with_override(tmp_path):
    cfgfile = tmp_path / "c.yaml"
    cfgfile.write_text("kind: hormander\nmodel: {builtin: nse2d, params: {K: 1}}\n")
    assert main(["run", str(cfgfile), "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
    man = json.loads((tmp_path / "o" / "hormander.csv.manifest.json").read_text())
    assert man["provenance"]["workers"] == "cli"
    assert man["summary"]["dim"] == 8


def test_gradient_xi_normalized(tmp_path):
    assert main(["probe", "gradient", "--model", "triad", "--paths", "10", "--xi", "3,4,0",
                 "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "probe_gradient.csv.manifest.json").read_text())
    np.testing.assert_allclose(man["summary"]["xi"], [0.6, 0.8, 0.0])
