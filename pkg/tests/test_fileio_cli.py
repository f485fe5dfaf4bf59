from pathlib import Path

import numpy as np
import pytest

from rdfamily import AnisotropyMap, Grid, MechanismTerm, ModelDefinition, TaxisTerm, preset
from rdfamily.cli import main
from rdfamily.fileio import (
    ModelFileError,
    dump_model,
    parse_model,
    read_norms,
    read_snapshot,
    snapshot_name,
    write_snapshot,
)
from rdfamily.grid_ops import Region

M5_LINEAR = """\
# Model 3 with killing that does not need the virus
[model]
name = m5linear
components = q1, q2

[parameters]
a5 = 0.5

[term]
kind = M1_Allee
target = q1
a1 = 1.0
C1 = 1.0
eps = 0.05
kappa = 0.01

[term]
kind = M5_Linear
target = q1
bind.killer = q2
a5 = $a5

[term]
kind = M2_Global
target = q2
bind.virus = q1
a2 = 2.0

[term]
kind = M6_VirusDependent
target = q2
bind.virus = q1
a6 = 0.2
C1 = 1.0

[taxis]
kind = Diffusion
target = q1
d = 0.6
"""


class TestModelFile:
    @pytest.mark.parametrize("model_id", [1, 2, 3])
    @pytest.mark.parametrize("course", ["healing", "chronic"])
    def test_preset_round_trip(self, model_id, course):
        model = preset(model_id, course)
        assert parse_model(dump_model(model)) == model

    def test_custom_round_trip(self):
        model = ModelDefinition(
            "custom",
            ("v", "c"),
            [MechanismTerm("M1_Logistic", "v", {}, {"a1": 0.1 + 0.2, "C1": "cap"}),
             MechanismTerm("M3_VirusOnly", "c", {"virus": "v"}, {"a3": 1e-7}),
             MechanismTerm("ND_Constant", "c", {}, {"a_nd": 0.25})],
            [TaxisTerm("AnisoDiffusion", "v", 0.3, anisotropy=AnisotropyMap(2.0, 0.5, 1.0)),
             TaxisTerm("LinearChemotaxis", "v", "dc", attractant="c")],
            theta=Region(0.1, 0.3, 0.5, 0.9),
            parameters={"cap": 2.0, "dc": 0.5},
            initial={"v": 0.5, "c": 0.0},
        )
        assert parse_model(dump_model(model)) == model

    def test_parse_m5_linear(self):
        model = parse_model(M5_LINEAR)
        assert [t.kind for t in model.reaction_terms][1] == "M5_Linear"
        assert model.reaction_terms[1].params == {"a5": "a5"}

    @pytest.mark.parametrize("text, line, key", [
        ("[model]\nname = x\ncomponents = q1\n[bogus]\n", 4, None),
        ("[model]\nname = x\ncomponents = q1\n[parameters]\na1 = fast\n", 5, "a1"),
        ("[model]\nname = x\ncomponents = q1\n[term]\ntarget = q1\n", 4, "kind"),
        ("[model]\nname = x\ncomponents = q1\n[term]\nkind = M1_Logistic\ntarget = q1\nC9 = 1\n", 7, "C9"),
        ("name = x\n", 1, None),
        ("[model]\nname = x\nname = y\n", 3, "name"),
        ("[model]\nname = x\ncomponents = q1\ntheta = 0, 1, 0\n", 4, "theta"),
    ])
    def test_errors_cite_line_and_key(self, text, line, key):
        with pytest.raises(ModelFileError) as exc:
            parse_model(text, source="m.model")
        assert exc.value.line == line
        assert exc.value.key == key
        assert f"m.model:{line}" in str(exc.value)

    def test_structural_errors(self):
        text = M5_LINEAR.replace("bind.killer = q2", "bind.killer = q7")
        with pytest.raises(ModelFileError, match="q7"):
            parse_model(text)


class TestSnapshots:
    def test_round_trip_and_header(self, tmp_path):
        g = Grid(4, 3)
        values = np.arange(12.0).reshape(3, 4) / 7
        path = tmp_path / snapshot_name("q1", 16.0)
        write_snapshot(path, 16.0, "q1", values, g)
        assert path.name == "snapshot_q1_t16.txt"
        lines = path.read_text().splitlines()
        assert lines[0] == "# t=16 component=q1 nx=4 ny=3"
        assert len(lines) == 4 and all(len(l.split()) == 4 for l in lines[1:])
        t, comp, back = read_snapshot(path)
        assert (t, comp) == (16.0, "q1")
        assert np.allclose(back, values, rtol=1e-12)


def run_cli(*args):
    return main([str(a) for a in args])


class TestCli:
    def test_check_preset_1(self, capsys):
        assert run_cli("check", "--model", 1) == 0
        assert "# pass=19 fail=0" in capsys.readouterr().out

    def test_check_preset_3(self):
        assert run_cli("check", "--model", 3) == 0

    def test_check_custom_model_fails(self, tmp_path, capsys):
        path = tmp_path / "custom_m5linear.model"
        path.write_text(M5_LINEAR)
        assert run_cli("check", path, "--out", tmp_path) == 1
        report = (tmp_path / "requirements.txt").read_text()
        line = next(l for l in report.splitlines() if l.startswith("R.1.4"))
        assert "fail" in line and "witness: q1=0 q2=1" in line
        assert "fail=1" in capsys.readouterr().out

    def test_export(self, tmp_path):
        out = tmp_path / "m2.model"
        assert run_cli("export", "--model", 2, "--course", "chronic", "--out", out) == 0
        assert run_cli("check", "--file", out) == 0

    def test_snapshot_files(self, tmp_path):
        code = run_cli("run", "--model", 1, "--course", "healing", "--t-end", 40,
                       "--snapshots", "0,16,40", "--out", tmp_path)
        assert code == 0
        snaps = sorted(p.name for p in tmp_path.glob("snapshot_*.txt"))
        assert len(snaps) == 12
        assert "snapshot_Tc_t16.txt" in snaps
        for name in ("norms.csv", "requirements.txt", "classification.txt"):
            assert (tmp_path / name).exists()
        assert not (tmp_path / "sigma.txt").exists()

    def test_norms_csv_well_formed(self, tmp_path):
        assert run_cli("run", "--model", 3, "--course", "chronic", "--t-end", 5, "--sigma", "--out", tmp_path) == 0
        header, data = read_norms(tmp_path / "norms.csv")
        assert header == ["t", "q1_L1", "q1_Linf", "q2_L1", "q2_Linf"]
        assert data.shape[1] == len(header)
        assert np.all(np.diff(data[:, 0]) > 0) and data[-1, 0] == 5.0
        assert np.all(np.isfinite(data))
        assert "applicable=true" in (tmp_path / "sigma.txt").read_text()

    def test_no_killing_keeps_virus(self, tmp_path):
        assert run_cli("run", "--model", 2, "--course", "healing", "--set", "a5=0.0",
                       "--t-end", 10, "--out", tmp_path) == 0
        text = (tmp_path / "classification.txt").read_text()
        assert "label=Healing" not in text
        _, data = read_norms(tmp_path / "norms.csv")
        assert data[:, 2].min() >= 0.9

    @pytest.mark.parametrize("args", [
        ("run", "--model", 2, "--set", "nope=1"),
        ("run", "--model", 2, "--set", "a5"),
        ("run", "--model", 2, "--t-end", 5, "--snapshots", "7"),
        ("run", "--model", 2, "--grid-n", 2),
        ("run", "--model", 2, "--file", "x.model"),
        ("run",),
        ("check", "missing_file.model"),
        ("run", "--model", 1, "--set", "eps=3"),
    ])
    def test_config_errors(self, tmp_path, args):
        assert run_cli(*args, "--out", tmp_path) == 2 if args[0] == "run" else run_cli(*args) == 2

    def test_solver_failure_keeps_partial_output(self, tmp_path):
        path = tmp_path / "blowup.model"
        path.write_text(
            "[model]\nname = blowup\ncomponents = q1\n"
            "[term]\nkind = M1_Unbounded\ntarget = q1\na1 = 1000\n"
        )
        code = run_cli("run", "--file", path, "--t-end", 5, "--out", tmp_path / "out")
        assert code == 3
        assert (tmp_path / "out" / "norms.csv").exists()
        assert not (tmp_path / "out" / "classification.txt").exists()
