import json
import re
import subprocess
import sys

import pytest

from ssctm.cli import EXIT_AMBIGUOUS, EXIT_CONFIG, EXIT_OK, EXIT_UNSTABLE, main
from ssctm.scenarios import bundled_path

GRID = "3000:4800:300,0:1500:300"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def artifacts(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestValidate:
    def test_bundled(self, capsys):
        code, out, _ = run(capsys, "validate", "--model", "two_cell_incident")
        assert code == EXIT_OK and "valid" in out

    def test_path(self, capsys):
        code, _, _ = run(capsys, "validate", "--model", str(bundled_path("baseline")))
        assert code == EXIT_OK

    def test_malformed(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        code, _, err = run(capsys, "validate", "--model", str(p))
        assert code == EXIT_CONFIG and "cannot load" in err

    def test_invalid_model(self, capsys, tmp_path):
        d = json.loads(bundled_path("two_cell_incident").read_text())
        d["lambda"] = [[-1, 2], [1, -1]]
        p = tmp_path / "m.json"
        p.write_text(json.dumps(d))
        code, out, _ = run(capsys, "validate", "--model", str(p))
        assert code == EXIT_CONFIG and "INVALID" in out

    def test_variant2_warns(self, capsys):
        code, out, _ = run(capsys, "validate", "--model", "variant2")
        assert code == EXIT_OK and "Sbarmax" in out


class TestDecide:
    def test_stable(self, capsys):
        code, out, _ = run(capsys, "decide", "--model", "two_cell_incident", "--r", "3600,600")
        assert code == EXIT_OK
        d = json.loads(out)
        assert d["verdict"] == "StableCertified" and d["certificate"]["b"] > 0

    def test_unstable(self, capsys):
        code, out, _ = run(capsys, "decide", "--model", "two_cell_incident", "--r", "4320,2400")
        assert code == EXIT_UNSTABLE
        assert json.loads(out)["certificate"] is None

    def test_ambiguous(self, capsys):
        code, _, _ = run(capsys, "decide", "--model", "baseline", "--r", "2000,2000")
        assert code == EXIT_AMBIGUOUS

    @pytest.mark.parametrize("r", ["1,2,3", "abc", "-1,0"])
    def test_bad_inflow(self, capsys, r):
        code, _, _ = run(capsys, "decide", "--model", "two_cell_incident", f"--r={r}")
        assert code == EXIT_CONFIG

    def test_missing_inflow(self, capsys):
        assert run(capsys, "decide", "--model", "two_cell_incident")[0] == EXIT_CONFIG

    def test_artifact(self, capsys, tmp_path):
        code, out, _ = run(capsys, "decide", "--model", "two_cell_incident", "--r", "3600,600",
                           "--out", str(tmp_path))
        files = list(tmp_path.iterdir())
        assert len(files) == 1
        assert re.fullmatch(r"decide-two_cell_incident-[0-9a-f]{12}\.json", files[0].name)


class TestArtifacts:
    def test_region_labels(self, capsys, tmp_path):
        code, out, _ = run(capsys, "region", "--model", "baseline", "--grid", "0:6000:600,0:3000:600",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        (csv,) = tmp_path.iterdir()
        labels = {line.split(",")[2] for line in csv.read_text().splitlines()[1:]}
        assert {"StableCertified", "Ambiguous", "UnstableCertified"} <= labels

    def test_jmax_summary(self, capsys, tmp_path):
        code, out, _ = run(capsys, "jmax", "--model", "baseline", "--grid", "0:6000:300,0:3000:300",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        m = re.search(r"([\d.]+) ≤ Jmax ≤ ([\d.]+)", out)
        lo, hi = float(m.group(1)), float(m.group(2))
        assert lo <= hi == 9000

    def test_overwrite_needs_force(self, capsys, tmp_path):
        argv = ["region", "--model", "baseline", "--grid", GRID, "--out", str(tmp_path)]
        assert run(capsys, *argv)[0] == EXIT_OK
        code, _, err = run(capsys, *argv)
        assert code == EXIT_CONFIG and "--force" in err
        assert run(capsys, *argv, "--force")[0] == EXIT_OK

    def test_hash_tracks_inputs(self, capsys, tmp_path):
        run(capsys, "region", "--model", "baseline", "--grid", GRID, "--out", str(tmp_path))
        run(capsys, "region", "--model", "baseline", "--grid", "0:600:300,0:600:300", "--out", str(tmp_path))
        assert len(list(tmp_path.iterdir())) == 2

    def test_bad_grid(self, capsys, tmp_path):
        code, _, _ = run(capsys, "region", "--model", "baseline", "--grid", "1:2", "--out", str(tmp_path))
        assert code == EXIT_CONFIG

    def test_simulate_stats(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", "--model", "two_cell_incident", "--r", "3600,600",
                           "--horizon", "5", "--reps", "3", "--out", str(tmp_path))
        assert code == EXIT_OK
        names = sorted(p.name for p in tmp_path.iterdir())
        assert len(names) == 2 and names[0].endswith("-stats.json")
        assert names[1] == names[0].replace("-stats.json", ".csv")
        stats = json.loads((tmp_path / names[0]).read_text())
        assert stats["reps"] == 3 and len(stats["per_rep_slopes"]) == 3

    def test_simulate_bad_mode(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", "--model", "two_cell_incident", "--r", "3600,600",
                         "--i0", "5", "--out", str(tmp_path))
        assert code == EXIT_CONFIG

    def test_invariant_set(self, capsys, tmp_path):
        code, out, _ = run(capsys, "invariant-set", "--model", "two_cell_incident", "--r", "4320,2400",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        d = json.loads(out.split("wrote")[0])
        assert d["box"] == {"nbot": [72.0, 77.5], "ntop": [None, 100.0]}
        assert d["directionality"]["violations"] == 0

    def test_bad_jobs_env(self, capsys, monkeypatch):
        monkeypatch.setenv("SSCTM_JOBS", "many")
        assert run(capsys, "validate", "--model", "baseline")[0] == EXIT_CONFIG


COMMANDS = [
    ["decide", "--model", "two_cell_incident", "--r", "3600,600"],
    ["region", "--model", "baseline", "--grid", GRID],
    ["jmax", "--model", "baseline", "--grid", GRID],
    ["sweep", "--model", "baseline", "--grid", "0:6000:600,0:3000:600", "--lambdas", "1,2", "--dFs", "3000"],
    ["simulate", "--model", "two_cell_incident", "--r", "4320,2400", "--horizon", "5", "--reps", "3"],
    ["invariant-set", "--model", "two_cell_incident", "--r", "3600,600"],
]


class TestDeterminism:
    @pytest.mark.parametrize("argv", COMMANDS, ids=[c[0] for c in COMMANDS])
    def test_byte_identical(self, capsys, tmp_path, argv):
        outs = []
        for tag, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
            d = tmp_path / tag
            code, _, _ = run(capsys, *argv, "--out", str(d), "--jobs", jobs)
            assert code in (EXIT_OK, EXIT_UNSTABLE, EXIT_AMBIGUOUS)
            outs.append(artifacts(d))
        assert outs[0] and outs[0] == outs[1] == outs[2]


class TestEntryPoints:
    def test_module(self):
        res = subprocess.run([sys.executable, "-m", "ssctm", "decide", "--model", "two_cell_incident",
                              "--r", "4320,2400"], capture_output=True, text=True)
        assert res.returncode == EXIT_UNSTABLE
        assert json.loads(res.stdout)["verdict"] == "UnstableCertified"

    def test_help(self):
        res = subprocess.run([sys.executable, "-m", "ssctm", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        for cmd in ("validate", "decide", "region", "jmax", "sweep", "simulate", "invariant-set"):
            assert cmd in res.stdout
