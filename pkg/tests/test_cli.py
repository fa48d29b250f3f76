"""Command-line driver."""

import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bayesuq import config
from bayesuq.cli import cli_main
from bayesuq.dram import Chain
from bayesuq.postproc import read_chain, write_chain

SHIPPED_INP = Path(__file__).resolve().parents[1] / "src" / "bayesuq" / "data" / "ball_drop.inp"


def md5(path):
    return hashlib.md5(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def chain_file(tmp_path, rng):
    return write_chain(Chain(rng.standard_normal((2000, 2)), -rng.exponential(size=2000)),
                       tmp_path / "chain.csv")


def test_no_args_usage_exit_1():
    proc = subprocess.run([sys.executable, "-m", "bayesuq.cli"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage:" in proc.stderr
    assert proc.stdout == ""


def test_dump_defaults_parses_back(capsys):
    assert cli_main(["--dump-defaults"]) == 0
    out = capsys.readouterr().out
    opts = config.parse_input_file(out)
    assert opts["mh_rawChainSize"] == "100"
    assert opts["ml_minEffectiveSizeRatio"] == "0.85"
    assert opts["infmcmc_rwmh_step"] == "0.01"
    assert config.resolve({k: v for k, v in opts.items() if k.startswith("mh_")}, "mh_") \
        == config.MhOptions()


def test_dump_defaults_with_subcommand_is_usage_error(capsys):
    assert cli_main(["--dump-defaults", "post", "x.csv", "--moments"]) == 1


class TestRun:
    def test_shipped_input(self, tmp_path, capsys):
        qoi = tmp_path / "qoi.csv"
        assert cli_main(["run", str(SHIPPED_INP), "--out-dir", str(tmp_path),
                         "--qoi-out", str(qoi)]) == 0
        size = config.resolve(config.read_input_file(SHIPPED_INP), "ip_mh_").raw_chain_size
        raw = read_chain(tmp_path / "outputData" / "rawChain.csv")
        assert len(raw) == size
        filt = read_chain(tmp_path / "outputData" / "filteredChain.csv")
        assert len(filt) == size // 20
        q = np.loadtxt(qoi, skiprows=1)
        assert q.size == size
        out = capsys.readouterr().out
        assert "posterior median" in out

    def test_multilevel(self, tmp_path, capsys):
        inp = tmp_path / "ml.inp"
        inp.write_text("env_seed = 4\nip_ml_rawChainSize = 200\n"
                       "ip_ml_rawChainDataOutputFileName = ml/particles\n"
                       "ip_ml_rawChainDataOutputFileType = txt\n")
        assert cli_main(["run", str(inp), "--method", "ml", "--out-dir", str(tmp_path)]) == 0
        assert len(read_chain(tmp_path / "ml" / "particles.csv")) == 200
        assert (tmp_path / "ml" / "particles_level1.csv").exists()
        assert "ln evidence" in capsys.readouterr().out

    def test_compute_solution_off(self, tmp_path, capsys):
        inp = tmp_path / "off.inp"
        inp.write_text("ip_computeSolution = 0\n")
        assert cli_main(["run", str(inp), "--out-dir", str(tmp_path)]) == 0
        assert "nothing to do" in capsys.readouterr().out

    def test_subenvironments(self, tmp_path):
        inp = tmp_path / "sub.inp"
        inp.write_text("env_numSubEnvironments = 4\nip_mh_rawChainSize = 50\n"
                       "ip_mh_rawChainDataOutputFileName = raw\n"
                       "ip_mh_rawChainDataOutputFileType = txt\n")
        assert cli_main(["run", str(inp), "--workers", "8", "--out-dir", str(tmp_path)]) == 0
        assert len(read_chain(tmp_path / "raw.csv")) == 200

    @pytest.mark.parametrize("text", [
        "env_numSubEnvironments = 3\n",
        "ip_mh_rawChainSzie = 10\n",
        "ip_mh_rawChainSize = abc\n",
        "foo_bar = 1\n",
        "env_seed 3\n",
    ])
    def test_bad_input_is_runtime_error(self, tmp_path, capsys, text):
        inp = tmp_path / "bad.inp"
        inp.write_text(text)
        assert cli_main(["run", str(inp), "--workers", "8", "--out-dir", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_input(self, tmp_path):
        assert cli_main(["run", str(tmp_path / "nope.inp")]) == 2

    def test_unknown_method_is_usage_error(self, capsys):
        assert cli_main(["run", str(SHIPPED_INP), "--method", "gibbs"]) == 1
        assert "invalid choice" in capsys.readouterr().err


class TestPost:
    def test_histogram_rows(self, chain_file):
        before = md5(chain_file)
        assert cli_main(["post", "--histogram", "50", str(chain_file)]) == 0
        out = chain_file.with_name("chain.hist.csv")
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert rows.shape == (50, 3)
        assert rows[:, 2].sum() == 2000
        assert chain_file.with_name("chain.hist.gp").exists()
        assert md5(chain_file) == before

    def test_all_outputs(self, chain_file, tmp_path, capsys):
        other = write_chain(read_chain(chain_file), tmp_path / "other.m", name="c")
        sums = [md5(chain_file), md5(other)]
        out_dir = tmp_path / "figs"
        rc = cli_main(["post", str(chain_file), str(other), "--moments", "--histogram", "10",
                       "--range=-4,4", "--kde", "64,0.3", "--acf", "20", "--psrf",
                       "--component", "1", "--filter", "0.1,2", "--out-dir", str(out_dir)])
        assert rc == 0
        for stem in ("chain", "other"):
            for tag in ("hist.csv", "hist.gp", "kde.csv", "kde.gp", "acf.csv", "acf.gp"):
                assert (out_dir / f"{stem}.{tag}").exists()
        assert np.loadtxt(out_dir / "chain.kde.csv", delimiter=",", skiprows=1).shape == (64, 2)
        assert np.loadtxt(out_dir / "chain.acf.csv", delimiter=",", skiprows=1).shape == (21, 2)
        out = capsys.readouterr().out
        assert "n=900" in out and "R-hat:" in out
        assert [md5(chain_file), md5(other)] == sums

    def test_never_overwrites_inputs(self, tmp_path, rng):
        c = write_chain(Chain(rng.standard_normal(100), np.zeros(100)), tmp_path / "x.csv")
        trap = tmp_path / "x.hist.csv"
        write_chain(Chain(rng.standard_normal(100), np.zeros(100)), trap)
        before = md5(trap)
        assert cli_main(["post", "--histogram", "5", str(c), str(trap)]) == 2
        assert md5(trap) == before

    @pytest.mark.parametrize("args", [
        ["post", "CHAIN"],
        ["post", "CHAIN", "--range", "0,1", "--moments"],
        ["post", "CHAIN", "--psrf"],
        ["post", "CHAIN", "--histogram", "0"],
        ["post", "CHAIN", "--kde", "abc"],
        ["post", "CHAIN", "--moments", "--component", "5"],
        ["post", "CHAIN", "--histogram", "x"],
        ["post"],
        ["frobnicate"],
    ])
    def test_usage_errors(self, chain_file, capsys, args):
        args = [str(chain_file) if a == "CHAIN" else a for a in args]
        assert cli_main(args) == 1
        assert capsys.readouterr().err

    def test_malformed_chain_is_runtime_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("idx,theta_0,ln_target\n0,1,oops\n")
        assert cli_main(["post", "--moments", str(bad)]) == 2
        assert "row 1" in capsys.readouterr().err

    def test_constant_chain_acf_is_runtime_error(self, tmp_path):
        c = write_chain(Chain(np.ones(50), np.zeros(50)), tmp_path / "c.csv")
        assert cli_main(["post", "--acf", "5", str(c)]) == 2
