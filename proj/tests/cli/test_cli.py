"""End-to-end checks of the hdboot command-line tool."""

import json
import os
import random
import subprocess
import sys
import tempfile
import unittest

BIN = None


def run(*args, check_rc=0):
    proc = subprocess.run([BIN, *args], capture_output=True, text=True)
    if check_rc is not None and proc.returncode != check_rc:
        raise AssertionError(
            f"{args}: exit {proc.returncode}, expected {check_rc}\n{proc.stdout}\n{proc.stderr}")
    return proc


def fields(text):
    out = {}
    for line in text.strip().splitlines()[1:]:
        key, value = line.split(",", 1)
        out[key] = value
    return out


def write_gaussian(path, n, p, seed):
    rng = random.Random(seed)
    with open(path, "w") as fh:
        for _ in range(n):
            row = [rng.gauss(0.0, 1.0) for _ in range(p + 1)]
            fh.write(",".join(repr(x) for x in row) + "\n")


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = cls.tmp.name
        cls.small = os.path.join(cls.dir, "small.csv")
        write_gaussian(cls.small, 80, 10, 1)
        cls.toy = os.path.join(cls.dir, "toy.csv")
        write_gaussian(cls.toy, 500, 250, 2)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_usage_errors(self):
        run(check_rc=1)
        run("fit", "--data", self.small, "--bogus", "1", check_rc=1)
        run("fit", check_rc=1)
        run("frobnicate", check_rc=1)
        run("--output", "xml", "calibrate-weights", "--kappa", "0.2", check_rc=1)
        run("fit", "--data", os.path.join(self.dir, "missing.csv"), check_rc=1)
        run("boot", "--data", self.small, "--scheme", "wild", check_rc=1)
        run("fit", "--data", self.small, "--loss", "l2", "--k", "2", check_rc=1)
        self.assertEqual(run("--help").returncode, 0)
        self.assertIn("response in the last column", run("fit", "--help").stdout)

    def test_numeric_failure_exit_code(self):
        path = os.path.join(self.dir, "collinear.csv")
        rng = random.Random(5)
        with open(path, "w") as fh:
            for _ in range(30):
                x = rng.gauss(0.0, 1.0)
                fh.write(f"{x!r},{2 * x!r},{rng.gauss(0.0, 1.0)!r}\n")
        run("fit", "--data", path, check_rc=2)

    def test_theory_commands(self):
        out = fields(run("theory-bootvar", "--weights", "const1", "--kappa", "0.3").stdout)
        self.assertEqual(float(out["overestimation_factor"]), 0.0)
        out = fields(run("calibrate-weights", "--kappa", "0.2").stdout)
        self.assertAlmostEqual(float(out["alpha"]), 0.9688, delta=0.005)
        js = json.loads(run("--output", "json", "theory-risk", "--loss", "l2", "--kappa", "0.3",
                            "--mc-size", "200000").stdout)
        self.assertAlmostEqual(js["r_squared"], 3.0 / 7.0, delta=3e-3)

    def test_jackknife_correction_halves_at_half(self):
        out = fields(run("jack", "--data", self.toy, "--loss", "l2", "--correct", "ls").stdout)
        self.assertAlmostEqual(float(out["corrected_ls"]) / float(out["var_jack"]), 0.5, places=12)

    def test_fit_and_boot_outputs(self):
        out = fields(run("fit", "--data", self.small, "--loss", "huber", "--k", "1.345").stdout)
        self.assertEqual(out["loss"], "huber:1.345")
        self.assertEqual(out["converged"], "true")
        self.assertIn("beta_hat[9]", out)
        js = json.loads(run("--output", "json", "boot", "--data", self.small, "--scheme", "pairs",
                            "--B", "100", "--replicates").stdout)
        self.assertEqual(len(js["replicates"]), 100)
        self.assertLessEqual(js["ci_lo"], js["ci_hi"])

    def test_byte_identical_replay(self):
        args = ["boot", "--data", self.small, "--scheme", "weighted", "--weights", "poisson_mix:0.9",
                "--loss", "huber", "--B", "60", "--replicates"]
        a = run("--seed", "11", *args).stdout
        b = run("--seed", "11", "--threads", "3", *args).stdout
        c = run("--seed", "12", *args).stdout
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_simulate_report_and_round_trip(self):
        cfg = os.path.join(self.dir, "exp.yaml")
        with open(cfg, "w") as fh:
            fh.write("schema: 1\nexperiment: sweep\nn: 50\nkappa_grid: [0.1, 0.3]\n"
                     "n_sims: 5\nB: 40\nmaster_seed: 3\ndump_datasets: true\n"
                     "schemes:\n  - pairs\n  - residual_hat\n  - scheme: jackknife\n    correction: ls\n")
        out1 = os.path.join(self.dir, "sim1")
        out2 = os.path.join(self.dir, "sim2")
        a = run("simulate", "--config", cfg, "--output-dir", out1).stdout
        b = run("--threads", "2", "simulate", "--config", cfg, "--output-dir", out2).stdout
        self.assertEqual(a, b)
        for name in ("report.csv", "sims.jsonl"):
            with open(os.path.join(out1, name), "rb") as f1, open(os.path.join(out2, name), "rb") as f2:
                self.assertEqual(f1.read(), f2.read(), name)
        self.assertTrue(a.startswith("kappa,scheme,loss,metric,value,se,n_sims\n"))

        with open(os.path.join(out1, "sims.jsonl")) as fh:
            records = [json.loads(line) for line in fh]
        rec = next(r for r in records if r["p"] == 15 and r["sim"] == 2)
        out = fields(run("fit", "--data", os.path.join(out1, "datasets", "p15_sim2.csv")).stdout)
        for j, stored in enumerate(rec["beta_hat"]):
            self.assertLessEqual(abs(float(out[f"beta_hat[{j}]"]) - stored), 1e-12)

        plots = os.path.join(self.dir, "plots")
        js = json.loads(run("--output", "json", "report", "--input", os.path.join(out1, "report.csv"),
                            "--output-dir", plots).stdout)
        self.assertIn("plot_miscoverage.svg", js["plots"])
        with open(os.path.join(plots, "plot_miscoverage.svg")) as fh:
            self.assertTrue(fh.read().startswith("<svg"))


if __name__ == "__main__":
    BIN = sys.argv.pop(1)
    unittest.main()
