import contextlib
import io
import os
import struct
import tempfile
import unittest

import numpy as np

from tbn.cli import main, read_layer_meta
from tbn.packed_format import (
    LayerMeta,
    TbnLayer,
    TbnModel,
    load_model_file,
    save_model_file,
)
from tbn.quantizer import TwoBitFilter, quantize_filters
from tbn.tensor import Tensor, write_tbnf_file


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = main(list(argv))
    return code, out.getvalue()


def fields(line: str) -> dict:
    return dict(part.split("=", 1) for part in line.split())


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def write_text(self, name: str, text: str) -> str:
        with open(self.path(name), "w") as f:
            f.write(text)
        return self.path(name)


class TestQuantize(CliTestCase):
    def test_single_filter_report(self):
        meta = self.write_text("net.meta", "# in out fh fw stride pad\n1 1 1 2 1 0\n")
        write_tbnf_file(self.path("w.tbnf"), [Tensor((1, 1, 1, 2), [0.5, 1.5])])
        code, out = run(
            "quantize",
            "--input", self.path("w.tbnf"),
            "--layer-meta", meta,
            "--output", self.path("m.tbn"),
            "--report", self.path("report.txt"),
        )
        self.assertEqual(code, 0)
        self.assertEqual(fields(out.strip()), {"layers": "1", "filters": "1", "bytes": "38"})
        with open(self.path("report.txt")) as f:
            report = fields(f.read().strip())
        self.assertAlmostEqual(float(report["alpha"]), 0.7, places=6)
        self.assertAlmostEqual(float(report["J"]), 0.05, places=6)
        self.assertEqual((report["b1"], report["b2"], report["clamped"]), ("1", "1", "0"))

        model = load_model_file(self.path("m.tbn"))
        self.assertEqual(model.layers[0].code_stack().reshape(-1).tolist(), [1, 2])

    def test_bias_record(self):
        meta = self.write_text("net.meta", "1 2 1 1 1 0 1\n")
        write_tbnf_file(
            self.path("w.tbnf"), [Tensor((2,), [0.5, -1.5]), Tensor((2,), [0.25, -0.25])]
        )
        code, _ = run(
            "quantize", "--input", self.path("w.tbnf"), "--layer-meta", meta,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 0)
        layer = load_model_file(self.path("m.tbn")).layers[0]
        self.assertEqual(layer.bias.tolist(), [0.25, -0.25])

    def test_empty_model(self):
        meta = self.write_text("net.meta", "")
        write_tbnf_file(self.path("w.tbnf"), [])
        code, _ = run(
            "quantize", "--input", self.path("w.tbnf"), "--layer-meta", meta,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 0)
        self.assertEqual(os.path.getsize(self.path("m.tbn")), 8)

    def test_all_zero_filter_is_flagged(self):
        meta = self.write_text("net.meta", "1 1 1 4 1 0\n")
        write_tbnf_file(self.path("w.tbnf"), [Tensor((4,), [0, 0, 0, 0])])
        code, _ = run(
            "quantize", "--input", self.path("w.tbnf"), "--layer-meta", meta,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 3)
        self.assertTrue(os.path.exists(self.path("m.tbn")))

    def test_truncated_input(self):
        meta = self.write_text("net.meta", "1 1 1 2 1 0\n")
        write_tbnf_file(self.path("w.tbnf"), [Tensor((2,), [0.5, 1.5])])
        with open(self.path("w.tbnf"), "rb") as f:
            data = f.read()
        with open(self.path("w.tbnf"), "wb") as f:
            f.write(data[:-3])
        code, _ = run(
            "quantize", "--input", self.path("w.tbnf"), "--layer-meta", meta,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.path("m.tbn")))

    def test_weight_count_mismatch(self):
        meta = self.write_text("net.meta", "1 1 3 3 1 1\n")
        write_tbnf_file(self.path("w.tbnf"), [Tensor((2,), [0.5, 1.5])])
        code, _ = run(
            "quantize", "--input", self.path("w.tbnf"), "--layer-meta", meta,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 2)

    def test_layer_meta_parsing(self):
        meta = self.write_text("net.meta", "3 8 3 3 1 1  # first\n\n8 4 2 2 2 0 1\n")
        layers = read_layer_meta(meta)
        self.assertEqual(layers[0], (LayerMeta(3, 8, 3, 3, 1, 1), False))
        self.assertEqual(layers[1], (LayerMeta(8, 4, 2, 2, 2, 0), True))
        bad = self.write_text("bad.meta", "3 8 3\n")
        code, _ = run(
            "quantize", "--input", self.path("none.tbnf"), "--layer-meta", bad,
            "--output", self.path("m.tbn"),
        )
        self.assertEqual(code, 2)


class TestInfer(CliTestCase):
    def save_identity(self) -> str:
        layer = TbnLayer.from_filters(
            LayerMeta(1, 1, 1, 1), [TwoBitFilter((1, 1, 1), np.array([1]), 1.0)]
        )
        save_model_file(TbnModel((layer,)), self.path("id.tbn"))
        return self.path("id.tbn")

    def test_identity(self):
        model = self.save_identity()
        write_tbnf_file(self.path("x.tbnf"), [Tensor((1, 2, 2), [1, 2, 3, 4])])
        code, out = run("infer", "--model", model, "--input", self.path("x.tbnf"))
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "item=0 argmax=3 scores=1,2,3,4")

    def test_oracle_on_random_model(self):
        rng = np.random.default_rng(0)
        layers = []
        for meta in (LayerMeta(3, 4, 3, 3, 1, 1), LayerMeta(4, 5, 8, 8, 1, 0)):
            w = rng.uniform(-2, 2, (meta.out_channels,) + meta.filter_shape)
            codes, alphas, _ = quantize_filters(w)
            filters = [
                TwoBitFilter(meta.filter_shape, c.reshape(-1), a) for c, a in zip(codes, alphas)
            ]
            bias = rng.standard_normal(meta.out_channels)
            layers.append(TbnLayer.from_filters(meta, filters, bias))
        save_model_file(TbnModel(tuple(layers)), self.path("m.tbn"))
        write_tbnf_file(
            self.path("x.tbnf"), [Tensor.from_array(rng.standard_normal((2, 3, 8, 8)))]
        )
        code, out = run(
            "infer", "--model", self.path("m.tbn"), "--input", self.path("x.tbnf"), "--oracle"
        )
        self.assertEqual(code, 0)
        lines = out.strip().splitlines()
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith("item=1 "))
        self.assertLessEqual(float(fields(lines[-1])["max_rel_dev"]), 1e-4)

    def test_bad_magic(self):
        with open(self.path("m.tbn"), "wb") as f:
            f.write(b"XXXX" + struct.pack("<I", 0))
        write_tbnf_file(self.path("x.tbnf"), [Tensor((1, 1, 1), [1])])
        code, _ = run("infer", "--model", self.path("m.tbn"), "--input", self.path("x.tbnf"))
        self.assertEqual(code, 2)

    def test_shape_mismatch(self):
        model = self.save_identity()
        write_tbnf_file(self.path("x.tbnf"), [Tensor((2, 2, 2), np.zeros(8))])
        code, _ = run("infer", "--model", model, "--input", self.path("x.tbnf"))
        self.assertEqual(code, 2)

    def test_missing_file(self):
        code, _ = run("infer", "--model", self.path("none.tbn"), "--input", self.path("x.tbnf"))
        self.assertEqual(code, 2)


class TestMemsize(CliTestCase):
    def test_alexnet(self):
        code, out = run("memsize", "--preset", "alexnet")
        self.assertEqual(code, 0)
        self.assertEqual(
            out.splitlines(),
            [
                "params=61000000",
                "two_bit_bytes=15250000",
                "double_bytes=488000000",
                "ratio=32.000000",
            ],
        )

    def test_zero_params(self):
        code, out = run("memsize", "--params", "0")
        self.assertEqual(code, 0)
        self.assertIn("two_bit_bytes=0", out)
        self.assertIn("ratio=0.000000", out)

    def test_overhead(self):
        code, out = run("memsize", "--params", "4", "--alpha-overhead", "4")
        self.assertEqual(code, 0)
        self.assertIn("two_bit_bytes=5", out)
        self.assertIn("double_bytes=32", out)

    def test_usage_errors(self):
        self.assertEqual(run("memsize", "--preset", "lenet")[0], 1)
        self.assertEqual(run("memsize", "--params", "-5")[0], 1)
        self.assertEqual(run("memsize")[0], 1)
        self.assertEqual(run("memsize", "--params", "4", "--preset", "alexnet")[0], 1)


class TestBench(CliTestCase):
    def test_small_instance(self):
        code, out = run(
            "bench", "--shape", "2,6,6", "--filter", "3,3", "--filters", "2", "--iters", "1"
        )
        self.assertEqual(code, 0)
        result = dict(line.split("=", 1) for line in out.splitlines())
        self.assertEqual(result["output_elements"], "32")
        self.assertEqual(result["mfree_multiplies"], "32")
        self.assertLessEqual(float(result["max_rel_dev"]), 1e-4)

    def test_usage_errors(self):
        base = ["bench", "--filter", "3,3", "--filters", "2"]
        self.assertEqual(run(*base, "--shape", "2,6,6", "--iters", "0")[0], 1)
        self.assertEqual(run(*base, "--shape", "2,6", "--iters", "1")[0], 1)
        self.assertEqual(run(*base, "--shape", "2,2,2", "--iters", "1")[0], 1)
        self.assertEqual(run(*base, "--shape", "a,b,c", "--iters", "1")[0], 1)


class TestTrainDemo(CliTestCase):
    def test_zero_epochs_exports(self):
        code, out = run(
            "train-demo", "--epochs", "0", "--n-samples", "16", "--out", self.path("m.tbn")
        )
        self.assertEqual(code, 0)
        result = fields(out.strip().splitlines()[-1])
        self.assertEqual(int(result["model_bytes"]), os.path.getsize(self.path("m.tbn")))
        self.assertEqual(len(load_model_file(self.path("m.tbn")).layers), 4)

    def test_same_seed_same_log(self):
        logs = []
        for name in ("a", "b"):
            code, out = run(
                "train-demo", "--epochs", "2", "--n-samples", "64", "--seed", "3",
                "--out", self.path(name + ".tbn"), "--log", self.path(name + ".log"),
            )
            self.assertEqual(code, 0)
            with open(self.path(name + ".log")) as f:
                logs.append(f.read())
        self.assertEqual(logs[0], logs[1])
        lines = logs[0].splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(
            list(fields(lines[1])), ["epoch", "iteration", "lr", "loss", "train_acc"]
        )
        self.assertEqual(fields(lines[1])["iteration"], "4")
        with open(self.path("a.tbn"), "rb") as fa, open(self.path("b.tbn"), "rb") as fb:
            self.assertEqual(fa.read(), fb.read())

    def test_usage_errors(self):
        self.assertEqual(run("train-demo", "--epochs", "-1", "--out", self.path("m.tbn"))[0], 1)
        self.assertEqual(run("train-demo", "--epochs", "1")[0], 1)

    def test_missing_mnist(self):
        code, _ = run(
            "train-demo", "--epochs", "1", "--mnist-dir", self.path("nothing"),
            "--out", self.path("m.tbn"),
        )
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.path("m.tbn")))

    def test_from_config(self):
        config = self.write_text(
            "demo.yml",
            "name: demo\npath: {}\nepochs: 1\nparams:\n  n_samples: 16\n  width: 4\n".format(
                self.dir
            ),
        )
        code, out = run("train-demo", "--config", config, "--out", self.path("m.tbn"))
        self.assertEqual(code, 0)
        self.assertIn("epoch=0 ", out)

    def test_flags_override_config(self):
        config = self.write_text(
            "demo.yml",
            "name: demo\npath: {}\nepochs: 1\nparams:\n  n_samples: 16\n  width: 4\n".format(
                self.dir
            ),
        )
        code, _ = run(
            "train-demo", "--config", config, "--epochs", "2", "--n-samples", "64",
            "--out", self.path("m.tbn"), "--log", self.path("train.log"),
        )
        self.assertEqual(code, 0)
        with open(self.path("train.log")) as f:
            lines = f.read().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(fields(lines[-1])["iteration"], "4")

    def test_unknown_config_key(self):
        config = self.write_text(
            "demo.yml", "name: demo\npath: {}\nepochs: 1\nparams:\n  widht: 4\n".format(self.dir)
        )
        code, _ = run("train-demo", "--config", config, "--out", self.path("m.tbn"))
        self.assertEqual(code, 1)

    def test_divergence_leaves_no_files(self):
        code, _ = run(
            "train-demo", "--epochs", "3", "--n-samples", "64", "--lr", "1e300",
            "--out", self.path("m.tbn"), "--log", self.path("train.log"),
        )
        self.assertEqual(code, 3)
        self.assertFalse(os.path.exists(self.path("m.tbn")))
        self.assertFalse(os.path.exists(self.path("train.log")))
        self.assertEqual(os.listdir(self.dir), [])


class TestSweep(CliTestCase):
    def test_grid_runs(self):
        config = self.write_text(
            "sweep.yml",
            "name: DEFAULT\npath: {}\nepochs: 1\nparams:\n  n_samples: 16\n  width: 4\n"
            "---\nname: seeds\ngrid:\n  seed: [0, 1]\n".format(self.dir),
        )
        code, out = run("sweep", config)
        self.assertEqual(code, 0)
        self.assertEqual(
            out.strip().splitlines()[-1], "runs=2 ok=2 surrender=0 crash=0 skipped=0"
        )
        rep_dir = os.path.join(self.dir, "seeds", "seeds__s0", "log", "rep_00")
        for name in ("train.log", "rep_0.csv", "model.tbn", "out.log"):
            self.assertTrue(os.path.exists(os.path.join(rep_dir, name)), name)

        code, out = run("sweep", config)
        self.assertEqual(code, 0)
        self.assertIn("skipped=2", out)

    def test_unknown_experiment(self):
        config = self.write_text("sweep.yml", "name: a\npath: {}\nepochs: 1\n".format(self.dir))
        self.assertEqual(run("sweep", config, "-e", "b")[0], 1)

    def test_missing_config(self):
        self.assertEqual(run("sweep", self.path("none.yml"))[0], 1)


class TestUsage(unittest.TestCase):
    def test_no_command(self):
        self.assertEqual(run()[0], 1)

    def test_unknown_command(self):
        self.assertEqual(run("compress")[0], 1)


if __name__ == "__main__":
    unittest.main()
