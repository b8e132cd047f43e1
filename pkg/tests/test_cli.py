import unittest
import sys
import os
import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest import mock

import pandas as pd

# Configuração de caminho para permitir a importação do módulo src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import main as cli
from src.models import DenseRegNetConfig, LocNetConfig, build_dense_reg_net, build_loc_net, save_checkpoint
from src.core.errors import VerificationError
from src.numcore import Conv2d
from src.services.gradcheck_service import ANALYTIC_TOLERANCE, CLOSED_FORM_ROW, run_gradchecks

TINY_TRAIN = ["--epochs", "1", "--batch-size", "2", "--image-size", "64", "--levels", "2", "--base-channels", "8",
              "--head-mid-channels", "8", "--groups", "4", "--no-augment"]


def run(argv):
    """Executa a CLI capturando stdout/stderr."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), err.getvalue()


class TestCliSurface(unittest.TestCase):
    """Parser, variáveis de ambiente e códigos de saída."""

    def test_sem_out_e_erro_de_uso(self):
        """Comando que grava artefatos sem --out nem GRASPNET_OUTPUT_DIR sai com 2."""
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop("GRASPNET_OUTPUT_DIR", None)
            with redirect_stderr(io.StringIO()):
                with self.assertRaises(SystemExit) as ctx:
                    cli.main(["synthgen", "--n", "1"])
        self.assertEqual(ctx.exception.code, 2)

    def test_operador_desconhecido(self):
        """--ops fora das suites registradas é erro de uso."""
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                cli.main(["gradcheck", "--ops", "softmax"])
        self.assertEqual(ctx.exception.code, 2)

    def test_out_pela_variavel_de_ambiente(self):
        """GRASPNET_OUTPUT_DIR substitui --out."""
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch.dict(os.environ, {"GRASPNET_OUTPUT_DIR": tmp}):
                code, _, err = run(["synthgen", "--n", "1", "--size", "64"])
            self.assertEqual(code, 0, err)
            self.assertTrue((Path(tmp) / "annotations.json").exists())
            snapshot = json.loads((Path(tmp) / "run_config.json").read_text(encoding="utf-8"))
            self.assertEqual(snapshot["command"], "synthgen")

    def test_parametro_invalido_vira_codigo_2(self):
        """n = 0 chega ao gerador e volta como erro de uso."""
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = run(["synthgen", "--n", "0", "--out", tmp])
        self.assertEqual(code, 2)
        self.assertIn("erro:", err)


class TestGradcheckCommand(unittest.TestCase):
    """Comando gradcheck e injeção de falha."""

    def test_aprovado(self):
        """Operadores corretos passam e a tabela vai para gradcheck.csv."""
        with tempfile.TemporaryDirectory() as tmp:
            code, stdout, err = run(["gradcheck", "--ops", "relu", "conv2d", "--seeds", "2", "--out", tmp])
            self.assertEqual(code, 0, err)
            table = pd.read_csv(Path(tmp) / "gradcheck.csv")
        self.assertEqual(list(table["operator"]), ["relu", "conv2d"])
        self.assertTrue(table["passed"].all())
        self.assertIn("conv2d", stdout)

    def test_backward_adulterado_e_detectado(self):
        """Gradiente da convolução com sinal trocado: saída 1 nomeando o operador."""
        original = Conv2d.backward

        def flipped(self, grad):
            return tuple(-g for g in original(self, grad))

        with mock.patch.object(Conv2d, "backward", flipped):
            code, _, err = run(["gradcheck", "--ops", "conv2d", "--seeds", "2"])
        self.assertEqual(code, 1)
        self.assertIn("conv2d", err)


class TestClosedFormRow(unittest.TestCase):
    """Linha da forma fechada do gradiente das log-variâncias."""

    def test_linha_propria_com_limiar_estrito(self):
        """combined_loss traz uma segunda linha com limiar 1e-6, independente de --tolerance."""
        table = run_gradchecks(["combined_loss"], seeds=3, tolerance=1e-2)
        self.assertEqual(list(table["operator"]), ["combined_loss", CLOSED_FORM_ROW])
        row = table.set_index("operator").loc[CLOSED_FORM_ROW]
        self.assertEqual(row["tolerance"], 1e-6)
        self.assertEqual(ANALYTIC_TOLERANCE, 1e-6)
        self.assertLess(row["max_error"], 1e-6)
        self.assertTrue(table["passed"].all())

    def test_erro_pequeno_demais_para_o_limiar_geral_reprova(self):
        """Desvio de 1e-5 na forma fechada passaria em 1e-3, mas reprova a linha própria."""
        with mock.patch("src.services.gradcheck_service.combined_loss_analytic_error", return_value=1e-5):
            with self.assertRaises(VerificationError) as ctx:
                run_gradchecks(["combined_loss"], seeds=2)
        self.assertEqual(ctx.exception.operator, CLOSED_FORM_ROW)
        table = ctx.exception.table.set_index("operator")
        self.assertTrue(table.loc["combined_loss", "passed"])
        self.assertFalse(table.loc[CLOSED_FORM_ROW, "passed"])


class TestPipeline(unittest.TestCase):
    """Cadeia completa synthgen -> train -> train-locnet -> infer -> eval -> report."""

    def test_cadeia_de_ponta_a_ponta(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            steps = [
                ["synthgen", "--n", "4", "--size", "64", "--depth", "--seed", "1", "--out", str(root / "data")],
                ["train", "--data", str(root / "data"), "--out", str(root / "run")] + TINY_TRAIN,
                ["train-locnet", "--out", str(root / "loc"), "--steps", "2", "--batch-size", "2", "--sizes", "16",
                 "--levels", "2"],
                ["infer", "--data", str(root / "data"), "--regnet", str(root / "run" / "regnet.cdn3"),
                 "--locnet", str(root / "loc" / "locnet.cdn3"), "--threshold", "0.0", "--out", str(root / "pred")],
                ["eval", "--predictions", str(root / "pred" / "predictions.json"), "--data", str(root / "data"),
                 "--out", str(root / "eval")],
                ["report", "--predictions", str(root / "pred" / "predictions.json"), "--data", str(root / "data"),
                 "--out", str(root / "report")],
            ]
            for argv in steps:
                code, _, err = run(argv)
                self.assertEqual(code, 0, f"{argv[0]}: {err}")
            predictions = json.loads((root / "pred" / "predictions.json").read_text(encoding="utf-8"))
            self.assertEqual(len(predictions), 4)
            report = pd.read_csv(root / "eval" / "eval_report.csv")
            self.assertEqual(sorted(report["threshold"]), [5.0, 10.0, 20.0])
            self.assertTrue((root / "report" / "parametric_report.csv").exists())

    def test_modelo_rgb_em_dados_rgbd(self):
        """infer com checkpoint RGB sobre dataset RGB-D sai com 5."""
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            code, _, err = run(["synthgen", "--n", "1", "--size", "64", "--depth", "--out", str(root / "data")])
            self.assertEqual(code, 0, err)
            reg = build_dense_reg_net(DenseRegNetConfig(encoder_levels=2, base_channels=8, head_mid_channels=8,
                                                        groupnorm_groups=4))
            save_checkpoint(reg, root / "reg.cdn3")
            save_checkpoint(build_loc_net(LocNetConfig(levels=2)), root / "loc.cdn3")
            code, _, err = run(["infer", "--data", str(root / "data"), "--regnet", str(root / "reg.cdn3"),
                                "--locnet", str(root / "loc.cdn3"), "--out", str(root / "pred")])
        self.assertEqual(code, 5)
        self.assertIn("erro:", err)


if __name__ == '__main__':
    unittest.main()
