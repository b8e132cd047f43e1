import unittest
import sys
import os
import math
import tempfile
from pathlib import Path

import numpy as np

# Configuração de caminho para permitir a importação do módulo src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.core.errors import SchemaError
from src.evaluation import (angular_error, compute_metrics, evaluate_dataset, evaluate_image,
                            match_detections, parametric_report, write_tables)
from src.fields import GraspDetection, PointAnnotation


def brute_force_tp(preds, gts, threshold):
    """Reimplementação direta da regra gulosa: score decrescente, GT livre mais próximo."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = set()
    tp = 0
    for i in order:
        options = [(math.hypot(preds[i].x - g.x, preds[i].y - g.y), j) for j, g in enumerate(gts)
                   if g.visible and j not in taken]
        options = [o for o in options if o[0] <= threshold]
        if options:
            taken.add(min(options)[1])
            tp += 1
    return tp


def random_instance(rng):
    preds = [GraspDetection(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(-3, 3), round(rng.uniform(), 1))
             for _ in range(int(rng.integers(0, 7)))]
    gts = [PointAnnotation(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(-3, 3), rng.random() > 0.15)
           for _ in range(int(rng.integers(0, 7)))]
    return preds, gts


class TestMatching(unittest.TestCase):
    """Pareamento guloso um-para-um."""

    def test_score_maior_escolhe_primeiro(self):
        """Duas predições disputando o mesmo GT: vence a de maior score."""
        preds = [GraspDetection(0, 3, 0, 0.2), GraspDetection(0, 5, 0, 0.9)]
        match = match_detections(preds, [PointAnnotation(0, 0, 0)], 20)
        self.assertEqual([(i, j) for i, j, _ in match.pairs], [(1, 0)])
        self.assertEqual(match.unmatched_predictions, [0])

    def test_empate_de_distancia_menor_indice(self):
        """GTs equidistantes: fica o de menor índice."""
        match = match_detections([GraspDetection(5, 0, 0, 1.0)],
                                 [PointAnnotation(0, 0, 0), PointAnnotation(10, 0, 0)], 20)
        self.assertEqual(match.pairs[0][1], 0)

    def test_limiar_inclusivo(self):
        """Distância exatamente igual ao limiar conta como acerto."""
        match = match_detections([GraspDetection(3, 4, 0, 1.0)], [PointAnnotation(0, 0, 0)], 5)
        self.assertEqual(len(match.pairs), 1)

    def test_gt_oculto_nao_participa(self):
        """GT não visível não gera TP nem FN."""
        ev = evaluate_image("a", [GraspDetection(0, 0, 0, 1.0)], [PointAnnotation(0, 0, 0, visible=False)], 20)
        self.assertEqual((ev.tp, ev.fp, ev.fn), (0, 1, 0))

    def test_limiar_invalido(self):
        """Limiar não positivo é rejeitado."""
        with self.assertRaises(ValueError):
            match_detections([], [], 0)

    def test_oraculo_forca_bruta_e_monotonicidade(self):
        """1000 instâncias: TP igual ao oráculo e F1@5 <= F1@10 <= F1@20."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            preds, gts = random_instance(rng)
            f1 = []
            for t in (5.0, 10.0, 20.0):
                ev = evaluate_image("x", preds, gts, t)
                self.assertEqual(ev.tp, brute_force_tp(preds, gts, t))
                self.assertEqual(ev.tp + ev.fp, len(preds))
                self.assertEqual(ev.tp + ev.fn, sum(g.visible for g in gts))
                f1.append(compute_metrics([ev], t).f1)
            self.assertLessEqual(f1[0], f1[1] + 1e-12)
            self.assertLessEqual(f1[1], f1[2] + 1e-12)


class TestMetrics(unittest.TestCase):
    """Precisão, revocação, F1 e erros médios."""

    def test_convencoes_de_denominador_zero(self):
        """Imagem vazia vale 1; só GT ou só predições vale 0."""
        empty = evaluate_image("e", [], [], 20)
        only_gt = evaluate_image("g", [], [PointAnnotation(0, 0, 0)], 20)
        only_pred = evaluate_image("p", [GraspDetection(0, 0, 0, 1.0)], [], 20)
        r = compute_metrics([empty], 20)
        self.assertEqual((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0))
        r = compute_metrics([only_gt], 20)
        self.assertEqual((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0))
        r = compute_metrics([only_pred], 20)
        self.assertEqual((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0))

    def test_per_image_e_pooled(self):
        """per_image promedia razões por imagem; pooled soma contagens antes."""
        a = evaluate_image("a", [GraspDetection(0, 0, 0, 1.0)], [PointAnnotation(0, 0, 0)], 20)
        b = evaluate_image("b", [GraspDetection(0, 0, 0, 1.0), GraspDetection(90, 90, 0, 0.5)],
                           [PointAnnotation(0, 0, 0), PointAnnotation(50, 0, 0), PointAnnotation(0, 50, 0)], 20)
        per_image = compute_metrics([a, b], 20, "per_image")
        pooled = compute_metrics([a, b], 20, "pooled")
        self.assertAlmostEqual(per_image.precision, (1.0 + 0.5) / 2)
        self.assertAlmostEqual(per_image.recall, (1.0 + 1 / 3) / 2)
        self.assertAlmostEqual(pooled.precision, 2 / 3)
        self.assertAlmostEqual(pooled.recall, 2 / 4)
        self.assertEqual((pooled.tp, pooled.fp, pooled.fn), (2, 1, 2))

    def test_conjunto_vazio(self):
        """Nenhuma imagem: métricas 0 e erros NaN."""
        r = compute_metrics([], 10)
        self.assertEqual((r.precision, r.recall, r.f1, r.n_images), (0.0, 0.0, 0.0, 0))
        self.assertTrue(math.isnan(r.mean_localization_error))

    def test_modo_invalido(self):
        """Modo fora de per_image/pooled."""
        with self.assertRaises(ValueError):
            compute_metrics([], 10, "macro")

    def test_erro_angular_circular(self):
        """179° contra -179° dá 2°."""
        self.assertAlmostEqual(angular_error(math.radians(179), math.radians(-179)), 2.0)

    def test_erros_de_localizacao_e_orientacao(self):
        """Erros médios sobre os pares; detecção sem ângulo fica fora da orientação."""
        preds = [GraspDetection(3, 4, math.radians(10), 1.0), GraspDetection(20, 0, float("nan"), 0.5)]
        gts = [PointAnnotation(0, 0, 0.0), PointAnnotation(20, 1, 0.0)]
        r = compute_metrics([evaluate_image("a", preds, gts, 20)], 20)
        self.assertAlmostEqual(r.mean_localization_error, 3.0)
        self.assertAlmostEqual(r.mean_orientation_error, 10.0)


class TestReports(unittest.TestCase):
    """Relatório paramétrico e avaliação de dataset."""

    def _image(self, name, hit, tags):
        preds = [GraspDetection(0, 0, 0, 1.0)] if hit else []
        return evaluate_image(name, preds, [PointAnnotation(0, 0, 0)], 20, tags)

    def test_ordenado_por_f1_e_conta_ausentes(self):
        """Valores da família em F1 decrescente; imagens sem a tag são contadas."""
        images = [self._image("a", True, {"clutter": "no"}), self._image("b", False, {"clutter": "yes"}),
                  self._image("c", True, {})]
        df, missing = parametric_report(images, 20, families=["clutter"])
        self.assertEqual(list(df["value"]), ["no", "yes"])
        self.assertEqual(list(df["f1"]), [1.0, 0.0])
        self.assertEqual(missing, {"clutter": 1})

    def test_predicao_sem_anotacao(self):
        """Imagem prevista que não existe nas anotações é erro de schema."""
        with self.assertRaises(SchemaError):
            evaluate_dataset({"z.png": []}, [{"image": "a.png", "points": []}], 20)

    def test_avalia_dataset(self):
        """Pontos vêm em graus no registro e são comparados em radianos."""
        annotations = [{"image": "a.png", "points": [{"x": 0, "y": 0, "theta_deg": 90.0, "visible": True}],
                        "tags": {"clutter": "no"}}]
        evals = evaluate_dataset({"a.png": [GraspDetection(1, 0, math.radians(80), 0.9)]}, annotations, 20)
        r = compute_metrics(evals, 20)
        self.assertEqual(r.f1, 1.0)
        self.assertAlmostEqual(r.mean_orientation_error, 10.0)
        self.assertEqual(evals[0].tags, {"clutter": "no"})

    def test_grava_tabelas(self):
        """CSV e texto sempre; Excel sob demanda."""
        df, _ = parametric_report([self._image("a", True, {"clutter": "no"})], 20, families=["clutter"])
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_tables(df, tmp, "parametric_report", "Relatório (per_image)", excel=True)
            names = sorted(p.name for p in paths)
            self.assertEqual(names, ["parametric_report.csv", "parametric_report.txt", "parametric_report.xlsx"])
            self.assertIn("per_image", (Path(tmp) / "parametric_report.txt").read_text(encoding="utf-8"))


if __name__ == '__main__':
    unittest.main()
