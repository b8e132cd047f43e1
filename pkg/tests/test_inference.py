import unittest
import sys
import os
import math
import tempfile
from pathlib import Path

import numpy as np

# Configuração de caminho para permitir a importação do módulo src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.fields import GraspDetection
from src.models import DenseRegNetConfig, LocNetConfig, build_dense_reg_net, build_loc_net, save_checkpoint
from src.repositories.dataset_repository import DatasetRepository, DatasetSample
from src.services.inference_service import (InferenceParams, InferenceService, _to_original_frame, localize,
                                            predict_grasps, read_angle_at)
from src.synthgen import SceneConfig, generate_dataset

SMALL = dict(encoder_levels=2, base_channels=8, head_mid_channels=8, groupnorm_groups=4)


class TestLocalize(unittest.TestCase):
    """Supressão de não-máximos sobre o mapa de centros."""

    def test_ordenado_por_score(self):
        """Dois picos isolados saem em ordem decrescente de score."""
        o = np.zeros((7, 7))
        o[1, 1] = 0.5
        o[5, 5] = 0.8
        self.assertEqual(localize(o, 0.4, 3), [(5, 5, 0.8), (1, 1, 0.5)])

    def test_limiar(self):
        """Picos abaixo do limiar são descartados."""
        o = np.zeros((7, 7))
        o[1, 1] = 0.5
        o[5, 5] = 0.8
        self.assertEqual(localize(o, 0.6, 3), [(5, 5, 0.8)])

    def test_plato_fica_o_primeiro_na_varredura(self):
        """Dois pixels vizinhos com o mesmo valor: só o primeiro em ordem de varredura."""
        o = np.zeros((7, 7))
        o[2, 2] = o[2, 3] = 0.9
        self.assertEqual(localize(o, 0.4, 3), [(2, 2, 0.9)])

    def test_empate_com_vizinho_que_nao_e_maximo(self):
        """Vizinho anterior de mesmo valor, mas dominado por outro pico, não suprime o máximo."""
        o = np.zeros((5, 5))
        o[2, 0] = 1.0
        o[2, 1] = 0.9
        o[2, 2] = 0.9
        self.assertEqual(localize(o, 0.4, 3), [(0, 2, 1.0), (2, 2, 0.9)])

    def test_janela_par_invalida(self):
        """nms_window precisa ser ímpar."""
        with self.assertRaises(ValueError):
            localize(np.zeros((4, 4)), 0.4, 4)

    def test_mapa_abaixo_do_limiar(self):
        """Nenhum pico: lista vazia."""
        self.assertEqual(localize(np.full((5, 5), 0.1), 0.4, 3), [])


class TestReadAngle(unittest.TestCase):
    """Leitura do ângulo de aproximação num pico."""

    def test_campo_constante(self):
        """Campo uniforme devolve o próprio ângulo."""
        theta = 1.2
        d_sin = np.full((6, 6), math.sin(theta))
        d_cos = np.full((6, 6), math.cos(theta))
        self.assertAlmostEqual(read_angle_at(d_sin, d_cos, 3, 3), theta)

    def test_janela_recortada_na_borda(self):
        """No canto só os pixels dentro da imagem entram na média."""
        d_sin = np.zeros((6, 6))
        d_cos = np.full((6, 6), -1.0)
        d_sin[:2, :2] = 1.0
        d_cos[:2, :2] = 0.0
        self.assertAlmostEqual(read_angle_at(d_sin, d_cos, 0, 0), math.pi / 2)

    def test_magnitude_nula(self):
        """Vetores que se cancelam produzem ângulo indefinido."""
        self.assertTrue(math.isnan(read_angle_at(np.zeros((4, 4)), np.zeros((4, 4)), 1, 1)))

    def test_fora_da_imagem(self):
        """Posição inválida."""
        with self.assertRaises(ValueError):
            read_angle_at(np.zeros((4, 4)), np.zeros((4, 4)), 4, 0)


class TestPredictGrasps(unittest.TestCase):
    """Pipeline completo com redes pequenas não treinadas."""

    def setUp(self):
        self.image = np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32)
        self.loc = build_loc_net(LocNetConfig(levels=2), seed=0)

    def test_deteccoes_ordenadas_dentro_da_imagem(self):
        """Limiar 0 garante ao menos um pico; scores em ordem decrescente."""
        reg = build_dense_reg_net(DenseRegNetConfig(**SMALL), seed=0)
        dets = predict_grasps(self.image, reg, self.loc, InferenceParams(threshold=0.0))
        self.assertGreaterEqual(len(dets), 1)
        scores = [d.score for d in dets]
        self.assertEqual(scores, sorted(scores, reverse=True))
        for d in dets:
            self.assertTrue(0 <= d.x < 16 and 0 <= d.y < 16)

    def test_sem_theta_angulo_indefinido(self):
        """Rede sem regressão de ângulo devolve theta NaN."""
        reg = build_dense_reg_net(DenseRegNetConfig(regress_theta=False, **SMALL), seed=0)
        dets = predict_grasps(self.image, reg, self.loc, InferenceParams(threshold=0.0))
        self.assertTrue(all(not d.has_angle for d in dets))
        self.assertIsNone(dets[0].to_json()["theta_deg"])


class TestOriginalFrame(unittest.TestCase):
    """Conversão das detecções para a resolução original."""

    def _sample(self, original_size):
        return DatasetSample("a.png", np.zeros((3, 32, 64), dtype=np.float32), [], original_size=original_size)

    def test_sem_redimensionamento(self):
        """Mesmo tamanho: a detecção volta intacta."""
        det = GraspDetection(10, 5, 0.3, 0.9)
        self.assertIs(_to_original_frame(det, self._sample((64, 32))), det)

    def test_escala_isotropica(self):
        """Centros de pixel escalados; ângulo preservado."""
        out = _to_original_frame(GraspDetection(10, 5, 0.3, 0.9), self._sample((128, 64)))
        self.assertAlmostEqual(out.x, 20.5)
        self.assertAlmostEqual(out.y, 10.5)
        self.assertAlmostEqual(out.theta, 0.3)
        self.assertEqual(out.score, 0.9)

    def test_escala_anisotropica_corrige_angulo(self):
        """sx = 2, sy = 1: 45° vira atan(1/2)."""
        out = _to_original_frame(GraspDetection(0, 0, math.pi / 4, 1.0), self._sample((128, 32)))
        self.assertAlmostEqual(out.theta, math.atan(0.5))


class TestInferenceService(unittest.TestCase):
    """Caso de uso 'infer' sobre um dataset sintético minúsculo."""

    def _checkpoints(self, tmp, in_channels):
        reg = build_dense_reg_net(DenseRegNetConfig(in_channels=in_channels, **SMALL), seed=0)
        reg_path = save_checkpoint(reg, Path(tmp) / "regnet.cdn3")
        loc_path = save_checkpoint(build_loc_net(LocNetConfig(levels=2)), Path(tmp) / "locnet.cdn3")
        return reg_path, loc_path

    def test_grava_predicoes(self):
        """Uma entrada por imagem do split em predictions.json."""
        with tempfile.TemporaryDirectory() as tmp:
            data = Path(tmp) / "data"
            generate_dataset(3, SceneConfig(height=48, width=48, towel_size=(0.3, 0.45), seed=4), data,
                             train_fraction=0.0)
            reg_path, loc_path = self._checkpoints(tmp, 3)
            result = InferenceService(reg_path, loc_path, InferenceParams(threshold=0.0)).run(
                data, Path(tmp) / "out", split="test", overlays=True)
            self.assertTrue(result.is_success, result.error)
            predictions = DatasetRepository.load_predictions(result.data)
            self.assertEqual(len(predictions), 3)
            self.assertTrue((Path(tmp) / "out" / "run_config.json").exists())
            self.assertEqual(len(list((Path(tmp) / "out" / "overlays").glob("*.png"))), 3)

    def test_profundidade_em_modelo_rgb(self):
        """Dataset RGB-D com modelo RGB: falha com código 5."""
        with tempfile.TemporaryDirectory() as tmp:
            data = Path(tmp) / "data"
            generate_dataset(1, SceneConfig(height=48, width=48, towel_size=(0.3, 0.45), depth_enabled=True), data)
            reg_path, loc_path = self._checkpoints(tmp, 3)
            result = InferenceService(reg_path, loc_path).run(data, Path(tmp) / "out")
            self.assertFalse(result.is_success)
            self.assertEqual(result.exit_code, 5)

    def test_checkpoint_inexistente(self):
        """Checkpoint ausente é erro de IO."""
        with tempfile.TemporaryDirectory() as tmp:
            result = InferenceService(Path(tmp) / "x.cdn3", Path(tmp) / "y.cdn3").run(tmp, tmp)
            self.assertFalse(result.is_success)
            self.assertEqual(result.exit_code, 3)


if __name__ == '__main__':
    unittest.main()
