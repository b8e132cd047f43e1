import unittest
import sys
import os
import json
import math
import tempfile
from pathlib import Path

import numpy as np

# Configuração de caminho para permitir a importação do módulo src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.core.errors import CheckpointError, DataIOError, SchemaError
from src.fields import PointAnnotation, encode_fields
from src.repositories.checkpoint_repository import CheckpointRepository
from src.repositories.dataset_repository import DatasetRepository, depth_filename, points_to_json
from src.repositories.field_repository import PLANE_ORDER, FieldRepository


class TestCheckpointRepository(unittest.TestCase):
    """Formato binário CDN3."""

    def test_ida_e_volta_preserva_nomes_ordem_e_valores(self):
        """Tensores float32/float64 (inclusive escalares) voltam idênticos e na mesma ordem."""
        tensors = {
            "enc0.conv.weight": np.random.default_rng(0).normal(size=(4, 3, 3, 3)).astype(np.float32),
            "enc0.conv.bias": np.zeros(4, dtype=np.float32),
            "uncertainty.s_phi": np.array(0.25, dtype=np.float32),
            "extra64": np.arange(3, dtype=np.float64),
        }
        decoded = CheckpointRepository.decode(CheckpointRepository.encode(tensors))
        self.assertEqual(list(decoded), list(tensors))
        for name, arr in tensors.items():
            np.testing.assert_array_equal(decoded[name], arr)
            self.assertEqual(decoded[name].dtype, arr.dtype)

    def test_magic_invalido(self):
        """Cabeçalho diferente de CDN3 é CheckpointError."""
        with self.assertRaises(CheckpointError):
            CheckpointRepository.decode(b"XXXX\x01")

    def test_versao_incompativel(self):
        """Versão desconhecida é rejeitada."""
        with self.assertRaises(CheckpointError):
            CheckpointRepository.decode(b"CDN3\x09")

    def test_truncado(self):
        """Payload cortado no meio de um tensor."""
        payload = CheckpointRepository.encode({"w": np.ones(10, dtype=np.float32)})
        with self.assertRaises(CheckpointError):
            CheckpointRepository.decode(payload[:-4])

    def test_arquivo_ausente(self):
        """Arquivo inexistente é erro de IO."""
        with self.assertRaises(DataIOError):
            CheckpointRepository.load("/caminho/que/nao/existe.cdn3")


class TestFieldRepository(unittest.TestCase):
    """Dumps CDF1 de campos."""

    def test_salva_e_carrega(self):
        """Os sete planos voltam com precisão float32."""
        targets = encode_fields([PointAnnotation(5, 6, 0.7), PointAnnotation(20, 12, -1.0)], 24, 32)
        with tempfile.TemporaryDirectory() as tmp:
            path = FieldRepository.save(Path(tmp) / "a.cdf", targets)
            planes = FieldRepository.decode(path.read_bytes())
            self.assertEqual(tuple(planes), PLANE_ORDER)
            loaded = FieldRepository.load(path)
        np.testing.assert_allclose(loaded.fields.c_sin, targets.fields.c_sin, atol=1e-6)
        np.testing.assert_allclose(loaded.weight.w, targets.weight.w, rtol=1e-6)
        np.testing.assert_array_equal(loaded.mask.m, targets.mask.m)

    def test_tamanho_inconsistente(self):
        """Bytes faltando no fim do arquivo são erro de schema."""
        payload = FieldRepository.encode({"c_sin": np.zeros((2, 2))})
        with self.assertRaises(SchemaError):
            FieldRepository.decode(payload[:-1])

    def test_planos_obrigatorios(self):
        """Dump sem todos os planos não vira FieldTargets."""
        with self.assertRaises(SchemaError):
            FieldRepository.targets_from_planes({"c_sin": np.zeros((2, 2))}, 15.0, 15)


class TestDatasetRepository(unittest.TestCase):
    """Anotações JSON, PNGs e registros de predição."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        (self.root / "images").mkdir()
        rgb = np.zeros((3, 16, 32))
        rgb[0] = 1.0
        DatasetRepository.write_rgb(self.root / "images" / "a.png", rgb)
        DatasetRepository.write_depth(self.root / depth_filename("images/a.png"), np.full((16, 32), 0.5))
        self.points = [PointAnnotation(7.5, 3.5, math.radians(45.0)), PointAnnotation(1, 2, 0.0, visible=False)]
        DatasetRepository.save_annotations(self.root / "annotations.json", [
            {"image": "images/a.png", "points": points_to_json(self.points), "tags": {"clutter": "none"},
             "split": "train"},
        ])

    def tearDown(self):
        self.tmp.cleanup()

    def test_nome_da_profundidade(self):
        """O arquivo de profundidade fica ao lado da imagem."""
        self.assertEqual(depth_filename("images/scene_00000.png"), "images/scene_00000_depth.png")

    def test_carrega_rgbd(self):
        """Amostra RGB-D: 4 canais em [0,1] e pontos preservados."""
        repo = DatasetRepository(self.root)
        self.assertTrue(repo.has_depth())
        sample = repo.load(split="train", use_depth=True)[0]
        self.assertEqual(sample.image.shape, (4, 16, 32))
        self.assertAlmostEqual(float(sample.image[0].mean()), 1.0)
        self.assertAlmostEqual(float(sample.image[3].mean()), 0.5, places=4)
        self.assertEqual(sample.tags, {"clutter": "none"})
        self.assertFalse(sample.points[1].visible)
        self.assertAlmostEqual(sample.points[0].theta, math.radians(45.0))

    def _add_record(self, name, with_depth):
        DatasetRepository.write_rgb(self.root / name, np.zeros((3, 16, 32)))
        if with_depth:
            DatasetRepository.write_depth(self.root / depth_filename(name), np.zeros((16, 32)))
        records = DatasetRepository.load_annotations(self.root / "annotations.json")
        records.append({"image": name, "points": points_to_json(self.points), "tags": {}, "split": "train"})
        DatasetRepository.save_annotations(self.root / "annotations.json", records)

    def test_profundidade_em_todos_os_registros(self):
        """has_depth olha todos os registros, não só o primeiro."""
        self._add_record("images/b.png", with_depth=True)
        self.assertTrue(DatasetRepository(self.root).has_depth())

    def test_profundidade_parcial_e_erro_de_schema(self):
        """Primeiro registro com profundidade e o segundo sem: SchemaError nomeando a imagem."""
        self._add_record("images/b.png", with_depth=False)
        with self.assertRaises(SchemaError) as ctx:
            DatasetRepository(self.root).has_depth()
        self.assertIn("images/b.png", str(ctx.exception))

    def test_sem_profundidade_em_nenhum(self):
        """Nenhum PNG de profundidade: dataset RGB."""
        (self.root / depth_filename("images/a.png")).unlink()
        self.assertFalse(DatasetRepository(self.root).has_depth())

    def test_redimensiona_pontos(self):
        """image_size reescala coordenadas pelos centros de pixel."""
        sample = DatasetRepository(self.root).load(image_size=64)[0]
        self.assertEqual(sample.image.shape, (3, 64, 64))
        self.assertEqual(sample.original_size, (32, 16))
        self.assertAlmostEqual(sample.points[0].x, (7.5 + 0.5) * 2.0 - 0.5)
        self.assertAlmostEqual(sample.points[0].y, (3.5 + 0.5) * 4.0 - 0.5)

    def test_filtra_split(self):
        """Split inexistente devolve lista vazia."""
        self.assertEqual(DatasetRepository(self.root).load(split="test"), [])

    def test_anotacao_invalida(self):
        """Ponto sem theta_deg é erro de schema."""
        bad = self.root / "bad.json"
        bad.write_text(json.dumps([{"image": "x.png", "points": [{"x": 1, "y": 2}]}]), encoding="utf-8")
        with self.assertRaises(SchemaError):
            DatasetRepository.load_annotations(bad)

    def test_imagem_ausente(self):
        """Registro apontando para imagem inexistente é erro de IO."""
        with self.assertRaises(DataIOError):
            DatasetRepository(self.root).load_sample({"image": "images/zz.png", "points": []})

    def test_predicoes_com_angulo_indefinido(self):
        """theta_deg nulo é gravado como null e lido como None."""
        path = self.root / "predictions.json"
        DatasetRepository.save_predictions(path, [
            {"image": "images/a.png", "detections": [{"x": 1.0, "y": 2.0, "theta_deg": None, "score": 0.9}]},
        ])
        self.assertIn('"theta_deg": null', path.read_text(encoding="utf-8"))
        loaded = DatasetRepository.load_predictions(path)
        self.assertIsNone(loaded["images/a.png"][0]["theta_deg"])

    def test_predicoes_sem_score(self):
        """Detecção sem score é rejeitada."""
        path = self.root / "p.json"
        path.write_text(json.dumps([{"image": "a", "detections": [{"x": 1, "y": 2}]}]), encoding="utf-8")
        with self.assertRaises(SchemaError):
            DatasetRepository.load_predictions(path)


if __name__ == '__main__':
    unittest.main()
