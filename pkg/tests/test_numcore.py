import unittest
import sys
import os

import numpy as np

# Configuração de caminho para permitir a importação do módulo src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.core.errors import ShapeError
from src.numcore import (Adam, OptimizerState, Tensor, adam_step, backward, bilinear_upsample, check_gradients,
                         concat, conv2d, float64_mode, group_norm, max_pool2d, parameter, poly_lr, relu,
                         take_channels)


class TestAutodiff(unittest.TestCase):
    """
    Propagação reversa do motor numérico: gradientes analíticos simples,
    acumulação e erros de forma.
    """

    def test_gradiente_da_soma_e_um(self):
        """loss = sum(x) produz gradiente todo em 1."""
        x = parameter(np.arange(6.0).reshape(2, 3))
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_gradiente_do_quadrado(self):
        """loss = sum(x*x) produz gradiente 2x."""
        data = np.array([[1.0, -2.0], [0.5, 3.0]])
        x = parameter(data)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2.0 * data, rtol=1e-6)

    def test_chamadas_repetidas_acumulam(self):
        """Duas chamadas de backward sem zerar somam os gradientes."""
        x = parameter(np.ones(3))
        backward(x.sum())
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.full(3, 2.0))

    def test_formas_diferentes_levantam_shape_error(self):
        """Operações elementares não fazem broadcasting implícito."""
        with self.assertRaises(ShapeError) as ctx:
            Tensor(np.ones(3)) + Tensor(np.ones(4))
        self.assertEqual(ctx.exception.op, "add")

    def test_backward_exige_escalar(self):
        """backward em tensor não escalar é erro de forma."""
        with self.assertRaises(ShapeError):
            backward(parameter(np.ones(2)))

    def test_float64_mode(self):
        """Dentro do contexto, novos tensores usam float64; fora, float32."""
        with float64_mode():
            self.assertEqual(Tensor(1.0).data.dtype, np.float64)
        self.assertEqual(Tensor(1.0).data.dtype, np.float32)


class TestOperators(unittest.TestCase):
    """Operadores de rede: formas de saída, convenções e verificação por diferenças finitas."""

    def test_conv2d_identidade(self):
        """Kernel 1x1 unitário reproduz a entrada."""
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 4, 4)))
        out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_conv2d_forma_com_padding_e_stride(self):
        """Padding k//2 preserva H, W; stride 2 os divide."""
        x = Tensor(np.zeros((2, 3, 8, 8)))
        w, b = Tensor(np.zeros((5, 3, 3, 3))), Tensor(np.zeros(5))
        self.assertEqual(conv2d(x, w, b, 1, 1).shape, (2, 5, 8, 8))
        self.assertEqual(conv2d(x, w, b, 2, 1).shape, (2, 5, 4, 4))

    def test_conv2d_canais_incompativeis(self):
        """Kernel com canais de entrada errados levanta ShapeError."""
        with self.assertRaises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_conv2d_gradiente_numerico(self):
        """Entrada 1x2x8x8 e kernel 4x2x3x3: erro relativo < 1e-3 em float64."""
        with float64_mode():
            rng = np.random.default_rng(3)
            x = parameter(rng.normal(size=(1, 2, 8, 8)))
            w = parameter(rng.normal(size=(4, 2, 3, 3)))
            b = parameter(rng.normal(size=(4,)))
            err = check_gradients(lambda: conv2d(x, w, b, 1, 1).sum(), [x, w, b])
        self.assertLess(err, 1e-3)

    def test_group_norm_normaliza(self):
        """Com gamma=1 e beta=0 cada grupo sai com média 0 e variância ~1."""
        rng = np.random.default_rng(1)
        with float64_mode():
            x = Tensor(rng.normal(3.0, 2.0, size=(2, 4, 5, 5)))
            out = group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        grouped = out.reshape(2, 2, -1)
        np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-8)
        np.testing.assert_allclose(grouped.var(axis=2), 1.0, atol=1e-3)

    def test_group_norm_grupos_invalidos(self):
        """Canais não divisíveis pelo número de grupos."""
        with self.assertRaises(ShapeError):
            group_norm(Tensor(np.zeros((1, 3, 2, 2))), 2, Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_relu_negativos(self):
        """Entrada toda negativa: saída e gradiente nulos."""
        x = parameter(-np.ones((1, 1, 3, 3)))
        out = relu(x)
        backward(out.sum())
        np.testing.assert_array_equal(out.data, 0.0)
        np.testing.assert_array_equal(x.grad, 0.0)

    def test_relu_gradiente_indicador(self):
        """Gradiente é o indicador de x > 0 (subgradiente 0 em x = 0)."""
        data = np.array([[[[-1.0, 0.0, 2.0]]]])
        x = parameter(data)
        backward(relu(x).sum())
        np.testing.assert_array_equal(x.grad, [[[[0.0, 0.0, 1.0]]]])

    def test_upsample_constante(self):
        """Campo constante continua constante após a interpolação."""
        out = bilinear_upsample(Tensor(np.full((1, 2, 3, 4), 7.0)), 2)
        self.assertEqual(out.shape, (1, 2, 6, 8))
        np.testing.assert_allclose(out.data, 7.0, rtol=1e-6)

    def test_upsample_gradiente_conserva_massa(self):
        """Cada pixel de entrada recebe peso total factor^2 da soma da saída."""
        x = parameter(np.random.default_rng(2).normal(size=(1, 1, 4, 4)))
        backward(bilinear_upsample(x, 2).sum())
        np.testing.assert_allclose(x.grad, 4.0, rtol=1e-5)

    def test_max_pool_roteia_para_o_maximo(self):
        """Gradiente one-hot por janela na posição do máximo."""
        values = np.random.default_rng(4).permutation(16).astype(np.float64).reshape(1, 1, 4, 4)
        x = parameter(values)
        out = max_pool2d(x, 2, 2)
        backward(out.sum())
        for i in range(2):
            for j in range(2):
                window = values[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                grad = x.grad[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                self.assertEqual(grad.sum(), 1.0)
                self.assertEqual(grad[np.unravel_index(window.argmax(), window.shape)], 1.0)
                self.assertEqual(out.data[0, 0, i, j], window.max())

    def test_max_pool_empate_vai_para_o_primeiro(self):
        """Janela constante: o gradiente vai para o primeiro elemento na ordem de varredura."""
        x = parameter(np.ones((1, 1, 2, 2)))
        backward(max_pool2d(x, 2, 2).sum())
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_concat_e_fatia_de_canais(self):
        """concat seguido de take_channels devolve a parte original e roteia o gradiente."""
        a = parameter(np.ones((1, 2, 2, 2)))
        b = parameter(np.zeros((1, 3, 2, 2)))
        joined = concat([a, b])
        self.assertEqual(joined.shape, (1, 5, 2, 2))
        part = take_channels(joined, 2, 5)
        backward(part.sum())
        np.testing.assert_array_equal(a.grad, 0.0)
        np.testing.assert_array_equal(b.grad, 1.0)


class TestOptimizer(unittest.TestCase):
    """Adam e o decaimento polinomial."""

    def test_gradiente_nulo_nao_move(self):
        """Gradiente zero mantém os parâmetros."""
        p = parameter(np.array([1.0, -2.0]))
        state = OptimizerState.zeros_like([p])
        adam_step([p], [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, np.array([1.0, -2.0], dtype=np.float32))
        self.assertEqual(state.step, 1)

    def test_primeiro_passo_oraculo_escalar(self):
        """Primeiro passo: m_hat = g, v_hat = g^2, logo delta = -lr * g / (|g| + eps)."""
        with float64_mode():
            p = parameter(np.array([1.0]))
            g, lr, eps = 0.5, 0.1, 1e-8
            adam_step([p], [np.array([g])], OptimizerState.zeros_like([p]), lr, eps=eps)
        self.assertAlmostEqual(float(p.data[0]), 1.0 - lr * g / (abs(g) + eps), places=12)

    def test_gradiente_constante_tende_a_lr(self):
        """Com gradiente constante, o passo tende a lr na direção de -sign(g)."""
        with float64_mode():
            p = parameter(np.array([0.0]))
            opt = Adam([p])
            previous = 0.0
            for _ in range(200):
                p.grad = np.array([-3.0])
                opt.step(0.01)
                delta = float(p.data[0]) - previous
                previous = float(p.data[0])
        self.assertAlmostEqual(delta, 0.01, places=6)

    def test_reset_zera_momentos(self):
        """reset recomeça o estado sem tocar nos pesos."""
        p = parameter(np.array([1.0]))
        opt = Adam([p])
        p.grad = np.array([1.0])
        opt.step(0.1)
        moved = p.data.copy()
        opt.reset()
        self.assertEqual(opt.state.step, 0)
        np.testing.assert_array_equal(p.data, moved)

    def test_poly_lr(self):
        """lr0 no passo 0, decrescente, e 0 a partir do total."""
        self.assertEqual(poly_lr(1e-4, 0, 100), 1e-4)
        self.assertAlmostEqual(poly_lr(1.0, 50, 100, 0.9), 0.5 ** 0.9)
        self.assertEqual(poly_lr(1e-4, 100, 100), 0.0)
        self.assertGreater(poly_lr(1e-4, 99, 100), 0.0)

    def test_poly_lr_invalido(self):
        """lr0 não positivo é rejeitado."""
        with self.assertRaises(ValueError):
            poly_lr(0.0, 0, 10)


if __name__ == '__main__':
    unittest.main()
