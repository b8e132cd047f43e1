"""
Laços de treino.

- train_regression: DenseRegNet com loss_center (+ loss_theta combinada pela
  ponderação por incerteza), Adam e decaimento polinomial; fase sintética
  opcional antes da fase real, com o otimizador reiniciado entre as fases.
- train_locnet: LocNet treinado só com campos de direção gerados e corrompidos
  proceduralmente (ou lidos de dumps CDF1), alvo = blobs gaussianos.
"""
import logging
import math
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter

from src.augment import AugmentConfig, augment
from src.core.config import write_snapshot
from src.core.errors import GraspError, SchemaError, TrainingDivergedError
from src.core.result import Result
from src.fields import (FieldTargets, PointAnnotation, encode_center_directions, encode_fields,
                        render_blob_target)
from src.losses import UncertaintyWeights, combined_loss, loss_center, loss_theta, unweighted_loss
from src.models import (DenseRegNet, DenseRegNetConfig, LocNet, LocNetConfig, build_dense_reg_net, build_loc_net,
                        save_checkpoint)
from src.numcore import Adam, Tensor, backward, poly_lr, weighted_squared_error
from src.render import render_training_curves
from src.repositories.dataset_repository import DatasetRepository, DatasetSample
from src.repositories.field_repository import FieldRepository

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "phase", "l_phi", "l_theta", "s_phi", "s_theta", "lr", "val_l_phi", "val_l_theta"]
FIELD_SUFFIX = ".cdf"


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr0: float = 1e-4
    epochs: int = 10
    poly_power: float = 0.9
    image_size: int = 128
    seed: int = 0
    use_uncertainty: bool = True
    separate_head: bool = True
    regress_theta: bool = True
    use_depth: bool = True
    pretrain_synthetic: bool = True
    synthetic_epochs: Optional[int] = None
    augment: bool = True
    epsilon: float = 15.0
    bg_ratio: float = 1.0
    half_extent: int = 15
    encoder_levels: int = 4
    base_channels: int = 32
    head_mid_channels: int = 32
    groupnorm_groups: int = 8
    loss_reduction: str = "sum_per_image_mean_over_batch"

    def validate(self) -> None:
        for name in ("batch_size", "lr0", "epochs", "poly_power", "image_size", "epsilon", "half_extent"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} deve ser positivo: {getattr(self, name)}")
        if self.synthetic_epochs is not None and self.synthetic_epochs <= 0:
            raise ValueError(f"synthetic_epochs deve ser positivo: {self.synthetic_epochs}")

    def model_config(self) -> DenseRegNetConfig:
        return DenseRegNetConfig(
            in_channels=4 if self.use_depth else 3,
            encoder_levels=self.encoder_levels,
            base_channels=self.base_channels,
            head_mid_channels=self.head_mid_channels,
            groupnorm_groups=self.groupnorm_groups,
            separate_head=self.separate_head,
            regress_theta=self.regress_theta,
        )


@dataclass
class LocNetTrainConfig:
    steps: int = 400
    batch_size: int = 4
    lr0: float = 1e-3
    poly_power: float = 0.9
    sizes: Tuple[int, ...] = (64, 96, 128)
    min_points: int = 1
    max_points: int = 8
    min_separation: float = 6.0
    noise_max: float = 0.2
    blur_max: int = 3
    dropout_max_area: float = 0.05
    blob_sigma: float = 2.0
    fg_weight: float = 10.0
    fg_threshold: float = 0.011
    levels: int = 4
    base_channels: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps e batch_size devem ser positivos")
        if not 1 <= self.min_points <= self.max_points:
            raise ValueError(f"Faixa de pontos inválida: [{self.min_points}, {self.max_points}]")
        factor = 2 ** self.levels
        bad = [s for s in self.sizes if s % factor]
        if bad:
            raise ValueError(f"Tamanhos {bad} não divisíveis por 2^levels={factor}")


@dataclass
class TrainingOutcome:
    model: object
    uncertainty: Optional[UncertaintyWeights]
    metrics: pd.DataFrame = field(repr=False, default=None)


# ---------------------------------------------------------------------------
#  Dados do treino de regressão
# ---------------------------------------------------------------------------

@dataclass
class PreparedSample:
    image: np.ndarray
    targets: FieldTargets


def prepare_samples(samples: Sequence[DatasetSample], config: TrainConfig,
                    fields_dir: Optional[Union[str, Path]] = None) -> List[PreparedSample]:
    """Associa cada imagem aos alvos: dump CDF1 quando existe, senão codificação direta."""
    prepared = []
    for s in samples:
        targets = None
        if fields_dir is not None:
            dump = Path(fields_dir) / (Path(s.name).stem + FIELD_SUFFIX)
            if dump.exists():
                targets = FieldRepository.load(dump, config.epsilon, config.half_extent)
                if targets.fields.shape != (s.height, s.width):
                    raise SchemaError(f"Campos de {dump} têm forma {targets.fields.shape}, "
                                      f"imagem tem {(s.height, s.width)}")
        if targets is None:
            targets = encode_fields(s.points, s.height, s.width, config.epsilon, config.bg_ratio,
                                    config.half_extent)
        prepared.append(PreparedSample(s.image, targets))
    return prepared


@dataclass
class Batch:
    index: int
    images: np.ndarray
    c_sin: np.ndarray
    c_cos: np.ndarray
    d_sin: np.ndarray
    d_cos: np.ndarray
    weight: np.ndarray
    mask: np.ndarray


def assemble_batch(items: Sequence[PreparedSample], batch_index: int,
                   rng: Optional[np.random.Generator], augment_config: Optional[AugmentConfig]) -> Batch:
    images = [augment(it.image, rng, augment_config) if rng is not None else it.image for it in items]
    plane = lambda get: np.stack([get(it.targets)[None] for it in items])
    return Batch(
        batch_index,
        np.stack(images),
        plane(lambda t: t.fields.c_sin), plane(lambda t: t.fields.c_cos),
        plane(lambda t: t.fields.d_sin), plane(lambda t: t.fields.d_cos),
        plane(lambda t: t.weight.w), plane(lambda t: t.mask.m),
    )


class BatchLoader:
    """
    Monta os batches de uma época. Com threads > 1 e fora do modo determinístico,
    um produtor prepara os batches numa fila limitada enquanto o passo de treino roda.
    Cada batch usa um RNG derivado de (seed, fase, época, batch), então o
    conteúdo não depende do modo.
    """

    def __init__(self, items: Sequence[PreparedSample], batch_size: int, seed: int, phase_id: int, epoch: int,
                 augment_config: Optional[AugmentConfig], threads: int = 1, deterministic: bool = True):
        self.items = items
        self.batch_size = batch_size
        self.seed, self.phase_id, self.epoch = seed, phase_id, epoch
        self.augment_config = augment_config
        self.threads = threads
        self.deterministic = deterministic
        order = np.random.default_rng([seed, phase_id, epoch]).permutation(len(items))
        self.batches = [order[i:i + batch_size] for i in range(0, len(items), batch_size)]

    def __len__(self) -> int:
        return len(self.batches)

    def _build(self, b: int) -> Batch:
        rng = np.random.default_rng([self.seed, self.phase_id, self.epoch, b]) if self.augment_config else None
        return assemble_batch([self.items[i] for i in self.batches[b]], b, rng, self.augment_config)

    def __iter__(self) -> Iterator[Batch]:
        if self.threads <= 1 or self.deterministic:
            for b in range(len(self.batches)):
                yield self._build(b)
            return
        q: "queue.Queue" = queue.Queue(maxsize=max(2, self.threads))
        sentinel = object()

        def produce():
            try:
                for b in range(len(self.batches)):
                    q.put(self._build(b))
            except Exception as e:  # repassado ao consumidor
                q.put(e)
            q.put(sentinel)

        worker = threading.Thread(target=produce, daemon=True)
        worker.start()
        while True:
            item = q.get()
            if item is sentinel:
                break
            if isinstance(item, Exception):
                raise item
            yield item
        worker.join()


# ---------------------------------------------------------------------------
#  Regressão
# ---------------------------------------------------------------------------

def _batch_losses(model: DenseRegNet, batch: Batch, config: TrainConfig) -> Tuple[Tensor, Optional[Tensor]]:
    out = model(Tensor(batch.images))
    l_phi = loss_center(out["c_sin"], out["c_cos"], batch.c_sin, batch.c_cos, batch.weight)
    l_theta = None
    if config.regress_theta:
        l_theta = loss_theta(out["d_sin"], out["d_cos"], batch.d_sin, batch.d_cos, batch.mask)
    return l_phi, l_theta


def _total_loss(l_phi: Tensor, l_theta: Optional[Tensor], u: UncertaintyWeights, config: TrainConfig) -> Tensor:
    if l_theta is None:
        return l_phi
    if config.use_uncertainty:
        return combined_loss(l_phi, l_theta, u)
    return unweighted_loss(l_phi, l_theta)


def validation_losses(model: DenseRegNet, items: Sequence[PreparedSample], config: TrainConfig
                      ) -> Tuple[float, float]:
    if not items:
        return float("nan"), float("nan")
    phi, theta, count = 0.0, 0.0, 0
    for b in range(0, len(items), config.batch_size):
        batch = assemble_batch(items[b:b + config.batch_size], b, None, None)
        l_phi, l_theta = _batch_losses(model, batch, config)
        n = len(batch.images)
        phi += l_phi.item() * n
        theta += (l_theta.item() if l_theta is not None else 0.0) * n
        count += n
    return phi / count, (theta / count if config.regress_theta else float("nan"))


def _append_metrics(path: Optional[Path], row: Dict) -> None:
    if path is None:
        return
    frame = pd.DataFrame([row], columns=METRIC_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, float_format="%.8g")


def train_regression(train_set: Sequence[PreparedSample], val_set: Sequence[PreparedSample], config: TrainConfig,
                     synthetic_set: Optional[Sequence[PreparedSample]] = None,
                     metrics_path: Optional[Union[str, Path]] = None, threads: int = 1,
                     deterministic: bool = True) -> TrainingOutcome:
    """
    Executa as fases de treino e devolve modelo, pesos de incerteza e o log de métricas.
    Determinístico dado o seed.
    """
    config.validate()
    if not train_set:
        raise ValueError("Conjunto de treino vazio.")
    model = build_dense_reg_net(config.model_config(), seed=config.seed)
    u = UncertaintyWeights()
    params = model.parameters()
    if config.regress_theta and config.use_uncertainty:
        params = params + u.parameters()
    optimizer = Adam(params)
    metrics_path = Path(metrics_path) if metrics_path is not None else None
    if metrics_path is not None and metrics_path.exists():
        metrics_path.unlink()

    phases: List[Tuple[str, Sequence[PreparedSample], int]] = []
    if config.pretrain_synthetic and synthetic_set:
        phases.append(("synthetic", synthetic_set, config.synthetic_epochs or config.epochs))
    phases.append(("real", train_set, config.epochs))

    aug = AugmentConfig() if config.augment else None
    rows = []
    for phase_id, (phase, items, epochs) in enumerate(phases):
        if phase_id > 0:
            # Pesos seguem; momentos do Adam recomeçam
            optimizer.reset()
        n_batches = math.ceil(len(items) / config.batch_size)
        total_steps = epochs * n_batches
        step = 0
        for epoch in range(epochs):
            sum_phi, sum_theta, seen = 0.0, 0.0, 0
            lr = config.lr0
            loader = BatchLoader(items, config.batch_size, config.seed, phase_id, epoch, aug, threads, deterministic)
            for batch in loader:
                lr = poly_lr(config.lr0, step, total_steps, config.poly_power)
                l_phi, l_theta = _batch_losses(model, batch, config)
                total = _total_loss(l_phi, l_theta, u, config)
                value = total.item()
                if not math.isfinite(value):
                    raise TrainingDivergedError(phase, batch.index, lr,
                                                f"loss={value}, l_phi={l_phi.item()}, "
                                                f"l_theta={l_theta.item() if l_theta is not None else None}")
                optimizer.zero_grad()
                backward(total)
                optimizer.step(lr)
                n = len(batch.images)
                sum_phi += l_phi.item() * n
                sum_theta += (l_theta.item() if l_theta is not None else 0.0) * n
                seen += n
                step += 1
                logger.debug(f"[{phase}] época {epoch} batch {batch.index}: loss={value:.5f} lr={lr:.3e}")

            val_phi, val_theta = validation_losses(model, val_set, config)
            s_phi, s_theta = u.values()
            row = {
                "epoch": epoch, "phase": phase,
                "l_phi": sum_phi / seen,
                "l_theta": sum_theta / seen if config.regress_theta else float("nan"),
                "s_phi": s_phi, "s_theta": s_theta, "lr": lr,
                "val_l_phi": val_phi, "val_l_theta": val_theta,
            }
            rows.append(row)
            _append_metrics(metrics_path, row)
            logger.info(f"[{phase}] época {epoch + 1}/{epochs}: l_phi={row['l_phi']:.5f} "
                        f"l_theta={row['l_theta']:.5f} s_phi={s_phi:.4f} s_theta={s_theta:.4f} lr={lr:.3e}")

    return TrainingOutcome(model, u, pd.DataFrame(rows, columns=METRIC_COLUMNS))


# ---------------------------------------------------------------------------
#  LocNet
# ---------------------------------------------------------------------------

def random_points(rng: np.random.Generator, H: int, W: int, n: int, min_separation: float,
                  max_tries: int = 200) -> List[PointAnnotation]:
    """Até n pontos uniformes com separação mínima (rejeição limitada)."""
    points: List[PointAnnotation] = []
    for _ in range(max_tries):
        if len(points) == n:
            break
        x, y = rng.uniform(0, W - 1), rng.uniform(0, H - 1)
        if all(math.hypot(x - p.x, y - p.y) >= min_separation for p in points):
            points.append(PointAnnotation(x, y, 0.0))
    return points


def corrupt_fields(c_sin: np.ndarray, c_cos: np.ndarray, rng: np.random.Generator, noise_max: float = 0.2,
                   blur_max: int = 3, dropout_max_area: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """Ruído gaussiano, box-blur e recortes zerados; amplitudes nulas devolvem os campos intactos."""
    H, W = c_sin.shape
    s, c = c_sin.copy(), c_cos.copy()
    sigma = rng.uniform(0.0, noise_max) if noise_max > 0 else 0.0
    if sigma > 0:
        s += rng.normal(0.0, sigma, size=s.shape)
        c += rng.normal(0.0, sigma, size=c.shape)
    k = int(rng.integers(0, blur_max + 1)) if blur_max > 0 else 0
    if k > 1:
        s = uniform_filter(s, size=k, mode="nearest")
        c = uniform_filter(c, size=k, mode="nearest")
    if dropout_max_area > 0:
        budget = dropout_max_area * H * W
        for _ in range(int(rng.integers(0, 4))):
            area = rng.uniform(0.0, budget / 3.0)
            ph = max(1, int(round(math.sqrt(area) * rng.uniform(0.5, 1.5))))
            pw = max(1, int(area // ph))
            if ph * pw > budget / 3.0 or ph > H or pw > W:
                continue
            r0, c0 = int(rng.integers(0, H - ph + 1)), int(rng.integers(0, W - pw + 1))
            s[r0:r0 + ph, c0:c0 + pw] = 0.0
            c[r0:r0 + ph, c0:c0 + pw] = 0.0
    return s, c


def make_locnet_sample(rng: np.random.Generator, H: int, W: int, config: LocNetTrainConfig
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = int(rng.integers(config.min_points, config.max_points + 1))
    points = random_points(rng, H, W, n, config.min_separation)
    c_sin, c_cos = encode_center_directions(points, H, W)
    s, c = corrupt_fields(c_sin, c_cos, rng, config.noise_max, config.blur_max, config.dropout_max_area)
    target = render_blob_target(points, H, W, config.blob_sigma)
    return np.stack([s, c]), target, locnet_weights(target, config)


def locnet_weights(target: np.ndarray, config: LocNetTrainConfig) -> np.ndarray:
    return np.where(target > config.fg_threshold, config.fg_weight, 1.0)


def locnet_loss(prediction: Tensor, target: np.ndarray, weight: np.ndarray) -> Tensor:
    """MSE ponderado pelo primeiro plano, normalizado pela soma dos pesos."""
    return weighted_squared_error(prediction, target, weight) / float(weight.sum())


def bucket_by_shape(dumps: Sequence[FieldTargets]) -> List[List[FieldTargets]]:
    """Agrupa dumps por H x W (ordem crescente de forma); cada batch sai de um único grupo."""
    groups: Dict[Tuple[int, int], List[FieldTargets]] = {}
    for t in dumps:
        groups.setdefault(tuple(t.fields.shape), []).append(t)
    return [groups[shape] for shape in sorted(groups)]


def train_locnet(config: LocNetTrainConfig, dumps: Optional[Sequence[FieldTargets]] = None
                 ) -> TrainingOutcome:
    """
    Treina o LocNet em campos ideais corrompidos. Com `dumps` (CDF1), os campos
    e alvos de blob vêm dos arquivos em vez de pontos aleatórios.
    """
    config.validate()
    model = build_loc_net(LocNetConfig(levels=config.levels, base_channels=config.base_channels), seed=config.seed)
    optimizer = Adam(model.parameters())
    buckets = bucket_by_shape(dumps) if dumps else []
    step_px = 2 ** config.levels
    odd = [b[0].fields.shape for b in buckets if b[0].fields.shape[0] % step_px or b[0].fields.shape[1] % step_px]
    if odd:
        raise SchemaError(f"Campos com forma {odd} não divisível por {step_px}; gere-os com --image-size.")
    if len(buckets) > 1:
        logger.info(f"[locnet] {len(buckets)} formas distintas de campos: batches agrupados por forma")
    rows = []
    for step in range(config.steps):
        rng = np.random.default_rng([config.seed, step])
        lr = poly_lr(config.lr0, step, config.steps, config.poly_power)
        inputs, targets, weights = [], [], []
        if buckets:
            bucket = buckets[int(rng.integers(len(buckets)))]
            for _ in range(config.batch_size):
                t = bucket[int(rng.integers(len(bucket)))]
                s, c = corrupt_fields(t.fields.c_sin, t.fields.c_cos, rng, config.noise_max, config.blur_max,
                                      config.dropout_max_area)
                inputs.append(np.stack([s, c]))
                targets.append(t.loc_target)
                weights.append(locnet_weights(t.loc_target, config))
        else:
            size = int(config.sizes[int(rng.integers(len(config.sizes)))])
            for _ in range(config.batch_size):
                x, t, w = make_locnet_sample(rng, size, size, config)
                inputs.append(x)
                targets.append(t)
                weights.append(w)
        target = np.stack(targets)[:, None]
        weight = np.stack(weights)[:, None]
        loss = locnet_loss(model(Tensor(np.stack(inputs))), target, weight)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError("locnet", step, lr, f"loss={value}")
        optimizer.zero_grad()
        backward(loss)
        optimizer.step(lr)
        rows.append({"step": step, "loss": value, "lr": lr})
        if (step + 1) % 50 == 0 or step + 1 == config.steps:
            logger.info(f"[locnet] passo {step + 1}/{config.steps}: loss={value:.6f} lr={lr:.3e}")
    return TrainingOutcome(model, None, pd.DataFrame(rows, columns=["step", "loss", "lr"]))


# ---------------------------------------------------------------------------
#  Serviço
# ---------------------------------------------------------------------------

class TrainingService:
    """Casos de uso de treino e pré-computação de campos; devolvem Result."""

    def __init__(self, threads: int = 1, deterministic: bool = True):
        self.threads = threads
        self.deterministic = deterministic

    def train(self, data_dir: Union[str, Path], out_dir: Union[str, Path], config: TrainConfig,
              synthetic_dir: Optional[Union[str, Path]] = None, val_split: Optional[str] = None,
              fields_dir: Optional[Union[str, Path]] = None) -> Result[Path]:
        try:
            config.validate()
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            repo = DatasetRepository(data_dir)
            if config.use_depth and not repo.has_depth():
                logger.warning("Dataset sem canal de profundidade; treinando apenas com RGB.")
                config.use_depth = False
            load = lambda r, split: r.load(split=split, use_depth=config.use_depth, image_size=config.image_size)
            train_set = prepare_samples(load(repo, "train"), config, fields_dir)
            val_set = prepare_samples(load(repo, val_split), config, fields_dir) if val_split else []
            if not val_split:
                logger.info("Sem split de validação: colunas val_* ficam vazias.")
            synthetic_set = None
            if config.pretrain_synthetic and synthetic_dir is not None:
                synthetic_set = prepare_samples(load(DatasetRepository(synthetic_dir), "train"), config)
            elif synthetic_dir is not None:
                logger.info("Pré-treino sintético desativado; diretório sintético ignorado.")

            write_snapshot(out, "train", {"train_config": config, "data": str(data_dir),
                                          "synthetic": str(synthetic_dir) if synthetic_dir else None,
                                          "val_split": val_split, "fields": str(fields_dir) if fields_dir else None,
                                          "threads": self.threads, "deterministic": self.deterministic})
            outcome = train_regression(train_set, val_set, config, synthetic_set, out / "metrics.csv",
                                       self.threads, self.deterministic)
            s_phi, s_theta = outcome.uncertainty.values()
            ckpt = save_checkpoint(
                outcome.model, out / "regnet.cdn3",
                extra={"uncertainty.s_phi": outcome.uncertainty.s_phi.data,
                       "uncertainty.s_theta": outcome.uncertainty.s_theta.data},
                metadata={"train_config": asdict(config)},
            )
            render_training_curves(outcome.metrics, out / "training_curves.html")
            logger.info(f"Treino concluído: {ckpt} (s_phi={s_phi:.4f}, s_theta={s_theta:.4f})")
            return Result.success(ckpt)
        except GraspError as e:
            logger.error(f"Falha no treino: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            logger.error(f"Configuração de treino inválida: {e}")
            return Result.failure(str(e), exit_code=2)

    def train_locnet(self, out_dir: Union[str, Path], config: LocNetTrainConfig,
                     fields_dir: Optional[Union[str, Path]] = None) -> Result[Path]:
        try:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            dumps = None
            if fields_dir is not None:
                files = sorted(Path(fields_dir).glob(f"*{FIELD_SUFFIX}"))
                if not files:
                    raise SchemaError(f"Nenhum dump CDF1 em {fields_dir}")
                dumps = [FieldRepository.load(p) for p in files]
            write_snapshot(out, "train-locnet", {"locnet_config": config,
                                                 "fields": str(fields_dir) if fields_dir else None})
            outcome = train_locnet(config, dumps)
            outcome.metrics.to_csv(out / "locnet_metrics.csv", index=False, float_format="%.8g")
            ckpt = save_checkpoint(outcome.model, out / "locnet.cdn3", metadata={"train_config": asdict(config)})
            return Result.success(ckpt)
        except GraspError as e:
            logger.error(f"Falha no treino do LocNet: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            logger.error(f"Configuração do LocNet inválida: {e}")
            return Result.failure(str(e), exit_code=2)

    def make_fields(self, data_dir: Union[str, Path], out_dir: Union[str, Path], epsilon: float = 15.0,
                    bg_ratio: float = 1.0, half_extent: int = 15, blob_sigma: float = 2.0,
                    image_size: Optional[int] = None, split: Optional[str] = None) -> Result[int]:
        """Um dump CDF1 por imagem (<nome>.cdf)."""
        try:
            out = Path(out_dir)
            samples = DatasetRepository(data_dir).load(split=split, image_size=image_size)
            for s in samples:
                targets = encode_fields(s.points, s.height, s.width, epsilon, bg_ratio, half_extent, blob_sigma)
                FieldRepository.save(out / (Path(s.name).stem + FIELD_SUFFIX), targets)
            write_snapshot(out, "make-fields", {"data": str(data_dir), "epsilon": epsilon, "bg_ratio": bg_ratio,
                                                "half_extent": half_extent, "blob_sigma": blob_sigma,
                                                "image_size": image_size, "split": split})
            logger.info(f"{len(samples)} dumps de campos gravados em {out}")
            return Result.success(len(samples))
        except GraspError as e:
            logger.error(f"Falha ao gerar campos: {e}")
            return Result.from_exception(e)
        except ValueError as e:
            return Result.failure(str(e), exit_code=2)
