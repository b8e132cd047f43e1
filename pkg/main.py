import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

# Configuração de Path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.core.config import resolve_output_dir, resolve_threads, write_snapshot
from src.core.errors import GraspError
from src.core.result import Result
from src.evaluation import DEFAULT_THRESHOLDS, MODES
from src.services.evaluation_service import EvaluationService
from src.services.gradcheck_service import DEFAULT_SEEDS, DEFAULT_TOLERANCE, SUITES, GradcheckService
from src.services.inference_service import InferenceParams, InferenceService
from src.services.training_service import LocNetTrainConfig, TrainConfig, TrainingService
from src.synthgen import TEXTURE_FAMILIES, SceneConfig, generate_dataset
from src.utils import DocGenerator

logger = logging.getLogger("graspnet")

LOG_FORMAT = '%(asctime)s - [%(name)s] - %(levelname)s - %(message)s'

# Comandos que gravam artefatos exigem diretório de saída
NEEDS_OUTPUT = {"synthgen", "make-fields", "train", "train-locnet", "infer", "eval", "report"}


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


# ---------------------------------------------------------------------------
#  Comandos
# ---------------------------------------------------------------------------

def cmd_synthgen(args, out: Path, threads: int) -> Result:
    config = SceneConfig(height=args.size, width=args.size, fold_prob=args.fold_prob, clutter_prob=args.clutter_prob,
                         depth_enabled=args.depth, seed=args.seed)
    try:
        manifest = generate_dataset(args.n, config, out, args.train_fraction, args.holdout_towel,
                                    args.holdout_background, threads=1 if args.deterministic else threads)
        write_snapshot(out, "synthgen", {"scene_config": config, "n": args.n, "train_fraction": args.train_fraction,
                                         "holdout_towel": args.holdout_towel,
                                         "holdout_background": args.holdout_background})
        return Result.success(manifest)
    except GraspError as e:
        logger.error(f"Falha no synthgen: {e}")
        return Result.from_exception(e)
    except ValueError as e:
        return Result.failure(str(e), exit_code=2)


def cmd_make_fields(args, out: Path, threads: int) -> Result:
    return TrainingService(threads, args.deterministic).make_fields(
        args.data, out, args.epsilon, args.bg_ratio, args.half_extent, args.blob_sigma, args.image_size, args.split)


def cmd_train(args, out: Path, threads: int) -> Result:
    config = TrainConfig(
        batch_size=args.batch_size, lr0=args.lr, epochs=args.epochs, poly_power=args.poly_power,
        image_size=args.image_size, seed=args.seed,
        use_uncertainty=not args.no_uncertainty, separate_head=not args.shared_head,
        regress_theta=not args.no_theta, use_depth=not args.rgb_only,
        pretrain_synthetic=not args.no_synthetic_pretrain, synthetic_epochs=args.synthetic_epochs,
        augment=not args.no_augment, epsilon=args.epsilon, bg_ratio=args.bg_ratio, half_extent=args.half_extent,
        encoder_levels=args.levels, base_channels=args.base_channels, head_mid_channels=args.head_mid_channels,
        groupnorm_groups=args.groups,
    )
    return TrainingService(threads, args.deterministic).train(args.data, out, config, args.synthetic,
                                                              args.val_split, args.fields)


def cmd_train_locnet(args, out: Path, threads: int) -> Result:
    config = LocNetTrainConfig(steps=args.steps, batch_size=args.batch_size, lr0=args.lr, sizes=tuple(args.sizes),
                               levels=args.levels, base_channels=args.base_channels, seed=args.seed)
    return TrainingService(threads, args.deterministic).train_locnet(out, config, args.fields)


def cmd_infer(args, out: Path, threads: int) -> Result:
    params = InferenceParams(args.threshold, args.nms_window, args.angle_window)
    service = InferenceService(args.regnet, args.locnet, params, 1 if args.deterministic else threads)
    return service.run(args.data, out, args.split, args.rgb_only, args.image_size, args.overlays)


def cmd_eval(args, out: Path, threads: int) -> Result:
    result = EvaluationService(args.predictions, args.data, args.annotations).evaluate(out, args.thresholds,
                                                                                       args.mode)
    if result.is_success:
        print(DocGenerator.to_text(result.data, f"Avaliação ({args.mode})"))
    return result


def cmd_report(args, out: Path, threads: int) -> Result:
    return EvaluationService(args.predictions, args.data, args.annotations).report(
        out, args.threshold, args.mode, excel=args.excel, pdf=args.pdf)


def cmd_gradcheck(args, out: Optional[Path], threads: int) -> Result:
    result = GradcheckService(args.seeds, args.tolerance).run(args.ops)
    if result.data is not None:
        print(DocGenerator.to_text(result.data, "Verificação de gradientes (float64)"))
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            result.data.to_csv(out / "gradcheck.csv", index=False, float_format="%.6e")
            write_snapshot(out, "gradcheck", {"ops": args.ops, "seeds": args.seeds, "tolerance": args.tolerance})
    return result


COMMANDS = {
    "synthgen": cmd_synthgen,
    "make-fields": cmd_make_fields,
    "train": cmd_train,
    "train-locnet": cmd_train_locnet,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
#  Parser
# ---------------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Semente global (padrão: 0)")
    common.add_argument("--out", default=None, help="Diretório de saída (ou GRASPNET_OUTPUT_DIR)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v INFO, -vv DEBUG")
    common.add_argument("--threads", type=int, default=None, help="Limite de workers (ou GRASPNET_THREADS)")
    common.add_argument("--deterministic", action="store_true", help="Força caminhos de dados seriais")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspnet",
                                     description="Detecção de pontos de preensão por regressão de direção ao centro.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    p = sub.add_parser("synthgen", parents=[common], help="Gera o dataset sintético de toalhas")
    p.add_argument("--n", type=int, required=True, help="Número de cenas")
    p.add_argument("--size", type=int, default=128, help="Lado da imagem em px")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--fold-prob", type=float, default=0.3)
    p.add_argument("--clutter-prob", type=float, default=0.35)
    p.add_argument("--depth", action="store_true", help="Grava o canal de profundidade")
    p.add_argument("--holdout-towel", choices=TEXTURE_FAMILIES, default=None)
    p.add_argument("--holdout-background", choices=TEXTURE_FAMILIES, default=None)

    p = sub.add_parser("make-fields", parents=[common], help="Pré-computa campos CDF1")
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, default=15.0)
    p.add_argument("--bg-ratio", type=float, default=1.0)
    p.add_argument("--half-extent", type=int, default=15)
    p.add_argument("--blob-sigma", type=float, default=2.0)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--split", default=None)

    p = sub.add_parser("train", parents=[common], help="Treina a rede de regressão densa")
    p.add_argument("--data", required=True)
    p.add_argument("--synthetic", default=None, help="Dataset sintético para o pré-treino")
    p.add_argument("--fields", default=None, help="Diretório com dumps CDF1")
    p.add_argument("--val-split", default=None, help="Split usado para a loss de validação (padrão: nenhum)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--synthetic-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--poly-power", type=float, default=0.9)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--head-mid-channels", type=int, default=32)
    p.add_argument("--groups", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=15.0)
    p.add_argument("--bg-ratio", type=float, default=1.0)
    p.add_argument("--half-extent", type=int, default=15)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-uncertainty", action="store_true", help="Soma simples das losses")
    p.add_argument("--shared-head", action="store_true", help="Uma única cabeça de 4 canais")
    p.add_argument("--no-theta", action="store_true", help="Sem regressão do ângulo de aproximação")
    p.add_argument("--no-synthetic-pretrain", action="store_true")
    p.add_argument("--rgb-only", action="store_true")

    p = sub.add_parser("train-locnet", parents=[common], help="Treina o LocNet em campos sintéticos")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 96, 128])
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--fields", default=None, help="Diretório com dumps CDF1")

    p = sub.add_parser("infer", parents=[common], help="Prediz pontos de preensão")
    p.add_argument("--data", required=True)
    p.add_argument("--regnet", required=True, help="Checkpoint CDN3 da rede de regressão")
    p.add_argument("--locnet", required=True, help="Checkpoint CDN3 do LocNet")
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--nms-window", type=int, default=5)
    p.add_argument("--angle-window", type=int, default=3)
    p.add_argument("--split", default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--rgb-only", action="store_true")
    p.add_argument("--overlays", action="store_true")

    for name, help_text in (("eval", "Precisão/revocação/F1 por limiar"), ("report", "Relatório por família de tag")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--predictions", required=True)
        p.add_argument("--data", required=True, help="Dataset com annotations.json")
        p.add_argument("--annotations", default=None, help="Caminho alternativo das anotações")
        p.add_argument("--mode", choices=MODES, default="per_image")
        if name == "eval":
            p.add_argument("--thresholds", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS))
        else:
            p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLDS[0])
            p.add_argument("--excel", action="store_true")
            p.add_argument("--pdf", action="store_true")

    p = sub.add_parser("gradcheck", parents=[common], help="Verificação de gradientes por diferenças finitas")
    p.add_argument("--ops", nargs="+", choices=list(SUITES), default=None)
    p.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    out = resolve_output_dir(args.out)
    if out is None and args.command in NEEDS_OUTPUT:
        parser.error(f"'{args.command}' exige --out (ou a variável GRASPNET_OUTPUT_DIR)")
    threads = resolve_threads(args.threads)

    result = COMMANDS[args.command](args, out, threads)
    if not result.is_success:
        print(f"erro: {result.error}", file=sys.stderr)
        return result.exit_code
    logger.info(f"'{args.command}' concluído")
    return 0


if __name__ == "__main__":
    sys.exit(main())
