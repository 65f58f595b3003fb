"""Command-line front end.

Subcommands wire datasets, configs, training, quantization, packing, MAC
emulation and reports into reproducible experiments. Every run is
deterministic under a fixed seed; report commands write CSV plus a PNG
figure next to it.

Exit codes: 0 ok, 1 failed check or diverged training, 2 bad config or
arguments, 3 corrupt model file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import plots, qinference
from .config import ConfigError, ExperimentConfig, load_config
from .models import load_checkpoint, save_checkpoint
from .packing import FormatError, PackedModel, build_packed, model_size_report, memory_traffic_report
from .qat import MetricsRow, TrainingError, evaluate, train, train_float, zero_fraction_of
from .quantizers import FloatScheme, PruneConfig, dequantize, quantize
from .shift_mac import cost_table, mac_self_check

__all__ = ["main"]


def _write_metrics(rows: list[MetricsRow], path: str) -> None:
    with open(path, "w") as f:
        f.write(MetricsRow.HEADER + "\n")
        for r in rows:
            f.write(r.csv() + "\n")


def _ensure_out(cfg_or_dir) -> str:
    out = cfg_or_dir if isinstance(cfg_or_dir, str) else cfg_or_dir.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _calibrated_packed(cfg: ExperimentConfig, model, quantized) -> PackedModel:
    """Pack the model with activation scales from one calibration batch."""
    train_data, _ = cfg.load_datasets()
    packed = build_packed(model, quantized)
    act = qinference.calibrate(packed, train_data.images[:128])
    return build_packed(model, quantized, act.scales)


def cmd_train_float(cfg: ExperimentConfig) -> int:
    out = _ensure_out(cfg)
    train_data, test_data = cfg.load_datasets()
    model = cfg.build_model()
    model, history = train_float(cfg.float_sgd_config(), model, train_data, test_data,
                                 cfg.batch_size, cfg.float_weight_decay)
    ckpt = os.path.join(out, "float.npz")
    save_checkpoint(model, ckpt, {"name": cfg.name, "seed": cfg.seed})
    _write_metrics(history, os.path.join(out, "float_metrics.csv"))
    plots.training_curves(history, os.path.join(out, "float_curves.png"), "float baseline")
    acc = evaluate(model, test_data)
    print(f"float baseline: test accuracy {acc:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_qat(cfg: ExperimentConfig, checkpoint: str) -> int:
    out = _ensure_out(cfg)
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    train_data, test_data = cfg.load_datasets()
    model, _ = load_checkpoint(checkpoint)
    qcfg = cfg.qat_config(model)
    model, state = train(qcfg, model, train_data, test_data)

    packed = _calibrated_packed(cfg, model, state.quantized)
    model_path = os.path.join(out, f"qat_{cfg.method}.pqt")
    packed.save(model_path)
    master_path = os.path.join(out, f"qat_{cfg.method}_master.npz")
    if state.masters:
        master = cfg.build_model()
        master.load_weights({**{f"{n}.w": w for n, w in state.masters.items()},
                             **{f"{l.name}.b": l.b.data for l in model.trainable()}})
        save_checkpoint(master, master_path, {"name": cfg.name, "stage": "master"})
    else:
        save_checkpoint(model, master_path, {"name": cfg.name, "stage": "master"})
    _write_metrics(state.history, os.path.join(out, f"qat_{cfg.method}_metrics.csv"))
    plots.training_curves(state.history, os.path.join(out, f"qat_{cfg.method}_curves.png"),
                          f"{cfg.method} QAT ({cfg.scheme})")
    acc = evaluate(model, test_data)
    print(f"{cfg.method} QAT: test accuracy {acc:.4f}, "
          f"pruned {zero_fraction_of(state.quantized) * 100:.2f}%")
    print(f"packed model: {model_path}")
    return 0


def cmd_pack(cfg: ExperimentConfig, checkpoint: str, model_out: str | None) -> int:
    out = _ensure_out(cfg)
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    model, _ = load_checkpoint(checkpoint)
    qcfg = cfg.qat_config(model)
    names = [l.name for l in model.trainable()]
    quantized = {}
    for layer in model.trainable():
        scheme = qcfg.scheme_for(layer.name, names[0], names[-1])
        quantized[layer.name] = (
            None if isinstance(scheme, FloatScheme)
            else quantize(layer.w.data, scheme, qcfg.prune)
        )
    packed = _calibrated_packed(cfg, model, quantized)
    path = model_out or os.path.join(out, "packed.pqt")
    packed.save(path)
    report = model_size_report(packed)
    print(f"packed {path}: {report.packed_bytes} bytes, "
          f"compression {report.compression_ratio:.3f} vs 8-bit")
    return 0


def cmd_eval(cfg: ExperimentConfig, model_path: str, path: str) -> int:
    if not os.path.exists(model_path):
        raise ConfigError(f"model file not found: {model_path}")
    packed = PackedModel.load(model_path)
    _, test_data = cfg.load_datasets()
    if path == "integer":
        scales = {n: packed.records[n].act_scale for n in packed.trainable_names()
                  if packed.records[n].q is not None}
        if any(s <= 0 for s in scales.values()):
            train_data, _ = cfg.load_datasets()
            act = qinference.calibrate(packed, train_data.images[:128])
            scales = act.scales
            print("note: model had no stored activation scales; calibrated on the fly")
        act_params = qinference.ActQuantParams(scales, 8)
        acc, events = qinference.evaluate_packed(packed, test_data, "integer", act_params,
                                                 overflow_mode=cfg.mac_overflow)
        print(f"integer path: accuracy {acc:.4f}, "
              f"saturation events: intermediate={events.intermediate} "
              f"accumulator={events.accumulator}")
    else:
        acc, _ = qinference.evaluate_packed(packed, test_data, "float")
        print(f"float path: accuracy {acc:.4f}")
    return 0


def cmd_mac_report(out_dir: str) -> int:
    out = _ensure_out(out_dir)
    entries = cost_table()
    print("MAC unit, LUT, FF, rel_power, rel_area")
    for e in entries:
        print(f"{e.label}, {e.lut}, {e.ff}, {e.rel_power:.3f}, {e.rel_area:.3f}")
    csv_path = os.path.join(out, "mac_report.csv")
    with open(csv_path, "w") as f:
        f.write("kind,label,lut,ff,rel_power,rel_area\n")
        for e in entries:
            f.write(f"{e.kind},{e.label},{e.lut},{e.ff},{e.rel_power:.6f},{e.rel_area:.6f}\n")
    plots.mac_cost_figure(entries, os.path.join(out, "mac_report.png"))

    ok, cases = mac_self_check()
    print(f"shift/multiply self-check over {cases} cases: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_sweep_pruning(cfg: ExperimentConfig, checkpoint: str, pf_list: list[float],
                      epochs: int) -> int:
    out = _ensure_out(cfg)
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    train_data, test_data = cfg.load_datasets()

    rows: list[tuple[float, float, float]] = []
    for pf in pf_list:
        model, _ = load_checkpoint(checkpoint)
        qcfg = cfg.qat_config(model)
        qcfg = replace(qcfg, prune=PruneConfig(pf),
                       sgd=replace(qcfg.sgd, epochs=epochs))
        if epochs > 0:
            model, state = train(qcfg, model, train_data)
            quantized = state.quantized
        else:
            names = [l.name for l in model.trainable()]
            quantized = {}
            for layer in model.trainable():
                scheme = qcfg.scheme_for(layer.name, names[0], names[-1])
                if isinstance(scheme, FloatScheme):
                    quantized[layer.name] = None
                    continue
                q = quantize(layer.w.data, scheme, PruneConfig(pf))
                layer.w.data = dequantize(q)
                quantized[layer.name] = q
        acc = evaluate(model, test_data)
        zf = zero_fraction_of(quantized)
        rows.append((pf, zf, acc))
        print(f"pf={pf:g}: pruned {zf * 100:.2f}%, accuracy {acc:.4f}")

    fractions = [r[1] for r in rows]
    ordered = sorted(range(len(pf_list)), key=lambda i: pf_list[i])
    monotone = all(fractions[ordered[i]] <= fractions[ordered[i + 1]] + 1e-12
                   for i in range(len(ordered) - 1))
    csv_path = os.path.join(out, "pruning_sweep.csv")
    with open(csv_path, "w") as f:
        f.write("pf,zero_fraction,accuracy\n")
        for pf, zf, acc in rows:
            f.write(f"{pf:g},{zf:.6f},{acc:.6f}\n")
    plots.pruning_sweep_figure(rows, os.path.join(out, "pruning_sweep.png"))
    if not monotone:
        print("error: pruned fraction is not non-decreasing in the pruning factor",
              file=sys.stderr)
        return 1
    return 0


def cmd_size_report(model_path: str, out_dir: str, word_bits: int) -> int:
    out = _ensure_out(out_dir)
    if not os.path.exists(model_path):
        raise ConfigError(f"model file not found: {model_path}")
    packed = PackedModel.load(model_path)
    size = model_size_report(packed)
    traffic = memory_traffic_report(packed, word_bits)
    print(f"packed bytes:      {size.packed_bytes}")
    print(f"8-bit baseline:    {size.baseline_bytes}")
    print(f"compression ratio: {size.compression_ratio:.4f}")
    print(f"zero fraction:     {size.zero_fraction:.4f}")
    print(f"memory words ({traffic.word_bits}b): {traffic.words_read} "
          f"(vs 8-bit ratio {traffic.transactions_vs_8bit_ratio:.4f})")
    with open(os.path.join(out, "size_report.csv"), "w") as f:
        f.write("layer,weights,packed_payload_bytes,baseline_payload_bytes\n")
        for name, n, actual, baseline in size.per_layer:
            f.write(f"{name},{n},{actual},{baseline}\n")
    with open(os.path.join(out, "size_summary.csv"), "w") as f:
        f.write("packed_bytes,baseline_bytes,compression_ratio,zero_fraction,"
                "words_read,transactions_vs_8bit_ratio\n")
        f.write(f"{size.packed_bytes},{size.baseline_bytes},{size.compression_ratio:.6f},"
                f"{size.zero_fraction:.6f},{traffic.words_read},"
                f"{traffic.transactions_vs_8bit_ratio:.6f}\n")
    plots.size_figure(size.per_layer, os.path.join(out, "size_report.png"))
    return 0


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, help="override experiment seed")
    p.add_argument("--output-dir", help="override output directory")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--method", choices=["ste", "alr"], help="override QAT method")
    p.add_argument("--scheme", help="override default weight scheme, e.g. pot:4")
    p.add_argument("--prune-factor", type=float, help="override pruning factor")


def _cfg_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(
        args.config,
        seed=args.seed,
        output_dir=args.output_dir,
        epochs=args.epochs,
        method=args.method,
        scheme=args.scheme,
        prune_factor=args.prune_factor,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="potq",
        description="Power-of-two weight quantization: training, packing, MAC reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-float", help="train the float32 baseline")
    _add_config_args(p)

    p = sub.add_parser("qat", help="quantization-aware training from a float checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True, help="float checkpoint (.npz)")

    p = sub.add_parser("pack", help="quantize + pack a checkpoint without training")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-O", "--model-out", help="output .pqt path")

    p = sub.add_parser("eval", help="evaluate a packed model")
    _add_config_args(p)
    p.add_argument("--model", required=True, help="packed model (.pqt)")
    p.add_argument("--path", choices=["float", "integer"], default="float")

    p = sub.add_parser("mac-report", help="MAC cost table + exhaustive self-check")
    p.add_argument("-o", "--output-dir", default="runs/mac-report")

    p = sub.add_parser("sweep-pruning", help="pruning-factor sweep over a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pf", default="0,0.5,1,2", help="comma-separated pruning factors")
    p.add_argument("--sweep-epochs", type=int, default=0,
                   help="fine-tune epochs per factor (0 = quantize only)")

    p = sub.add_parser("size-report", help="packed size and memory traffic report")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output-dir", default="runs/size-report")
    p.add_argument("--word-bits", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-float":
            return cmd_train_float(_cfg_from_args(args))
        if args.command == "qat":
            return cmd_qat(_cfg_from_args(args), args.checkpoint)
        if args.command == "pack":
            return cmd_pack(_cfg_from_args(args), args.checkpoint, args.model_out)
        if args.command == "eval":
            return cmd_eval(_cfg_from_args(args), args.model, args.path)
        if args.command == "mac-report":
            return cmd_mac_report(args.output_dir)
        if args.command == "sweep-pruning":
            pf_list = [float(x) for x in args.pf.split(",") if x.strip()]
            return cmd_sweep_pruning(_cfg_from_args(args), args.checkpoint, pf_list,
                                     args.sweep_epochs)
        if args.command == "size-report":
            return cmd_size_report(args.model, args.output_dir, args.word_bits)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 3
    except TrainingError as e:
        print(f"training error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
