"""Batch command-line front end.

Exit codes: 0 success, 2 usage or parameter errors, 3 data/format errors,
4 model mismatches.  Every successful command prints one machine-readable
``key=value`` summary line.  The TRITCODEC_THREADS environment variable
caps internal worker counts; the current pipeline is sequential and
deterministic at any setting.
"""

import argparse
import os
import sys

import numpy as np

from . import figures, metrics
from .config import KvReader, load_kv
from .container import Container, MODE_LATENT
from .errors import (
    DataError,
    ModelMismatchError,
    ParameterError,
    ParseError,
    TritcodecError,
)
from .latent_refine import BANDS, LatentTrainConfig, train_latent_refiner
from .modelio import ModelBundle, load_bundle, save_bundle
from .pipeline import (
    CodecConfig,
    ORDER_RASTER,
    SyntheticSpec,
    decode_at,
    encode_source,
    generate_latents,
    resolve_budget,
    retrain_decoder,
)
from .prior import grid_half
from .rate_refine import SLOTS, RefinerTrainConfig, TemperatureBounds, train_refiner
from .training import (
    image_tensors,
    latent_training_caches,
    rate_training_arrays,
    synthetic_tensors,
)
from .transform import read_pnm, synthetic_image, write_pnm


def _threads_from_env():
    raw = os.environ.get("TRITCODEC_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ParameterError(f"TRITCODEC_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ParameterError("TRITCODEC_THREADS must be >= 1")
    return value


def _summary(command, **kv):
    parts = [f"command={command}", "status=ok"]
    parts += [f"{k}={v}" for k, v in kv.items()]
    print(" ".join(parts))


def _load_config(args):
    config = CodecConfig.from_file(args.config) if args.config else CodecConfig()
    if getattr(args, "raster_order", False):
        config.order = ORDER_RASTER
    return config


def _load_models(path):
    return load_bundle(path) if path else None


def _reference_for(config, args, header_mode):
    """Original source for quality reporting, when recoverable."""
    if getattr(args, "reference", None):
        if args.reference.endswith(".npz"):
            with np.load(args.reference) as data:
                return data["latent"]
        return read_pnm(args.reference)
    if header_mode == MODE_LATENT and config.synthetic is not None:
        spec = config.synthetic
        if args.seed is not None:
            spec = SyntheticSpec(
                spec.channels, spec.height, spec.width, spec.rho,
                spec.sigma.copy(), args.seed,
            )
        y, _ = generate_latents(spec)
        return y
    return None


def cmd_encode(args):
    config = _load_config(args)
    models = _load_models(args.models)
    image = read_pnm(args.input) if args.input else None
    result = encode_source(config, models=models, image=image, seed=args.seed)
    with open(args.output, "wb") as fh:
        fh.write(result.container.serialize())
    _summary(
        "encode",
        output=args.output,
        bytes=result.total_bytes,
        depth=result.depth,
        planes=result.depth,
        clamped=result.clamped,
        payload_bits=sum(result.plane_bits),
        chunks=len(result.container.chunks),
    )
    return 0


def cmd_decode(args):
    config = _load_config(args)
    models = _load_models(args.models)
    with open(args.input, "rb") as fh:
        blob = fh.read()
    container = Container.parse(blob)
    dec = decode_at(container, budget=args.budget, models=models, config=config)
    fields = {
        "bytes_used": dec.bytes_used,
        "level": metrics.CSV_FLOAT % dec.level,
    }
    reference = _reference_for(config, args, container.header.mode)
    if reference is not None:
        if dec.image is not None:
            err = metrics.mse(
                np.clip(dec.image, 0.0, 255.0), np.asarray(reference, np.float64)
            )
            peak = 255.0
        else:
            err = metrics.mse(dec.latent_uncentered, reference)
            peak = float(grid_half(container.header.depth))
        fields["mse"] = metrics.CSV_FLOAT % err
        quality = float("inf") if err == 0.0 else 10.0 * np.log10(peak * peak / err)
        fields["psnr"] = metrics.CSV_FLOAT % quality
    if args.output:
        if dec.image is not None:
            write_pnm(args.output, dec.image_u8())
        else:
            np.savez(args.output, latent=dec.latent_uncentered, level=dec.level)
        fields["output"] = args.output
    _summary("decode", **fields)
    return 0


def cmd_truncate(args):
    with open(args.input, "rb") as fh:
        container = Container.parse(fh.read())
    cut = resolve_budget(container, args.budget)
    blob = cut.serialize()
    with open(args.output, "wb") as fh:
        fh.write(blob)
    _summary(
        "truncate",
        output=args.output,
        bytes=len(blob),
        chunks=len(cut.chunks),
    )
    return 0


def _train_reader(args):
    return KvReader(load_kv(args.config)) if args.config else KvReader({})


def _train_spec(kv):
    channels = kv.get_int("channels", 4)
    sigma = kv.get_floats("sigma", None)
    if sigma is None:
        sigma = np.geomspace(
            kv.get_float("sigma_lo", 2.0), kv.get_float("sigma_hi", 20.0), channels
        )
    return SyntheticSpec(
        channels=channels,
        height=kv.get_int("height", 24),
        width=kv.get_int("width", 24),
        rho=(kv.get_float("rho_h", 0.9), kv.get_float("rho_w", 0.9)),
        sigma=np.asarray(sigma, dtype=np.float64),
        seed=kv.get_int("seed", 0),
    )


def _train_tensors(kv, args):
    count = kv.get_int("train_tensors", 24)
    seed0 = kv.get_int("data_seed", 100)
    spec = _train_spec(kv)
    if args.images:
        imgs = [read_pnm(p) for p in args.images]
        config = CodecConfig.from_file(args.config) if args.config else CodecConfig(source="image")
        return image_tensors(imgs, config)
    return synthetic_tensors(spec, count, seed0=seed0)


def cmd_train_crr(args):
    kv = _train_reader(args)
    tensors = _train_tensors(kv, args)
    bounds = TemperatureBounds(kv.get_float("temp_lo", 0.2), kv.get_float("temp_hi", 5.0))
    cfg = RefinerTrainConfig(
        epochs=kv.get_int("epochs", 20),
        batch_size=kv.get_int("batch_size", 512),
        lr=kv.get_float("lr", 1e-3),
        seed=kv.get_int("train_seed", 0),
        holdout_frac=kv.get_float("holdout_frac", 0.2),
        hidden=kv.get_int("hidden", 32),
        radius=kv.get_int("radius", 2),
    )
    feats, probs, targets, groups = rate_training_arrays(
        tensors, args.slot, radius=cfg.radius,
        max_per_plane=kv.get_int("max_per_plane", 1500),
        seed=kv.get_int("sample_seed", 0),
        with_groups=True,
    )
    model, curve, info = train_refiner(
        feats, probs, targets, cfg, bounds=bounds, groups=groups
    )
    keep = info["beats_raw"] or kv.get_bool("keep_unhelpful", False)
    bundle = load_bundle(args.output) if os.path.isdir(args.output) else ModelBundle()
    if keep:
        bundle.rate.models[args.slot] = model
    save_bundle(args.output, bundle)
    curve_csv = os.path.join(args.output, f"rate_{args.slot}_curve.csv")
    _write_curve_csv(curve_csv, curve)
    figures.save_training_curve(
        curve, os.path.join(args.output, f"rate_{args.slot}_curve.png"),
        title=f"rate model ({args.slot})", ylabel="cross-entropy (bits)",
    )
    _summary(
        "train-crr",
        slot=args.slot,
        samples=len(targets),
        best_bits=metrics.CSV_FLOAT % info["holdout_best_bits"],
        raw_bits=metrics.CSV_FLOAT % info["holdout_raw_bits"],
        saved=int(keep),
        output=args.output,
    )
    return 0


def cmd_train_cdr(args):
    kv = _train_reader(args)
    tensors = _train_tensors(kv, args)
    cfg = LatentTrainConfig(
        epochs=kv.get_int("epochs", 16),
        steps_per_epoch=kv.get_int("steps_per_epoch", 50),
        lr=kv.get_float("lr", 1e-3),
        seed=kv.get_int("train_seed", 0),
        hidden=kv.get_int("hidden", 32),
        radius=kv.get_int("radius", 2),
    )
    caches = latent_training_caches(tensors)
    model, curve = train_latent_refiner(caches, args.band, cfg)
    bundle = load_bundle(args.output) if os.path.isdir(args.output) else ModelBundle()
    bundle.latent.models[args.band] = model
    save_bundle(args.output, bundle)
    _write_curve_csv(os.path.join(args.output, f"latent_{args.band}_curve.csv"), curve)
    figures.save_training_curve(
        curve, os.path.join(args.output, f"latent_{args.band}_curve.png"),
        title=f"latent model ({args.band})", ylabel="Frobenius error",
    )
    _summary(
        "train-cdr",
        band=args.band,
        tensors=len(caches),
        holdout_err=metrics.CSV_FLOAT % curve[-1][2],
        best_err=metrics.CSV_FLOAT % min(row[2] for row in curve),
        output=args.output,
    )
    return 0


def _refit_images(kv, args):
    if args.images:
        return [read_pnm(p) for p in args.images]
    count = kv.get_int("refit_images", 6)
    seed0 = kv.get_int("image_seed", 500)
    h = kv.get_int("image_height", 64)
    w = kv.get_int("image_width", 64)
    planes = kv.get_int("image_planes", 1)
    return [synthetic_image(seed0 + i, h, w, planes) for i in range(count)]


def cmd_refit_decoder(args):
    kv = _train_reader(args)
    config = CodecConfig.from_file(args.config) if args.config else CodecConfig(source="image")
    if config.source != "image":
        raise ParameterError("refit-decoder requires an image-mode config")
    models = _load_models(args.models)
    images = _refit_images(kv, args)
    weights_raw = kv.get_floats("refit_weights", [100.0, 100.0, 1.0, 1.0, 1.0])
    synthesis, info = retrain_decoder(
        images, config, models=models, level_weights=tuple(weights_raw)
    )
    bundle = load_bundle(args.output) if os.path.isdir(args.output) else ModelBundle()
    if models is not None:
        bundle.rate.models.update(models.rate.models)
        bundle.latent.models.update(models.latent.models)
    bundle.synthesis = synthesis
    save_bundle(args.output, bundle)
    _summary(
        "refit-decoder",
        images=len(images),
        condition=metrics.CSV_FLOAT % info["condition"],
        output=args.output,
    )
    return 0


def cmd_sweep(args):
    config = _load_config(args)
    models = _load_models(args.models)
    image = read_pnm(args.input) if args.input else None
    result = encode_source(config, models=models, image=image, seed=args.seed)
    if image is not None:
        reference = image
    else:
        spec = config.synthetic
        if args.seed is not None:
            spec = SyntheticSpec(
                spec.channels, spec.height, spec.width, spec.rho,
                spec.sigma.copy(), args.seed,
            )
        reference, _ = generate_latents(spec)
    budgets = metrics.log_budgets(result.container, args.budgets)
    res = metrics.sweep(result, reference, budgets, models=models, config=config)
    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "sweep.csv")
    fig_path = os.path.join(args.output_dir, "rd_curve.png")
    metrics.write_sweep_csv(csv_path, res.rows)
    figures.save_rd_figure({"codec": res.curve}, fig_path)
    full = res.rows[-1]
    _summary(
        "sweep",
        rows=len(res.rows),
        csv=csv_path,
        figure=fig_path,
        full_bpp=metrics.CSV_FLOAT % full.bpp,
        full_psnr=metrics.CSV_FLOAT % full.quality,
    )
    return 0


def cmd_ablate(args):
    config = _load_config(args)
    if config.source != "image":
        raise ParameterError("ablate requires an image-mode config")
    bundle = _load_models(args.models)
    if bundle is None:
        raise ParameterError("ablate requires --models")
    kv = _train_reader(args)
    images = _refit_images(kv, args)
    result = metrics.ablation(images, config, bundle, budget_count=args.budgets)
    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "ablation.csv")
    txt_path = os.path.join(args.output_dir, "ablation.txt")
    fig_path = os.path.join(args.output_dir, "ablation.png")
    metrics.write_ablation_csv(csv_path, result)
    table = metrics.format_ablation_table(result)
    with open(txt_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table + "\n")
    figures.save_ablation_figure(result, fig_path)
    print(table)
    fields = {name: metrics.CSV_FLOAT % bd for name, bd, _ in result.rows}
    _summary("ablate", csv=csv_path, figure=fig_path, **fields)
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    passed, failed, lines = run_selftest()
    for line in lines:
        print(line)
    _summary("selftest", passed=passed, failed=failed)
    return 0 if failed == 0 else 3


def _write_curve_csv(path, curve):
    lines = ["epoch,train,holdout"]
    for epoch, train, hold in curve:
        lines.append(
            f"{epoch},{metrics.CSV_FLOAT % train},{metrics.CSV_FLOAT % hold}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tritcodec",
        description="Progressive trit-plane codec for Gaussian latent tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, models=True, seed=True, raster=True, config=True):
        if config:
            p.add_argument("--config", help="key=value codec configuration file")
        if models:
            p.add_argument("--models", help="model bundle directory")
        if seed:
            p.add_argument("--seed", type=int, help="override the synthetic seed")
        if raster:
            p.add_argument(
                "--raster-order", action="store_true",
                help="serialize trits in raster order instead of priority order",
            )

    p = sub.add_parser("encode", help="encode a source into a stream")
    common(p)
    p.add_argument("--input", help="PNM image (image mode)")
    p.add_argument("--output", required=True, help="output stream path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a stream at a budget")
    common(p)
    p.add_argument("--input", required=True, help="stream path")
    p.add_argument("--budget", default="full", help="full, bytes, or level:<x>")
    p.add_argument("--output", help="reconstruction output (.pnm or .npz)")
    p.add_argument("--reference", help="original source for quality reporting")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("truncate", help="cut a stream at a chunk boundary")
    p.add_argument("--input", required=True)
    p.add_argument("--budget", required=True, help="bytes or level:<x>")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("train-crr", help="train a context-based rate reduction slot")
    common(p, models=False, seed=False, raster=False)
    p.add_argument("--slot", choices=SLOTS, required=True)
    p.add_argument("--output", required=True, help="model bundle directory")
    p.add_argument("--images", nargs="*", help="train on PNM images instead")
    p.set_defaults(func=cmd_train_crr)

    p = sub.add_parser("train-cdr", help="train a context-based distortion reduction band")
    common(p, models=False, seed=False, raster=False)
    p.add_argument("--band", choices=BANDS, required=True)
    p.add_argument("--output", required=True, help="model bundle directory")
    p.add_argument("--images", nargs="*", help="train on PNM images instead")
    p.set_defaults(func=cmd_train_cdr)

    p = sub.add_parser("refit-decoder", help="refit the synthesis weights")
    common(p, seed=False, raster=False)
    p.add_argument("--output", required=True, help="model bundle directory")
    p.add_argument("--images", nargs="*", help="PNM training images")
    p.set_defaults(func=cmd_refit_decoder)

    p = sub.add_parser("sweep", help="encode once, decode at many budgets")
    common(p)
    p.add_argument("--input", help="PNM image (image mode)")
    p.add_argument("--budgets", type=int, default=30, help="budget count")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="toggle grid BD-rates vs the baseline")
    common(p, seed=False, raster=False)
    p.add_argument("--budgets", type=int, default=10)
    p.add_argument("--images", nargs="*", help="PNM assets")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads_from_env()
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ParseError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TritcodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
