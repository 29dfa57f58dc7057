"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure. The only
environment variable consulted is ``MADSHADE_THREADS``, which caps the
BLAS thread pool.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("madshade")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merge(args, keys):
    """Config file values overridden by explicitly given flags."""
    values = _load_config(args.config)
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


# -- render / visualize ------------------------------------------------------

_RENDER_KEYS = ("scene", "spp", "reference_spp", "seed", "mode", "decoder_weights",
                "denoiser_weights", "subsample_2x2", "firefly_clamp", "sampler", "output",
                "exposure")


def _add_render_flags(p, with_mode=True):
    p.add_argument("--config", help="JSON file with pipeline settings")
    p.add_argument("--scene", help="scene file (default: packaged garden fixture)")
    p.add_argument("--spp", type=int)
    p.add_argument("--reference-spp", type=int)
    p.add_argument("--seed", type=int)
    if with_mode:
        p.add_argument("--mode", choices=["noisy", "denoised", "reference", "comparison"])
    p.add_argument("--decoder-weights")
    p.add_argument("--denoiser-weights")
    p.add_argument("--subsample-2x2", action="store_const", const=True)
    p.add_argument("--firefly-clamp", type=float)
    p.add_argument("--sampler", choices=["random", "sobol"])
    p.add_argument("--exposure", type=float)
    p.add_argument("-o", "--output", help="output directory")


def _render(args, mode=None):
    from .imageio import save_image
    from .pipeline import PipelineConfig, run_pipeline

    values = _merge(args, _RENDER_KEYS)
    if mode is not None:
        values["mode"] = mode
    try:
        config = PipelineConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    images, metrics = run_pipeline(config)
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    for name, buf in images.items():
        save_image(out / name, buf, exposure=config.exposure)
        log.info("wrote %s", out / f"{name}.pfm")
    if metrics:
        (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
        for k, v in sorted(metrics.items()):
            print(f"{k} {v:.6g}")
    return EXIT_OK


# -- training ----------------------------------------------------------------

def _train_decoder(args):
    from .decoder import MaterialDecoder

    values = _merge(args, ("n_steps", "batch_size", "lr", "lr_schedule", "seed"))
    output = values.pop("output", None) or args.output
    try:
        est = MaterialDecoder(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    est.fit()
    est.save(output)
    step, loss = est.history_[-1]
    print(f"decoder heldout_relmse {loss:.6g} after {step} steps -> {output}")
    return EXIT_RUNTIME if est.aborted_ else EXIT_OK


def _train_denoiser(args):
    from .decoder import MaterialDecoder
    from .denoiser import MADDenoiser

    values = _merge(args, ("n_steps", "batch_size", "lr", "seed", "tile_size", "n_tiles",
                           "consistency_weight"))
    output = values.pop("output", None) or args.output
    loss_mode = values.pop("loss", None) or args.loss
    decoder_path = values.pop("decoder_weights", None) or args.decoder_weights
    decoder = None
    if loss_mode == "dependent":
        if decoder_path is None:
            from .pipeline import packaged
            decoder_path = packaged("weights/decoder.madw")
        decoder = MaterialDecoder.load(decoder_path)
    try:
        est = MADDenoiser(mode=loss_mode, decoder=decoder, **values)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    est.fit()
    est.save(output)
    step, loss = est.history_[-1]
    print(f"denoiser heldout_loss {loss:.6g} after {step} steps -> {output}")
    return EXIT_RUNTIME if est.aborted_ else EXIT_OK


# -- metrics -----------------------------------------------------------------

def _metrics(args):
    from .imageio import read_pfm
    from .pipeline import METRIC_EPS, relmse

    eps = METRIC_EPS if args.eps is None else args.eps
    ref = read_pfm(args.reference)
    report = {}
    for path in args.images:
        img = read_pfm(path)
        if img.shape != ref.shape:
            raise UsageError(f"{path}: shape {img.shape} does not match reference {ref.shape}")
        report[str(path)] = relmse(img, ref, eps)
        print(f"{path} relmse {report[str(path)]:.6g}")
    if args.json:
        Path(args.json).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="madshade", description="Material-agnostic denoising renderer.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", help="render a scene")
    _add_render_flags(p)
    p.set_defaults(func=_render)

    p = sub.add_parser("visualize-mu", help="write the five Mu components for mu, mu', mu*")
    _add_render_flags(p, with_mode=False)
    p.set_defaults(func=lambda a: _render(a, mode="mu-visualization"))

    p = sub.add_parser("train-decoder", help="train the material decoder")
    p.add_argument("--config")
    p.add_argument("--steps", dest="n_steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=["cosine", "constant"])
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="decoder.madw")
    p.set_defaults(func=_train_decoder)

    p = sub.add_parser("train-denoiser", help="train the U-Net denoiser")
    p.add_argument("--config")
    p.add_argument("--loss", choices=["dependent", "independent"], default="dependent")
    p.add_argument("--decoder-weights")
    p.add_argument("--steps", dest="n_steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--n-tiles", type=int)
    p.add_argument("--consistency-weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="denoiser.madw")
    p.set_defaults(func=_train_denoiser)

    p = sub.add_parser("metrics", help="relMSE of PFM images against a reference")
    p.add_argument("images", nargs="+")
    p.add_argument("--reference", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--json", help="also write the report here")
    p.set_defaults(func=_metrics)
    return parser


def _thread_limit():
    raw = os.environ.get("MADSHADE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MADSHADE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("MADSHADE_THREADS must be >= 1")
    return n


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_limit()
        if threads is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(f"madshade: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"madshade: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
