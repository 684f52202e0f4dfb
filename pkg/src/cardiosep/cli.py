"""Command-line driver: synth, train, project, separate, evaluate.

Exit codes: 0 success, 1 usage, 2 validation/preconditions, 3 I/O,
4 numeric failure.  Every run logs its fully resolved configuration so a
re-run reproduces all outputs byte-for-byte.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from . import dsp, fileio, latent, separate, signals, vae
from .fileio import CheckpointError, RunConfig, WavError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _log_config(cfg: RunConfig):
    for line in fileio.format_config(cfg).splitlines():
        print(f"config: {line}", file=sys.stderr)


def _load_cfg(path):
    return fileio.load_config(path) if path else RunConfig()


def _check_rate(cfg, mixture, path):
    if mixture.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"sample rate mismatch: config says {cfg.sample_rate} Hz but "
            f"{path} is {mixture.sample_rate} Hz")


def _features(cfg, mixture):
    spec = dsp.stft(mixture, cfg.n_fft, cfg.hop, sample_rate=mixture.sample_rate)
    return spec, dsp.log_mag(spec, cfg.floor)


def _cmd_synth(args):
    cfg = _load_cfg(args.config)
    _log_config(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    heart = signals.gen_heart(signals.HeartParams(), cfg.duration,
                              cfg.sample_rate, cfg.seed)
    lung = signals.gen_lung(signals.LungParams(), cfg.duration,
                            cfg.sample_rate, cfg.seed + 1)
    mixture = signals.mix([heart, lung], [0.7, 0.7])
    labels = signals.dominance_labels([heart, lung], cfg.n_fft, cfg.hop)
    fileio.write_wav(os.path.join(args.out_dir, "heart.wav"), heart)
    fileio.write_wav(os.path.join(args.out_dir, "lung.wav"), lung)
    fileio.write_wav(os.path.join(args.out_dir, "mixture.wav"), mixture)
    fileio.export_csv("labels", labels, os.path.join(args.out_dir, "labels.csv"))
    print(f"synth: wrote {len(labels)} labeled frames to {args.out_dir}")


def _cmd_train(args):
    cfg = _load_cfg(args.config)
    _log_config(cfg)
    mixture = fileio.read_wav(args.mixture)
    _check_rate(cfg, mixture, args.mixture)
    _, frames = _features(cfg, mixture)
    stats = dsp.fit_stats(frames)
    normed = dsp.normalize(frames, stats)
    rng = np.random.default_rng(cfg.seed)
    model = vae.VAEModel(frames.shape[1], cfg.latent_dim, cfg.hidden, cfg.beta,
                         rng=rng)
    result = vae.train(model, normed, epochs=cfg.epochs, batch_size=cfg.batch_size,
                       lr=cfg.lr, seed=cfg.seed, snapshot_stride=cfg.snapshot_stride)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    fileio.save_checkpoint(args.out, model, stats, cfg, cfg.epochs)
    fileio.export_csv("losses", result.history, os.path.join(out_dir, "losses.csv"))
    for epoch, mu in sorted(result.snapshots.items()):
        fileio.export_csv("latent", (epoch, mu),
                          os.path.join(out_dir, f"latent_epoch{epoch:04d}.csv"))
    final = result.history[-1]
    print(f"train: {cfg.epochs} epochs, final loss total={final.total:.6g} "
          f"(recon={final.recon:.6g}, kl={final.kl:.6g})")


def _read_labels(path, n_frames):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("frame,label"):
            raise ValueError(f"{path}: expected a frame,label CSV")
        for line in fh:
            line = line.strip()
            if line:
                labels.append(int(line.split(",")[1]))
    if len(labels) < n_frames:
        raise ValueError(f"{path}: {len(labels)} labels for {n_frames} frames")
    return labels[:n_frames]


def _cmd_project(args):
    model, stats, cfg, epoch = fileio.load_checkpoint(args.ckpt)
    _log_config(cfg)
    mixture = fileio.read_wav(args.mixture)
    _check_rate(cfg, mixture, args.mixture)
    _, frames = _features(cfg, mixture)
    if frames.shape[1] != model.input_dim:
        raise ValueError(
            f"checkpoint expects {model.input_dim} bins, mixture analysis "
            f"produced {frames.shape[1]}")
    mu = vae.encode(model, dsp.normalize(frames, stats)).mu
    coords = latent.tsne(mu, perplexity=cfg.perplexity, iters=cfg.tsne_iters,
                         seed=cfg.seed)
    clustering = latent.kmeans(mu, cfg.clusters, restarts=cfg.restarts,
                               seed=cfg.seed)
    labels = _read_labels(args.labels, len(mu)) if args.labels else [None] * len(mu)
    rows = [(t, coords[t, 0], coords[t, 1], clustering.assignments[t], labels[t], epoch)
            for t in range(len(mu))]
    fileio.export_csv("embedding", rows, args.out)
    print(f"project: embedded {len(mu)} frames to {args.out}")


def _cmd_separate(args):
    model, stats, cfg, _ = fileio.load_checkpoint(args.ckpt)
    if args.config:
        requested = fileio.load_config(args.config)
        for name in ("n_fft", "hop", "sample_rate"):
            ckpt_v, req_v = getattr(cfg, name), getattr(requested, name)
            if ckpt_v != req_v:
                raise ValueError(
                    f"{name} mismatch: checkpoint was trained with {ckpt_v} but "
                    f"config requests {req_v}")
    _log_config(cfg)
    mixture = fileio.read_wav(args.mixture)
    _check_rate(cfg, mixture, args.mixture)
    spec, frames = _features(cfg, mixture)
    if frames.shape[1] != model.input_dim:
        raise ValueError(
            f"checkpoint expects {model.input_dim} bins, mixture analysis "
            f"produced {frames.shape[1]}")
    normed = dsp.normalize(frames, stats)
    assignment = separate.assign_frames(model, normed, cfg.clusters, cfg.seed,
                                        restarts=cfg.restarts, mode=args.mode)
    masks = separate.compute_masks(spec, model, assignment, stats, args.mode)
    sep = separate.reconstruct(spec, model, assignment, stats, args.mode)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, sig in enumerate(sep.signals):
        clipped = np.clip(sig, -1.0, 1.0)
        fileio.write_wav(os.path.join(args.out_dir, f"source_{i}.wav"),
                         signals.SourceSignal(clipped, sep.sample_rate))
    fileio.export_csv("masks", masks, os.path.join(args.out_dir, "masks.csv"))
    print(f"separate: wrote {len(sep.signals)} sources ({args.mode} mode) "
          f"to {args.out_dir}")


def _cmd_evaluate(args):
    est_paths = sorted(glob.glob(os.path.join(args.est_dir, "source_*.wav")))
    if not est_paths:
        raise ValueError(f"no source_*.wav estimates found in {args.est_dir}")
    ref_paths = sorted(p for p in glob.glob(os.path.join(args.ref_dir, "*.wav"))
                       if os.path.basename(p) != "mixture.wav")
    if len(ref_paths) != len(est_paths):
        raise ValueError(f"{len(est_paths)} estimates but {len(ref_paths)} references")
    estimates = [fileio.read_wav(p) for p in est_paths]
    references = [fileio.read_wav(p) for p in ref_paths]
    mixture_path = os.path.join(args.ref_dir, "mixture.wav")
    mixture = fileio.read_wav(mixture_path) if os.path.exists(mixture_path) else None
    sep = separate.SeparatedSources([e.samples for e in estimates],
                                    estimates[0].sample_rate)
    report = separate.evaluate(sep, references, mixture=mixture)
    fileio.export_csv("report", report, args.out)
    for i, metrics in enumerate(report.per_source):
        ref_name = os.path.basename(ref_paths[report.permutation[i]])
        print(f"evaluate: source_{i} -> {ref_name}: "
              f"si_sdr={metrics.si_sdr_db:.3f} dB, "
              f"si_sdri={metrics.si_sdr_improvement_db:.3f} dB, "
              f"lsd={metrics.lsd_db:.3f} dB")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cardiosep",
                     description="VAE-based heart/lung sound separation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic heart/lung corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train the model on a mixture recording")
    p.add_argument("--config", default=None)
    p.add_argument("--mixture", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("project", help="t-SNE embedding of the latent space")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default=None, help="optional labels.csv for ground truth")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("separate", help="separate a mixture into source WAVs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--mode", choices=separate.MODES, default="wiener")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("evaluate", help="score separated sources against references")
    p.add_argument("--est-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    try:
        args.func(args)
    except ValueError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (WavError, CheckpointError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    raise SystemExit(cli())


if __name__ == "__main__":
    main()
