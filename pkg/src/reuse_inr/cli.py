"""Command-line front end: encode, decode, eval, ablate, bdrate, macs, synth.

Every command that produces files writes them into a run directory (--out)
together with an append-only ``manifest.jsonl`` listing each artifact with
its sha256 digest, the command, seed, and wall-clock time. Identical inputs
and seed reproduce byte-identical primary artifacts.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 corruption.

Run configs are versioned key-value documents combining the network and
training schedules under ``net.`` and ``train.`` prefixes; unknown keys are
errors. Without --config, encode and ablate fall back to the desk-scale
baseline matched to the input video's dimensions.

REUSE_INR_THREADS limits how many ablation grid cells run concurrently.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import configtext
from .codec import dequantized_store, pack_model, unpack_model
from .errors import (
    ConfigurationError,
    CorruptionError,
    DataError,
    DimensionError,
    EvaluationError,
    FormatError,
    UsageError,
)
from .macs import count_macs
from .network import (
    Granularity,
    InrNetwork,
    NetworkConfig,
    ReuseMode,
    ReuseSpec,
)
from .training import TrainConfig, fit
from .video import (
    SYNTH_KINDS,
    VideoBuffer,
    bd_rate,
    bpp,
    curve_from_rows,
    load_raw,
    psnr,
    read_rd_csv,
    save_raw,
    synth_video,
    write_rd_csv,
)

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CORRUPTION = 5

ABLATION_SUITES = ("location", "times", "granularity")


# ---------------------------------------------------------------------------
# run config files


def parse_run_config(text: str) -> tuple[NetworkConfig, TrainConfig]:
    pairs = configtext.loads(text)
    net_pairs = {k[4:]: v for k, v in pairs.items() if k.startswith("net.")}
    train_pairs = {k[6:]: v for k, v in pairs.items() if k.startswith("train.")}
    leftovers = {k: v for k, v in pairs.items()
                 if not (k.startswith("net.") or k.startswith("train."))}
    if leftovers:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(leftovers))}")
    net_cfg = NetworkConfig.from_text(configtext.dumps(net_pairs))
    train_cfg = TrainConfig.from_pairs(lambda key: configtext.take(train_pairs, key))
    configtext.finish(train_pairs)
    return net_cfg, train_cfg


def dump_run_config(net_cfg: NetworkConfig, train_cfg: TrainConfig) -> str:
    net_pairs = configtext.loads(net_cfg.to_text())
    pairs = {f"net.{k}": v for k, v in net_pairs.items()}
    pairs.update({f"train.{k}": v for k, v in train_cfg.to_pairs().items()})
    return configtext.dumps(pairs)


def _configs_for(video: VideoBuffer, args) -> tuple[NetworkConfig, TrainConfig]:
    if args.config:
        net_cfg, train_cfg = parse_run_config(Path(args.config).read_text())
    else:
        net_cfg = NetworkConfig.desk_default(video.frames, video.height, video.width)
        train_cfg = TrainConfig.desk_default()
    if args.seed is not None:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "seed": args.seed})
    if args.scale_epochs != 1.0:
        train_cfg = train_cfg.scaled(args.scale_epochs)
    return net_cfg, train_cfg


# ---------------------------------------------------------------------------
# manifests


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, *, seed=None, config=None,
                   inputs: dict[str, str] | None = None,
                   outputs: list[Path] | None = None,
                   wall_clock_sec: float | None = None,
                   extra: dict | None = None) -> None:
    entry = {
        "command": command,
        "config": str(config) if config else None,
        "seed": seed,
        "inputs": inputs or {},
        "outputs": {str(p): _sha256(p) for p in (outputs or [])},
        "wall_clock_sec": wall_clock_sec,
    }
    if extra:
        entry.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pipeline pieces shared by encode / ablate


def _encode_video(video: VideoBuffer, net_cfg: NetworkConfig,
                  train_cfg: TrainConfig, out_dir: Path, label: str):
    """fit -> QAT -> pack; returns (bitstream path, bpp, quantized PSNR, log)."""
    net, log = fit(video, net_cfg, train_cfg)
    data = pack_model(net.params, net_cfg, train_cfg.quant_bits)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream_path = out_dir / f"{label}.inrc"
    stream_path.write_bytes(data)
    log.write_csv(out_dir / f"{label}_train_log.csv")
    # encoder-side reconstruction with the quantized weights
    dequantized_store(net.params, train_cfg.quant_bits)
    recon = VideoBuffer(net.decode_video())
    rate = bpp(len(data), video.frames, video.height, video.width)
    quality = psnr(recon, video.to_rgb8())
    return stream_path, rate, quality, log


# ---------------------------------------------------------------------------
# commands


def cmd_encode(args) -> int:
    t0 = time.perf_counter()
    video = load_raw(args.video)
    net_cfg, train_cfg = _configs_for(video, args)
    out_dir = Path(args.out)
    label = Path(args.video).stem
    stream_path, rate, quality, log = _encode_video(
        video, net_cfg, train_cfg, out_dir, label)
    rd_path = out_dir / f"{label}_rd.csv"
    write_rd_csv(rd_path, [(label, rate, quality)])
    config_path = out_dir / f"{label}_run_config.txt"
    config_path.write_text(dump_run_config(net_cfg, train_cfg))
    print(f"bpp: {rate:.6f}")
    print(f"quantized_psnr_db: {quality:.4f}")
    write_manifest(
        out_dir, "encode", seed=train_cfg.seed, config=args.config,
        inputs={"video": str(args.video)},
        outputs=[stream_path, out_dir / f"{label}_train_log.csv", rd_path,
                 config_path],
        wall_clock_sec=time.perf_counter() - t0,
        extra={"bpp": rate, "psnr_db": quality, "diverged": log.diverged},
    )
    return 0


def cmd_decode(args) -> int:
    t0 = time.perf_counter()
    data = Path(args.bitstream).read_bytes()
    cfg, store, _bits = unpack_model(data)
    net = InrNetwork(cfg, store)
    frames = net.decode_video()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    video_path = out_dir / (Path(args.bitstream).stem + ".rgb")
    save_raw(VideoBuffer(frames), video_path)
    wall = time.perf_counter() - t0
    print(f"decoded {cfg.frames} frames {cfg.frame_height}x{cfg.frame_width} "
          f"in {wall:.2f}s")
    write_manifest(
        out_dir, "decode", config=None,
        inputs={"bitstream": str(args.bitstream)},
        outputs=[video_path, Path(str(video_path) + ".txt")],
        wall_clock_sec=wall,
        extra={"decode_sec": wall},
    )
    return 0


def cmd_eval(args) -> int:
    video = load_raw(args.video)
    data = Path(args.bitstream).read_bytes()
    cfg, store, _bits = unpack_model(data)
    recon = VideoBuffer(InrNetwork(cfg, store).decode_video())
    rate = bpp(len(data), video.frames, video.height, video.width)
    quality = psnr(recon, video)
    print(f"bpp: {rate:.6f}")
    print(f"psnr_db: {quality:.4f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        rd_path = out_dir / "rd.csv"
        write_rd_csv(rd_path, [(Path(args.video).stem, rate, quality)])
        write_manifest(out_dir, "eval",
                       inputs={"video": str(args.video),
                               "bitstream": str(args.bitstream)},
                       outputs=[rd_path])
    return 0


def _ablation_cells(suite: str) -> list[tuple[str, ReuseSpec]]:
    if suite == "location":
        names = ("shallow", "medium", "deep")
        return [
            (name, ReuseSpec(mode=ReuseMode.DEEPEN, multiplier=2,
                             location_mask=tuple(i == b for i in range(4))))
            for b, name in enumerate(names)
        ]
    if suite == "times":
        return [
            (f"m{m}", ReuseSpec(mode=ReuseMode.DEEPEN, multiplier=m))
            for m in (1, 2, 3, 4)
        ]
    if suite == "granularity":
        return [
            (gran.value, ReuseSpec(mode=ReuseMode.DEEPEN, granularity=gran,
                                   multiplier=2))
            for gran in Granularity
        ]
    raise UsageError(f"unknown ablation suite {suite!r}; choose from {ABLATION_SUITES}")


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    corpus = sorted(Path(args.corpus).glob("*.rgb"))
    if not corpus:
        raise DataError(f"no .rgb sequences found in {args.corpus}")
    cells = _ablation_cells(args.suite)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for cell_name, reuse in cells:
        for seq_path in corpus:
            jobs.append((cell_name, reuse, seq_path))

    def run_cell(job):
        cell_name, reuse, seq_path = job
        video = load_raw(seq_path)
        net_cfg, train_cfg = _configs_for(video, args)
        # mask entries for ineligible blocks are forced off
        mask = reuse.location_mask or net_cfg.eligibility()
        mask = tuple(m and ok for m, ok in zip(mask, net_cfg.eligibility()))
        cell_cfg = net_cfg.with_reuse(
            mode=reuse.mode, granularity=reuse.granularity,
            multiplier=reuse.multiplier, location_mask=mask)
        cell_dir = out_dir / f"{args.suite}__{cell_name}__{seq_path.stem}"
        _, rate, quality, _ = _encode_video(
            video, cell_cfg, train_cfg, cell_dir, seq_path.stem)
        macs = count_macs(cell_cfg)
        return (cell_name, seq_path.stem, rate, quality, macs)

    workers = max(int(os.environ.get("REUSE_INR_THREADS", "1")), 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, jobs))
    else:
        results = [run_cell(job) for job in jobs]

    table_path = out_dir / f"{args.suite}.csv"
    with open(table_path, "w") as fh:
        fh.write("suite,cell,sequence,bpp,psnr,macs\n")
        for cell_name, seq, rate, quality, macs in results:
            fh.write(f"{args.suite},{cell_name},{seq},{rate:.6f},{quality:.4f},{macs}\n")
    print(table_path)
    write_manifest(out_dir, "ablate", seed=args.seed, config=args.config,
                   inputs={"corpus": str(args.corpus)},
                   outputs=[table_path],
                   wall_clock_sec=time.perf_counter() - t0)
    return 0


def cmd_bdrate(args) -> int:
    anchor = curve_from_rows(read_rd_csv(args.anchor))
    test = curve_from_rows(read_rd_csv(args.test))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        value = bd_rate(anchor, test)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"bd_rate_percent: {value:.3f}%")
    return 0


def cmd_macs(args) -> int:
    if args.config:
        net_cfg, _ = parse_run_config(Path(args.config).read_text())
    elif args.preset == "paper-mirror":
        net_cfg = NetworkConfig.paper_mirror_1080p()
    else:
        net_cfg = NetworkConfig.desk_default()
    if args.multiplier > 1:
        net_cfg = net_cfg.with_reuse(mode=ReuseMode.DEEPEN,
                                     multiplier=args.multiplier)
    total = count_macs(net_cfg, args.frames, args.height, args.width)
    frames = args.frames if args.frames else net_cfg.frames
    print(f"total_macs: {total}")
    print(f"gmacs_per_frame: {total / frames / 1e9:.4f}")
    return 0


def cmd_synth(args) -> int:
    video = synth_video(args.kind, args.frames, args.height, args.width,
                        args.seed if args.seed is not None else 0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.kind}.rgb"
    save_raw(video, path)
    digest = _sha256(path)
    print(f"{path} sha256={digest}")
    write_manifest(out_dir, "synth", seed=args.seed,
                   outputs=[path, Path(str(path) + ".txt")])
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reuse-inr",
        description="Desk-scale INR video codec with parameter reuse.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="run config file (net.* / train.* keys)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required, help="run directory")
        p.add_argument("--scale-epochs", type=float, default=1.0,
                       dest="scale_epochs",
                       help="scale the epoch budget, keeping proportions")

    p = sub.add_parser("encode", help="overfit, quantize, and pack a video")
    p.add_argument("video", help="raw .rgb input (with .txt sidecar)")
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct video from a bitstream")
    p.add_argument("bitstream")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR/bpp of a bitstream against a source")
    p.add_argument("--video", required=True)
    p.add_argument("--bitstream", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a reuse ablation grid over a corpus")
    p.add_argument("--suite", required=True, choices=ABLATION_SUITES)
    p.add_argument("--corpus", required=True, help="directory of .rgb sequences")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bdrate", help="BD-rate between two rd.csv files")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("macs", help="analytic decode complexity")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("desk", "paper-mirror"), default="desk")
    p.add_argument("--multiplier", type=int, default=1)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.set_defaults(func=cmd_macs)

    p = sub.add_parser("synth", help="generate a synthetic raw sequence")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CorruptionError, FormatError) as exc:
        print(f"corruption error: {exc}", file=sys.stderr)
        return EXIT_CORRUPTION
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
