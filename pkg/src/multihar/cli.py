"""Command-line entry points: train, eval, simulate, bench.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 protocol
error, 5 numeric failure during training.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .checkpoint import CheckpointError
from .config import PRESETS, ConfigError, RunConfig, load_config
from .csi import CsitError, load_tensor_file
from .edge_cloud import (
    CloudServer,
    EdgeClient,
    EdgeRuntime,
    CloudRuntime,
    bandwidth_report,
    loopback_run,
)
from .matching import hungarian, hypothesis_space_sizes
from .metrics import aggregate_reports, standardize
from .model import ActivityModel
from .rvq import ProtocolError, capacity
from .training import NumericError, build_dataset, evaluate_model, synth_config_for, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROTOCOL = 4
EXIT_NUMERIC = 5


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                   help="named configuration preset (default: desk)")
    p.add_argument("--config", help="key=value config file; overrides the preset")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--no-rvq", action="store_true",
                   help="bypass the quantizer (continuous features)")


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PRESETS[args.preset]()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_rvq:
        cfg.use_rvq = False
    return cfg


def _load_samples(path: str):
    return list(load_tensor_file(path))


def _split_loaded(samples, cfg: RunConfig):
    from .csi import split_dataset

    return split_dataset(samples, (0.8, 0.1, 0.1), cfg.seed)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    log = print if not args.quiet else (lambda msg: None)
    dataset = _split_loaded(_load_samples(args.data), cfg) if args.data else None
    seeds = [cfg.seed + i for i in range(args.seeds)]
    reports = []
    for s in seeds:
        log(f"== seed {s} ==")
        result = train(cfg, seed=s, log=log, dataset=dataset)
        test_set = dataset[2] if dataset else build_dataset(cfg, s)[2]
        report = evaluate_model(result.model, test_set)
        reports.append(report)
        for line in report.lines():
            log(f"test {line}")
        if args.out:
            path = args.out if len(seeds) == 1 else f"{args.out}.seed{s}"
            result.model.save(path)
            log(f"saved checkpoint to {path}")
    if len(reports) > 1:
        agg = aggregate_reports(reports)
        log(f"== mean over {len(reports)} seeds ==")
        for line in agg.lines():
            log(f"test {line}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    model = ActivityModel(cfg, seed=cfg.seed)
    model.load(args.ckpt)
    model.set_training(False)
    if args.data:
        samples = _load_samples(args.data)
    else:
        _, _, samples = build_dataset(cfg, cfg.seed)
    use_rvq = None if not args.no_rvq else False
    report = evaluate_model(model, samples, use_rvq=use_rvq)
    print(report.table())
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    model = ActivityModel(cfg, seed=cfg.seed)
    if args.ckpt:
        model.load(args.ckpt)
    model.set_training(False)

    if args.transport == "socket" and args.role == "cloud":
        host, port = _parse_addr(args.addr)
        server = CloudServer(model, host, port, log=print).start()
        print(f"cloud listening on {server.address[0]}:{server.address[1]}")
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            server.stop()
            print(f"frames ok {server.frames_ok} bad {server.frames_bad} "
                  f"bytes {server.bytes_in}")
        return EXIT_OK

    from .csi import synth_dataset

    samples = synth_dataset(synth_config_for(cfg, cfg.seed), args.n, seed=cfg.seed)
    if args.transport == "socket":
        client = EdgeClient(model, _parse_addr(args.addr))
        records = client.run(samples)
        for (seq, ids), s in zip(records, samples):
            counts = standardize([c for c in ids if 1 <= c <= cfg.n_act], cfg.n_act)
            print(f"sample {seq}: true {list(s.labels)} "
                  f"predicted counts {counts.tolist()}")
        print(f"sent {client.bytes_out} bytes over {len(samples)} frames")
        return EXIT_OK

    edge = EdgeRuntime(model)
    cloud = CloudRuntime(model)
    preds, total_bytes = loopback_run(edge, cloud, samples)
    for i, ((_ids, counts), s) in enumerate(zip(preds, samples)):
        print(f"sample {i}: true {list(s.labels)} predicted counts {counts.tolist()}")
    bw = bandwidth_report(model.seq_len, cfg.d, cfg.rvq_layers, cfg.codebook_size)
    print(f"transferred {total_bytes} bytes over {len(samples)} frames")
    print(f"payload bandwidth: {bw}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    model = ActivityModel(cfg, seed=cfg.seed)
    print("parameter counts:")
    for name, n in model.parameter_counts().items():
        print(f"  {name:<10}{n:>10d}  ({n / 1e6:.3f} M)")

    print("\nassignment solver timing:")
    rng = np.random.default_rng(0)
    for n in (10, 30, 60):
        c = rng.random((n, n))
        t0 = time.perf_counter()
        reps = 20 if n <= 30 else 5
        for _ in range(reps):
            hungarian(c)
        dt = (time.perf_counter() - t0) / reps
        print(f"  n={n:<4d}{dt * 1e3:9.3f} ms")

    print("\nquantizer capacity (K^V patterns per position):")
    for k in (8, 16, 32):
        for v in (2, 4, 6):
            print(f"  K={k:<4d} V={v}: {capacity(k, v)}")

    bw = bandwidth_report(model.seq_len, cfg.d, cfg.rvq_layers, cfg.codebook_size)
    print(f"\nbandwidth: {bw}")

    ordered, multisets, ratio = hypothesis_space_sizes(cfg.n_act, cfg.max_occupancy)
    print(f"\nhypothesis space at occupancy {cfg.max_occupancy}: "
          f"{ordered} ordered sequences vs {multisets} multisets "
          f"({ratio:.1f}x reduction)")
    return EXIT_OK


def _parse_addr(addr: str):
    if ":" not in addr:
        raise ConfigError(f"address {addr!r} must be host:port")
    host, port = addr.rsplit(":", 1)
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"bad port in address {addr!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multihar",
        description="Multi-user activity counting over quantized CSI features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on synthetic or file data")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    p.add_argument("--data", help=".csit dataset file (default: synthesize)")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", help=".csit dataset file (default: synthetic test split)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run the edge/cloud split pipeline")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint path (default: untrained model)")
    p.add_argument("--role", choices=("edge", "cloud", "both"), default="both")
    p.add_argument("--transport", choices=("loopback", "socket"), default="loopback")
    p.add_argument("--addr", default="127.0.0.1:7180", help="host:port for sockets")
    p.add_argument("-n", type=int, default=8, help="number of samples to stream")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="print size/latency/capacity figures")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProtocolError, CheckpointError, ConnectionError) as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (CsitError, FileNotFoundError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
